#include "bagclip/synth.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <memory>

#include "bagclip/rng.hpp"
#include "json.hpp"

namespace bagclip {

using nlohmann::json;

namespace {

void validate_world_config(const SyntheticWorldConfig& c) {
  if (c.attr_count < 8 || c.attr_count % 4 != 0) {
    raise(Errc::config_error, "attr_count must be >= 8 and divisible by 4");
  }
  if (c.n_classes < 2) raise(Errc::config_error, "need >= 2 classes");
  if (c.images_per_class < 1 || c.visual_texts_per_class < 1 ||
      c.habitat_texts_per_class < 0) {
    raise(Errc::config_error, "counts must be positive");
  }
  if (c.visual_shared_attrs < 0 ||
      c.visual_shared_attrs > c.visual_texts_per_class ||
      c.context_shared_attrs < 0 ||
      c.context_shared_attrs > c.habitat_texts_per_class) {
    raise(Errc::config_error, "shared attr counts out of range");
  }
  const int shared_pool = c.attr_count / 2;
  const int side_pool = c.attr_count / 4;
  if (c.visual_shared_attrs + c.context_shared_attrs > shared_pool ||
      (c.visual_texts_per_class - c.visual_shared_attrs) +
              (c.habitat_texts_per_class - c.context_shared_attrs) >
          side_pool) {
    raise(Errc::config_error, "attribute pools too small for per-class draws");
  }
  if (c.noise_sigma < 0) raise(Errc::config_error, "negative noise_sigma");
  if (c.attr_visibility_prob < 0 || c.attr_visibility_prob > 1 ||
      c.context_presence_prob < 0 || c.context_presence_prob > 1) {
    raise(Errc::config_error, "probabilities outside [0,1]");
  }
}

std::string class_label(int index, int n_classes) {
  int width = 2;
  for (int v = n_classes - 1; v >= 100; v /= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "class%0*d", width, index);
  return buf;
}

// k distinct values from [lo, hi), order randomized.
std::vector<int> draw_distinct(Rng& rng, int lo, int hi, int k) {
  std::vector<int> pool(static_cast<std::size_t>(hi - lo));
  for (int i = lo; i < hi; ++i) pool[static_cast<std::size_t>(i - lo)] = i;
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

}  // namespace

Vec parse_attr_text(const std::string& text, int attr_count) {
  Vec v = Vec::Zero(attr_count);
  const std::string needle = "attr";
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    // token boundary on the left
    if (pos > 0 && std::isalnum(static_cast<unsigned char>(text[pos - 1]))) {
      pos += needle.size();
      continue;
    }
    std::size_t d = pos + needle.size();
    std::size_t end = d;
    while (end < text.size() &&
           std::isdigit(static_cast<unsigned char>(text[end]))) {
      ++end;
    }
    if (end > d) {
      const int idx = std::stoi(text.substr(d, end - d));
      if (idx >= 0 && idx < attr_count) v(idx) = 1.0;
    }
    pos = end;
  }
  return v;
}

Vec SyntheticWorld::image_features_of(const ImageRef& img) const {
  auto it = image_features.find(img.id);
  if (it == image_features.end()) {
    raise(Errc::unknown_class, "unknown image id '" + img.id + "'");
  }
  return it->second;
}

TextFeaturizer SyntheticWorld::text_featurizer() const {
  const int a = config.attr_count;
  return [a](const std::string& text) { return parse_attr_text(text, a); };
}

ImageFeaturizer SyntheticWorld::image_featurizer() const {
  auto feats =
      std::make_shared<std::map<std::string, Vec>>(image_features);
  return [feats](const ImageRef& img) {
    auto it = feats->find(img.id);
    if (it == feats->end()) {
      raise(Errc::unknown_class, "unknown image id '" + img.id + "'");
    }
    return it->second;
  };
}

SyntheticWorld build_synthetic_world(const SyntheticWorldConfig& cfg) {
  validate_world_config(cfg);
  SyntheticWorld w;
  w.config = cfg;

  const int shared_end = cfg.attr_count / 2;
  const int train_side_end = shared_end + cfg.attr_count / 4;
  const int n_train = (cfg.n_classes + 1) / 2;
  const int v_side = cfg.visual_texts_per_class - cfg.visual_shared_attrs;
  const int c_side = cfg.habitat_texts_per_class - cfg.context_shared_attrs;

  Rng rng(cfg.seed);
  for (int c = 0; c < cfg.n_classes; ++c) {
    w.class_names.push_back(class_label(c, cfg.n_classes));
    const bool is_train = c < n_train;
    const int side_lo = is_train ? shared_end : train_side_end;
    const int side_hi = is_train ? train_side_end : cfg.attr_count;
    // visual and context draws kept disjoint inside the shared pool
    auto shared = draw_distinct(
        rng, 0, shared_end, cfg.visual_shared_attrs + cfg.context_shared_attrs);
    auto side = draw_distinct(rng, side_lo, side_hi, v_side + c_side);
    std::vector<int> vis(shared.begin(),
                         shared.begin() + cfg.visual_shared_attrs);
    vis.insert(vis.end(), side.begin(), side.begin() + v_side);
    std::vector<int> ctx(shared.begin() + cfg.visual_shared_attrs,
                         shared.end());
    ctx.insert(ctx.end(), side.begin() + v_side, side.end());
    w.visual_attrs.push_back(std::move(vis));
    w.context_attrs.push_back(std::move(ctx));
  }

  // corpus
  w.dataset.corpus.dataset = "synthetic";
  w.dataset.corpus.domain_word = "organism";
  for (int c = 0; c < cfg.n_classes; ++c) {
    const auto& cls = w.class_names[static_cast<std::size_t>(c)];
    std::vector<DescriptionRecord> recs;
    for (int a : w.visual_attrs[static_cast<std::size_t>(c)]) {
      const std::string t = "a photo of a " + cls + " organism with attr" +
                            std::to_string(a) + " markings";
      recs.push_back({t, TextKind::visual, TextSource::template_text, t});
    }
    for (int a : w.context_attrs[static_cast<std::size_t>(c)]) {
      const std::string t = "organism which occurs in attr" +
                            std::to_string(a) + " terrain";
      recs.push_back({t, TextKind::habitat, TextSource::template_text, t});
    }
    w.dataset.corpus.entries[cls] = std::move(recs);
  }

  // images
  for (int c = 0; c < cfg.n_classes; ++c) {
    const auto& cls = w.class_names[static_cast<std::size_t>(c)];
    std::vector<ImageRef> imgs;
    for (int i = 0; i < cfg.images_per_class; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "_%03d", i);
      ImageRef img;
      img.id = "images/" + cls + buf + ".json";
      Vec x = Vec::Zero(cfg.attr_count);
      for (int a : w.visual_attrs[static_cast<std::size_t>(c)]) {
        const bool visible = rng.next_double() < cfg.attr_visibility_prob;
        img.visibility["attr" + std::to_string(a)] = visible;
        if (visible) x(a) = 1.0;
      }
      for (int a : w.context_attrs[static_cast<std::size_t>(c)]) {
        const bool present = rng.next_double() < cfg.context_presence_prob;
        img.visibility["attr" + std::to_string(a)] = present;
        if (present) x(a) = 1.0;
      }
      if (cfg.noise_sigma > 0) {
        for (int d = 0; d < cfg.attr_count; ++d) {
          x(d) += rng.next_normal(0.0, cfg.noise_sigma);
        }
      }
      w.image_features[img.id] = std::move(x);
      imgs.push_back(std::move(img));
    }
    w.dataset.images[cls] = std::move(imgs);
  }

  w.dataset.split = halves_split(w.class_names);
  return w;
}

std::map<std::string, std::vector<std::string>> world_part_lexicon(
    const SyntheticWorld& world) {
  std::map<std::string, std::vector<std::string>> lex;
  for (int a = 0; a < world.config.attr_count; ++a) {
    const std::string token = "attr" + std::to_string(a);
    lex[token] = {token};
  }
  return lex;
}

std::vector<BinaryTask> make_synthetic_newt(const SyntheticWorld& world,
                                            int n_tasks, std::uint64_t seed) {
  if (n_tasks < 1) raise(Errc::invalid_argument, "n_tasks must be positive");
  struct Candidate {
    int cls;
    int attr_pos;  // index into visual_attrs[cls]
  };
  std::vector<Candidate> candidates;
  for (std::size_t c = 0; c < world.class_names.size(); ++c) {
    const auto& imgs = world.dataset.images.at(world.class_names[c]);
    const auto& attrs = world.visual_attrs[c];
    if (attrs.size() < 2) continue;  // need a sibling attribute for the negative
    for (std::size_t k = 0; k < attrs.size(); ++k) {
      const std::string part = "attr" + std::to_string(attrs[k]);
      int pos = 0, neg = 0;
      for (const auto& img : imgs) {
        auto it = img.visibility.find(part);
        if (it != img.visibility.end() && it->second) ++pos;
        else ++neg;
      }
      if (pos > 0 && neg > 0) {
        candidates.push_back({static_cast<int>(c), static_cast<int>(k)});
      }
    }
  }
  if (candidates.empty()) {
    raise(Errc::degenerate_labels, "no attribute with mixed visibility");
  }
  Rng rng(seed);
  rng.shuffle(candidates);
  if (static_cast<int>(candidates.size()) > n_tasks) {
    candidates.resize(static_cast<std::size_t>(n_tasks));
  }

  std::vector<BinaryTask> tasks;
  for (const auto& cand : candidates) {
    const auto& cls = world.class_names[static_cast<std::size_t>(cand.cls)];
    const auto& attrs = world.visual_attrs[static_cast<std::size_t>(cand.cls)];
    const auto& recs = world.dataset.corpus.entries.at(cls);
    const int attr = attrs[static_cast<std::size_t>(cand.attr_pos)];
    const int sibling_pos = cand.attr_pos == 0 ? 1 : 0;
    BinaryTask t;
    t.task_id = cls + ":attr" + std::to_string(attr);
    t.positive_text = recs[static_cast<std::size_t>(cand.attr_pos)].text;
    t.negative_text = recs[static_cast<std::size_t>(sibling_pos)].text;
    const std::string part = "attr" + std::to_string(attr);
    for (const auto& img : world.dataset.images.at(cls)) {
      auto it = img.visibility.find(part);
      const int label = it != img.visibility.end() && it->second ? 1 : 0;
      t.items.emplace_back(img, label);
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

void write_world(const SyntheticWorld& world,
                 const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) raise(Errc::io_error, "cannot create " + out_dir.string());

  for (const auto& [id, feats] : world.image_features) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < feats.size(); ++i) arr.push_back(feats(i));
    json j{{"features", std::move(arr)}};
    std::ofstream f(out_dir / id, std::ios::binary);
    if (!f) raise(Errc::io_error, "cannot write " + (out_dir / id).string());
    f << j.dump() << '\n';
  }
  save_manifest(world.dataset.images, out_dir / "manifest.json");
  save_corpus(world.dataset.corpus, out_dir / "corpus.json");
  save_split(world.dataset.split, out_dir / "split.json");

  auto tasks = make_synthetic_newt(world, 10, mix_seed(world.config.seed, 77));
  {
    std::ofstream f(out_dir / "newt_tasks.csv", std::ios::binary);
    f << newt_tasks_to_csv(tasks);
  }
  {
    std::ofstream f(out_dir / "newt_items.json", std::ios::binary);
    f << newt_items_to_json(tasks);
  }
  {
    std::ofstream f(out_dir / "world.json", std::ios::binary);
    f << world_config_to_json(world.config);
  }
}

SyntheticWorldConfig synth_preset(const std::string& name) {
  SyntheticWorldConfig cfg;
  if (name == "default") return cfg;
  if (name == "tiny") {
    cfg.attr_count = 16;
    cfg.n_classes = 8;
    cfg.images_per_class = 6;
    cfg.visual_texts_per_class = 3;
    cfg.habitat_texts_per_class = 2;
    cfg.visual_shared_attrs = 2;
    cfg.context_shared_attrs = 1;
    return cfg;
  }
  raise(Errc::config_error, "unknown preset '" + name + "'");
}

std::string world_config_to_json(const SyntheticWorldConfig& cfg) {
  json j{{"attr_count", cfg.attr_count},
         {"n_classes", cfg.n_classes},
         {"images_per_class", cfg.images_per_class},
         {"visual_texts_per_class", cfg.visual_texts_per_class},
         {"habitat_texts_per_class", cfg.habitat_texts_per_class},
         {"visual_shared_attrs", cfg.visual_shared_attrs},
         {"context_shared_attrs", cfg.context_shared_attrs},
         {"noise_sigma", cfg.noise_sigma},
         {"attr_visibility_prob", cfg.attr_visibility_prob},
         {"context_presence_prob", cfg.context_presence_prob},
         {"seed", cfg.seed}};
  return j.dump(2) + "\n";
}

SyntheticWorldConfig world_config_from_json(const std::string& text) {
  try {
    json j = json::parse(text);
    SyntheticWorldConfig cfg;
    cfg.attr_count = j.value("attr_count", cfg.attr_count);
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    cfg.images_per_class = j.value("images_per_class", cfg.images_per_class);
    cfg.visual_texts_per_class =
        j.value("visual_texts_per_class", cfg.visual_texts_per_class);
    cfg.habitat_texts_per_class =
        j.value("habitat_texts_per_class", cfg.habitat_texts_per_class);
    cfg.visual_shared_attrs =
        j.value("visual_shared_attrs", cfg.visual_shared_attrs);
    cfg.context_shared_attrs =
        j.value("context_shared_attrs", cfg.context_shared_attrs);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.attr_visibility_prob =
        j.value("attr_visibility_prob", cfg.attr_visibility_prob);
    cfg.context_presence_prob =
        j.value("context_presence_prob", cfg.context_presence_prob);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("world config JSON: ") + e.what());
  }
}

}  // namespace bagclip
