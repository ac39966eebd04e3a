#include "bagclip/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "bagclip/rng.hpp"
#include "json.hpp"

namespace bagclip {

using nlohmann::json;

SplitSpec halves_split(const std::vector<std::string>& classes_in_id_order) {
  const std::size_t k = classes_in_id_order.size();
  if (k < 2) raise(Errc::too_few_classes, "need at least 2 classes to split");
  const std::size_t n_train = (k + 1) / 2;
  SplitSpec s;
  s.train.assign(classes_in_id_order.begin(),
                 classes_in_id_order.begin() + n_train);
  s.test.assign(classes_in_id_order.begin() + n_train,
                classes_in_id_order.end());
  return s;
}

bool names_equal_icase(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return true;
}

OverlapResult remove_overlap(const std::vector<std::string>& train_classes,
                             const std::vector<std::string>& test_classes,
                             const NameMatcher& matcher) {
  OverlapResult out;
  for (const auto& t : train_classes) {
    bool overlaps = std::any_of(
        test_classes.begin(), test_classes.end(),
        [&](const std::string& u) { return matcher(t, u); });
    if (overlaps) {
      ++out.removed;
    } else {
      out.kept.push_back(t);
    }
  }
  return out;
}

std::vector<PairingSample> sample_epoch_pairs(
    const BagDataset& ds, const std::vector<std::string>& classes,
    std::uint64_t rng_seed) {
  for (const auto& cls : classes) {
    if (std::find(ds.split.train.begin(), ds.split.train.end(), cls) ==
        ds.split.train.end()) {
      raise(Errc::unknown_class, "class '" + cls + "' not in train split");
    }
  }
  Rng rng(rng_seed);
  std::vector<PairingSample> out;
  for (const auto& cls : classes) {
    auto img_it = ds.images.find(cls);
    if (img_it == ds.images.end() || img_it->second.empty()) {
      raise(Errc::empty_corpus_for_class, "class '" + cls + "' has no images");
    }
    auto corpus_it = ds.corpus.entries.find(cls);
    if (corpus_it == ds.corpus.entries.end() || corpus_it->second.empty()) {
      raise(Errc::empty_corpus_for_class, "class '" + cls + "' has no texts");
    }
    const auto& recs = corpus_it->second;
    const auto pool_it = ds.pools.find(cls);
    for (std::size_t i = 0; i < img_it->second.size(); ++i) {
      int text_idx;
      if (pool_it != ds.pools.end() && i < pool_it->second.size() &&
          !pool_it->second[i].empty()) {
        const auto& pool = pool_it->second[i];
        text_idx = pool[rng.next_index(pool.size())];
      } else {
        text_idx = static_cast<int>(rng.next_index(recs.size()));
      }
      out.push_back({img_it->second[i], recs[text_idx], cls});
    }
  }
  rng.shuffle(out);
  return out;
}

BagDataset visibility_filter(
    const BagDataset& ds,
    const std::map<std::string, std::vector<std::string>>& part_lexicon,
    VisibilityStats* stats) {
  if (part_lexicon.empty()) raise(Errc::invalid_argument, "empty lexicon");

  auto tokens_of = [](const std::string& text) {
    std::vector<std::string> toks;
    std::string cur;
    for (char c : text) {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (!cur.empty()) {
        toks.push_back(cur);
        cur.clear();
      }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
  };
  // Naive plural fold so "leg" also hits "legs".
  auto mentions = [&](const std::vector<std::string>& toks,
                      const std::string& keyword) {
    for (const auto& t : toks) {
      if (t == keyword || t == keyword + "s") return true;
    }
    return false;
  };

  BagDataset out = ds;
  VisibilityStats local;
  for (const auto& [cls, imgs] : ds.images) {
    auto corpus_it = ds.corpus.entries.find(cls);
    if (corpus_it == ds.corpus.entries.end()) continue;
    const auto& recs = corpus_it->second;
    std::vector<std::vector<std::string>> rec_tokens;
    rec_tokens.reserve(recs.size());
    for (const auto& r : recs) rec_tokens.push_back(tokens_of(r.text));

    std::vector<std::vector<int>> pools(imgs.size());
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      if (imgs[i].visibility.empty()) {
        raise(Errc::missing_visibility,
              "image '" + imgs[i].id + "' has no visibility flags");
      }
      std::vector<int> pool;
      for (std::size_t t = 0; t < recs.size(); ++t) {
        bool excluded = false;
        for (const auto& [part, keywords] : part_lexicon) {
          auto flag = imgs[i].visibility.find(part);
          if (flag == imgs[i].visibility.end() || flag->second) continue;
          for (const auto& kw : keywords) {
            if (mentions(rec_tokens[t], kw)) {
              excluded = true;
              break;
            }
          }
          if (excluded) break;
        }
        if (!excluded) pool.push_back(static_cast<int>(t));
        else ++local.excluded_texts;
      }
      if (pool.empty()) {
        ++local.fallback_images;
        pool.resize(recs.size());
        for (std::size_t t = 0; t < recs.size(); ++t) {
          pool[t] = static_cast<int>(t);
        }
      }
      pools[i] = std::move(pool);
    }
    out.pools[cls] = std::move(pools);
  }
  if (stats) *stats = local;
  return out;
}

void validate_dataset(const BagDataset& ds) {
  for (const auto& cls : ds.split.train) {
    for (const auto& tcls : ds.split.test) {
      if (cls == tcls) {
        raise(Errc::config_error, "class '" + cls + "' in both splits");
      }
    }
  }
  auto check = [&](const std::vector<std::string>& classes) {
    for (const auto& cls : classes) {
      auto it = ds.images.find(cls);
      if (it == ds.images.end() || it->second.empty()) {
        raise(Errc::empty_corpus_for_class,
              "class '" + cls + "' has no images");
      }
      auto ct = ds.corpus.entries.find(cls);
      if (ct == ds.corpus.entries.end() || ct->second.empty()) {
        raise(Errc::empty_corpus_for_class, "class '" + cls + "' has no texts");
      }
    }
  };
  check(ds.split.train);
  check(ds.split.test);
}

std::string split_to_json(const SplitSpec& split) {
  json j{{"train", split.train}, {"test", split.test}};
  return j.dump(2) + "\n";
}

SplitSpec split_from_json(const std::string& text) {
  try {
    json j = json::parse(text);
    SplitSpec s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("split JSON: ") + e.what());
  }
}

void save_split(const SplitSpec& split, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot write " + path.string());
  f << split_to_json(split);
}

SplitSpec load_split(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return split_from_json(ss.str());
}

std::string manifest_to_json(
    const std::map<std::string, std::vector<ImageRef>>& images) {
  json classes = json::object();
  for (const auto& [cls, imgs] : images) {
    json paths = json::array();
    bool any_vis = false;
    for (const auto& img : imgs) {
      paths.push_back(img.id);
      if (!img.visibility.empty()) any_vis = true;
    }
    json entry{{"images", std::move(paths)}};
    if (any_vis) {
      json vis = json::array();
      for (const auto& img : imgs) {
        json flags = json::object();
        for (const auto& [part, v] : img.visibility) flags[part] = v;
        vis.push_back(std::move(flags));
      }
      entry["visibility"] = std::move(vis);
    }
    classes[cls] = std::move(entry);
  }
  json j{{"classes", std::move(classes)}};
  return j.dump(2) + "\n";
}

std::map<std::string, std::vector<ImageRef>> manifest_from_json(
    const std::string& text) {
  std::map<std::string, std::vector<ImageRef>> out;
  try {
    json j = json::parse(text);
    for (const auto& [cls, entry] : j.at("classes").items()) {
      std::vector<ImageRef> imgs;
      const auto& paths = entry.at("images");
      for (const auto& p : paths) {
        imgs.push_back({p.get<std::string>(), {}});
      }
      if (entry.contains("visibility")) {
        const auto& vis = entry["visibility"];
        if (vis.size() != imgs.size()) {
          raise(Errc::format_error,
                "manifest: visibility length mismatch for '" + cls + "'");
        }
        for (std::size_t i = 0; i < imgs.size(); ++i) {
          for (const auto& [part, v] : vis[i].items()) {
            imgs[i].visibility[part] = v.get<bool>();
          }
        }
      }
      out[cls] = std::move(imgs);
    }
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("manifest JSON: ") + e.what());
  }
  return out;
}

void save_manifest(const std::map<std::string, std::vector<ImageRef>>& images,
                   const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot write " + path.string());
  f << manifest_to_json(images);
}

std::map<std::string, std::vector<ImageRef>> load_manifest(
    const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return manifest_from_json(ss.str());
}

}  // namespace bagclip
