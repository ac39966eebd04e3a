#include "bagclip/encoders.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "bagclip/rng.hpp"
#include "json.hpp"

namespace bagclip {

using nlohmann::json;

namespace {

constexpr double kNormFloor = 1e-12;

void check_shapes(const MlpEncoder& a, const MlpEncoder& b,
                  const char* what) {
  if (a.w1.rows() != b.w1.rows() || a.w1.cols() != b.w1.cols() ||
      a.w2.rows() != b.w2.rows() || a.w2.cols() != b.w2.cols() ||
      a.b1.size() != b.b1.size() || a.b2.size() != b.b2.size()) {
    raise(Errc::shape_mismatch, what);
  }
}

void ema_tensors(MlpEncoder& shadow, const MlpEncoder& live, double m) {
  shadow.w1 = m * shadow.w1 + (1.0 - m) * live.w1;
  shadow.b1 = m * shadow.b1 + (1.0 - m) * live.b1;
  shadow.w2 = m * shadow.w2 + (1.0 - m) * live.w2;
  shadow.b2 = m * shadow.b2 + (1.0 - m) * live.b2;
}

Mat init_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = rng.next_uniform(-s, s);
    }
  }
  return m;
}

void write_blob(const std::filesystem::path& path, const MlpEncoder& enc) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot write " + path.string());
  const char magic[8] = {'B', 'G', 'C', 'L', 'E', 'N', 'C', '1'};
  f.write(magic, 8);
  std::int64_t dims[3] = {enc.input_dim(), enc.hidden_dim(), enc.embed_dim()};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  auto put = [&](const double* p, std::ptrdiff_t n) {
    f.write(reinterpret_cast<const char*>(p),
            static_cast<std::streamsize>(n * sizeof(double)));
  };
  put(enc.w1.data(), enc.w1.size());
  put(enc.b1.data(), enc.b1.size());
  put(enc.w2.data(), enc.w2.size());
  put(enc.b2.data(), enc.b2.size());
  if (!f) raise(Errc::io_error, "short write to " + path.string());
}

MlpEncoder read_blob(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::missing_checkpoint, "cannot read " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "BGCLENC1") {
    raise(Errc::format_error, "bad encoder blob " + path.string());
  }
  std::int64_t dims[3];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!f || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) {
    raise(Errc::format_error, "bad dims in " + path.string());
  }
  MlpEncoder enc;
  enc.w1.resize(dims[1], dims[0]);
  enc.b1.resize(dims[1]);
  enc.w2.resize(dims[2], dims[1]);
  enc.b2.resize(dims[2]);
  auto get = [&](double* p, std::ptrdiff_t n) {
    f.read(reinterpret_cast<char*>(p),
           static_cast<std::streamsize>(n * sizeof(double)));
  };
  get(enc.w1.data(), enc.w1.size());
  get(enc.b1.data(), enc.b1.size());
  get(enc.w2.data(), enc.w2.size());
  get(enc.b2.data(), enc.b2.size());
  if (!f) raise(Errc::format_error, "truncated blob " + path.string());
  return enc;
}

}  // namespace

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::projection: return "projection";
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::temperature: return "temperature";
  }
  return "backbone";
}

ForwardTrace forward_batch(const MlpEncoder& enc, const Mat& inputs) {
  if (inputs.rows() != enc.input_dim()) {
    raise(Errc::dimension_mismatch,
          "encoder expects dim " + std::to_string(enc.input_dim()) + ", got " +
              std::to_string(inputs.rows()));
  }
  ForwardTrace t;
  t.x = inputs;
  t.h = ((enc.w1 * inputs).colwise() + enc.b1).array().tanh().matrix();
  t.z = (enc.w2 * t.h).colwise() + enc.b2;
  t.znorm = t.z.colwise().norm();
  t.e = t.z;
  for (Eigen::Index j = 0; j < t.z.cols(); ++j) {
    if (t.znorm(j) < kNormFloor) {
      // Degenerate pre-embedding: pin to the first basis vector so the
      // output stays unit-norm. No gradient flows through this branch.
      t.e.col(j).setZero();
      t.e(0, j) = 1.0;
    } else {
      t.e.col(j) /= t.znorm(j);
    }
  }
  return t;
}

Vec forward_one(const MlpEncoder& enc, const Vec& input) {
  return forward_batch(enc, input).e.col(0);
}

EncoderGrads backward_batch(const MlpEncoder& enc, const ForwardTrace& trace,
                            const Mat& dE) {
  if (dE.rows() != trace.e.rows() || dE.cols() != trace.e.cols()) {
    raise(Errc::shape_mismatch, "embedding gradient shape");
  }
  Mat dZ(trace.z.rows(), trace.z.cols());
  for (Eigen::Index j = 0; j < dE.cols(); ++j) {
    if (trace.znorm(j) < kNormFloor) {
      dZ.col(j).setZero();
      continue;
    }
    const auto e = trace.e.col(j);
    dZ.col(j) = (dE.col(j) - e * e.dot(dE.col(j))) / trace.znorm(j);
  }
  EncoderGrads g;
  g.dw2 = dZ * trace.h.transpose();
  g.db2 = dZ.rowwise().sum();
  Mat dH = enc.w2.transpose() * dZ;
  Mat dA = dH.array() * (1.0 - trace.h.array().square());
  g.dw1 = dA.matrix() * trace.x.transpose();
  g.db1 = dA.matrix().rowwise().sum();
  return g;
}

std::vector<ParamRef> parameters(EncoderPair& pair) {
  std::vector<ParamRef> out;
  auto add = [&](const std::string& name, ParamGroup grp, double* data,
                 std::ptrdiff_t size) {
    out.push_back({name, grp, data, size});
  };
  auto add_enc = [&](const std::string& prefix, MlpEncoder& e) {
    add(prefix + ".w1", ParamGroup::backbone, e.w1.data(), e.w1.size());
    add(prefix + ".b1", ParamGroup::backbone, e.b1.data(), e.b1.size());
    add(prefix + ".w2", ParamGroup::projection, e.w2.data(), e.w2.size());
    add(prefix + ".b2", ParamGroup::projection, e.b2.data(), e.b2.size());
  };
  add_enc("image", pair.image_enc);
  add_enc("text", pair.text_enc);
  add("log_tau", ParamGroup::temperature, &pair.log_tau, 1);
  return out;
}

std::map<std::string, std::string> group_map(EncoderPair& pair) {
  std::map<std::string, std::string> out;
  for (const auto& p : parameters(pair)) out[p.name] = to_string(p.group);
  return out;
}

EmaShadow make_shadow(const EncoderPair& pair, double momentum) {
  if (momentum < 0.0 || momentum > 1.0) {
    raise(Errc::invalid_argument, "momentum outside [0,1]");
  }
  return {pair.image_enc, pair.text_enc, momentum};
}

void ema_update(EmaShadow& shadow, const EncoderPair& live) {
  check_shapes(shadow.image_enc, live.image_enc, "EMA image encoder");
  check_shapes(shadow.text_enc, live.text_enc, "EMA text encoder");
  ema_tensors(shadow.image_enc, live.image_enc, shadow.momentum);
  ema_tensors(shadow.text_enc, live.text_enc, shadow.momentum);
}

EncoderPair as_pair(const EmaShadow& shadow, double log_tau) {
  return {shadow.image_enc, shadow.text_enc, log_tau};
}

EncoderPair make_toy_pair(int embed_dim, int attr_dim, std::uint64_t seed,
                          double temperature_init) {
  if (embed_dim < 2) raise(Errc::invalid_argument, "embed_dim must be >= 2");
  if (attr_dim < 1) raise(Errc::invalid_argument, "attr_dim must be >= 1");
  if (temperature_init <= 0.0) {
    raise(Errc::invalid_argument, "temperature_init must be positive");
  }
  const int hidden = 2 * embed_dim;
  Rng rng(seed);
  auto make_enc = [&]() {
    MlpEncoder e;
    e.w1 = init_matrix(hidden, attr_dim, rng);
    e.b1 = Vec::Zero(hidden);
    e.w2 = init_matrix(embed_dim, hidden, rng);
    e.b2 = Vec::Zero(embed_dim);
    return e;
  };
  EncoderPair pair;
  pair.image_enc = make_enc();
  pair.text_enc = make_enc();
  pair.log_tau = std::log(temperature_init);
  return pair;
}

Mat similarity_matrix(const EncoderPair& pair, const Mat& images,
                      const Mat& texts) {
  if (images.rows() != pair.image_enc.input_dim() ||
      texts.rows() != pair.text_enc.input_dim()) {
    raise(Errc::dimension_mismatch, "similarity_matrix input dims");
  }
  const Mat ei = forward_batch(pair.image_enc, images).e;
  const Mat et = forward_batch(pair.text_enc, texts).e;
  return ei.transpose() * et;
}

Mat similarity_matrix(const EncoderPair& pair, const std::vector<Vec>& images,
                      const std::vector<Vec>& texts) {
  if (images.empty() || texts.empty()) {
    raise(Errc::invalid_argument, "empty input list");
  }
  Mat X(images[0].size(), static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) X.col(i) = images[i];
  Mat Y(texts[0].size(), static_cast<Eigen::Index>(texts.size()));
  for (std::size_t j = 0; j < texts.size(); ++j) Y.col(j) = texts[j];
  return similarity_matrix(pair, X, Y);
}

void validate_hyper(const HyperConfig& h) {
  if (h.lr_proj < 0 || h.lr_main < 0 || h.wd_proj < 0 || h.wd_main < 0 ||
      h.temperature_lr < 0 || h.temperature_wd < 0) {
    raise(Errc::config_error, "negative rate in hyper config");
  }
  if (h.temperature_init <= 0) {
    raise(Errc::config_error, "temperature_init must be positive");
  }
  if (h.momentum < 0 || h.momentum > 1) {
    raise(Errc::config_error, "momentum outside [0,1]");
  }
  if (h.epochs < 1) raise(Errc::config_error, "epochs must be >= 1");
  if (h.batch_size < 1) raise(Errc::config_error, "batch_size must be >= 1");
}

AdamW::AdamW(EncoderPair* pair, const HyperConfig& hyper)
    : pair_(pair), hyper_(hyper) {
  validate_hyper(hyper);
  for (const auto& p : parameters(*pair_)) {
    m_.push_back(Eigen::VectorXd::Zero(p.size));
    v_.push_back(Eigen::VectorXd::Zero(p.size));
  }
}

void AdamW::step(const PairGrads& grads) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));

  const double* gptrs[9] = {
      grads.image.dw1.data(), grads.image.db1.data(), grads.image.dw2.data(),
      grads.image.db2.data(), grads.text.dw1.data(),  grads.text.db1.data(),
      grads.text.dw2.data(),  grads.text.db2.data(),  &grads.dlog_tau};
  auto params = parameters(*pair_);
  if (params.size() != 9) raise(Errc::shape_mismatch, "parameter count");

  for (std::size_t k = 0; k < params.size(); ++k) {
    double lr, wd;
    switch (params[k].group) {
      case ParamGroup::projection: lr = hyper_.lr_proj; wd = hyper_.wd_proj; break;
      case ParamGroup::backbone: lr = hyper_.lr_main; wd = hyper_.wd_main; break;
      case ParamGroup::temperature:
      default: lr = hyper_.temperature_lr; wd = hyper_.temperature_wd; break;
    }
    double* p = params[k].data;
    const double* g = gptrs[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::ptrdiff_t i = 0; i < params[k].size; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
    }
  }
}

void save_checkpoint(const std::filesystem::path& dir,
                     const EncoderPair& live, const EmaShadow& shadow,
                     long step) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(Errc::io_error, "cannot create " + dir.string());
  write_blob(dir / "live_image.bin", live.image_enc);
  write_blob(dir / "live_text.bin", live.text_enc);
  write_blob(dir / "ema_image.bin", shadow.image_enc);
  write_blob(dir / "ema_text.bin", shadow.text_enc);
  EncoderPair tmp = live;
  json meta{{"format", "bagclip-checkpoint-1"},
            {"temperature", live.tau()},
            {"log_temperature", live.log_tau},
            {"momentum", shadow.momentum},
            {"step", step},
            {"groups", group_map(tmp)}};
  std::ofstream f(dir / "meta.json", std::ios::binary);
  if (!f) raise(Errc::io_error, "cannot write meta.json");
  f << meta.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json")) {
    raise(Errc::missing_checkpoint, "no checkpoint at " + dir.string());
  }
  std::ifstream f(dir / "meta.json", std::ios::binary);
  json meta;
  try {
    f >> meta;
  } catch (const json::exception& e) {
    raise(Errc::format_error, std::string("meta.json: ") + e.what());
  }
  Checkpoint ck;
  ck.live.image_enc = read_blob(dir / "live_image.bin");
  ck.live.text_enc = read_blob(dir / "live_text.bin");
  ck.live.log_tau = meta.value("log_temperature", 0.0);
  ck.ema.image_enc = read_blob(dir / "ema_image.bin");
  ck.ema.text_enc = read_blob(dir / "ema_text.bin");
  ck.ema.log_tau = ck.live.log_tau;
  ck.momentum = meta.value("momentum", 0.98);
  ck.step = meta.value("step", 0L);
  return ck;
}

}  // namespace bagclip
