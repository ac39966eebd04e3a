#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bagclip/error.hpp"

namespace bagclip {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class ParamGroup { projection, backbone, temperature };
const char* to_string(ParamGroup g);

// One hidden tanh layer plus a linear projection, output L2-normalized.
// w1/b1 form the backbone group, w2/b2 the projection group.
struct MlpEncoder {
  Mat w1;  // hidden x in
  Vec b1;
  Mat w2;  // embed x hidden
  Vec b2;

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int embed_dim() const { return static_cast<int>(w2.rows()); }
};

// Batch activations kept for the backward pass; inputs and embeddings are
// columns.
struct ForwardTrace {
  Mat x;      // in x n
  Mat h;      // hidden x n
  Mat z;      // embed x n, pre-normalization
  Mat e;      // embed x n, unit columns
  Vec znorm;  // n
};

ForwardTrace forward_batch(const MlpEncoder& enc, const Mat& inputs);
Vec forward_one(const MlpEncoder& enc, const Vec& input);

struct EncoderGrads {
  Mat dw1;
  Vec db1;
  Mat dw2;
  Vec db2;
};

// dE is the loss gradient w.r.t. the normalized embeddings e.
EncoderGrads backward_batch(const MlpEncoder& enc, const ForwardTrace& trace,
                            const Mat& dE);

struct EncoderPair {
  MlpEncoder image_enc;
  MlpEncoder text_enc;
  double log_tau = 0.0;  // temperature kept positive via exp

  double tau() const { return std::exp(log_tau); }
};

struct ParamRef {
  std::string name;
  ParamGroup group;
  double* data;
  std::ptrdiff_t size;
};

// Flat view over every trainable parameter; the partition into groups is
// total and non-overlapping.
std::vector<ParamRef> parameters(EncoderPair& pair);
std::map<std::string, std::string> group_map(EncoderPair& pair);

struct EmaShadow {
  MlpEncoder image_enc;
  MlpEncoder text_enc;
  double momentum = 0.98;
};

EmaShadow make_shadow(const EncoderPair& pair, double momentum);

// shadow <- m * shadow + (1 - m) * live, elementwise; live untouched.
// Shadows carry no gradients.
void ema_update(EmaShadow& shadow, const EncoderPair& live);

// Packages shadow weights as an EncoderPair (borrowing the live log_tau)
// so evaluation code has one entry point.
EncoderPair as_pair(const EmaShadow& shadow, double log_tau);

EncoderPair make_toy_pair(int embed_dim, int attr_dim, std::uint64_t seed,
                          double temperature_init = 1.0);

// S_ij = <image_i, text_j> of unit embeddings; inputs as columns.
Mat similarity_matrix(const EncoderPair& pair, const Mat& images,
                      const Mat& texts);
Mat similarity_matrix(const EncoderPair& pair, const std::vector<Vec>& images,
                      const std::vector<Vec>& texts);

struct HyperConfig {
  double lr_proj = 5e-3;
  double lr_main = 2e-3;
  double wd_proj = 1e-4;
  double wd_main = 1e-4;
  double temperature_init = 0.5;
  double temperature_lr = 1e-2;
  double temperature_wd = 1e-6;
  double momentum = 0.98;
  int epochs = 15;
  int batch_size = 64;

  bool operator==(const HyperConfig&) const = default;
};

void validate_hyper(const HyperConfig& h);

struct PairGrads {
  EncoderGrads image;
  EncoderGrads text;
  double dlog_tau = 0.0;
};

// Decoupled-weight-decay Adam with per-group learning rates, constant
// schedule.
class AdamW {
 public:
  AdamW(EncoderPair* pair, const HyperConfig& hyper);
  void step(const PairGrads& grads);
  long step_count() const { return t_; }

 private:
  EncoderPair* pair_;
  HyperConfig hyper_;
  long t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

struct Checkpoint {
  EncoderPair live;
  EncoderPair ema;
  double momentum = 0.98;
  long step = 0;
};

void save_checkpoint(const std::filesystem::path& dir,
                     const EncoderPair& live, const EmaShadow& shadow,
                     long step);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace bagclip
