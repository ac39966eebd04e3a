#pragma once

#include <vector>

#include "bagclip/encoders.hpp"
#include "bagclip/error.hpp"

namespace bagclip {

// N (image, text, label) pairs with their NxN similarity matrix. pos_rows[i]
// holds the text columns counted as positives for image i (the group G_i by
// default), pos_cols[j] the image rows counted as positives for text j.
// Strategies may shrink these sets; the loss denominators always run over
// the whole batch.
struct TrainBatch {
  std::vector<int> labels;
  Mat S;
  std::vector<std::vector<int>> pos_rows;
  std::vector<std::vector<int>> pos_cols;

  int size() const { return static_cast<int>(labels.size()); }
};

// Derives the reflexive group positive sets from labels.
TrainBatch make_batch(std::vector<int> labels, Mat S);

double loss_image(const TrainBatch& batch, double tau);
double loss_text(const TrainBatch& batch, double tau);
double loss_ft(const TrainBatch& batch, double tau);

struct LossGrads {
  double value = 0.0;
  Mat dS;
  double dtau = 0.0;
};

LossGrads loss_image_with_grad(const TrainBatch& batch, double tau);
LossGrads loss_text_with_grad(const TrainBatch& batch, double tau);
LossGrads loss_ft_with_grad(const TrainBatch& batch, double tau);

// Keeps, per image, only same-class texts whose probability under a softmax
// over that class's batch texts reaches p_min; falls back to the argmax text
// when none do. Intended to run on frozen-model similarities; the kept
// (image, text) relation transposes onto pos_cols.
TrainBatch threshold_mask(const TrainBatch& batch, double tau,
                          double p_min = 0.5);

// Copies another batch's positive sets onto live similarities.
TrainBatch with_positive_sets(const TrainBatch& sets, Mat live_S);

struct MaxPoolSelection {
  std::vector<int> rows;    // image index per class-group
  std::vector<int> cols;    // text index per class-group
  std::vector<int> labels;  // group label, order of first appearance
};

// Highest-similarity (image, text) combination within each class-group;
// ties go to the lowest (row, col) pair.
MaxPoolSelection select_max_pairs(const TrainBatch& batch);
TrainBatch max_pool_subbatch(const TrainBatch& batch,
                             const MaxPoolSelection& sel);
double instance_max_pool(const TrainBatch& batch, double tau);

inline constexpr double kFixmatchPseudoWeight = 0.33;
inline constexpr double kKdLossWeight = 4.0;

double fixmatch_combine(double l_ft, double l_pseudo);
double kd_combine(double l_ft, double l_kd);

// Mean row-wise KL(softmax(teacher/T) || softmax(student/T)).
double kd_kl(const Mat& teacher_S, const Mat& student_S,
             double kd_temperature = 3.0);
struct KdGrads {
  double value = 0.0;
  Mat dS_student;
};
KdGrads kd_kl_with_grad(const Mat& teacher_S, const Mat& student_S,
                        double kd_temperature = 3.0);

// Cross-entropy of strong-view rows against weak-view pseudo-labels kept at
// confidence >= p_min; averaged over accepted rows.
struct PseudoLabelLoss {
  double value = 0.0;
  Mat dS;
  double dtau = 0.0;
  int accepted = 0;
};
PseudoLabelLoss pseudo_label_ce(const Mat& strong_S, const Mat& weak_S,
                                double tau, double p_min = 0.5);

}  // namespace bagclip
