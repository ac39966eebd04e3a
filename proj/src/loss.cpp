#include "bagclip/loss.hpp"

#include <algorithm>
#include <cmath>

namespace bagclip {

namespace {

void check_batch(const TrainBatch& batch, double tau) {
  const auto n = static_cast<Eigen::Index>(batch.labels.size());
  if (batch.S.rows() != n || batch.S.cols() != n) {
    raise(Errc::shape_mismatch, "batch similarity matrix must be NxN");
  }
  if (batch.pos_rows.size() != batch.labels.size() ||
      batch.pos_cols.size() != batch.labels.size()) {
    raise(Errc::shape_mismatch, "positive set count");
  }
  if (!batch.S.allFinite()) {
    raise(Errc::non_finite_similarity, "similarity matrix has NaN/inf");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    raise(Errc::invalid_argument, "tau must be positive and finite");
  }
}

// Row-direction group InfoNCE: -(1/N) sum_i (1/|P_i|) sum_{j in P_i}
// [S_ij/tau - LSE_r(S_ir/tau)]. Stable via row-max subtraction. Writes
// gradients w.r.t. S and tau when grad buffers are given.
double directional_loss(const Mat& S,
                        const std::vector<std::vector<int>>& pos, double tau,
                        Mat* dS, double* dtau) {
  const Eigen::Index n = S.rows();
  double total = 0.0;
  if (dS) dS->setZero(n, S.cols());
  if (dtau) *dtau = 0.0;
  const double N = static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pos[i].empty()) continue;
    const double rmax = S.row(i).maxCoeff();
    Eigen::RowVectorXd ex = ((S.row(i).array() - rmax) / tau).exp();
    const double Z = ex.sum();
    const double lse = std::log(Z) + rmax / tau;
    const double inv_p = 1.0 / static_cast<double>(pos[i].size());
    // mean similarity under the row softmax, for the tau gradient
    double s_bar = 0.0;
    if (dtau) s_bar = (ex * S.row(i).transpose()).sum() / Z;
    double row_term = 0.0;
    for (int j : pos[i]) {
      row_term += S(i, j) / tau - lse;
      if (dtau) *dtau += inv_p * (S(i, j) - s_bar);
      if (dS) (*dS)(i, j) -= inv_p / (N * tau);
    }
    total -= inv_p * row_term;
    if (dS) dS->row(i) += (ex / Z) * (1.0 / (N * tau));
  }
  if (dtau) *dtau /= (N * tau * tau);
  return total / N;
}

std::vector<std::vector<int>> transpose_sets(
    const std::vector<std::vector<int>>& rows, std::size_t n_cols) {
  std::vector<std::vector<int>> cols(n_cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j : rows[i]) cols[static_cast<std::size_t>(j)].push_back(
        static_cast<int>(i));
  }
  return cols;
}

}  // namespace

TrainBatch make_batch(std::vector<int> labels, Mat S) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (S.rows() != n || S.cols() != n) {
    raise(Errc::shape_mismatch, "batch similarity matrix must be NxN");
  }
  TrainBatch b;
  b.labels = std::move(labels);
  b.S = std::move(S);
  b.pos_rows.resize(b.labels.size());
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    for (std::size_t j = 0; j < b.labels.size(); ++j) {
      if (b.labels[j] == b.labels[i]) {
        b.pos_rows[i].push_back(static_cast<int>(j));
      }
    }
  }
  b.pos_cols = b.pos_rows;  // label groups are symmetric
  return b;
}

double loss_image(const TrainBatch& batch, double tau) {
  check_batch(batch, tau);
  return directional_loss(batch.S, batch.pos_rows, tau, nullptr, nullptr);
}

double loss_text(const TrainBatch& batch, double tau) {
  check_batch(batch, tau);
  Mat St = batch.S.transpose();
  return directional_loss(St, batch.pos_cols, tau, nullptr, nullptr);
}

double loss_ft(const TrainBatch& batch, double tau) {
  return loss_image(batch, tau) + loss_text(batch, tau);
}

LossGrads loss_image_with_grad(const TrainBatch& batch, double tau) {
  check_batch(batch, tau);
  LossGrads g;
  g.value = directional_loss(batch.S, batch.pos_rows, tau, &g.dS, &g.dtau);
  return g;
}

LossGrads loss_text_with_grad(const TrainBatch& batch, double tau) {
  check_batch(batch, tau);
  LossGrads g;
  Mat St = batch.S.transpose();
  Mat dSt;
  g.value = directional_loss(St, batch.pos_cols, tau, &dSt, &g.dtau);
  g.dS = dSt.transpose();
  return g;
}

LossGrads loss_ft_with_grad(const TrainBatch& batch, double tau) {
  LossGrads gi = loss_image_with_grad(batch, tau);
  LossGrads gt = loss_text_with_grad(batch, tau);
  LossGrads g;
  g.value = gi.value + gt.value;
  g.dS = gi.dS + gt.dS;
  g.dtau = gi.dtau + gt.dtau;
  return g;
}

TrainBatch threshold_mask(const TrainBatch& batch, double tau, double p_min) {
  check_batch(batch, tau);
  TrainBatch out = batch;
  for (std::size_t i = 0; i < batch.pos_rows.size(); ++i) {
    const auto& group = batch.pos_rows[i];
    if (group.size() <= 1) continue;
    // softmax over this class's batch texts only
    double m = -std::numeric_limits<double>::infinity();
    for (int j : group) m = std::max(m, batch.S(static_cast<int>(i), j));
    double z = 0.0;
    std::vector<double> ex(group.size());
    for (std::size_t k = 0; k < group.size(); ++k) {
      ex[k] = std::exp((batch.S(static_cast<int>(i), group[k]) - m) / tau);
      z += ex[k];
    }
    std::vector<int> kept;
    std::size_t best = 0;
    for (std::size_t k = 0; k < group.size(); ++k) {
      if (ex[k] / z >= p_min) kept.push_back(group[k]);
      if (ex[k] > ex[best]) best = k;  // strict: first max wins
    }
    if (kept.empty()) kept.push_back(group[best]);
    out.pos_rows[i] = std::move(kept);
  }
  out.pos_cols = transpose_sets(out.pos_rows, batch.labels.size());
  return out;
}

TrainBatch with_positive_sets(const TrainBatch& sets, Mat live_S) {
  if (live_S.rows() != static_cast<Eigen::Index>(sets.labels.size()) ||
      live_S.cols() != live_S.rows()) {
    raise(Errc::shape_mismatch, "live similarity matrix shape");
  }
  TrainBatch out = sets;
  out.S = std::move(live_S);
  return out;
}

MaxPoolSelection select_max_pairs(const TrainBatch& batch) {
  const auto n = static_cast<Eigen::Index>(batch.labels.size());
  if (batch.S.rows() != n || batch.S.cols() != n) {
    raise(Errc::shape_mismatch, "batch similarity matrix must be NxN");
  }
  MaxPoolSelection sel;
  std::vector<int> seen;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    const int label = batch.labels[i];
    if (std::find(seen.begin(), seen.end(), label) != seen.end()) continue;
    seen.push_back(label);
    std::vector<int> members;
    for (std::size_t j = 0; j < batch.labels.size(); ++j) {
      if (batch.labels[j] == label) members.push_back(static_cast<int>(j));
    }
    int best_r = members[0], best_c = members[0];
    double best = batch.S(best_r, best_c);
    for (int r : members) {
      for (int c : members) {
        if (batch.S(r, c) > best) {  // strict: lowest (r, c) wins ties
          best = batch.S(r, c);
          best_r = r;
          best_c = c;
        }
      }
    }
    sel.rows.push_back(best_r);
    sel.cols.push_back(best_c);
    sel.labels.push_back(label);
  }
  return sel;
}

TrainBatch max_pool_subbatch(const TrainBatch& batch,
                             const MaxPoolSelection& sel) {
  const auto k = static_cast<Eigen::Index>(sel.labels.size());
  Mat S(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      S(a, b) = batch.S(sel.rows[static_cast<std::size_t>(a)],
                        sel.cols[static_cast<std::size_t>(b)]);
    }
  }
  return make_batch(sel.labels, std::move(S));
}

double instance_max_pool(const TrainBatch& batch, double tau) {
  check_batch(batch, tau);
  return loss_ft(max_pool_subbatch(batch, select_max_pairs(batch)), tau);
}

double fixmatch_combine(double l_ft, double l_pseudo) {
  return l_ft + kFixmatchPseudoWeight * l_pseudo;
}

double kd_combine(double l_ft, double l_kd) {
  return l_ft + kKdLossWeight * l_kd;
}

double kd_kl(const Mat& teacher_S, const Mat& student_S,
             double kd_temperature) {
  return kd_kl_with_grad(teacher_S, student_S, kd_temperature).value;
}

KdGrads kd_kl_with_grad(const Mat& teacher_S, const Mat& student_S,
                        double kd_temperature) {
  if (teacher_S.rows() != student_S.rows() ||
      teacher_S.cols() != student_S.cols()) {
    raise(Errc::shape_mismatch, "teacher/student logit shapes");
  }
  if (!teacher_S.allFinite() || !student_S.allFinite()) {
    raise(Errc::non_finite_similarity, "KD logits have NaN/inf");
  }
  if (!(kd_temperature > 0.0)) {
    raise(Errc::invalid_argument, "kd temperature must be positive");
  }
  const Eigen::Index n = teacher_S.rows();
  const double T = kd_temperature;
  KdGrads out;
  out.dS_student.setZero(n, teacher_S.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    auto softmax_row = [&](const Mat& m) {
      Eigen::RowVectorXd r = m.row(i) / T;
      Eigen::RowVectorXd ex = (r.array() - r.maxCoeff()).exp();
      return Eigen::RowVectorXd(ex / ex.sum());
    };
    Eigen::RowVectorXd pt = softmax_row(teacher_S);
    Eigen::RowVectorXd ps = softmax_row(student_S);
    for (Eigen::Index j = 0; j < pt.size(); ++j) {
      if (pt(j) > 0.0) out.value += pt(j) * (std::log(pt(j)) - std::log(ps(j)));
    }
    out.dS_student.row(i) = (ps - pt) / (static_cast<double>(n) * T);
  }
  out.value /= static_cast<double>(n);
  return out;
}

PseudoLabelLoss pseudo_label_ce(const Mat& strong_S, const Mat& weak_S,
                                double tau, double p_min) {
  if (strong_S.rows() != weak_S.rows() || strong_S.cols() != weak_S.cols()) {
    raise(Errc::shape_mismatch, "strong/weak similarity shapes");
  }
  if (!strong_S.allFinite() || !weak_S.allFinite()) {
    raise(Errc::non_finite_similarity, "pseudo-label inputs have NaN/inf");
  }
  if (!(tau > 0.0)) raise(Errc::invalid_argument, "tau must be positive");
  const Eigen::Index n = strong_S.rows();
  PseudoLabelLoss out;
  out.dS.setZero(n, strong_S.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd wex =
        ((weak_S.row(i).array() - weak_S.row(i).maxCoeff()) / tau).exp();
    Eigen::RowVectorXd wp = wex / wex.sum();
    Eigen::Index target = 0;
    for (Eigen::Index j = 1; j < wp.size(); ++j) {
      if (wp(j) > wp(target)) target = j;
    }
    if (wp(target) < p_min) continue;
    Eigen::RowVectorXd sex =
        ((strong_S.row(i).array() - strong_S.row(i).maxCoeff()) / tau).exp();
    Eigen::RowVectorXd ps = sex / sex.sum();
    out.value -= std::log(ps(target));
    out.dS.row(i) = ps;
    out.dS(i, target) -= 1.0;
    // each accepted row adds (S_it - sum_r p_r S_ir) / tau^2
    out.dtau += strong_S(i, target) - (ps * strong_S.row(i).transpose()).sum();
    ++out.accepted;
  }
  if (out.accepted == 0) {
    out.value = 0.0;
    out.dtau = 0.0;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(out.accepted);
  out.value *= inv;
  out.dS *= inv / tau;
  out.dtau *= inv / (tau * tau);
  return out;
}

}  // namespace bagclip
