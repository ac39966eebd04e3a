#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <vector>

#include "bagclip/error.hpp"
#include "bagclip/loss.hpp"
#include "bagclip/rng.hpp"

using namespace bagclip;

namespace {

template <typename Fn>
Errc thrown_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected bagclip::Error");
  return Errc::invalid_argument;
}

Mat random_sims(int n, int m, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Mat s(n, m);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n; ++i) s(i, j) = scale * rng.next_normal();
  }
  return s;
}

TrainBatch random_batch(std::vector<int> labels, std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  return make_batch(std::move(labels), random_sims(n, n, seed));
}

// Plain symmetric InfoNCE over a distinct-label batch, written from the
// textbook formula so it cannot share bugs with the library version.
double reference_symmetric_infonce(const Mat& s, double tau) {
  const int n = static_cast<int>(s.rows());
  auto lse = [&](const Eigen::RowVectorXd& row) {
    const double m = row.maxCoeff();
    double z = 0.0;
    for (int k = 0; k < row.size(); ++k) z += std::exp((row(k) - m) / tau);
    return std::log(z) + m / tau;
  };
  double li = 0.0, lt = 0.0;
  for (int i = 0; i < n; ++i) {
    li -= s(i, i) / tau - lse(s.row(i));
    lt -= s(i, i) / tau - lse(s.col(i).transpose());
  }
  return li / n + lt / n;
}

}  // namespace

TEST_CASE("make_batch derives symmetric label groups") {
  TrainBatch b = make_batch({4, 9, 4}, Mat::Zero(3, 3));
  CHECK(b.pos_rows[0] == std::vector<int>{0, 2});
  CHECK(b.pos_rows[1] == std::vector<int>{1});
  CHECK(b.pos_rows[2] == std::vector<int>{0, 2});
  CHECK(b.pos_cols == b.pos_rows);
  CHECK(b.size() == 3);

  CHECK(thrown_code([] { make_batch({1, 2}, Mat::Zero(3, 3)); }) ==
        Errc::shape_mismatch);
}

TEST_CASE("distinct labels reduce the bag loss to symmetric InfoNCE") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const int n = 6;
    std::vector<int> labels(n);
    std::iota(labels.begin(), labels.end(), 0);
    TrainBatch b = random_batch(labels, seed);
    for (double tau : {0.07, 0.5, 1.0}) {
      CHECK(std::abs(loss_ft(b, tau) -
                     reference_symmetric_infonce(b.S, tau)) < 1e-9);
    }
  }
}

TEST_CASE("two same-class pairs with uniform similarities cost exactly ln 2") {
  Mat s = Mat::Constant(2, 2, 0.37);
  TrainBatch b = make_batch({5, 5}, s);
  CHECK(std::abs(loss_image(b, 0.5) - std::log(2.0)) < 1e-9);
  CHECK(std::abs(loss_text(b, 0.5) - std::log(2.0)) < 1e-9);
  CHECK(std::abs(loss_ft(b, 0.5) - 2.0 * std::log(2.0)) < 1e-9);
}

TEST_CASE("uniform similarities cost ln N at any temperature") {
  for (int n : {2, 5, 9}) {
    std::vector<int> labels(n);
    std::iota(labels.begin(), labels.end(), 0);
    TrainBatch b = make_batch(labels, Mat::Constant(n, n, -0.8));
    for (double tau : {0.07, 0.5, 1.0, 3.0}) {
      CHECK(std::abs(loss_image(b, tau) - std::log(double(n))) < 1e-12);
    }
  }
}

TEST_CASE("losses are nonnegative and permutation invariant") {
  TrainBatch b = random_batch({0, 1, 1, 2, 0, 3}, 77);
  const double tau = 0.4;
  CHECK(loss_image(b, tau) >= 0.0);
  CHECK(loss_text(b, tau) >= 0.0);

  // Permute the batch; group structure and loss must not change.
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  std::vector<int> plabels(6);
  Mat ps(6, 6);
  for (int i = 0; i < 6; ++i) {
    plabels[i] = b.labels[perm[i]];
    for (int j = 0; j < 6; ++j) ps(i, j) = b.S(perm[i], perm[j]);
  }
  TrainBatch pb = make_batch(plabels, ps);
  CHECK(std::abs(loss_ft(pb, tau) - loss_ft(b, tau)) < 1e-12);
}

TEST_CASE("text loss is the image loss of the transposed batch") {
  TrainBatch b = random_batch({0, 0, 1, 2, 2}, 31);
  TrainBatch bt = make_batch(b.labels, b.S.transpose());
  CHECK(loss_text(b, 0.3) == loss_image(bt, 0.3));
}

TEST_CASE("loss gradients match central finite differences") {
  TrainBatch b = random_batch({0, 0, 1, 2, 2, 2, 3}, 123);
  const double tau = 0.6;
  LossGrads g = loss_ft_with_grad(b, tau);
  CHECK(g.value == doctest::Approx(loss_ft(b, tau)).epsilon(1e-13));

  const double h = 1e-5;
  for (int i = 0; i < b.size(); ++i) {
    for (int j = 0; j < b.size(); ++j) {
      TrainBatch up = b, dn = b;
      up.S(i, j) += h;
      dn.S(i, j) -= h;
      const double fd = (loss_ft(up, tau) - loss_ft(dn, tau)) / (2 * h);
      CHECK(std::abs(fd - g.dS(i, j)) <
            1e-6 * (1.0 + std::abs(fd) + std::abs(g.dS(i, j))));
    }
  }
  const double fd_tau =
      (loss_ft(b, tau + h) - loss_ft(b, tau - h)) / (2 * h);
  CHECK(std::abs(fd_tau - g.dtau) <
        1e-6 * (1.0 + std::abs(fd_tau) + std::abs(g.dtau)));

  // Directional pieces sum to the joint gradient.
  LossGrads gi = loss_image_with_grad(b, tau);
  LossGrads gt = loss_text_with_grad(b, tau);
  CHECK((gi.dS + gt.dS - g.dS).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(gi.dtau + gt.dtau - g.dtau) < 1e-15);
}

TEST_CASE("loss input validation") {
  TrainBatch b = random_batch({0, 1}, 5);
  CHECK(thrown_code([&] { loss_image(b, 0.0); }) == Errc::invalid_argument);
  CHECK(thrown_code([&] { loss_image(b, -1.0); }) == Errc::invalid_argument);

  TrainBatch nan_batch = b;
  nan_batch.S(0, 1) = std::nan("");
  CHECK(thrown_code([&] { loss_image(nan_batch, 1.0); }) ==
        Errc::non_finite_similarity);

  TrainBatch bad_sets = b;
  bad_sets.pos_rows.pop_back();
  CHECK(thrown_code([&] { loss_image(bad_sets, 1.0); }) ==
        Errc::shape_mismatch);
}

TEST_CASE("threshold_mask keeps confident same-class texts") {
  // Images 0,1 share a class with texts 0,1; image 2 is alone.
  Mat s = Mat::Zero(3, 3);
  s(0, 0) = 3.0;  // image 0 strongly prefers text 0
  s(1, 1) = 0.2;  // image 1 mildly prefers text 1
  TrainBatch b = make_batch({0, 0, 1}, s);
  TrainBatch masked = threshold_mask(b, 1.0, 0.5);

  CHECK(masked.pos_rows[0] == std::vector<int>{0});
  CHECK(masked.pos_rows[1] == std::vector<int>{1});
  CHECK(masked.pos_rows[2] == std::vector<int>{2});  // singleton untouched
  // Transposed relation.
  CHECK(masked.pos_cols[0] == std::vector<int>{0});
  CHECK(masked.pos_cols[1] == std::vector<int>{1});
  CHECK(masked.pos_cols[2] == std::vector<int>{2});
  // Labels and similarities pass through.
  CHECK(masked.labels == b.labels);
  CHECK((masked.S - b.S).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("threshold_mask falls back to the argmax text") {
  Mat s = Mat::Zero(2, 2);
  s(0, 1) = 0.3;  // best text for image 0 is text 1
  TrainBatch b = make_batch({0, 0}, s);
  // p_min = 0.99 rejects both candidates; argmax survives.
  TrainBatch masked = threshold_mask(b, 1.0, 0.99);
  CHECK(masked.pos_rows[0] == std::vector<int>{1});

  // Exact tie: the first (lowest-index) max wins.
  TrainBatch tied = make_batch({0, 0}, Mat::Zero(2, 2));
  masked = threshold_mask(tied, 1.0, 0.99);
  CHECK(masked.pos_rows[0] == std::vector<int>{0});
  CHECK(masked.pos_rows[1] == std::vector<int>{0});
}

TEST_CASE("with_positive_sets grafts frozen selections onto live scores") {
  TrainBatch frozen = random_batch({0, 0, 1}, 9);
  TrainBatch masked = threshold_mask(frozen, 0.5, 0.5);
  Mat live = random_sims(3, 3, 10);
  TrainBatch out = with_positive_sets(masked, live);
  CHECK(out.labels == masked.labels);
  CHECK(out.pos_rows == masked.pos_rows);
  CHECK(out.pos_cols == masked.pos_cols);
  CHECK((out.S - live).cwiseAbs().maxCoeff() == 0.0);
  CHECK(thrown_code([&] { with_positive_sets(masked, Mat::Zero(2, 2)); }) ==
        Errc::shape_mismatch);
}

TEST_CASE("select_max_pairs picks the per-class peak, lowest indices on ties") {
  Mat s = Mat::Constant(4, 4, 0.5);
  s(0, 0) = 0.1;
  s(0, 1) = 0.4;
  s(1, 0) = 0.9;  // loudest pair of class 0
  s(1, 1) = 0.2;
  TrainBatch b = make_batch({0, 0, 1, 1}, s);
  MaxPoolSelection sel = select_max_pairs(b);
  REQUIRE(sel.labels == std::vector<int>{0, 1});
  CHECK(sel.rows == std::vector<int>{1, 2});  // class-1 block ties at 0.5
  CHECK(sel.cols == std::vector<int>{0, 2});

  TrainBatch sub = max_pool_subbatch(b, sel);
  CHECK(sub.size() == 2);
  CHECK(sub.S(0, 0) == 0.9);
  CHECK(sub.S(0, 1) == s(1, 2));
  CHECK(sub.S(1, 0) == s(2, 0));
  CHECK(sub.S(1, 1) == 0.5);
  CHECK(sub.pos_rows[0] == std::vector<int>{0});

  CHECK(instance_max_pool(b, 0.5) == loss_ft(sub, 0.5));
}

TEST_CASE("kd divergence is zero on itself and matches a hand value") {
  Mat s = random_sims(3, 4, 20);
  CHECK(kd_kl(s, s) == 0.0);

  // One row, two logits, T = 3: check against a direct evaluation.
  Mat teacher(1, 2), student(1, 2);
  teacher << 1.0, 0.0;
  student << 0.5, 0.1;
  const double T = 3.0;
  auto two_softmax = [&](double a, double b) {
    const double ea = std::exp(a / T), eb = std::exp(b / T);
    return std::pair<double, double>{ea / (ea + eb), eb / (ea + eb)};
  };
  auto [pt0, pt1] = two_softmax(1.0, 0.0);
  auto [ps0, ps1] = two_softmax(0.5, 0.1);
  const double want =
      pt0 * (std::log(pt0) - std::log(ps0)) +
      pt1 * (std::log(pt1) - std::log(ps1));
  CHECK(kd_kl(teacher, student, T) == doctest::Approx(want).epsilon(1e-12));

  CHECK(thrown_code([&] { kd_kl(teacher, Mat::Zero(2, 2)); }) ==
        Errc::shape_mismatch);
  CHECK(thrown_code([&] { kd_kl(teacher, student, 0.0); }) ==
        Errc::invalid_argument);
}

TEST_CASE("kd gradient matches finite differences") {
  Mat teacher = random_sims(4, 5, 21);
  Mat student = random_sims(4, 5, 22);
  KdGrads g = kd_kl_with_grad(teacher, student, 3.0);
  CHECK(g.value > 0.0);

  const double h = 1e-6;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) {
      Mat up = student, dn = student;
      up(i, j) += h;
      dn(i, j) -= h;
      const double fd = (kd_kl(teacher, up, 3.0) - kd_kl(teacher, dn, 3.0)) /
                        (2 * h);
      CHECK(std::abs(fd - g.dS_student(i, j)) <
            1e-6 * (1.0 + std::abs(fd) + std::abs(g.dS_student(i, j))));
    }
  }
}

TEST_CASE("pseudo-label cross entropy: value, acceptance, gradients") {
  Mat strong = random_sims(3, 4, 30);
  Mat weak = random_sims(3, 4, 31, 2.0);
  const double tau = 0.7;

  // p_min = 0 accepts every row; check the value by hand.
  PseudoLabelLoss out = pseudo_label_ce(strong, weak, tau, 0.0);
  CHECK(out.accepted == 3);
  double want = 0.0;
  for (int i = 0; i < 3; ++i) {
    int target = 0;
    for (int j = 1; j < 4; ++j) {
      if (weak(i, j) > weak(i, target)) target = j;
    }
    double z = 0.0;
    const double m = strong.row(i).maxCoeff();
    for (int j = 0; j < 4; ++j) z += std::exp((strong(i, j) - m) / tau);
    want -= (strong(i, target) - m) / tau - std::log(z);
  }
  want /= 3.0;
  CHECK(out.value == doctest::Approx(want).epsilon(1e-12));

  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      Mat up = strong, dn = strong;
      up(i, j) += h;
      dn(i, j) -= h;
      const double fd = (pseudo_label_ce(up, weak, tau, 0.0).value -
                         pseudo_label_ce(dn, weak, tau, 0.0).value) /
                        (2 * h);
      CHECK(std::abs(fd - out.dS(i, j)) <
            1e-6 * (1.0 + std::abs(fd) + std::abs(out.dS(i, j))));
    }
  }
  const double fd_tau = (pseudo_label_ce(strong, weak, tau + h, 0.0).value -
                         pseudo_label_ce(strong, weak, tau - h, 0.0).value) /
                        (2 * h);
  CHECK(std::abs(fd_tau - out.dtau) <
        1e-6 * (1.0 + std::abs(fd_tau) + std::abs(out.dtau)));
}

TEST_CASE("pseudo-label confidence gate rejects flat rows") {
  Mat strong = random_sims(2, 3, 40);
  Mat weak(2, 3);
  weak << 5.0, 0.0, 0.0,   // confident row
          0.1, 0.1, 0.1;   // flat row, never confident
  PseudoLabelLoss out = pseudo_label_ce(strong, weak, 1.0, 0.9);
  CHECK(out.accepted == 1);
  CHECK(out.dS.row(1).cwiseAbs().maxCoeff() == 0.0);

  // Everything rejected: zero loss, zero gradients.
  out = pseudo_label_ce(strong, weak, 1.0, 1.1);
  CHECK(out.accepted == 0);
  CHECK(out.value == 0.0);
  CHECK(out.dtau == 0.0);
  CHECK(out.dS.cwiseAbs().maxCoeff() == 0.0);

  CHECK(thrown_code([&] { pseudo_label_ce(strong, Mat::Zero(3, 3), 1.0); }) ==
        Errc::shape_mismatch);
  CHECK(thrown_code([&] { pseudo_label_ce(strong, weak, 0.0); }) ==
        Errc::invalid_argument);
}

TEST_CASE("strategy combiners use the pinned weights") {
  CHECK(kFixmatchPseudoWeight == 0.33);
  CHECK(kKdLossWeight == 4.0);
  CHECK(fixmatch_combine(1.5, 2.0) == doctest::Approx(1.5 + 0.33 * 2.0));
  CHECK(kd_combine(1.5, 2.0) == doctest::Approx(1.5 + 4.0 * 2.0));
}
