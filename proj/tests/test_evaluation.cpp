#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "affar/error.hpp"
#include "affar/evaluation.hpp"
#include "affar/training.hpp"
#include "support.hpp"

using namespace affar;

namespace {

// Counts straight from the label lists.
double brute_weighted_f1(const std::vector<int>& truth, const std::vector<int>& pred, int classes) {
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += truth[i] == c && pred[i] == c;
      fp += truth[i] != c && pred[i] == c;
      fn += truth[i] == c && pred[i] != c;
    }
    const double f1 = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    total += f1 * (tp + fn);
  }
  return total / static_cast<double>(truth.size());
}

// Mann-Whitney statistic over every (positive, negative) score pair.
double brute_auc(const Matrix& probs, const std::vector<int>& truth) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    for (std::size_t c = 0; c < probs.cols; ++c) (truth[i] == static_cast<int>(c) ? pos : neg).push_back(probs(i, c));
  }
  double s = 0.0;
  for (double p : pos) {
    for (double n : neg) s += p > n ? 1.0 : p == n ? 0.5 : 0.0;
  }
  return s / static_cast<double>(pos.size() * neg.size());
}

Matrix random_probs(std::mt19937_64& rng, std::size_t n, std::size_t c, bool coarse) {
  Matrix m(n, c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += m(i, j) = coarse ? std::round(u(rng) * 4) + 1 : u(rng);
    for (std::size_t j = 0; j < c; ++j) m(i, j) /= s;
  }
  return m;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("confusion and per-class metrics on a hand case") {
    const std::vector<int> truth{0, 0, 1}, pred{0, 1, 1};
    const auto cm = confusion_matrix(truth, pred, 2);
    CHECK(cm == ConfusionMatrix{{1, 1}, {0, 1}});
    const auto s = precision_recall_f1(cm);
    CHECK(s.per_class[0].precision == 1.0);
    CHECK(s.per_class[0].recall == 0.5);
    CHECK(s.per_class[0].f1 == doctest::Approx(2.0 / 3.0));
    CHECK(s.per_class[1].precision == 0.5);
    CHECK(s.per_class[1].recall == 1.0);
    CHECK(s.per_class[1].f1 == doctest::Approx(2.0 / 3.0));
    CHECK(s.weighted_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(confusion_matrix(truth, std::vector<int>{0, 2, 1}, 2), ConfigError);
  }

  TEST_CASE("an absent, never-predicted class scores 0 and carries no weight") {
    const std::vector<int> truth{0, 1, 1}, pred{0, 1, 1};
    const auto s = precision_recall_f1(confusion_matrix(truth, pred, 3));
    CHECK(s.per_class[2].precision == 0.0);
    CHECK(s.per_class[2].recall == 0.0);
    CHECK(s.per_class[2].f1 == 0.0);
    CHECK(s.per_class[2].support == 0);
    CHECK(s.weighted_f1 == 1.0);
    CHECK(s.macro_f1 == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("weighted F1 matches the counting oracle on random cases") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      const int classes = static_cast<int>(testing::uniform_int(rng, 2, 6));
      const std::size_t n = testing::uniform_int(rng, 1, 60);
      std::vector<int> truth(n), pred(n);
      for (std::size_t i = 0; i < n; ++i) {
        truth[i] = static_cast<int>(testing::uniform_int(rng, 0, classes - 1));
        pred[i] = trial % 4 == 0 ? truth[i] : static_cast<int>(testing::uniform_int(rng, 0, classes - 1));
      }
      const double w = weighted_f1(truth, pred, classes);
      CHECK(w == doctest::Approx(brute_weighted_f1(truth, pred, classes)).epsilon(1e-12));
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      if (trial % 4 == 0) CHECK(w == doctest::Approx(1.0));

      // invariant to a joint permutation of the samples
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<int> t2, p2;
      for (std::size_t i : order) {
        t2.push_back(truth[i]);
        p2.push_back(pred[i]);
      }
      CHECK(weighted_f1(t2, p2, classes) == doctest::Approx(w).epsilon(1e-14));
    }
  }

  TEST_CASE("weighted F1 equals macro F1 when supports are equal") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> truth, pred;
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 5; ++i) {
          truth.push_back(c);
          pred.push_back(static_cast<int>(testing::uniform_int(rng, 0, 2)));
        }
      }
      const auto s = precision_recall_f1(confusion_matrix(truth, pred, 3));
      CHECK(s.weighted_f1 == doctest::Approx(s.macro_f1).epsilon(1e-14));
    }
  }

  TEST_CASE("micro ROC/AUC: separated, constant and hand cases") {
    const Matrix sep = [] {
      Matrix m(2, 2);
      m(0, 0) = 0.9;
      m(0, 1) = 0.1;
      m(1, 0) = 0.4;
      m(1, 1) = 0.6;
      return m;
    }();
    CHECK(micro_roc_auc(sep, std::vector<int>{0, 1}).second == 1.0);
    Matrix flat(4, 2);
    for (double& v : flat.data) v = 0.5;
    const auto [roc, auc] = micro_roc_auc(flat, std::vector<int>{0, 1, 1, 0});
    CHECK(auc == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == 1.0);
    CHECK(roc.back().tpr == 1.0);
    CHECK(micro_roc_auc(sep, std::vector<int>{1, 0}).second == 0.0);
  }

  TEST_CASE("micro AUC matches the pairwise oracle, with and without ties") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t c = testing::uniform_int(rng, 2, 5), n = testing::uniform_int(rng, 1, 40);
      const Matrix probs = random_probs(rng, n, c, trial % 2 == 0);
      std::vector<int> truth(n);
      for (int& t : truth) t = static_cast<int>(testing::uniform_int(rng, 0, c - 1));
      const auto [roc, auc] = micro_roc_auc(probs, truth);
      CHECK(auc == doctest::Approx(brute_auc(probs, truth)).epsilon(1e-12));
      for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].fpr >= roc[i - 1].fpr);
        CHECK(roc[i].tpr >= roc[i - 1].tpr);
      }
    }
  }

  TEST_CASE("evaluate_windows: report fields are mutually consistent and round-trip through files") {
    testing::TempDir dir("report");
    SynthShiftSpec spec = shifted_synth_spec(3, 5);
    spec.timesteps = 16;
    spec.windows_per_class = 6;
    const DGTask task = generate_synthetic(spec);
    ModelConfig mc;
    mc.conv1_kernel = 3;
    mc.conv1_filters = 2;
    mc.conv2_kernel = 3;
    mc.conv2_filters = 2;
    mc.branch_width = 4;
    mc.domain_hidden = 4;
    mc = config_for_task(task, mc);
    const auto params = ModelParams::init(mc, 1);
    const auto& windows = task.test_domain.windows;
    const EvalReport r = evaluate_windows(params, windows);

    std::vector<int> truth;
    for (const auto& w : windows) truth.push_back(w.activity);
    const auto inf = infer(params, windows);
    CHECK(r.num_windows == windows.size());
    CHECK(r.weighted_f1 == doctest::Approx(brute_weighted_f1(truth, inf.predictions, task.num_classes)));
    CHECK(r.confusion == confusion_matrix(truth, inf.predictions, static_cast<std::size_t>(task.num_classes)));
    CHECK(r.auc == doctest::Approx(brute_auc(inf.probs, truth)));
    std::size_t diag = 0, total = 0;
    for (std::size_t i = 0; i < r.confusion.size(); ++i) {
      diag += r.confusion[i][i];
      for (std::size_t v : r.confusion[i]) total += v;
    }
    CHECK(total == windows.size());
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(diag) / static_cast<double>(total)));
    CHECK(r.mean_fusion_weights.size() == mc.num_domains);
    CHECK(std::accumulate(r.mean_fusion_weights.begin(), r.mean_fusion_weights.end(), 0.0) ==
          doctest::Approx(1.0).epsilon(1e-9));

    write_report(r, dir.str());
    const Sidecar values = read_report_values(dir.str());
    CHECK(std::stod(values.at("weighted_f1")) == r.weighted_f1);
    CHECK(std::stod(values.at("auc")) == r.auc);
    CHECK(std::stoul(values.at("class.0.support")) == r.per_class[0].support);
    CHECK(read_confusion_csv(dir.str("confusion.csv")) == r.confusion);
    CHECK_THROWS_AS(read_confusion_csv(dir.str("missing.csv")), IngestError);
  }
}
