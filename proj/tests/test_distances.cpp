#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "affar/distances.hpp"
#include "affar/error.hpp"
#include "support.hpp"

using namespace affar;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix m(v.size(), 1);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

// Central differences of f w.r.t. every entry of x.
template <typename F>
std::vector<double> numeric_grad(Matrix& x, F f, double h = 1e-6) {
  std::vector<double> g(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double up = f();
    x.data[i] = keep - h;
    const double down = f();
    x.data[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Matrix shuffled_rows(const Matrix& m, std::mt19937_64& rng) {
  std::vector<std::size_t> order(m.rows);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Matrix out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::copy(m.row(order[r]).begin(), m.row(order[r]).end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

TEST_SUITE("distances") {
  TEST_CASE("kernel: equal points give 1, unit distance gives exp(-1/2)") {
    const auto spec = KernelSpec::fixed({1.0});
    const Matrix k = gaussian_kernel_matrix(column({0.0, 1.0}), column({0.0}), spec);
    CHECK(k(0, 0) == 1.0);
    CHECK(k(1, 0) == doctest::Approx(0.6065306597126334).epsilon(1e-15));

    const auto multi = KernelSpec::fixed({0.5, 1.0, 3.0});
    const Matrix same = gaussian_kernel_matrix(column({2.5}), column({2.5}), multi);
    CHECK(same(0, 0) == 1.0);
  }

  TEST_CASE("kernel: K(A,B) is the transpose of K(B,A)") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t d = testing::uniform_int(rng, 1, 5);
      const Matrix a = testing::random_matrix(rng, testing::uniform_int(rng, 1, 7), d);
      const Matrix b = testing::random_matrix(rng, testing::uniform_int(rng, 1, 7), d);
      const auto spec = trial % 2 ? KernelSpec::median() : KernelSpec::fixed({0.7, 2.0});
      const Matrix ab = gaussian_kernel_matrix(a, b, spec);
      const Matrix ba = gaussian_kernel_matrix(b, a, spec);
      for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) CHECK(ab(i, j) == doctest::Approx(ba(j, i)).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("median heuristic: pooled pairwise distance median times multipliers") {
    KernelSpec spec = KernelSpec::median();
    // pooled points 0, 1, 3: distances 1, 3, 2 -> median 2
    const auto sigmas = resolve_bandwidths(column({0.0, 1.0}), column({3.0}), spec);
    CHECK(sigmas == std::vector<double>{0.5, 1.0, 2.0, 4.0, 8.0});
    // all points equal: median 0 falls back to 1
    const auto zero = resolve_bandwidths(column({4.0, 4.0}), column({4.0}), spec);
    CHECK(zero == std::vector<double>{0.25, 0.5, 1.0, 2.0, 4.0});
    CHECK_THROWS_AS(resolve_bandwidths(column({0.0}), column({1.0}), KernelSpec::fixed({})), ConfigError);
  }

  TEST_CASE("mmd: A={0}, B={1}, sigma=1 gives 2 - 2 exp(-1/2)") {
    const auto l = mmd_squared(column({0.0}), column({1.0}), KernelSpec::fixed({1.0}));
    CHECK(std::abs(l.value - 0.78694) <= 1e-5);
    CHECK(l.value == doctest::Approx(0.786938680574733).epsilon(1e-14));
  }

  TEST_CASE("mmd: symmetric, non-negative, zero exactly on identical multisets (100 random batches)") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t d = testing::uniform_int(rng, 1, 5);
      const std::size_t n = testing::uniform_int(rng, 1, 8);
      const Matrix a = testing::random_matrix(rng, n, d);
      const Matrix b = testing::random_matrix(rng, testing::uniform_int(rng, 1, 8), d);
      const auto spec = trial % 2 ? KernelSpec::median() : KernelSpec::fixed({0.5, 1.0, 2.0});
      const double ab = mmd_squared(a, b, spec).value;
      const double ba = mmd_squared(b, a, spec).value;
      CHECK(ab >= 0.0);
      CHECK(ab > 1e-12);
      CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
      CHECK(std::abs(mmd_squared(a, shuffled_rows(a, rng), spec).value) <= 1e-12);
      // permuting rows within each batch leaves the value unchanged
      CHECK(mmd_squared(shuffled_rows(a, rng), shuffled_rows(b, rng), spec).value ==
            doctest::Approx(ab).epsilon(1e-12));
    }
  }

  TEST_CASE("mmd: gradients match central differences") {
    std::mt19937_64 rng(3);
    const auto spec = KernelSpec::fixed({0.8, 1.5, 3.0});
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t d = testing::uniform_int(rng, 1, 5);
      Matrix a = testing::random_matrix(rng, testing::uniform_int(rng, 1, 8), d);
      Matrix b = testing::random_matrix(rng, testing::uniform_int(rng, 1, 8), d, 1.5);
      const auto l = mmd_squared(a, b, spec);
      const auto ga = numeric_grad(a, [&] { return mmd_squared(a, b, spec).value; });
      const auto gb = numeric_grad(b, [&] { return mmd_squared(a, b, spec).value; });
      CHECK(testing::relative_error(l.grad_a.data, ga) < 1e-5);
      CHECK(testing::relative_error(l.grad_b.data, gb) < 1e-5);
    }
  }

  TEST_CASE("coral: unit-variance vs variance-2 in one dimension gives 0.25") {
    const auto l = coral_loss(column({-1.0, 0.0, 1.0}), column({0.0, 2.0}));
    CHECK(std::abs(l.value - 0.25) <= 1e-10);
    CHECK(coral_loss(column({0.0, 2.0}), column({-1.0, 0.0, 1.0})).value == l.value);
    CHECK_THROWS_AS(coral_loss(column({1.0}), column({0.0, 2.0})), ShapeError);
  }

  TEST_CASE("coral: zero on identical batches, shift invariant, symmetric (100 random batches)") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t d = testing::uniform_int(rng, 1, 5);
      Matrix a = testing::random_matrix(rng, testing::uniform_int(rng, 2, 8), d);
      Matrix b = testing::random_matrix(rng, testing::uniform_int(rng, 2, 8), d, 2.0);
      const double v = coral_loss(a, b).value;
      CHECK(v >= 0.0);
      CHECK(coral_loss(b, a).value == doctest::Approx(v).epsilon(1e-12));
      CHECK(coral_loss(a, a).value == 0.0);
      std::vector<double> shift(d);
      for (double& s : shift) s = std::normal_distribution<double>(0.0, 5.0)(rng);
      for (std::size_t r = 0; r < a.rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) a(r, c) += shift[c];
      }
      for (std::size_t r = 0; r < b.rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) b(r, c) += shift[c];
      }
      CHECK(coral_loss(a, b).value == doctest::Approx(v).epsilon(1e-9));
    }
  }

  TEST_CASE("coral: gradients match central differences") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t d = testing::uniform_int(rng, 1, 5);
      Matrix a = testing::random_matrix(rng, testing::uniform_int(rng, 2, 8), d);
      Matrix b = testing::random_matrix(rng, testing::uniform_int(rng, 2, 8), d, 1.7);
      const auto l = coral_loss(a, b);
      const auto ga = numeric_grad(a, [&] { return coral_loss(a, b).value; });
      const auto gb = numeric_grad(b, [&] { return coral_loss(a, b).value; });
      CHECK(testing::relative_error(l.grad_a.data, ga) < 1e-5);
      CHECK(testing::relative_error(l.grad_b.data, gb) < 1e-5);
    }
  }

  TEST_CASE("adversarial: constant discriminator at 0.5 gives 2 log 0.5") {
    std::mt19937_64 rng(6);
    const auto d = Discriminator::zeros(3, 4);
    const auto l = pairwise_adversarial_loss(testing::random_matrix(rng, 5, 3), testing::random_matrix(rng, 2, 3), d);
    CHECK(l.features.value == doctest::Approx(-1.3862943611198906).epsilon(1e-14));
  }

  TEST_CASE("adversarial: identical batches never exceed 2 log 0.5") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix a = testing::random_matrix(rng, testing::uniform_int(rng, 1, 8), 4);
      const auto d = Discriminator::init(4, 6, rng());
      CHECK(pairwise_adversarial_loss(a, a, d).features.value <= 2.0 * std::log(0.5) + 1e-12);
    }
  }

  TEST_CASE("adversarial: a trained discriminator on separable batches approaches 0 from below") {
    Matrix a(8, 2), b(8, 2);
    for (std::size_t r = 0; r < 8; ++r) {
      a(r, 0) = 2.0 + 0.1 * static_cast<double>(r);
      b(r, 0) = -2.0 - 0.1 * static_cast<double>(r);
      a(r, 1) = b(r, 1) = 0.05 * static_cast<double>(r);
    }
    auto d = Discriminator::init(2, 8, 3);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 3000; ++step) {
      const auto l = pairwise_adversarial_loss(a, b, d);
      if (step == 0) first = l.features.value;
      last = l.features.value;
      for (std::size_t i = 0; i < d.w1.size(); ++i) d.w1[i] += 0.5 * l.grad.w1[i];
      for (std::size_t i = 0; i < d.b1.size(); ++i) d.b1[i] += 0.5 * l.grad.b1[i];
      for (std::size_t i = 0; i < d.w2.size(); ++i) d.w2[i] += 0.5 * l.grad.w2[i];
      d.b2 += 0.5 * l.grad.b2;
    }
    CHECK(last > first);
    CHECK(last < 0.0);
    CHECK(last > -0.02);
  }

  TEST_CASE("adversarial: feature and discriminator gradients match central differences") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix a = testing::random_matrix(rng, testing::uniform_int(rng, 1, 6), 3);
      Matrix b = testing::random_matrix(rng, testing::uniform_int(rng, 1, 6), 3);
      auto d = Discriminator::init(3, 5, rng());
      const auto l = pairwise_adversarial_loss(a, b, d);
      auto f = [&] { return pairwise_adversarial_loss(a, b, d).features.value; };
      CHECK(testing::relative_error(l.features.grad_a.data, numeric_grad(a, f)) < 1e-5);
      CHECK(testing::relative_error(l.features.grad_b.data, numeric_grad(b, f)) < 1e-5);
      Matrix w1(1, d.w1.size());
      w1.data = d.w1;
      const auto gw1 = numeric_grad(w1, [&] {
        auto copy = d;
        copy.w1 = w1.data;
        return pairwise_adversarial_loss(a, b, copy).features.value;
      });
      CHECK(testing::relative_error(l.grad.w1, gw1) < 1e-5);
      const double h = 1e-6;
      auto up = d, down = d;
      up.b2 += h;
      down.b2 -= h;
      const double gb2 = (pairwise_adversarial_loss(a, b, up).features.value -
                          pairwise_adversarial_loss(a, b, down).features.value) / (2 * h);
      CHECK(l.grad.b2 == doctest::Approx(gb2).epsilon(1e-6));
    }
  }

  TEST_CASE("pairwise_average: K=2 is the single pair, K=3 averages three pairs") {
    CHECK(pairwise_average(2, [](std::size_t, std::size_t) { return 0.37; }) == 0.37);
    const double table[3][3] = {{0, 0.1, 0.2}, {0, 0, 0.3}, {0, 0, 0}};
    CHECK(pairwise_average(3, [&](std::size_t i, std::size_t j) { return table[i][j]; }) ==
          doctest::Approx(0.2).epsilon(1e-15));
    CHECK_THROWS_AS(pairwise_average(1, [](std::size_t, std::size_t) { return 0.0; }), ConfigError);
  }

  TEST_CASE("pair_index enumerates (0,1),(0,2),...,(1,2),...") {
    for (std::size_t k = 2; k <= 6; ++k) {
      std::size_t expect = 0;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) CHECK(pair_index(i, j, k) == expect++);
      }
    }
  }

  TEST_CASE("pairwise_distance: K=2 equals one mmd call; K=3 is the mean of pairwise mmd") {
    std::mt19937_64 rng(9);
    const auto spec = KernelSpec::fixed({1.0, 2.0});
    std::vector<Matrix> batches;
    for (int k = 0; k < 3; ++k) batches.push_back(testing::random_matrix(rng, 5, 3, 1.0 + k));
    const auto two = pairwise_distance(std::span<const Matrix>(batches.data(), 2), DistanceKind::kMmd, spec);
    const auto single = mmd_squared(batches[0], batches[1], spec);
    CHECK(two.value == single.value);
    CHECK(two.grads[0].data == single.grad_a.data);

    const auto three = pairwise_distance(batches, DistanceKind::kMmd, spec);
    const double oracle = (mmd_squared(batches[0], batches[1], spec).value + mmd_squared(batches[0], batches[2], spec).value +
                           mmd_squared(batches[1], batches[2], spec).value) / 3.0;
    CHECK(three.value == doctest::Approx(oracle).epsilon(1e-14));
  }

  TEST_CASE("pairwise_distance: identical batches give 0 for mmd and coral") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix a = testing::random_matrix(rng, testing::uniform_int(rng, 2, 6), testing::uniform_int(rng, 1, 4));
      const std::vector<Matrix> same(testing::uniform_int(rng, 2, 4), a);
      CHECK(std::abs(pairwise_distance(same, DistanceKind::kMmd, KernelSpec::median()).value) <= 1e-12);
      CHECK(pairwise_distance(same, DistanceKind::kCoral, KernelSpec::median()).value == 0.0);
    }
  }

  TEST_CASE("pairwise_distance: gradients of the averaged loss match central differences") {
    std::mt19937_64 rng(11);
    const auto spec = KernelSpec::fixed({1.0});
    for (auto kind : {DistanceKind::kMmd, DistanceKind::kCoral, DistanceKind::kAdversarial}) {
      std::vector<Matrix> batches;
      for (int k = 0; k < 3; ++k) batches.push_back(testing::random_matrix(rng, 4, 3, 1.0 + 0.5 * k));
      std::vector<Discriminator> discs;
      for (int p = 0; p < 3; ++p) discs.push_back(Discriminator::init(3, 4, 50 + p));
      const auto l = pairwise_distance(batches, kind, spec, discs);
      for (std::size_t k = 0; k < 3; ++k) {
        const auto g = numeric_grad(batches[k], [&] { return pairwise_distance(batches, kind, spec, discs).value; });
        CHECK(testing::relative_error(l.grads[k].data, g) < 1e-5);
      }
    }
  }

  TEST_CASE("distances are deterministic and validate shapes") {
    std::mt19937_64 rng(12);
    const Matrix a = testing::random_matrix(rng, 4, 3), b = testing::random_matrix(rng, 5, 3);
    const auto d = Discriminator::init(3, 4, 1);
    CHECK(mmd_squared(a, b, KernelSpec::median()).value == mmd_squared(a, b, KernelSpec::median()).value);
    CHECK(coral_loss(a, b).grad_a.data == coral_loss(a, b).grad_a.data);
    CHECK(pairwise_adversarial_loss(a, b, d).features.value == pairwise_adversarial_loss(a, b, d).features.value);
    CHECK_THROWS_AS(mmd_squared(a, testing::random_matrix(rng, 2, 2), KernelSpec::median()), ShapeError);
    CHECK_THROWS_AS(pairwise_distance(std::vector<Matrix>{a, b}, DistanceKind::kAdversarial, KernelSpec::median()),
                    ConfigError);
    CHECK(distance_kind_from_string("dann") == DistanceKind::kAdversarial);
    CHECK(distance_kind_from_string(to_string(DistanceKind::kCoral)) == DistanceKind::kCoral);
    CHECK_THROWS_AS(distance_kind_from_string("cosine"), ConfigError);
  }
}
