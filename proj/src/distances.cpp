#include "affar/distances.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "affar/error.hpp"

namespace affar {
namespace {

void check_batches(const FeatureBatch& a, const FeatureBatch& b, const char* op) {
  if (a.cols != b.cols) {
    throw ShapeError(std::string(op) + ": feature dimension mismatch (" + std::to_string(a.cols) + " vs " +
                     std::to_string(b.cols) + ")");
  }
  if (a.rows == 0 || b.rows == 0) throw ShapeError(std::string(op) + ": empty batch");
}

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

// Kernel value and d k(x,y) / d ||x-y||^2 for the averaged multi-bandwidth kernel.
struct KernelEval {
  double value;
  double dsq;
};

KernelEval eval_kernel(double sq, std::span<const double> sigmas) {
  KernelEval out{0.0, 0.0};
  for (double s : sigmas) {
    const double inv = 1.0 / (2.0 * s * s);
    const double e = std::exp(-sq * inv);
    out.value += e;
    out.dsq -= e * inv;
  }
  const double n = static_cast<double>(sigmas.size());
  out.value /= n;
  out.dsq /= n;
  return out;
}

Matrix covariance(const FeatureBatch& x, Matrix& centered) {
  const std::size_t n = x.rows, d = x.cols;
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += x(r, c);
  }
  for (double& m : mean) m /= static_cast<double>(n);
  centered = Matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) centered(r, c) = x(r, c) - mean[c];
  }
  Matrix cov(d, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = centered(r, i);
      for (std::size_t j = 0; j < d; ++j) cov(i, j) += ci * centered(r, j);
    }
  }
  for (double& v : cov.data) v /= static_cast<double>(n - 1);
  return cov;
}

double sigmoid(double s) { return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s)); }

}  // namespace

std::string to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::kMmd: return "mmd";
    case DistanceKind::kCoral: return "coral";
    case DistanceKind::kAdversarial: return "adversarial";
  }
  return "unknown";
}

DistanceKind distance_kind_from_string(const std::string& name) {
  if (name == "mmd") return DistanceKind::kMmd;
  if (name == "coral") return DistanceKind::kCoral;
  if (name == "adversarial" || name == "dann") return DistanceKind::kAdversarial;
  throw ConfigError("unknown distance kind '" + name + "'");
}

KernelSpec KernelSpec::fixed(std::vector<double> sigmas) {
  for (double s : sigmas) {
    if (!(s > 0.0)) throw ConfigError("kernel bandwidths must be positive");
  }
  if (sigmas.empty()) throw ConfigError("kernel needs at least one bandwidth");
  KernelSpec spec;
  spec.bandwidths = std::move(sigmas);
  spec.median_heuristic = false;
  return spec;
}

KernelSpec KernelSpec::median() { return KernelSpec{}; }

std::vector<double> resolve_bandwidths(const FeatureBatch& a, const FeatureBatch& b, const KernelSpec& spec) {
  if (!spec.median_heuristic) {
    if (spec.bandwidths.empty()) throw ConfigError("kernel needs at least one bandwidth");
    return spec.bandwidths;
  }
  std::vector<const FeatureBatch*> parts{&a, &b};
  std::vector<std::span<const double>> rows;
  for (const auto* p : parts) {
    for (std::size_t r = 0; r < p->rows; ++r) rows.push_back(p->row(r));
  }
  std::vector<double> dists;
  dists.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) dists.push_back(std::sqrt(squared_distance(rows[i], rows[j])));
  }
  double base = 1.0;
  if (!dists.empty()) {
    std::sort(dists.begin(), dists.end());
    const std::size_t m = dists.size() / 2;
    base = dists.size() % 2 ? dists[m] : 0.5 * (dists[m - 1] + dists[m]);
    if (!(base > 0.0)) base = 1.0;
  }
  std::vector<double> out;
  for (double mult : spec.multipliers) out.push_back(base * mult);
  return out;
}

Matrix gaussian_kernel_matrix(const FeatureBatch& a, const FeatureBatch& b, const KernelSpec& spec) {
  check_batches(a, b, "gaussian_kernel_matrix");
  const auto sigmas = resolve_bandwidths(a, b, spec);
  Matrix k(a.rows, b.rows);
  for (std::size_t p = 0; p < a.rows; ++p) {
    for (std::size_t q = 0; q < b.rows; ++q) k(p, q) = eval_kernel(squared_distance(a.row(p), b.row(q)), sigmas).value;
  }
  return k;
}

PairLoss mmd_squared(const FeatureBatch& a, const FeatureBatch& b, const KernelSpec& spec) {
  check_batches(a, b, "mmd_squared");
  const auto sigmas = resolve_bandwidths(a, b, spec);
  const std::size_t d = a.cols;
  PairLoss out{0.0, Matrix(a.rows, d), Matrix(b.rows, d)};

  // Accumulates weight * k(x,y) and the gradient of that term w.r.t. x (and,
  // by symmetry of the kernel, the negated gradient w.r.t. y).
  auto block = [&](const FeatureBatch& x, const FeatureBatch& y, Matrix& gx, Matrix& gy, double weight) {
    double sum = 0.0;
    for (std::size_t p = 0; p < x.rows; ++p) {
      for (std::size_t q = 0; q < y.rows; ++q) {
        const auto xr = x.row(p);
        const auto yr = y.row(q);
        const auto k = eval_kernel(squared_distance(xr, yr), sigmas);
        sum += k.value;
        const double g = weight * 2.0 * k.dsq;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = g * (xr[c] - yr[c]);
          gx(p, c) += diff;
          gy(q, c) -= diff;
        }
      }
    }
    return weight * sum;
  };
  const double na = static_cast<double>(a.rows), nb = static_cast<double>(b.rows);
  double value = 0.0;
  value += block(a, a, out.grad_a, out.grad_a, 1.0 / (na * na));
  value += block(a, b, out.grad_a, out.grad_b, -2.0 / (na * nb));
  value += block(b, b, out.grad_b, out.grad_b, 1.0 / (nb * nb));
  out.value = std::max(value, 0.0);
  return out;
}

PairLoss coral_loss(const FeatureBatch& a, const FeatureBatch& b) {
  check_batches(a, b, "coral_loss");
  if (a.rows < 2 || b.rows < 2) throw ShapeError("coral_loss: covariance needs at least 2 samples per batch");
  const std::size_t d = a.cols;
  Matrix ca_centered, cb_centered;
  const Matrix ca = covariance(a, ca_centered);
  const Matrix cb = covariance(b, cb_centered);
  const double scale = 1.0 / (4.0 * static_cast<double>(d * d));
  Matrix diff(d, d);
  double sq = 0.0;
  for (std::size_t i = 0; i < d * d; ++i) {
    diff.data[i] = ca.data[i] - cb.data[i];
    sq += diff.data[i] * diff.data[i];
  }
  PairLoss out{scale * sq, Matrix(a.rows, d), Matrix(b.rows, d)};
  // dL/dC = 2 scale (C_a - C_b); dC/dX = 2/(n-1) (X - mean) G for symmetric G.
  auto project = [&](const Matrix& centered, Matrix& grad, double sign) {
    const double f = sign * 2.0 * scale * 2.0 / static_cast<double>(centered.rows - 1);
    for (std::size_t r = 0; r < centered.rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += centered(r, i) * diff(i, j);
        grad(r, j) = f * s;
      }
    }
  };
  project(ca_centered, out.grad_a, 1.0);
  project(cb_centered, out.grad_b, -1.0);
  return out;
}

Discriminator Discriminator::zeros(std::size_t input, std::size_t hidden) {
  Discriminator d;
  d.input = input;
  d.hidden = hidden;
  d.w1.assign(hidden * input, 0.0);
  d.b1.assign(hidden, 0.0);
  d.w2.assign(hidden, 0.0);
  return d;
}

Discriminator Discriminator::init(std::size_t input, std::size_t hidden, std::uint64_t seed) {
  Discriminator d = zeros(input, hidden);
  std::mt19937_64 rng(seed);
  const double r1 = std::sqrt(6.0 / static_cast<double>(input + hidden));
  const double r2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
  std::uniform_real_distribution<double> u1(-r1, r1), u2(-r2, r2);
  for (double& v : d.w1) v = u1(rng);
  for (double& v : d.w2) v = u2(rng);
  return d;
}

double Discriminator::probability(std::span<const double> x) const {
  double s = b2;
  for (std::size_t h = 0; h < hidden; ++h) {
    double pre = b1[h];
    for (std::size_t i = 0; i < input; ++i) pre += w1[h * input + i] * x[i];
    if (pre > 0.0) s += w2[h] * pre;
  }
  return sigmoid(s);
}

AdversarialLoss pairwise_adversarial_loss(const FeatureBatch& a, const FeatureBatch& b, const Discriminator& d) {
  check_batches(a, b, "pairwise_adversarial_loss");
  if (a.cols != d.input) throw ShapeError("pairwise_adversarial_loss: discriminator input width mismatch");
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  AdversarialLoss out{{0.0, Matrix(a.rows, a.cols), Matrix(b.rows, b.cols)}, Discriminator::zeros(d.input, d.hidden)};
  std::vector<double> pre(d.hidden);

  // `positive` selects log D(x) (true) or log(1 - D(x)) (false).
  auto run = [&](const FeatureBatch& x, Matrix& gx, bool positive) {
    const double inv_n = 1.0 / static_cast<double>(x.rows);
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto row = x.row(r);
      double s = d.b2;
      for (std::size_t h = 0; h < d.hidden; ++h) {
        pre[h] = d.b1[h];
        for (std::size_t i = 0; i < d.input; ++i) pre[h] += d.w1[h * d.input + i] * row[i];
        if (pre[h] > 0.0) s += d.w2[h] * pre[h];
      }
      const double p = sigmoid(s);
      const double pc = std::clamp(p, kLo, kHi);
      total += positive ? std::log(pc) : std::log(1.0 - pc);
      if (p <= kLo || p >= kHi) continue;  // clamp is flat here
      const double ds = inv_n * (positive ? (1.0 - p) : -p);
      out.grad.b2 += ds;
      for (std::size_t h = 0; h < d.hidden; ++h) {
        if (pre[h] <= 0.0) continue;
        out.grad.w2[h] += ds * pre[h];
        const double dpre = ds * d.w2[h];
        out.grad.b1[h] += dpre;
        for (std::size_t i = 0; i < d.input; ++i) {
          out.grad.w1[h * d.input + i] += dpre * row[i];
          gx(r, i) += dpre * d.w1[h * d.input + i];
        }
      }
    }
    return total * inv_n;
  };
  out.features.value = run(a, out.features.grad_a, true) + run(b, out.features.grad_b, false);
  return out;
}

double pairwise_average(std::size_t k, const std::function<double(std::size_t, std::size_t)>& loss_fn) {
  if (k < 2) throw ConfigError("pairwise_average needs at least 2 domains");
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) sum += loss_fn(i, j);
  }
  return sum / static_cast<double>(k * (k - 1) / 2);
}

std::size_t pair_index(std::size_t i, std::size_t j, std::size_t k) {
  // Pairs enumerated (0,1),(0,2),...,(0,k-1),(1,2),...
  return i * k - i * (i + 1) / 2 + (j - i - 1);
}

PairwiseLoss pairwise_distance(std::span<const FeatureBatch> batches, DistanceKind kind, const KernelSpec& spec,
                               std::span<const Discriminator> discriminators) {
  const std::size_t k = batches.size();
  if (k < 2) throw ConfigError("pairwise_distance needs at least 2 batches");
  const std::size_t pairs = k * (k - 1) / 2;
  if (kind == DistanceKind::kAdversarial && discriminators.size() != pairs) {
    throw ConfigError("adversarial distance needs K(K-1)/2 discriminators");
  }
  PairwiseLoss out;
  for (const auto& b : batches) out.grads.emplace_back(b.rows, b.cols);
  if (kind == DistanceKind::kAdversarial) {
    for (const auto& d : discriminators) out.disc_grads.push_back(Discriminator::zeros(d.input, d.hidden));
  }
  auto add = [](Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
  };
  out.value = pairwise_average(k, [&](std::size_t i, std::size_t j) {
    PairLoss pl;
    switch (kind) {
      case DistanceKind::kMmd: pl = mmd_squared(batches[i], batches[j], spec); break;
      case DistanceKind::kCoral: pl = coral_loss(batches[i], batches[j]); break;
      case DistanceKind::kAdversarial: {
        const std::size_t p = pair_index(i, j, k);
        auto adv = pairwise_adversarial_loss(batches[i], batches[j], discriminators[p]);
        auto& g = out.disc_grads[p];
        for (std::size_t n = 0; n < g.w1.size(); ++n) g.w1[n] += adv.grad.w1[n];
        for (std::size_t n = 0; n < g.b1.size(); ++n) g.b1[n] += adv.grad.b1[n];
        for (std::size_t n = 0; n < g.w2.size(); ++n) g.w2[n] += adv.grad.w2[n];
        g.b2 += adv.grad.b2;
        pl = std::move(adv.features);
        break;
      }
    }
    add(out.grads[i], pl.grad_a);
    add(out.grads[j], pl.grad_b);
    return pl.value;
  });
  const double inv = 1.0 / static_cast<double>(pairs);
  for (auto& g : out.grads) {
    for (double& v : g.data) v *= inv;
  }
  for (auto& g : out.disc_grads) {
    for (double& v : g.w1) v *= inv;
    for (double& v : g.b1) v *= inv;
    for (double& v : g.w2) v *= inv;
    g.b2 *= inv;
  }
  return out;
}

}  // namespace affar
