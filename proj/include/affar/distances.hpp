#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "affar/matrix.hpp"

// Distribution distances between feature batches (rows = samples). Every loss
// returns its value together with the exact gradient w.r.t. both batches.
namespace affar {

using FeatureBatch = Matrix;

enum class DistanceKind { kMmd, kCoral, kAdversarial };

std::string to_string(DistanceKind kind);
DistanceKind distance_kind_from_string(const std::string& name);

// Gaussian kernel averaged over several bandwidths. With `median_heuristic`
// the bandwidths are `multipliers` times the median pairwise distance of the
// pooled batch, treated as constants (no gradient).
struct KernelSpec {
  std::vector<double> bandwidths;
  bool median_heuristic = true;
  std::vector<double> multipliers{0.25, 0.5, 1.0, 2.0, 4.0};

  static KernelSpec fixed(std::vector<double> sigmas);
  static KernelSpec median();
};

std::vector<double> resolve_bandwidths(const FeatureBatch& a, const FeatureBatch& b, const KernelSpec& spec);

Matrix gaussian_kernel_matrix(const FeatureBatch& a, const FeatureBatch& b, const KernelSpec& spec);

struct PairLoss {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

// Biased (V-statistic) squared MMD: mean K_aa - 2 mean K_ab + mean K_bb.
PairLoss mmd_squared(const FeatureBatch& a, const FeatureBatch& b, const KernelSpec& spec);

// ||C_a - C_b||_F^2 / (4 d^2) with unbiased sample covariances.
PairLoss coral_loss(const FeatureBatch& a, const FeatureBatch& b);

// Two-layer feed-forward domain discriminator: sigmoid(w2 . relu(W1 x + b1) + b2).
struct Discriminator {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::vector<double> w1;  // hidden x input
  std::vector<double> b1;
  std::vector<double> w2;  // hidden
  double b2 = 0.0;

  static Discriminator zeros(std::size_t input, std::size_t hidden);
  static Discriminator init(std::size_t input, std::size_t hidden, std::uint64_t seed);

  double probability(std::span<const double> x) const;
  std::size_t size() const { return w1.size() + b1.size() + w2.size() + 1; }
};

struct AdversarialLoss {
  PairLoss features;
  Discriminator grad;  // gradient of the loss w.r.t. the discriminator
};

// mean log D(a) + mean log(1 - D(b)), probabilities clamped to [1e-7, 1-1e-7].
// Feature gradients descend this value; the caller ascends `grad` so the
// discriminator keeps maximizing it (gradient reversal).
AdversarialLoss pairwise_adversarial_loss(const FeatureBatch& a, const FeatureBatch& b, const Discriminator& d);

// Mean of loss_fn(i, j) over all unordered pairs i < j of `k` items.
double pairwise_average(std::size_t k, const std::function<double(std::size_t, std::size_t)>& loss_fn);

// Index of the discriminator for unordered pair (i, j), i < j, in row order.
std::size_t pair_index(std::size_t i, std::size_t j, std::size_t k);

struct PairwiseLoss {
  double value = 0.0;
  std::vector<Matrix> grads;                 // one per input batch
  std::vector<Discriminator> disc_grads;     // adversarial kind only
};

// Pairwise-averaged distance over K batches. `discriminators` must hold
// K(K-1)/2 entries when kind is adversarial.
PairwiseLoss pairwise_distance(std::span<const FeatureBatch> batches, DistanceKind kind, const KernelSpec& spec,
                               std::span<const Discriminator> discriminators = {});

}  // namespace affar
