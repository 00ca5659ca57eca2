#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "affar/layers.hpp"
#include "affar/matrix.hpp"

namespace affar {

// Architecture of the fused model. The input window is treated as a
// 1 x channels x timesteps image.
struct ModelConfig {
  std::size_t channels = 0;
  std::size_t timesteps = 0;
  std::size_t num_domains = 0;
  std::size_t num_classes = 0;
  std::size_t conv1_filters = 16;
  std::size_t conv1_kernel = 6;
  std::size_t conv2_filters = 32;
  std::size_t conv2_kernel = 9;
  std::size_t pool = 2;
  std::size_t branch_width = 128;
  std::size_t domain_hidden = 64;

  void validate() const;

  layers::ConvShape conv1() const;
  layers::ConvShape conv2() const;
  // Length of the flattened shared feature e.
  std::size_t feature_length() const;

  bool operator==(const ModelConfig&) const = default;
};

std::string describe(const ModelConfig& config);

struct ParamGroup {
  std::string name;
  std::vector<double> values;
};

// All learnable parameters in a fixed group order:
//   conv1.w conv1.b conv2.w conv2.b {branchK.w branchK.b}... domain.fc1.w
//   domain.fc1.b domain.fc2.w domain.fc2.b classifier.w classifier.b
// The same type holds gradients.
class ModelParams {
 public:
  static ModelParams zeros(const ModelConfig& config);
  // Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::size_t size() const;

  std::span<double> conv1_w() { return groups_[0].values; }
  std::span<double> conv1_b() { return groups_[1].values; }
  std::span<double> conv2_w() { return groups_[2].values; }
  std::span<double> conv2_b() { return groups_[3].values; }
  std::span<double> branch_w(std::size_t k) { return groups_[4 + 2 * k].values; }
  std::span<double> branch_b(std::size_t k) { return groups_[5 + 2 * k].values; }
  std::span<double> domain_w1() { return groups_[tail() + 0].values; }
  std::span<double> domain_b1() { return groups_[tail() + 1].values; }
  std::span<double> domain_w2() { return groups_[tail() + 2].values; }
  std::span<double> domain_b2() { return groups_[tail() + 3].values; }
  std::span<double> classifier_w() { return groups_[tail() + 4].values; }
  std::span<double> classifier_b() { return groups_[tail() + 5].values; }

  std::span<const double> conv1_w() const { return groups_[0].values; }
  std::span<const double> conv1_b() const { return groups_[1].values; }
  std::span<const double> conv2_w() const { return groups_[2].values; }
  std::span<const double> conv2_b() const { return groups_[3].values; }
  std::span<const double> branch_w(std::size_t k) const { return groups_[4 + 2 * k].values; }
  std::span<const double> branch_b(std::size_t k) const { return groups_[5 + 2 * k].values; }
  std::span<const double> domain_w1() const { return groups_[tail() + 0].values; }
  std::span<const double> domain_b1() const { return groups_[tail() + 1].values; }
  std::span<const double> domain_w2() const { return groups_[tail() + 2].values; }
  std::span<const double> domain_b2() const { return groups_[tail() + 3].values; }
  std::span<const double> classifier_w() const { return groups_[tail() + 4].values; }
  std::span<const double> classifier_b() const { return groups_[tail() + 5].values; }

  void set_zero();
  bool all_finite() const;
  bool operator==(const ModelParams&) const;

 private:
  std::size_t tail() const { return 4 + 2 * config_.num_domains; }
  ModelConfig config_;
  std::vector<ParamGroup> groups_;
};

enum class Mode { kTrain, kInfer };

// Lower bound applied to fusion weights before renormalization.
inline constexpr double kMinFusionWeight = 1e-7;

struct ForwardTrace {
  Mode mode = Mode::kInfer;

  // Backward caches (train mode only).
  std::vector<double> input;
  std::vector<double> conv1_pre;
  std::vector<double> pool1_out;
  std::vector<std::size_t> pool1_argmax;
  std::vector<double> conv2_pre;
  std::vector<std::size_t> pool2_argmax;
  std::vector<std::vector<double>> branch_pre;
  std::vector<double> domain_hidden_pre;
  std::vector<double> domain_softmax;

  std::vector<double> shared;                        // e = f_e(x)
  std::vector<std::vector<double>> branch_features;  // f_k(e)
  std::vector<double> domain_logits;
  std::vector<double> weights;  // fusion weights on the simplex
  bool weights_detached = false;
  std::vector<double> fused;  // z
  std::vector<double> class_logits;
  std::vector<double> class_probs;
};

struct ForwardOptions {
  Mode mode = Mode::kInfer;
  // When set, these weights replace the predicted ones and are treated as
  // constants (no gradient reaches the domain classifier through fusion).
  std::optional<std::vector<double>> fixed_weights;
};

// e = flatten(pool(relu(conv2(pool(relu(conv1(x)))))))
std::vector<double> extract(const Matrix& x, const ModelParams& params);
// f_k(e) = relu(W_k e + b_k)
std::vector<double> branch(std::span<const double> shared, std::size_t k, const ModelParams& params);

struct DomainWeights {
  std::vector<double> logits;
  std::vector<double> weights;
};
DomainWeights domain_weights(std::span<const double> shared, const ModelParams& params);

// Softmax probabilities floored at kMinFusionWeight and renormalized.
std::vector<double> clamp_to_simplex(std::span<const double> probs);

// z = sum_k w_k f_k.
std::vector<double> fuse(std::span<const std::vector<double>> branch_features, std::span<const double> weights);

ForwardTrace forward(const Matrix& x, const ModelParams& params, const ForwardOptions& options = {});

// Loss gradients arriving at the model outputs. Empty vectors mean zero.
struct Upstream {
  std::vector<double> d_class_probs;
  std::vector<double> d_domain_logits;
  std::vector<std::vector<double>> d_branch;  // per branch, d_f each (or empty)
};

// Accumulates d loss / d params into `grads`.
void backward(const ForwardTrace& trace, const Upstream& upstream, const ModelParams& params, ModelParams& grads);

// "DGM1" container: version, ModelConfig, then the parameter groups in order.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);
// Throws ConfigMismatchError when the stored config differs from `expected`.
ModelParams load_params(const std::string& path, const ModelConfig& expected);

}  // namespace affar
