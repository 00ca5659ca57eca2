#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "affar/data.hpp"
#include "affar/distances.hpp"
#include "affar/network.hpp"

namespace affar {

enum class Baseline { kAffar, kErm };

// Which validation score picks the best epoch.
enum class Selection { kWeightedF1, kValidationLoss };

struct TrainConfig {
  double lambda = 1.0;  // weight of the domain-specific loss
  double beta = 1.0;    // weight of the domain-invariant loss
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 128;  // split equally across the K training domains
  std::size_t max_epochs = 500;
  std::size_t patience = 30;
  DistanceKind distance = DistanceKind::kMmd;
  KernelSpec kernel = KernelSpec::median();
  std::uint64_t seed = 0;
  Baseline baseline = Baseline::kAffar;
  // Fuse with the one-hot true domain during training instead of predicted weights.
  bool fusion_teacher = false;
  std::size_t discriminator_hidden = 64;
  Selection selection = Selection::kWeightedF1;

  void validate(std::size_t num_domains) const;
  double effective_lambda() const { return baseline == Baseline::kErm ? 0.0 : lambda; }
  double effective_beta() const { return baseline == Baseline::kErm ? 0.0 : beta; }
};

struct LossBreakdown {
  double l_cls = 0.0;
  double l_dsr = 0.0;
  double l_dir = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown losses;   // mean over the epoch's steps
  double val_weighted_f1 = 0.0;
  double val_score = 0.0;  // the selection criterion (higher is better)
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_weighted_f1 = 0.0;
  std::string stop_reason;

  // One JSON object per line: epoch, l_cls, l_dsr, l_dir, total, val_weighted_f1, seconds.
  void write_jsonl(const std::string& path) const;
  static TrainLog read_jsonl(const std::string& path);
};

// Loss value with its gradient w.r.t. the rows of the input matrix.
struct LossGrad {
  double value = 0.0;
  Matrix grad;
};

// Mean -log p(true class) over all rows; probabilities clamped at 1e-12.
LossGrad classification_loss(const Matrix& probs, std::span<const int> labels);

// Per-domain mean cross-entropy of the domain classifier, averaged over the
// K domains present. Gradient is w.r.t. the logits.
LossGrad domain_specific_loss(const Matrix& logits, std::span<const int> domains);

// Pairwise-averaged distance between per-domain branch embeddings.
PairwiseLoss domain_invariant_loss(std::span<const Matrix> branch_features, DistanceKind kind,
                                   const KernelSpec& spec, std::span<const Discriminator> discriminators = {});

// A mini-batch: equal-size sub-batches, sub_batches[k] taken from domain k.
struct Batch {
  std::vector<std::vector<const SensorWindow*>> sub_batches;
};

struct TotalLoss {
  LossBreakdown losses;
  ModelParams grads;
  std::vector<Discriminator> disc_grads;  // adversarial kind only
};

TotalLoss total_loss(const Batch& batch, const ModelParams& params, const TrainConfig& config,
                     std::span<const Discriminator> discriminators = {});

// SGD with momentum: v <- momentum v + g; p <- p - lr v.
class Sgd {
 public:
  explicit Sgd(const ModelParams& shape);
  // Throws DivergenceError naming the first group with a non-finite gradient.
  void step(ModelParams& params, const ModelParams& grads, double lr, double momentum);

 private:
  ModelParams velocity_;
};

void sgd_step(std::span<double> params, std::span<double> velocity, std::span<const double> grads, double lr,
              double momentum);

struct TrainHooks {
  // Replaces the built-in validation score (weighted F1 on the validation split).
  std::function<double(const ModelParams&)> validation_score;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  TrainLog log;
};

std::vector<Discriminator> make_discriminators(std::size_t num_domains, std::size_t width, std::size_t hidden,
                                               std::uint64_t seed);

TrainResult train(const DGTask& task, const ModelConfig& model_config, const TrainConfig& train_config,
                  const TrainHooks& hooks = {});

struct Inference {
  std::vector<int> predictions;
  std::vector<std::vector<double>> weights;  // fusion weights per window
  Matrix probs;                               // windows x classes
};

// Argmax class per window (ties resolve to the lowest index).
Inference infer(const ModelParams& params, std::span<const SensorWindow> windows);

// Model config with the task's shape filled in.
ModelConfig config_for_task(const DGTask& task, ModelConfig base);

}  // namespace affar
