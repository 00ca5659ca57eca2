#include "affar/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <numeric>
#include <random>

#include "affar/error.hpp"
#include "affar/evaluation.hpp"

namespace affar {
namespace {

constexpr double kProbFloor = 1e-12;

std::string describe(const LossBreakdown& l) {
  return "l_cls=" + std::to_string(l.l_cls) + " l_dsr=" + std::to_string(l.l_dsr) +
         " l_dir=" + std::to_string(l.l_dir) + " total=" + std::to_string(l.total);
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.l_cls) && std::isfinite(l.l_dsr) && std::isfinite(l.l_dir) && std::isfinite(l.total);
}

void ascend(Discriminator& d, Discriminator& v, const Discriminator& g, double lr, double momentum) {
  auto neg = [](const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
    return out;
  };
  sgd_step(d.w1, v.w1, neg(g.w1), lr, momentum);
  sgd_step(d.b1, v.b1, neg(g.b1), lr, momentum);
  sgd_step(d.w2, v.w2, neg(g.w2), lr, momentum);
  const double gb = -g.b2;
  sgd_step({&d.b2, 1}, {&v.b2, 1}, {&gb, 1}, lr, momentum);
}

}  // namespace

void TrainConfig::validate(std::size_t num_domains) const {
  if (!(lambda >= 0.0) || !(beta >= 0.0)) throw ConfigError("lambda and beta must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (num_domains < 2) throw ConfigError("training needs at least 2 domains");
  if (batch_size < num_domains) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " cannot be split across " +
                      std::to_string(num_domains) + " domains");
  }
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
}

void TrainLog::write_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["l_cls"] = e.losses.l_cls;
    j["l_dsr"] = e.losses.l_dsr;
    j["l_dir"] = e.losses.l_dir;
    j["total"] = e.losses.total;
    j["val_weighted_f1"] = e.val_weighted_f1;
    j["val_score"] = e.val_score;
    j["seconds"] = e.seconds;
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json summary;
  summary["summary"] = true;
  summary["best_epoch"] = best_epoch;
  summary["best_val_weighted_f1"] = best_val_weighted_f1;
  summary["stop_reason"] = stop_reason;
  out << summary.dump() << '\n';
}

TrainLog TrainLog::read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  TrainLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("summary")) {
      log.best_epoch = j.at("best_epoch").get<std::size_t>();
      log.best_val_weighted_f1 = j.at("best_val_weighted_f1").get<double>();
      log.stop_reason = j.at("stop_reason").get<std::string>();
      continue;
    }
    EpochRecord e;
    e.epoch = j.at("epoch").get<std::size_t>();
    e.losses = {j.at("l_cls").get<double>(), j.at("l_dsr").get<double>(), j.at("l_dir").get<double>(),
                j.at("total").get<double>()};
    e.val_weighted_f1 = j.at("val_weighted_f1").get<double>();
    e.val_score = j.value("val_score", e.val_weighted_f1);
    e.seconds = j.at("seconds").get<double>();
    log.epochs.push_back(e);
  }
  return log;
}

LossGrad classification_loss(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows != labels.size()) throw ShapeError("classification_loss: label count differs from batch size");
  if (probs.rows == 0) throw ShapeError("classification_loss: empty batch");
  LossGrad out{0.0, Matrix(probs.rows, probs.cols)};
  const double inv_n = 1.0 / static_cast<double>(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols) {
      throw ConfigError("classification_loss: label " + std::to_string(labels[i]) + " out of range");
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    const double p = probs(i, y);
    out.value -= std::log(std::max(p, kProbFloor));
    if (p > kProbFloor) out.grad(i, y) = -inv_n / p;
  }
  out.value *= inv_n;
  return out;
}

LossGrad domain_specific_loss(const Matrix& logits, std::span<const int> domains) {
  if (logits.rows != domains.size()) throw ShapeError("domain_specific_loss: domain count differs from batch size");
  const std::size_t k = logits.cols;
  std::vector<std::size_t> count(k, 0);
  for (int d : domains) {
    if (d == kUnknownDomain) throw ConfigError("domain_specific_loss: training sample with unknown domain");
    if (d < 0 || static_cast<std::size_t>(d) >= k) throw ConfigError("domain_specific_loss: domain out of range");
    ++count[static_cast<std::size_t>(d)];
  }
  const auto present = static_cast<double>(std::count_if(count.begin(), count.end(), [](std::size_t n) { return n > 0; }));
  if (present == 0) throw ShapeError("domain_specific_loss: empty batch");
  LossGrad out{0.0, Matrix(logits.rows, k)};
  std::vector<double> per_domain(k, 0.0);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto d = static_cast<std::size_t>(domains[i]);
    const auto row = logits.row(i);
    const auto soft = layers::softmax(row);
    const double m = *std::max_element(row.begin(), row.end());
    double lse = 0.0;
    for (double v : row) lse += std::exp(v - m);
    lse = m + std::log(lse);
    per_domain[d] += lse - row[d];
    const double scale = 1.0 / (present * static_cast<double>(count[d]));
    for (std::size_t j = 0; j < k; ++j) out.grad(i, j) = scale * (soft[j] - (j == d ? 1.0 : 0.0));
  }
  for (std::size_t d = 0; d < k; ++d) {
    if (count[d] > 0) out.value += per_domain[d] / static_cast<double>(count[d]);
  }
  out.value /= present;
  return out;
}

PairwiseLoss domain_invariant_loss(std::span<const Matrix> branch_features, DistanceKind kind,
                                   const KernelSpec& spec, std::span<const Discriminator> discriminators) {
  if (kind == DistanceKind::kCoral) {
    for (const auto& b : branch_features) {
      if (b.rows < 2) throw ConfigError("domain_invariant_loss: CORAL needs at least 2 samples per domain");
    }
  }
  return pairwise_distance(branch_features, kind, spec, discriminators);
}

TotalLoss total_loss(const Batch& batch, const ModelParams& params, const TrainConfig& config,
                     std::span<const Discriminator> discriminators) {
  const ModelConfig& mc = params.config();
  const std::size_t k_count = mc.num_domains;
  if (batch.sub_batches.size() != k_count) throw ShapeError("total_loss: need one sub-batch per training domain");
  const double lambda = config.effective_lambda();
  const double beta = config.effective_beta();
  const bool affar = config.baseline == Baseline::kAffar;

  std::vector<ForwardTrace> traces;
  std::vector<int> labels, domains;
  for (std::size_t k = 0; k < k_count; ++k) {
    if (batch.sub_batches[k].empty()) throw ShapeError("total_loss: empty sub-batch for domain " + std::to_string(k));
    for (const SensorWindow* w : batch.sub_batches[k]) {
      ForwardOptions opts{Mode::kTrain, std::nullopt};
      if (config.fusion_teacher) {
        std::vector<double> onehot(k_count, 0.0);
        onehot[k] = 1.0;
        opts.fixed_weights = std::move(onehot);
      }
      traces.push_back(forward(w->values, params, opts));
      labels.push_back(w->activity);
      domains.push_back(static_cast<int>(k));
    }
  }
  const std::size_t n = traces.size();
  Matrix probs(n, mc.num_classes), logits(n, k_count);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(traces[i].class_probs.begin(), traces[i].class_probs.end(), probs.row(i).begin());
    std::copy(traces[i].domain_logits.begin(), traces[i].domain_logits.end(), logits.row(i).begin());
  }

  TotalLoss out{{}, ModelParams::zeros(mc), {}};
  const LossGrad cls = classification_loss(probs, labels);
  out.losses.l_cls = cls.value;

  LossGrad dsr;
  PairwiseLoss dir;
  if (affar) {
    dsr = domain_specific_loss(logits, domains);
    out.losses.l_dsr = dsr.value;
    std::vector<Matrix> feats;
    std::size_t row = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
      Matrix f(batch.sub_batches[k].size(), mc.branch_width);
      for (std::size_t r = 0; r < f.rows; ++r, ++row) {
        std::copy(traces[row].branch_features[k].begin(), traces[row].branch_features[k].end(), f.row(r).begin());
      }
      feats.push_back(std::move(f));
    }
    dir = domain_invariant_loss(feats, config.distance, config.kernel, discriminators);
    out.losses.l_dir = dir.value;
    out.disc_grads = std::move(dir.disc_grads);
  }
  out.losses.total = out.losses.l_cls + lambda * out.losses.l_dsr + beta * out.losses.l_dir;

  std::size_t row_in_domain = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(domains[i]);
    if (i > 0 && domains[i] != domains[i - 1]) row_in_domain = 0;
    Upstream up;
    up.d_class_probs.assign(cls.grad.row(i).begin(), cls.grad.row(i).end());
    if (lambda > 0.0) {
      up.d_domain_logits.resize(k_count);
      for (std::size_t j = 0; j < k_count; ++j) up.d_domain_logits[j] = lambda * dsr.grad(i, j);
    }
    if (beta > 0.0) {
      up.d_branch.resize(k_count);
      up.d_branch[k].resize(mc.branch_width);
      for (std::size_t j = 0; j < mc.branch_width; ++j) up.d_branch[k][j] = beta * dir.grads[k](row_in_domain, j);
    }
    backward(traces[i], up, params, out.grads);
    ++row_in_domain;
  }
  return out;
}

void sgd_step(std::span<double> params, std::span<double> velocity, std::span<const double> grads, double lr,
              double momentum) {
  if (params.size() != velocity.size() || params.size() != grads.size()) throw ShapeError("sgd_step: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

Sgd::Sgd(const ModelParams& shape) : velocity_(ModelParams::zeros(shape.config())) {}

void Sgd::step(ModelParams& params, const ModelParams& grads, double lr, double momentum) {
  if (!(params.config() == grads.config()) || !(params.config() == velocity_.config())) {
    throw ShapeError("sgd: parameter/gradient configs differ");
  }
  for (const auto& g : grads.groups()) {
    for (double v : g.values) {
      if (!std::isfinite(v)) throw DivergenceError("non-finite gradient in parameter group " + g.name);
    }
  }
  for (std::size_t i = 0; i < params.groups().size(); ++i) {
    sgd_step(params.groups()[i].values, velocity_.groups()[i].values, grads.groups()[i].values, lr, momentum);
  }
}

std::vector<Discriminator> make_discriminators(std::size_t num_domains, std::size_t width, std::size_t hidden,
                                               std::uint64_t seed) {
  std::vector<Discriminator> out;
  const std::size_t pairs = num_domains * (num_domains - 1) / 2;
  for (std::size_t p = 0; p < pairs; ++p) out.push_back(Discriminator::init(width, hidden, seed * 1000003ULL + p));
  return out;
}

ModelConfig config_for_task(const DGTask& task, ModelConfig base) {
  if (task.train_domains.empty() || task.train_domains.front().windows.empty()) {
    throw ConfigError("task has no training windows");
  }
  const auto& w = task.train_domains.front().windows.front();
  base.channels = w.channels();
  base.timesteps = w.timesteps();
  base.num_domains = task.train_domains.size();
  base.num_classes = static_cast<std::size_t>(task.num_classes);
  return base;
}

Inference infer(const ModelParams& params, std::span<const SensorWindow> windows) {
  const ModelConfig& c = params.config();
  Inference out;
  out.probs = Matrix(windows.size(), c.num_classes);
  out.predictions.reserve(windows.size());
  out.weights.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    ForwardTrace t = forward(windows[i].values, params, {Mode::kInfer, std::nullopt});
    const auto best = std::max_element(t.class_probs.begin(), t.class_probs.end());
    out.predictions.push_back(static_cast<int>(best - t.class_probs.begin()));
    std::copy(t.class_probs.begin(), t.class_probs.end(), out.probs.row(i).begin());
    out.weights.push_back(std::move(t.weights));
  }
  return out;
}

TrainResult train(const DGTask& task, const ModelConfig& model_config, const TrainConfig& config,
                  const TrainHooks& hooks) {
  validate_task(task);
  const std::size_t k_count = task.train_domains.size();
  config.validate(k_count);
  const ModelConfig mc = config_for_task(task, model_config);
  if (!(mc == model_config)) throw ConfigMismatchError("model config does not match the task shape");

  std::size_t sub = config.batch_size / k_count;
  std::size_t smallest = task.train_domains.front().windows.size();
  for (const auto& d : task.train_domains) smallest = std::min(smallest, d.windows.size());
  if (sub > smallest) {
    spdlog::debug("per-domain batch {} exceeds smallest domain ({}); using {}", sub, smallest, smallest);
    sub = smallest;
  }
  if (config.distance == DistanceKind::kCoral && config.baseline == Baseline::kAffar && sub < 2) {
    throw ConfigError("CORAL needs at least 2 samples per domain in each batch");
  }

  std::vector<SensorWindow> val;
  for (const auto& d : task.val_domains) val.insert(val.end(), d.windows.begin(), d.windows.end());
  if (val.empty() && !hooks.validation_score) throw ConfigError("validation split is empty");

  ModelParams params = ModelParams::init(mc, config.seed);
  Sgd opt(params);
  std::vector<Discriminator> discs, disc_velocity;
  if (config.distance == DistanceKind::kAdversarial && config.baseline == Baseline::kAffar) {
    discs = make_discriminators(k_count, mc.branch_width, config.discriminator_hidden, config.seed + 17);
    for (const auto& d : discs) disc_velocity.push_back(Discriminator::zeros(d.input, d.hidden));
  }
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);

  TrainResult result{params, {}};
  bool have_best = false;
  double best_score = 0.0;
  std::size_t since_best = 0;
  std::size_t global_step = 0;
  result.log.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::vector<std::size_t>> order(k_count);
    std::size_t steps = std::numeric_limits<std::size_t>::max();
    for (std::size_t k = 0; k < k_count; ++k) {
      order[k].resize(task.train_domains[k].windows.size());
      std::iota(order[k].begin(), order[k].end(), 0);
      std::shuffle(order[k].begin(), order[k].end(), rng);
      steps = std::min(steps, order[k].size() / sub);
    }
    LossBreakdown sum;
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      Batch batch;
      batch.sub_batches.resize(k_count);
      for (std::size_t k = 0; k < k_count; ++k) {
        for (std::size_t j = 0; j < sub; ++j) {
          batch.sub_batches[k].push_back(&task.train_domains[k].windows[order[k][s * sub + j]]);
        }
      }
      TotalLoss tl = total_loss(batch, params, config, discs);
      if (!finite(tl.losses)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(global_step) + " (" +
                              describe(tl.losses) + ")");
      }
      try {
        opt.step(params, tl.grads, config.learning_rate, config.momentum);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(global_step) + " (" +
                              describe(tl.losses) + ")");
      }
      for (std::size_t p = 0; p < discs.size(); ++p) {
        ascend(discs[p], disc_velocity[p], tl.disc_grads[p], config.learning_rate, config.momentum);
      }
      sum.l_cls += tl.losses.l_cls;
      sum.l_dsr += tl.losses.l_dsr;
      sum.l_dir += tl.losses.l_dir;
      sum.total += tl.losses.total;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    if (steps > 0) {
      const double inv = 1.0 / static_cast<double>(steps);
      rec.losses = {sum.l_cls * inv, sum.l_dsr * inv, sum.l_dir * inv, sum.total * inv};
    }
    if (hooks.validation_score) {
      rec.val_score = hooks.validation_score(params);
      rec.val_weighted_f1 = rec.val_score;
    } else {
      const Inference inf = infer(params, val);
      std::vector<int> truth;
      truth.reserve(val.size());
      for (const auto& w : val) truth.push_back(w.activity);
      rec.val_weighted_f1 = weighted_f1(truth, inf.predictions, mc.num_classes);
      if (config.selection == Selection::kValidationLoss) {
        rec.val_score = -classification_loss(inf.probs, truth).value;
      } else {
        rec.val_score = rec.val_weighted_f1;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(rec);

    if (!have_best || rec.val_score > best_score) {
      have_best = true;
      best_score = rec.val_score;
      result.params = params;
      result.log.best_epoch = epoch;
      result.log.best_val_weighted_f1 = rec.val_weighted_f1;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.log.stop_reason = "patience";
      break;
    }
  }
  return result;
}

}  // namespace affar
