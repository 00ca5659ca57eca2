#include "affar/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "affar/binary_io.hpp"
#include "affar/error.hpp"

namespace affar {

using layers::ConvShape;
using layers::MapShape;

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be >= 1");
  };
  positive(channels, "channels");
  positive(timesteps, "timesteps");
  positive(conv1_filters, "conv1_filters");
  positive(conv1_kernel, "conv1_kernel");
  positive(conv2_filters, "conv2_filters");
  positive(conv2_kernel, "conv2_kernel");
  positive(pool, "pool");
  positive(branch_width, "branch_width");
  positive(domain_hidden, "domain_hidden");
  if (num_domains < 2) throw ConfigError("model config: num_domains must be >= 2");
  if (num_classes < 2) throw ConfigError("model config: num_classes must be >= 2");
  if (conv1_kernel > timesteps || conv2_kernel > timesteps) {
    throw ConfigError("model config: kernel wider than the window");
  }
  const std::size_t p1 = (timesteps - conv1_kernel + 1) / pool;
  if (p1 < conv2_kernel || (p1 - conv2_kernel + 1) / pool == 0) {
    throw ConfigError("model config: window too short for the conv/pool stack (" + describe(*this) + ")");
  }
}

ConvShape ModelConfig::conv1() const { return {{1, channels, timesteps}, conv1_filters, conv1_kernel}; }

ConvShape ModelConfig::conv2() const {
  const MapShape p1 = layers::pool_output(conv1().output(), pool);
  return {p1, conv2_filters, conv2_kernel};
}

std::size_t ModelConfig::feature_length() const { return layers::pool_output(conv2().output(), pool).size(); }

std::string describe(const ModelConfig& c) {
  return "channels=" + std::to_string(c.channels) + " timesteps=" + std::to_string(c.timesteps) +
         " domains=" + std::to_string(c.num_domains) + " classes=" + std::to_string(c.num_classes) +
         " conv1=" + std::to_string(c.conv1_filters) + "x" + std::to_string(c.conv1_kernel) +
         " conv2=" + std::to_string(c.conv2_filters) + "x" + std::to_string(c.conv2_kernel) +
         " pool=" + std::to_string(c.pool) + " branch=" + std::to_string(c.branch_width) +
         " hidden=" + std::to_string(c.domain_hidden);
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config_ = config;
  const std::size_t e = config.feature_length();
  const std::size_t k = config.num_domains;
  auto add = [&](std::string name, std::size_t n) { p.groups_.push_back({std::move(name), std::vector<double>(n, 0.0)}); };
  add("conv1.w", config.conv1().weight_size());
  add("conv1.b", config.conv1_filters);
  add("conv2.w", config.conv2().weight_size());
  add("conv2.b", config.conv2_filters);
  for (std::size_t b = 0; b < k; ++b) {
    add("branch" + std::to_string(b) + ".w", config.branch_width * e);
    add("branch" + std::to_string(b) + ".b", config.branch_width);
  }
  add("domain.fc1.w", config.domain_hidden * e);
  add("domain.fc1.b", config.domain_hidden);
  add("domain.fc2.w", k * config.domain_hidden);
  add("domain.fc2.b", k);
  add("classifier.w", config.num_classes * config.branch_width);
  add("classifier.b", config.num_classes);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  std::mt19937_64 rng(seed);
  auto fill = [&](std::span<double> w, std::size_t fan_in, std::size_t fan_out) {
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-r, r);
    for (double& v : w) v = u(rng);
  };
  const std::size_t e = config.feature_length();
  fill(p.conv1_w(), config.conv1_kernel, config.conv1_filters * config.conv1_kernel);
  fill(p.conv2_w(), config.conv1_filters * config.conv2_kernel, config.conv2_filters * config.conv2_kernel);
  for (std::size_t k = 0; k < config.num_domains; ++k) fill(p.branch_w(k), e, config.branch_width);
  fill(p.domain_w1(), e, config.domain_hidden);
  fill(p.domain_w2(), config.domain_hidden, config.num_domains);
  fill(p.classifier_w(), config.branch_width, config.num_classes);
  return p;
}

std::size_t ModelParams::size() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.values.size();
  return n;
}

void ModelParams::set_zero() {
  for (auto& g : groups_) std::fill(g.values.begin(), g.values.end(), 0.0);
}

bool ModelParams::all_finite() const {
  for (const auto& g : groups_) {
    for (double v : g.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (!(config_ == other.config_) || groups_.size() != other.groups_.size()) return false;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].values != other.groups_[i].values) return false;
  }
  return true;
}

namespace {

void check_input(const Matrix& x, const ModelConfig& c) {
  if (x.rows != c.channels || x.cols != c.timesteps) {
    throw ShapeError("input window is " + std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                     ", model expects " + std::to_string(c.channels) + "x" + std::to_string(c.timesteps));
  }
}

// Runs the extractor, filling caches when `trace` is given.
std::vector<double> run_extractor(const Matrix& x, const ModelParams& params, ForwardTrace* trace) {
  const ModelConfig& c = params.config();
  check_input(x, c);
  const ConvShape s1 = c.conv1();
  const ConvShape s2 = c.conv2();
  std::vector<double> a1(s1.output().size());
  layers::conv_forward(s1, x.data, params.conv1_w(), params.conv1_b(), a1, "conv1");
  std::vector<double> r1(a1.size());
  layers::relu_forward(a1, r1);
  const MapShape p1 = layers::pool_output(s1.output(), c.pool);
  std::vector<double> pooled1(p1.size());
  std::vector<std::size_t> idx1(p1.size());
  layers::maxpool_forward(s1.output(), c.pool, r1, pooled1, idx1, "pool1");

  std::vector<double> a2(s2.output().size());
  layers::conv_forward(s2, pooled1, params.conv2_w(), params.conv2_b(), a2, "conv2");
  std::vector<double> r2(a2.size());
  layers::relu_forward(a2, r2);
  const MapShape p2 = layers::pool_output(s2.output(), c.pool);
  std::vector<double> shared(p2.size());
  std::vector<std::size_t> idx2(p2.size());
  layers::maxpool_forward(s2.output(), c.pool, r2, shared, idx2, "pool2");

  if (trace != nullptr) {
    trace->input = x.data;
    trace->conv1_pre = std::move(a1);
    trace->pool1_out = std::move(pooled1);
    trace->pool1_argmax = std::move(idx1);
    trace->conv2_pre = std::move(a2);
    trace->pool2_argmax = std::move(idx2);
  }
  return shared;
}

void check_branch(std::size_t k, const ModelParams& params) {
  if (k >= params.config().num_domains) {
    throw ConfigError("branch index " + std::to_string(k) + " out of range");
  }
}

}  // namespace

std::vector<double> extract(const Matrix& x, const ModelParams& params) {
  return run_extractor(x, params, nullptr);
}

std::vector<double> branch(std::span<const double> shared, std::size_t k, const ModelParams& params) {
  check_branch(k, params);
  std::vector<double> pre(params.config().branch_width);
  layers::dense_forward(shared, params.branch_w(k), params.branch_b(k), pre, "branch");
  std::vector<double> out(pre.size());
  layers::relu_forward(pre, out);
  return out;
}

std::vector<double> clamp_to_simplex(std::span<const double> probs) {
  std::vector<double> w(probs.begin(), probs.end());
  double sum = 0.0;
  for (double& v : w) {
    v = std::max(v, kMinFusionWeight);
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

DomainWeights domain_weights(std::span<const double> shared, const ModelParams& params) {
  const ModelConfig& c = params.config();
  std::vector<double> hidden_pre(c.domain_hidden), hidden(c.domain_hidden);
  layers::dense_forward(shared, params.domain_w1(), params.domain_b1(), hidden_pre, "domain.fc1");
  layers::relu_forward(hidden_pre, hidden);
  DomainWeights out;
  out.logits.resize(c.num_domains);
  layers::dense_forward(hidden, params.domain_w2(), params.domain_b2(), out.logits, "domain.fc2");
  out.weights = clamp_to_simplex(layers::softmax(out.logits));
  return out;
}

std::vector<double> fuse(std::span<const std::vector<double>> branch_features, std::span<const double> weights) {
  if (branch_features.size() != weights.size()) {
    throw ShapeError("fuse: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(branch_features.size()) + " branches");
  }
  if (branch_features.empty()) throw ShapeError("fuse: no branches");
  std::vector<double> z(branch_features.front().size(), 0.0);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (branch_features[k].size() != z.size()) throw ShapeError("fuse: branch widths differ");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += weights[k] * branch_features[k][i];
  }
  return z;
}

ForwardTrace forward(const Matrix& x, const ModelParams& params, const ForwardOptions& options) {
  const ModelConfig& c = params.config();
  ForwardTrace t;
  t.mode = options.mode;
  const bool train = options.mode == Mode::kTrain;
  t.shared = run_extractor(x, params, train ? &t : nullptr);

  t.branch_features.resize(c.num_domains);
  if (train) t.branch_pre.resize(c.num_domains);
  for (std::size_t k = 0; k < c.num_domains; ++k) {
    std::vector<double> pre(c.branch_width);
    layers::dense_forward(t.shared, params.branch_w(k), params.branch_b(k), pre, "branch");
    t.branch_features[k].resize(c.branch_width);
    layers::relu_forward(pre, t.branch_features[k]);
    if (train) t.branch_pre[k] = std::move(pre);
  }

  std::vector<double> hidden_pre(c.domain_hidden), hidden(c.domain_hidden);
  layers::dense_forward(t.shared, params.domain_w1(), params.domain_b1(), hidden_pre, "domain.fc1");
  layers::relu_forward(hidden_pre, hidden);
  t.domain_logits.resize(c.num_domains);
  layers::dense_forward(hidden, params.domain_w2(), params.domain_b2(), t.domain_logits, "domain.fc2");
  std::vector<double> soft = layers::softmax(t.domain_logits);
  if (options.fixed_weights) {
    if (options.fixed_weights->size() != c.num_domains) throw ShapeError("fixed fusion weights: wrong length");
    t.weights = *options.fixed_weights;
    t.weights_detached = true;
  } else {
    t.weights = clamp_to_simplex(soft);
  }
  if (train) {
    t.domain_hidden_pre = std::move(hidden_pre);
    t.domain_softmax = std::move(soft);
  }

  t.fused = fuse(t.branch_features, t.weights);
  t.class_logits.resize(c.num_classes);
  layers::dense_forward(t.fused, params.classifier_w(), params.classifier_b(), t.class_logits, "classifier");
  t.class_probs = layers::softmax(t.class_logits);
  return t;
}

void backward(const ForwardTrace& t, const Upstream& up, const ModelParams& params, ModelParams& grads) {
  if (t.mode != Mode::kTrain) throw Error("backward: trace was produced in infer mode");
  const ModelConfig& c = params.config();
  if (!(grads.config() == c)) throw ShapeError("backward: gradient buffer has a different config");
  const std::size_t k_count = c.num_domains;
  const std::size_t e_len = t.shared.size();

  // Classifier.
  std::vector<double> dz(c.branch_width, 0.0);
  if (!up.d_class_probs.empty()) {
    if (up.d_class_probs.size() != c.num_classes) throw ShapeError("backward: class gradient has wrong length");
    const auto dlogits = layers::softmax_backward(t.class_probs, up.d_class_probs);
    layers::dense_backward(t.fused, params.classifier_w(), dlogits, grads.classifier_w(), grads.classifier_b(), dz,
                           "classifier");
  }

  // Fusion: z = sum_k w_k h_k.
  std::vector<double> dw(k_count, 0.0);
  std::vector<std::vector<double>> dh(k_count, std::vector<double>(c.branch_width, 0.0));
  for (std::size_t k = 0; k < k_count; ++k) {
    double dot = 0.0;
    for (std::size_t i = 0; i < c.branch_width; ++i) {
      dh[k][i] = t.weights[k] * dz[i];
      dot += dz[i] * t.branch_features[k][i];
    }
    dw[k] = dot;
    if (k < up.d_branch.size() && !up.d_branch[k].empty()) {
      if (up.d_branch[k].size() != c.branch_width) throw ShapeError("backward: branch gradient has wrong length");
      for (std::size_t i = 0; i < c.branch_width; ++i) dh[k][i] += up.d_branch[k][i];
    }
  }

  // Domain classifier: logits -> softmax -> clamp/renormalize -> w.
  std::vector<double> dlogits(k_count, 0.0);
  if (!t.weights_detached) {
    double sum = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) sum += std::max(t.domain_softmax[k], kMinFusionWeight);
    double wdot = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) wdot += dw[k] * t.weights[k];
    std::vector<double> dsoft(k_count, 0.0);
    for (std::size_t k = 0; k < k_count; ++k) {
      if (t.domain_softmax[k] > kMinFusionWeight) dsoft[k] = (dw[k] - wdot) / sum;
    }
    dlogits = layers::softmax_backward(t.domain_softmax, dsoft);
  }
  if (!up.d_domain_logits.empty()) {
    if (up.d_domain_logits.size() != k_count) throw ShapeError("backward: domain gradient has wrong length");
    for (std::size_t k = 0; k < k_count; ++k) dlogits[k] += up.d_domain_logits[k];
  }
  std::vector<double> de(e_len, 0.0);
  std::vector<double> tmp(e_len);
  {
    std::vector<double> hidden(c.domain_hidden);
    layers::relu_forward(t.domain_hidden_pre, hidden);
    std::vector<double> dhidden(c.domain_hidden);
    layers::dense_backward(hidden, params.domain_w2(), dlogits, grads.domain_w2(), grads.domain_b2(), dhidden,
                           "domain.fc2");
    std::vector<double> dpre(c.domain_hidden);
    layers::relu_backward(t.domain_hidden_pre, dhidden, dpre);
    layers::dense_backward(t.shared, params.domain_w1(), dpre, grads.domain_w1(), grads.domain_b1(), tmp,
                           "domain.fc1");
    for (std::size_t i = 0; i < e_len; ++i) de[i] += tmp[i];
  }

  // Branches.
  for (std::size_t k = 0; k < k_count; ++k) {
    std::vector<double> dpre(c.branch_width);
    layers::relu_backward(t.branch_pre[k], dh[k], dpre);
    layers::dense_backward(t.shared, params.branch_w(k), dpre, grads.branch_w(k), grads.branch_b(k), tmp, "branch");
    for (std::size_t i = 0; i < e_len; ++i) de[i] += tmp[i];
  }

  // Extractor.
  const ConvShape s1 = c.conv1();
  const ConvShape s2 = c.conv2();
  std::vector<double> dr2(s2.output().size());
  layers::maxpool_backward(de, t.pool2_argmax, dr2);
  std::vector<double> da2(dr2.size());
  layers::relu_backward(t.conv2_pre, dr2, da2);
  std::vector<double> dp1(s2.input.size());
  layers::conv_backward(s2, t.pool1_out, params.conv2_w(), da2, grads.conv2_w(), grads.conv2_b(), dp1, "conv2");
  std::vector<double> dr1(s1.output().size());
  layers::maxpool_backward(dp1, t.pool1_argmax, dr1);
  std::vector<double> da1(dr1.size());
  layers::relu_backward(t.conv1_pre, dr1, da1);
  layers::conv_backward(s1, t.input, params.conv1_w(), da1, grads.conv1_w(), grads.conv1_b(), {}, "conv1");
}

namespace {

constexpr std::uint32_t kParamFileVersion = 1;

void write_config(std::ostream& out, const ModelConfig& c) {
  for (std::size_t v : {c.channels, c.timesteps, c.num_domains, c.num_classes, c.conv1_filters, c.conv1_kernel,
                        c.conv2_filters, c.conv2_kernel, c.pool, c.branch_width, c.domain_hidden}) {
    io::write_u32(out, static_cast<std::uint32_t>(v));
  }
}

ModelConfig read_config(std::istream& in) {
  ModelConfig c;
  for (std::size_t* v : {&c.channels, &c.timesteps, &c.num_domains, &c.num_classes, &c.conv1_filters,
                         &c.conv1_kernel, &c.conv2_filters, &c.conv2_kernel, &c.pool, &c.branch_width,
                         &c.domain_hidden}) {
    *v = io::read_u32(in, "model config");
  }
  return c;
}

}  // namespace

void save_params(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write("DGM1", 4);
  io::write_u32(out, kParamFileVersion);
  write_config(out, params.config());
  io::write_u32(out, static_cast<std::uint32_t>(params.groups().size()));
  for (const auto& g : params.groups()) {
    io::write_u64(out, g.values.size());
    for (double v : g.values) io::write_f64(out, v);
  }
  if (!out) throw Error("write failed for " + path);
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open parameter file " + path);
  io::expect_magic(in, "DGM1", path);
  const auto version = io::read_u32(in, "version");
  if (version != kParamFileVersion) throw CorruptFileError(path + ": unsupported version " + std::to_string(version));
  const ModelConfig config = read_config(in);
  ModelParams params;
  try {
    params = ModelParams::zeros(config);
  } catch (const ConfigError& e) {
    throw CorruptFileError(path + ": invalid stored config: " + e.what());
  }
  const auto groups = io::read_u32(in, "group count");
  if (groups != params.groups().size()) throw CorruptFileError(path + ": group count does not match config");
  for (auto& g : params.groups()) {
    const auto n = io::read_u64(in, "group size");
    if (n != g.values.size()) throw CorruptFileError(path + ": size of " + g.name + " does not match config");
    for (double& v : g.values) v = io::read_f64(in, "parameter values");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptFileError(path + ": trailing bytes");
  return params;
}

ModelParams load_params(const std::string& path, const ModelConfig& expected) {
  ModelParams params = load_params(path);
  if (!(params.config() == expected)) {
    throw ConfigMismatchError(path + ": stored config (" + describe(params.config()) + ") differs from expected (" +
                              describe(expected) + ")");
  }
  return params;
}

}  // namespace affar
