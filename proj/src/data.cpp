#include "affar/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "affar/error.hpp"

namespace affar {

void validate_task(const DGTask& task) {
  const auto k = task.train_domains.size();
  if (k < 2) throw ConfigError("task needs at least 2 training domains, got " + std::to_string(k));
  if (task.val_domains.size() != k) throw ConfigError("validation split must cover every training domain");
  if (task.num_classes < 2) throw ConfigError("task needs at least 2 classes");

  std::size_t channels = 0, timesteps = 0;
  bool have_shape = false;
  std::set<int> seen_classes;
  auto check = [&](const DomainDataset& d, int expected_domain, bool training) {
    for (const auto& w : d.windows) {
      if (!have_shape) {
        channels = w.channels();
        timesteps = w.timesteps();
        have_shape = true;
      }
      if (w.channels() != channels || w.timesteps() != timesteps) {
        throw ConfigError("domain '" + d.name + "' has a window of a different shape");
      }
      if (w.activity < 0 || w.activity >= task.num_classes) {
        throw ConfigError("domain '" + d.name + "' has activity out of range");
      }
      if (w.domain != expected_domain) {
        throw ConfigError("domain '" + d.name + "' has a window with the wrong domain label");
      }
      for (double v : w.values.data) {
        if (!std::isfinite(v)) throw ConfigError("domain '" + d.name + "' has a non-finite value");
      }
      if (training) seen_classes.insert(w.activity);
    }
  };
  for (std::size_t i = 0; i < k; ++i) {
    const auto& d = task.train_domains[i];
    if (d.domain_id != static_cast<int>(i)) throw ConfigError("training domains must be indexed 0..K-1");
    if (d.windows.empty()) throw ConfigError("training domain '" + d.name + "' is empty");
    check(d, d.domain_id, true);
    check(task.val_domains[i], d.domain_id, false);
  }
  if (task.test_domain.domain_id != kUnknownDomain) {
    throw ConfigError("test domain id collides with training ids");
  }
  check(task.test_domain, kUnknownDomain, false);
  if (static_cast<int>(seen_classes.size()) != task.num_classes) {
    throw ConfigError("not every class is present in the training data");
  }
}

std::vector<SensorWindow> window_stream(const Matrix& signal, std::span<const int> labels,
                                        std::size_t window_len, std::size_t stride,
                                        double purity) {
  const std::size_t length = signal.cols;
  if (labels.size() != length) throw ShapeError("window_stream: label count differs from signal length");
  if (window_len == 0 || stride == 0) throw ConfigError("window_stream: window length and stride must be >= 1");
  if (length < window_len) {
    throw ConfigError("window_stream: signal length " + std::to_string(length) +
                      " shorter than window length " + std::to_string(window_len));
  }
  std::vector<SensorWindow> out;
  const std::size_t count = (length - window_len) / stride + 1;
  std::map<int, std::size_t> tally;
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * stride;
    tally.clear();
    for (std::size_t t = start; t < start + window_len; ++t) {
      if (labels[t] >= 0) ++tally[labels[t]];
    }
    int best_label = -1;
    std::size_t best = 0;
    for (auto [label, n] : tally) {
      if (n > best) {
        best = n;
        best_label = label;
      }
    }
    if (best_label < 0 || static_cast<double>(best) < purity * static_cast<double>(window_len)) continue;
    SensorWindow win;
    win.values = Matrix(signal.rows, window_len);
    for (std::size_t c = 0; c < signal.rows; ++c) {
      for (std::size_t t = 0; t < window_len; ++t) win.values(c, t) = signal(c, start + t);
    }
    win.activity = best_label;
    out.push_back(std::move(win));
  }
  return out;
}

NormalizationStats fit_normalizer(std::span<const DomainDataset> train) {
  std::size_t channels = 0;
  for (const auto& d : train) {
    if (!d.windows.empty()) {
      channels = d.windows.front().channels();
      break;
    }
  }
  if (channels == 0) throw ConfigError("fit_normalizer: no training windows");
  std::vector<double> sum(channels, 0.0), count(channels, 0.0);
  for (const auto& d : train) {
    for (const auto& w : d.windows) {
      if (w.channels() != channels) throw ShapeError("fit_normalizer: channel count mismatch");
      for (std::size_t c = 0; c < channels; ++c) {
        for (double v : w.values.row(c)) sum[c] += v;
        count[c] += static_cast<double>(w.timesteps());
      }
    }
  }
  NormalizationStats stats;
  stats.mean.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) stats.mean[c] = sum[c] / count[c];
  std::vector<double> sq(channels, 0.0);
  for (const auto& d : train) {
    for (const auto& w : d.windows) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (double v : w.values.row(c)) sq[c] += (v - stats.mean[c]) * (v - stats.mean[c]);
      }
    }
  }
  stats.stddev.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    stats.stddev[c] = std::max(std::sqrt(sq[c] / count[c]), 1e-8);
  }
  return stats;
}

SensorWindow normalize(const SensorWindow& w, const NormalizationStats& stats) {
  if (w.channels() != stats.mean.size() || w.channels() != stats.stddev.size()) {
    throw ShapeError("normalize: window has " + std::to_string(w.channels()) + " channels, stats have " +
                     std::to_string(stats.mean.size()));
  }
  SensorWindow out = w;
  for (std::size_t c = 0; c < w.channels(); ++c) {
    for (double& v : out.values.row(c)) v = (v - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

SensorWindow denormalize(const SensorWindow& w, const NormalizationStats& stats) {
  if (w.channels() != stats.mean.size()) throw ShapeError("denormalize: channel mismatch");
  SensorWindow out = w;
  for (std::size_t c = 0; c < w.channels(); ++c) {
    for (double& v : out.values.row(c)) v = v * stats.stddev[c] + stats.mean[c];
  }
  return out;
}

DomainDataset normalize(const DomainDataset& d, const NormalizationStats& stats) {
  DomainDataset out;
  out.domain_id = d.domain_id;
  out.name = d.name;
  out.windows.reserve(d.windows.size());
  for (const auto& w : d.windows) out.windows.push_back(normalize(w, stats));
  return out;
}

std::pair<std::vector<DomainDataset>, std::vector<DomainDataset>> split_train_val(
    std::span<const DomainDataset> domains, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must be in (0,1)");
  std::mt19937_64 rng(seed);
  std::vector<DomainDataset> train, val;
  for (const auto& d : domains) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < d.windows.size(); ++i) by_class[d.windows[i].activity].push_back(i);
    std::vector<bool> in_val(d.windows.size(), false);
    for (auto& [cls, idx] : by_class) {
      if (idx.size() < 2) {
        throw ConfigError("split_train_val: cell (domain '" + d.name + "', class " + std::to_string(cls) +
                          ") has fewer than 2 windows");
      }
      std::shuffle(idx.begin(), idx.end(), rng);
      auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
      n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
      for (std::size_t j = 0; j < n_val; ++j) in_val[idx[j]] = true;
    }
    DomainDataset tr{{}, d.domain_id, d.name}, va{{}, d.domain_id, d.name};
    for (std::size_t i = 0; i < d.windows.size(); ++i) {
      (in_val[i] ? va : tr).windows.push_back(d.windows[i]);
    }
    train.push_back(std::move(tr));
    val.push_back(std::move(va));
  }
  return {std::move(train), std::move(val)};
}

DGTask build_task(std::span<const DomainDataset> domains, int num_classes, int target,
                  double val_fraction, std::uint64_t seed) {
  if (domains.size() < 3) {
    throw ConfigError("leave-one-domain-out needs at least 3 domains (K >= 2 training domains)");
  }
  if (target < 0 || target >= static_cast<int>(domains.size())) {
    throw ConfigError("target domain " + std::to_string(target) + " out of range");
  }
  std::vector<DomainDataset> sources;
  int next_id = 0;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (static_cast<int>(i) == target) continue;
    DomainDataset d = domains[i];
    d.domain_id = next_id++;
    for (auto& w : d.windows) w.domain = d.domain_id;
    sources.push_back(std::move(d));
  }
  auto [train, val] = split_train_val(sources, val_fraction, seed);

  DGTask task;
  task.num_classes = num_classes;
  task.val_fraction = val_fraction;
  task.test_source_index = target;
  task.stats = fit_normalizer(train);
  for (const auto& d : train) task.train_domains.push_back(normalize(d, task.stats));
  for (const auto& d : val) task.val_domains.push_back(normalize(d, task.stats));
  DomainDataset test = normalize(domains[static_cast<std::size_t>(target)], task.stats);
  test.domain_id = kUnknownDomain;
  for (auto& w : test.windows) w.domain = kUnknownDomain;
  task.test_domain = std::move(test);
  validate_task(task);
  return task;
}

}  // namespace affar
