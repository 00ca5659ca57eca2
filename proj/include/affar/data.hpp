#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "affar/matrix.hpp"

namespace affar {

// Domain index carried by windows whose source domain is hidden (test data).
inline constexpr int kUnknownDomain = -1;

// One fixed-length multi-channel window: values are channels x timesteps.
struct SensorWindow {
  Matrix values;
  int activity = 0;
  int domain = kUnknownDomain;

  std::size_t channels() const { return values.rows; }
  std::size_t timesteps() const { return values.cols; }
};

struct DomainDataset {
  std::vector<SensorWindow> windows;
  int domain_id = 0;
  std::string name;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// A leave-one-domain-out task. Training domains are re-indexed 0..K-1 so the
// index doubles as the branch index; the test domain carries kUnknownDomain.
struct DGTask {
  std::vector<DomainDataset> train_domains;
  std::vector<DomainDataset> val_domains;
  DomainDataset test_domain;
  int num_classes = 0;
  double val_fraction = 0.2;
  NormalizationStats stats;
  // Position of the held-out domain in the source collection.
  int test_source_index = 0;
};

// Throws ConfigError when a task breaks the shape, label or domain invariants.
void validate_task(const DGTask& task);

// Cuts `signal` (channels x L) into windows at offsets 0, stride, 2*stride...
// A window survives only if at least `purity` of its timesteps share one
// non-negative label, which becomes its activity. Negative labels mark
// timesteps that belong to no retained activity.
std::vector<SensorWindow> window_stream(const Matrix& signal, std::span<const int> labels,
                                        std::size_t window_len, std::size_t stride,
                                        double purity = 0.95);

NormalizationStats fit_normalizer(std::span<const DomainDataset> train);
SensorWindow normalize(const SensorWindow& w, const NormalizationStats& stats);
SensorWindow denormalize(const SensorWindow& w, const NormalizationStats& stats);
DomainDataset normalize(const DomainDataset& d, const NormalizationStats& stats);

// Stratified per (domain, class). Deterministic given `seed`.
std::pair<std::vector<DomainDataset>, std::vector<DomainDataset>> split_train_val(
    std::span<const DomainDataset> domains, double fraction, std::uint64_t seed);

// Holds out `target` and builds a normalized task from the rest.
DGTask build_task(std::span<const DomainDataset> domains, int num_classes, int target,
                  double val_fraction, std::uint64_t seed);

// Per-domain shift parameters for the synthetic generator. Vectors are indexed
// by domain and must have num_domains entries each.
struct SynthShiftSpec {
  int num_domains = 4;
  int num_classes = 4;
  int channels = 3;
  int timesteps = 32;
  int windows_per_class = 30;
  std::vector<double> amplitude;
  std::vector<double> phase;
  std::vector<double> noise;
  std::vector<double> drift;
  std::uint64_t seed = 0;
  int test_domain = 0;
};

// Synthetic domains with the requested amplitude/phase/noise/drift shifts.
std::vector<DomainDataset> generate_synthetic_domains(const SynthShiftSpec& spec);
DGTask generate_synthetic(const SynthShiftSpec& spec, double val_fraction = 0.2);

// Convenience: a strongly shifted spec used by the demo and acceptance runs.
SynthShiftSpec shifted_synth_spec(int num_domains, std::uint64_t seed);

// Canonical window container ("DGW1") plus key=value sidecar.
struct WindowFile {
  int num_classes = 0;
  std::vector<DomainDataset> domains;  // ordered by domain id; unknown-domain windows last
};

void write_window_file(const std::string& path, std::span<const DomainDataset> domains,
                       int num_classes);
WindowFile read_window_file(const std::string& path);

using Sidecar = std::map<std::string, std::string>;
void write_sidecar(const std::string& path, const Sidecar& entries);
Sidecar read_sidecar(const std::string& path);

// Stats <-> sidecar keys "norm.mean" / "norm.std" (comma separated, %.17g).
void put_stats(Sidecar& sidecar, const NormalizationStats& stats);
NormalizationStats get_stats(const Sidecar& sidecar);

}  // namespace affar
