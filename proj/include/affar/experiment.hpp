#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "affar/data.hpp"
#include "affar/evaluation.hpp"
#include "affar/network.hpp"
#include "affar/training.hpp"

// Leave-one-domain-out experiment orchestration: tasks, seeds, sweeps,
// distance substitutions and the aggregate tables.
namespace affar {

enum class DatasetKind { kDsads, kUschad, kPamap2, kSynthetic, kWindows };
enum class Ablation { kFull, kClsOnly, kClsDir, kClsDsr };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& name);
std::string to_string(Ablation ablation);
Ablation ablation_from_string(const std::string& name);

struct ExperimentSpec {
  DatasetKind dataset = DatasetKind::kSynthetic;
  std::string data_root;  // raw dataset root, or a .dgw file for kWindows
  SynthShiftSpec synth = shifted_synth_spec(4, 0);
  std::optional<int> target;  // nullopt: every domain in turn
  ModelConfig model;          // channels/timesteps/domains/classes are filled per task
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  Ablation ablation = Ablation::kFull;
  double val_fraction = 0.2;
  std::string out_dir = "results";
  std::size_t workers = 1;
  bool force = false;
};

// Canonical text of every field that affects results (not out_dir/workers/force).
std::string canonical_spec(const ExperimentSpec& spec);
// First 16 hex digits of the SHA-256 of canonical_spec.
std::string spec_digest(const ExperimentSpec& spec);

struct LoadedData {
  std::string name;
  int num_classes = 0;
  std::vector<DomainDataset> domains;
};

LoadedData load_dataset(const ExperimentSpec& spec);

// Zeroes lambda and/or beta as the ablation requires.
TrainConfig apply_ablation(TrainConfig config, Ablation ablation);

struct RunResult {
  int target = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  TrainLog log;
  std::optional<EvalReport> report;  // absent when test evaluation was skipped
  std::optional<ModelParams> params;
  NormalizationStats stats;
};

// Trains every (target, seed) job with up to spec.workers threads. Results are
// ordered by target then seed regardless of scheduling.
std::vector<RunResult> execute_runs(const ExperimentSpec& spec, const LoadedData& data, bool evaluate_test);

struct AggregateRow {
  std::string target;  // domain index or "average"
  std::optional<double> mean;  // nullopt when any run is missing
  double stddev = 0.0;         // sample std across seeds
  std::size_t runs_ok = 0;
  std::size_t runs_missing = 0;
};

std::vector<AggregateRow> aggregate(const std::vector<RunResult>& runs, const std::vector<int>& targets,
                                    std::size_t num_seeds);

struct ExperimentResult {
  std::string directory;
  std::vector<RunResult> runs;
  std::vector<AggregateRow> rows;
  bool all_ok = false;

  // Mean weighted F1 of the "average" row (nullopt if incomplete).
  std::optional<double> average() const;
};

// Runs, then writes <out_dir>/<digest>/ with per-run files, aggregate.csv and
// fusion_weights.csv. Refuses to reuse an existing directory unless spec.force.
ExperimentResult run_experiment(const ExperimentSpec& spec);

// Re-derives the aggregate table from the per-run files of a result directory.
std::vector<AggregateRow> recompute_aggregate(const std::string& directory);
void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path);
std::vector<AggregateRow> read_aggregate_csv(const std::string& path);

struct SweepResult {
  std::string directory;
  std::vector<double> lambdas;
  std::vector<double> betas;
  Matrix val_f1;  // lambdas x betas, mean best-validation weighted F1
  std::size_t best_lambda = 0;
  std::size_t best_beta = 0;
  ExperimentResult best;  // test evaluation at the argmax only
};

inline std::vector<double> default_lambda_grid() { return {0.005, 0.01, 0.1, 1, 5, 10}; }
inline std::vector<double> default_beta_grid() { return {0.05, 0.1, 0.5, 1, 5, 10}; }

SweepResult run_sweep(const ExperimentSpec& spec, const std::vector<double>& lambdas,
                      const std::vector<double>& betas);

struct SubstitutionRow {
  std::string method;  // mmd, coral, adversarial, erm
  std::optional<double> average;
  ExperimentResult result;
};

struct SubstitutionResult {
  std::string directory;
  std::vector<SubstitutionRow> rows;
};

// Full pipeline with each distance kind plus the ERM reference row.
SubstitutionResult run_distance_substitution(const ExperimentSpec& spec);

}  // namespace affar
