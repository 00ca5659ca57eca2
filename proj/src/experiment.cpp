#include "affar/experiment.hpp"

#include <openssl/sha.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "affar/error.hpp"
#include "affar/importers.hpp"

namespace fs = std::filesystem;

namespace affar {
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    if constexpr (std::is_floating_point_v<T>) {
      out << fmt17(v[i]);
    } else {
      out << v[i];
    }
  }
  return out.str();
}

std::string run_name(int target, std::uint64_t seed) {
  return "target" + std::to_string(target) + "_seed" + std::to_string(seed);
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

std::vector<int> targets_for(const ExperimentSpec& spec, std::size_t num_domains) {
  if (spec.target) {
    if (*spec.target < 0 || static_cast<std::size_t>(*spec.target) >= num_domains) {
      throw ConfigError("target " + std::to_string(*spec.target) + " out of range for " +
                        std::to_string(num_domains) + " domains");
    }
    return {*spec.target};
  }
  std::vector<int> all(num_domains);
  for (std::size_t i = 0; i < num_domains; ++i) all[i] = static_cast<int>(i);
  return all;
}

void prepare_directory(const std::string& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw ConfigError("result directory " + dir + " already exists; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_run_files(const RunResult& run, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream(dir + "/status.txt", std::ios::trunc) << (run.ok ? "ok" : "failed: " + run.error) << '\n';
  if (!run.ok) return;
  run.log.write_jsonl(dir + "/trainlog.jsonl");
  if (run.report) write_report(*run.report, dir);
  if (run.params) save_params(*run.params, dir + "/params.dgm");
  Sidecar task;
  task["target"] = std::to_string(run.target);
  task["seed"] = std::to_string(run.seed);
  put_stats(task, run.stats);
  write_sidecar(dir + "/task.txt", task);
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kDsads: return "dsads";
    case DatasetKind::kUschad: return "uschad";
    case DatasetKind::kPamap2: return "pamap2";
    case DatasetKind::kSynthetic: return "synthetic";
    case DatasetKind::kWindows: return "windows";
  }
  return "unknown";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  for (auto k : {DatasetKind::kDsads, DatasetKind::kUschad, DatasetKind::kPamap2, DatasetKind::kSynthetic,
                 DatasetKind::kWindows}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown dataset '" + name + "'");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kClsOnly: return "cls_only";
    case Ablation::kClsDir: return "cls+dir";
    case Ablation::kClsDsr: return "cls+dsr";
  }
  return "unknown";
}

Ablation ablation_from_string(const std::string& name) {
  for (auto a : {Ablation::kFull, Ablation::kClsOnly, Ablation::kClsDir, Ablation::kClsDsr}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation '" + name + "'");
}

std::string canonical_spec(const ExperimentSpec& spec) {
  std::ostringstream o;
  o << "dataset=" << to_string(spec.dataset) << '\n';
  if (spec.dataset == DatasetKind::kSynthetic) {
    const auto& s = spec.synth;
    o << "synth.num_domains=" << s.num_domains << "\nsynth.num_classes=" << s.num_classes
      << "\nsynth.channels=" << s.channels << "\nsynth.timesteps=" << s.timesteps
      << "\nsynth.windows_per_class=" << s.windows_per_class << "\nsynth.amplitude=" << join(s.amplitude)
      << "\nsynth.phase=" << join(s.phase) << "\nsynth.noise=" << join(s.noise) << "\nsynth.drift=" << join(s.drift)
      << "\nsynth.seed=" << s.seed << '\n';
  } else {
    o << "data_root=" << spec.data_root << '\n';
  }
  o << "target=" << (spec.target ? std::to_string(*spec.target) : "all") << '\n';
  const auto& m = spec.model;
  o << "model.conv1_filters=" << m.conv1_filters << "\nmodel.conv1_kernel=" << m.conv1_kernel
    << "\nmodel.conv2_filters=" << m.conv2_filters << "\nmodel.conv2_kernel=" << m.conv2_kernel
    << "\nmodel.pool=" << m.pool << "\nmodel.branch_width=" << m.branch_width
    << "\nmodel.domain_hidden=" << m.domain_hidden << '\n';
  const auto& t = spec.train;
  o << "train.lambda=" << fmt17(t.lambda) << "\ntrain.beta=" << fmt17(t.beta)
    << "\ntrain.learning_rate=" << fmt17(t.learning_rate) << "\ntrain.momentum=" << fmt17(t.momentum)
    << "\ntrain.batch_size=" << t.batch_size << "\ntrain.max_epochs=" << t.max_epochs
    << "\ntrain.patience=" << t.patience << "\ntrain.distance=" << to_string(t.distance)
    << "\ntrain.kernel=" << (t.kernel.median_heuristic ? "median:" + join(t.kernel.multipliers) : join(t.kernel.bandwidths))
    << "\ntrain.baseline=" << (t.baseline == Baseline::kErm ? "erm" : "affar")
    << "\ntrain.fusion_teacher=" << t.fusion_teacher << "\ntrain.discriminator_hidden=" << t.discriminator_hidden
    << "\ntrain.selection=" << (t.selection == Selection::kWeightedF1 ? "f1" : "loss") << '\n';
  o << "seeds=" << join(spec.seeds) << "\nablation=" << to_string(spec.ablation)
    << "\nval_fraction=" << fmt17(spec.val_fraction) << '\n';
  return o.str();
}

std::string spec_digest(const ExperimentSpec& spec) {
  const std::string text = canonical_spec(spec);
  unsigned char hash[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), hash);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (int i = 0; i < 8; ++i) {
    out += kHex[hash[i] >> 4];
    out += kHex[hash[i] & 0xF];
  }
  return out;
}

LoadedData load_dataset(const ExperimentSpec& spec) {
  LoadedData data;
  data.name = to_string(spec.dataset);
  switch (spec.dataset) {
    case DatasetKind::kSynthetic:
      data.domains = generate_synthetic_domains(spec.synth);
      data.num_classes = spec.synth.num_classes;
      break;
    case DatasetKind::kWindows: {
      WindowFile file = read_window_file(spec.data_root);
      data.num_classes = file.num_classes;
      for (auto& d : file.domains) {
        if (d.domain_id != kUnknownDomain) data.domains.push_back(std::move(d));
      }
      break;
    }
    case DatasetKind::kDsads:
    case DatasetKind::kUschad:
    case DatasetKind::kPamap2: {
      ImportedDataset imported = spec.dataset == DatasetKind::kDsads    ? import_dsads(spec.data_root)
                                 : spec.dataset == DatasetKind::kUschad ? import_uschad(spec.data_root)
                                                                        : import_pamap2(spec.data_root);
      data.num_classes = imported.num_classes;
      data.domains = std::move(imported.domains);
      break;
    }
  }
  return data;
}

TrainConfig apply_ablation(TrainConfig config, Ablation ablation) {
  switch (ablation) {
    case Ablation::kFull: break;
    case Ablation::kClsOnly: config.lambda = config.beta = 0.0; break;
    case Ablation::kClsDir: config.lambda = 0.0; break;
    case Ablation::kClsDsr: config.beta = 0.0; break;
  }
  return config;
}

std::vector<RunResult> execute_runs(const ExperimentSpec& spec, const LoadedData& data, bool evaluate_test) {
  if (spec.seeds.empty()) throw ConfigError("at least one seed is required");
  const auto targets = targets_for(spec, data.domains.size());
  std::vector<RunResult> results;
  for (int t : targets) {
    for (auto s : spec.seeds) {
      RunResult r;
      r.target = t;
      r.seed = s;
      results.push_back(std::move(r));
    }
  }
  const TrainConfig base = apply_ablation(spec.train, spec.ablation);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < results.size(); i = next++) {
      RunResult& r = results[i];
      try {
        const DGTask task = build_task(data.domains, data.num_classes, r.target, spec.val_fraction, r.seed);
        TrainConfig tc = base;
        tc.seed = r.seed;
        const ModelConfig mc = config_for_task(task, spec.model);
        TrainResult trained = train(task, mc, tc);
        r.log = std::move(trained.log);
        r.stats = task.stats;
        if (evaluate_test) r.report = evaluate_windows(trained.params, task.test_domain.windows);
        r.params = std::move(trained.params);
        r.ok = true;
        spdlog::info("{} target {} seed {}: best epoch {}, val F1 {:.4f}{}", data.name, r.target, r.seed,
                     r.log.best_epoch, r.log.best_val_weighted_f1,
                     r.report ? fmt::format(", test F1 {:.4f}", r.report->weighted_f1) : std::string());
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
        spdlog::error("{} target {} seed {} failed: {}", data.name, r.target, r.seed, e.what());
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(spec.workers, results.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  return results;
}

std::vector<AggregateRow> aggregate(const std::vector<RunResult>& runs, const std::vector<int>& targets,
                                    std::size_t num_seeds) {
  std::vector<AggregateRow> rows;
  // per-seed-position averages across targets, for the average row's spread
  std::vector<double> seed_sums(num_seeds, 0.0);
  std::vector<bool> seed_complete(num_seeds, true);
  double mean_of_means = 0.0;
  bool all_complete = true;
  std::size_t total_ok = 0, total_missing = 0;
  for (int t : targets) {
    AggregateRow row;
    row.target = std::to_string(t);
    std::vector<double> scores;
    std::size_t pos = 0;
    for (const auto& r : runs) {
      if (r.target != t) continue;
      if (r.ok && r.report) {
        scores.push_back(r.report->weighted_f1);
        if (pos < num_seeds) seed_sums[pos] += r.report->weighted_f1;
        ++row.runs_ok;
      } else {
        if (pos < num_seeds) seed_complete[pos] = false;
        ++row.runs_missing;
      }
      ++pos;
    }
    if (row.runs_missing == 0 && !scores.empty()) {
      double mean = 0.0;
      for (double s : scores) mean += s;
      row.mean = mean / static_cast<double>(scores.size());
      row.stddev = sample_std(scores);
      mean_of_means += *row.mean;
    } else {
      all_complete = false;
    }
    total_ok += row.runs_ok;
    total_missing += row.runs_missing;
    rows.push_back(std::move(row));
  }
  AggregateRow avg;
  avg.target = "average";
  avg.runs_ok = total_ok;
  avg.runs_missing = total_missing;
  if (all_complete && !targets.empty()) {
    avg.mean = mean_of_means / static_cast<double>(targets.size());
    std::vector<double> per_seed;
    for (std::size_t s = 0; s < num_seeds; ++s) {
      if (seed_complete[s]) per_seed.push_back(seed_sums[s] / static_cast<double>(targets.size()));
    }
    avg.stddev = sample_std(per_seed);
  }
  rows.push_back(std::move(avg));
  return rows;
}

std::optional<double> ExperimentResult::average() const {
  if (rows.empty()) return std::nullopt;
  return rows.back().mean;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "target,mean_weighted_f1,std_weighted_f1,runs_ok,runs_missing\n";
  for (const auto& r : rows) {
    out << r.target << ',' << (r.mean ? fmt17(*r.mean) : "NA") << ',' << fmt17(r.stddev) << ',' << r.runs_ok << ','
        << r.runs_missing << '\n';
  }
}

std::vector<AggregateRow> read_aggregate_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  std::vector<AggregateRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string target, mean, sd, ok, missing;
    std::getline(ss, target, ',');
    std::getline(ss, mean, ',');
    std::getline(ss, sd, ',');
    std::getline(ss, ok, ',');
    std::getline(ss, missing, ',');
    AggregateRow r;
    r.target = target;
    if (mean != "NA") r.mean = std::stod(mean);
    r.stddev = std::stod(sd);
    r.runs_ok = std::stoull(ok);
    r.runs_missing = std::stoull(missing);
    rows.push_back(std::move(r));
  }
  return rows;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  const LoadedData data = load_dataset(spec);
  const auto targets = targets_for(spec, data.domains.size());
  ExperimentResult result;
  result.directory = (fs::path(spec.out_dir) / spec_digest(spec)).string();
  prepare_directory(result.directory, spec.force);
  std::ofstream(result.directory + "/spec.txt", std::ios::trunc) << canonical_spec(spec);

  result.runs = execute_runs(spec, data, true);
  result.all_ok = true;
  for (const auto& r : result.runs) {
    write_run_files(r, result.directory + "/runs/" + run_name(r.target, r.seed));
    result.all_ok = result.all_ok && r.ok;
  }
  result.rows = aggregate(result.runs, targets, spec.seeds.size());
  write_aggregate_csv(result.rows, result.directory + "/aggregate.csv");

  // Mean fusion weights on each held-out domain; columns follow the source
  // domains in training order (the held-out index is skipped).
  std::ofstream weights(result.directory + "/fusion_weights.csv", std::ios::trunc);
  weights << "target,source_domains,mean_weights\n";
  for (int t : targets) {
    std::vector<double> mean;
    std::size_t n = 0;
    for (const auto& r : result.runs) {
      if (r.target != t || !r.ok || !r.report) continue;
      const auto& w = r.report->mean_fusion_weights;
      if (mean.empty()) mean.assign(w.size(), 0.0);
      for (std::size_t k = 0; k < w.size(); ++k) mean[k] += w[k];
      ++n;
    }
    std::vector<int> sources;
    for (std::size_t d = 0; d < data.domains.size(); ++d) {
      if (static_cast<int>(d) != t) sources.push_back(static_cast<int>(d));
    }
    for (double& v : mean) v /= static_cast<double>(std::max<std::size_t>(n, 1));
    weights << t << ",\"" << join(sources) << "\",\"" << (n ? join(mean) : std::string("NA")) << "\"\n";
  }
  return result;
}

std::vector<AggregateRow> recompute_aggregate(const std::string& directory) {
  const fs::path runs_dir = fs::path(directory) / "runs";
  if (!fs::is_directory(runs_dir)) throw IngestError(directory + " has no runs/ directory");
  const std::regex pattern(R"(target(\d+)_seed(\d+))");
  std::map<int, std::map<std::uint64_t, RunResult>> found;
  std::set<std::uint64_t> seeds;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    RunResult r;
    r.target = std::stoi(m[1].str());
    r.seed = std::stoull(m[2].str());
    std::ifstream status(entry.path() / "status.txt");
    std::string line;
    std::getline(status, line);
    r.ok = line == "ok";
    if (r.ok) {
      const Sidecar values = read_report_values(entry.path().string());
      EvalReport report;
      report.weighted_f1 = std::stod(values.at("weighted_f1"));
      r.report = report;
    }
    seeds.insert(r.seed);
    found[r.target][r.seed] = std::move(r);
  }
  std::vector<int> targets;
  std::vector<RunResult> runs;
  for (auto& [t, by_seed] : found) {
    targets.push_back(t);
    for (auto& [s, r] : by_seed) runs.push_back(std::move(r));
  }
  return aggregate(runs, targets, seeds.size());
}

SweepResult run_sweep(const ExperimentSpec& spec, const std::vector<double>& lambdas,
                      const std::vector<double>& betas) {
  if (lambdas.empty() || betas.empty()) throw ConfigError("sweep grids must be non-empty");
  SweepResult sweep;
  sweep.lambdas = lambdas;
  sweep.betas = betas;
  sweep.val_f1 = Matrix(lambdas.size(), betas.size());
  ExperimentSpec base = spec;
  std::ostringstream grid;
  grid << canonical_spec(spec) << "sweep.lambdas=" << join(lambdas) << "\nsweep.betas=" << join(betas) << '\n';
  {
    unsigned char hash[SHA256_DIGEST_LENGTH];
    const std::string text = grid.str();
    SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), hash);
    char hex[17];
    for (int i = 0; i < 8; ++i) std::snprintf(hex + 2 * i, 3, "%02x", hash[i]);
    sweep.directory = (fs::path(spec.out_dir) / ("sweep_" + std::string(hex))).string();
  }
  prepare_directory(sweep.directory, spec.force);

  const LoadedData data = load_dataset(spec);
  bool have_best = false;
  double best = 0.0;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    for (std::size_t j = 0; j < betas.size(); ++j) {
      ExperimentSpec point = base;
      point.train.lambda = lambdas[i];
      point.train.beta = betas[j];
      const auto runs = execute_runs(point, data, false);
      double sum = 0.0;
      std::size_t ok = 0;
      for (const auto& r : runs) {
        if (!r.ok) continue;
        sum += r.log.best_val_weighted_f1;
        ++ok;
      }
      const double score = ok == runs.size() && ok > 0 ? sum / static_cast<double>(ok) : std::nan("");
      sweep.val_f1(i, j) = score;
      if (!std::isnan(score) && (!have_best || score > best)) {
        have_best = true;
        best = score;
        sweep.best_lambda = i;
        sweep.best_beta = j;
      }
    }
  }
  {
    std::ofstream out(sweep.directory + "/sweep.csv", std::ios::trunc);
    out << "lambda\\beta";
    for (double b : betas) out << ',' << fmt17(b);
    out << '\n';
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      out << fmt17(lambdas[i]);
      for (std::size_t j = 0; j < betas.size(); ++j) {
        out << ',' << (std::isnan(sweep.val_f1(i, j)) ? std::string("NA") : fmt17(sweep.val_f1(i, j)));
      }
      out << '\n';
    }
  }
  if (!have_best) throw Error("every sweep point failed");
  ExperimentSpec chosen = base;
  chosen.train.lambda = lambdas[sweep.best_lambda];
  chosen.train.beta = betas[sweep.best_beta];
  chosen.out_dir = sweep.directory;
  chosen.force = true;
  sweep.best = run_experiment(chosen);
  std::ofstream(sweep.directory + "/best.txt", std::ios::trunc)
      << "lambda=" << fmt17(chosen.train.lambda) << "\nbeta=" << fmt17(chosen.train.beta)
      << "\nval_weighted_f1=" << fmt17(best) << "\nresult_dir=" << sweep.best.directory << '\n';
  return sweep;
}

SubstitutionResult run_distance_substitution(const ExperimentSpec& spec) {
  SubstitutionResult out;
  out.directory = (fs::path(spec.out_dir) / ("substitute_" + spec_digest(spec))).string();
  prepare_directory(out.directory, spec.force);
  for (auto kind : {DistanceKind::kMmd, DistanceKind::kCoral, DistanceKind::kAdversarial}) {
    ExperimentSpec s = spec;
    s.train.distance = kind;
    s.train.baseline = Baseline::kAffar;
    s.out_dir = out.directory;
    SubstitutionRow row{to_string(kind), std::nullopt, run_experiment(s)};
    row.average = row.result.average();
    out.rows.push_back(std::move(row));
  }
  {
    ExperimentSpec s = spec;
    s.train.baseline = Baseline::kErm;
    s.out_dir = out.directory;
    SubstitutionRow row{"erm", std::nullopt, run_experiment(s)};
    row.average = row.result.average();
    out.rows.push_back(std::move(row));
  }
  std::ofstream table(out.directory + "/substitution.csv", std::ios::trunc);
  table << "method,average_weighted_f1,std_weighted_f1,result_dir\n";
  for (const auto& r : out.rows) {
    table << r.method << ',' << (r.average ? fmt17(*r.average) : "NA") << ','
          << fmt17(r.result.rows.back().stddev) << ',' << fs::path(r.result.directory).filename().string() << '\n';
  }
  return out;
}

}  // namespace affar
