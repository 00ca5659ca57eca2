#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "affar/error.hpp"
#include "affar/evaluation.hpp"
#include "affar/experiment.hpp"
#include "affar/importers.hpp"

namespace fs = std::filesystem;
using namespace affar;

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !in.eof()) throw ConfigError("bad value '" + text + "' for " + key);
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("bad boolean '" + text + "' for " + key);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Settings {
  ExperimentSpec spec;
  std::vector<double> lambdas = affar::default_lambda_grid();
  std::vector<double> betas = affar::default_beta_grid();
};

using Setter = std::function<void(Settings&, const std::string&)>;

struct Key {
  std::string section;
  std::string name;
  std::string help;
  Setter set;
};

std::vector<Key> keys() {
  std::vector<Key> k;
  auto add = [&](std::string section, std::string name, std::string help, Setter set) {
    k.push_back({std::move(section), std::move(name), std::move(help), std::move(set)});
  };
  auto size_field = [](auto member) {
    return [member](Settings& s, const std::string& v) { member(s) = parse_number<std::size_t>("value", v); };
  };
  auto synth_vec = [](auto member) {
    return [member](Settings& s, const std::string& v) { member(s) = parse_list<double>("synth", v); };
  };

  add("data", "dataset", "dsads, uschad, pamap2, synthetic or windows",
      [](Settings& s, const std::string& v) { s.spec.dataset = dataset_kind_from_string(v); });
  add("data", "data_root", "dataset root directory, or a window file for --dataset windows",
      [](Settings& s, const std::string& v) { s.spec.data_root = v; });
  add("data", "val_fraction", "validation fraction per (domain, class)",
      [](Settings& s, const std::string& v) { s.spec.val_fraction = parse_number<double>("val_fraction", v); });

  add("synth", "num_domains", "synthetic domain count",
      [](Settings& s, const std::string& v) {
        const int n = parse_number<int>("num_domains", v);
        const auto fresh = shifted_synth_spec(n, s.spec.synth.seed);
        s.spec.synth.num_domains = n;
        s.spec.synth.amplitude = fresh.amplitude;
        s.spec.synth.phase = fresh.phase;
        s.spec.synth.noise = fresh.noise;
        s.spec.synth.drift = fresh.drift;
      });
  add("synth", "num_classes", "synthetic class count",
      [](Settings& s, const std::string& v) { s.spec.synth.num_classes = parse_number<int>("num_classes", v); });
  add("synth", "channels", "synthetic channel count",
      [](Settings& s, const std::string& v) { s.spec.synth.channels = parse_number<int>("channels", v); });
  add("synth", "timesteps", "synthetic window length",
      [](Settings& s, const std::string& v) { s.spec.synth.timesteps = parse_number<int>("timesteps", v); });
  add("synth", "windows_per_class", "synthetic windows per class and domain", [](Settings& s, const std::string& v) {
    s.spec.synth.windows_per_class = parse_number<int>("windows_per_class", v);
  });
  add("synth", "synth_seed", "synthetic generator seed",
      [](Settings& s, const std::string& v) { s.spec.synth.seed = parse_number<std::uint64_t>("synth_seed", v); });
  add("synth", "amplitude", "per-domain amplitudes", synth_vec([](Settings& s) -> auto& { return s.spec.synth.amplitude; }));
  add("synth", "phase", "per-domain phase offsets", synth_vec([](Settings& s) -> auto& { return s.spec.synth.phase; }));
  add("synth", "noise", "per-domain noise levels", synth_vec([](Settings& s) -> auto& { return s.spec.synth.noise; }));
  add("synth", "drift", "per-domain offsets", synth_vec([](Settings& s) -> auto& { return s.spec.synth.drift; }));

  add("model", "conv1_filters", "first conv filters", size_field([](Settings& s) -> auto& { return s.spec.model.conv1_filters; }));
  add("model", "conv1_kernel", "first conv kernel width", size_field([](Settings& s) -> auto& { return s.spec.model.conv1_kernel; }));
  add("model", "conv2_filters", "second conv filters", size_field([](Settings& s) -> auto& { return s.spec.model.conv2_filters; }));
  add("model", "conv2_kernel", "second conv kernel width", size_field([](Settings& s) -> auto& { return s.spec.model.conv2_kernel; }));
  add("model", "pool", "max-pool width", size_field([](Settings& s) -> auto& { return s.spec.model.pool; }));
  add("model", "branch_width", "branch feature width", size_field([](Settings& s) -> auto& { return s.spec.model.branch_width; }));
  add("model", "domain_hidden", "domain classifier hidden units", size_field([](Settings& s) -> auto& { return s.spec.model.domain_hidden; }));

  add("train", "lambda", "domain-specific loss weight",
      [](Settings& s, const std::string& v) { s.spec.train.lambda = parse_number<double>("lambda", v); });
  add("train", "beta", "domain-invariant loss weight",
      [](Settings& s, const std::string& v) { s.spec.train.beta = parse_number<double>("beta", v); });
  add("train", "learning_rate", "SGD learning rate",
      [](Settings& s, const std::string& v) { s.spec.train.learning_rate = parse_number<double>("learning_rate", v); });
  add("train", "momentum", "SGD momentum",
      [](Settings& s, const std::string& v) { s.spec.train.momentum = parse_number<double>("momentum", v); });
  add("train", "batch_size", "mini-batch size across all domains", size_field([](Settings& s) -> auto& { return s.spec.train.batch_size; }));
  add("train", "max_epochs", "epoch limit", size_field([](Settings& s) -> auto& { return s.spec.train.max_epochs; }));
  add("train", "patience", "early-stopping patience in epochs", size_field([](Settings& s) -> auto& { return s.spec.train.patience; }));
  add("train", "distance", "mmd, coral or adversarial",
      [](Settings& s, const std::string& v) { s.spec.train.distance = distance_kind_from_string(v); });
  add("train", "bandwidths", "fixed Gaussian bandwidths (default: median heuristic)",
      [](Settings& s, const std::string& v) { s.spec.train.kernel = KernelSpec::fixed(parse_list<double>("bandwidths", v)); });
  add("train", "baseline", "affar or erm", [](Settings& s, const std::string& v) {
    if (v == "affar") {
      s.spec.train.baseline = Baseline::kAffar;
    } else if (v == "erm") {
      s.spec.train.baseline = Baseline::kErm;
    } else {
      throw ConfigError("unknown baseline '" + v + "'");
    }
  });
  add("train", "fusion_teacher", "fuse with the true domain one-hot during training",
      [](Settings& s, const std::string& v) { s.spec.train.fusion_teacher = parse_bool("fusion_teacher", v); });
  add("train", "discriminator_hidden", "adversarial discriminator hidden units",
      size_field([](Settings& s) -> auto& { return s.spec.train.discriminator_hidden; }));
  add("train", "selection", "f1 or loss", [](Settings& s, const std::string& v) {
    if (v == "f1") {
      s.spec.train.selection = Selection::kWeightedF1;
    } else if (v == "loss") {
      s.spec.train.selection = Selection::kValidationLoss;
    } else {
      throw ConfigError("unknown selection '" + v + "'");
    }
  });

  add("experiment", "target", "held-out domain index or 'all'", [](Settings& s, const std::string& v) {
    if (v == "all") {
      s.spec.target.reset();
    } else {
      s.spec.target = parse_number<int>("target", v);
    }
  });
  add("experiment", "seeds", "comma-separated seeds, or a count N for 0..N-1", [](Settings& s, const std::string& v) {
    if (v.find(',') == std::string::npos) {
      const auto n = parse_number<std::uint64_t>("seeds", v);
      if (n == 0) throw ConfigError("seeds must be at least 1");
      s.spec.seeds.clear();
      for (std::uint64_t i = 0; i < n; ++i) s.spec.seeds.push_back(i);
    } else {
      s.spec.seeds = parse_list<std::uint64_t>("seeds", v);
    }
  });
  add("experiment", "ablation", "full, cls_only, cls+dir or cls+dsr",
      [](Settings& s, const std::string& v) { s.spec.ablation = ablation_from_string(v); });
  add("experiment", "out", "output directory",
      [](Settings& s, const std::string& v) { s.spec.out_dir = v; });
  add("experiment", "workers", "parallel runs", size_field([](Settings& s) -> auto& { return s.spec.workers; }));

  add("sweep", "lambdas", "lambda grid",
      [](Settings& s, const std::string& v) { s.lambdas = parse_list<double>("lambdas", v); });
  add("sweep", "betas", "beta grid", [](Settings& s, const std::string& v) { s.betas = parse_list<double>("betas", v); });
  return k;
}

std::string flag_name(const std::string& key) {
  std::string out = key;
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

// [section] headers, `key = value` lines, '#' or ';' comments.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::map<std::string, std::string> out;
  std::string line, section;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find_first_of("#;")));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(path + ":" + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    out[section + "." + trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

struct Command {
  CLI::App* app = nullptr;
  std::map<std::string, std::string> flag_values;  // key name -> raw flag text
  std::string config;
  bool force = false;
};

void add_spec_flags(Command& cmd, const std::vector<Key>& table) {
  cmd.app->add_option("--config", cmd.config, "key = value config file with [sections]");
  cmd.app->add_flag("--force", cmd.force, "overwrite an existing result directory");
  for (const auto& key : table) {
    cmd.app->add_option("--" + flag_name(key.name), cmd.flag_values[key.name], key.help)->group(key.section);
  }
}

Settings resolve(const Command& cmd, const std::vector<Key>& table) {
  Settings s;
  std::map<std::string, const Key*> by_name;
  for (const auto& key : table) by_name[key.section + "." + key.name] = &key;
  if (!cmd.config.empty()) {
    for (const auto& [name, value] : read_config(cmd.config)) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw ConfigError("unknown config key '" + name + "' in " + cmd.config);
      it->second->set(s, value);
    }
  }
  for (const auto& key : table) {
    if (cmd.app->count("--" + flag_name(key.name)) > 0) key.set(s, cmd.flag_values.at(key.name));
  }
  s.spec.force = cmd.force;
  return s;
}

void print_aggregate(const std::vector<AggregateRow>& rows) {
  std::cout << "target,mean_weighted_f1,std_weighted_f1,runs_ok,runs_missing\n";
  for (const auto& r : rows) {
    std::cout << r.target << ',' << (r.mean ? fmt17(*r.mean) : "NA") << ',' << fmt17(r.stddev) << ',' << r.runs_ok
              << ',' << r.runs_missing << '\n';
  }
}

bool rows_equal(const std::vector<AggregateRow>& a, const std::vector<AggregateRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].target != b[i].target || a[i].mean != b[i].mean || a[i].stddev != b[i].stddev ||
        a[i].runs_ok != b[i].runs_ok || a[i].runs_missing != b[i].runs_missing) {
      return false;
    }
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive feature fusion for domain-generalized activity recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  const auto table = keys();

  Command import_cmd{app.add_subcommand("import", "convert a raw dataset into a window file")};
  std::string import_out;
  import_cmd.app->add_option("--dataset", import_cmd.flag_values["dataset"], "dsads, uschad or pamap2")->required();
  import_cmd.app->add_option("--data-root", import_cmd.flag_values["data_root"], "dataset root")->required();
  import_cmd.app->add_option("--out", import_out, "window file to write (metadata goes to <out>.meta)")->required();

  Command train_cmd{app.add_subcommand("train", "leave-one-domain-out training and test evaluation over seeds")};
  add_spec_flags(train_cmd, table);

  Command eval_cmd{app.add_subcommand("eval", "evaluate saved parameters on one domain")};
  std::string eval_params, eval_task, eval_out;
  add_spec_flags(eval_cmd, table);
  eval_cmd.app->add_option("--params", eval_params, "params.dgm from a run directory")->required();
  eval_cmd.app->add_option("--task", eval_task, "task.txt holding the run's normalization stats")->required();
  eval_cmd.app->add_option("--report", eval_out, "directory for report.txt, confusion.csv and roc.csv");

  Command sweep_cmd{app.add_subcommand("sweep", "grid over lambda and beta on validation data")};
  add_spec_flags(sweep_cmd, table);

  Command subst_cmd{app.add_subcommand("substitute", "compare mmd, coral and adversarial distances against ERM")};
  add_spec_flags(subst_cmd, table);

  Command report_cmd{app.add_subcommand("report", "recompute the aggregate table from a result directory")};
  std::string report_dir;
  bool report_check = false;
  report_cmd.app->add_option("dir", report_dir, "result directory")->required();
  report_cmd.app->add_flag("--check", report_check, "exit 1 if aggregate.csv differs from the recomputed table");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*import_cmd.app) {
      const auto kind = dataset_kind_from_string(import_cmd.flag_values["dataset"]);
      const auto& root = import_cmd.flag_values["data_root"];
      ImportedDataset data;
      switch (kind) {
        case DatasetKind::kDsads: data = import_dsads(root); break;
        case DatasetKind::kUschad: data = import_uschad(root); break;
        case DatasetKind::kPamap2: data = import_pamap2(root); break;
        default: throw ConfigError("import supports dsads, uschad and pamap2");
      }
      if (fs::path(import_out).has_parent_path()) fs::create_directories(fs::path(import_out).parent_path());
      write_window_file(import_out, data.domains, data.num_classes);
      write_sidecar(import_out + ".meta", data.sidecar());
      std::size_t n = 0;
      for (const auto& d : data.domains) n += d.windows.size();
      std::cout << "wrote " << n << " windows in " << data.domains.size() << " domains to " << import_out << '\n';
      return 0;
    }
    if (*train_cmd.app) {
      const Settings s = resolve(train_cmd, table);
      const auto result = run_experiment(s.spec);
      print_aggregate(result.rows);
      std::cout << "results: " << result.directory << '\n';
      return result.all_ok ? 0 : 1;
    }
    if (*eval_cmd.app) {
      const Settings s = resolve(eval_cmd, table);
      if (!s.spec.target) throw ConfigError("eval needs --target");
      const LoadedData data = load_dataset(s.spec);
      if (*s.spec.target < 0 || static_cast<std::size_t>(*s.spec.target) >= data.domains.size()) {
        throw ConfigError("target " + std::to_string(*s.spec.target) + " out of range");
      }
      const ModelParams params = load_params(eval_params);
      const auto stats = get_stats(read_sidecar(eval_task));
      DomainDataset domain = data.domains[static_cast<std::size_t>(*s.spec.target)];
      for (auto& w : domain.windows) w.domain = kUnknownDomain;
      const EvalReport report = evaluate(params, domain, stats);
      if (!eval_out.empty()) write_report(report, eval_out);
      std::cout << "weighted_f1=" << fmt17(report.weighted_f1) << "\naccuracy=" << fmt17(report.accuracy)
                << "\nauc=" << fmt17(report.auc) << '\n';
      return 0;
    }
    if (*sweep_cmd.app) {
      const Settings s = resolve(sweep_cmd, table);
      const auto sweep = run_sweep(s.spec, s.lambdas, s.betas);
      std::cout << "best lambda=" << sweep.lambdas[sweep.best_lambda] << " beta=" << sweep.betas[sweep.best_beta]
                << " val_weighted_f1=" << sweep.val_f1(sweep.best_lambda, sweep.best_beta) << '\n';
      print_aggregate(sweep.best.rows);
      std::cout << "results: " << sweep.directory << '\n';
      return sweep.best.all_ok ? 0 : 1;
    }
    if (*subst_cmd.app) {
      const Settings s = resolve(subst_cmd, table);
      const auto result = run_distance_substitution(s.spec);
      bool ok = true;
      std::cout << "method,average_weighted_f1\n";
      for (const auto& row : result.rows) {
        std::cout << row.method << ',' << (row.average ? fmt17(*row.average) : "NA") << '\n';
        ok = ok && row.result.all_ok;
      }
      std::cout << "results: " << result.directory << '\n';
      return ok ? 0 : 1;
    }
    if (*report_cmd.app) {
      const auto rows = recompute_aggregate(report_dir);
      print_aggregate(rows);
      if (report_check) {
        const auto stored = read_aggregate_csv(report_dir + "/aggregate.csv");
        if (!rows_equal(rows, stored)) {
          std::cerr << "aggregate.csv does not match the per-run files\n";
          return 1;
        }
      }
      bool complete = true;
      for (const auto& r : rows) complete = complete && r.runs_missing == 0;
      return complete ? 0 : 1;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
