#include "affar/importers.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>

#include "affar/error.hpp"
#include "affar/mat_reader.hpp"

namespace fs = std::filesystem;

namespace affar {
namespace {

constexpr std::size_t kDsadsChannels = 45;
constexpr std::size_t kDsadsSegment = 125;
constexpr std::size_t kUschadChannels = 6;
constexpr std::size_t kPamap2Columns = 54;
constexpr std::size_t kPamap2ImuOffsets[] = {3, 20, 37};
constexpr std::size_t kPamap2ImuChannels = 12;  // skip temperature, keep acc16/acc6/gyro/mag

std::vector<std::vector<int>> group_subjects(const std::vector<int>& subjects,
                                             const std::vector<std::size_t>& sizes) {
  std::vector<int> sorted = subjects;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::vector<int>> groups;
  std::size_t pos = 0;
  for (std::size_t g = 0; pos < sorted.size(); ++g) {
    const std::size_t size = g < sizes.size() ? sizes[g] : sizes.back();
    std::vector<int> group;
    for (std::size_t i = 0; i < size && pos < sorted.size(); ++i) group.push_back(sorted[pos++]);
    groups.push_back(std::move(group));
  }
  return groups;
}

std::string group_name(const std::string& prefix, const std::vector<int>& group) {
  std::string name = prefix;
  for (std::size_t i = 0; i < group.size(); ++i) name += (i ? "_" : "_s") + std::to_string(group[i]);
  return name;
}

// Parses a delimited row of doubles. NaN tokens are accepted.
std::vector<double> parse_row(const std::string& line, char delim, const std::string& path,
                              std::size_t lineno) {
  std::vector<double> out;
  const char* p = line.c_str();
  const char* end = p + line.size();
  while (p < end) {
    while (p < end && (*p == delim || *p == ' ' || *p == '\t' || *p == '\r')) ++p;
    if (p >= end) break;
    char* stop = nullptr;
    const double v = std::strtod(p, &stop);
    if (stop == p) {
      throw IngestError(path + ":" + std::to_string(lineno) + ": malformed value");
    }
    out.push_back(v);
    p = stop;
    if (p < end && *p != delim && *p != ' ' && *p != '\t' && *p != '\r') {
      throw IngestError(path + ":" + std::to_string(lineno) + ": malformed value");
    }
  }
  return out;
}

std::string two_digits(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", v);
  return buf;
}

SensorWindow read_dsads_segment(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestError("missing DSADS segment file " + file.string());
  SensorWindow w;
  w.values = Matrix(kDsadsChannels, kDsadsSegment);
  std::string line;
  std::size_t t = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto row = parse_row(line, ',', file.string(), lineno);
    if (row.size() != kDsadsChannels) {
      throw IngestError(file.string() + ":" + std::to_string(lineno) + ": expected 45 values, got " +
                        std::to_string(row.size()));
    }
    if (t >= kDsadsSegment) {
      throw IngestError(file.string() + ":" + std::to_string(lineno) + ": more than 125 rows");
    }
    for (std::size_t c = 0; c < kDsadsChannels; ++c) {
      if (!std::isfinite(row[c])) {
        throw IngestError(file.string() + ":" + std::to_string(lineno) + ": non-finite value");
      }
      w.values(c, t) = row[c];
    }
    ++t;
  }
  if (t != kDsadsSegment) {
    throw IngestError(file.string() + ":" + std::to_string(lineno) + ": expected 125 rows, got " +
                      std::to_string(t));
  }
  return w;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::regex& pattern) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && std::regex_match(entry.path().filename().string(), pattern)) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

Sidecar ImportedDataset::sidecar() const {
  Sidecar s;
  s["dataset"] = name;
  s["num_classes"] = std::to_string(num_classes);
  s["num_domains"] = std::to_string(domains.size());
  s["window_len"] = std::to_string(window_len);
  s["stride"] = std::to_string(stride);
  s["excluded_rows"] = std::to_string(excluded_rows);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::string members;
    for (std::size_t i = 0; i < groups[g].size(); ++i) members += (i ? "," : "") + std::to_string(groups[g][i]);
    s["domain." + std::to_string(g) + ".subjects"] = members;
    s["domain." + std::to_string(g) + ".name"] = domains[g].name;
  }
  return s;
}

bool interpolate_missing(std::vector<double>& series) {
  std::size_t first = 0;
  while (first < series.size() && std::isnan(series[first])) ++first;
  if (first == series.size()) return series.empty();
  for (std::size_t i = 0; i < first; ++i) series[i] = series[first];
  std::size_t last_valid = first;
  for (std::size_t i = first + 1; i < series.size(); ++i) {
    if (std::isnan(series[i])) continue;
    if (i > last_valid + 1) {
      const double a = series[last_valid], b = series[i];
      const double span = static_cast<double>(i - last_valid);
      for (std::size_t j = last_valid + 1; j < i; ++j) {
        series[j] = a + (b - a) * static_cast<double>(j - last_valid) / span;
      }
    }
    last_valid = i;
  }
  for (std::size_t i = last_valid + 1; i < series.size(); ++i) series[i] = series[last_valid];
  return true;
}

ImportedDataset import_dsads(const std::string& root, const DsadsOptions& opts) {
  fs::path base(root);
  if (!fs::is_directory(base)) throw IngestError("DSADS root " + root + " is not a directory");
  if (fs::is_directory(base / "data")) base /= "data";
  if (opts.subjects.empty() || opts.activities.empty() || opts.group_size == 0) {
    throw ConfigError("DSADS import needs subjects, activities and a positive group size");
  }

  ImportedDataset ds;
  ds.name = "dsads";
  ds.num_classes = static_cast<int>(opts.activities.size());
  ds.window_len = kDsadsSegment;
  ds.stride = kDsadsSegment;
  ds.groups = group_subjects(opts.subjects, {opts.group_size});

  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    DomainDataset domain;
    domain.domain_id = static_cast<int>(g);
    domain.name = group_name("dsads", ds.groups[g]);
    for (std::size_t a = 0; a < opts.activities.size(); ++a) {
      const fs::path act_dir = base / ("a" + two_digits(opts.activities[a]));
      if (!fs::is_directory(act_dir)) throw IngestError("missing DSADS activity directory " + act_dir.string());
      for (int subject : ds.groups[g]) {
        const fs::path subj_dir = act_dir / ("p" + std::to_string(subject));
        if (!fs::is_directory(subj_dir)) {
          throw IngestError("missing DSADS subject " + std::to_string(subject) + ": " + subj_dir.string());
        }
        const auto files = sorted_files(subj_dir, std::regex(R"(s\d+\.txt)"));
        if (files.empty()) throw IngestError("no segment files in " + subj_dir.string());
        for (const auto& file : files) {
          SensorWindow w = read_dsads_segment(file);
          w.activity = static_cast<int>(a);
          w.domain = domain.domain_id;
          domain.windows.push_back(std::move(w));
        }
      }
    }
    ds.domains.push_back(std::move(domain));
  }
  spdlog::info("dsads: {} domains imported from {}", ds.domains.size(), base.string());
  return ds;
}

ImportedDataset import_uschad(const std::string& root, const UschadOptions& opts) {
  const fs::path base(root);
  if (!fs::is_directory(base)) throw IngestError("USC-HAD root " + root + " is not a directory");
  if (fs::is_empty(base)) throw IngestError("USC-HAD root " + root + " is empty");
  if (opts.subjects.empty() || opts.group_sizes.empty()) throw ConfigError("USC-HAD import needs subjects");

  ImportedDataset ds;
  ds.name = "uschad";
  ds.num_classes = 12;
  ds.window_len = opts.window_len;
  ds.stride = opts.stride;
  ds.groups = group_subjects(opts.subjects, opts.group_sizes);
  const std::regex trial_name(R"(a(\d+)t(\d+)\.mat)");

  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    DomainDataset domain;
    domain.domain_id = static_cast<int>(g);
    domain.name = group_name("uschad", ds.groups[g]);
    for (int subject : ds.groups[g]) {
      const fs::path dir = base / ("Subject" + std::to_string(subject));
      if (!fs::is_directory(dir)) {
        throw IngestError("missing USC-HAD subject " + std::to_string(subject) + ": " + dir.string());
      }
      const auto files = sorted_files(dir, trial_name);
      if (files.empty()) throw IngestError("no trial files in " + dir.string());
      for (const auto& file : files) {
        std::smatch m;
        const std::string fname = file.filename().string();
        std::regex_match(fname, m, trial_name);
        const int activity = std::stoi(m[1].str());
        if (activity < 1 || activity > 12) {
          throw IngestError(file.string() + ": activity " + std::to_string(activity) + " outside 1..12");
        }
        const auto vars = read_mat_file(file.string());
        const auto it = vars.find("sensor_readings");
        if (it == vars.end()) throw IngestError(file.string() + ": no sensor_readings variable");
        const MatVariable& readings = it->second;
        if (readings.cols != kUschadChannels) {
          throw IngestError(file.string() + ": sensor_readings has " + std::to_string(readings.cols) +
                            " columns, expected 6");
        }
        if (readings.rows < opts.window_len) {
          spdlog::warn("uschad: {} shorter than one window, skipped", file.string());
          continue;
        }
        Matrix signal(kUschadChannels, readings.rows);
        for (std::size_t t = 0; t < readings.rows; ++t) {
          for (std::size_t c = 0; c < kUschadChannels; ++c) {
            const double v = readings.at(t, c);
            if (!std::isfinite(v)) throw IngestError(file.string() + ": non-finite reading at row " + std::to_string(t + 1));
            signal(c, t) = v;
          }
        }
        const std::vector<int> labels(readings.rows, activity - 1);
        for (auto& w : window_stream(signal, labels, opts.window_len, opts.stride)) {
          w.domain = domain.domain_id;
          domain.windows.push_back(std::move(w));
        }
      }
    }
    if (domain.windows.empty()) throw IngestError("USC-HAD group " + domain.name + " produced no windows");
    ds.domains.push_back(std::move(domain));
  }
  spdlog::info("uschad: {} domains imported from {}", ds.domains.size(), base.string());
  return ds;
}

ImportedDataset import_pamap2(const std::string& root, const Pamap2Options& opts) {
  fs::path base(root);
  if (!fs::is_directory(base)) throw IngestError("PAMAP2 root " + root + " is not a directory");
  if (fs::is_directory(base / "Protocol")) base /= "Protocol";
  if (opts.subjects.empty() || opts.group_size == 0) throw ConfigError("PAMAP2 import needs subjects");

  ImportedDataset ds;
  ds.name = "pamap2";
  ds.num_classes = static_cast<int>(std::size(kPamap2Activities));
  ds.window_len = opts.window_len;
  ds.stride = opts.stride;
  ds.groups = group_subjects(opts.subjects, {opts.group_size});
  constexpr std::size_t channels = std::size(kPamap2ImuOffsets) * kPamap2ImuChannels;

  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    DomainDataset domain;
    domain.domain_id = static_cast<int>(g);
    domain.name = group_name("pamap2", ds.groups[g]);
    for (int subject : ds.groups[g]) {
      const fs::path file = base / ("subject" + std::to_string(100 + subject) + ".dat");
      std::ifstream in(file);
      if (!in) throw IngestError("missing PAMAP2 subject " + std::to_string(subject) + ": " + file.string());

      std::vector<std::vector<double>> series(channels);
      std::vector<int> labels;
      std::size_t excluded = 0;
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto row = parse_row(line, ' ', file.string(), lineno);
        if (row.size() != kPamap2Columns) {
          throw IngestError(file.string() + ":" + std::to_string(lineno) + ": expected 54 columns, got " +
                            std::to_string(row.size()));
        }
        int label = -1;
        if (std::isfinite(row[1])) {
          const int id = static_cast<int>(row[1]);
          const auto* hit = std::find(std::begin(kPamap2Activities), std::end(kPamap2Activities), id);
          if (hit != std::end(kPamap2Activities)) {
            label = static_cast<int>(hit - std::begin(kPamap2Activities));
          }
        }
        if (label < 0) ++excluded;
        labels.push_back(label);
        std::size_t ch = 0;
        for (std::size_t offset : kPamap2ImuOffsets) {
          for (std::size_t j = 1; j <= kPamap2ImuChannels; ++j) series[ch++].push_back(row[offset + j]);
        }
      }
      if (labels.empty()) throw IngestError(file.string() + ": no data rows");
      if (excluded > 0) {
        spdlog::info("pamap2: subject {}: {} rows with activities outside the retained set excluded", subject,
                     excluded);
      }
      ds.excluded_rows += excluded;
      if (labels.size() < opts.window_len) {
        spdlog::warn("pamap2: subject {} shorter than one window, skipped", subject);
        continue;
      }
      Matrix signal(channels, labels.size());
      for (std::size_t c = 0; c < channels; ++c) {
        if (!interpolate_missing(series[c])) {
          throw IngestError("PAMAP2 subject " + std::to_string(subject) + ": channel " + std::to_string(c) +
                            " is entirely missing");
        }
        std::copy(series[c].begin(), series[c].end(), signal.row(c).begin());
      }
      for (auto& w : window_stream(signal, labels, opts.window_len, opts.stride)) {
        w.domain = domain.domain_id;
        domain.windows.push_back(std::move(w));
      }
    }
    if (domain.windows.empty()) throw IngestError("PAMAP2 group " + domain.name + " produced no windows");
    ds.domains.push_back(std::move(domain));
  }
  spdlog::info("pamap2: {} domains imported from {} ({} rows excluded)", ds.domains.size(), base.string(),
               ds.excluded_rows);
  return ds;
}

}  // namespace affar
