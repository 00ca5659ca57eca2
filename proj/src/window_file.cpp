#include <cstdio>
#include <fstream>
#include <sstream>

#include "affar/binary_io.hpp"
#include "affar/data.hpp"
#include "affar/error.hpp"

namespace affar {
namespace {

constexpr std::uint32_t kWindowFileVersion = 1;
constexpr std::uint16_t kUnknownTag = 0xFFFF;

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    if (i) out += ',';
    out += buf;
  }
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

void write_window_file(const std::string& path, std::span<const DomainDataset> domains,
                       int num_classes) {
  std::uint64_t count = 0;
  std::uint32_t channels = 0, timesteps = 0, known_domains = 0;
  for (const auto& d : domains) {
    if (d.domain_id != kUnknownDomain) ++known_domains;
    for (const auto& w : d.windows) {
      if (count == 0) {
        channels = static_cast<std::uint32_t>(w.channels());
        timesteps = static_cast<std::uint32_t>(w.timesteps());
      } else if (w.channels() != channels || w.timesteps() != timesteps) {
        throw ShapeError("write_window_file: windows of different shapes");
      }
      ++count;
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write("DGW1", 4);
  io::write_u32(out, kWindowFileVersion);
  io::write_u32(out, channels);
  io::write_u32(out, timesteps);
  io::write_u64(out, count);
  io::write_u32(out, static_cast<std::uint32_t>(num_classes));
  io::write_u32(out, known_domains);
  for (const auto& d : domains) {
    for (const auto& w : d.windows) {
      io::write_u16(out, static_cast<std::uint16_t>(w.activity));
      io::write_u16(out, w.domain == kUnknownDomain ? kUnknownTag : static_cast<std::uint16_t>(w.domain));
      for (double v : w.values.data) io::write_f64(out, v);
    }
  }
  if (!out) throw Error("write failed for " + path);
}

WindowFile read_window_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open window file " + path);
  io::expect_magic(in, "DGW1", path);
  const auto version = io::read_u32(in, "version");
  if (version != kWindowFileVersion) {
    throw CorruptFileError(path + ": unsupported window file version " + std::to_string(version));
  }
  const auto channels = io::read_u32(in, "channels");
  const auto timesteps = io::read_u32(in, "timesteps");
  const auto count = io::read_u64(in, "window count");
  WindowFile file;
  file.num_classes = static_cast<int>(io::read_u32(in, "class count"));
  const auto known_domains = io::read_u32(in, "domain count");

  std::map<int, DomainDataset> by_domain;
  for (std::uint64_t i = 0; i < count; ++i) {
    SensorWindow w;
    w.activity = io::read_u16(in, "activity");
    const auto tag = io::read_u16(in, "domain");
    w.domain = tag == kUnknownTag ? kUnknownDomain : static_cast<int>(tag);
    if (w.activity >= file.num_classes) throw CorruptFileError(path + ": activity label out of range");
    if (w.domain != kUnknownDomain && w.domain >= static_cast<int>(known_domains)) {
      throw CorruptFileError(path + ": domain label out of range");
    }
    w.values = Matrix(channels, timesteps);
    for (double& v : w.values.data) v = io::read_f64(in, "window values");
    auto& d = by_domain[w.domain];
    d.domain_id = w.domain;
    d.windows.push_back(std::move(w));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptFileError(path + ": trailing bytes");
  // kUnknownDomain (-1) sorts first in the map; emit it last.
  for (auto& [id, d] : by_domain) {
    if (id == kUnknownDomain) continue;
    d.name = "domain" + std::to_string(id);
    file.domains.push_back(std::move(d));
  }
  if (auto it = by_domain.find(kUnknownDomain); it != by_domain.end()) {
    it->second.name = "unknown";
    file.domains.push_back(std::move(it->second));
  }
  return file;
}

void write_sidecar(const std::string& path, const Sidecar& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

Sidecar read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open sidecar " + path);
  Sidecar out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IngestError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void put_stats(Sidecar& sidecar, const NormalizationStats& stats) {
  sidecar["norm.mean"] = join_doubles(stats.mean);
  sidecar["norm.std"] = join_doubles(stats.stddev);
}

NormalizationStats get_stats(const Sidecar& sidecar) {
  auto mean = sidecar.find("norm.mean");
  auto sd = sidecar.find("norm.std");
  if (mean == sidecar.end() || sd == sidecar.end()) throw ConfigError("sidecar has no normalization stats");
  NormalizationStats stats{split_doubles(mean->second), split_doubles(sd->second)};
  if (stats.mean.size() != stats.stddev.size()) throw ConfigError("sidecar stats have inconsistent lengths");
  return stats;
}

}  // namespace affar
