#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "affar/data.hpp"

// Readers for the published layouts of DSADS, USC-HAD and PAMAP2. Subjects are
// grouped into domains consecutively in ID order; a subject list shorter than
// the full roster yields fewer (possibly partial) groups.
namespace affar {

struct ImportedDataset {
  std::string name;
  int num_classes = 0;
  std::vector<DomainDataset> domains;
  std::vector<std::vector<int>> groups;  // subject ids per domain
  std::size_t window_len = 0;
  std::size_t stride = 0;
  std::size_t excluded_rows = 0;  // rows dropped for out-of-vocabulary activity (PAMAP2)

  // Metadata for the window-file sidecar.
  Sidecar sidecar() const;
};

struct DsadsOptions {
  std::vector<int> subjects{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> activities{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  std::size_t group_size = 2;
};

// Layout: <root>[/data]/aNN/pS/sMM.txt, each file 125 rows x 45 comma-separated
// values. Each segment file becomes one 45x125 window.
ImportedDataset import_dsads(const std::string& root, const DsadsOptions& opts = {});

struct UschadOptions {
  std::vector<int> subjects{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
  std::vector<std::size_t> group_sizes{3, 3, 3, 3, 2};
  std::size_t window_len = 128;
  std::size_t stride = 64;
};

// Layout: <root>/SubjectN/aXtY.mat with a `sensor_readings` L x 6 matrix.
// Activity X in 1..12 maps to class X-1.
ImportedDataset import_uschad(const std::string& root, const UschadOptions& opts = {});

struct Pamap2Options {
  std::vector<int> subjects{1, 2, 3, 4, 5, 6, 7, 8};
  std::size_t group_size = 2;
  std::size_t window_len = 128;
  std::size_t stride = 64;
};

// PAMAP2 activity ids retained, in class order: lying, sitting, standing,
// walking, ascending stairs, descending stairs, vacuum cleaning, ironing.
inline constexpr int kPamap2Activities[] = {1, 2, 3, 4, 12, 13, 16, 17};

// Layout: <root>[/Protocol]/subject10N.dat, 54 whitespace-separated columns.
// Keeps the 12 motion channels (two accelerometers, gyroscope, magnetometer)
// of each of the 3 IMUs; NaN dropouts are linearly interpolated.
ImportedDataset import_pamap2(const std::string& root, const Pamap2Options& opts = {});

// Linear interpolation over NaN runs, edge-extended at both ends. Returns
// false when every entry is NaN.
bool interpolate_missing(std::vector<double>& series);

}  // namespace affar
