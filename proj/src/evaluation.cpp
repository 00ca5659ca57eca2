#include "affar/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "affar/error.hpp"
#include "affar/training.hpp"

namespace affar {
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion_matrix: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= num_classes ||
        static_cast<std::size_t>(predicted[i]) >= num_classes) {
      throw ConfigError("confusion_matrix: label out of range at index " + std::to_string(i));
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

PrfSummary precision_recall_f1(const ConfusionMatrix& confusion) {
  const std::size_t c = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != c) throw ShapeError("precision_recall_f1: confusion matrix is not square");
  }
  PrfSummary out;
  out.per_class.resize(c);
  std::size_t total = 0;
  for (std::size_t i = 0; i < c; ++i) {
    std::size_t row_sum = 0, col_sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row_sum += confusion[i][j];
      col_sum += confusion[j][i];
    }
    const double tp = static_cast<double>(confusion[i][i]);
    auto& m = out.per_class[i];
    m.support = row_sum;
    m.precision = ratio(tp, static_cast<double>(col_sum));
    m.recall = ratio(tp, static_cast<double>(row_sum));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    total += row_sum;
  }
  for (const auto& m : out.per_class) {
    const double w = ratio(static_cast<double>(m.support), static_cast<double>(total));
    out.weighted_precision += w * m.precision;
    out.weighted_recall += w * m.recall;
    out.weighted_f1 += w * m.f1;
    out.macro_f1 += m.f1;
  }
  if (c > 0) out.macro_f1 /= static_cast<double>(c);
  return out;
}

double weighted_f1(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes) {
  return precision_recall_f1(confusion_matrix(truth, predicted, num_classes)).weighted_f1;
}

std::pair<std::vector<RocPoint>, double> micro_roc_auc(const Matrix& probs, std::span<const int> truth) {
  if (probs.rows != truth.size()) throw ShapeError("micro_roc_auc: label count differs from probability rows");
  struct Scored {
    double score;
    bool positive;
  };
  std::vector<Scored> pairs;
  pairs.reserve(probs.rows * probs.cols);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    double sum = 0.0;
    for (double p : probs.row(r)) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("micro_roc_auc: row " + std::to_string(r) + " is not a probability vector");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ConfigError("micro_roc_auc: row " + std::to_string(r) + " does not sum to 1");
    }
    if (truth[r] < 0 || static_cast<std::size_t>(truth[r]) >= probs.cols) {
      throw ConfigError("micro_roc_auc: label out of range at row " + std::to_string(r));
    }
    for (std::size_t c = 0; c < probs.cols; ++c) {
      pairs.push_back({probs(r, c), static_cast<std::size_t>(truth[r]) == c});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  double positives = 0.0, negatives = 0.0;
  for (const auto& p : pairs) (p.positive ? positives : negatives) += 1.0;

  std::vector<RocPoint> roc{{0.0, 0.0}};
  double tp = 0.0, fp = 0.0, auc = 0.0;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].score == pairs[i].score) {
      (pairs[j].positive ? tp : fp) += 1.0;
      ++j;
    }
    const RocPoint next{ratio(fp, negatives), ratio(tp, positives)};
    auc += (next.fpr - roc.back().fpr) * (next.tpr + roc.back().tpr) / 2.0;
    roc.push_back(next);
    i = j;
  }
  return {std::move(roc), auc};
}

EvalReport evaluate_windows(const ModelParams& params, std::span<const SensorWindow> windows) {
  const std::size_t c = params.config().num_classes;
  const Inference inf = infer(params, windows);
  std::vector<int> truth;
  truth.reserve(windows.size());
  for (const auto& w : windows) truth.push_back(w.activity);

  EvalReport report;
  report.num_windows = windows.size();
  report.confusion = confusion_matrix(truth, inf.predictions, c);
  const PrfSummary prf = precision_recall_f1(report.confusion);
  report.per_class = prf.per_class;
  report.weighted_f1 = prf.weighted_f1;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < c; ++i) correct += report.confusion[i][i];
  report.accuracy = ratio(static_cast<double>(correct), static_cast<double>(windows.size()));
  if (!windows.empty()) {
    auto [roc, auc] = micro_roc_auc(inf.probs, truth);
    report.roc = std::move(roc);
    report.auc = auc;
  }
  report.mean_fusion_weights.assign(params.config().num_domains, 0.0);
  for (const auto& w : inf.weights) {
    for (std::size_t k = 0; k < w.size(); ++k) report.mean_fusion_weights[k] += w[k];
  }
  if (!inf.weights.empty()) {
    for (double& v : report.mean_fusion_weights) v /= static_cast<double>(inf.weights.size());
  }
  return report;
}

EvalReport evaluate(const ModelParams& params, const DomainDataset& dataset, const NormalizationStats& stats) {
  const DomainDataset normalized = normalize(dataset, stats);
  return evaluate_windows(params, normalized.windows);
}

void write_report(const EvalReport& report, const std::string& directory) {
  std::filesystem::create_directories(directory);
  {
    std::ofstream out(directory + "/report.txt", std::ios::trunc);
    out << "num_windows=" << report.num_windows << '\n';
    out << "accuracy=" << fmt17(report.accuracy) << '\n';
    out << "weighted_f1=" << fmt17(report.weighted_f1) << '\n';
    out << "auc=" << fmt17(report.auc) << '\n';
    out << "mean_fusion_weights=";
    for (std::size_t k = 0; k < report.mean_fusion_weights.size(); ++k) {
      out << (k ? "," : "") << fmt17(report.mean_fusion_weights[k]);
    }
    out << '\n';
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
      const auto& m = report.per_class[c];
      const std::string p = "class." + std::to_string(c) + ".";
      out << p << "precision=" << fmt17(m.precision) << '\n';
      out << p << "recall=" << fmt17(m.recall) << '\n';
      out << p << "f1=" << fmt17(m.f1) << '\n';
      out << p << "support=" << m.support << '\n';
    }
  }
  {
    std::ofstream out(directory + "/confusion.csv", std::ios::trunc);
    for (const auto& row : report.confusion) {
      for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
      out << '\n';
    }
  }
  {
    std::ofstream out(directory + "/roc.csv", std::ios::trunc);
    out << "fpr,tpr\n";
    for (const auto& p : report.roc) out << fmt17(p.fpr) << ',' << fmt17(p.tpr) << '\n';
  }
}

Sidecar read_report_values(const std::string& directory) { return read_sidecar(directory + "/report.txt"); }

ConfusionMatrix read_confusion_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  ConfusionMatrix m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::size_t> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stoull(cell));
    m.push_back(std::move(row));
  }
  return m;
}

}  // namespace affar
