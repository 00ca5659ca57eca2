#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "affar/data.hpp"
#include "affar/matrix.hpp"
#include "affar/network.hpp"

namespace affar {

// Rows are true classes, columns predicted classes.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct PrfSummary {
  std::vector<ClassMetrics> per_class;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double macro_f1 = 0.0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct EvalReport {
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;
  std::vector<RocPoint> roc;
  double auc = 0.0;
  std::size_t num_windows = 0;
  std::vector<double> mean_fusion_weights;
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes);

// 0/0 cells are 0; aggregates weight classes by their support.
PrfSummary precision_recall_f1(const ConfusionMatrix& confusion);

double weighted_f1(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes);

// Micro-averaged one-vs-rest ROC over all (sample, class) pairs with a
// trapezoidal AUC. Tied scores form a single threshold step.
std::pair<std::vector<RocPoint>, double> micro_roc_auc(const Matrix& probs, std::span<const int> truth);

// Metrics for windows that are already normalized.
EvalReport evaluate_windows(const ModelParams& params, std::span<const SensorWindow> windows);

// Normalizes with `stats`, infers, and assembles every metric.
EvalReport evaluate(const ModelParams& params, const DomainDataset& dataset, const NormalizationStats& stats);

// report.txt keys, in order: num_windows, accuracy, weighted_f1, auc,
// mean_fusion_weights, then class.<c>.{precision,recall,f1,support}.
// Also writes confusion.csv (C x C) and roc.csv (fpr,tpr).
void write_report(const EvalReport& report, const std::string& directory);
Sidecar read_report_values(const std::string& directory);
ConfusionMatrix read_confusion_csv(const std::string& path);

}  // namespace affar
