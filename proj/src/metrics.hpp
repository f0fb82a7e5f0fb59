#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "common.hpp"

namespace kfwc::metrics {

// Metric undefined on this input (e.g. AUROC with a single class present).
// Reports carry such metrics as absent rather than as 0.
class UndefinedMetric : public std::runtime_error {
 public:
  explicit UndefinedMetric(const std::string& msg) : std::runtime_error(msg) {}
};

// Probability that a random positive outranks a random negative; tied scores
// count 1/2 (Mann-Whitney). Throws UndefinedMetric without both classes.
double auroc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

struct MacroResult {
  double value = 0.0;
  std::vector<std::optional<double>> per_label;  // nullopt where undefined
  std::vector<int> undefined_labels;
};

// Unweighted mean of one-vs-rest AUROC over labels that are defined.
// scores[i][k] ranks sample i for label k; truth[i][k] in {0,1}.
MacroResult auroc_macro(const std::vector<std::vector<double>>& scores,
                        const std::vector<std::vector<int>>& truth);

struct PrfLabel {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  bool precision_zero_over_zero = false;  // 0/0 collapsed to 0
  bool recall_zero_over_zero = false;
  long tp = 0, fp = 0, fn = 0;
};

struct PrfResult {
  double precision = 0.0, recall = 0.0, f1 = 0.0;  // macro over labels
  std::vector<PrfLabel> per_label;
};

// Per-label binary precision/recall/F1, 0/0 defined as 0 and flagged.
PrfResult precision_recall_f1(const std::vector<std::vector<int>>& pred,
                              const std::vector<std::vector<int>>& truth);

// Multi-class convenience: one-vs-rest expansion over n_classes.
PrfResult precision_recall_f1_classes(const std::vector<int>& pred,
                                      const std::vector<int>& truth, int n_classes);

// Fraction of samples whose whole predicted flag set matches exactly.
double subset_accuracy(const std::vector<std::vector<int>>& pred,
                       const std::vector<std::vector<int>>& truth);

std::vector<double> per_flag_accuracy(const std::vector<std::vector<int>>& pred,
                                      const std::vector<std::vector<int>>& truth);

// (p_o - p_e) / (1 - p_e); returns 1 for perfect agreement even when the
// chance term degenerates.
double cohens_kappa(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes);

// --- evaluation batches & reports ---------------------------------------

struct SignEvalBatch {
  std::vector<std::string> ids;
  std::vector<std::array<double, 5>> probs;
  std::vector<std::array<int, 5>> truth;
};

struct DiagEvalBatch {
  std::vector<std::string> ids;
  std::vector<std::array<double, 3>> probs;  // softmax scores
  std::vector<int> truth;
};

struct MetricReport {
  std::string stage;  // "signs" or "diagnosis"
  // Headline metrics in report order; absent value = undefined.
  std::vector<std::pair<std::string, std::optional<double>>> metrics;
  size_t sample_count = 0;
  std::string config_hash;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;  // aligned-column table

  // stored detail payload
  std::map<std::string, std::vector<std::optional<double>>> per_label;
  std::vector<int> undefined_auroc_labels;
  std::vector<std::string> zero_over_zero_notes;
};

// Stage-appropriate metric sets: signs -> AUROC/Precision/Recall/F1/Acc,
// diagnosis -> AUROC/Precision/Recall/F1/Kappa.
MetricReport build_report(const SignEvalBatch& batch);
MetricReport build_report(const DiagEvalBatch& batch);

// Multi-row comparison table (ablation arms, merged runs).
std::string comparison_table(const std::vector<std::string>& row_names,
                             const std::vector<MetricReport>& rows);

}  // namespace kfwc::metrics
