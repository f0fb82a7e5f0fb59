#include "metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using nlohmann::json;

namespace kfwc::metrics {

double auroc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ContractError("auroc: scores/labels size mismatch");
  size_t n_pos = 0;
  for (int l : labels) n_pos += l != 0;
  const size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedMetric("auroc undefined: only one class present");

  // Rank-sum with average ranks for ties.
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[idx[k]] != 0) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MacroResult auroc_macro(const std::vector<std::vector<double>>& scores,
                        const std::vector<std::vector<int>>& truth) {
  if (scores.empty() || scores.size() != truth.size())
    throw ContractError("auroc_macro: empty or mismatched batch");
  const size_t k = scores[0].size();
  MacroResult res;
  res.per_label.resize(k);
  double sum = 0;
  size_t defined = 0;
  for (size_t label = 0; label < k; ++label) {
    std::vector<double> s(scores.size());
    std::vector<int> t(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != k || truth[i].size() != k)
        throw ContractError("auroc_macro: ragged batch");
      s[i] = scores[i][label];
      t[i] = truth[i][label];
    }
    try {
      res.per_label[label] = auroc_binary(s, t);
      sum += *res.per_label[label];
      ++defined;
    } catch (const UndefinedMetric&) {
      res.undefined_labels.push_back(static_cast<int>(label));
    }
  }
  if (defined == 0) throw UndefinedMetric("auroc_macro undefined: no label has both classes");
  res.value = sum / static_cast<double>(defined);
  return res;
}

PrfResult precision_recall_f1(const std::vector<std::vector<int>>& pred,
                              const std::vector<std::vector<int>>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw ContractError("precision_recall_f1: empty or mismatched batch");
  const size_t k = pred[0].size();
  PrfResult res;
  res.per_label.resize(k);
  for (size_t label = 0; label < k; ++label) {
    auto& pl = res.per_label[label];
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i].size() != k || truth[i].size() != k)
        throw ContractError("precision_recall_f1: ragged batch");
      const bool p = pred[i][label] != 0, t = truth[i][label] != 0;
      pl.tp += p && t;
      pl.fp += p && !t;
      pl.fn += !p && t;
    }
    if (pl.tp + pl.fp == 0) {
      pl.precision = 0.0;
      pl.precision_zero_over_zero = true;
    } else {
      pl.precision = static_cast<double>(pl.tp) / static_cast<double>(pl.tp + pl.fp);
    }
    if (pl.tp + pl.fn == 0) {
      pl.recall = 0.0;
      pl.recall_zero_over_zero = true;
    } else {
      pl.recall = static_cast<double>(pl.tp) / static_cast<double>(pl.tp + pl.fn);
    }
    pl.f1 = (pl.precision + pl.recall) > 0
                ? 2 * pl.precision * pl.recall / (pl.precision + pl.recall)
                : 0.0;
    res.precision += pl.precision;
    res.recall += pl.recall;
    res.f1 += pl.f1;
  }
  res.precision /= static_cast<double>(k);
  res.recall /= static_cast<double>(k);
  res.f1 /= static_cast<double>(k);
  return res;
}

PrfResult precision_recall_f1_classes(const std::vector<int>& pred,
                                      const std::vector<int>& truth, int n_classes) {
  if (pred.empty() || pred.size() != truth.size())
    throw ContractError("precision_recall_f1_classes: empty or mismatched batch");
  std::vector<std::vector<int>> p(pred.size(), std::vector<int>(n_classes, 0));
  std::vector<std::vector<int>> t(pred.size(), std::vector<int>(n_classes, 0));
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= n_classes || truth[i] < 0 || truth[i] >= n_classes)
      throw ContractError("class index out of range");
    p[i][pred[i]] = 1;
    t[i][truth[i]] = 1;
  }
  return precision_recall_f1(p, t);
}

double subset_accuracy(const std::vector<std::vector<int>>& pred,
                       const std::vector<std::vector<int>>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw ContractError("subset_accuracy: empty or mismatched batch");
  size_t exact = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    bool match = pred[i].size() == truth[i].size();
    for (size_t j = 0; match && j < pred[i].size(); ++j)
      match = (pred[i][j] != 0) == (truth[i][j] != 0);
    exact += match;
  }
  return static_cast<double>(exact) / static_cast<double>(pred.size());
}

std::vector<double> per_flag_accuracy(const std::vector<std::vector<int>>& pred,
                                      const std::vector<std::vector<int>>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw ContractError("per_flag_accuracy: empty or mismatched batch");
  const size_t k = pred[0].size();
  std::vector<double> acc(k, 0.0);
  for (size_t i = 0; i < pred.size(); ++i)
    for (size_t j = 0; j < k; ++j) acc[j] += (pred[i][j] != 0) == (truth[i][j] != 0);
  for (auto& a : acc) a /= static_cast<double>(pred.size());
  return acc;
}

double cohens_kappa(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes) {
  if (pred.empty() || pred.size() != truth.size())
    throw ContractError("cohens_kappa: empty or mismatched batch");
  const double n = static_cast<double>(pred.size());
  std::vector<double> row(n_classes, 0.0), col(n_classes, 0.0);
  double agree = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= n_classes || truth[i] < 0 || truth[i] >= n_classes)
      throw ContractError("class index out of range");
    row[pred[i]] += 1;
    col[truth[i]] += 1;
    agree += pred[i] == truth[i];
  }
  const double p_o = agree / n;
  if (p_o == 1.0) return 1.0;  // perfect agreement, even if p_e degenerates
  double p_e = 0;
  for (int c = 0; c < n_classes; ++c) p_e += (row[c] / n) * (col[c] / n);
  return (p_o - p_e) / (1.0 - p_e);
}

namespace {

json optional_to_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json MetricReport::to_json() const {
  json j;
  j["stage"] = stage;
  json m;
  for (const auto& [name, value] : metrics) m[name] = optional_to_json(value);
  j["metrics"] = m;
  json pl;
  for (const auto& [name, values] : per_label) {
    json arr = json::array();
    for (const auto& v : values) arr.push_back(optional_to_json(v));
    pl[name] = arr;
  }
  j["per_label"] = pl;
  j["undefined_auroc_labels"] = undefined_auroc_labels;
  j["zero_over_zero"] = zero_over_zero_notes;
  j["n"] = sample_count;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  return j;
}

std::string MetricReport::to_text() const {
  std::vector<std::string> names{"Model"};
  for (const auto& [name, _] : metrics) names.push_back(name);
  std::string out;
  char buf[64];
  for (const auto& n : names) {
    std::snprintf(buf, sizeof(buf), "%-12s", n.c_str());
    out += buf;
  }
  out += "\n";
  std::snprintf(buf, sizeof(buf), "%-12s", stage.c_str());
  out += buf;
  for (const auto& [_, value] : metrics) {
    if (value)
      std::snprintf(buf, sizeof(buf), "%-12.4f", *value);
    else
      std::snprintf(buf, sizeof(buf), "%-12s", "-");
    out += buf;
  }
  out += "\n";
  return out;
}

std::string comparison_table(const std::vector<std::string>& row_names,
                             const std::vector<MetricReport>& rows) {
  if (row_names.size() != rows.size() || rows.empty())
    throw ContractError("comparison_table: rows/names mismatch");
  size_t name_w = 8;
  for (const auto& n : row_names) name_w = std::max(name_w, n.size() + 2);
  std::string out;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(name_w), "Model");
  out += buf;
  for (const auto& [name, _] : rows[0].metrics) {
    std::snprintf(buf, sizeof(buf), "%-12s", name.c_str());
    out += buf;
  }
  out += "\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(name_w), row_names[r].c_str());
    out += buf;
    for (const auto& [_, value] : rows[r].metrics) {
      if (value)
        std::snprintf(buf, sizeof(buf), "%-12.4f", *value);
      else
        std::snprintf(buf, sizeof(buf), "%-12s", "-");
      out += buf;
    }
    out += "\n";
  }
  return out;
}

namespace {

void check_ids(const std::vector<std::string>& ids, size_t n) {
  if (n == 0) throw ContractError("empty evaluation batch");
  if (!ids.empty()) {
    if (ids.size() != n) throw ContractError("ids/scores size mismatch");
    std::set<std::string> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size()) throw ContractError("duplicate sample ids in batch");
  }
}

}  // namespace

MetricReport build_report(const SignEvalBatch& batch) {
  check_ids(batch.ids, batch.probs.size());
  if (batch.probs.size() != batch.truth.size()) throw ContractError("batch size mismatch");
  const size_t n = batch.probs.size();
  std::vector<std::vector<double>> scores(n, std::vector<double>(5));
  std::vector<std::vector<int>> truth(n, std::vector<int>(5));
  std::vector<std::vector<int>> pred(n, std::vector<int>(5));
  for (size_t i = 0; i < n; ++i) {
    for (int j = 0; j < 5; ++j) {
      scores[i][j] = batch.probs[i][j];
      truth[i][j] = batch.truth[i][j];
      pred[i][j] = batch.probs[i][j] > 0.5 ? 1 : 0;
    }
  }
  MetricReport rep;
  rep.stage = "signs";
  rep.sample_count = n;
  std::optional<double> auroc;
  try {
    MacroResult mr = auroc_macro(scores, truth);
    auroc = mr.value;
    rep.per_label["AUROC"] = mr.per_label;
    rep.undefined_auroc_labels = mr.undefined_labels;
  } catch (const UndefinedMetric&) {
    rep.per_label["AUROC"] = std::vector<std::optional<double>>(5);
    for (int j = 0; j < 5; ++j) rep.undefined_auroc_labels.push_back(j);
  }
  PrfResult prf = precision_recall_f1(pred, truth);
  for (size_t j = 0; j < prf.per_label.size(); ++j) {
    const auto& pl = prf.per_label[j];
    if (pl.precision_zero_over_zero)
      rep.zero_over_zero_notes.push_back("precision[" + std::to_string(j) + "]");
    if (pl.recall_zero_over_zero)
      rep.zero_over_zero_notes.push_back("recall[" + std::to_string(j) + "]");
    rep.per_label["Precision"].push_back(pl.precision);
    rep.per_label["Recall"].push_back(pl.recall);
    rep.per_label["F1"].push_back(pl.f1);
  }
  // The paper's "Acc" is not pinned down; subset accuracy is the headline and
  // per-flag accuracy rides along in per_label.
  const double acc = subset_accuracy(pred, truth);
  auto flag_acc = per_flag_accuracy(pred, truth);
  for (double a : flag_acc) rep.per_label["AccPerFlag"].push_back(a);
  rep.metrics = {{"AUROC", auroc},
                 {"Precision", prf.precision},
                 {"Recall", prf.recall},
                 {"F1", prf.f1},
                 {"Acc", acc}};
  return rep;
}

MetricReport build_report(const DiagEvalBatch& batch) {
  check_ids(batch.ids, batch.probs.size());
  if (batch.probs.size() != batch.truth.size()) throw ContractError("batch size mismatch");
  const size_t n = batch.probs.size();
  std::vector<std::vector<double>> scores(n, std::vector<double>(3));
  std::vector<std::vector<int>> truth_1h(n, std::vector<int>(3, 0));
  std::vector<int> pred(n);
  for (size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 0; j < 3; ++j) {
      scores[i][j] = batch.probs[i][j];
      if (batch.probs[i][j] > batch.probs[i][best]) best = j;
    }
    pred[i] = best;
    if (batch.truth[i] < 0 || batch.truth[i] > 2)
      throw ContractError("diagnosis truth out of range");
    truth_1h[i][batch.truth[i]] = 1;
  }
  MetricReport rep;
  rep.stage = "diagnosis";
  rep.sample_count = n;
  std::optional<double> auroc;
  try {
    MacroResult mr = auroc_macro(scores, truth_1h);
    auroc = mr.value;
    rep.per_label["AUROC"] = mr.per_label;
    rep.undefined_auroc_labels = mr.undefined_labels;
  } catch (const UndefinedMetric&) {
    rep.per_label["AUROC"] = std::vector<std::optional<double>>(3);
    for (int j = 0; j < 3; ++j) rep.undefined_auroc_labels.push_back(j);
  }
  PrfResult prf = precision_recall_f1_classes(pred, batch.truth, 3);
  for (size_t j = 0; j < prf.per_label.size(); ++j) {
    const auto& pl = prf.per_label[j];
    if (pl.precision_zero_over_zero)
      rep.zero_over_zero_notes.push_back("precision[" + std::to_string(j) + "]");
    if (pl.recall_zero_over_zero)
      rep.zero_over_zero_notes.push_back("recall[" + std::to_string(j) + "]");
    rep.per_label["Precision"].push_back(pl.precision);
    rep.per_label["Recall"].push_back(pl.recall);
    rep.per_label["F1"].push_back(pl.f1);
  }
  const double kappa = cohens_kappa(pred, batch.truth, 3);
  rep.metrics = {{"AUROC", auroc},
                 {"Precision", prf.precision},
                 {"Recall", prf.recall},
                 {"F1", prf.f1},
                 {"Kappa", kappa}};
  return rep;
}

}  // namespace kfwc::metrics
