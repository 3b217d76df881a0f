#pragma once

// EvalReport JSON document (field names are fixed):
//
//   {
//     "model": str, "products": int, "oracle_category": bool,
//     "coverage": number | null,              // baseline pipeline only
//     "category":    {"op", "or", "of1", "accuracy"},
//     "subcategory": {"op", "or", "of1", "accuracy"},
//     "attribute":   {"op", "or", "of1", "p_at_k", "r_at_k", "f1_at_k",
//                     "ap" (number | null), "evaluated_at_k",
//                     "mean_predicted", "mean_annotated", "threshold"},
//     "hidden_truth": null | {"p_at_k", "r_at_k", "recall", "annotated_recall",
//                             "mean_true"},
//     "consistency": {"inconsistency_rate", "pairs", "inconsistent_pairs"}
//   }
//
// Metric values are fractions in [0, 1]; the text table shows percentages.

#include <cstddef>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmc/data.hpp"
#include "hmc/metrics.hpp"
#include "hmc/model_baseline.hpp"
#include "hmc/taxonomy.hpp"
#include "hmc/training.hpp"

namespace hmc {

struct LevelMetrics {
  double op = 0.0, orr = 0.0, of1 = 0.0, accuracy = 0.0;
  friend bool operator==(const LevelMetrics&, const LevelMetrics&) = default;
};

struct AttributeMetrics {
  double op = 0.0, orr = 0.0, of1 = 0.0;
  double p_at_k = 0.0, r_at_k = 0.0, f1_at_k = 0.0;
  std::optional<double> ap;
  std::size_t evaluated_at_k = 0;
  double mean_predicted = 0.0;
  double mean_annotated = 0.0;
  double threshold = 0.75;
  friend bool operator==(const AttributeMetrics&, const AttributeMetrics&) = default;
};

/// Attribute metrics against the generator's hidden truth.
struct HiddenTruthMetrics {
  double p_at_k = 0.0, r_at_k = 0.0;
  double recall = 0.0;            // thresholded predictions vs hidden truth
  double annotated_recall = 0.0;  // thresholded predictions vs annotations
  double mean_true = 0.0;
  friend bool operator==(const HiddenTruthMetrics&, const HiddenTruthMetrics&) = default;
};

struct ConsistencyMetrics {
  double inconsistency_rate = 0.0;
  std::size_t pairs = 0;
  std::size_t inconsistent_pairs = 0;
  friend bool operator==(const ConsistencyMetrics&, const ConsistencyMetrics&) = default;
};

struct EvalReport {
  std::string model;
  std::size_t products = 0;
  bool oracle_category = false;
  std::optional<double> coverage;
  LevelMetrics category, subcategory;
  AttributeMetrics attribute;
  std::optional<HiddenTruthMetrics> hidden_truth;
  ConsistencyMetrics consistency;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalInputs {
  std::vector<std::size_t> category;     // predicted class per product
  std::vector<std::size_t> subcategory;
  Tensor attribute_scores;               // rows x n_attributes
};

/// Computes every metric for `ds` (annotations as ground truth). Hidden-truth
/// metrics are included when `with_hidden_truth` is set.
inline EvalReport evaluate_predictions(const std::string& model_name, const CategoryTree& tree, const Dataset& ds,
                                       const EvalInputs& in, double threshold, bool with_hidden_truth) {
  const std::size_t n = ds.records.size();
  if (in.category.size() != n || in.subcategory.size() != n || in.attribute_scores.rows() != n) {
    throw DimensionError("evaluate: prediction count does not match dataset");
  }
  EvalReport rep;
  rep.model = model_name;
  rep.products = n;
  std::vector<std::size_t> tc(n), ts(n);
  std::vector<LabelSet> ann(n), truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    tc[i] = ds.records[i].category;
    ts[i] = ds.records[i].subcategory;
    ann[i] = ds.records[i].attributes;
    truth[i] = ds.records[i].true_attributes;
  }
  auto level = [&](const std::vector<std::size_t>& t, const std::vector<std::size_t>& p, std::size_t k) {
    const PRF prf = overall_prf(t, p, k);
    return LevelMetrics{prf.precision, prf.recall, prf.f1, accuracy(t, p)};
  };
  rep.category = level(tc, in.category, tree.count(Level::category));
  rep.subcategory = level(ts, in.subcategory, tree.count(Level::subcategory));

  const auto predicted = threshold_predict(in.attribute_scores, threshold);
  const std::size_t n_attr = tree.count(Level::attribute);
  const PRF aprf = overall_prf_multilabel(ann, predicted, n_attr);
  const AtKResult ak = at_k(in.attribute_scores, ann);
  auto& am = rep.attribute;
  am.op = aprf.precision;
  am.orr = aprf.recall;
  am.of1 = aprf.f1;
  am.p_at_k = ak.precision;
  am.r_at_k = ak.recall;
  am.f1_at_k = ak.f1;
  am.evaluated_at_k = ak.evaluated;
  am.ap = average_precision(in.attribute_scores, ann);
  am.mean_predicted = mean_set_size(predicted);
  am.mean_annotated = mean_set_size(ann);
  am.threshold = threshold;

  if (with_hidden_truth) {
    const AtKResult hk = at_k(in.attribute_scores, truth);
    rep.hidden_truth = HiddenTruthMetrics{hk.precision, hk.recall, set_recall(predicted, truth),
                                          set_recall(predicted, ann), mean_set_size(truth)};
  }

  std::vector<LevelPrediction> preds(n);
  for (std::size_t i = 0; i < n; ++i) preds[i] = {in.category[i], in.subcategory[i], predicted[i]};
  const AuditResult audit = audit_cooccurrence(preds, tree);
  rep.consistency = {audit.rate, audit.pairs, audit.inconsistent};
  return rep;
}

/// Unified model report: argmax per multi-class level, thresholded sigmoid
/// scores for attributes.
inline EvalReport evaluate_unified(UnifiedModel& model, const CategoryTree& tree, const Dataset& ds, double threshold,
                                   bool with_hidden_truth) {
  Predictions p = predict_unified(model, ds);
  EvalInputs in{argmax_rows(p.category), argmax_rows(p.subcategory), std::move(p.attribute)};
  return evaluate_predictions(std::string(variant_name(model.config().variant)), tree, ds, in, threshold,
                              with_hidden_truth);
}

/// Pipeline report over covered products only; coverage is the covered
/// fraction of `ds`.
inline EvalReport evaluate_pipeline(PipelineSpec& spec, const CategoryTree& tree, const Dataset& ds, double threshold,
                                    bool oracle_category, bool with_hidden_truth) {
  const PipelineOutput out = pipeline_predict(spec, tree, ds, oracle_category);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < out.covered.size(); ++i) {
    if (out.covered[i]) kept.push_back(i);
  }
  if (kept.empty()) throw ContractError("pipeline covers none of the evaluated products");
  const Dataset covered = subset(ds, kept);
  EvalInputs in{{}, {}, Tensor({kept.size(), out.attribute_scores.cols()})};
  for (std::size_t r = 0; r < kept.size(); ++r) {
    in.category.push_back(out.category[kept[r]]);
    in.subcategory.push_back(*out.subcategory[kept[r]]);
    const auto src = out.attribute_scores.row(kept[r]);
    std::copy(src.begin(), src.end(), in.attribute_scores.row(r).begin());
  }
  EvalReport rep = evaluate_predictions("baseline", tree, covered, in, threshold, with_hidden_truth);
  rep.oracle_category = oracle_category;
  rep.coverage = out.coverage();
  return rep;
}

namespace detail {

inline nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> read_optional(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline nlohmann::ordered_json level_json(const LevelMetrics& m) {
  return {{"op", m.op}, {"or", m.orr}, {"of1", m.of1}, {"accuracy", m.accuracy}};
}

inline LevelMetrics level_from_json(const nlohmann::json& j) {
  return {j.at("op").get<double>(), j.at("or").get<double>(), j.at("of1").get<double>(),
          j.at("accuracy").get<double>()};
}

}  // namespace detail

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["products"] = r.products;
  j["oracle_category"] = r.oracle_category;
  j["coverage"] = detail::optional_number(r.coverage);
  j["category"] = detail::level_json(r.category);
  j["subcategory"] = detail::level_json(r.subcategory);
  nlohmann::ordered_json a;
  a["op"] = r.attribute.op;
  a["or"] = r.attribute.orr;
  a["of1"] = r.attribute.of1;
  a["p_at_k"] = r.attribute.p_at_k;
  a["r_at_k"] = r.attribute.r_at_k;
  a["f1_at_k"] = r.attribute.f1_at_k;
  a["ap"] = detail::optional_number(r.attribute.ap);
  a["evaluated_at_k"] = r.attribute.evaluated_at_k;
  a["mean_predicted"] = r.attribute.mean_predicted;
  a["mean_annotated"] = r.attribute.mean_annotated;
  a["threshold"] = r.attribute.threshold;
  j["attribute"] = a;
  if (r.hidden_truth) {
    const auto& h = *r.hidden_truth;
    nlohmann::ordered_json hj;
    hj["p_at_k"] = h.p_at_k;
    hj["r_at_k"] = h.r_at_k;
    hj["recall"] = h.recall;
    hj["annotated_recall"] = h.annotated_recall;
    hj["mean_true"] = h.mean_true;
    j["hidden_truth"] = hj;
  } else {
    j["hidden_truth"] = nullptr;
  }
  nlohmann::ordered_json c;
  c["inconsistency_rate"] = r.consistency.inconsistency_rate;
  c["pairs"] = r.consistency.pairs;
  c["inconsistent_pairs"] = r.consistency.inconsistent_pairs;
  j["consistency"] = c;
  return j;
}

inline std::string report_to_string(const EvalReport& r) { return report_json(r).dump(2) + "\n"; }

inline EvalReport parse_report(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.products = j.at("products").get<std::size_t>();
  r.oracle_category = j.at("oracle_category").get<bool>();
  r.coverage = detail::read_optional(j.at("coverage"));
  r.category = detail::level_from_json(j.at("category"));
  r.subcategory = detail::level_from_json(j.at("subcategory"));
  const auto& a = j.at("attribute");
  r.attribute.op = a.at("op").get<double>();
  r.attribute.orr = a.at("or").get<double>();
  r.attribute.of1 = a.at("of1").get<double>();
  r.attribute.p_at_k = a.at("p_at_k").get<double>();
  r.attribute.r_at_k = a.at("r_at_k").get<double>();
  r.attribute.f1_at_k = a.at("f1_at_k").get<double>();
  r.attribute.ap = detail::read_optional(a.at("ap"));
  r.attribute.evaluated_at_k = a.at("evaluated_at_k").get<std::size_t>();
  r.attribute.mean_predicted = a.at("mean_predicted").get<double>();
  r.attribute.mean_annotated = a.at("mean_annotated").get<double>();
  r.attribute.threshold = a.at("threshold").get<double>();
  if (!j.at("hidden_truth").is_null()) {
    const auto& h = j.at("hidden_truth");
    r.hidden_truth = HiddenTruthMetrics{h.at("p_at_k").get<double>(), h.at("r_at_k").get<double>(),
                                        h.at("recall").get<double>(), h.at("annotated_recall").get<double>(),
                                        h.at("mean_true").get<double>()};
  }
  const auto& c = j.at("consistency");
  r.consistency = {c.at("inconsistency_rate").get<double>(), c.at("pairs").get<std::size_t>(),
                   c.at("inconsistent_pairs").get<std::size_t>()};
  return r;
}

namespace detail {

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%8.2f", 100.0 * v);
  return buf;
}

inline std::string pct(const std::optional<double>& v) { return v ? pct(*v) : std::string("       -"); }

}  // namespace detail

/// Aligned text rendering: one block for the two multi-class levels, one for
/// attributes, then the audit lines. Values in percent.
inline std::string render_table(const EvalReport& r) {
  std::ostringstream os;
  os << "model: " << r.model << "  products: " << r.products;
  if (r.coverage) os << "  coverage:" << detail::pct(*r.coverage) << "%";
  if (r.oracle_category) os << "  (oracle category)";
  os << "\n\n";
  os << "level              OP       OR      OF1      Acc\n";
  auto level_row = [&](const char* name, const LevelMetrics& m) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%-12s", name);
    os << buf << detail::pct(m.op) << ' ' << detail::pct(m.orr) << ' ' << detail::pct(m.of1) << ' '
       << detail::pct(m.accuracy) << '\n';
  };
  level_row("category", r.category);
  level_row("subcategory", r.subcategory);
  os << '\n';
  os << "attribute          OP       OR      OF1      P@k      R@k     F1@k       AP\n";
  const auto& a = r.attribute;
  os << "            " << detail::pct(a.op) << ' ' << detail::pct(a.orr) << ' ' << detail::pct(a.of1) << ' '
     << detail::pct(a.p_at_k) << ' ' << detail::pct(a.r_at_k) << ' ' << detail::pct(a.f1_at_k) << ' '
     << detail::pct(a.ap) << '\n';
  char buf[160];
  std::snprintf(buf, sizeof buf, "\nthreshold %.2f  mean predicted attributes %.3f  mean annotated %.3f\n",
                a.threshold, a.mean_predicted, a.mean_annotated);
  os << buf;
  if (r.hidden_truth) {
    const auto& h = *r.hidden_truth;
    std::snprintf(buf, sizeof buf, "hidden truth: R@k %.2f%%  recall %.2f%% (annotations %.2f%%)  mean true %.3f\n",
                  100.0 * h.r_at_k, 100.0 * h.recall, 100.0 * h.annotated_recall, h.mean_true);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "inconsistent pairs: %zu / %zu (%.2f%%)\n", r.consistency.inconsistent_pairs,
                r.consistency.pairs, 100.0 * r.consistency.inconsistency_rate);
  os << buf;
  return os.str();
}

}  // namespace hmc
