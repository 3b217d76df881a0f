#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "hmc/data.hpp"
#include "hmc/losses.hpp"
#include "hmc/metrics.hpp"
#include "hmc/model_unified.hpp"
#include "hmc/nn.hpp"
#include "hmc/taxonomy.hpp"

namespace hmc {

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  std::uint64_t seed = 7;
  bool augment = true;  // image mode only
  double augment_probability = 0.5;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_category_accuracy = 0.0;
};

/// Laplace-smoothed frequencies, so a class unseen in the training slice
/// still receives a finite weight.
inline std::vector<double> smoothed_class_frequencies(const std::vector<std::size_t>& counts) {
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  const double k = static_cast<double>(counts.size());
  std::vector<double> f(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) f[i] = (static_cast<double>(counts[i]) + 1.0) / (n + k);
  return f;
}

inline std::vector<double> smoothed_positive_rates(const std::vector<std::size_t>& counts, std::size_t products) {
  std::vector<double> f(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    f[i] = (static_cast<double>(counts[i]) + 1.0) / (static_cast<double>(products) + 2.0);
  }
  return f;
}

/// Weights from training annotations: mean-1 inverse frequency for the two
/// multi-class levels, balanced inverse positive rate for attributes.
inline ClassWeights weights_from_dataset(const Dataset& ds, const CategoryTree& tree) {
  std::vector<std::size_t> cat(tree.count(Level::category)), sub(tree.count(Level::subcategory)),
      attr(tree.count(Level::attribute));
  for (const auto& r : ds.records) {
    ++cat.at(r.category);
    ++sub.at(r.subcategory);
    for (std::size_t a : r.attributes) ++attr.at(a);
  }
  ClassWeights w;
  w.category = class_weights(smoothed_class_frequencies(cat));
  w.subcategory = class_weights(smoothed_class_frequencies(sub));
  w.attribute = label_weights(smoothed_positive_rates(attr, ds.records.size()));
  return w;
}

inline Tensor attribute_targets(const Dataset& ds, std::span<const std::size_t> idx, std::size_t n_attributes,
                                bool hidden_truth = false) {
  Tensor t({idx.size(), n_attributes});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& rec = ds.records.at(idx[r]);
    for (std::size_t a : hidden_truth ? rec.true_attributes : rec.attributes) t.at(r, a) = 1.0;
  }
  return t;
}

/// Model inputs for a batch, augmenting images when requested.
inline Tensor batch_inputs(const Dataset& ds, std::span<const std::size_t> idx, bool augment_images, double p,
                           Rng& rng) {
  if (ds.mode != InputMode::image || !augment_images) return input_batch(ds, idx);
  std::vector<Image> images;
  images.reserve(idx.size());
  for (std::size_t i : idx) images.push_back(augment(ds.records[i].image, p, rng));
  return input_batch(ds, idx, &images);
}

struct BatchLoss {
  Var total;
  Var category, subcategory, attribute, l2;
  ForwardResult forward;
};

/// Records the full training objective for one batch.
inline BatchLoss unified_batch_loss(Tape& tape, UnifiedModel& model, const Tensor& inputs,
                                    std::span<const std::size_t> cat_targets,
                                    std::span<const std::size_t> sub_targets, const Tensor& attr_targets,
                                    const ClassWeights& weights, Mode mode, Rng& rng) {
  BatchLoss b;
  b.forward = model.forward(tape, tape.constant(inputs), mode, rng);
  b.category = weighted_ce(b.forward.probs.cat, cat_targets, weights.category);
  b.subcategory = weighted_ce(b.forward.probs.sub, sub_targets, weights.subcategory);
  b.attribute = weighted_bce(b.forward.probs.attr, attr_targets, weights.attribute);
  b.l2 = model.l2_term(tape);
  b.total = total_loss(b.category, b.subcategory, b.attribute, b.l2);
  return b;
}

/// Mini-batch Adam over shuffled epochs; deterministic given options.seed.
inline std::vector<EpochLog> train_unified(UnifiedModel& model, const CategoryTree& tree, const Dataset& train,
                                           const TrainOptions& opt,
                                           const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (train.records.empty()) throw TrainingError("training set is empty");
  const auto& cfg = model.config();
  if (cfg.n_categories != tree.count(Level::category) || cfg.n_subcategories != tree.count(Level::subcategory) ||
      cfg.n_attributes != tree.count(Level::attribute)) {
    throw TrainingError("model class counts do not match the category tree");
  }
  if (train.input_width() != cfg.input_dim()) {
    throw TrainingError("dataset input width " + std::to_string(train.input_width()) + " does not match model input " +
                        std::to_string(cfg.input_dim()));
  }
  const ClassWeights weights = weights_from_dataset(train, tree);
  Adam adam(AdamOptions{opt.learning_rate});
  auto params = model.parameters();
  std::vector<std::size_t> order(train.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochLog> history;
  Rng rng = detail::derived_rng(opt.seed, 10, 0);
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::size_t> cats, subs;
      for (std::size_t i : idx) {
        cats.push_back(train.records[i].category);
        subs.push_back(train.records[i].subcategory);
      }
      const Tensor x = batch_inputs(train, idx, opt.augment, opt.augment_probability, rng);
      const Tensor attrs = attribute_targets(train, idx, cfg.n_attributes);
      Tape tape;
      BatchLoss b = unified_batch_loss(tape, model, x, cats, subs, attrs, weights, Mode::train, rng);
      const Gradients g = tape.backward(b.total);
      model.zero_grad();
      tape.accumulate_parameter_grads(g);
      adam.step(params);
      loss_sum += b.total.value().item() * static_cast<double>(idx.size());
      seen += idx.size();
      const Tensor& p = b.forward.probs.cat.value();
      for (std::size_t r = 0; r < idx.size(); ++r) correct += rank_labels(p.row(r)).front() == cats[r];
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(seen),
                 static_cast<double>(correct) / static_cast<double>(seen)};
    history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return history;
}

/// Eval-mode probabilities for every record in `ds`.
struct Predictions {
  Tensor category;     // rows x n_categories
  Tensor subcategory;  // rows x n_subcategories
  Tensor attribute;    // rows x n_attributes (sigmoid scores)
};

inline Predictions predict_unified(UnifiedModel& model, const Dataset& ds, std::size_t batch_size = 256) {
  const auto& cfg = model.config();
  const std::size_t n = ds.records.size();
  if (n == 0) throw ContractError("nothing to predict");
  Predictions out{Tensor({n, cfg.n_categories}), Tensor({n, cfg.n_subcategories}), Tensor({n, cfg.n_attributes})};
  Rng unused(0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape;
    const ForwardResult f = model.forward(tape, tape.constant(input_batch(ds, idx)), Mode::eval, unused);
    auto copy_rows = [&](const Tensor& src, Tensor& dst) {
      std::copy(src.data().begin(), src.data().end(), dst.data().begin() + static_cast<long>(start * dst.cols()));
    };
    copy_rows(f.probs.cat.value(), out.category);
    copy_rows(f.probs.sub.value(), out.subcategory);
    copy_rows(f.probs.attr.value(), out.attribute);
  }
  return out;
}

inline std::vector<std::size_t> argmax_rows(const Tensor& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = rank_labels(probs.row(r)).front();
  return out;
}

}  // namespace hmc
