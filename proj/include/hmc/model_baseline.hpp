#pragma once

// Pipeline of specialists: a generic category classifier routes each product
// to a sub-category model and attribute model(s) trained only on that
// category's products.
//
// Pipeline spec file (text, whitespace separated, paths relative to the file):
//   # hmc-pipeline 1
//   category * <checkpoint>
//   subcategory <category id> <checkpoint>
//   attribute <category id> <checkpoint>      (repeatable)
//   uncovered <category id>

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hmc/checkpoint.hpp"
#include "hmc/data.hpp"
#include "hmc/losses.hpp"
#include "hmc/metrics.hpp"
#include "hmc/model_unified.hpp"
#include "hmc/nn.hpp"
#include "hmc/taxonomy.hpp"
#include "hmc/training.hpp"

namespace hmc {

enum class OutputKind { multiclass, multilabel };

inline std::string_view output_kind_name(OutputKind k) {
  return k == OutputKind::multiclass ? "multiclass" : "multilabel";
}

inline OutputKind parse_output_kind(std::string_view s) {
  if (s == "multiclass") return OutputKind::multiclass;
  if (s == "multilabel") return OutputKind::multilabel;
  throw FormatError("unknown output kind: " + std::string(s));
}

/// Encoder, then dense(hidden)+ReLU, then dense(n_outputs) with a softmax or
/// sigmoid on top. The encoder settings come from a UnifiedModelConfig so
/// both approaches share one backbone definition.
class TemplateModel {
 public:
  TemplateModel() = default;

  TemplateModel(UnifiedModelConfig encoder_config, std::size_t n_outputs, OutputKind kind, Rng& rng,
                InitScheme scheme = InitScheme::glorot_uniform)
      : config_(std::move(encoder_config)), kind_(kind) {
    if (n_outputs == 0) throw ContractError("template model needs at least one output");
    config_.variant = Variant::final_model;
    config_.validate();
    encoder_ = Encoder(config_, 0, config_.stage_count(), "encoder", rng, scheme);
    hidden_ = DenseLayer("template.hidden", config_.backbone_dim, config_.hidden_dim, rng, 0.0, scheme);
    out_ = DenseLayer("template.out", config_.hidden_dim, n_outputs, rng, 0.0, scheme);
  }

  /// Parameters above the encoder.
  static std::size_t head_parameter_count(std::size_t backbone_dim, std::size_t hidden_dim, std::size_t n_outputs) {
    return DenseLayer::parameter_count(backbone_dim, hidden_dim) + DenseLayer::parameter_count(hidden_dim, n_outputs);
  }

  OutputKind kind() const { return kind_; }
  std::size_t outputs() const { return out_.out_features(); }
  const UnifiedModelConfig& encoder_config() const { return config_; }

  Var logits(Tape& tape, Var input) {
    if (input.value().rank() != 2 || input.value().shape()[1] != config_.input_dim()) {
      throw DimensionError("template model expects input rows of width " + std::to_string(config_.input_dim()));
    }
    return out_.forward(tape, relu(hidden_.forward(tape, encoder_.forward(tape, input))));
  }

  Var forward(Tape& tape, Var input) {
    Var z = logits(tape, input);
    return kind_ == OutputKind::multiclass ? softmax(z) : sigmoid(z);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder_.collect(out);
    for (DenseLayer* l : {&hidden_, &out_}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
    return out;
  }

  DenseLayer& output_layer() { return out_; }

  std::size_t head_parameters() const {
    return head_parameter_count(config_.backbone_dim, config_.hidden_dim, out_.out_features());
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    ck.config = UnifiedModel::config_entries(config_);
    ck.config.emplace_back("template.kind", std::string(output_kind_name(kind_)));
    ck.config.emplace_back("template.n_outputs", std::to_string(out_.out_features()));
    for (Parameter* p : parameters()) ck.tensors.emplace_back(p->name, p->value);
    return ck;
  }

  static TemplateModel from_checkpoint(const Checkpoint& ck) {
    const std::string* kind = ck.config_value("template.kind");
    const std::string* n = ck.config_value("template.n_outputs");
    if (!kind || !n) throw FormatError("checkpoint is not a template model");
    Rng rng(0);
    TemplateModel m(UnifiedModel::config_from_checkpoint(ck), std::stoul(*n), parse_output_kind(*kind), rng,
                    InitScheme::zeros);
    for (Parameter* p : m.parameters()) {
      const Tensor& t = ck.tensor(p->name);
      if (t.shape() != p->value.shape()) throw FormatError("checkpoint tensor " + p->name + " has the wrong shape");
      p->value = t;
    }
    return m;
  }

 private:
  UnifiedModelConfig config_;
  OutputKind kind_ = OutputKind::multiclass;
  Encoder encoder_;
  DenseLayer hidden_;
  DenseLayer out_;
};

/// A template model plus the global label index behind each of its outputs.
struct Specialist {
  TemplateModel model;
  std::vector<std::size_t> labels;
};

struct PipelineSpec {
  Specialist category;                                    // labels: every category
  std::map<std::size_t, Specialist> subcategory;          // by category index
  std::map<std::size_t, std::vector<Specialist>> attribute;
  std::set<std::size_t> uncovered;

  bool covers(std::size_t cat) const { return !uncovered.count(cat); }

  /// Every category is routed or explicitly uncovered; routed categories have
  /// a sub-category specialist and attribute specialists when attributes
  /// attach to them.
  void validate(const CategoryTree& tree) const {
    const std::size_t n_cat = tree.count(Level::category);
    if (category.model.outputs() != n_cat || category.labels.size() != n_cat) {
      throw ContractError("pipeline category model must output every category");
    }
    for (std::size_t c = 0; c < n_cat; ++c) {
      const std::string id = tree.node(Level::category, c).id;
      if (uncovered.count(c)) {
        if (subcategory.count(c) || attribute.count(c)) {
          throw ContractError("category " + id + " is both routed and marked uncovered");
        }
        continue;
      }
      auto it = subcategory.find(c);
      if (it == subcategory.end()) throw ContractError("category " + id + " has no route and is not marked uncovered");
      if (it->second.labels != tree.subcategories_of(c)) {
        throw ContractError("sub-category specialist for " + id + " has the wrong output space");
      }
      if (!tree.attributes_of(c).empty() && !attribute.count(c)) {
        throw ContractError("category " + id + " lacks an attribute specialist");
      }
      if (auto a = attribute.find(c); a != attribute.end()) {
        for (const Specialist& s : a->second) {
          for (std::size_t l : s.labels) {
            if (!tree.attribute_attached(l, c)) {
              throw ContractError("attribute specialist for " + id + " predicts an unattached attribute");
            }
          }
        }
      }
    }
  }
};

struct PipelineOutput {
  std::vector<std::size_t> category;                 // routed category (oracle or predicted)
  std::vector<std::optional<std::size_t>> subcategory;  // nullopt: uncovered
  Tensor attribute_scores;                           // rows x n_attributes, zero where no specialist speaks
  std::vector<bool> covered;

  double coverage() const {
    if (covered.empty()) return 0.0;
    return static_cast<double>(std::count(covered.begin(), covered.end(), true)) /
           static_cast<double>(covered.size());
  }
};

namespace detail {

inline Tensor run_batch(TemplateModel& m, const Dataset& ds, std::span<const std::size_t> idx) {
  Tape tape;
  return m.forward(tape, tape.constant(input_batch(ds, idx))).value();
}

}  // namespace detail

/// Routes every product in `ds`. With `oracle_category` the ground-truth
/// category replaces the category model's argmax, so downstream errors come
/// from the specialists alone.
inline PipelineOutput pipeline_predict(PipelineSpec& spec, const CategoryTree& tree, const Dataset& ds,
                                       bool oracle_category = false) {
  const std::size_t n = ds.records.size();
  if (n == 0) throw ContractError("nothing to predict");
  PipelineOutput out;
  out.category.resize(n);
  out.subcategory.assign(n, std::nullopt);
  out.covered.assign(n, false);
  out.attribute_scores = Tensor({n, tree.count(Level::attribute)});
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (oracle_category) {
    for (std::size_t i = 0; i < n; ++i) out.category[i] = ds.records[i].category;
  } else {
    const auto cat = argmax_rows(detail::run_batch(spec.category.model, ds, all));
    for (std::size_t i = 0; i < n; ++i) out.category[i] = spec.category.labels[cat[i]];
  }
  std::map<std::size_t, std::vector<std::size_t>> routed;
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.covers(out.category[i])) routed[out.category[i]].push_back(i);
  }
  for (auto& [c, idx] : routed) {
    auto sub = spec.subcategory.find(c);
    if (sub == spec.subcategory.end()) continue;
    const auto local = argmax_rows(detail::run_batch(sub->second.model, ds, idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.subcategory[idx[r]] = sub->second.labels[local[r]];
      out.covered[idx[r]] = true;
    }
    auto attr = spec.attribute.find(c);
    if (attr == spec.attribute.end()) continue;
    for (Specialist& s : attr->second) {
      const Tensor scores = detail::run_batch(s.model, ds, idx);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < s.labels.size(); ++j) out.attribute_scores.at(idx[r], s.labels[j]) = scores.at(r, j);
      }
    }
  }
  return out;
}

struct TemplateTargets {
  std::vector<std::size_t> classes;  // multiclass: local class per product
  Tensor labels;                     // multilabel: products x outputs
};

/// Mini-batch Adam on one template model; weights follow the unified
/// trainer (mean-1 inverse frequency or balanced inverse positive rate).
inline void train_template(TemplateModel& model, const Dataset& ds, const TemplateTargets& targets,
                           const TrainOptions& opt, std::uint64_t stream_index) {
  const std::size_t n = ds.records.size();
  if (n == 0) throw TrainingError("specialist training slice is empty");
  const std::size_t k = model.outputs();
  std::vector<double> weights;
  if (model.kind() == OutputKind::multiclass) {
    if (targets.classes.size() != n) throw DimensionError("template targets do not match the slice");
    std::vector<std::size_t> counts(k);
    for (std::size_t t : targets.classes) ++counts.at(t);
    weights = class_weights(smoothed_class_frequencies(counts));
  } else {
    if (targets.labels.rows() != n || targets.labels.cols() != k) {
      throw DimensionError("template targets do not match the slice");
    }
    std::vector<std::size_t> counts(k);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) counts[j] += targets.labels.at(r, j) > 0.5;
    }
    weights = label_weights(smoothed_positive_rates(counts, n));
  }
  Adam adam(AdamOptions{opt.learning_rate});
  auto params = model.parameters();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = detail::derived_rng(opt.seed, 11, stream_index);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += opt.batch_size) {
      const std::size_t end = std::min(n, start + opt.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor x = batch_inputs(ds, idx, opt.augment, opt.augment_probability, rng);
      Tape tape;
      Var probs = model.forward(tape, tape.constant(x));
      Var loss;
      if (model.kind() == OutputKind::multiclass) {
        std::vector<std::size_t> t;
        for (std::size_t i : idx) t.push_back(targets.classes[i]);
        loss = weighted_ce(probs, t, weights);
      } else {
        Tensor t({idx.size(), k});
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t j = 0; j < k; ++j) t.at(r, j) = targets.labels.at(idx[r], j);
        }
        loss = weighted_bce(probs, t, weights);
      }
      const Gradients g = tape.backward(loss);
      model.zero_grad();
      tape.accumulate_parameter_grads(g);
      adam.step(params);
    }
  }
}

struct PipelineTrainOptions {
  TrainOptions train;
  /// Categories to route; nullopt routes every category with training
  /// products. The rest are marked uncovered.
  std::optional<std::set<std::size_t>> categories;
  unsigned threads = 1;
};

/// Trains the category model on all of `train` and each specialist on its
/// category slice. Specialists train independently (optionally in parallel);
/// each draws from its own seeded stream, so results do not depend on the
/// thread count.
inline PipelineSpec train_pipeline(const CategoryTree& tree, const Dataset& train, const UnifiedModelConfig& encoder,
                                   const PipelineTrainOptions& opt) {
  const std::size_t n_cat = tree.count(Level::category);
  Rng init = detail::derived_rng(opt.train.seed, 12, 0);
  PipelineSpec spec;
  spec.category.model = TemplateModel(encoder, n_cat, OutputKind::multiclass, init);
  spec.category.labels.resize(n_cat);
  std::iota(spec.category.labels.begin(), spec.category.labels.end(), std::size_t{0});

  std::vector<std::vector<std::size_t>> slices(n_cat);
  for (std::size_t i = 0; i < train.records.size(); ++i) slices.at(train.records[i].category).push_back(i);

  struct Job {
    Specialist* specialist;
    Dataset slice;
    TemplateTargets targets;
    std::uint64_t stream;
  };
  std::vector<Job> jobs;
  {
    TemplateTargets t;
    for (const auto& r : train.records) t.classes.push_back(r.category);
    jobs.push_back({&spec.category, train, std::move(t), 0});
  }
  // Specialists are created before any job pointer is taken so map nodes
  // stay put.
  for (std::size_t c = 0; c < n_cat; ++c) {
    const bool wanted = opt.categories ? opt.categories->count(c) > 0 : true;
    if (!wanted || slices[c].empty()) {
      spec.uncovered.insert(c);
      continue;
    }
    Rng r = detail::derived_rng(opt.train.seed, 12, 1 + c);
    const auto subs = tree.subcategories_of(c);
    spec.subcategory[c] = Specialist{TemplateModel(encoder, subs.size(), OutputKind::multiclass, r), subs};
    const auto attrs = tree.attributes_of(c);
    if (!attrs.empty()) {
      spec.attribute[c].push_back(Specialist{TemplateModel(encoder, attrs.size(), OutputKind::multilabel, r), attrs});
    }
  }
  for (auto& [c, s] : spec.subcategory) {
    Dataset slice = subset(train, slices[c]);
    TemplateTargets t;
    for (const auto& rec : slice.records) {
      const auto pos = std::find(s.labels.begin(), s.labels.end(), rec.subcategory);
      if (pos == s.labels.end()) throw TrainingError("record " + rec.id + " violates the category tree");
      t.classes.push_back(static_cast<std::size_t>(pos - s.labels.begin()));
    }
    jobs.push_back({&s, std::move(slice), std::move(t), 1 + 2 * c});
  }
  for (auto& [c, list] : spec.attribute) {
    for (Specialist& s : list) {
      Dataset slice = subset(train, slices[c]);
      TemplateTargets t;
      t.labels = Tensor({slice.records.size(), s.labels.size()});
      for (std::size_t r = 0; r < slice.records.size(); ++r) {
        for (std::size_t a : slice.records[r].attributes) {
          const auto pos = std::find(s.labels.begin(), s.labels.end(), a);
          if (pos != s.labels.end()) t.labels.at(r, static_cast<std::size_t>(pos - s.labels.begin())) = 1.0;
        }
      }
      jobs.push_back({&s, std::move(slice), std::move(t), 2 + 2 * c});
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      train_template(jobs[j].specialist->model, jobs[j].slice, jobs[j].targets, opt.train, jobs[j].stream);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  spec.validate(tree);
  return spec;
}

// ---------------------------------------------------------------------------
// Spec file I/O

/// Writes one checkpoint per model into `dir` and the spec file
/// `<dir>/pipeline.txt`; returns the spec file path.
inline std::string save_pipeline(const std::string& dir, PipelineSpec& spec, const CategoryTree& tree,
                                 const std::vector<std::pair<std::string, std::string>>& extra_config = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream os;
  os << "# hmc-pipeline 1\n";
  auto save = [&](Specialist& s, const std::string& file) {
    Checkpoint ck = s.model.to_checkpoint();
    ck.config.insert(ck.config.end(), extra_config.begin(), extra_config.end());
    save_checkpoint((fs::path(dir) / file).string(), ck);
  };
  save(spec.category, "category.ckpt");
  os << "category * category.ckpt\n";
  for (auto& [c, s] : spec.subcategory) {
    const std::string id = tree.node(Level::category, c).id;
    save(s, "sub." + id + ".ckpt");
    os << "subcategory " << id << " sub." << id << ".ckpt\n";
  }
  for (auto& [c, list] : spec.attribute) {
    const std::string id = tree.node(Level::category, c).id;
    for (std::size_t j = 0; j < list.size(); ++j) {
      const std::string file = "attr." + id + "." + std::to_string(j) + ".ckpt";
      save(list[j], file);
      os << "attribute " << id << ' ' << file << '\n';
    }
  }
  for (std::size_t c : spec.uncovered) os << "uncovered " << tree.node(Level::category, c).id << '\n';
  const std::string path = (fs::path(dir) / "pipeline.txt").string();
  detail::write_file(path, os.str());
  return path;
}

/// Loads a spec file; specialist output spaces are rebuilt from the tree.
inline PipelineSpec load_pipeline(const std::string& path, const CategoryTree& tree) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(path).parent_path();
  std::istringstream in(detail::read_file(path));
  std::string line;
  std::size_t line_no = 0;
  PipelineSpec spec;
  bool have_category = false;
  auto load = [&](const std::string& file) {
    const fs::path p = fs::path(file).is_absolute() ? fs::path(file) : base / file;
    return TemplateModel::from_checkpoint(load_checkpoint(p.string()));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind, cat_id, file;
    ls >> kind >> cat_id;
    const std::string where = path + ":" + std::to_string(line_no);
    if (kind == "uncovered") {
      spec.uncovered.insert(tree.index_of(Level::category, cat_id));
      continue;
    }
    if (!(ls >> file)) throw FormatError(where + ": expected '<kind> <category> <checkpoint>'");
    if (kind == "category") {
      spec.category.model = load(file);
      spec.category.labels.resize(tree.count(Level::category));
      std::iota(spec.category.labels.begin(), spec.category.labels.end(), std::size_t{0});
      have_category = true;
    } else if (kind == "subcategory") {
      const std::size_t c = tree.index_of(Level::category, cat_id);
      spec.subcategory[c] = Specialist{load(file), tree.subcategories_of(c)};
    } else if (kind == "attribute") {
      const std::size_t c = tree.index_of(Level::category, cat_id);
      spec.attribute[c].push_back(Specialist{load(file), tree.attributes_of(c)});
    } else {
      throw FormatError(where + ": unknown entry kind '" + kind + "'");
    }
  }
  if (!have_category) throw FormatError(path + ": no category model");
  for (auto& [c, list] : spec.attribute) {
    for (const Specialist& s : list) {
      if (s.model.outputs() != s.labels.size()) {
        throw FormatError(path + ": attribute specialist output count does not match the tree");
      }
    }
  }
  for (const auto& [c, s] : spec.subcategory) {
    if (s.model.outputs() != s.labels.size()) {
      throw FormatError(path + ": sub-category specialist output count does not match the tree");
    }
  }
  spec.validate(tree);
  return spec;
}

}  // namespace hmc
