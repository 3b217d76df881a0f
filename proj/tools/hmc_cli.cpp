// hmc: generate synthetic catalogues, train and evaluate the unified
// classifier and the specialist pipeline, and audit or account for models.
//
//   hmc <command> [--config PATH] [--seed N] [--variant V] [--threshold F]
//                 [--oracle-category] [--paper-defaults] [key=value ...]
//
// Results go to stdout (tables) and to the `report` path (JSON) when set.
// Diagnostics go to stderr; the exit code is 0 only on success.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hmc/data.hpp"
#include "hmc/model_baseline.hpp"
#include "hmc/model_unified.hpp"
#include "hmc/report.hpp"
#include "hmc/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using hmc::cli::RunConfig;
using nlohmann::ordered_json;

namespace {

// Model-initialisation stream; data streams live in the library.
constexpr std::uint64_t kInitStream = 4;

std::string with_commas(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_report(const RunConfig& rc, const ordered_json& j) {
  if (rc.report.empty()) return;
  if (const fs::path parent = fs::path(rc.report).parent_path(); !parent.empty()) fs::create_directories(parent);
  hmc::detail::write_file(rc.report, j.dump(2) + "\n");
}

bool is_baseline(const RunConfig& rc) { return rc.variant == "baseline"; }

std::vector<std::size_t> parse_channels(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : hmc::detail::split(text, ',')) {
    if (!part.empty()) out.push_back(hmc::cli::detail::parse_value<std::size_t>("conv_channels", part));
  }
  return out;
}

struct Inputs {
  hmc::CategoryTree tree;
  hmc::Dataset ds;
};

/// Loads tree and manifest and checks every record against the tree.
Inputs load_inputs(const RunConfig& rc) {
  Inputs in;
  in.tree = hmc::CategoryTree::load(rc.tree);
  if (const auto v = hmc::validate_tree(in.tree); !v.empty()) {
    throw hmc::FormatError("tree " + rc.tree + " is invalid: " + v.front().message);
  }
  in.ds = hmc::read_dataset(rc.manifest, in.tree);
  for (const auto& r : in.ds.records) {
    if (!hmc::is_consistent(in.tree, r.category, r.subcategory, r.attributes).consistent) {
      throw hmc::FormatError("manifest record " + r.id + " is inconsistent with tree " + rc.tree);
    }
  }
  if (in.ds.records.empty()) throw hmc::FormatError("manifest " + rc.manifest + " has no records");
  return in;
}

hmc::UnifiedModelConfig model_config(const RunConfig& rc, const hmc::CategoryTree& tree, const hmc::Dataset& ds) {
  hmc::UnifiedModelConfig c;
  c.variant = is_baseline(rc) ? hmc::Variant::final_model : hmc::parse_variant(rc.variant);
  c.input_mode = ds.mode;
  c.backbone_dim = ds.mode == hmc::InputMode::features ? ds.feature_dim : c.backbone_dim;
  c.image = ds.image;
  c.conv_channels = parse_channels(rc.conv_channels);
  c.hidden_dim = rc.hidden_dim;
  c.n_categories = tree.count(hmc::Level::category);
  c.n_subcategories = tree.count(hmc::Level::subcategory);
  c.n_attributes = tree.count(hmc::Level::attribute);
  c.dropout = rc.dropout;
  c.l2_factor = rc.l2_factor;
  c.encoder_stages = rc.encoder_stages;
  c.validate();
  return c;
}

hmc::TrainOptions train_options(const RunConfig& rc) {
  hmc::TrainOptions t;
  t.epochs = rc.epochs;
  t.batch_size = rc.batch_size;
  t.learning_rate = rc.learning_rate;
  t.seed = rc.seed;
  t.augment = rc.augment;
  t.augment_probability = rc.augment_probability;
  if (t.batch_size == 0) throw hmc::ContractError("batch_size must be positive");
  return t;
}

std::vector<std::pair<std::string, std::string>> run_entries(const RunConfig& rc, std::size_t products) {
  return {{"train.seed", std::to_string(rc.seed)},
          {"train.epochs", std::to_string(rc.epochs)},
          {"train.batch_size", std::to_string(rc.batch_size)},
          {"train.learning_rate", hmc::cli::detail::format_value(rc.learning_rate)},
          {"train.products", std::to_string(products)}};
}

hmc::UnifiedModel load_unified(const RunConfig& rc, const hmc::CategoryTree& tree, const hmc::Dataset& ds) {
  hmc::UnifiedModel m = hmc::UnifiedModel::from_checkpoint(hmc::load_checkpoint(rc.checkpoint));
  const auto& c = m.config();
  if (c.n_categories != tree.count(hmc::Level::category) || c.n_subcategories != tree.count(hmc::Level::subcategory) ||
      c.n_attributes != tree.count(hmc::Level::attribute)) {
    throw hmc::FormatError("checkpoint " + rc.checkpoint + " was trained for a different tree");
  }
  if (c.input_dim() != ds.input_width()) {
    throw hmc::FormatError("checkpoint input width " + std::to_string(c.input_dim()) + " does not match manifest width " +
                           std::to_string(ds.input_width()));
  }
  return m;
}

std::string pipeline_spec_path(const RunConfig& rc) {
  return fs::is_directory(rc.pipeline) ? (fs::path(rc.pipeline) / "pipeline.txt").string() : rc.pipeline;
}

// ---------------------------------------------------------------------------

ordered_json count_json(const hmc::CountStats& s) {
  return {{"mean", s.mean}, {"max", s.max}, {"min", s.min}, {"present", s.classes_present}, {"total", s.classes_total}};
}

std::string stats_table(const hmc::DatasetStats& st) {
  std::ostringstream os;
  os << "products: " << st.products << "\n\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-28s %10s %8s %8s %9s\n", "", "mean", "max", "min", "classes");
  os << buf;
  auto row = [&](const char* name, const hmc::CountStats& s, bool classes) {
    std::snprintf(buf, sizeof buf, "%-28s %10.2f %8zu %8zu %9s\n", name, s.mean, s.max, s.min,
                  classes ? (std::to_string(s.classes_present) + "/" + std::to_string(s.classes_total)).c_str() : "-");
    os << buf;
  };
  row("products per category", st.per_category, true);
  row("products per sub-category", st.per_subcategory, true);
  row("products per attribute", st.per_attribute, true);
  row("attributes per product", st.attributes_per_product, false);
  return os.str();
}

ordered_json stats_json(const hmc::DatasetStats& st) {
  ordered_json j;
  j["products"] = st.products;
  j["per_category"] = count_json(st.per_category);
  j["per_subcategory"] = count_json(st.per_subcategory);
  j["per_attribute"] = count_json(st.per_attribute);
  j["attributes_per_product"] = count_json(st.attributes_per_product);
  return j;
}

int cmd_generate(const RunConfig& rc) {
  hmc::GeneratorConfig g;
  g.genders = rc.genders;
  g.families = rc.families;
  g.categories = rc.categories;
  g.subcategories = rc.subcategories;
  g.attributes = rc.attributes;
  g.attachments_per_attribute = rc.attachments_per_attribute;
  g.products = rc.products;
  g.imbalance = rc.imbalance;
  g.attribute_rate = rc.attribute_rate;
  g.max_attributes = rc.max_attributes;
  g.missingness = rc.missingness;
  g.noise = rc.noise;
  g.input_mode = hmc::parse_input_mode(rc.input_mode);
  g.feature_dim = rc.feature_dim;
  g.image_size = rc.image_size;
  g.seed = rc.seed;
  const hmc::GeneratedData data = hmc::generate(g, rc.threads);

  fs::create_directories(rc.out_dir);
  const std::string tree_path = (fs::path(rc.out_dir) / "tree.tsv").string();
  hmc::detail::write_file(tree_path, data.tree.serialize());
  hmc::write_dataset(rc.out_dir, "all", data.dataset, data.tree);
  const hmc::Split s = hmc::split(data.dataset, rc.train_fraction, rc.seed);
  for (const auto& w : s.warnings) std::cerr << "hmc: warning: " << w << '\n';
  hmc::write_dataset(rc.out_dir, "train", hmc::subset(data.dataset, s.train), data.tree);
  hmc::write_dataset(rc.out_dir, "test", hmc::subset(data.dataset, s.test), data.tree);

  std::cout << "wrote " << tree_path << " and all/train/test manifests to " << rc.out_dir << "\n";
  std::cout << "split: " << s.train.size() << " train / " << s.test.size() << " test\n\n";
  const hmc::DatasetStats st = hmc::stats(data.dataset, data.tree);
  std::cout << stats_table(st);
  write_report(rc, stats_json(st));
  return 0;
}

int cmd_stats(const RunConfig& rc) {
  const Inputs in = load_inputs(rc);
  const hmc::DatasetStats st = hmc::stats(in.ds, in.tree);
  std::cout << stats_table(st);
  write_report(rc, stats_json(st));
  return 0;
}

int cmd_train(const RunConfig& rc) {
  const Inputs in = load_inputs(rc);
  const hmc::UnifiedModelConfig mc = model_config(rc, in.tree, in.ds);
  const hmc::TrainOptions opt = train_options(rc);
  std::ofstream log;
  if (!rc.log.empty()) {
    log.open(rc.log, std::ios::trunc);
    if (!log) throw hmc::FormatError("cannot write " + rc.log);
    log << hmc::cli::config_text(rc) << '\n';
  }

  if (is_baseline(rc)) {
    hmc::PipelineTrainOptions po;
    po.train = opt;
    po.threads = rc.threads;
    hmc::PipelineSpec spec = hmc::train_pipeline(in.tree, in.ds, mc, po);
    const std::string path = hmc::save_pipeline(rc.pipeline, spec, in.tree, run_entries(rc, in.ds.records.size()));
    std::size_t specialists = spec.subcategory.size();
    for (const auto& [c, list] : spec.attribute) specialists += list.size();
    std::cout << "trained category model and " << specialists << " specialists; " << spec.uncovered.size()
              << " categories uncovered\n";
    std::cout << "pipeline spec: " << path << '\n';
    if (log) log << "pipeline " << path << '\n';
    return 0;
  }

  hmc::Rng init = hmc::detail::derived_rng(rc.seed, kInitStream, 0);
  hmc::UnifiedModel model(mc, init);
  std::cout << "variant " << hmc::variant_name(mc.variant) << ": " << with_commas(model.parameter_count())
            << " trainable parameters, " << in.ds.records.size() << " products\n";
  hmc::train_unified(model, in.tree, in.ds, opt, [&](const hmc::EpochLog& e) {
    const std::string line = "epoch " + std::to_string(e.epoch) + "/" + std::to_string(opt.epochs) + "  loss " +
                             fixed(e.mean_loss, 6) + "  train_category_accuracy " +
                             fixed(e.train_category_accuracy, 4);
    std::cout << line << std::endl;
    if (log) log << line << '\n';
  });
  hmc::Checkpoint ck = model.to_checkpoint();
  for (auto& e : run_entries(rc, in.ds.records.size())) ck.config.push_back(std::move(e));
  if (const fs::path parent = fs::path(rc.checkpoint).parent_path(); !parent.empty()) fs::create_directories(parent);
  hmc::save_checkpoint(rc.checkpoint, ck);
  std::cout << "checkpoint: " << rc.checkpoint << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& rc) {
  const Inputs in = load_inputs(rc);
  hmc::EvalReport rep;
  if (is_baseline(rc)) {
    hmc::PipelineSpec spec = hmc::load_pipeline(pipeline_spec_path(rc), in.tree);
    rep = hmc::evaluate_pipeline(spec, in.tree, in.ds, rc.threshold, rc.oracle_category, rc.hidden_truth);
  } else {
    if (rc.oracle_category) throw hmc::ContractError("--oracle-category applies to the baseline pipeline only");
    hmc::UnifiedModel model = load_unified(rc, in.tree, in.ds);
    if (std::string(hmc::variant_name(model.config().variant)) != rc.variant) {
      std::cerr << "hmc: note: checkpoint holds variant " << hmc::variant_name(model.config().variant) << '\n';
    }
    rep = hmc::evaluate_unified(model, in.tree, in.ds, rc.threshold, rc.hidden_truth);
  }
  std::cout << hmc::render_table(rep);
  write_report(rc, hmc::report_json(rep));
  return 0;
}

struct RowPrediction {
  std::size_t category = 0;
  std::optional<std::size_t> subcategory;
  std::optional<double> category_conf, subcategory_conf;
  std::vector<std::pair<std::size_t, double>> attributes;  // thresholded, ascending label
};

std::vector<RowPrediction> predict_rows(const RunConfig& rc, const Inputs& in) {
  std::vector<RowPrediction> rows(in.ds.records.size());
  auto keep_attributes = [&](const hmc::Tensor& scores) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t a : hmc::threshold_predict(scores.row(i), rc.threshold)) rows[i].attributes.emplace_back(a, scores.at(i, a));
    }
  };
  if (is_baseline(rc)) {
    hmc::PipelineSpec spec = hmc::load_pipeline(pipeline_spec_path(rc), in.tree);
    const hmc::PipelineOutput out = hmc::pipeline_predict(spec, in.tree, in.ds, rc.oracle_category);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].category = out.category[i];
      rows[i].subcategory = out.subcategory[i];
    }
    keep_attributes(out.attribute_scores);
    return rows;
  }
  hmc::UnifiedModel model = load_unified(rc, in.tree, in.ds);
  const hmc::Predictions p = hmc::predict_unified(model, in.ds);
  const auto cat = hmc::argmax_rows(p.category), sub = hmc::argmax_rows(p.subcategory);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].category = cat[i];
    rows[i].subcategory = sub[i];
    rows[i].category_conf = p.category.at(i, cat[i]);
    rows[i].subcategory_conf = p.subcategory.at(i, sub[i]);
  }
  keep_attributes(p.attribute);
  return rows;
}

int cmd_predict(const RunConfig& rc) {
  const Inputs in = load_inputs(rc);
  const auto rows = predict_rows(rc, in);
  std::ostringstream os;
  os << "id\tgender\tfamily\tcategory\tcategory_conf\tsubcategory\tsubcategory_conf\tattributes\n";
  auto conf = [](const std::optional<double>& v) { return v ? fixed(*v, 6) : std::string("-"); };
  using hmc::Level;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RowPrediction& r = rows[i];
    const std::size_t family = in.tree.parent_index(Level::category, r.category);
    const std::size_t gender = in.tree.parent_index(Level::family, family);
    os << in.ds.records[i].id << '\t' << in.tree.node(Level::gender, gender).id << '\t'
       << in.tree.node(Level::family, family).id << '\t' << in.tree.node(Level::category, r.category).id << '\t'
       << conf(r.category_conf) << '\t'
       << (r.subcategory ? in.tree.node(Level::subcategory, *r.subcategory).id : std::string("uncovered")) << '\t'
       << conf(r.subcategory_conf) << '\t';
    if (r.attributes.empty()) os << '-';
    for (std::size_t k = 0; k < r.attributes.size(); ++k) {
      os << (k ? "," : "") << in.tree.node(Level::attribute, r.attributes[k].first).id << ':'
         << fixed(r.attributes[k].second, 6);
    }
    os << '\n';
  }
  if (rc.predictions.empty()) {
    std::cout << os.str();
  } else {
    hmc::detail::write_file(rc.predictions, os.str());
    std::cerr << "hmc: wrote " << rows.size() << " predictions to " << rc.predictions << '\n';
  }
  return 0;
}

int cmd_audit(const RunConfig& rc) {
  const Inputs in = load_inputs(rc);
  const auto rows = predict_rows(rc, in);
  std::vector<hmc::LevelPrediction> preds;
  std::vector<hmc::LabelSet> predicted, annotated, truth;
  std::vector<std::size_t> product_of;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].subcategory) continue;  // uncovered by the pipeline
    hmc::LevelPrediction p{rows[i].category, *rows[i].subcategory, {}};
    for (const auto& [a, s] : rows[i].attributes) p.attributes.push_back(a);
    predicted.push_back(p.attributes);
    annotated.push_back(in.ds.records[i].attributes);
    truth.push_back(in.ds.records[i].true_attributes);
    product_of.push_back(i);
    preds.push_back(std::move(p));
  }
  if (preds.empty()) throw hmc::ContractError("no covered products to audit");
  const hmc::AuditResult audit = hmc::audit_cooccurrence(preds, in.tree);
  std::size_t truth_violations = 0;
  for (const auto& r : in.ds.records) {
    truth_violations += !hmc::is_consistent(in.tree, r.category, r.subcategory, r.true_attributes).consistent;
  }

  ordered_json j;
  j["model"] = is_baseline(rc) ? "baseline" : rc.variant;
  j["products"] = preds.size();
  j["threshold"] = rc.threshold;
  j["pairs"] = audit.pairs;
  j["inconsistent_pairs"] = audit.inconsistent;
  j["inconsistency_rate"] = audit.rate;
  j["mean_predicted_attributes"] = hmc::mean_set_size(predicted);
  j["mean_annotated_attributes"] = hmc::mean_set_size(annotated);
  j["mean_true_attributes"] = hmc::mean_set_size(truth);
  j["recall_vs_truth"] = hmc::set_recall(predicted, truth);
  j["recall_vs_annotation"] = hmc::set_recall(predicted, annotated);
  j["truth_label_violations"] = truth_violations;
  ordered_json list = ordered_json::array();
  for (const auto& p : audit.inconsistent_pairs) {
    list.push_back({{"product", in.ds.records[product_of[p.product]].id}, {"category", p.category_id},
                    {"other", p.other_id}});
  }
  j["inconsistent"] = list;

  std::cout << "audit of " << j["model"].get<std::string>() << " on " << preds.size() << " products\n\n";
  std::cout << "co-occurrence pairs         " << audit.pairs << '\n';
  std::cout << "inconsistent pairs          " << audit.inconsistent << " (" << fixed(100.0 * audit.rate, 2) << "%)\n";
  std::cout << "mean predicted attributes   " << fixed(j["mean_predicted_attributes"].get<double>(), 3) << '\n';
  std::cout << "mean annotated attributes   " << fixed(j["mean_annotated_attributes"].get<double>(), 3) << '\n';
  std::cout << "mean true attributes        " << fixed(j["mean_true_attributes"].get<double>(), 3) << '\n';
  std::cout << "recall vs hidden truth      " << fixed(100.0 * j["recall_vs_truth"].get<double>(), 2) << "%\n";
  std::cout << "recall vs annotations       " << fixed(100.0 * j["recall_vs_annotation"].get<double>(), 2) << "%\n";
  const std::size_t shown = std::min<std::size_t>(audit.inconsistent_pairs.size(), 10);
  for (std::size_t k = 0; k < shown; ++k) {
    const auto& p = audit.inconsistent_pairs[k];
    std::cout << "  " << in.ds.records[product_of[p.product]].id << ": " << p.category_id << " with " << p.other_id
              << '\n';
  }
  if (audit.inconsistent_pairs.size() > shown) {
    std::cout << "  ... " << audit.inconsistent_pairs.size() - shown << " more in the JSON report\n";
  }
  write_report(rc, j);
  return 0;
}

int cmd_params(const RunConfig& rc) {
  if (is_baseline(rc)) throw hmc::ContractError("params accounts for the unified variants only");
  hmc::UnifiedModelConfig c;
  c.variant = hmc::parse_variant(rc.variant);
  if (rc.paper_defaults) {
    c.backbone_dim = 2048;
    c.hidden_dim = 1024;
    c.n_categories = 64;
    c.n_subcategories = 95;
    c.n_attributes = 75;
  } else {
    c.backbone_dim = rc.backbone_dim;
    c.hidden_dim = rc.hidden_dim;
    c.n_categories = rc.categories;
    c.n_subcategories = rc.subcategories;
    c.n_attributes = rc.attributes;
    c.encoder_stages = rc.encoder_stages;
  }
  const hmc::ParameterCount pc = hmc::count_parameters(c);
  std::cout << "variant " << hmc::variant_name(c.variant) << "  backbone_dim " << c.backbone_dim << "  hidden_dim "
            << c.hidden_dim << "  classes " << c.n_categories << "/" << c.n_subcategories << "/" << c.n_attributes
            << "\n\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-22s %6s %14s\n", "stage", "layers", "parameters");
  std::cout << buf;
  ordered_json stages = ordered_json::array();
  for (const auto& s : pc.stages) {
    std::snprintf(buf, sizeof buf, "%-22s %6zu %14s\n", s.stage.c_str(), s.dense_layers, with_commas(s.parameters).c_str());
    std::cout << buf;
    stages.push_back({{"stage", s.stage}, {"dense_layers", s.dense_layers}, {"parameters", s.parameters}});
  }
  auto total_row = [&](const char* name, std::size_t v) {
    std::snprintf(buf, sizeof buf, "%-29s %14s\n", name, with_commas(v).c_str());
    std::cout << buf;
  };
  std::cout << '\n';
  total_row("head", pc.head);
  ordered_json j;
  j["variant"] = std::string(hmc::variant_name(c.variant));
  j["stages"] = stages;
  j["head"] = pc.head;
  if (rc.paper_defaults) {
    total_row("backbone (ResNet-50)", hmc::kResNet50BackboneParameters);
    total_row("total", pc.total_with_full_backbone());
    j["backbone"] = hmc::kResNet50BackboneParameters;
    j["total"] = pc.total_with_full_backbone();
  } else {
    total_row("encoder (desk scale)", pc.backbone);
    total_row("total", pc.head + pc.backbone);
    j["backbone"] = pc.backbone;
    j["total"] = pc.head + pc.backbone;
  }
  write_report(rc, j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical product classification: unified model, specialist pipeline, metrics and audits"};
  app.set_help_flag("-h,--help", "Show this help");
  std::string command;
  std::vector<std::string> overrides;
  std::string config_path, variant;
  std::uint64_t seed = 0;
  double threshold = 0.0;
  bool oracle = false, paper_defaults = false, show_config = false;
  app.add_option("command", command, "generate | train | evaluate | predict | audit | params | stats")
      ->required()
      ->check(CLI::IsMember({"generate", "train", "evaluate", "predict", "audit", "params", "stats"}));
  app.add_option("overrides", overrides, "key=value configuration overrides");
  app.add_option("--config", config_path, "Flat key=value configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for generation, splitting, initialisation and training");
  auto* variant_opt = app.add_option("--variant", variant, "Model variant")
                          ->check(CLI::IsMember({"final", "no_mp", "backbone_indep", "baseline"}));
  auto* threshold_opt = app.add_option("--threshold", threshold, "Attribute threshold (strict >)");
  app.add_flag("--oracle-category", oracle, "Route the baseline pipeline with ground-truth categories");
  app.add_flag("--paper-defaults", paper_defaults, "params: use the full-scale dimensions");
  app.add_flag("--show-config", show_config, "Print the resolved configuration to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig rc;
    if (!config_path.empty()) hmc::cli::apply_config_file(rc, config_path);
    for (const auto& o : overrides) hmc::cli::apply_override(rc, o);
    if (*seed_opt) rc.seed = seed;
    if (*variant_opt) rc.variant = variant;
    if (*threshold_opt) rc.threshold = threshold;
    if (oracle) rc.oracle_category = true;
    if (paper_defaults) rc.paper_defaults = true;
    if (rc.variant != "baseline") hmc::parse_variant(rc.variant);
    if (!(rc.threshold >= 0.0 && rc.threshold < 1.0)) throw hmc::ContractError("threshold must lie in [0, 1)");
    if (show_config) std::cerr << hmc::cli::config_text(rc);

    if (command == "generate") return cmd_generate(rc);
    if (command == "stats") return cmd_stats(rc);
    if (command == "train") return cmd_train(rc);
    if (command == "evaluate") return cmd_evaluate(rc);
    if (command == "predict") return cmd_predict(rc);
    if (command == "audit") return cmd_audit(rc);
    return cmd_params(rc);
  } catch (const std::exception& e) {
    std::cerr << "hmc: error: " << e.what() << '\n';
    return 1;
  }
}
