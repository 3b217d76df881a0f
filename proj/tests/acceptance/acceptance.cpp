// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Tolerances and budgets are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hmc/data.hpp"
#include "hmc/losses.hpp"
#include "hmc/metrics.hpp"
#include "hmc/model_unified.hpp"
#include "hmc/report.hpp"
#include "hmc/training.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"

using namespace hmc;

namespace {

constexpr double kGradRelTolerance = 1e-4;
// Central-difference step, and the denominator floor that keeps entries with
// a true gradient near zero from being judged on roundoff alone.
constexpr double kGradStep = 1e-5;
constexpr double kGradFloor = 1e-6;
constexpr double kMetricTolerance = 1e-12;
constexpr double kWeightTolerance = 1e-12;
constexpr double kMinCategoryAccuracy = 0.90;
constexpr double kMinSubcategoryAccuracy = 0.75;
constexpr double kMaxInconsistency = 0.05;

// Desk-scale hidden widths. The default 1024 costs about four minutes per
// epoch on one core, so the learnability run uses the widest power of two
// that keeps ten epochs inside its budget.
constexpr std::size_t kLearnabilityHidden = 256;
constexpr std::size_t kProbeHidden = 64;
constexpr std::uint64_t kInitStream = 4;  // same stream the command-line tool uses

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1 and 5: parameter accounting

// Independent layer walk over the head as described: three projections, the
// two message directions, the merge, the output hidden layers and the
// classifiers; each dense contributes in*out + out.
std::size_t walk_final_head(std::size_t b, std::size_t d, std::size_t nc, std::size_t ns, std::size_t na) {
  std::size_t total = 0;
  auto dense = [&](std::size_t in, std::size_t out, std::size_t times) { total += times * (in * out + out); };
  dense(b, d, 3);
  dense(d, d, 3 + 2);  // downward: intra at all levels, category into sub and attr
  dense(d, d, 3 + 2);  // upward: intra at all levels, sub and attr into category
  dense(d, d, 3);      // merge
  dense(d, d, 3);      // output hidden
  dense(d, nc, 1);
  dense(d, ns, 1);
  dense(d, na, 1);
  return total;
}

Outcome parameter_accounting() {
  const UnifiedModelConfig c;  // 2048 / 1024 / 64 / 95 / 75
  const ParameterCount pc = count_parameters(c);
  const std::size_t walked = walk_final_head(2048, 1024, 64, 95, 75);
  const bool ok = pc.head == 23'327'978 && walked == pc.head && pc.total_with_full_backbone() == 46'915'690 &&
                  kResNet50BackboneParameters == 23'587'712;
  return {ok, fmt("head %zu (walk %zu), with backbone %zu; expect 23327978 / 46915690", pc.head, walked,
                  pc.total_with_full_backbone())};
}

Outcome ablation_parity() {
  UnifiedModelConfig fin, nomp;
  nomp.variant = Variant::no_mp;
  const std::size_t a = count_parameters(fin).head, b = count_parameters(nomp).head;
  return {a == b, fmt("final %zu, no_mp %zu", a, b)};
}

// ---------------------------------------------------------------------------
// 2: whole-model gradient check

Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

Outcome gradient_correctness() {
  UnifiedModelConfig c;
  c.backbone_dim = 10;
  c.hidden_dim = 16;
  c.n_categories = 5;
  c.n_subcategories = 7;
  c.n_attributes = 6;
  c.l2_factor = 0.0005;
  c.validate();
  Rng init(2024);
  UnifiedModel m(c, init);
  std::mt19937_64 rng(31);
  // Nonzero biases so their gradients are exercised away from the init point.
  for (Parameter* p : m.parameters()) {
    if (p->value.rank() == 1) p->value = uniform_tensor(p->value.shape(), rng, -0.1, 0.1);
  }
  const Tensor x = uniform_tensor({4, 10}, rng, -1.0, 1.0);
  const std::vector<std::size_t> tc = {0, 3, 4, 1}, ts = {6, 2, 0, 5};
  Tensor ta({4, 6});
  for (double& v : ta.data()) v = std::bernoulli_distribution(0.4)(rng) ? 1.0 : 0.0;
  const std::vector<double> wc = class_weights(std::vector<double>{0.3, 0.1, 0.2, 0.25, 0.15});
  const std::vector<double> ws = class_weights(std::vector<double>{0.1, 0.2, 0.05, 0.15, 0.2, 0.2, 0.1});
  const std::vector<double> wa = label_weights(std::vector<double>{0.2, 0.4, 0.1, 0.3, 0.5, 0.25});
  auto loss = [&](Tape& tape) {
    Rng drop(77);  // identical dropout masks on every evaluation
    const ForwardResult f = m.forward(tape, tape.constant(x), Mode::train, drop);
    return total_loss(weighted_ce(f.probs.cat, tc, wc), weighted_ce(f.probs.sub, ts, ws),
                      weighted_bce(f.probs.attr, ta, wa), m.l2_term(tape));
  };
  const auto r = testsupport::check_parameter_gradients(m.parameters(), loss, kGradStep, kGradFloor);
  const bool ok = r.max_rel_error < kGradRelTolerance && r.checked == m.parameter_count();
  return {ok, fmt("%zu entries, max relative error %.3e (< %.0e), max abs %.2e; worst %s", r.checked, r.max_rel_error,
                  kGradRelTolerance, r.max_abs_error, r.worst.c_str())};
}

// ---------------------------------------------------------------------------
// 3: topology

bool all_zero(const Tensor& t) {
  for (double v : t.data()) {
    if (v != 0.0) return false;
  }
  return true;
}

Outcome topology() {
  UnifiedModelConfig c;
  c.backbone_dim = 6;
  c.hidden_dim = 5;
  c.n_categories = 3;
  c.n_subcategories = 4;
  c.n_attributes = 4;
  c.validate();
  std::mt19937_64 rng(8);
  const Tensor zc = uniform_tensor({2, 5}, rng, -1, 1), zs = uniform_tensor({2, 5}, rng, -1, 1),
               za = uniform_tensor({2, 5}, rng, -1, 1);
  Tensor zs_moved = zs, za_moved = za;
  for (double& v : zs_moved.data()) v = 3.0 * v + 0.5;
  for (double& v : za_moved.data()) v = -2.0 * v + 0.25;

  struct Probe {
    Tensor cat, attr;  // logit values, copied out before the tape goes away
    Tensor grad_sub, grad_attr;
  };
  // Eval-mode logits for the given latents, plus the gradient of the summed
  // `which` logits with respect to the sub-category and attribute latents.
  auto probe = [](UnifiedModel& m, const Tensor& c0, const Tensor& s0, const Tensor& a0, int which) {
    Tape tape;
    Rng unused(0);
    const Var vc = tape.leaf(c0), vs = tape.leaf(s0), va = tape.leaf(a0);
    const LevelLogits out = m.output_heads(tape, m.propagate(tape, {vc, vs, va}, Mode::eval, unused));
    const Var target = which == 0 ? out.cat : out.attr;
    const Gradients g = tape.backward(sum(target));
    return Probe{out.cat.value(), out.attr.value(), g.of(vs), g.of(va)};
  };

  UnifiedModelConfig no_up = c;
  no_up.upward = false;
  Rng i1(3);
  UnifiedModel down_only(no_up, i1);
  const Probe base = probe(down_only, zc, zs, za, 1);
  const Probe moved = probe(down_only, zc, zs_moved, za, 1);
  const bool invariant = base.attr == moved.attr && all_zero(base.grad_sub) &&
                         all_zero(moved.grad_sub);

  Rng i2(3);
  UnifiedModel full(c, i2);
  const Probe f0 = probe(full, zc, zs, za, 0);
  const Probe fs = probe(full, zc, zs_moved, za, 0);
  const Probe fa = probe(full, zc, zs, za_moved, 0);
  const bool responds = !(f0.cat == fs.cat) &&
                        !(f0.cat == fa.cat) && !all_zero(f0.grad_sub) &&
                        !all_zero(f0.grad_attr);
  return {invariant && responds,
          fmt("no-upward attr logits invariant to x_sub with zero gradient: %s; with upward, category responds to "
              "sub and attr: %s",
              invariant ? "yes" : "no", responds ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 4: metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> n_products(1, 10), n_labels(1, 8);
  double worst = 0.0;
  bool identity = true;
  std::size_t instances = 0;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = n_products(rng), l = n_labels(rng);
    const oracle::Instance in = oracle::random_instance(rng, n, l);
    const double tau = 0.5;

    const PRF mc = overall_prf(in.truth_class, in.pred_class, l);
    const oracle::PRF omc = oracle::multiclass_prf(in.truth_class, in.pred_class, l);
    track(mc.precision, omc.precision);
    track(mc.recall, omc.recall);
    track(mc.f1, omc.f1);

    std::vector<std::vector<std::size_t>> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < l; ++j) {
        if (in.scores.at(i, j) > tau) pred[i].push_back(j);
      }
    }
    const PRF ml = overall_prf_multilabel(in.truth_sets, threshold_predict(in.scores, tau), l);
    const oracle::PRF oml = oracle::multilabel_prf(in.truth_sets, pred, l);
    track(ml.precision, oml.precision);
    track(ml.recall, oml.recall);
    track(ml.f1, oml.f1);

    const AtKResult k = at_k(in.scores, in.truth_sets);
    const oracle::AtK ok = oracle::at_k(in.scores, in.truth_sets);
    track(k.precision, ok.precision);
    track(k.recall, ok.recall);
    track(k.f1, ok.f1);
    for (std::size_t i = 0; i < k.per_product_precision.size(); ++i) {
      identity = identity && k.per_product_precision[i] == k.per_product_recall[i];
    }

    const auto ap = average_precision(in.scores, in.truth_sets);
    const auto oap = oracle::average_precision(in.scores, in.truth_sets);
    if (ap.has_value() != oap.has_value()) {
      worst = INFINITY;
    } else if (ap) {
      track(*ap, *oap);
    }
    ++instances;
  }
  return {worst <= kMetricTolerance && identity,
          fmt("%zu instances, max deviation %.3e (<= %.0e), per-product P@k == R@k: %s", instances, worst,
              kMetricTolerance, identity ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 8: weighting law

Outcome weighting_law() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 2 + t % 9;
    std::vector<double> f(k);
    double s = 0.0;
    for (double& v : f) s += (v = u(rng));
    for (double& v : f) v /= s;
    const std::vector<double> w = class_weights(f);
    std::vector<double> rate(k);
    for (double& v : rate) v = u(rng) * 0.98;
    const std::vector<double> lw = label_weights(rate);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        worst = std::max(worst, std::abs(w[a] / w[b] - f[b] / f[a]) / (f[b] / f[a]));
        worst = std::max(worst, std::abs(lw[a] / lw[b] - rate[b] / rate[a]) / (rate[b] / rate[a]));
      }
    }
  }
  double uniform_dev = 0.0;
  for (std::size_t k : {1, 2, 5, 64, 95}) {
    for (double v : class_weights(std::vector<double>(k, 1.0 / static_cast<double>(k)))) {
      uniform_dev = std::max(uniform_dev, std::abs(v - 1.0));
    }
  }
  return {worst <= kWeightTolerance && uniform_dev <= kWeightTolerance,
          fmt("max relative ratio deviation %.3e, uniform deviation from 1 %.3e (<= %.0e)", worst, uniform_dev,
              kWeightTolerance)};
}

// ---------------------------------------------------------------------------
// 6, 7, 9: end-to-end runs

struct EndToEnd {
  EvalReport report;
  std::string report_text;
  double seconds = 0.0;
};

EndToEnd train_and_evaluate(std::uint64_t seed, double missingness, std::size_t hidden) {
  const auto start = std::chrono::steady_clock::now();
  GeneratorConfig g;  // 10,000 products, 8 / 20 / 15, feature mode
  g.seed = seed;
  g.missingness = missingness;
  GeneratedData data = generate(g);
  const Split s = split(data.dataset, 0.75, seed);
  const Dataset train = subset(data.dataset, s.train);
  const Dataset test = subset(data.dataset, s.test);

  UnifiedModelConfig mc;
  mc.backbone_dim = data.dataset.feature_dim;
  mc.hidden_dim = hidden;
  mc.n_categories = data.tree.count(Level::category);
  mc.n_subcategories = data.tree.count(Level::subcategory);
  mc.n_attributes = data.tree.count(Level::attribute);
  mc.validate();
  Rng init = detail::derived_rng(seed, kInitStream, 0);
  UnifiedModel model(mc, init);
  TrainOptions opt;
  opt.seed = seed;
  opt.epochs = 10;
  train_unified(model, data.tree, train, opt);

  EndToEnd out;
  out.report = evaluate_unified(model, data.tree, test, 0.75, true);
  out.report_text = report_to_string(out.report);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::optional<EndToEnd> learnability_run;

Outcome learnability() {
  learnability_run = train_and_evaluate(7, 0.0, kLearnabilityHidden);
  const EvalReport& r = learnability_run->report;
  const bool ok = r.category.accuracy >= kMinCategoryAccuracy && r.subcategory.accuracy >= kMinSubcategoryAccuracy &&
                  r.consistency.inconsistency_rate < kMaxInconsistency;
  return {ok, fmt("d=%zu: category %.4f (>= %.2f), sub-category %.4f (>= %.2f), inconsistency %.4f (< %.2f)",
                  kLearnabilityHidden, r.category.accuracy, kMinCategoryAccuracy, r.subcategory.accuracy,
                  kMinSubcategoryAccuracy, r.consistency.inconsistency_rate, kMaxInconsistency)};
}

Outcome missing_annotation_probe() {
  bool ok = true;
  std::string detail = fmt("d=%zu, missingness 0.5;", kProbeHidden);
  for (std::uint64_t seed : {1, 2, 3}) {
    const EndToEnd run = train_and_evaluate(seed, 0.5, kProbeHidden);
    const EvalReport& r = run.report;
    const bool more = r.attribute.mean_predicted > r.attribute.mean_annotated;
    const bool recall = r.hidden_truth && r.hidden_truth->r_at_k > r.attribute.r_at_k;
    ok = ok && more && recall;
    detail += fmt(" seed %llu: predicted %.3f vs annotated %.3f, R@k truth %.3f vs annotated %.3f%s;",
                  static_cast<unsigned long long>(seed), r.attribute.mean_predicted, r.attribute.mean_annotated,
                  r.hidden_truth ? r.hidden_truth->r_at_k : 0.0, r.attribute.r_at_k, more && recall ? "" : " FAIL");
  }
  detail.pop_back();
  return {ok, detail};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  if (!learnability_run) learnability_run = train_and_evaluate(7, 0.0, kLearnabilityHidden);
  const EndToEnd again = train_and_evaluate(7, 0.0, kLearnabilityHidden);
  const auto dir = std::filesystem::temp_directory_path() / "hmc_acceptance";
  std::filesystem::create_directories(dir);
  write_text(dir / "first.json", learnability_run->report_text);
  write_text(dir / "second.json", again.report_text);
  const std::string a = read_text(dir / "first.json"), b = read_text(dir / "second.json");
  const bool ok = !a.empty() && a == b;
  return {ok, fmt("%zu-byte reports %s; rerun %.1fs", a.size(), ok ? "identical" : "differ", again.seconds)};
}

}  // namespace

// Optional arguments select criteria by id, e.g. `hmc_acceptance 2 3`.
int main(int argc, char** argv) {
  const std::vector<std::string> only(argv + 1, argv + argc);
  const std::vector<Criterion> criteria = {
      {"1", "parameter accounting", 1.0, parameter_accounting},
      {"2", "gradient correctness", 30.0, gradient_correctness},
      {"3", "message-passing topology", 5.0, topology},
      {"4", "metric-oracle equivalence", 10.0, metric_oracles},
      {"5", "ablation parity", 1.0, ablation_parity},
      {"6", "desk-scale learnability", 300.0, learnability},
      {"7", "missing-annotation probe", 900.0, missing_annotation_probe},
      {"8", "class-weighting law", 1.0, weighting_law},
      {"9", "report determinism", 300.0, determinism},
  };
  int failed = 0;
  std::size_t ran = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::printf("[%s] %s %-26s %7.2fs (budget %.0fs%s)  %s\n", pass ? "PASS" : "FAIL", c.id.c_str(), c.title.c_str(),
                secs, c.budget_seconds, in_budget ? "" : ", exceeded", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(ran) - failed, ran);
  return failed == 0 ? 0 : 1;
}
