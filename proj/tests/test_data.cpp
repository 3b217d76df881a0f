#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "hmc/data.hpp"

using namespace hmc;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hmc_test_data_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.genders = 2;
  c.families = 3;
  c.categories = 4;
  c.subcategories = 7;
  c.attributes = 6;
  c.products = 300;
  c.feature_dim = 16;
  return c;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// Enumerates every (sub-category, attribute subset) signature the tree allows
// and returns the category of the nearest one.
std::size_t nearest_prototype_category(const GeneratedData& g, const std::vector<double>& x) {
  const CategoryTree& t = g.tree;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_cat = 0;
  for (std::size_t s = 0; s < t.count(Level::subcategory); ++s) {
    const std::size_t cat = t.parent_index(Level::subcategory, s);
    const auto attrs = t.attributes_of(cat);
    for (unsigned mask = 0; mask < (1u << attrs.size()); ++mask) {
      std::vector<double> sig = g.prototypes.category[cat];
      for (std::size_t k = 0; k < sig.size(); ++k) sig[k] += g.prototypes.subcategory[s][k];
      for (std::size_t j = 0; j < attrs.size(); ++j) {
        if (!(mask >> j & 1u)) continue;
        for (std::size_t k = 0; k < sig.size(); ++k) sig[k] += g.prototypes.attribute[attrs[j]][k];
      }
      const double d = squared_distance(sig, x);
      if (d < best) best = d, best_cat = cat;
    }
  }
  return best_cat;
}

Dataset uniform_dataset(std::size_t subs, std::size_t per_sub) {
  Dataset ds;
  ds.feature_dim = 1;
  for (std::size_t s = 0; s < subs; ++s) {
    for (std::size_t i = 0; i < per_sub; ++i) {
      ProductRecord r;
      r.id = "p" + std::to_string(ds.records.size());
      r.features = {0.0};
      r.subcategory = s;
      ds.records.push_back(r);
    }
  }
  return ds;
}

}  // namespace

TEST(Generate, SameSeedGivesIdenticalRecords) {
  const GeneratorConfig c = small_config();
  const GeneratedData a = generate(c), b = generate(c);
  EXPECT_EQ(a.dataset.records, b.dataset.records);
  EXPECT_EQ(a.tree.serialize(), b.tree.serialize());
  GeneratorConfig other = c;
  other.seed = 8;
  EXPECT_NE(generate(other).dataset.records, a.dataset.records);
}

TEST(Generate, ThreadCountDoesNotChangeOutput) {
  const GeneratorConfig c = small_config();
  EXPECT_EQ(generate(c, 1).dataset.records, generate(c, 5).dataset.records);
}

TEST(Generate, SameSeedGivesIdenticalManifestBytes) {
  const GeneratorConfig c = small_config();
  const auto d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  const GeneratedData a = generate(c), b = generate(c, 3);
  const std::string m1 = write_dataset(d1.string(), "all", a.dataset, a.tree);
  const std::string m2 = write_dataset(d2.string(), "all", b.dataset, b.tree);
  EXPECT_EQ(slurp(m1), slurp(m2));
  EXPECT_EQ(slurp((d1 / "all.features.bin").string()), slurp((d2 / "all.features.bin").string()));
}

TEST(Generate, NoiselessRecordsAreSeparableByNearestPrototype) {
  for (std::size_t products : {4ul, 200ul}) {
    GeneratorConfig c = small_config();
    c.subcategories = 4;  // N = C in the first pass
    c.products = products;
    c.noise = 0.0;
    c.missingness = 0.0;
    const GeneratedData g = generate(c);
    for (const auto& r : g.dataset.records) {
      EXPECT_EQ(nearest_prototype_category(g, r.features), r.category) << r.id;
    }
  }
}

TEST(Generate, PowerLawRatioTracksAnalyticLaw) {
  GeneratorConfig c;
  c.products = 10000;
  c.subcategories = 20;
  c.imbalance = 1.0;
  const GeneratedData g = generate(c, 4);
  std::vector<double> counts(20, 0.0);
  for (const auto& r : g.dataset.records) counts[r.subcategory] += 1;
  const double ratio = *std::max_element(counts.begin(), counts.end()) / *std::min_element(counts.begin(), counts.end());
  const double analytic = std::pow(20.0, 1.0);  // p(1) / p(20)
  EXPECT_GT(ratio, 0.7 * analytic);
  EXPECT_LT(ratio, 1.3 * analytic);
}

TEST(Generate, EverySubcategoryOccurs) {
  GeneratorConfig c = small_config();
  c.products = c.subcategories;
  c.imbalance = 3.0;
  std::set<std::size_t> seen;
  for (const auto& r : generate(c).dataset.records) seen.insert(r.subcategory);
  EXPECT_EQ(seen.size(), c.subcategories);
}

TEST(Generate, RecordsAreConsistentAndBounded) {
  GeneratorConfig c = small_config();
  c.attribute_rate = 0.9;
  c.max_attributes = 2;
  const GeneratedData g = generate(c);
  for (const auto& r : g.dataset.records) {
    EXPECT_TRUE(is_consistent(g.tree, r.category, r.subcategory, r.true_attributes).consistent) << r.id;
    EXPECT_LE(r.true_attributes.size(), 2u);
    EXPECT_TRUE(std::is_sorted(r.true_attributes.begin(), r.true_attributes.end()));
  }
}

TEST(Generate, AnnotationGapMatchesMissingnessRate) {
  GeneratorConfig c;
  c.products = 4000;
  c.attribute_rate = 0.6;
  c.missingness = 0.3;
  const GeneratedData g = generate(c, 2);
  double present = 0, dropped = 0;
  for (const auto& r : g.dataset.records) {
    EXPECT_TRUE(std::includes(r.true_attributes.begin(), r.true_attributes.end(), r.attributes.begin(),
                              r.attributes.end()))
        << r.id;
    present += static_cast<double>(r.true_attributes.size());
    dropped += static_cast<double>(r.true_attributes.size() - r.attributes.size());
  }
  ASSERT_GT(present, 1000);
  const double sigma = std::sqrt(0.3 * 0.7 / present);
  EXPECT_NEAR(dropped / present, 0.3, 4 * sigma);
}

TEST(Generate, InfeasibleConfigIsRejected) {
  GeneratorConfig c = small_config();
  c.products = c.subcategories - 1;
  try {
    generate(c);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("infeasible"), std::string::npos);
  }
  c = small_config();
  c.missingness = 1.5;
  EXPECT_THROW(generate(c), ContractError);
  c = small_config();
  c.categories = 2;  // fewer categories than families
  EXPECT_THROW(generate(c), ContractError);
}

TEST(Generate, ImageModeDrawsRequestedGeometry) {
  GeneratorConfig c = small_config();
  c.input_mode = InputMode::image;
  c.image_size = 16;
  c.products = 20;
  const GeneratedData g = generate(c);
  EXPECT_EQ(g.dataset.input_width(), 3u * 16u * 16u);
  for (const auto& r : g.dataset.records) {
    EXPECT_EQ(r.image.height, 16u);
    EXPECT_TRUE(r.features.empty());
  }
  c.image_size = 12;
  EXPECT_THROW(generate(c), ContractError);
}

namespace {

Image test_image(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  Image img(8, 10, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(byte(rng));
  return img;
}

}  // namespace

TEST(Augment, ZeroProbabilityIsIdentity) {
  const Image img = test_image(1);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(augment(img, 0.0, rng), img);
}

TEST(Augment, DoubleFlipRestoresImage) {
  const Image img = test_image(3);
  EXPECT_NE(flip_horizontal(img), img);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
}

TEST(Augment, TransformFrequencyMatchesProbability) {
  const Image img = test_image(4);
  Rng rng(5);
  std::map<Transform, int> seen;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++seen[augment_traced(img, rng).applied];
  const double applied = 1.0 - static_cast<double>(seen[Transform::none]) / n;
  EXPECT_GE(applied, 0.49);
  EXPECT_LE(applied, 0.51);
  // Each transform takes a third of the applied share.
  for (Transform t : {Transform::flip, Transform::crop, Transform::rotate}) {
    EXPECT_NEAR(seen[t] / (applied * n), 1.0 / 3.0, 0.04);
  }
}

TEST(Augment, CropAtCentreOffsetIsIdentity) {
  const Image img = test_image(6);
  EXPECT_EQ(crop_reflect(img, 4, 4, 4), img);
  const Image shifted = crop_reflect(img, 4, 4, 5);
  EXPECT_EQ(shifted.at(0, 0, 0), img.at(0, 1, 0));
  EXPECT_EQ(shifted.at(0, 9, 0), img.at(0, 8, 0));  // reflected back inside
}

TEST(Augment, ZeroRotationIsIdentity) {
  const Image img = test_image(7);
  EXPECT_EQ(rotate_nearest(img, 0.0), img);
}

TEST(Augment, FeatureModeIsContractError) {
  ProductRecord r;
  r.features = {1.0, 2.0};
  Rng rng(0);
  EXPECT_THROW(augment(r, InputMode::features, 0.5, rng), ContractError);
  EXPECT_THROW(augment(Image{}, 0.5, rng), ContractError);
  EXPECT_THROW(augment(test_image(1), 1.5, rng), ContractError);
}

TEST(Split, UniformProductsSplitThreeToOne) {
  const Dataset ds = uniform_dataset(4, 100);
  const Split s = split(ds, 0.75, 11);
  EXPECT_EQ(s.train.size(), 300u);
  EXPECT_EQ(s.test.size(), 100u);
  EXPECT_TRUE(s.warnings.empty());
}

TEST(Split, DisjointAndCoveringForAnySeed) {
  const GeneratedData g = generate(small_config());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Split s = split(g.dataset, 0.75, seed);
    std::vector<int> hits(g.dataset.records.size(), 0);
    for (std::size_t i : s.train) ++hits[i];
    for (std::size_t i : s.test) ++hits[i];
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  EXPECT_NE(split(g.dataset, 0.75, 1).train, split(g.dataset, 0.75, 2).train);
  EXPECT_EQ(split(g.dataset, 0.75, 1).train, split(g.dataset, 0.75, 1).train);
}

TEST(Split, StratifiedPerSubcategory) {
  GeneratorConfig c = small_config();
  c.products = 1000;
  const GeneratedData g = generate(c);
  const Split s = split(g.dataset, 0.75, 3);
  std::map<std::size_t, double> total, train;
  for (const auto& r : g.dataset.records) total[r.subcategory] += 1;
  for (std::size_t i : s.train) train[g.dataset.records[i].subcategory] += 1;
  for (const auto& [sub, n] : total) EXPECT_LE(std::abs(train[sub] - 0.75 * n), 1.0) << sub;
}

TEST(Split, SingletonGroupGoesToTrainWithWarning) {
  Dataset ds = uniform_dataset(2, 8);
  ProductRecord lone;
  lone.id = "lone";
  lone.features = {0.0};
  lone.subcategory = 2;
  ds.records.push_back(lone);
  const Split s = split(ds, 0.75, 0);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("index 2"), std::string::npos);
  EXPECT_TRUE(std::count(s.train.begin(), s.train.end(), ds.records.size() - 1));
  EXPECT_THROW(split(ds, 1.0, 0), ContractError);
  EXPECT_THROW(split(ds, 0.0, 0), ContractError);
}

TEST(Stats, SingleProductMeansEqualItsCounts) {
  GeneratorConfig c = small_config();
  const CategoryTree tree = make_synthetic_tree(c);
  Dataset ds;
  ds.feature_dim = 1;
  ProductRecord r;
  r.id = "only";
  r.features = {0.0};
  r.category = 1;
  r.subcategory = 1;
  r.attributes = tree.attributes_of(1);
  ds.records.push_back(r);
  const DatasetStats st = stats(ds, tree);
  EXPECT_EQ(st.products, 1u);
  EXPECT_DOUBLE_EQ(st.per_category.mean, 1.0);
  EXPECT_DOUBLE_EQ(st.per_subcategory.mean, 1.0);
  EXPECT_DOUBLE_EQ(st.per_attribute.mean, 1.0);
  EXPECT_EQ(st.per_category.classes_present, 1u);
  EXPECT_DOUBLE_EQ(st.attributes_per_product.mean, static_cast<double>(r.attributes.size()));
  EXPECT_EQ(st.attributes_per_product.max, r.attributes.size());
  EXPECT_EQ(st.attributes_per_product.min, r.attributes.size());
}

TEST(Stats, DefaultConfigMatchesRecount) {
  const GeneratedData g = generate(GeneratorConfig{}, 4);
  const DatasetStats st = stats(g.dataset, g.tree);
  std::map<std::size_t, std::size_t> cat, sub, attr;
  std::size_t total = 0, kmax = 0, kmin = 1000;
  for (const auto& r : g.dataset.records) {
    ++cat[r.category];
    ++sub[r.subcategory];
    for (std::size_t a : r.attributes) ++attr[a];
    total += r.attributes.size();
    kmax = std::max(kmax, r.attributes.size());
    kmin = std::min(kmin, r.attributes.size());
  }
  auto check = [](const CountStats& s, const std::map<std::size_t, std::size_t>& m, const char* what) {
    std::size_t sum = 0, mx = 0, mn = SIZE_MAX;
    for (const auto& [k, v] : m) sum += v, mx = std::max(mx, v), mn = std::min(mn, v);
    EXPECT_EQ(s.classes_present, m.size()) << what;
    EXPECT_EQ(s.max, mx) << what;
    EXPECT_EQ(s.min, mn) << what;
    EXPECT_DOUBLE_EQ(s.mean, static_cast<double>(sum) / static_cast<double>(m.size())) << what;
  };
  check(st.per_category, cat, "category");
  check(st.per_subcategory, sub, "subcategory");
  check(st.per_attribute, attr, "attribute");
  EXPECT_EQ(st.products, 10000u);
  EXPECT_EQ(st.attributes_per_product.max, kmax);
  EXPECT_EQ(st.attributes_per_product.min, kmin);
  EXPECT_DOUBLE_EQ(st.attributes_per_product.mean, static_cast<double>(total) / 10000.0);
}

TEST(Manifest, FeatureRoundTripIsBitExact) {
  const GeneratedData g = generate(small_config());
  const auto dir = scratch_dir("features");
  const std::string path = write_dataset(dir.string(), "train", g.dataset, g.tree);
  const Dataset back = read_dataset(path, g.tree);
  EXPECT_EQ(back.mode, InputMode::features);
  EXPECT_EQ(back.feature_dim, g.dataset.feature_dim);
  EXPECT_EQ(back.records, g.dataset.records);
  const std::string text = slurp(path);
  EXPECT_EQ(text.rfind("# hmc-manifest 1\n", 0), 0u);
  EXPECT_EQ(std::filesystem::file_size(dir / "train.features.bin"), g.dataset.records.size() * 16u * 8u);
}

TEST(Manifest, ImageRoundTrip) {
  GeneratorConfig c = small_config();
  c.input_mode = InputMode::image;
  c.image_size = 16;
  c.products = 12;
  const GeneratedData g = generate(c);
  const auto dir = scratch_dir("images");
  const Dataset back = read_dataset(write_dataset(dir.string(), "img", g.dataset, g.tree), g.tree);
  EXPECT_EQ(back.mode, InputMode::image);
  EXPECT_EQ(back.image.height, 16u);
  EXPECT_EQ(back.records, g.dataset.records);
}

TEST(Manifest, FiveColumnRowsUseAnnotationAsTruth) {
  const CategoryTree tree = make_synthetic_tree(small_config());
  const auto dir = scratch_dir("five");
  {
    std::ofstream m(dir / "m.tsv");
    m << "# hmc-manifest 1\n# mode=features dim=1 image=3x32x32 payload=m.features.bin\n";
    m << "x\tm.features.bin#0\tc1\ts1\ta1\n";
    std::string payload;
    detail::put_le_double(payload, 2.5);
    std::ofstream(dir / "m.features.bin", std::ios::binary) << payload;
  }
  const Dataset ds = read_dataset((dir / "m.tsv").string(), tree);
  ASSERT_EQ(ds.records.size(), 1u);
  EXPECT_EQ(ds.records[0].features, std::vector<double>{2.5});
  EXPECT_EQ(ds.records[0].attributes, ds.records[0].true_attributes);
}

TEST(Manifest, MalformedInputsAreReported) {
  const CategoryTree tree = make_synthetic_tree(small_config());
  const auto dir = scratch_dir("bad");
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "m.tsv") << "# mode=features dim=2 payload=m.features.bin\n" << body;
    std::ofstream(dir / "m.features.bin", std::ios::binary) << std::string(16, '\0');
  };
  write("x\tm.features.bin#0\tc1\n");
  EXPECT_THROW(read_dataset((dir / "m.tsv").string(), tree), FormatError);
  write("x\tm.features.bin#3\tc1\ts1\t-\n");
  EXPECT_THROW(read_dataset((dir / "m.tsv").string(), tree), FormatError);
  write("x\tm.features.bin#0\tc1\tnope\t-\n");
  EXPECT_THROW(read_dataset((dir / "m.tsv").string(), tree), UnknownLabelError);
}
