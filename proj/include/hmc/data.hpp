#pragma once

// Product records, the synthetic hierarchical dataset generator, image
// augmentation, stratified splits, and dataset statistics.
//
// Manifest file (text, one record per line, tab separated):
//   # hmc-manifest 1
//   # mode=<features|image> dim=<feature width> image=<C>x<H>x<W> payload=<sidecar file>
//   id <TAB> payload-ref <TAB> category <TAB> sub-category <TAB> attributes [<TAB> true-attributes]
// Labels are tree ids. Attribute lists are comma joined, "-" when empty. The
// optional sixth column holds the hidden-truth attributes. payload-ref is
// "<sidecar>#<row>".
//
// Feature sidecar: rows of <dim> IEEE-754 binary64 values, little-endian,
// no header, row-major in payload-ref row order.
// Image sidecar: the text line "HMC-IMAGES 1 <count> <height> <width> <channels>\n"
// followed by count*height*width*channels bytes, each image stored HWC.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hmc/checkpoint.hpp"
#include "hmc/model_unified.hpp"
#include "hmc/nn.hpp"
#include "hmc/taxonomy.hpp"

namespace hmc {

/// 8-bit RGB raster stored HWC.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  bool empty() const { return pixels.empty(); }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct ProductRecord {
  std::string id;
  std::vector<double> features;  // feature mode
  Image image;                   // image mode
  std::size_t category = 0;
  std::size_t subcategory = 0;
  std::vector<std::size_t> attributes;       // annotated, ascending
  std::vector<std::size_t> true_attributes;  // hidden truth, ascending

  friend bool operator==(const ProductRecord&, const ProductRecord&) = default;
};

struct Dataset {
  InputMode mode = InputMode::features;
  std::size_t feature_dim = 0;
  ImageGeometry image{3, 32, 32};
  std::vector<ProductRecord> records;

  std::size_t input_width() const { return mode == InputMode::image ? image.size() : feature_dim; }
};

struct GeneratorConfig {
  std::size_t genders = 2;
  std::size_t families = 4;
  std::size_t categories = 8;
  std::size_t subcategories = 20;
  std::size_t attributes = 15;
  std::size_t attachments_per_attribute = 2;
  std::size_t products = 10000;
  /// Sub-category i is drawn with probability proportional to (i+1)^-imbalance.
  double imbalance = 1.0;
  /// Probability that each attribute attached to the product's category is present.
  double attribute_rate = 0.3;
  std::size_t max_attributes = 5;
  /// Probability that a present attribute is missing from the annotation.
  double missingness = 0.0;
  double noise = 1.0;
  InputMode input_mode = InputMode::features;
  std::size_t feature_dim = 64;
  std::size_t image_size = 32;
  std::uint64_t seed = 7;
};

/// Noiseless class signatures behind generated feature records.
struct Prototypes {
  std::vector<std::vector<double>> category;
  std::vector<std::vector<double>> subcategory;  // offsets added to the category prototype
  std::vector<std::vector<double>> attribute;
};

struct GeneratedData {
  CategoryTree tree;
  Dataset dataset;
  Prototypes prototypes;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream for item `index` under `seed`.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(seed ^ (stream * 0xD1B54A32D192ED03ull)) + index));
}

inline void check_rate(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw ContractError(std::string(what) + " must lie in [0, 1]");
}

struct Rgb {
  std::uint8_t r, g, b;
};

inline Rgb palette(std::size_t i, std::size_t n) {
  const double h = 6.0 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n, 1));
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const auto lo = static_cast<std::uint8_t>(40), hi = static_cast<std::uint8_t>(220);
  const auto up = static_cast<std::uint8_t>(40 + 180 * f), down = static_cast<std::uint8_t>(220 - 180 * f);
  switch (sector) {
    case 0: return {hi, up, lo};
    case 1: return {down, hi, lo};
    case 2: return {lo, hi, up};
    case 3: return {lo, down, hi};
    case 4: return {up, lo, hi};
    default: return {hi, lo, down};
  }
}

inline std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

/// Shape silhouette for sub-category `sub`, tinted by category, with one
/// marker per present attribute along the border.
inline Image draw_product(std::size_t size, std::size_t cat, std::size_t n_cat, std::size_t sub,
                          const std::vector<std::size_t>& attrs, std::size_t n_attr, double noise, Rng& rng) {
  Image img(size, size, 3, 255);
  const Rgb color = palette(cat, n_cat);
  const double c = static_cast<double>(size) / 2.0;
  std::uniform_int_distribution<int> jitter(-2, 2);
  const double cx = c + jitter(rng), cy = c + jitter(rng);
  const std::size_t kind = sub % 4;
  const double radius = static_cast<double>(size) * (0.22 + 0.06 * static_cast<double>((sub / 4) % 3));
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      bool inside = false;
      switch (kind) {
        case 0: inside = dx * dx + dy * dy <= radius * radius; break;
        case 1: inside = std::abs(dx) <= radius && std::abs(dy) <= radius; break;
        case 2: inside = dy <= radius && dy >= -radius && std::abs(dx) <= (dy + radius) / 2.0; break;
        default: inside = std::abs(dx) + std::abs(dy) <= radius; break;
      }
      if (inside) {
        img.at(y, x, 0) = color.r;
        img.at(y, x, 1) = color.g;
        img.at(y, x, 2) = color.b;
      }
    }
  }
  const std::size_t slots = std::max<std::size_t>(4 * (size / 4) - 4, 1);
  for (std::size_t a : attrs) {
    const std::size_t slot = (a * slots) / std::max<std::size_t>(n_attr, 1);
    const std::size_t side = size / 4;
    std::size_t mx = 0, my = 0;
    if (slot < side) {
      mx = slot * 4, my = 0;
    } else if (slot < 2 * side - 1) {
      mx = size - 3, my = (slot - side + 1) * 4;
    } else if (slot < 3 * side - 2) {
      mx = size - 3 - (slot - 2 * side + 2) * 4, my = size - 3;
    } else {
      mx = 0, my = size - 3 - (slot - 3 * side + 3) * 4;
    }
    const Rgb mc = palette(a, n_attr);
    for (std::size_t y = my; y < std::min(my + 3, size); ++y) {
      for (std::size_t x = mx; x < std::min(mx + 3, size); ++x) {
        img.at(y, x, 0) = static_cast<std::uint8_t>(mc.r / 2);
        img.at(y, x, 1) = static_cast<std::uint8_t>(mc.g / 2);
        img.at(y, x, 2) = static_cast<std::uint8_t>(mc.b / 2);
      }
    }
  }
  if (noise > 0.0) {
    std::normal_distribution<double> n01(0.0, 20.0 * noise);
    for (auto& p : img.pixels) p = clamp_byte(static_cast<double>(p) + n01(rng));
  }
  return img;
}

}  // namespace detail

/// Builds the synthetic tree: genders, families, categories and
/// sub-categories assigned round-robin to parents; each attribute attaches to
/// `attachments_per_attribute` categories spread across the category list.
inline CategoryTree make_synthetic_tree(const GeneratorConfig& c) {
  if (!c.genders || !c.families || !c.categories || !c.subcategories || !c.attributes) {
    throw ContractError("tree level counts must be at least 1");
  }
  if (c.families < c.genders || c.categories < c.families || c.subcategories < c.categories) {
    throw ContractError("every node needs at least one child: counts must not decrease down the tree");
  }
  CategoryTree t;
  for (std::size_t i = 0; i < c.genders; ++i) t.add(Level::gender, "g" + std::to_string(i), "gender_" + std::to_string(i), {});
  for (std::size_t i = 0; i < c.families; ++i) {
    t.add(Level::family, "f" + std::to_string(i), "family_" + std::to_string(i), {"g" + std::to_string(i % c.genders)});
  }
  for (std::size_t i = 0; i < c.categories; ++i) {
    t.add(Level::category, "c" + std::to_string(i), "category_" + std::to_string(i),
          {"f" + std::to_string(i % c.families)});
  }
  for (std::size_t i = 0; i < c.subcategories; ++i) {
    t.add(Level::subcategory, "s" + std::to_string(i), "subcategory_" + std::to_string(i),
          {"c" + std::to_string(i % c.categories)});
  }
  const std::size_t k = std::clamp<std::size_t>(c.attachments_per_attribute, 1, c.categories);
  const std::size_t step = std::max<std::size_t>(c.categories / k, 1);
  for (std::size_t j = 0; j < c.attributes; ++j) {
    std::vector<std::string> links;
    for (std::size_t a = 0; a < k; ++a) {
      std::string id = "c" + std::to_string((j + a * step + (a ? j / c.categories : 0)) % c.categories);
      if (std::find(links.begin(), links.end(), id) == links.end()) links.push_back(std::move(id));
    }
    t.add(Level::attribute, "a" + std::to_string(j), "attribute_" + std::to_string(j), std::move(links));
  }
  return t;
}

/// Generates tree and records. Each product draws from its own derived RNG
/// stream, so the output does not depend on `threads`.
inline GeneratedData generate(const GeneratorConfig& c, unsigned threads = 1) {
  detail::check_rate(c.attribute_rate, "attribute rate");
  detail::check_rate(c.missingness, "missingness rate");
  if (c.noise < 0.0) throw ContractError("noise scale must be nonnegative");
  if (c.products < c.subcategories) {
    throw ContractError("infeasible generator config: " + std::to_string(c.subcategories) +
                        " sub-categories but only " + std::to_string(c.products) + " products");
  }
  if (c.input_mode == InputMode::features && c.feature_dim == 0) throw ContractError("feature_dim must be positive");
  if (c.input_mode == InputMode::image && (c.image_size < 8 || c.image_size % 8)) {
    throw ContractError("image size must be a positive multiple of 8");
  }

  GeneratedData out;
  out.tree = make_synthetic_tree(c);
  const CategoryTree& tree = out.tree;

  std::vector<std::vector<std::size_t>> attached(c.categories);
  for (std::size_t cat = 0; cat < c.categories; ++cat) attached[cat] = tree.attributes_of(cat);

  if (c.input_mode == InputMode::features) {
    Rng proto_rng = detail::derived_rng(c.seed, 1, 0);
    std::normal_distribution<double> n01(0.0, 1.0);
    auto draw = [&](std::size_t count, double scale) {
      std::vector<std::vector<double>> v(count, std::vector<double>(c.feature_dim));
      for (auto& row : v) {
        for (double& x : row) x = scale * n01(proto_rng);
      }
      return v;
    };
    out.prototypes.category = draw(c.categories, 1.0);
    out.prototypes.subcategory = draw(c.subcategories, 0.75);
    out.prototypes.attribute = draw(c.attributes, 0.75);
  }

  std::vector<double> sub_weights(c.subcategories);
  for (std::size_t s = 0; s < c.subcategories; ++s) sub_weights[s] = std::pow(static_cast<double>(s + 1), -c.imbalance);
  const double wsum = std::accumulate(sub_weights.begin(), sub_weights.end(), 0.0);
  std::vector<double> cdf(c.subcategories);
  double run = 0.0;
  for (std::size_t s = 0; s < c.subcategories; ++s) {
    run += sub_weights[s] / wsum;
    cdf[s] = run;
  }

  Dataset& ds = out.dataset;
  ds.mode = c.input_mode;
  ds.feature_dim = c.input_mode == InputMode::features ? c.feature_dim : 0;
  ds.image = ImageGeometry{3, c.image_size, c.image_size};
  ds.records.resize(c.products);

  auto make_one = [&](std::size_t i) {
    Rng rng = detail::derived_rng(c.seed, 2, i);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    ProductRecord r;
    r.id = "p" + std::to_string(i);
    // The first `subcategories` products cover every sub-category once, so
    // no class is empty; the rest follow the power law.
    if (i < c.subcategories) {
      r.subcategory = i;
    } else {
      const double x = u01(rng);
      r.subcategory = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
      r.subcategory = std::min(r.subcategory, c.subcategories - 1);
    }
    r.category = tree.parent_index(Level::subcategory, r.subcategory);
    std::vector<std::size_t> present;
    for (std::size_t a : attached[r.category]) {
      if (u01(rng) < c.attribute_rate) present.push_back(a);
    }
    if (present.size() > c.max_attributes) {
      std::shuffle(present.begin(), present.end(), rng);
      present.resize(c.max_attributes);
    }
    std::sort(present.begin(), present.end());
    r.true_attributes = present;
    for (std::size_t a : present) {
      if (!(u01(rng) < c.missingness)) r.attributes.push_back(a);
    }
    if (c.input_mode == InputMode::features) {
      std::normal_distribution<double> noise(0.0, 1.0);
      r.features = out.prototypes.category[r.category];
      for (std::size_t k = 0; k < c.feature_dim; ++k) r.features[k] += out.prototypes.subcategory[r.subcategory][k];
      for (std::size_t a : r.true_attributes) {
        for (std::size_t k = 0; k < c.feature_dim; ++k) r.features[k] += out.prototypes.attribute[a][k];
      }
      if (c.noise > 0.0) {
        for (double& x : r.features) x += c.noise * noise(rng);
      }
    } else {
      r.image = detail::draw_product(c.image_size, r.category, c.categories, r.subcategory, r.true_attributes,
                                     c.attributes, c.noise, rng);
    }
    ds.records[i] = std::move(r);
  };

  threads = std::max(threads, 1u);
  if (threads == 1) {
    for (std::size_t i = 0; i < c.products; ++i) make_one(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < c.products; i += threads) make_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

enum class Transform { none, flip, crop, rotate };

struct AugmentResult {
  Image image;
  Transform applied = Transform::none;
};

inline Image flip_horizontal(const Image& in) {
  Image out = in;
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      for (std::size_t c = 0; c < in.channels; ++c) out.at(y, x, c) = in.at(y, in.width - 1 - x, c);
    }
  }
  return out;
}

namespace detail {

inline std::size_t reflect_index(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  if (m == 1) return 0;
  while (i < 0 || i >= m) i = i < 0 ? -i : 2 * (m - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Pads `pad` pixels by reflection on every side, then crops back to the
/// original extent at offset (oy, ox) within the padded image.
inline Image crop_reflect(const Image& in, std::size_t pad, std::size_t oy, std::size_t ox) {
  Image out(in.height, in.width, in.channels);
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      const std::size_t sy = detail::reflect_index(static_cast<long>(y + oy) - static_cast<long>(pad), in.height);
      const std::size_t sx = detail::reflect_index(static_cast<long>(x + ox) - static_cast<long>(pad), in.width);
      for (std::size_t c = 0; c < in.channels; ++c) out.at(y, x, c) = in.at(sy, sx, c);
    }
  }
  return out;
}

/// Rotation about the image centre with nearest-neighbour sampling; samples
/// falling outside the source clamp to the border.
inline Image rotate_nearest(const Image& in, double degrees) {
  Image out(in.height, in.width, in.channels);
  const double th = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = (static_cast<double>(in.height) - 1.0) / 2.0, cx = (static_cast<double>(in.width) - 1.0) / 2.0;
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      const long ix = std::clamp(std::lround(sx), 0l, static_cast<long>(in.width) - 1);
      const long iy = std::clamp(std::lround(sy), 0l, static_cast<long>(in.height) - 1);
      for (std::size_t c = 0; c < in.channels; ++c) {
        out.at(y, x, c) = in.at(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c);
      }
    }
  }
  return out;
}

struct AugmentOptions {
  double probability = 0.5;
  std::size_t crop_pad = 4;
  double max_rotation_degrees = 15.0;
};

/// With the given probability, applies one transform chosen uniformly among
/// horizontal flip, reflective-pad crop and small rotation.
inline AugmentResult augment_traced(const Image& in, Rng& rng, const AugmentOptions& opt = {}) {
  if (in.empty()) throw ContractError("augment requires an image payload");
  detail::check_rate(opt.probability, "augmentation probability");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (!(u01(rng) < opt.probability)) return {in, Transform::none};
  std::uniform_int_distribution<int> which(0, 2);
  switch (which(rng)) {
    case 0: return {flip_horizontal(in), Transform::flip};
    case 1: {
      std::uniform_int_distribution<std::size_t> off(0, 2 * opt.crop_pad);
      const std::size_t oy = off(rng), ox = off(rng);
      return {crop_reflect(in, opt.crop_pad, oy, ox), Transform::crop};
    }
    default: {
      std::uniform_real_distribution<double> ang(-opt.max_rotation_degrees, opt.max_rotation_degrees);
      return {rotate_nearest(in, ang(rng)), Transform::rotate};
    }
  }
}

inline Image augment(const Image& in, double probability, Rng& rng) {
  AugmentOptions opt;
  opt.probability = probability;
  return augment_traced(in, rng, opt).image;
}

inline Image augment(const ProductRecord& r, InputMode mode, double probability, Rng& rng) {
  if (mode != InputMode::image) throw ContractError("augment is defined for image inputs only");
  return augment(r.image, probability, rng);
}

// ---------------------------------------------------------------------------
// Splits and statistics

struct Split {
  std::vector<std::size_t> train;  // record indices, ascending
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;
};

/// Stratified by sub-category: each group is shuffled and its first
/// round(fraction * n) members go to train. Groups with fewer than two
/// products go entirely to train.
inline Split split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("train fraction must lie in (0, 1)");
  std::size_t n_sub = 0;
  for (const auto& r : ds.records) n_sub = std::max(n_sub, r.subcategory + 1);
  std::vector<std::vector<std::size_t>> groups(n_sub);
  for (std::size_t i = 0; i < ds.records.size(); ++i) groups[ds.records[i].subcategory].push_back(i);
  Split out;
  Rng rng = detail::derived_rng(seed, 3, 0);
  for (std::size_t s = 0; s < n_sub; ++s) {
    auto& g = groups[s];
    if (g.empty()) continue;
    if (g.size() < 2) {
      out.warnings.push_back("sub-category index " + std::to_string(s) + " has " + std::to_string(g.size()) +
                             " product; placed in train");
      out.train.insert(out.train.end(), g.begin(), g.end());
      continue;
    }
    std::shuffle(g.begin(), g.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(g.size())));
    out.train.insert(out.train.end(), g.begin(), g.begin() + static_cast<long>(n_train));
    out.test.insert(out.test.end(), g.begin() + static_cast<long>(n_train), g.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.mode = ds.mode;
  out.feature_dim = ds.feature_dim;
  out.image = ds.image;
  out.records.reserve(indices.size());
  for (std::size_t i : indices) out.records.push_back(ds.records.at(i));
  return out;
}

struct CountStats {
  double mean = 0.0;
  std::size_t max = 0;
  std::size_t min = 0;
  std::size_t classes_present = 0;  // classes with at least one product
  std::size_t classes_total = 0;
};

struct DatasetStats {
  std::size_t products = 0;
  CountStats per_category;
  CountStats per_subcategory;
  CountStats per_attribute;          // products carrying each annotated attribute
  CountStats attributes_per_product;  // annotated set sizes
};

namespace detail {

inline CountStats summarize_present(const std::vector<std::size_t>& counts) {
  CountStats s;
  s.classes_total = counts.size();
  std::size_t total = 0;
  bool first = true;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    ++s.classes_present;
    total += c;
    s.max = first ? c : std::max(s.max, c);
    s.min = first ? c : std::min(s.min, c);
    first = false;
  }
  if (s.classes_present) s.mean = static_cast<double>(total) / static_cast<double>(s.classes_present);
  return s;
}

}  // namespace detail

/// Class-count statistics are taken over classes that occur at least once.
inline DatasetStats stats(const Dataset& ds, const CategoryTree& tree) {
  DatasetStats st;
  st.products = ds.records.size();
  std::vector<std::size_t> cat(tree.count(Level::category)), sub(tree.count(Level::subcategory)),
      attr(tree.count(Level::attribute));
  std::size_t total_attrs = 0;
  for (const auto& r : ds.records) {
    ++cat.at(r.category);
    ++sub.at(r.subcategory);
    for (std::size_t a : r.attributes) ++attr.at(a);
    const std::size_t k = r.attributes.size();
    total_attrs += k;
    if (&r == &ds.records.front()) {
      st.attributes_per_product.max = st.attributes_per_product.min = k;
    } else {
      st.attributes_per_product.max = std::max(st.attributes_per_product.max, k);
      st.attributes_per_product.min = std::min(st.attributes_per_product.min, k);
    }
  }
  st.per_category = detail::summarize_present(cat);
  st.per_subcategory = detail::summarize_present(sub);
  st.per_attribute = detail::summarize_present(attr);
  st.attributes_per_product.classes_total = st.products;
  st.attributes_per_product.classes_present = st.products;
  if (st.products) st.attributes_per_product.mean = static_cast<double>(total_attrs) / static_cast<double>(st.products);
  return st;
}

// ---------------------------------------------------------------------------
// Model inputs

/// Input rows for `indices`: raw features, or CHW pixels scaled to [0, 1].
inline Tensor input_batch(const Dataset& ds, std::span<const std::size_t> indices,
                          const std::vector<Image>* replaced_images = nullptr) {
  const std::size_t w = ds.input_width();
  Tensor x({indices.size(), w});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const ProductRecord& rec = ds.records.at(indices[r]);
    auto row = x.row(r);
    if (ds.mode == InputMode::features) {
      if (rec.features.size() != w) {
        throw DimensionError("record " + rec.id + " has " + std::to_string(rec.features.size()) +
                             " features, expected " + std::to_string(w));
      }
      std::copy(rec.features.begin(), rec.features.end(), row.begin());
    } else {
      const Image& img = replaced_images ? (*replaced_images)[r] : rec.image;
      if (img.height != ds.image.height || img.width != ds.image.width || img.channels != ds.image.channels) {
        throw DimensionError("record " + rec.id + " image extents do not match the dataset");
      }
      const std::size_t plane = img.height * img.width;
      for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t xx = 0; xx < img.width; ++xx) {
          for (std::size_t c = 0; c < img.channels; ++c) {
            row[c * plane + y * img.width + xx] = static_cast<double>(img.at(y, xx, c)) / 255.0;
          }
        }
      }
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace detail {

inline std::string join_ids(const CategoryTree& tree, Level level, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) s += ',';
    s += tree.node(level, idx[i]).id;
  }
  return s;
}

inline std::vector<std::size_t> parse_ids(const CategoryTree& tree, Level level, const std::string& field) {
  std::vector<std::size_t> out;
  if (field == "-" || field.empty()) return out;
  for (const auto& id : split(field, ',')) {
    if (!id.empty()) out.push_back(tree.index_of(level, id));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::string format_geometry(const ImageGeometry& g) {
  return std::to_string(g.channels) + "x" + std::to_string(g.height) + "x" + std::to_string(g.width);
}

}  // namespace detail

/// Writes `<dir>/<stem>.tsv` and its sidecar (`<stem>.features.bin` or
/// `<stem>.images.bin`). Returns the manifest path.
inline std::string write_dataset(const std::string& dir, const std::string& stem, const Dataset& ds,
                                 const CategoryTree& tree) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const bool image = ds.mode == InputMode::image;
  const std::string sidecar = stem + (image ? ".images.bin" : ".features.bin");
  std::ostringstream m;
  m << "# hmc-manifest 1\n";
  m << "# mode=" << input_mode_name(ds.mode) << " dim=" << ds.feature_dim
    << " image=" << detail::format_geometry(ds.image) << " payload=" << sidecar << '\n';
  std::string payload;
  if (image) {
    payload = "HMC-IMAGES 1 " + std::to_string(ds.records.size()) + " " + std::to_string(ds.image.height) + " " +
              std::to_string(ds.image.width) + " " + std::to_string(ds.image.channels) + "\n";
  }
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const ProductRecord& r = ds.records[i];
    m << r.id << '\t' << sidecar << '#' << i << '\t' << tree.node(Level::category, r.category).id << '\t'
      << tree.node(Level::subcategory, r.subcategory).id << '\t'
      << detail::join_ids(tree, Level::attribute, r.attributes) << '\t'
      << detail::join_ids(tree, Level::attribute, r.true_attributes) << '\n';
    if (image) {
      payload.append(reinterpret_cast<const char*>(r.image.pixels.data()), r.image.pixels.size());
    } else {
      for (double v : r.features) detail::put_le_double(payload, v);
    }
  }
  const std::string manifest = (fs::path(dir) / (stem + ".tsv")).string();
  detail::write_file(manifest, m.str());
  detail::write_file((fs::path(dir) / sidecar).string(), payload);
  return manifest;
}

/// Reads a manifest and its sidecar; labels are resolved against `tree`.
/// When the optional truth column is absent, the hidden truth equals the
/// annotation.
inline Dataset read_dataset(const std::string& manifest_path, const CategoryTree& tree) {
  namespace fs = std::filesystem;
  const std::string text = detail::read_file(manifest_path);
  Dataset ds;
  std::string sidecar;
  struct Row {
    ProductRecord rec;
    std::size_t payload_row;
  };
  std::vector<Row> rows;
  std::size_t line_no = 0;
  for (const std::string& raw : detail::split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string tok;
      while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "mode") ds.mode = parse_input_mode(val);
        else if (key == "dim") ds.feature_dim = std::stoul(val);
        else if (key == "payload") sidecar = val;
        else if (key == "image") {
          const auto parts = detail::split(val, 'x');
          if (parts.size() != 3) throw FormatError("bad image geometry in manifest header");
          ds.image = ImageGeometry{std::stoul(parts[0]), std::stoul(parts[1]), std::stoul(parts[2])};
        }
      }
      continue;
    }
    const auto f = detail::split(line, '\t');
    if (f.size() != 5 && f.size() != 6) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 5 or 6 fields");
    }
    Row row;
    row.rec.id = f[0];
    const auto hash = f[1].rfind('#');
    if (hash == std::string::npos) throw FormatError("manifest line " + std::to_string(line_no) + ": bad payload-ref");
    if (sidecar.empty()) sidecar = f[1].substr(0, hash);
    try {
      row.payload_row = std::stoul(f[1].substr(hash + 1));
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": bad payload row");
    }
    row.rec.category = tree.index_of(Level::category, f[2]);
    row.rec.subcategory = tree.index_of(Level::subcategory, f[3]);
    row.rec.attributes = detail::parse_ids(tree, Level::attribute, f[4]);
    row.rec.true_attributes = f.size() == 6 ? detail::parse_ids(tree, Level::attribute, f[5]) : row.rec.attributes;
    rows.push_back(std::move(row));
  }
  const std::string payload = rows.empty() ? std::string{}
                                           : detail::read_file((fs::path(manifest_path).parent_path() / sidecar).string());
  std::size_t base = 0;
  std::size_t per_row = 0;
  if (ds.mode == InputMode::image) {
    const auto nl = payload.find('\n');
    if (nl == std::string::npos) throw FormatError("image sidecar lacks header");
    std::istringstream hs(payload.substr(0, nl));
    std::string magic;
    int version = 0;
    std::size_t count = 0, h = 0, w = 0, c = 0;
    if (!(hs >> magic >> version >> count >> h >> w >> c) || magic != "HMC-IMAGES" || version != 1) {
      throw FormatError("bad image sidecar header");
    }
    ds.image = ImageGeometry{c, h, w};
    base = nl + 1;
    per_row = h * w * c;
  } else {
    if (ds.feature_dim == 0) throw FormatError("manifest header lacks feature dim");
    per_row = ds.feature_dim * 8;
  }
  for (auto& row : rows) {
    const std::size_t off = base + row.payload_row * per_row;
    if (off + per_row > payload.size()) throw FormatError("payload for " + row.rec.id + " exceeds sidecar");
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data() + off);
    if (ds.mode == InputMode::image) {
      row.rec.image = Image(ds.image.height, ds.image.width, ds.image.channels);
      std::copy(p, p + per_row, row.rec.image.pixels.begin());
    } else {
      row.rec.features.resize(ds.feature_dim);
      for (std::size_t k = 0; k < ds.feature_dim; ++k) row.rec.features[k] = detail::get_le_double(p + 8 * k);
    }
    ds.records.push_back(std::move(row.rec));
  }
  return ds;
}

}  // namespace hmc
