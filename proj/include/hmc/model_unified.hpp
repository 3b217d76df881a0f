#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hmc/checkpoint.hpp"
#include "hmc/losses.hpp"
#include "hmc/nn.hpp"
#include "hmc/taxonomy.hpp"
#include "hmc/ops.hpp"

namespace hmc {

enum class Variant { final_model, no_mp, backbone_indep };
enum class InputMode { features, image };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::final_model: return "final";
    case Variant::no_mp: return "no_mp";
    case Variant::backbone_indep: return "backbone_indep";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "final") return Variant::final_model;
  if (s == "no_mp") return Variant::no_mp;
  if (s == "backbone_indep") return Variant::backbone_indep;
  throw ContractError("unknown variant: " + std::string(s));
}

inline std::string_view input_mode_name(InputMode m) { return m == InputMode::image ? "image" : "features"; }

inline InputMode parse_input_mode(std::string_view s) {
  if (s == "features" || s == "feature") return InputMode::features;
  if (s == "image") return InputMode::image;
  throw ContractError("unknown input mode: " + std::string(s));
}

/// Trainable-parameter constant of an ImageNet ResNet-50 trunk, used only for
/// accounting against the full-scale architecture.
inline constexpr std::size_t kResNet50BackboneParameters = 23'587'712;

struct UnifiedModelConfig {
  /// Width of the encoder output fed to the per-level projections. In
  /// feature mode this is also the input feature width; in image mode it is
  /// derived from the image geometry and conv channels.
  std::size_t backbone_dim = 2048;
  std::size_t hidden_dim = 1024;
  std::size_t n_categories = 64;
  std::size_t n_subcategories = 95;
  std::size_t n_attributes = 75;
  Variant variant = Variant::final_model;
  double dropout = 0.3;
  double l2_factor = 0.0005;

  InputMode input_mode = InputMode::features;
  /// Feature mode: number of dense+ReLU stages (backbone_dim wide) in the
  /// encoder; 0 means identity over the input features.
  std::size_t encoder_stages = 0;
  ImageGeometry image{3, 32, 32};
  std::vector<std::size_t> conv_channels{8, 16, 32};

  // Ablation knobs for the message-propagation block.
  bool downward = true;
  bool upward = true;

  std::size_t input_dim() const { return input_mode == InputMode::image ? image.size() : backbone_dim; }

  std::size_t stage_count() const {
    return input_mode == InputMode::image ? conv_channels.size() : encoder_stages;
  }

  /// Fills derived fields and checks invariants.
  void validate() {
    if (input_mode == InputMode::image) {
      if (conv_channels.empty()) throw ContractError("image encoder needs at least one conv stage");
      const std::size_t div = std::size_t{1} << conv_channels.size();
      if (image.height % div || image.width % div) {
        throw ContractError("image extents must be divisible by 2^stages");
      }
      backbone_dim = conv_channels.back() * (image.height / div) * (image.width / div);
    }
    if (!backbone_dim || !hidden_dim || !n_categories || !n_subcategories || !n_attributes) {
      throw ContractError("model dimensions must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must lie in [0, 1)");
    if (l2_factor < 0.0) throw ContractError("l2 factor must be nonnegative");
    if (variant == Variant::backbone_indep && stage_count() == 0) {
      throw ContractError("backbone_indep needs an encoder with at least one stage");
    }
  }
};

struct LevelLatents {
  Var cat, sub, attr;
};

struct LevelLogits {
  Var cat, sub, attr;
};

struct ForwardResult {
  LevelLogits logits;
  LevelLogits probs;  // softmax, softmax, sigmoid
};

struct StageCount {
  std::string stage;
  std::size_t dense_layers = 0;
  std::size_t parameters = 0;
};

struct ParameterCount {
  std::vector<StageCount> stages;  // head stages in forward order
  std::size_t head = 0;
  std::size_t backbone = 0;        // encoder actually built at desk scale

  std::size_t total_with_full_backbone() const { return head + kResNet50BackboneParameters; }
};

namespace detail {

inline std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

inline std::size_t encoder_stage_parameters(const UnifiedModelConfig& c, std::size_t stage) {
  if (c.input_mode == InputMode::features) return dense_count(c.backbone_dim, c.backbone_dim);
  const std::size_t in_c = stage == 0 ? c.image.channels : c.conv_channels[stage - 1];
  const std::size_t out_c = c.conv_channels[stage];
  return out_c * in_c * 9 + out_c;
}

}  // namespace detail

/// Closed-form accounting; the model's registered tensors must agree.
inline ParameterCount count_parameters(UnifiedModelConfig c) {
  c.validate();
  const std::size_t b = c.backbone_dim, d = c.hidden_dim;
  const std::size_t dd = d * d + d;
  ParameterCount pc;
  pc.stages.push_back({"projections", 3, 3 * (b * d + d)});
  if (c.variant == Variant::no_mp) {
    pc.stages.push_back({"dense_chains", 13, 13 * dd});
  } else {
    pc.stages.push_back({"message_down", 5, 5 * dd});
    pc.stages.push_back({"message_up", 5, 5 * dd});
    pc.stages.push_back({"message_merge", 3, 3 * dd});
  }
  pc.stages.push_back({"output_hidden", 3, 3 * dd});
  pc.stages.push_back({"classifiers", 3,
                       (d * c.n_categories + c.n_categories) + (d * c.n_subcategories + c.n_subcategories) +
                           (d * c.n_attributes + c.n_attributes)});
  for (const auto& s : pc.stages) pc.head += s.parameters;
  const std::size_t stages = c.stage_count();
  for (std::size_t i = 0; i < stages; ++i) {
    const std::size_t p = detail::encoder_stage_parameters(c, i);
    pc.backbone += (c.variant == Variant::backbone_indep && i + 1 == stages) ? 3 * p : p;
  }
  return pc;
}

/// Stack of encoder stages: dense+ReLU in feature mode, conv3x3+ReLU+avgpool
/// in image mode.
class Encoder {
 public:
  Encoder() = default;

  Encoder(const UnifiedModelConfig& c, std::size_t first, std::size_t last, const std::string& prefix, Rng& rng,
          InitScheme scheme)
      : mode_(c.input_mode) {
    for (std::size_t i = first; i < last; ++i) {
      Stage s;
      const std::string name = prefix + "." + std::to_string(i);
      if (mode_ == InputMode::features) {
        s.dense = DenseLayer(name, c.backbone_dim, c.backbone_dim, rng, 0.0, scheme);
      } else {
        const std::size_t in_c = i == 0 ? c.image.channels : c.conv_channels[i - 1];
        const std::size_t out_c = c.conv_channels[i];
        const std::size_t div = std::size_t{1} << i;
        s.geometry = ImageGeometry{in_c, c.image.height / div, c.image.width / div};
        s.out_channels = out_c;
        s.conv_weight = Parameter(name + ".conv.weight",
                                  init_params({out_c, in_c * 9}, rng, scheme, in_c * 9, out_c * 9));
        s.conv_bias = Parameter(name + ".conv.bias", Tensor({out_c}));
      }
      stages_.push_back(std::move(s));
    }
  }

  std::size_t stages() const { return stages_.size(); }

  Var forward(Tape& tape, Var x) {
    for (Stage& s : stages_) {
      if (mode_ == InputMode::features) {
        x = relu(s.dense.forward(tape, x));
      } else {
        x = relu(conv3x3(x, tape.param(s.conv_weight), tape.param(s.conv_bias), s.geometry));
        x = avg_pool2(x, ImageGeometry{s.out_channels, s.geometry.height, s.geometry.width});
      }
    }
    return x;
  }

  void collect(std::vector<Parameter*>& out) {
    for (Stage& s : stages_) {
      if (mode_ == InputMode::features) {
        out.push_back(&s.dense.weight);
        out.push_back(&s.dense.bias);
      } else {
        out.push_back(&s.conv_weight);
        out.push_back(&s.conv_bias);
      }
    }
  }

 private:
  struct Stage {
    DenseLayer dense;
    Parameter conv_weight;
    Parameter conv_bias;
    ImageGeometry geometry;
    std::size_t out_channels = 0;
  };

  InputMode mode_ = InputMode::features;
  std::vector<Stage> stages_;
};

namespace detail {

inline Var dense_relu(Tape& tape, DenseLayer& layer, Var x) { return relu(layer.forward(tape, x)); }

}  // namespace detail

/// Unified three-level classifier: encoder, per-level projections, the
/// asymmetric bidirectional message-propagation block (or dense chains for
/// no_mp), and per-level output MLPs.
class UnifiedModel {
 public:
  explicit UnifiedModel(UnifiedModelConfig config, Rng& rng, InitScheme scheme = InitScheme::glorot_uniform)
      : config_(std::move(config)) {
    config_.validate();
    const auto& c = config_;
    const std::size_t b = c.backbone_dim, d = c.hidden_dim;
    const double l2 = c.l2_factor;
    const std::size_t stages = c.stage_count();
    if (c.variant == Variant::backbone_indep) {
      encoder_ = Encoder(c, 0, stages - 1, "encoder", rng, scheme);
      for (std::size_t l = 0; l < 3; ++l) {
        level_tails_[l] = Encoder(c, stages - 1, stages, std::string("encoder.") + kLevelTags[l], rng, scheme);
      }
    } else {
      encoder_ = Encoder(c, 0, stages, "encoder", rng, scheme);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      projections_[l] = DenseLayer(std::string("proj.") + kLevelTags[l], b, d, rng, l2, scheme);
    }
    if (c.variant == Variant::no_mp) {
      const std::array<std::size_t, 3> depth = {5, 4, 4};
      for (std::size_t l = 0; l < 3; ++l) {
        for (std::size_t i = 0; i < depth[l]; ++i) {
          chains_[l].emplace_back("chain." + std::string(kLevelTags[l]) + "." + std::to_string(i), d, d, rng, l2,
                                  scheme);
        }
      }
    } else {
      auto mk = [&](const char* name) { return DenseLayer(std::string("mp.") + name, d, d, rng, l2, scheme); };
      down_cat_ = mk("down.cat");
      down_sub_ = mk("down.sub");
      down_attr_ = mk("down.attr");
      down_cat_to_sub_ = mk("down.cat_to_sub");
      down_cat_to_attr_ = mk("down.cat_to_attr");
      up_cat_ = mk("up.cat");
      up_sub_ = mk("up.sub");
      up_attr_ = mk("up.attr");
      up_sub_to_cat_ = mk("up.sub_to_cat");
      up_attr_to_cat_ = mk("up.attr_to_cat");
      for (std::size_t l = 0; l < 3; ++l) {
        merge_[l] = DenseLayer(std::string("mp.merge.") + kLevelTags[l], d, d, rng, l2, scheme);
      }
    }
    const std::array<std::size_t, 3> classes = {c.n_categories, c.n_subcategories, c.n_attributes};
    for (std::size_t l = 0; l < 3; ++l) {
      head_hidden_[l] = DenseLayer(std::string("head.") + kLevelTags[l] + ".hidden", d, d, rng, 0.0, scheme);
      head_out_[l] = DenseLayer(std::string("head.") + kLevelTags[l] + ".out", d, classes[l], rng, 0.0, scheme);
    }
  }

  UnifiedModel(const UnifiedModel&) = default;
  UnifiedModel& operator=(const UnifiedModel&) = default;

  const UnifiedModelConfig& config() const { return config_; }

  /// Encoder output(s): one shared feature row per product, or one per level
  /// for backbone_indep.
  std::array<Var, 3> encode(Tape& tape, Var input) {
    if (input.value().rank() != 2 || input.value().shape()[1] != config_.input_dim()) {
      throw DimensionError("model expects input rows of width " + std::to_string(config_.input_dim()) +
                           ", got " + to_string(input.value().shape()));
    }
    Var shared = encoder_.forward(tape, input);
    if (config_.variant != Variant::backbone_indep) return {shared, shared, shared};
    return {level_tails_[0].forward(tape, shared), level_tails_[1].forward(tape, shared),
            level_tails_[2].forward(tape, shared)};
  }

  LevelLatents project_levels(Tape& tape, const std::array<Var, 3>& features) {
    for (Var f : features) {
      if (f.value().rank() != 2 || f.value().shape()[1] != config_.backbone_dim) {
        throw DimensionError("projection expects feature width " + std::to_string(config_.backbone_dim) +
                             ", got " + to_string(f.value().shape()));
      }
    }
    return {detail::dense_relu(tape, projections_[0], features[0]),
            detail::dense_relu(tape, projections_[1], features[1]),
            detail::dense_relu(tape, projections_[2], features[2])};
  }

  LevelLatents project_levels(Tape& tape, Var features) { return project_levels(tape, {features, features, features}); }

  /// Category latents flow to both lower levels; no sub-category/attribute edge.
  LevelLatents message_pass_down(Tape& tape, const LevelLatents& z) {
    require_block();
    Var cat = relu(down_cat_.forward(tape, z.cat));
    Var sub = relu(add(down_sub_.forward(tape, z.sub), down_cat_to_sub_.forward(tape, z.cat)));
    Var attr = relu(add(down_attr_.forward(tape, z.attr), down_cat_to_attr_.forward(tape, z.cat)));
    return {cat, sub, attr};
  }

  /// Sub-category and attribute latents both flow into the category level.
  LevelLatents message_pass_up(Tape& tape, const LevelLatents& z) {
    require_block();
    Var cat = relu(add(add(up_cat_.forward(tape, z.cat), up_sub_to_cat_.forward(tape, z.sub)),
                       up_attr_to_cat_.forward(tape, z.attr)));
    Var sub = relu(up_sub_.forward(tape, z.sub));
    Var attr = relu(up_attr_.forward(tape, z.attr));
    return {cat, sub, attr};
  }

  /// Per level: dropout(relu(merge(down + up))).
  LevelLatents merge_directions(Tape& tape, const LevelLatents& down, const LevelLatents& up, Mode mode, Rng& rng) {
    return merge_levels(tape, {add(down.cat, up.cat), add(down.sub, up.sub), add(down.attr, up.attr)}, mode, rng);
  }

  /// Full propagation stage for the configured variant and ablation knobs.
  LevelLatents propagate(Tape& tape, const LevelLatents& z, Mode mode, Rng& rng) {
    if (config_.variant == Variant::no_mp) {
      std::array<Var, 3> x = {z.cat, z.sub, z.attr};
      for (std::size_t l = 0; l < 3; ++l) {
        for (DenseLayer& layer : chains_[l]) x[l] = detail::dense_relu(tape, layer, x[l]);
        x[l] = dropout(x[l], config_.dropout, mode, rng);
      }
      return {x[0], x[1], x[2]};
    }
    if (config_.downward && config_.upward) {
      return merge_directions(tape, message_pass_down(tape, z), message_pass_up(tape, z), mode, rng);
    }
    if (config_.downward) {
      const LevelLatents down = message_pass_down(tape, z);
      return merge_levels(tape, {down.cat, down.sub, down.attr}, mode, rng);
    }
    if (config_.upward) {
      const LevelLatents up = message_pass_up(tape, z);
      return merge_levels(tape, {up.cat, up.sub, up.attr}, mode, rng);
    }
    return merge_levels(tape, {z.cat, z.sub, z.attr}, mode, rng);
  }

  LevelLogits output_heads(Tape& tape, const LevelLatents& y) {
    const std::array<Var, 3> in = {y.cat, y.sub, y.attr};
    std::array<Var, 3> out;
    for (std::size_t l = 0; l < 3; ++l) {
      out[l] = head_out_[l].forward(tape, detail::dense_relu(tape, head_hidden_[l], in[l]));
    }
    return {out[0], out[1], out[2]};
  }

  ForwardResult forward(Tape& tape, Var input, Mode mode, Rng& rng) {
    const LevelLatents z = project_levels(tape, encode(tape, input));
    const LevelLogits logits = output_heads(tape, propagate(tape, z, mode, rng));
    return {logits, {softmax(logits.cat), softmax(logits.sub), sigmoid(logits.attr)}};
  }

  /// Every trainable tensor, in a fixed order.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder_.collect(out);
    for (auto& tail : level_tails_) tail.collect(out);
    for (DenseLayer* layer : dense_layers()) {
      out.push_back(&layer->weight);
      out.push_back(&layer->bias);
    }
    return out;
  }

  /// Head dense layers (everything except the encoder), in a fixed order.
  std::vector<DenseLayer*> dense_layers() {
    std::vector<DenseLayer*> out;
    for (auto& p : projections_) out.push_back(&p);
    if (config_.variant == Variant::no_mp) {
      for (auto& chain : chains_) {
        for (auto& layer : chain) out.push_back(&layer);
      }
    } else {
      for (DenseLayer* l : {&down_cat_, &down_sub_, &down_attr_, &down_cat_to_sub_, &down_cat_to_attr_, &up_cat_,
                            &up_sub_, &up_attr_, &up_sub_to_cat_, &up_attr_to_cat_}) {
        out.push_back(l);
      }
      for (auto& m : merge_) out.push_back(&m);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      out.push_back(&head_hidden_[l]);
      out.push_back(&head_out_[l]);
    }
    return out;
  }

  /// Projections plus the block (or the chains replacing it).
  std::vector<DenseLayer*> regularized_layers() {
    std::vector<DenseLayer*> out;
    for (DenseLayer* l : dense_layers()) {
      if (l->l2_factor > 0.0) out.push_back(l);
    }
    return out;
  }

  Var l2_term(Tape& tape) {
    const auto layers = regularized_layers();
    return l2_penalty(tape, layers);
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  std::vector<std::pair<std::string, std::string>> config_entries() const { return config_entries(config_); }

  static std::vector<std::pair<std::string, std::string>> config_entries(const UnifiedModelConfig& c) {
    std::vector<std::pair<std::string, std::string>> e = {
        {"model.variant", std::string(variant_name(c.variant))},
        {"model.input_mode", std::string(input_mode_name(c.input_mode))},
        {"model.backbone_dim", std::to_string(c.backbone_dim)},
        {"model.hidden_dim", std::to_string(c.hidden_dim)},
        {"model.n_categories", std::to_string(c.n_categories)},
        {"model.n_subcategories", std::to_string(c.n_subcategories)},
        {"model.n_attributes", std::to_string(c.n_attributes)},
        {"model.dropout", format_double(c.dropout)},
        {"model.l2_factor", format_double(c.l2_factor)},
        {"model.encoder_stages", std::to_string(c.encoder_stages)},
        {"model.image", std::to_string(c.image.channels) + "x" + std::to_string(c.image.height) + "x" +
                            std::to_string(c.image.width)},
        {"model.downward", c.downward ? "1" : "0"},
        {"model.upward", c.upward ? "1" : "0"},
    };
    std::string ch;
    for (std::size_t i = 0; i < c.conv_channels.size(); ++i) ch += (i ? "," : "") + std::to_string(c.conv_channels[i]);
    e.emplace_back("model.conv_channels", ch);
    return e;
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    ck.config = config_entries();
    for (Parameter* p : parameters()) ck.tensors.emplace_back(p->name, p->value);
    return ck;
  }

  static UnifiedModelConfig config_from_checkpoint(const Checkpoint& ck) {
    auto get = [&](const std::string& key) -> const std::string& {
      const std::string* v = ck.config_value(key);
      if (!v) throw FormatError("checkpoint config lacks " + key);
      return *v;
    };
    UnifiedModelConfig c;
    c.variant = parse_variant(get("model.variant"));
    c.input_mode = parse_input_mode(get("model.input_mode"));
    c.backbone_dim = std::stoul(get("model.backbone_dim"));
    c.hidden_dim = std::stoul(get("model.hidden_dim"));
    c.n_categories = std::stoul(get("model.n_categories"));
    c.n_subcategories = std::stoul(get("model.n_subcategories"));
    c.n_attributes = std::stoul(get("model.n_attributes"));
    c.dropout = std::stod(get("model.dropout"));
    c.l2_factor = std::stod(get("model.l2_factor"));
    c.encoder_stages = std::stoul(get("model.encoder_stages"));
    {
      const auto parts = detail::split(get("model.image"), 'x');
      if (parts.size() != 3) throw FormatError("bad model.image entry");
      c.image = ImageGeometry{std::stoul(parts[0]), std::stoul(parts[1]), std::stoul(parts[2])};
    }
    c.downward = get("model.downward") == "1";
    c.upward = get("model.upward") == "1";
    c.conv_channels.clear();
    for (const auto& s : detail::split(get("model.conv_channels"), ',')) {
      if (!s.empty()) c.conv_channels.push_back(std::stoul(s));
    }
    return c;
  }

  static UnifiedModel from_checkpoint(const Checkpoint& ck) {
    Rng rng(0);
    UnifiedModel m(config_from_checkpoint(ck), rng, InitScheme::zeros);
    for (Parameter* p : m.parameters()) {
      const Tensor& t = ck.tensor(p->name);
      if (t.shape() != p->value.shape()) {
        throw FormatError("checkpoint tensor " + p->name + " has shape " + to_string(t.shape()) + ", expected " +
                          to_string(p->value.shape()));
      }
      p->value = t;
      p->zero_grad();
    }
    return m;
  }

 private:
  static constexpr std::array<const char*, 3> kLevelTags = {"cat", "sub", "attr"};

  static std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }

  void require_block() const {
    if (config_.variant == Variant::no_mp) throw ContractError("no_mp variant has no message-propagation block");
  }

  LevelLatents merge_levels(Tape& tape, const std::array<Var, 3>& summed, Mode mode, Rng& rng) {
    std::array<Var, 3> y;
    for (std::size_t l = 0; l < 3; ++l) {
      y[l] = dropout(detail::dense_relu(tape, merge_[l], summed[l]), config_.dropout, mode, rng);
    }
    return {y[0], y[1], y[2]};
  }

  UnifiedModelConfig config_;
  Encoder encoder_;
  std::array<Encoder, 3> level_tails_;
  std::array<DenseLayer, 3> projections_;
  DenseLayer down_cat_, down_sub_, down_attr_, down_cat_to_sub_, down_cat_to_attr_;
  DenseLayer up_cat_, up_sub_, up_attr_, up_sub_to_cat_, up_attr_to_cat_;
  std::array<DenseLayer, 3> merge_;
  std::array<std::vector<DenseLayer>, 3> chains_;
  std::array<DenseLayer, 3> head_hidden_;
  std::array<DenseLayer, 3> head_out_;
};

}  // namespace hmc
