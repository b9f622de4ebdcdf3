#include "latkit/model.hpp"

#include <cmath>

#include "latkit/error.hpp"
#include "latkit/rng.hpp"

namespace latkit {

namespace {

using ad::Shape;
using ad::Tensor;

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Learnable positions start from the usual sin/cos table, which makes
// fixed-offset attention (previous token, next token) linear in the inputs.
Tensor sinusoidal_init(std::size_t seq_len, std::size_t width) {
  std::vector<double> v(seq_len * width);
  for (std::size_t t = 0; t < seq_len; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i / 2 * 2) / static_cast<double>(width));
      const double a = static_cast<double>(t) * freq;
      v[t * width + i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  return Tensor({seq_len, width}, std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

Tensor copy_param(const Tensor& t) {
  auto c = t.detach();
  c.set_requires_grad(t.requires_grad());
  return c;
}

// [B, ...] -> [B, prod(...)]
Tensor flatten_batch(const Tensor& x) {
  if (x.dim() == 2) return x;
  return ad::reshape(x, {x.size(0), x.numel() / x.size(0)});
}

Tensor linear(const Tensor& x2d, const Tensor& w, const Tensor& b) {
  return ad::add_bias(ad::matmul(x2d, w), b);
}

// x: [B,T,D] -> linear over the last axis -> [B,T,out]
Tensor linear3(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto bsz = x.size(0), t = x.size(1);
  auto y = linear(ad::reshape(x, {bsz * t, x.size(2)}), w, b);
  return ad::reshape(y, {bsz, t, w.size(1)});
}

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out, bool relu, Rng& rng)
      : weight_(normal_init({in, out}, std::sqrt((relu ? 2.0 : 1.0) / static_cast<double>(in)), rng)),
        bias_(zeros_param({out})),
        relu_(relu) {}

  Tensor forward(const Tensor& x) const override {
    auto y = linear(flatten_batch(x), weight_, bias_);
    return relu_ ? ad::relu(y) : y;
  }
  std::string_view kind() const override { return relu_ ? "dense_relu" : "dense"; }
  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<DenseLayer>(*this);
    c->weight_ = copy_param(weight_);
    c->bias_ = copy_param(bias_);
    return c;
  }
  std::vector<std::pair<std::string, Tensor>> parameters() const override {
    return {{"weight", weight_}, {"bias", bias_}};
  }

 private:
  Tensor weight_;
  Tensor bias_;
  bool relu_;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride, Rng& rng)
      : kernel_(normal_init({out_ch, in_ch, k, k}, std::sqrt(2.0 / static_cast<double>(in_ch * k * k)), rng)),
        bias_(zeros_param({out_ch})),
        stride_(stride) {}

  Tensor forward(const Tensor& x) const override {
    return ad::relu(ad::add_channel_bias(ad::conv2d(x, kernel_, stride_), bias_));
  }
  std::string_view kind() const override { return "conv_relu"; }
  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<ConvLayer>(*this);
    c->kernel_ = copy_param(kernel_);
    c->bias_ = copy_param(bias_);
    return c;
  }
  std::vector<std::pair<std::string, Tensor>> parameters() const override {
    return {{"kernel", kernel_}, {"bias", bias_}};
  }

 private:
  Tensor kernel_;
  Tensor bias_;
  std::size_t stride_;
};

class EmbeddingLayer final : public Layer {
 public:
  EmbeddingLayer(std::size_t vocab, std::size_t seq_len, std::size_t width, Rng& rng)
      : tokens_(normal_init({vocab, width}, 1.0, rng)), positions_(sinusoidal_init(seq_len, width)) {}

  Tensor forward(const Tensor& ids) const override {
    return ad::add_bias(ad::embedding(ids, tokens_), positions_);
  }
  std::string_view kind() const override { return "embedding"; }
  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<EmbeddingLayer>(*this);
    c->tokens_ = copy_param(tokens_);
    c->positions_ = copy_param(positions_);
    return c;
  }
  std::vector<std::pair<std::string, Tensor>> parameters() const override {
    return {{"tokens", tokens_}, {"positions", positions_}};
  }

 private:
  Tensor tokens_;
  Tensor positions_;
};

// Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x)).
class TransformerBlock final : public Layer {
 public:
  TransformerBlock(std::size_t width, std::size_t heads, bool causal, Rng& rng)
      : heads_(heads), causal_(causal) {
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    ln1_g_ = ones_param({width});
    ln1_b_ = zeros_param({width});
    wq_ = normal_init({width, width}, s, rng);
    wk_ = normal_init({width, width}, s, rng);
    wv_ = normal_init({width, width}, s, rng);
    wo_ = normal_init({width, width}, s, rng);
    bq_ = zeros_param({width});
    bk_ = zeros_param({width});
    bv_ = zeros_param({width});
    bo_ = zeros_param({width});
    ln2_g_ = ones_param({width});
    ln2_b_ = zeros_param({width});
    w1_ = normal_init({width, 4 * width}, s, rng);
    b1_ = zeros_param({4 * width});
    w2_ = normal_init({4 * width, width}, 1.0 / std::sqrt(4.0 * static_cast<double>(width)), rng);
    b2_ = zeros_param({width});
  }

  Tensor forward(const Tensor& x) const override {
    const auto b = x.size(0), t = x.size(1), d = x.size(2);
    const auto dh = d / heads_;
    static constexpr std::size_t to_heads[] = {0, 2, 1, 3};

    auto split_heads = [&](const Tensor& y) {
      auto r = ad::reshape(y, {b, t, heads_, dh});
      return ad::reshape(ad::permute(r, to_heads), {b * heads_, t, dh});
    };
    auto h = ad::layer_norm(x, ln1_g_, ln1_b_);
    auto q = split_heads(linear3(h, wq_, bq_));
    auto k = split_heads(linear3(h, wk_, bk_));
    auto v = split_heads(linear3(h, wv_, bv_));
    auto scores = ad::scale(ad::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto attn = ad::bmm(ad::softmax(scores, causal_), v);
    auto merged = ad::reshape(ad::permute(ad::reshape(attn, {b, heads_, t, dh}), to_heads), {b, t, d});
    auto x1 = ad::add(x, linear3(merged, wo_, bo_));

    auto h2 = ad::layer_norm(x1, ln2_g_, ln2_b_);
    auto m = linear3(ad::gelu(linear3(h2, w1_, b1_)), w2_, b2_);
    return ad::add(x1, m);
  }
  std::string_view kind() const override { return causal_ ? "causal_block" : "block"; }
  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<TransformerBlock>(*this);
    for (auto* p : c->tensors()) *p = copy_param(*p);
    return c;
  }
  std::vector<std::pair<std::string, Tensor>> parameters() const override {
    return {{"ln1.gamma", ln1_g_}, {"ln1.beta", ln1_b_}, {"wq", wq_}, {"bq", bq_},
            {"wk", wk_},           {"bk", bk_},          {"wv", wv_}, {"bv", bv_},
            {"wo", wo_},           {"bo", bo_},          {"ln2.gamma", ln2_g_}, {"ln2.beta", ln2_b_},
            {"mlp.w1", w1_},       {"mlp.b1", b1_},      {"mlp.w2", w2_}, {"mlp.b2", b2_}};
  }

 private:
  std::vector<Tensor*> tensors() {
    return {&ln1_g_, &ln1_b_, &wq_, &bq_, &wk_, &bk_, &wv_, &bv_,
            &wo_,    &bo_,    &ln2_g_, &ln2_b_, &w1_, &b1_, &w2_, &b2_};
  }

  std::size_t heads_;
  bool causal_;
  Tensor ln1_g_, ln1_b_, wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_, ln2_g_, ln2_b_, w1_, b1_, w2_, b2_;
};

// Final norm, then mean-pool + linear (classifier) or per-position linear (LM).
class HeadLayer final : public Layer {
 public:
  HeadLayer(std::size_t width, std::size_t outputs, bool per_position, Rng& rng)
      : ln_g_(ones_param({width})),
        ln_b_(zeros_param({width})),
        weight_(normal_init({width, outputs}, 1.0 / std::sqrt(static_cast<double>(width)), rng)),
        bias_(zeros_param({outputs})),
        per_position_(per_position) {}

  Tensor forward(const Tensor& x) const override {
    auto h = ad::layer_norm(x, ln_g_, ln_b_);
    if (per_position_) return linear3(h, weight_, bias_);
    return linear(ad::mean_axis1(h), weight_, bias_);
  }
  std::string_view kind() const override { return per_position_ ? "lm_head" : "pool_head"; }
  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<HeadLayer>(*this);
    c->ln_g_ = copy_param(ln_g_);
    c->ln_b_ = copy_param(ln_b_);
    c->weight_ = copy_param(weight_);
    c->bias_ = copy_param(bias_);
    return c;
  }
  std::vector<std::pair<std::string, Tensor>> parameters() const override {
    return {{"ln.gamma", ln_g_}, {"ln.beta", ln_b_}, {"weight", weight_}, {"bias", bias_}};
  }

 private:
  Tensor ln_g_, ln_b_, weight_, bias_;
  bool per_position_;
};

void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw ConfigError(std::string("model hyperparameter '") + what + "' must be positive");
}

}  // namespace

std::string_view to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::mlp: return "mlp";
    case ArchKind::cnn: return "cnn";
    case ArchKind::transformer_classifier: return "transformer-classifier";
    case ArchKind::transformer_generator: return "transformer-generator";
  }
  return "?";
}

ArchKind parse_arch_kind(std::string_view text) {
  for (auto k : {ArchKind::mlp, ArchKind::cnn, ArchKind::transformer_classifier,
                 ArchKind::transformer_generator}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown architecture kind '" + std::string(text) + "'");
}

ModelSpec ModelSpec::default_for(ArchKind kind, ad::Shape input_shape, std::size_t outputs,
                                 std::uint64_t seed) {
  ModelSpec s;
  s.kind = kind;
  s.input_shape = std::move(input_shape);
  s.outputs = outputs;
  s.seed = seed;
  if (kind == ArchKind::transformer_classifier || kind == ArchKind::transformer_generator) {
    s.vocab = kind == ArchKind::transformer_generator ? outputs : 0;
  }
  return s;
}

std::size_t default_lat_split(ArchKind kind) {
  switch (kind) {
    case ArchKind::mlp: return 1;
    case ArchKind::cnn: return 2;
    case ArchKind::transformer_classifier:
    case ArchKind::transformer_generator: return 2;
  }
  return 1;
}

SplitModel SplitModel::build(const ModelSpec& spec) {
  SplitModel m;
  m.spec_ = spec;
  require_positive(spec.outputs, "outputs");
  for (auto e : spec.input_shape) require_positive(e, "input extent");
  std::size_t layer_index = 0;
  auto next_rng = [&] { return make_rng(spec.seed, {stream::init, layer_index++}); };

  switch (spec.kind) {
    case ArchKind::mlp: {
      if (spec.input_shape.size() != 1) throw ConfigError("mlp input shape must be {features}");
      require_positive(spec.hidden, "hidden");
      std::size_t in = spec.input_shape[0];
      for (std::size_t i = 0; i < spec.depth; ++i) {
        auto rng = next_rng();
        m.layers_.push_back(std::make_unique<DenseLayer>(in, spec.hidden, true, rng));
        in = spec.hidden;
      }
      auto rng = next_rng();
      m.layers_.push_back(std::make_unique<DenseLayer>(in, spec.outputs, false, rng));
      break;
    }
    case ArchKind::cnn: {
      if (spec.input_shape.size() != 3) throw ConfigError("cnn input shape must be {C,H,W}");
      if (spec.conv_channels.empty()) throw ConfigError("cnn needs at least one conv layer");
      require_positive(spec.conv_kernel, "conv_kernel");
      require_positive(spec.dense_width, "dense_width");
      std::size_t ch = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
      for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        require_positive(spec.conv_channels[i], "conv channel");
        // First conv keeps resolution (stride 1); later ones downsample.
        const std::size_t stride = i == 0 ? 1 : 2;
        if (spec.conv_kernel > h || spec.conv_kernel > w) {
          throw ConfigError("cnn: input too small for the configured conv stack");
        }
        auto rng = next_rng();
        m.layers_.push_back(std::make_unique<ConvLayer>(ch, spec.conv_channels[i], spec.conv_kernel, stride, rng));
        ch = spec.conv_channels[i];
        h = (h - spec.conv_kernel) / stride + 1;
        w = (w - spec.conv_kernel) / stride + 1;
      }
      auto rng1 = next_rng();
      m.layers_.push_back(std::make_unique<DenseLayer>(ch * h * w, spec.dense_width, true, rng1));
      auto rng2 = next_rng();
      m.layers_.push_back(std::make_unique<DenseLayer>(spec.dense_width, spec.outputs, false, rng2));
      break;
    }
    case ArchKind::transformer_classifier:
    case ArchKind::transformer_generator: {
      const bool gen = spec.kind == ArchKind::transformer_generator;
      if (spec.input_shape.size() != 1) throw ConfigError("transformer input shape must be {T}");
      require_positive(spec.vocab, "vocab");
      require_positive(spec.width, "width");
      require_positive(spec.heads, "heads");
      require_positive(spec.blocks, "blocks");
      if (spec.width % spec.heads != 0) throw ConfigError("transformer width must divide by heads");
      if (gen && spec.outputs != spec.vocab) throw ConfigError("generator outputs must equal vocab");
      auto rng0 = next_rng();
      m.layers_.push_back(std::make_unique<EmbeddingLayer>(spec.vocab, spec.input_shape[0], spec.width, rng0));
      for (std::size_t i = 0; i < spec.blocks; ++i) {
        auto rng = next_rng();
        m.layers_.push_back(std::make_unique<TransformerBlock>(spec.width, spec.heads, gen, rng));
      }
      auto rng = next_rng();
      m.layers_.push_back(std::make_unique<HeadLayer>(spec.width, spec.outputs, gen, rng));
      break;
    }
  }
  m.rebuild_parameters();

  // Probe activation shapes with a single zero example.
  Shape probe_shape = spec.input_shape;
  probe_shape.insert(probe_shape.begin(), 1);
  Tensor a = Tensor::zeros(probe_shape);
  m.activation_shapes_.push_back(spec.input_shape);
  for (const auto& layer : m.layers_) {
    a = layer->forward(a);
    Shape s(a.shape().begin() + 1, a.shape().end());
    m.activation_shapes_.push_back(std::move(s));
  }
  m.split_ = std::min(default_lat_split(spec.kind), m.depth());
  return m;
}

SplitModel::SplitModel(const SplitModel& other)
    : spec_(other.spec_), activation_shapes_(other.activation_shapes_), split_(other.split_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
  rebuild_parameters();
}

SplitModel& SplitModel::operator=(const SplitModel& other) {
  if (this != &other) {
    SplitModel tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

SplitModel SplitModel::frozen() const {
  SplitModel copy(*this);
  for (auto& p : copy.params_) p.tensor.set_requires_grad(false);
  return copy;
}

void SplitModel::rebuild_parameters() {
  params_ = Parameters();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [name, t] : layers_[i]->parameters()) {
      params_.add("layer" + std::to_string(i) + "." + std::string(layers_[i]->kind()) + "." + name, t, i);
    }
  }
}

bool SplitModel::is_token_model() const {
  return spec_.kind == ArchKind::transformer_classifier || spec_.kind == ArchKind::transformer_generator;
}

void SplitModel::set_split(std::size_t split) {
  if (split > depth()) {
    throw ConfigError("split index " + std::to_string(split) + " outside [0, " + std::to_string(depth()) + "]");
  }
  split_ = split;
}

LayerHandle SplitModel::handle(std::size_t split) const {
  if (split > depth()) {
    throw ConfigError("split index " + std::to_string(split) + " outside [0, " + std::to_string(depth()) + "]");
  }
  return {split, activation_shapes_[split]};
}

void SplitModel::check_activation(const Tensor& t, std::size_t index) const {
  const auto& expected = activation_shapes_[index];
  const bool ok = t.dim() == expected.size() + 1 && std::equal(expected.begin(), expected.end(), t.shape().begin() + 1);
  if (!ok) {
    throw DimensionError("activation at index " + std::to_string(index) + " has shape " + ad::to_string(t.shape()) +
                         ", expected [B]+" + ad::to_string(expected));
  }
}

Tensor SplitModel::forward_range(const Tensor& activation, std::size_t begin, std::size_t end) const {
  if (begin > end || end > depth()) throw ContractError("forward_range: invalid layer range");
  check_activation(activation, begin);
  Tensor a = activation;
  for (std::size_t i = begin; i < end; ++i) a = layers_[i]->forward(a);
  return a;
}

Tensor SplitModel::forward(const Tensor& x) const { return forward_range(x, 0, depth()); }
Tensor SplitModel::forward_f(const Tensor& x) const { return forward_range(x, 0, split_); }
Tensor SplitModel::forward_g(const Tensor& latent) const { return forward_range(latent, split_, depth()); }

bool parameters_bit_equal(const SplitModel& a, const SplitModel& b) {
  const auto& pa = a.parameters();
  const auto& pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || !ad::bit_equal(pa[i].tensor, pb[i].tensor)) return false;
  }
  return true;
}

Tensor task_loss(const Tensor& output, std::span<const int> labels, ad::Reduction reduction) {
  const auto classes = output.shape().back();
  const auto rows = output.numel() / classes;
  auto logits = output.dim() == 2 ? output : ad::reshape(output, {rows, classes});
  return ad::softmax_cross_entropy(logits, labels, reduction);
}

}  // namespace latkit
