#include "sew/blocks.hpp"

#include <cmath>

namespace sew {

BlockKind parse_block_kind(const std::string& name) {
  if (name == "plain") return BlockKind::Plain;
  if (name == "basic" || name == "spiking-basic") return BlockKind::SpikingBasic;
  if (name == "sew") return BlockKind::Sew;
  throw ConfigError("unknown block kind '" + name + "' (expected plain, basic or sew)");
}

const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::Plain: return "plain";
    case BlockKind::SpikingBasic: return "basic";
    case BlockKind::Sew: return "sew";
  }
  return "?";
}

ElementwiseG parse_elementwise_g(const std::string& name) {
  if (name == "add" || name == "ADD") return ElementwiseG::Add;
  if (name == "and" || name == "AND") return ElementwiseG::And;
  if (name == "iand" || name == "IAND") return ElementwiseG::Iand;
  throw ConfigError("unknown element-wise function '" + name +
                    "' (expected add, and or iand)");
}

const char* elementwise_g_name(ElementwiseG g) {
  switch (g) {
    case ElementwiseG::Add: return "add";
    case ElementwiseG::And: return "and";
    case ElementwiseG::Iand: return "iand";
  }
  return "?";
}

bool is_binary(const Tensor& t) {
  for (double v : t.value())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

Tensor elementwise_g(ElementwiseG g, const Tensor& a, const Tensor& s) {
  if (a.shape() != s.shape())
    throw ShapeError("elementwise_g: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(s.shape()));
  if (!is_binary(a)) throw DomainError("elementwise_g: a operand is not a spike tensor");
  switch (g) {
    case ElementwiseG::Add:
      for (double v : s.value())
        if (!(v >= 0.0) || !std::isfinite(v))
          throw DomainError("elementwise_g: ADD expects non-negative finite s");
      return add(a, s);
    case ElementwiseG::And:
      if (!is_binary(s)) throw DomainError("elementwise_g: AND expects a binary s operand");
      return mul(a, s);
    case ElementwiseG::Iand:
      if (!is_binary(s)) throw DomainError("elementwise_g: IAND expects a binary s operand");
      return mul(affine(a, -1.0, 1.0), s);
  }
  throw ConfigError("elementwise_g: bad g");
}

std::size_t Layer::param_count() const {
  std::vector<Tensor> params;
  const_cast<Layer*>(this)->collect_params(params);
  std::size_t n = 0;
  for (const Tensor& p : params) n += p.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Primitive layers
// ---------------------------------------------------------------------------

namespace {

void kaiming_uniform(Tensor& w, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w.value()) v = dist(rng);
}

}  // namespace

Conv2dLayer::Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                         std::size_t stride, std::size_t pad)
    : weight({out_ch, in_ch, kernel, kernel}, 0.0, /*requires_grad=*/true),
      stride_(stride),
      pad_(pad) {}

Tensor Conv2dLayer::forward(const Tensor& x, ForwardCtx&) {
  return conv2d(x, weight, stride_, pad_);
}

void Conv2dLayer::collect_params(std::vector<Tensor>& out) { out.push_back(weight); }

void Conv2dLayer::init_params(std::mt19937_64& rng) {
  kaiming_uniform(weight, weight.dim(1) * weight.dim(2) * weight.dim(3), rng);
}

std::string Conv2dLayer::describe() const {
  return "Conv(c" + std::to_string(weight.dim(0)) + "k" + std::to_string(weight.dim(2)) +
         "s" + std::to_string(stride_) + ")";
}

LinearLayer::LinearLayer(std::size_t in, std::size_t out)
    : weight({in, out}, 0.0, /*requires_grad=*/true),
      bias({out}, 0.0, /*requires_grad=*/true) {}

Tensor LinearLayer::forward(const Tensor& x, ForwardCtx&) {
  return add_rowvec(matmul(x, weight), bias);
}

void LinearLayer::collect_params(std::vector<Tensor>& out) {
  out.push_back(weight);
  out.push_back(bias);
}

void LinearLayer::init_params(std::mt19937_64& rng) {
  kaiming_uniform(weight, weight.dim(0), rng);
  for (double& v : bias.value()) v = 0.0;
}

std::string LinearLayer::describe() const {
  return "FC(" + std::to_string(weight.dim(0)) + "->" + std::to_string(weight.dim(1)) + ")";
}

BatchNormLayer::BatchNormLayer(std::size_t channels, double momentum, double eps)
    : gamma({channels}, 1.0, /*requires_grad=*/true),
      beta({channels}, 0.0, /*requires_grad=*/true),
      momentum_(momentum),
      eps_(eps) {}

Tensor BatchNormLayer::forward(const Tensor& x, ForwardCtx& ctx) {
  return batchnorm(x, gamma, beta, buffers, ctx.training, momentum_, eps_);
}

void BatchNormLayer::collect_params(std::vector<Tensor>& out) {
  out.push_back(gamma);
  out.push_back(beta);
}

void BatchNormLayer::init_params(std::mt19937_64&) {
  for (double& v : gamma.value()) v = 1.0;
  for (double& v : beta.value()) v = 0.0;
  buffers.running_mean.assign(gamma.numel(), 0.0);
  buffers.running_var.assign(gamma.numel(), 1.0);
}

void BatchNormLayer::set_affine(double scale, double shift) {
  for (double& v : gamma.value()) v = scale;
  for (double& v : beta.value()) v = shift;
}

std::string BatchNormLayer::describe() const {
  return "BN(" + std::to_string(gamma.numel()) + ")";
}

Tensor SpikingLayer::forward(const Tensor& x, ForwardCtx& ctx) {
  return neuron_.forward_seq(x, ctx.t_steps);
}

void SpikingLayer::collect_params(std::vector<Tensor>& out) {
  if (Tensor* w = neuron_.plif_param()) out.push_back(*w);
}

std::string SpikingLayer::describe() const {
  return std::string(neuron_kind_name(neuron_.spec().kind));
}

std::string MaxPoolLayer::describe() const {
  return "MPk" + std::to_string(k_) + "s" + std::to_string(s_);
}

std::string AvgPoolLayer::describe() const {
  return "APk" + std::to_string(k_) + "s" + std::to_string(s_);
}

Tensor FlattenLayer::forward(const Tensor& x, ForwardCtx&) {
  if (x.rank() == 2) return x;
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor DropoutLayer::forward(const Tensor& x, ForwardCtx& ctx) {
  if (!ctx.training || p_ <= 0.0) return x;
  if (!ctx.rng) throw ConfigError("dropout: training forward needs an RNG in the context");
  Tensor mask(x.shape(), 0.0);
  std::bernoulli_distribution keep(1.0 - p_);
  const double scale = 1.0 / (1.0 - p_);
  for (double& v : mask.value()) v = keep(*ctx.rng) ? scale : 0.0;
  return mul(x, mask);
}

std::string DropoutLayer::describe() const { return "DP"; }

// ---------------------------------------------------------------------------
// Residual blocks
// ---------------------------------------------------------------------------

std::unique_ptr<ResidualBlock> ResidualBlock::conv_block(BlockKind kind, ElementwiseG g,
                                                         std::size_t in_ch,
                                                         std::size_t out_ch,
                                                         std::size_t stride,
                                                         const NeuronSpec& neuron) {
  if (stride == 1 && in_ch != out_ch)
    throw ConfigError("block: channel change requires an explicit downsample stride");
  auto b = std::unique_ptr<ResidualBlock>(new ResidualBlock());
  b->kind_ = kind;
  b->g_ = g;
  b->downsample_ = stride > 1;
  b->lin1_ = std::make_unique<Conv2dLayer>(in_ch, out_ch, 3, stride, 1);
  b->bn1_ = std::make_unique<BatchNormLayer>(out_ch);
  b->sn1_ = std::make_unique<SpikingLayer>(neuron);
  b->lin2_ = std::make_unique<Conv2dLayer>(out_ch, out_ch, 3, 1, 1);
  b->bn2_ = std::make_unique<BatchNormLayer>(out_ch);
  b->sn2_ = std::make_unique<SpikingLayer>(neuron);
  if (b->downsample_) {
    b->lin_s_ = std::make_unique<Conv2dLayer>(in_ch, out_ch, 1, stride, 0);
    b->bn_s_ = std::make_unique<BatchNormLayer>(out_ch);
    if (kind == BlockKind::Sew) b->sn_s_ = std::make_unique<SpikingLayer>(neuron);
  }
  return b;
}

std::unique_ptr<ResidualBlock> ResidualBlock::fc_block(BlockKind kind, ElementwiseG g,
                                                       std::size_t features,
                                                       const NeuronSpec& neuron) {
  auto b = std::unique_ptr<ResidualBlock>(new ResidualBlock());
  b->kind_ = kind;
  b->g_ = g;
  b->downsample_ = false;
  b->lin1_ = std::make_unique<LinearLayer>(features, features);
  b->bn1_ = std::make_unique<BatchNormLayer>(features);
  b->sn1_ = std::make_unique<SpikingLayer>(neuron);
  b->lin2_ = std::make_unique<LinearLayer>(features, features);
  b->bn2_ = std::make_unique<BatchNormLayer>(features);
  b->sn2_ = std::make_unique<SpikingLayer>(neuron);
  return b;
}

NeuronKind ResidualBlock::output_neuron_kind() const {
  return sn2_->neuron().spec().kind;
}

Tensor ResidualBlock::forward(const Tensor& x, ForwardCtx& ctx) {
  const Tensor s_in = x;
  Tensor f = bn1_->forward(lin1_->forward(x, ctx), ctx);
  f = sn1_->forward(f, ctx);
  f = bn2_->forward(lin2_->forward(f, ctx), ctx);

  Tensor a, out;
  switch (kind_) {
    case BlockKind::Plain:
      out = sn2_->forward(f, ctx);
      a = out;
      break;
    case BlockKind::SpikingBasic: {
      Tensor shortcut = x;
      if (downsample_) shortcut = bn_s_->forward(lin_s_->forward(x, ctx), ctx);
      out = sn2_->forward(add(f, shortcut), ctx);
      a = out;
      break;
    }
    case BlockKind::Sew: {
      a = sn2_->forward(f, ctx);
      Tensor shortcut = x;
      if (downsample_)
        shortcut = sn_s_->forward(bn_s_->forward(lin_s_->forward(x, ctx), ctx), ctx);
      out = elementwise_g(g_, a, shortcut);
      break;
    }
  }
  if (ctx.capture) ctx.capture->push_back(BlockCapture{s_in, a, out, downsample_});
  return out;
}

void ResidualBlock::collect_params(std::vector<Tensor>& out) {
  lin1_->collect_params(out);
  bn1_->collect_params(out);
  sn1_->collect_params(out);
  lin2_->collect_params(out);
  bn2_->collect_params(out);
  sn2_->collect_params(out);
  if (lin_s_) {
    lin_s_->collect_params(out);
    bn_s_->collect_params(out);
    if (sn_s_) sn_s_->collect_params(out);
  }
}

void ResidualBlock::init_params(std::mt19937_64& rng) {
  lin1_->init_params(rng);
  bn1_->init_params(rng);
  lin2_->init_params(rng);
  bn2_->init_params(rng);
  if (lin_s_) {
    lin_s_->init_params(rng);
    bn_s_->init_params(rng);
  }
}

void ResidualBlock::configure_identity() {
  if (downsample_)
    throw ConfigError("configure_identity: downsample blocks have no identity form");
  switch (kind_) {
    case BlockKind::Plain:
      throw ConfigError("configure_identity: plain blocks have no shortcut");
    case BlockKind::SpikingBasic:
      bn2_->set_affine(0.0, 0.0);
      break;
    case BlockKind::Sew:
      if (g_ == ElementwiseG::And) {
        if (output_neuron_kind() != NeuronKind::IF)
          throw ConfigError(
              "configure_identity: AND identity needs IF output neurons; other dynamics "
              "cannot be forced to spike every step");
        bn2_->set_affine(0.0, sn2_->neuron().spec().v_threshold);
      } else {
        bn2_->set_affine(0.0, 0.0);
      }
      break;
  }
}

std::string ResidualBlock::describe() const {
  std::string name;
  switch (kind_) {
    case BlockKind::Plain: name = "Plain Block"; break;
    case BlockKind::SpikingBasic: name = "Basic Block"; break;
    case BlockKind::Sew: name = std::string("SEW Block[") + elementwise_g_name(g_) + "]"; break;
  }
  if (downsample_) name += " (downsample)";
  return name;
}

}  // namespace sew
