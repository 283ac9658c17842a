#pragma once

// Residual blocks and the layers they are assembled from. Three block kinds
// share one connection-function recipe (Conv3x3-BN-SN-Conv3x3-BN, plus a
// trailing SN where the block needs one); a fully-connected variant with the
// same algebra exists for cheap deep-chain diagnostics:
//
//   spiking basic:  O = SN(F(S) + shortcut(S))
//   SEW:            A = SN(F(S)); O = g(A, shortcut(S))
//   plain:          O = SN(F(S))          (no shortcut)
//
// Downsample blocks use a strided Conv1x1-BN shortcut; the SEW variant puts a
// spiking neuron behind it so both g-operands stay spike tensors.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sew/autodiff.hpp"
#include "sew/neuron.hpp"

namespace sew {

enum class BlockKind { Plain, SpikingBasic, Sew };
enum class ElementwiseG { Add, And, Iand };

BlockKind parse_block_kind(const std::string& name);
const char* block_kind_name(BlockKind k);
ElementwiseG parse_elementwise_g(const std::string& name);
const char* elementwise_g_name(ElementwiseG g);

// g applied as real arithmetic (a+s, a*s, (1-a)*s) so gradients flow through
// both operands. a must be a spike tensor; s must be a spike tensor for
// AND/IAND, and only non-negative for ADD where chained block outputs are
// legitimately integer-valued.
Tensor elementwise_g(ElementwiseG g, const Tensor& a, const Tensor& s);

bool is_binary(const Tensor& t);

struct BlockCapture {
  Tensor s_in;  // block input
  Tensor a;     // last SN output (for basic/plain: the block output itself)
  Tensor o;     // block output
  bool downsample = false;
};

struct ForwardCtx {
  std::size_t t_steps = 1;
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout
  std::vector<BlockCapture>* capture = nullptr;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, ForwardCtx& ctx) = 0;
  virtual void collect_params(std::vector<Tensor>& out) {}
  virtual void init_params(std::mt19937_64&) {}
  virtual std::string describe() const = 0;
  std::size_t param_count() const;
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
              std::size_t pad);
  Tensor forward(const Tensor& x, ForwardCtx&) override;
  void collect_params(std::vector<Tensor>& out) override;
  void init_params(std::mt19937_64& rng) override;
  std::string describe() const override;
  Tensor weight;

 private:
  std::size_t stride_, pad_;
};

class LinearLayer : public Layer {
 public:
  LinearLayer(std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x, ForwardCtx&) override;
  void collect_params(std::vector<Tensor>& out) override;
  void init_params(std::mt19937_64& rng) override;
  std::string describe() const override;
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

class BatchNormLayer : public Layer {
 public:
  explicit BatchNormLayer(std::size_t channels, double momentum = 0.9, double eps = 1e-5);
  Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
  void collect_params(std::vector<Tensor>& out) override;
  void init_params(std::mt19937_64&) override;
  std::string describe() const override;
  void set_affine(double scale, double shift);
  Tensor gamma, beta;
  BatchNormBuffers buffers;

 private:
  double momentum_, eps_;
};

class SpikingLayer : public Layer {
 public:
  explicit SpikingLayer(const NeuronSpec& spec) : neuron_(spec) {}
  Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
  void collect_params(std::vector<Tensor>& out) override;
  std::string describe() const override;
  NeuronLayer& neuron() { return neuron_; }
  const NeuronLayer& neuron() const { return neuron_; }

 private:
  NeuronLayer neuron_;
};

class MaxPoolLayer : public Layer {
 public:
  MaxPoolLayer(std::size_t k, std::size_t s) : k_(k), s_(s) {}
  Tensor forward(const Tensor& x, ForwardCtx&) override { return maxpool2d(x, k_, s_); }
  std::string describe() const override;

 private:
  std::size_t k_, s_;
};

class AvgPoolLayer : public Layer {
 public:
  AvgPoolLayer(std::size_t k, std::size_t s) : k_(k), s_(s) {}
  Tensor forward(const Tensor& x, ForwardCtx&) override { return avgpool2d(x, k_, s_); }
  std::string describe() const override;

 private:
  std::size_t k_, s_;
};

class FlattenLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardCtx&) override;
  std::string describe() const override { return "Flatten"; }
};

// Inverted dropout, independent mask per (element, time-step).
class DropoutLayer : public Layer {
 public:
  explicit DropoutLayer(double p = 0.5) : p_(p) {}
  Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
  std::string describe() const override;

 private:
  double p_;
};

class ResidualBlock : public Layer {
 public:
  static std::unique_ptr<ResidualBlock> conv_block(BlockKind kind, ElementwiseG g,
                                                   std::size_t in_ch, std::size_t out_ch,
                                                   std::size_t stride,
                                                   const NeuronSpec& neuron);
  static std::unique_ptr<ResidualBlock> fc_block(BlockKind kind, ElementwiseG g,
                                                 std::size_t features,
                                                 const NeuronSpec& neuron);

  Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
  void collect_params(std::vector<Tensor>& out) override;
  void init_params(std::mt19937_64& rng) override;
  std::string describe() const override;

  // Sets the trailing BN so the block is an exact identity map: scale 0 with
  // shift 0 (ADD/IAND force A = 0; spiking basic forces F = 0) or shift V_th
  // for AND (forces A = 1, IF output neurons only).
  void configure_identity();

  BlockKind kind() const { return kind_; }
  ElementwiseG g() const { return g_; }
  bool is_downsample() const { return downsample_; }
  BatchNormLayer& last_bn() { return *bn2_; }
  NeuronKind output_neuron_kind() const;

 private:
  ResidualBlock() = default;

  BlockKind kind_ = BlockKind::Sew;
  ElementwiseG g_ = ElementwiseG::Add;
  bool downsample_ = false;

  // connection function F
  std::unique_ptr<Layer> lin1_, lin2_;  // conv or linear
  std::unique_ptr<BatchNormLayer> bn1_, bn2_;
  std::unique_ptr<SpikingLayer> sn1_, sn2_;
  // shortcut (downsample only)
  std::unique_ptr<Layer> lin_s_;
  std::unique_ptr<BatchNormLayer> bn_s_;
  std::unique_ptr<SpikingLayer> sn_s_;  // SEW only
};

}  // namespace sew
