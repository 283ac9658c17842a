#pragma once

// Architecture strings -> trainable models. The grammar follows the compact
// notation used throughout this codebase ("c32k3s1-BN-PLIF-{SEW Block
// (c32)-MPk2s2}*7-FC11"); see the README for the full token listing.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sew/blocks.hpp"

namespace sew {

enum class DecodeMode { MeanLogits, MeanSpikes };
DecodeMode parse_decode_mode(const std::string& name);

struct ArchToken {
  enum class Kind { Conv, Bn, Neuron, MaxPool, AvgPool, Fc, Dropout, Block };
  Kind kind{};
  std::size_t pos = 0;  // character offset in the source string

  std::size_t channels = 0;  // Conv channels / Fc features
  std::size_t kernel = 0;    // Conv / pool kernel
  std::size_t stride = 1;    // Conv / pool / block stride

  NeuronKind neuron = NeuronKind::IF;

  BlockKind block = BlockKind::Sew;
  bool block_fc = false;      // "(fN)" fully-connected block variant
  std::size_t block_dim = 0;  // 0 = inherit from the running shape

  bool same_structure(const ArchToken& o) const;
};

// Grammar-level tokenization with {...}*n groups expanded. Throws
// ArchParseError with a character position on rejection.
std::vector<ArchToken> tokenize_arch(const std::string& arch);

// Canonical (group-free, dimension-resolved) spelling of a token list.
std::string canonical_arch(const std::vector<ArchToken>& tokens);

struct NetworkSpec {
  std::string arch;
  std::vector<ArchToken> tokens;  // expanded, dimensions resolved
  Shape input_shape;              // {C,H,W}
  std::size_t t_steps = 4;
  std::size_t classes = 0;  // from the final FC token
  NeuronSpec neuron_defaults;
  ElementwiseG g = ElementwiseG::Add;
  DecodeMode decode = DecodeMode::MeanLogits;

  bool operator==(const NetworkSpec& o) const;
};

// Tokenizes and shape-checks an architecture against a concrete input shape,
// resolving inherited block dimensions and the class count.
NetworkSpec parse_arch(const std::string& arch, const Shape& input_shape,
                       std::size_t t_steps, const NeuronSpec& neuron_defaults,
                       ElementwiseG g = ElementwiseG::Add,
                       DecodeMode decode = DecodeMode::MeanLogits);

class Model {
 public:
  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Deterministic parameter initialization from the seed (Kaiming-uniform
  // convolutions and linear layers, BN scale 1 shift 0).
  static Model build(const NetworkSpec& spec, std::uint64_t seed);

  // x_seq: [T*B, C, H, W] merged time-major; returns [B, classes] logits.
  Tensor forward(const Tensor& x_seq, ForwardCtx& ctx);

  // Identity-configures every non-downsample residual block. Idempotent.
  void zero_init();

  std::vector<Tensor> parameters() const;
  std::size_t param_count() const;
  std::vector<std::pair<std::string, std::size_t>> layer_param_counts() const;
  const std::vector<ResidualBlock*>& blocks() const { return blocks_; }
  const NetworkSpec& spec() const { return spec_; }

 private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> pipeline_;
  std::vector<ResidualBlock*> blocks_;
  std::ptrdiff_t final_fc_ = -1;  // pipeline index of the classifier
};

}  // namespace sew
