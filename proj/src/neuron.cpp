#include "sew/neuron.hpp"

#include <cmath>

namespace sew {

NeuronKind parse_neuron_kind(const std::string& name) {
  if (name == "IF" || name == "if") return NeuronKind::IF;
  if (name == "LIF" || name == "lif") return NeuronKind::LIF;
  if (name == "PLIF" || name == "plif") return NeuronKind::PLIF;
  throw ConfigError("unknown neuron kind '" + name + "' (expected IF, LIF or PLIF)");
}

const char* neuron_kind_name(NeuronKind k) {
  switch (k) {
    case NeuronKind::IF: return "IF";
    case NeuronKind::LIF: return "LIF";
    case NeuronKind::PLIF: return "PLIF";
  }
  return "?";
}

void NeuronSpec::validate() const {
  if (kind != NeuronKind::IF) {
    if (tau <= 0.0) throw ConfigError("neuron: tau must be positive");
    if (tau < 1.0) throw ConfigError("neuron: tau must be >= 1 for LIF/PLIF");
  }
  if (!(v_threshold > v_reset))
    throw ConfigError("neuron: v_threshold must exceed v_reset");
  surrogate.validate();
}

namespace {

// X - (V - V_reset), shared by the leaky charge paths
Tensor leak_drive(const Tensor& v_prev, const Tensor& x, double v_reset) {
  if (v_reset == 0.0) return sub(x, v_prev);
  return sub(x, affine(v_prev, 1.0, -v_reset));
}

}  // namespace

Tensor charge(const NeuronSpec& spec, const Tensor& v_prev, const Tensor& x) {
  spec.validate();
  if (spec.kind == NeuronKind::IF) return add(v_prev, x);
  return add(v_prev, affine(leak_drive(v_prev, x, spec.v_reset), 1.0 / spec.tau, 0.0));
}

Tensor fire(const Tensor& h, double v_threshold, const SurrogateSpec& surrogate) {
  return spike(h, v_threshold, surrogate);
}

Tensor reset_state(const Tensor& h, const Tensor& s, double v_reset, bool detach_spike) {
  const Tensor sr = detach_spike ? detach(s) : s;
  Tensor v = mul(h, affine(sr, -1.0, 1.0));
  if (v_reset != 0.0) v = add(v, affine(sr, v_reset, 0.0));
  return v;
}

Tensor step_sequence(const NeuronSpec& spec, const Tensor& x_seq, std::size_t t_steps) {
  NeuronLayer layer(spec);
  return layer.forward_seq(x_seq, t_steps);
}

NeuronLayer::NeuronLayer(NeuronSpec spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind == NeuronKind::PLIF) {
    if (spec_.tau <= 1.0)
      throw ConfigError("neuron: PLIF initial tau must exceed 1");
    w_ = Tensor::scalar(std::log(spec_.tau - 1.0), /*requires_grad=*/true);
  }
}

double NeuronLayer::tau() const {
  if (spec_.kind == NeuronKind::PLIF) return 1.0 + std::exp(w_.data()[0]);
  return spec_.tau;
}

Tensor* NeuronLayer::plif_param() {
  return spec_.kind == NeuronKind::PLIF ? &w_ : nullptr;
}

Tensor NeuronLayer::forward_seq(const Tensor& x_seq, std::size_t t_steps) {
  if (t_steps == 0 || x_seq.dim(0) % t_steps != 0)
    throw ShapeError("neuron: sequence rows " + std::to_string(x_seq.dim(0)) +
                     " not divisible by T=" + std::to_string(t_steps));
  const std::size_t rows_per_step = x_seq.dim(0) / t_steps;

  Shape state_shape = x_seq.shape();
  state_shape[0] = rows_per_step;
  Tensor v(state_shape, spec_.v_reset);

  Tensor tau_inv;
  if (spec_.kind == NeuronKind::PLIF)
    tau_inv = reciprocal(affine(exp_elem(w_), 1.0, 1.0));

  std::vector<Tensor> spikes;
  spikes.reserve(t_steps);
  for (std::size_t t = 0; t < t_steps; ++t) {
    const Tensor x = slice_rows(x_seq, t * rows_per_step, rows_per_step);
    Tensor h;
    switch (spec_.kind) {
      case NeuronKind::IF:
        h = add(v, x);
        break;
      case NeuronKind::LIF:
        h = add(v, affine(leak_drive(v, x, spec_.v_reset), 1.0 / spec_.tau, 0.0));
        break;
      case NeuronKind::PLIF:
        h = add(v, scale_by(leak_drive(v, x, spec_.v_reset), tau_inv));
        break;
    }
    const Tensor s = fire(h, spec_.v_threshold, spec_.surrogate);
    v = reset_state(h, s, spec_.v_reset, spec_.detach_reset);
    spikes.push_back(s);
  }
  return concat_rows(spikes);
}

}  // namespace sew
