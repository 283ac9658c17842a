#pragma once

// Discrete-time spiking neurons: charge -> fire -> reset per step, with the
// membrane potential threaded across the T steps of a sequence. IF and LIF
// use fixed dynamics; PLIF makes the membrane time constant trainable through
// tau = 1 + exp(w) (w unconstrained, so tau stays in (1, inf); initial tau
// comes from the spec, giving w = log(tau - 1)).

#include <string>

#include "sew/autodiff.hpp"
#include "sew/surrogate.hpp"
#include "sew/tensor.hpp"

namespace sew {

enum class NeuronKind { IF, LIF, PLIF };

NeuronKind parse_neuron_kind(const std::string& name);
const char* neuron_kind_name(NeuronKind k);

struct NeuronSpec {
  NeuronKind kind = NeuronKind::IF;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double tau = 2.0;  // LIF value; PLIF initial value
  bool detach_reset = true;
  SurrogateSpec surrogate;

  void validate() const;
};

// H[t] from V[t-1] and the input current. IF: H = V + X; LIF/PLIF (fixed tau):
// H = V + (X - (V - V_reset)) / tau.
Tensor charge(const NeuronSpec& spec, const Tensor& v_prev, const Tensor& x);

// S[t] = theta(H - V_th) with theta(0) = 1; backward is the surrogate.
Tensor fire(const Tensor& h, double v_threshold, const SurrogateSpec& surrogate);

// V[t] = H (1 - S) + V_reset S; with detach_spike the S inside this
// expression is severed from the gradient graph.
Tensor reset_state(const Tensor& h, const Tensor& s, double v_reset, bool detach_spike);

// Runs charge/fire/reset over a merged [T*B, ...] sequence with the state
// initialized to V_reset; returns the spike train. Fixed-tau dynamics.
Tensor step_sequence(const NeuronSpec& spec, const Tensor& x_seq, std::size_t t_steps);

// Stateful layer form; owns the trainable w for PLIF neurons.
class NeuronLayer {
 public:
  explicit NeuronLayer(NeuronSpec spec);

  Tensor forward_seq(const Tensor& x_seq, std::size_t t_steps);

  const NeuronSpec& spec() const { return spec_; }
  double tau() const;          // current tau (PLIF: derived from w)
  Tensor* plif_param();        // nullptr unless PLIF

 private:
  NeuronSpec spec_;
  Tensor w_;  // PLIF only
};

}  // namespace sew
