#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entlab/posenc.hpp"
#include "entlab/scaling.hpp"
#include "entlab/simplex.hpp"
#include "entlab/tensor.hpp"

namespace entlab {

enum class Mechanism { Softmax, SSMax, Entmax, SEntmax, ASEntmax, ASSMax };
enum class Positional { NoPE, ALiBi, RoPE, NAPE };

bool is_entmax_family(Mechanism m);
bool uses_scale_schedule(Mechanism m);  // asentmax / assmax
std::string mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& name);
std::string positional_name(Positional p);
Positional positional_from_name(const std::string& name);

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t ffn_dim = 128;
  std::size_t vocab = 32;
  Mechanism mechanism = Mechanism::Softmax;
  double alpha = 1.5;
  Positional positional = Positional::NAPE;
  double rope_factor = 16.0;
  double rope_base = 10000.0;
  AlibiSlopePolicy alibi_policy = AlibiSlopePolicy::Geometric;  // plain-ALiBi mode
  double scaler_delta = 1.0;
  double scaler_clamp = 4.0;
  std::optional<double> sentmax_gamma_fixed;  // pin gamma, learn beta only
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Row-stochastic lower-triangular attention matrices captured per layer/head,
// plus the scaled logits each row was transformed from.
struct AttentionTrace {
  std::size_t layers = 0, heads = 0, n = 0;
  std::vector<std::vector<double>> probs;          // [layer*heads+head] -> n*n
  std::vector<std::vector<double>> scaled_logits;  // same layout, causal part only
  const std::vector<double>& head_probs(std::size_t layer, std::size_t head) const {
    return probs[layer * heads + head];
  }
};

// P~ = P^(L-1) ... P^(0) with heads averaged within each layer.
std::vector<double> cumulative_attention(const AttentionTrace& trace);

template <typename T>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::size_t size() const { return value.size(); }
};

struct PathCounts {
  std::vector<std::size_t> nonzero_per_layer;  // attention entries above floor
  std::vector<std::size_t> total_per_layer;    // causal entries available
  std::vector<double> grad_norm_per_layer;     // ||d loss / d layer input||_2
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  struct Forward {
    Tensor<T> logits;                     // [n x V]
    std::shared_ptr<AttentionTrace> trace;
    std::vector<Tensor<T>> layer_inputs;  // v^(l) entering each layer
    std::vector<Tensor<T>> param_leaves;  // aligned with parameters()
  };

  Forward forward(std::span<const int> tokens, bool record_trace = false,
                  bool keep_layer_inputs = false) const;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  std::size_t parameter_count() const;

 private:
  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::vector<PosEncoding> head_encodings_;

  const Parameter<T>& param(const std::string& name) const;
  std::size_t param_index(const std::string& name) const;
};

// Per-layer nonzero attention entry counts from a trace (support members for
// entmax, > 1e-12 for softmax) and gradient norms read off layer inputs after
// a backward pass.
template <typename T>
PathCounts count_gradient_paths(const AttentionTrace& trace, Mechanism mechanism,
                                const std::vector<Tensor<T>>& layer_inputs);

// Incremental greedy-decoding session with cached per-layer keys/values.
// Equivalent to recomputing the full forward per emitted token (checked in
// tests) at a fraction of the cost. Row math runs in double precision.
class InferenceSession {
 public:
  explicit InferenceSession(const Model<float>& model);
  void reset();
  // Appends one token and returns the argmax of the next-token logits.
  int feed(int token);
  std::size_t position() const { return pos_; }
  const std::vector<double>& last_logits() const { return logits_; }

 private:
  struct LayerCache {
    std::vector<std::vector<double>> k;  // per head, appended rows of dh
    std::vector<std::vector<double>> v;
  };
  const Model<float>& model_;
  std::vector<LayerCache> cache_;
  std::vector<double> logits_;
  std::size_t pos_ = 0;
  std::vector<double> rope_freqs_;
};

extern template class Model<float>;
extern template class Model<double>;
extern template PathCounts count_gradient_paths<float>(const AttentionTrace&, Mechanism,
                                                       const std::vector<Tensor<float>>&);
extern template PathCounts count_gradient_paths<double>(const AttentionTrace&, Mechanism,
                                                        const std::vector<Tensor<double>>&);

}  // namespace entlab
