#pragma once

#include <memory>
#include <vector>

#include "avger/autograd.hpp"

namespace avger {

struct DecoderConfig {
  int layers{4};
  int d_llm{256};
  int heads{4};
  int ffn_multiple{4};
  int vocab{512};
  int max_seq_len{2048};

  void validate() const;
};

struct LoraConfig {
  int rank{8};
  double alpha{8.0};

  double scale() const { return alpha / double(rank); }
  void validate(int d_llm) const;
};

struct GenMode {
  enum Kind { kGreedy, kBeam, kSample } kind{kGreedy};
  int beam_width{1};
  double temperature{1.0};
  uint64_t seed{0};

  static GenMode greedy() { return GenMode{}; }
  static GenMode beam(int b) { return GenMode{kBeam, b, 1.0, 0}; }
  static GenMode sample(double temp, uint64_t seed) {
    return GenMode{kSample, 1, temp, seed};
  }
};

struct GenerationResult {
  std::vector<int> tokens;  // eos not included
  bool ended_eos{false};
  double logp{0.0};  // sum of emitted token log-probs (+eos when ended_eos)
};

/// Pre-norm causal transformer decoder (the LLaMA-7B stand-in). Base weights
/// may be frozen behind LoRA adapters on the q,k,v,o attention projections.
///
/// Two execution paths share the same weights: a tape path for training
/// (forward_branches: one prompt prefix, several continuation branches on a
/// single graph) and a KV-cached inference path for generation.
class Decoder {
 public:
  Decoder(DecoderConfig cfg, nn::ParameterSet& params, uint64_t init_seed);

  const DecoderConfig& config() const { return cfg_; }

  /// Insert rank-r adapters on every layer's q,k,v,o projections, freeze the
  /// base. Throws std::invalid_argument if r > min(a, b).
  void attach_lora(const LoraConfig& lc, nn::ParameterSet& params, uint64_t init_seed);
  bool lora_attached() const { return lora_attached_; }
  int lora_adapter_count() const;
  const std::vector<nn::Parameter*>& base_parameters() const { return base_params_; }
  std::vector<nn::Parameter*> lora_parameters() const;

  nn::Parameter& embedding_table() const { return *embed_; }

  /// Training forward. `prefix` is the assembled prompt embedding (no
  /// positions yet). Each suffix is a token continuation; branch i's output
  /// has suffixes[i].size()+1 rows of logits: row 0 predicts the first
  /// suffix token (from the last prefix position), row j predicts suffix
  /// token j, and the final row predicts the token after the suffix.
  std::vector<nn::Value> forward_branches(nn::Tape& t, nn::Value prefix,
                                          const std::vector<std::vector<int>>& suffixes) const;

  /// Per-layer prefix hidden states (after each block), for mask probes.
  std::vector<nn::Value> forward_prefix_hiddens(nn::Tape& t, nn::Value prefix) const;

  /// Weights with LoRA deltas folded in, shared by inference sessions.
  struct Materialized;
  std::shared_ptr<const Materialized> materialize() const;

  /// Incremental decoding state over a fixed prefix.
  class Session {
   public:
    const Eigen::RowVectorXd& last_logits() const { return last_logits_; }
    int length() const { return len_; }
    void append(int token_id);

   private:
    friend class Decoder;
    std::shared_ptr<const Materialized> w_;
    std::vector<nn::Mat> key_cache_, value_cache_;
    Eigen::RowVectorXd last_logits_;
    int len_{0};
  };

  Session open_session(const std::shared_ptr<const Materialized>& w,
                       const nn::Mat& prefix) const;

  GenerationResult generate(const std::shared_ptr<const Materialized>& w,
                            const nn::Mat& prefix, const GenMode& mode, int max_new,
                            int eos_id) const;

 private:
  struct Layer {
    nn::Parameter *wq, *wk, *wv, *wo;
    nn::Parameter *ffn_w1, *ffn_b1, *ffn_w2, *ffn_b2;
    nn::Parameter *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    nn::Parameter *lora_a[4], *lora_b[4];  // q,k,v,o; null until attached
  };

  nn::Value project(nn::Tape& t, nn::Value x, nn::Parameter* w, nn::Parameter* a,
                    nn::Parameter* b) const;
  nn::Value ffn(nn::Tape& t, nn::Value x, const Layer& l) const;

  DecoderConfig cfg_;
  double lora_scale_{1.0};
  bool lora_attached_{false};
  nn::Parameter *embed_, *pos_, *lnf_g_, *lnf_b_, *head_;
  std::vector<Layer> layers_;
  std::vector<nn::Parameter*> base_params_;
};

}  // namespace avger
