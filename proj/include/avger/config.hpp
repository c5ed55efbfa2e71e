#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "avger/avsr_stub.hpp"
#include "avger/corpus.hpp"
#include "avger/decoder.hpp"
#include "avger/prompt.hpp"
#include "avger/sync_encoder.hpp"

namespace avger {

struct TrainConfig {
  double lr{1e-4};
  double warmup_frac{0.0005};  // fraction of total optimizer steps
  int epochs{2};
  int batch{32};  // effective batch via gradient accumulation
  double weight_decay{0.01};
  int wer_samples{4};  // M sampled sequences for the minimum-risk WER term
  double mrt_temperature{1.0};
  int mrt_max_new{24};
  int wer_warmstart_steps{0};  // 0 = WER term active from step 0
  int cmd_order_max{5};
  bool cmd_orders_literal{false};  // escape hatch: orders 5..K instead of 2..K
  // Base-LM construction stage (the trained-from-scratch LLM stand-in).
  int pretrain_epochs{6};
  double pretrain_lr{3e-4};
  int pretrain_batch{16};
  int threads{0};  // 0 = hardware concurrency
  int eval_max_new{32};

  void validate() const;
};

struct HarnessConfig {
  int case_studies{2};
  bool werr_round_half_even{false};  // default: truncate toward zero
  std::string eval_split{"test"};
  int ablation_corpus_size{400};
  int sweep_corpus_size{400};

  void validate() const;
};

struct Config {
  uint64_t seed{7};
  CorpusConfig corpus;
  ChannelConfig channel;
  EncoderConfig encoder;
  int tokenizer_vocab{512};
  DecoderConfig decoder;
  LoraConfig lora;
  PromptConfig prompt;
  TrainConfig training;
  AblationFlags ablation;
  HarnessConfig harness;

  void validate() const;

  std::string to_json_string() const;
  static Config from_json_string(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Config load(const std::filesystem::path& path);
};

/// Corpus directories carry a copy of the corpus section so loaders know the
/// sample rates.
void save_corpus_config(const std::filesystem::path& corpus_dir, const CorpusConfig& cfg);
CorpusConfig load_corpus_config(const std::filesystem::path& corpus_dir);

}  // namespace avger
