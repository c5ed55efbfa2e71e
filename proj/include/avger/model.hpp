#pragma once

#include <memory>
#include <optional>

#include "avger/config.hpp"
#include "avger/losses.hpp"
#include "avger/prompt.hpp"

namespace avger {

/// The full correction system: tokenizer, synchronous encoder, decoder and
/// every parameter, plus the config snapshot they were built from.
struct Model {
  Config cfg;
  BpeTokenizer tokenizer;
  nn::ParameterSet params;
  std::unique_ptr<SyncEncoder> encoder;
  std::unique_ptr<Decoder> decoder;

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Fresh seeded build. Syncs decoder vocab to the tokenizer.
  static std::unique_ptr<Model> build(Config cfg, BpeTokenizer tok);

  /// Prompt layout for an N-best list under the model's ablation flags.
  PromptEmbedding layout_for(const NBestList& nbest, int K) const;

  /// End-to-end correction of one sample (inference path, no tape).
  Transcript correct(const std::shared_ptr<const Decoder::Materialized>& w,
                     const AVSample& sample, const NBestList& nbest, const GenMode& mode,
                     int max_new) const;

  /// Plain (no-grad) prompt prefix for a sample, for generation/scoring.
  nn::Mat inference_prefix(const AVSample& sample, const NBestList& nbest) const;
};

/// Per-sample N-best seed; train and eval both use it so a sample's N-best
/// list is a fixed property of (corpus, global seed).
uint64_t nbest_seed(uint64_t global_seed, const std::string& sample_id);

/// Checkpoint: config record, tokenizer, and every named parameter tensor in
/// the f64 blob container.
void save_checkpoint(const std::filesystem::path& dir, const Model& model);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& dir);

}  // namespace avger
