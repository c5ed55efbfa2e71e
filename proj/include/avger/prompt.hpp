#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avger/autograd.hpp"
#include "avger/avsr_stub.hpp"
#include "avger/tokenizer.hpp"

namespace avger {

struct PromptConfig {
  std::string instruction{
      "Below is the output of an audio-visual speech recognizer. Use the "
      "speech, the lip video and the candidate transcriptions to report the "
      "best transcription of the utterance."};
  int max_seq_len{2048};
};

/// Section headings, fixed order.
extern const char* const kHeadingInstruction;
extern const char* const kHeadingSpeech;
extern const char* const kHeadingVideo;
extern const char* const kHeadingCandidates;
extern const char* const kHeadingBest;
extern const char* const kSpeechPlaceholder;
extern const char* const kVideoPlaceholder;

/// Five-section prompt text with placeholder markers for the continuous
/// representations. Candidates are listed best-first with rank prefixes.
std::string build_prompt_text(const NBestList& nbest, const PromptConfig& cfg);

/// Position-level layout of the decoder input: interleaved text tokens and
/// continuous representation spans, plus the appended target section.
struct PromptEmbedding {
  enum class Source : uint8_t { Text = 0, Speech = 1, Video = 2 };

  std::vector<Source> source;  // per prefix position
  std::vector<int> tokens;     // token id per prefix position; -1 inside rep spans
  int speech_begin{-1};
  int speech_len{0};
  int video_begin{-1};
  int video_len{0};
  std::vector<int> target_tokens;  // training targets (no eos)

  int length() const { return int(source.size()); }
  int total_length() const { return length() + int(target_tokens.size()); }
  /// True exactly at target positions (those after the final heading).
  std::vector<bool> label_mask() const;
};

/// Tokenize the prompt text around the placeholders and lay out the rep
/// spans. Throws std::length_error if the assembled prefix would exceed
/// max_seq_len (no silent truncation).
PromptEmbedding assemble_layout(const std::string& prompt_text, int n_speech_rows,
                                int n_video_rows, const BpeTokenizer& tok,
                                int max_seq_len);

void append_targets(PromptEmbedding& pe, std::vector<int> target_ids, int max_seq_len);

/// Dense prefix embedding; rep matrices must match the span lengths.
nn::Mat materialize_prefix(const PromptEmbedding& pe, const nn::Mat& embed_table,
                           const nn::Mat* rep_speech, const nn::Mat* rep_video);

/// Tape version: text tokens come from the embedding parameter, rep rows are
/// spliced in verbatim so gradients reach the encoder.
nn::Value materialize_prefix(nn::Tape& t, const PromptEmbedding& pe,
                             nn::Parameter& embed_table,
                             std::optional<nn::Value> rep_speech,
                             std::optional<nn::Value> rep_video);

}  // namespace avger
