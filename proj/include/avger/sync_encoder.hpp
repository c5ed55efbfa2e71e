#pragma once

#include <optional>
#include <vector>

#include "avger/autograd.hpp"
#include "avger/corpus.hpp"

namespace avger {

struct EncoderConfig {
  int d{128};
  int heads{4};
  int qformer_blocks{6};
  int n_q{20};
  double tau{1.0};  // Temporal Clipper window, seconds
  int audio_fps_out{50};
  int video_fps_out{25};
  int pos_table_len{40};  // >= ceil(max utterance seconds / smallest tau)
  int d_llm{256};

  void validate(const CorpusConfig& corpus) const;
};

struct AblationFlags {
  bool segment{true};
  bool speech{true};
  bool lip{true};
  bool l_cmd{true};
  bool l_wer{true};
};

/// Multi-head scaled dot-product attention: concat over heads of
/// softmax(q W_q (k W_k)^T / sqrt(d/h) + bias) (k W_v). No output projection.
/// `bias` (0 / -inf) masks keys; null means unmasked.
nn::Value attention(nn::Tape& t, nn::Value q_in, nn::Value kv_in, nn::Value wq,
                    nn::Value wk, nn::Value wv, int heads, const nn::Mat* bias);

/// Frame-level encoders, parameter-free Temporal Clipper, shared Q-Former
/// stack with per-modality query banks, and per-modality Bridgers. All
/// forward passes run on a Tape so training reaches every weight.
class SyncEncoder {
 public:
  SyncEncoder(EncoderConfig cfg, const CorpusConfig& corpus, nn::ParameterSet& params,
              uint64_t init_seed);

  const EncoderConfig& config() const { return cfg_; }

  /// Strided 1-D convolution stack over the waveform -> T_S x d.
  nn::Value encode_audio_frames(nn::Tape& t, const AudioSignal& audio) const;
  /// Per-frame quadrant patch projection + temporal convolution -> T_L x d.
  nn::Value encode_lip_frames(nn::Tape& t, const LipVideo& video) const;

  struct ClipResult {
    std::vector<nn::Value> segments;  // K pieces, each seg_len x d
    std::vector<int> valid;           // unmasked row count per segment
    int seg_len{0};
  };
  /// Split frame features into K equal-length zero-padded segments.
  ClipResult clip_segments(nn::Tape& t, nn::Value feats, int K) const;

  /// Reassemble unmasked rows; identity over clip_segments.
  static nn::Mat unclip(const std::vector<nn::Mat>& segments, const std::vector<int>& valid);

  /// One Q-Former pass: position embedding k added to the segment, then the
  /// 6-block stack (self-attention, masked cross-attention, FFN). Output is
  /// n_q x d regardless of segment length.
  nn::Value qformer_apply(nn::Tape& t, nn::Value queries, nn::Value segment, int valid,
                          int k) const;

  struct Reps {
    std::optional<nn::Value> speech;  // K*n_q x d_llm
    std::optional<nn::Value> lip;
    int K{0};
  };
  Reps encode_sync(nn::Tape& t, const AVSample& sample, const AblationFlags& flags) const;

  /// Compress a prepared segment list with a given query bank and stack the
  /// results (exposed so tests can permute segment order).
  nn::Value compress_segments(nn::Tape& t, nn::Value queries,
                              const std::vector<nn::Value>& segments,
                              const std::vector<int>& valid) const;

  int segment_count(double duration_s, bool segmentation_on) const;

  nn::Parameter& speech_queries() const { return *q_speech_; }
  nn::Parameter& lip_queries() const { return *q_lip_; }
  nn::Parameter& position_table() const { return *pos_table_; }

 private:
  struct QfBlock {
    nn::Parameter *self_wq, *self_wk, *self_wv;
    nn::Parameter *cross_wq, *cross_wk, *cross_wv;
    nn::Parameter *ffn_w, *ffn_b;
    nn::Parameter *ln1_g, *ln1_b, *ln2_g, *ln2_b, *ln3_g, *ln3_b;
  };

  nn::Value mha(nn::Tape& t, nn::Value q_in, nn::Value kv_in, nn::Parameter& wq,
                nn::Parameter& wk, nn::Parameter& wv, const nn::Mat* bias) const;
  nn::Value bridge(nn::Tape& t, nn::Value stacked, nn::Parameter& w, nn::Parameter& b) const;

  EncoderConfig cfg_;
  int sample_rate_, video_fps_, roi_;
  // audio conv stack geometry
  std::vector<int> conv_kernel_{8, 8, 4};
  std::vector<int> conv_stride_{4, 4, 2};
  std::vector<nn::Parameter*> conv_w_, conv_b_;
  // lip patch + temporal conv
  nn::Parameter *patch_w_, *patch_b_, *patch_pos_, *tconv_w_, *tconv_b_;
  std::vector<std::vector<int>> quadrant_cols_;
  // q-former
  nn::Parameter *q_speech_, *q_lip_, *pos_table_;
  std::vector<QfBlock> blocks_;
  // bridgers
  nn::Parameter *bridge_s_w_, *bridge_s_b_, *bridge_l_w_, *bridge_l_b_;
};

}  // namespace avger
