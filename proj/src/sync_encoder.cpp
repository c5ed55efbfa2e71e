#include "avger/sync_encoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "avger/common.hpp"

namespace avger {

using nn::Mat;
using nn::Tape;
using nn::Value;

void EncoderConfig::validate(const CorpusConfig& corpus) const {
  if (d < 4 || d % 4 != 0) throw std::invalid_argument("encoder: d must be a multiple of 4");
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("encoder: d must be divisible by heads");
  if (qformer_blocks < 1 || n_q < 1) throw std::invalid_argument("encoder: bad stack shape");
  if (tau <= 0) throw std::invalid_argument("encoder: tau must be > 0");
  if (corpus.sample_rate != 32 * audio_fps_out)
    throw std::invalid_argument("encoder: audio stack needs sample_rate == 32*audio_fps_out");
  if (corpus.video_fps != video_fps_out)
    throw std::invalid_argument("encoder: lip path is frame-rate preserving");
  if (corpus.roi % 2 != 0) throw std::invalid_argument("encoder: roi must be even");
  int k_needed = int(std::ceil(corpus.max_duration / tau - 1e-9));
  if (pos_table_len < k_needed)
    throw std::invalid_argument("encoder: pos_table_len below ceil(max_duration/tau)");
  if (d_llm < 1) throw std::invalid_argument("encoder: bad d_llm");
}

SyncEncoder::SyncEncoder(EncoderConfig cfg, const CorpusConfig& corpus,
                         nn::ParameterSet& params, uint64_t init_seed)
    : cfg_(cfg),
      sample_rate_(corpus.sample_rate),
      video_fps_(corpus.video_fps),
      roi_(corpus.roi) {
  cfg_.validate(corpus);
  const int d = cfg_.d;
  uint64_t s = 0;
  auto normal = [&](nn::Parameter& p, double stddev) {
    nn::init_normal(p, stddev, derive_seed(init_seed, "encoder", s++));
  };

  int chans[3] = {d / 4, d / 2, d};
  int in_ch = 1;
  for (int l = 0; l < 3; ++l) {
    auto& w = params.add("encoder/audio/conv" + std::to_string(l) + "_w",
                         conv_kernel_[size_t(l)] * in_ch, chans[l]);
    normal(w, std::sqrt(2.0 / double(conv_kernel_[size_t(l)] * in_ch)));
    auto& b = params.add("encoder/audio/conv" + std::to_string(l) + "_b", 1, chans[l]);
    nn::init_zero(b);
    conv_w_.push_back(&w);
    conv_b_.push_back(&b);
    in_ch = chans[l];
  }

  int half = roi_ / 2;
  int patch_dim = half * half;
  patch_w_ = &params.add("encoder/lip/patch_w", patch_dim, d);
  normal(*patch_w_, std::sqrt(2.0 / double(patch_dim)));
  patch_b_ = &params.add("encoder/lip/patch_b", 1, d);
  nn::init_zero(*patch_b_);
  patch_pos_ = &params.add("encoder/lip/patch_pos", 4, d);
  normal(*patch_pos_, 0.02);
  tconv_w_ = &params.add("encoder/lip/tconv_w", 3 * d, d);
  normal(*tconv_w_, std::sqrt(2.0 / double(3 * d)));
  tconv_b_ = &params.add("encoder/lip/tconv_b", 1, d);
  nn::init_zero(*tconv_b_);
  quadrant_cols_.resize(4);
  for (int q = 0; q < 4; ++q) {
    int r0 = (q / 2) * half, c0 = (q % 2) * half;
    for (int r = 0; r < half; ++r)
      for (int c = 0; c < half; ++c)
        quadrant_cols_[size_t(q)].push_back((r0 + r) * roi_ + (c0 + c));
  }

  q_speech_ = &params.add("encoder/queries/speech", cfg_.n_q, d);
  normal(*q_speech_, 0.02);
  q_lip_ = &params.add("encoder/queries/lip", cfg_.n_q, d);
  normal(*q_lip_, 0.02);
  pos_table_ = &params.add("encoder/pos_table", cfg_.pos_table_len, d);
  normal(*pos_table_, 0.02);

  for (int i = 0; i < cfg_.qformer_blocks; ++i) {
    std::string p = "encoder/qf" + std::to_string(i) + "/";
    QfBlock blk{};
    auto addw = [&](const char* name) {
      auto& w = params.add(p + name, d, d);
      normal(w, 0.02);
      return &w;
    };
    blk.self_wq = addw("self_wq");
    blk.self_wk = addw("self_wk");
    blk.self_wv = addw("self_wv");
    blk.cross_wq = addw("cross_wq");
    blk.cross_wk = addw("cross_wk");
    blk.cross_wv = addw("cross_wv");
    blk.ffn_w = addw("ffn_w");
    blk.ffn_b = &params.add(p + "ffn_b", 1, d);
    nn::init_zero(*blk.ffn_b);
    auto add_ln = [&](const char* g, const char* b, nn::Parameter*& pg, nn::Parameter*& pb) {
      pg = &params.add(p + g, 1, d);
      nn::init_const(*pg, 1.0);
      pb = &params.add(p + b, 1, d);
      nn::init_zero(*pb);
    };
    add_ln("ln1_g", "ln1_b", blk.ln1_g, blk.ln1_b);
    add_ln("ln2_g", "ln2_b", blk.ln2_g, blk.ln2_b);
    add_ln("ln3_g", "ln3_b", blk.ln3_g, blk.ln3_b);
    blocks_.push_back(blk);
  }

  bridge_s_w_ = &params.add("encoder/bridger/speech_w", d, cfg_.d_llm);
  normal(*bridge_s_w_, 0.02);
  bridge_s_b_ = &params.add("encoder/bridger/speech_b", 1, cfg_.d_llm);
  nn::init_zero(*bridge_s_b_);
  bridge_l_w_ = &params.add("encoder/bridger/lip_w", d, cfg_.d_llm);
  normal(*bridge_l_w_, 0.02);
  bridge_l_b_ = &params.add("encoder/bridger/lip_b", 1, cfg_.d_llm);
  nn::init_zero(*bridge_l_b_);
}

Value SyncEncoder::encode_audio_frames(Tape& t, const AudioSignal& audio) const {
  if (audio.samples.empty()) throw std::domain_error("encode_audio_frames: empty signal");
  Mat wave(Eigen::Index(audio.samples.size()), 1);
  for (size_t i = 0; i < audio.samples.size(); ++i) wave(Eigen::Index(i), 0) = audio.samples[i];
  Value x = t.constant(std::move(wave));
  for (size_t l = 0; l < conv_w_.size(); ++l) {
    int k = conv_kernel_[l], s = conv_stride_[l];
    Eigen::Index in_len = x.rows();
    Eigen::Index out_len = (in_len + s - 1) / s;  // ceil
    int pad_total = int(std::max<Eigen::Index>(0, (out_len - 1) * s + k - in_len));
    Value cols = t.im2col_1d(x, k, s, pad_total / 2, pad_total - pad_total / 2);
    x = t.add_rowvec(t.matmul(cols, t.param(*conv_w_[l])), t.param(*conv_b_[l]));
    if (l + 1 < conv_w_.size()) x = t.gelu(x);
  }
  return x;
}

Value SyncEncoder::encode_lip_frames(Tape& t, const LipVideo& video) const {
  if (video.frame_count() == 0) throw std::domain_error("encode_lip_frames: empty video");
  if (video.height != roi_ || video.width != roi_)
    throw std::invalid_argument("encode_lip_frames: frame size does not match roi");
  Value frames = t.constant(video.frames);
  Value acc;
  for (int q = 0; q < 4; ++q) {
    Value patch = t.select_cols(frames, quadrant_cols_[size_t(q)]);
    Value proj = t.add_rowvec(t.matmul(patch, t.param(*patch_w_)), t.param(*patch_b_));
    proj = t.add_rowvec(proj, t.slice_rows(t.param(*patch_pos_), q, 1));
    acc = q == 0 ? proj : t.add(acc, proj);
  }
  Value feats = t.gelu(t.scale(acc, 0.25));
  Value cols = t.im2col_1d(feats, 3, 1, 1, 1);
  return t.add_rowvec(t.matmul(cols, t.param(*tconv_w_)), t.param(*tconv_b_));
}

SyncEncoder::ClipResult SyncEncoder::clip_segments(Tape& t, Value feats, int K) const {
  Eigen::Index rows = feats.rows();
  if (K < 1) throw std::invalid_argument("clip_segments: K must be >= 1");
  if (rows < K) throw std::domain_error("clip_segments: fewer frames than segments");
  ClipResult out;
  Eigen::Index base = rows / K;
  Eigen::Index rem = rows % K;
  out.seg_len = int(base + (rem > 0 ? 1 : 0));
  Eigen::Index start = 0;
  for (int k = 0; k < K; ++k) {
    Eigen::Index valid = base + (k < rem ? 1 : 0);
    Value seg = t.slice_rows(feats, start, valid);
    if (valid < out.seg_len) {
      seg = t.concat_rows({seg, t.zeros(out.seg_len - valid, feats.cols())});
    }
    out.segments.push_back(seg);
    out.valid.push_back(int(valid));
    start += valid;
  }
  return out;
}

Mat SyncEncoder::unclip(const std::vector<Mat>& segments, const std::vector<int>& valid) {
  if (segments.size() != valid.size()) throw std::invalid_argument("unclip: size mismatch");
  Eigen::Index total = 0;
  for (int v : valid) total += v;
  if (segments.empty()) return Mat(0, 0);
  Mat out(total, segments[0].cols());
  Eigen::Index off = 0;
  for (size_t k = 0; k < segments.size(); ++k) {
    out.middleRows(off, valid[k]) = segments[k].topRows(valid[k]);
    off += valid[k];
  }
  return out;
}

Value attention(Tape& t, Value q_in, Value kv_in, Value wq, Value wk, Value wv,
                int heads, const Mat* bias) {
  Value Q = t.matmul(q_in, wq);
  Value K = t.matmul(kv_in, wk);
  Value V = t.matmul(kv_in, wv);
  if (heads < 1 || Q.cols() % heads != 0)
    throw std::invalid_argument("attention: width not divisible by heads");
  Eigen::Index dk = Q.cols() / heads;
  double inv_scale = 1.0 / std::sqrt(double(dk));
  std::vector<Value> outs;
  for (int h = 0; h < heads; ++h) {
    Value Qh = t.slice_cols(Q, Eigen::Index(h) * dk, dk);
    Value Kh = t.slice_cols(K, Eigen::Index(h) * dk, dk);
    Value Vh = t.slice_cols(V, Eigen::Index(h) * dk, dk);
    Value scores = t.scale(t.matmul_nt(Qh, Kh), inv_scale);
    Value probs = bias ? t.softmax_rows_biased(scores, *bias) : t.softmax_rows(scores);
    outs.push_back(t.matmul(probs, Vh));
  }
  return outs.size() == 1 ? outs[0] : t.concat_cols(outs);
}

Value SyncEncoder::mha(Tape& t, Value q_in, Value kv_in, nn::Parameter& wq,
                       nn::Parameter& wk, nn::Parameter& wv, const Mat* bias) const {
  return attention(t, q_in, kv_in, t.param(wq), t.param(wk), t.param(wv), cfg_.heads, bias);
}

Value SyncEncoder::qformer_apply(Tape& t, Value queries, Value segment, int valid,
                                 int k) const {
  if (valid < 1) throw std::domain_error("qformer_apply: all-masked segment");
  if (valid > segment.rows()) throw std::invalid_argument("qformer_apply: bad mask");
  if (k < 0 || k >= cfg_.pos_table_len)
    throw std::invalid_argument("qformer_apply: segment index outside position table");

  Value pos_k = t.slice_rows(t.param(*pos_table_), k, 1);
  Value e_dot = t.add_rowvec(segment, pos_k);

  Mat bias = Mat::Zero(cfg_.n_q, segment.rows());
  if (valid < segment.rows()) {
    bias.rightCols(segment.rows() - valid)
        .setConstant(-std::numeric_limits<double>::infinity());
  }

  Value x = queries;
  for (const QfBlock& blk : blocks_) {
    Value xh = t.layer_norm(x, t.param(*blk.ln1_g), t.param(*blk.ln1_b));
    x = t.add(x, mha(t, xh, xh, *blk.self_wq, *blk.self_wk, *blk.self_wv, nullptr));
    Value xh2 = t.layer_norm(x, t.param(*blk.ln2_g), t.param(*blk.ln2_b));
    x = t.add(x, mha(t, xh2, e_dot, *blk.cross_wq, *blk.cross_wk, *blk.cross_wv, &bias));
    Value xh3 = t.layer_norm(x, t.param(*blk.ln3_g), t.param(*blk.ln3_b));
    x = t.add(x, t.gelu(t.add_rowvec(t.matmul(xh3, t.param(*blk.ffn_w)),
                                     t.param(*blk.ffn_b))));
  }
  return x;
}

Value SyncEncoder::compress_segments(Tape& t, Value queries,
                                     const std::vector<Value>& segments,
                                     const std::vector<int>& valid) const {
  std::vector<Value> outs;
  for (size_t k = 0; k < segments.size(); ++k)
    outs.push_back(qformer_apply(t, queries, segments[k], valid[k], int(k)));
  return t.concat_rows(outs);
}

Value SyncEncoder::bridge(Tape& t, Value stacked, nn::Parameter& w, nn::Parameter& b) const {
  return t.add_rowvec(t.matmul(stacked, t.param(w)), t.param(b));
}

int SyncEncoder::segment_count(double duration_s, bool segmentation_on) const {
  if (duration_s <= 0) throw std::domain_error("segment_count: zero duration");
  if (!segmentation_on) return 1;
  return std::max(1, int(std::ceil(duration_s / cfg_.tau - 1e-9)));
}

SyncEncoder::Reps SyncEncoder::encode_sync(Tape& t, const AVSample& sample,
                                           const AblationFlags& flags) const {
  Reps out;
  double T = sample.audio.samples.empty() ? sample.video.duration() : sample.audio.duration();
  if (T <= 0) throw std::domain_error("encode_sync: zero duration");
  out.K = segment_count(T, flags.segment);

  if (flags.speech) {
    Value e_s = encode_audio_frames(t, sample.audio);
    ClipResult segs = clip_segments(t, e_s, out.K);
    Value stacked = compress_segments(t, t.param(*q_speech_), segs.segments, segs.valid);
    out.speech = bridge(t, stacked, *bridge_s_w_, *bridge_s_b_);
  }
  if (flags.lip) {
    Value e_l = encode_lip_frames(t, sample.video);
    ClipResult segs = clip_segments(t, e_l, out.K);
    Value stacked = compress_segments(t, t.param(*q_lip_), segs.segments, segs.valid);
    out.lip = bridge(t, stacked, *bridge_l_w_, *bridge_l_b_);
  }
  return out;
}

}  // namespace avger
