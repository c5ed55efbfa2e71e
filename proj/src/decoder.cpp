#include "avger/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "avger/common.hpp"

namespace avger {

using nn::Mat;
using nn::Tape;
using nn::Value;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Mat causal_bias(Eigen::Index n) {
  Mat b = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) b(i, j) = kNegInf;
  return b;
}

/// Branch rows see the whole prefix and themselves causally.
Mat branch_bias(Eigen::Index m, Eigen::Index prefix_len) {
  Mat b = Mat::Zero(m, prefix_len + m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) b(i, prefix_len + j) = kNegInf;
  return b;
}

Eigen::RowVectorXd stable_log_softmax(const Eigen::RowVectorXd& x) {
  double m = x.maxCoeff();
  double lse = std::log((x.array() - m).exp().sum()) + m;
  return x.array() - lse;
}

Eigen::RowVectorXd stable_softmax(const Eigen::RowVectorXd& x) {
  double m = x.maxCoeff();
  Eigen::ArrayXd e = (x.array() - m).exp().transpose();
  return (e / e.sum()).transpose();
}

}  // namespace

void DecoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("decoder: layers >= 1");
  if (d_llm < heads || heads < 1 || d_llm % heads != 0)
    throw std::invalid_argument("decoder: d_llm must be divisible by heads");
  if (ffn_multiple < 1) throw std::invalid_argument("decoder: ffn_multiple >= 1");
  if (vocab < 2) throw std::invalid_argument("decoder: vocab >= 2");
  if (max_seq_len < 2) throw std::invalid_argument("decoder: max_seq_len >= 2");
}

void LoraConfig::validate(int d_llm) const {
  if (rank < 1) throw std::invalid_argument("lora: rank >= 1");
  if (rank > d_llm)
    throw std::invalid_argument("lora: rank exceeds min(a, b) of the adapted weight");
  if (alpha <= 0) throw std::invalid_argument("lora: alpha > 0");
}

Decoder::Decoder(DecoderConfig cfg, nn::ParameterSet& params, uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d_llm;
  const int f = cfg_.ffn_multiple * d;
  uint64_t s = 0;
  auto normal = [&](nn::Parameter& p, double stddev) {
    nn::init_normal(p, stddev, derive_seed(init_seed, "decoder", s++));
  };
  auto add_base = [&](const std::string& name, int r, int c) -> nn::Parameter& {
    auto& p = params.add(name, r, c);
    base_params_.push_back(&p);
    return p;
  };

  embed_ = &add_base("decoder/embed", cfg_.vocab, d);
  normal(*embed_, 0.02);
  pos_ = &add_base("decoder/pos", cfg_.max_seq_len, d);
  normal(*pos_, 0.02);
  for (int i = 0; i < cfg_.layers; ++i) {
    std::string p = "decoder/l" + std::to_string(i) + "/";
    Layer l{};
    auto addw = [&](const char* n, int r, int c, double stddev) {
      auto& w = add_base(p + n, r, c);
      normal(w, stddev);
      return &w;
    };
    l.wq = addw("wq", d, d, 0.02);
    l.wk = addw("wk", d, d, 0.02);
    l.wv = addw("wv", d, d, 0.02);
    l.wo = addw("wo", d, d, 0.02 / std::sqrt(2.0 * cfg_.layers));
    l.ffn_w1 = addw("ffn_w1", d, f, 0.02);
    l.ffn_b1 = &add_base(p + "ffn_b1", 1, f);
    nn::init_zero(*l.ffn_b1);
    l.ffn_w2 = addw("ffn_w2", f, d, 0.02 / std::sqrt(2.0 * cfg_.layers));
    l.ffn_b2 = &add_base(p + "ffn_b2", 1, d);
    nn::init_zero(*l.ffn_b2);
    l.ln1_g = &add_base(p + "ln1_g", 1, d);
    nn::init_const(*l.ln1_g, 1.0);
    l.ln1_b = &add_base(p + "ln1_b", 1, d);
    nn::init_zero(*l.ln1_b);
    l.ln2_g = &add_base(p + "ln2_g", 1, d);
    nn::init_const(*l.ln2_g, 1.0);
    l.ln2_b = &add_base(p + "ln2_b", 1, d);
    nn::init_zero(*l.ln2_b);
    for (int k = 0; k < 4; ++k) {
      l.lora_a[k] = nullptr;
      l.lora_b[k] = nullptr;
    }
    layers_.push_back(l);
  }
  lnf_g_ = &add_base("decoder/lnf_g", 1, d);
  nn::init_const(*lnf_g_, 1.0);
  lnf_b_ = &add_base("decoder/lnf_b", 1, d);
  nn::init_zero(*lnf_b_);
  head_ = &add_base("decoder/head", d, cfg_.vocab);
  normal(*head_, 0.02);
}

void Decoder::attach_lora(const LoraConfig& lc, nn::ParameterSet& params,
                          uint64_t init_seed) {
  if (lora_attached_) throw std::logic_error("lora already attached");
  lc.validate(cfg_.d_llm);
  lora_scale_ = lc.scale();
  const char* proj_names[4] = {"q", "k", "v", "o"};
  uint64_t s = 0;
  for (int i = 0; i < cfg_.layers; ++i) {
    for (int k = 0; k < 4; ++k) {
      std::string p =
          "lora/l" + std::to_string(i) + "/" + proj_names[k] + "/";
      auto& a = params.add(p + "A", cfg_.d_llm, lc.rank);
      nn::init_normal(a, 1.0 / std::sqrt(double(cfg_.d_llm)),
                      derive_seed(init_seed, "lora", s++));
      auto& b = params.add(p + "B", lc.rank, cfg_.d_llm);
      nn::init_zero(b);  // zero B => adapters start as the identity delta
      layers_[size_t(i)].lora_a[k] = &a;
      layers_[size_t(i)].lora_b[k] = &b;
    }
  }
  for (nn::Parameter* p : base_params_) p->trainable = false;
  lora_attached_ = true;
}

int Decoder::lora_adapter_count() const {
  return lora_attached_ ? cfg_.layers * 4 : 0;
}

std::vector<nn::Parameter*> Decoder::lora_parameters() const {
  std::vector<nn::Parameter*> out;
  for (const Layer& l : layers_) {
    for (int k = 0; k < 4; ++k) {
      if (l.lora_a[k]) out.push_back(l.lora_a[k]);
      if (l.lora_b[k]) out.push_back(l.lora_b[k]);
    }
  }
  return out;
}

Value Decoder::project(Tape& t, Value x, nn::Parameter* w, nn::Parameter* a,
                       nn::Parameter* b) const {
  Value y = t.matmul(x, t.param(*w));
  if (a && b) {
    Value delta = t.matmul(t.matmul(x, t.param(*a)), t.param(*b));
    y = t.add(y, t.scale(delta, lora_scale_));
  }
  return y;
}

Value Decoder::ffn(Tape& t, Value x, const Layer& l) const {
  Value h = t.gelu(t.add_rowvec(t.matmul(x, t.param(*l.ffn_w1)), t.param(*l.ffn_b1)));
  return t.add_rowvec(t.matmul(h, t.param(*l.ffn_w2)), t.param(*l.ffn_b2));
}

std::vector<Value> Decoder::forward_branches(
    Tape& t, Value prefix, const std::vector<std::vector<int>>& suffixes) const {
  const Eigen::Index P = prefix.rows();
  const int d = cfg_.d_llm;
  const int dk = d / cfg_.heads;
  const double inv_scale = 1.0 / std::sqrt(double(dk));
  if (prefix.cols() != d) throw std::invalid_argument("forward: prefix dim mismatch");
  Eigen::Index longest = 0;
  for (const auto& sfx : suffixes) longest = std::max(longest, Eigen::Index(sfx.size()));
  if (P + longest > cfg_.max_seq_len)
    throw std::length_error("forward: sequence exceeds max_seq_len");
  if (P < 1) throw std::invalid_argument("forward: empty prefix");

  Value embed = t.param(*embed_);
  Value pos = t.param(*pos_);

  std::vector<int> prefix_pos_ids(static_cast<size_t>(P));
  for (Eigen::Index i = 0; i < P; ++i) prefix_pos_ids[size_t(i)] = int(i);
  Value xp = t.add(prefix, t.gather_rows(pos, prefix_pos_ids));

  struct BranchState {
    Value x;
    Eigen::Index m;
  };
  std::vector<BranchState> bs;
  for (const auto& sfx : suffixes) {
    Eigen::Index m = Eigen::Index(sfx.size());
    if (m == 0) {
      bs.push_back({Value{}, 0});
      continue;
    }
    std::vector<int> pos_ids(static_cast<size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) pos_ids[size_t(i)] = int(P + i);
    Value xb = t.add(t.gather_rows(embed, sfx), t.gather_rows(pos, pos_ids));
    bs.push_back({xb, m});
  }

  Mat pbias = causal_bias(P);

  for (const Layer& l : layers_) {
    Value hp = t.layer_norm(xp, t.param(*l.ln1_g), t.param(*l.ln1_b));
    Value Qp = project(t, hp, l.wq, l.lora_a[0], l.lora_b[0]);
    Value Kp = project(t, hp, l.wk, l.lora_a[1], l.lora_b[1]);
    Value Vp = project(t, hp, l.wv, l.lora_a[2], l.lora_b[2]);

    std::vector<Value> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      Value Qh = t.slice_cols(Qp, Eigen::Index(h) * dk, dk);
      Value Kh = t.slice_cols(Kp, Eigen::Index(h) * dk, dk);
      Value Vh = t.slice_cols(Vp, Eigen::Index(h) * dk, dk);
      Value probs = t.softmax_rows_biased(t.scale(t.matmul_nt(Qh, Kh), inv_scale), pbias);
      heads.push_back(t.matmul(probs, Vh));
    }
    Value attn_p = project(t, t.concat_cols(heads), l.wo, l.lora_a[3], l.lora_b[3]);
    xp = t.add(xp, attn_p);
    Value hp2 = t.layer_norm(xp, t.param(*l.ln2_g), t.param(*l.ln2_b));
    xp = t.add(xp, ffn(t, hp2, l));

    for (BranchState& b : bs) {
      if (b.m == 0) continue;
      Value hb = t.layer_norm(b.x, t.param(*l.ln1_g), t.param(*l.ln1_b));
      Value Qb = project(t, hb, l.wq, l.lora_a[0], l.lora_b[0]);
      Value Kb = project(t, hb, l.wk, l.lora_a[1], l.lora_b[1]);
      Value Vb = project(t, hb, l.wv, l.lora_a[2], l.lora_b[2]);
      Value Kcat = t.concat_rows({Kp, Kb});
      Value Vcat = t.concat_rows({Vp, Vb});
      Mat bbias = branch_bias(b.m, P);
      std::vector<Value> bheads;
      for (int h = 0; h < cfg_.heads; ++h) {
        Value Qh = t.slice_cols(Qb, Eigen::Index(h) * dk, dk);
        Value Kh = t.slice_cols(Kcat, Eigen::Index(h) * dk, dk);
        Value Vh = t.slice_cols(Vcat, Eigen::Index(h) * dk, dk);
        Value probs =
            t.softmax_rows_biased(t.scale(t.matmul_nt(Qh, Kh), inv_scale), bbias);
        bheads.push_back(t.matmul(probs, Vh));
      }
      Value attn_b = project(t, t.concat_cols(bheads), l.wo, l.lora_a[3], l.lora_b[3]);
      b.x = t.add(b.x, attn_b);
      Value hb2 = t.layer_norm(b.x, t.param(*l.ln2_g), t.param(*l.ln2_b));
      b.x = t.add(b.x, ffn(t, hb2, l));
    }
  }

  // Logits of the last prefix position are shared by all branches.
  Value last = t.slice_rows(xp, P - 1, 1);
  Value last_logits =
      t.matmul(t.layer_norm(last, t.param(*lnf_g_), t.param(*lnf_b_)), t.param(*head_));

  std::vector<Value> out;
  for (BranchState& b : bs) {
    if (b.m == 0) {
      out.push_back(last_logits);
      continue;
    }
    Value hb = t.layer_norm(b.x, t.param(*lnf_g_), t.param(*lnf_b_));
    Value blogits = t.matmul(hb, t.param(*head_));
    out.push_back(t.concat_rows({last_logits, blogits}));
  }
  return out;
}

std::vector<Value> Decoder::forward_prefix_hiddens(Tape& t, Value prefix) const {
  const Eigen::Index P = prefix.rows();
  const int dk = cfg_.d_llm / cfg_.heads;
  const double inv_scale = 1.0 / std::sqrt(double(dk));
  std::vector<int> prefix_pos_ids(static_cast<size_t>(P));
  for (Eigen::Index i = 0; i < P; ++i) prefix_pos_ids[size_t(i)] = int(i);
  Value xp = t.add(prefix, t.gather_rows(t.param(*pos_), prefix_pos_ids));
  Mat pbias = causal_bias(P);
  std::vector<Value> hiddens;
  for (const Layer& l : layers_) {
    Value hp = t.layer_norm(xp, t.param(*l.ln1_g), t.param(*l.ln1_b));
    Value Qp = project(t, hp, l.wq, l.lora_a[0], l.lora_b[0]);
    Value Kp = project(t, hp, l.wk, l.lora_a[1], l.lora_b[1]);
    Value Vp = project(t, hp, l.wv, l.lora_a[2], l.lora_b[2]);
    std::vector<Value> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      Value Qh = t.slice_cols(Qp, Eigen::Index(h) * dk, dk);
      Value Kh = t.slice_cols(Kp, Eigen::Index(h) * dk, dk);
      Value Vh = t.slice_cols(Vp, Eigen::Index(h) * dk, dk);
      Value probs = t.softmax_rows_biased(t.scale(t.matmul_nt(Qh, Kh), inv_scale), pbias);
      heads.push_back(t.matmul(probs, Vh));
    }
    xp = t.add(xp, project(t, t.concat_cols(heads), l.wo, l.lora_a[3], l.lora_b[3]));
    Value hp2 = t.layer_norm(xp, t.param(*l.ln2_g), t.param(*l.ln2_b));
    xp = t.add(xp, ffn(t, hp2, l));
    hiddens.push_back(xp);
  }
  return hiddens;
}

// ---------------------------------------------------------------------------
// Inference path

struct Decoder::Materialized {
  struct Layer {
    Mat wq, wk, wv, wo;
    Mat ffn_w1, ffn_w2;
    Eigen::RowVectorXd ffn_b1, ffn_b2;
    Eigen::RowVectorXd ln1_g, ln1_b, ln2_g, ln2_b;
  };
  std::vector<Layer> layers;
  Mat embed, pos, head;
  Eigen::RowVectorXd lnf_g, lnf_b;
  DecoderConfig cfg;
};

namespace {

Mat rowwise_layer_norm(const Mat& x, const Eigen::RowVectorXd& g,
                       const Eigen::RowVectorXd& b) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + 1e-5);
    out.row(i) = (((x.row(i).array() - mu) * inv) * g.array()) + b.array();
  }
  return out;
}

Mat gelu_mat(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244)); });
}

}  // namespace

std::shared_ptr<const Decoder::Materialized> Decoder::materialize() const {
  auto w = std::make_shared<Materialized>();
  w->cfg = cfg_;
  w->embed = embed_->value;
  w->pos = pos_->value;
  w->head = head_->value;
  w->lnf_g = lnf_g_->value.row(0);
  w->lnf_b = lnf_b_->value.row(0);
  for (const Layer& l : layers_) {
    Materialized::Layer ml;
    auto eff = [&](nn::Parameter* base, nn::Parameter* a, nn::Parameter* b) -> Mat {
      if (a && b) return base->value + lora_scale_ * (a->value * b->value);
      return base->value;
    };
    ml.wq = eff(l.wq, l.lora_a[0], l.lora_b[0]);
    ml.wk = eff(l.wk, l.lora_a[1], l.lora_b[1]);
    ml.wv = eff(l.wv, l.lora_a[2], l.lora_b[2]);
    ml.wo = eff(l.wo, l.lora_a[3], l.lora_b[3]);
    ml.ffn_w1 = l.ffn_w1->value;
    ml.ffn_w2 = l.ffn_w2->value;
    ml.ffn_b1 = l.ffn_b1->value.row(0);
    ml.ffn_b2 = l.ffn_b2->value.row(0);
    ml.ln1_g = l.ln1_g->value.row(0);
    ml.ln1_b = l.ln1_b->value.row(0);
    ml.ln2_g = l.ln2_g->value.row(0);
    ml.ln2_b = l.ln2_b->value.row(0);
    w->layers.push_back(std::move(ml));
  }
  return w;
}

Decoder::Session Decoder::open_session(const std::shared_ptr<const Materialized>& w,
                                       const Mat& prefix) const {
  if (!w) throw std::invalid_argument("open_session: null weights");
  const Eigen::Index P = prefix.rows();
  if (P < 1) throw std::invalid_argument("open_session: empty prefix");
  if (P >= cfg_.max_seq_len) throw std::length_error("open_session: prefix too long");
  const int d = cfg_.d_llm;
  const int dk = d / cfg_.heads;
  const double inv_scale = 1.0 / std::sqrt(double(dk));

  Session s;
  s.w_ = w;
  s.len_ = int(P);
  s.key_cache_.resize(size_t(cfg_.layers));
  s.value_cache_.resize(size_t(cfg_.layers));

  Mat x = prefix + w->pos.topRows(P);
  for (size_t li = 0; li < w->layers.size(); ++li) {
    const auto& l = w->layers[li];
    Mat h = rowwise_layer_norm(x, l.ln1_g, l.ln1_b);
    Mat Q = h * l.wq, K = h * l.wk, V = h * l.wv;
    s.key_cache_[li] = K;
    s.value_cache_[li] = V;
    Mat attn(P, d);
    for (int hd = 0; hd < cfg_.heads; ++hd) {
      Mat Qh = Q.middleCols(Eigen::Index(hd) * dk, dk);
      Mat Kh = K.middleCols(Eigen::Index(hd) * dk, dk);
      Mat Vh = V.middleCols(Eigen::Index(hd) * dk, dk);
      Mat scores = inv_scale * (Qh * Kh.transpose());
      for (Eigen::Index i = 0; i < P; ++i) {
        for (Eigen::Index j = i + 1; j < P; ++j) scores(i, j) = kNegInf;
        attn.block(i, Eigen::Index(hd) * dk, 1, dk) =
            stable_softmax(scores.row(i)).head(i + 1) * Vh.topRows(i + 1);
      }
    }
    x += attn * l.wo;
    Mat h2 = rowwise_layer_norm(x, l.ln2_g, l.ln2_b);
    Mat f = gelu_mat((h2 * l.ffn_w1).rowwise() + l.ffn_b1);
    x += ((f * l.ffn_w2).rowwise() + l.ffn_b2);
  }
  Mat lastn = rowwise_layer_norm(x.bottomRows(1), w->lnf_g, w->lnf_b);
  s.last_logits_ = lastn * w->head;
  return s;
}

void Decoder::Session::append(int token_id) {
  const auto& w = *w_;
  const int d = w.cfg.d_llm;
  const int dk = d / w.cfg.heads;
  const double inv_scale = 1.0 / std::sqrt(double(dk));
  if (token_id < 0 || token_id >= w.cfg.vocab)
    throw std::out_of_range("session: token id");
  if (len_ + 1 > w.cfg.max_seq_len) throw std::length_error("session: max_seq_len");

  Mat x = w.embed.row(token_id) + w.pos.row(len_);
  for (size_t li = 0; li < w.layers.size(); ++li) {
    const auto& l = w.layers[li];
    Mat h = rowwise_layer_norm(x, l.ln1_g, l.ln1_b);
    Mat q = h * l.wq, k = h * l.wk, v = h * l.wv;
    Mat& K = key_cache_[li];
    Mat& V = value_cache_[li];
    K.conservativeResize(K.rows() + 1, Eigen::NoChange);
    K.row(K.rows() - 1) = k;
    V.conservativeResize(V.rows() + 1, Eigen::NoChange);
    V.row(V.rows() - 1) = v;
    Mat attn(1, d);
    for (int hd = 0; hd < w.cfg.heads; ++hd) {
      Mat qh = q.middleCols(Eigen::Index(hd) * dk, dk);
      Mat Kh = K.middleCols(Eigen::Index(hd) * dk, dk);
      Mat Vh = V.middleCols(Eigen::Index(hd) * dk, dk);
      Eigen::RowVectorXd scores = inv_scale * (qh * Kh.transpose()).row(0);
      attn.block(0, Eigen::Index(hd) * dk, 1, dk) = stable_softmax(scores) * Vh;
    }
    x += attn * l.wo;
    Mat h2 = rowwise_layer_norm(x, l.ln2_g, l.ln2_b);
    Mat f = gelu_mat((h2 * l.ffn_w1).rowwise() + l.ffn_b1);
    x += ((f * l.ffn_w2).rowwise() + l.ffn_b2);
  }
  last_logits_ = rowwise_layer_norm(x, w.lnf_g, w.lnf_b) * w.head;
  ++len_;
}

GenerationResult Decoder::generate(const std::shared_ptr<const Materialized>& w,
                                   const Mat& prefix, const GenMode& mode, int max_new,
                                   int eos_id) const {
  if (max_new < 0) throw std::invalid_argument("generate: max_new >= 0");
  GenerationResult res;
  if (max_new == 0) return res;

  if (mode.kind == GenMode::kGreedy || mode.kind == GenMode::kSample) {
    Session s = open_session(w, prefix);
    Rng rng(mode.seed);
    while (int(res.tokens.size()) < max_new) {
      int next;
      Eigen::RowVectorXd lsm = stable_log_softmax(s.last_logits());
      if (mode.kind == GenMode::kGreedy) {
        Eigen::Index arg;
        s.last_logits().maxCoeff(&arg);  // first max: lowest id wins ties
        next = int(arg);
      } else {
        Eigen::RowVectorXd p =
            stable_softmax(s.last_logits() / std::max(1e-9, mode.temperature));
        double u = rng.uniform();
        double cum = 0.0;
        next = int(p.cols()) - 1;
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
          cum += p(j);
          if (u < cum) {
            next = int(j);
            break;
          }
        }
      }
      res.logp += lsm(next);
      if (next == eos_id) {
        res.ended_eos = true;
        return res;
      }
      res.tokens.push_back(next);
      s.append(next);
    }
    return res;
  }

  // Beam search; ties break toward the lexicographically smaller sequence.
  struct Item {
    std::vector<int> tokens;
    double logp{0.0};
    bool done{false};
    std::shared_ptr<Session> session;
  };
  auto better = [](const Item& a, const Item& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    if (a.tokens != b.tokens) return a.tokens < b.tokens;
    return a.done && !b.done;
  };
  std::vector<Item> items{
      Item{{}, 0.0, false, std::make_shared<Session>(open_session(w, prefix))}};
  for (int step = 0; step < max_new; ++step) {
    bool any_live = false;
    // Candidate = (source item, continuation token or eos), scored lazily;
    // sessions fork only for the survivors.
    struct Cand {
      std::vector<int> tokens;
      double logp;
      bool done;
      size_t parent;
      int token;
    };
    std::vector<Cand> cands;
    std::vector<Eigen::RowVectorXd> lsms(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
      Item& it = items[i];
      if (it.done) {
        cands.push_back({it.tokens, it.logp, true, i, -1});
        continue;
      }
      any_live = true;
      lsms[i] = stable_log_softmax(it.session->last_logits());
      for (Eigen::Index tok = 0; tok < lsms[i].cols(); ++tok) {
        Cand c;
        c.tokens = it.tokens;
        c.logp = it.logp + lsms[i](tok);
        c.parent = i;
        if (int(tok) == eos_id) {
          c.done = true;
          c.token = -1;
        } else {
          c.tokens.push_back(int(tok));
          c.done = false;
          c.token = int(tok);
        }
        cands.push_back(std::move(c));
      }
    }
    if (!any_live) break;
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.tokens != b.tokens) return a.tokens < b.tokens;
      return a.done && !b.done;
    });
    if (int(cands.size()) > mode.beam_width) cands.resize(size_t(mode.beam_width));
    std::vector<Item> next;
    next.reserve(cands.size());
    for (Cand& c : cands) {
      Item it;
      it.tokens = std::move(c.tokens);
      it.logp = c.logp;
      it.done = c.done;
      if (c.done) {
        it.session = nullptr;  // finished items never extend
      } else {
        it.session = std::make_shared<Session>(*items[c.parent].session);
        it.session->append(c.token);
      }
      next.push_back(std::move(it));
    }
    items = std::move(next);
  }
  Item* best = nullptr;
  for (Item& it : items) {
    if (!best || better(it, *best)) best = &it;
  }
  res.tokens = best->tokens;
  res.logp = best->logp;
  res.ended_eos = best->done;
  return res;
}

}  // namespace avger
