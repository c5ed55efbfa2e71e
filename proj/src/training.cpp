#include "avger/training.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <thread>

#include "avger/common.hpp"
#include "avger/parallel.hpp"

namespace avger {

namespace fs = std::filesystem;
using nn::GradBuffer;
using nn::Mat;
using nn::Tape;
using nn::Value;

bool LossBreakdown::finite() const {
  return std::isfinite(cmd) && std::isfinite(wer) && std::isfinite(ce) && std::isfinite(total);
}

AdamW::AdamW(std::vector<nn::Parameter*> params, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (nn::Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    t_.push_back(0);
  }
}

void AdamW::step(const GradBuffer& grads, double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter* p = params_[i];
    const Mat* g = grads.get(*p);
    if (!g) continue;
    long t = ++t_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * (*g);
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g->cwiseProduct(*g);
    double bc1 = 1.0 - std::pow(beta1_, double(t));
    double bc2 = 1.0 - std::pow(beta2_, double(t));
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    p->value -=
        lr * (mhat.array() / (vhat.array().sqrt() + eps_) + wd_ * p->value.array()).matrix();
  }
}

double lr_at_step(double base_lr, int step, int total_steps, double warmup_frac) {
  int warmup = int(std::ceil(warmup_frac * double(total_steps)));
  if (warmup <= 0 || step >= warmup) return base_lr;
  return base_lr * double(step + 1) / double(warmup);
}

namespace {

std::vector<int> targets_with_eos(const BpeTokenizer& tok, const Transcript& truth) {
  std::vector<int> ids = tok.encode(truth.text());
  ids.push_back(tok.eos_id());
  return ids;
}

struct SampleResult {
  GradBuffer grads;
  LossBreakdown loss;
  std::string id;

  explicit SampleResult(size_t n_params) : grads(n_params) {}
};

/// Text-only CE loss for the base-LM stage.
LossBreakdown pretrain_sample_loss(Model& model, const AVSample& sample,
                                   const NBestList& nbest, GradBuffer& sink) {
  Tape tape(true);
  std::string text = build_prompt_text(nbest, model.cfg.prompt);
  PromptEmbedding pe =
      assemble_layout(text, 0, 0, model.tokenizer, model.cfg.prompt.max_seq_len);
  std::vector<int> targets = targets_with_eos(model.tokenizer, sample.transcript);
  std::vector<int> suffix(targets.begin(), targets.end() - 1);
  append_targets(pe, suffix, model.cfg.prompt.max_seq_len);
  Value prefix = materialize_prefix(tape, pe, model.decoder->embedding_table(),
                                    std::nullopt, std::nullopt);
  auto branches = model.decoder->forward_branches(tape, prefix, {suffix});
  Value ce = ce_loss(tape, branches[0], targets);
  LossBreakdown out = LossBreakdown::make(0.0, 0.0, ce.val()(0, 0));
  if (!out.finite()) throw TrainingDiverged("non-finite pretrain loss", -1, sample.id, out);
  tape.backward(ce, sink);
  return out;
}

int resolve_threads(int cfg_threads) {
  if (cfg_threads > 0) return cfg_threads;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

}  // namespace

LossBreakdown mlc_sample_loss(Model& model,
                              const std::shared_ptr<const Decoder::Materialized>& weights,
                              const AVSample& sample, const NBestList& nbest,
                              const MlcOptions& opt, GradBuffer& sink) {
  const AblationFlags& flags = model.cfg.ablation;
  Tape tape(true);

  SyncEncoder::Reps reps;
  bool any_modality = flags.speech || flags.lip;
  if (any_modality) {
    reps = model.encoder->encode_sync(tape, sample, flags);
  } else {
    reps.K = model.encoder->segment_count(
        sample.audio.samples.empty() ? sample.video.duration() : sample.audio.duration(),
        flags.segment);
  }

  PromptEmbedding pe = model.layout_for(nbest, reps.K);
  std::vector<int> targets = targets_with_eos(model.tokenizer, sample.transcript);
  std::vector<int> target_suffix(targets.begin(), targets.end() - 1);
  append_targets(pe, target_suffix, model.cfg.prompt.max_seq_len);
  Value prefix =
      materialize_prefix(tape, pe, model.decoder->embedding_table(), reps.speech, reps.lip);

  // Minimum-risk WER term: sample M continuations with the inference path,
  // then score them on the tape so gradients flow through their log-probs.
  std::vector<std::vector<int>> suffixes{target_suffix};
  std::vector<GenerationResult> mrt_samples;
  bool wer_active = flags.l_wer;
  if (wer_active) {
    const Mat* rs = reps.speech ? &reps.speech->val() : nullptr;
    const Mat* rl = reps.lip ? &reps.lip->val() : nullptr;
    Mat plain_prefix =
        materialize_prefix(pe, model.decoder->embedding_table().value, rs, rl);
    bool all_empty = true;
    for (int i = 0; i < opt.wer_samples; ++i) {
      GenerationResult gen = model.decoder->generate(
          weights, plain_prefix,
          GenMode::sample(opt.mrt_temperature, derive_seed(opt.mrt_seed, "mrt", uint64_t(i))),
          opt.mrt_max_new, model.tokenizer.eos_id());
      if (!gen.tokens.empty()) all_empty = false;
      mrt_samples.push_back(std::move(gen));
    }
    if (all_empty) {
      wer_active = false;  // flagged: nothing to score
      mrt_samples.clear();
    } else {
      for (const auto& g : mrt_samples) suffixes.push_back(g.tokens);
    }
  }

  auto branches = model.decoder->forward_branches(tape, prefix, suffixes);
  Value ce = ce_loss(tape, branches[0], targets);
  Value total = ce;

  double cmd_value = 0.0;
  if (flags.l_cmd && any_modality) {
    // Rep_Y*: target tokens through the (frozen) embedding table, constant.
    Mat rep_y(Eigen::Index(target_suffix.size()), model.cfg.decoder.d_llm);
    for (size_t i = 0; i < target_suffix.size(); ++i)
      rep_y.row(Eigen::Index(i)) =
          model.decoder->embedding_table().value.row(target_suffix[i]);
    CmdLoss cl = cmd_loss(tape, reps.speech, reps.lip,
                          target_suffix.empty()
                              ? std::optional<Value>{}
                              : std::optional<Value>{tape.constant(std::move(rep_y))},
                          cmd_orders(opt.cmd_order_max, opt.cmd_orders_literal));
    if (cl.loss) {
      cmd_value = cl.loss->val()(0, 0);
      total = tape.add(total, *cl.loss);
    }
  }

  double wer_value = 0.0;
  if (wer_active) {
    std::vector<Value> logps;
    std::vector<double> wers;
    for (size_t i = 0; i < mrt_samples.size(); ++i) {
      const GenerationResult& g = mrt_samples[i];
      logps.push_back(sequence_logprob(tape, branches[1 + i], g.tokens, g.ended_eos,
                                       model.tokenizer.eos_id()));
      Transcript hyp = Transcript::from_text(model.tokenizer.decode(g.tokens));
      wers.push_back(levenshtein_wer(hyp, sample.transcript));
    }
    Value lw = mrt_weighted_wer(tape, logps, wers, opt.mrt_temperature);
    wer_value = lw.val()(0, 0);
    total = tape.add(total, lw);
  }

  LossBreakdown out = LossBreakdown::make(cmd_value, wer_value, ce.val()(0, 0));
  if (!out.finite()) throw TrainingDiverged("non-finite MLC loss", -1, sample.id, out);
  tape.backward(total, sink);
  return out;
}

namespace {

/// Shared epoch/window/step loop for both stages. on_window_start runs on
/// the main thread before the window's workers (weight snapshots etc.).
std::vector<StepLog> run_stage(
    Model& model, const std::vector<AVSample>& samples, const std::vector<NBestList>& nbest,
    AdamW& opt, double base_lr, int epochs, int batch, double warmup_frac,
    const std::string& stage_tag,
    const std::function<void(int /*step*/)>& on_window_start,
    const std::function<LossBreakdown(int sample_idx, int step, GradBuffer&)>& job,
    const std::function<void(int /*epoch*/)>& on_epoch_end) {
  std::vector<StepLog> log;
  if (samples.empty() || epochs == 0) return log;
  const int n = int(samples.size());
  const int steps_per_epoch = (n + batch - 1) / batch;
  const int total_steps = steps_per_epoch * epochs;
  const int threads = resolve_threads(model.cfg.training.threads);
  const size_t n_params = model.params.count();

  int step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;
    Rng shuffle_rng(derive_seed(model.cfg.seed, stage_tag + "/shuffle", uint64_t(epoch)));
    shuffle_rng.shuffle(order);

    for (int w0 = 0; w0 < n; w0 += batch) {
      int wn = std::min(batch, n - w0);
      GradBuffer window_grads(n_params);
      LossBreakdown window_loss{};
      if (on_window_start) on_window_start(step);
      try {
        parallel_ordered<SampleResult>(
            wn, threads,
            [&](int i) {
              SampleResult r(n_params);
              r.id = samples[size_t(order[size_t(w0 + i)])].id;
              r.loss = job(order[size_t(w0 + i)], step, r.grads);
              return r;
            },
            [&](int, SampleResult& r) {
              window_grads.add_scaled(r.grads, 1.0 / double(wn));
              window_loss.cmd += r.loss.cmd / double(wn);
              window_loss.wer += r.loss.wer / double(wn);
              window_loss.ce += r.loss.ce / double(wn);
            });
      } catch (TrainingDiverged& ex) {
        ex.step = step;
        throw;
      }
      window_loss.total = window_loss.cmd + window_loss.wer + window_loss.ce;
      double lr = lr_at_step(base_lr, step, total_steps, warmup_frac);
      opt.step(window_grads, lr);
      log.push_back(StepLog{step, lr, window_loss.cmd, window_loss.wer, window_loss.ce,
                            window_loss.total});
      ++step;
    }
    if (on_epoch_end) on_epoch_end(epoch);
  }
  return log;
}

}  // namespace

std::vector<StepLog> pretrain_base(Model& model, const std::vector<AVSample>& train_samples,
                                   const std::vector<NBestList>& train_nbest) {
  if (model.decoder->lora_attached())
    throw std::logic_error("pretrain_base must run before attach_lora");
  const TrainConfig& tc = model.cfg.training;
  std::vector<nn::Parameter*> dec_params(model.decoder->base_parameters());
  AdamW opt(dec_params, tc.weight_decay);
  return run_stage(
      model, train_samples, train_nbest, opt, tc.pretrain_lr, tc.pretrain_epochs,
      tc.pretrain_batch, tc.warmup_frac, "pretrain", nullptr,
      [&](int idx, int, GradBuffer& sink) {
        return pretrain_sample_loss(model, train_samples[size_t(idx)],
                                    train_nbest[size_t(idx)], sink);
      },
      nullptr);
}

std::vector<StepLog> finetune(Model& model, const std::vector<AVSample>& train_samples,
                              const std::vector<NBestList>& train_nbest,
                              const fs::path* out_dir) {
  if (!model.decoder->lora_attached())
    throw std::logic_error("finetune requires attached LoRA adapters");
  const TrainConfig& tc = model.cfg.training;

  // Trainable set: LoRA A/B plus every encoder parameter.
  std::vector<nn::Parameter*> trainable;
  for (nn::Parameter* p : model.params.ordered())
    if (p->trainable) trainable.push_back(p);
  AdamW opt(trainable, tc.weight_decay);

  std::shared_ptr<const Decoder::Materialized> step_weights;

  return run_stage(
      model, train_samples, train_nbest, opt, tc.lr, tc.epochs, tc.batch, tc.warmup_frac,
      "finetune",
      [&](int) {
        // Window workers share one snapshot of the effective weights.
        step_weights = model.decoder->materialize();
      },
      [&](int idx, int step, GradBuffer& sink) {
        MlcOptions opt_mlc;
        opt_mlc.l_cmd = model.cfg.ablation.l_cmd;
        opt_mlc.l_wer = model.cfg.ablation.l_wer && step >= tc.wer_warmstart_steps;
        opt_mlc.wer_samples = tc.wer_samples;
        opt_mlc.mrt_temperature = tc.mrt_temperature;
        opt_mlc.mrt_max_new = tc.mrt_max_new;
        opt_mlc.mrt_seed =
            derive_seed(model.cfg.seed, "mrt/" + train_samples[size_t(idx)].id, uint64_t(step));
        opt_mlc.cmd_order_max = tc.cmd_order_max;
        opt_mlc.cmd_orders_literal = tc.cmd_orders_literal;
        return mlc_sample_loss(model, step_weights, train_samples[size_t(idx)],
                               train_nbest[size_t(idx)], opt_mlc, sink);
      },
      [&](int epoch) {
        if (out_dir)
          save_checkpoint(*out_dir / ("checkpoint_epoch" + std::to_string(epoch)), model);
      });
}

std::unique_ptr<Model> run_training(Config cfg, const fs::path& corpus_dir,
                                    const fs::path& out_dir, TrainLogs* logs) {
  cfg.corpus = load_corpus_config(corpus_dir);
  auto entries = load_manifest(corpus_dir / "manifest.jsonl");

  std::vector<const ManifestEntry*> train_entries;
  std::vector<std::string> train_texts;
  for (const auto& e : entries) {
    if (e.split == "train") {
      train_entries.push_back(&e);
      train_texts.push_back(e.transcript);
    }
  }
  if (train_entries.empty()) throw std::invalid_argument("training: empty train split");

  BpeTokenizer tok = BpeTokenizer::train(train_texts, cfg.tokenizer_vocab);
  auto model = Model::build(cfg, std::move(tok));

  ChannelModel channel(cfg.channel, manifest_vocabulary(entries));
  std::vector<AVSample> samples;
  std::vector<NBestList> nbests;
  samples.reserve(train_entries.size());
  for (const ManifestEntry* e : train_entries) {
    samples.push_back(load_sample(corpus_dir, *e, model->cfg.corpus));
    nbests.push_back(channel.nbest_generate(samples.back(), nbest_seed(cfg.seed, e->id)));
  }

  fs::create_directories(out_dir);
  TrainLogs local;
  TrainLogs& lg = logs ? *logs : local;
  try {
    lg.pretrain = pretrain_base(*model, samples, nbests);
    model->decoder->attach_lora(model->cfg.lora, model->params,
                                derive_seed(cfg.seed, "init/lora"));
    lg.finetune = finetune(*model, samples, nbests, &out_dir);
  } catch (const TrainingDiverged& ex) {
    nlohmann::ordered_json snap;
    snap["error"] = ex.what();
    snap["step"] = ex.step;
    snap["sample_id"] = ex.sample_id;
    snap["cmd"] = ex.loss.cmd;
    snap["wer"] = ex.loss.wer;
    snap["ce"] = ex.loss.ce;
    std::ofstream os(out_dir / "diverged.json", std::ios::binary);
    os << snap.dump(2) << "\n";
    throw;
  }

  save_train_log(out_dir / "pretrain_log.jsonl", lg.pretrain);
  save_train_log(out_dir / "train_log.jsonl", lg.finetune);
  save_checkpoint(out_dir / "checkpoint", *model);
  return model;
}

void save_train_log(const fs::path& path, const std::vector<StepLog>& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write train log: " + path.string());
  for (const StepLog& s : log) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["lr"] = s.lr;
    j["cmd"] = s.cmd;
    j["wer"] = s.wer;
    j["ce"] = s.ce;
    j["total"] = s.total;
    os << j.dump() << "\n";
  }
}

}  // namespace avger
