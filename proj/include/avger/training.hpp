#pragma once

#include <filesystem>
#include <vector>

#include "avger/model.hpp"

namespace avger {

struct LossBreakdown {
  double cmd{0}, wer{0}, ce{0}, total{0};

  static LossBreakdown make(double c, double w, double e) {
    return LossBreakdown{c, w, e, c + w + e};
  }
  bool finite() const;
};

struct StepLog {
  int step{0};
  double lr{0}, cmd{0}, wer{0}, ce{0}, total{0};
};

/// Raised when a training step produces a non-finite loss; the driver dumps
/// a diagnostic snapshot before propagating.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, int step, std::string sample_id,
                   LossBreakdown loss)
      : std::runtime_error(what), step(step), sample_id(std::move(sample_id)), loss(loss) {}
  int step;
  std::string sample_id;
  LossBreakdown loss;
};

/// Decoupled-weight-decay Adam over an explicit parameter list. Parameters
/// that received no gradient in a step are left untouched.
class AdamW {
 public:
  AdamW(std::vector<nn::Parameter*> params, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step(const nn::GradBuffer& grads, double lr);
  const std::vector<nn::Parameter*>& params() const { return params_; }

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<nn::Mat> m_, v_;
  std::vector<long> t_;
  double wd_, beta1_, beta2_, eps_;
};

/// Linear warmup to a constant rate. warmup_steps = ceil(frac * total).
double lr_at_step(double base_lr, int step, int total_steps, double warmup_frac);

struct TrainLogs {
  std::vector<StepLog> pretrain;
  std::vector<StepLog> finetune;
};

/// Per-sample Multi-Level Consistency Constraint loss on a fresh tape;
/// gradients land in `sink`. Exposed for tests; finetune() drives it.
struct MlcOptions {
  bool l_cmd{true};
  bool l_wer{true};
  int wer_samples{4};
  double mrt_temperature{1.0};
  int mrt_max_new{24};
  uint64_t mrt_seed{0};
  int cmd_order_max{5};
  bool cmd_orders_literal{false};
};
LossBreakdown mlc_sample_loss(Model& model,
                              const std::shared_ptr<const Decoder::Materialized>& weights,
                              const AVSample& sample, const NBestList& nbest,
                              const MlcOptions& opt, nn::GradBuffer& sink);

/// Base-LM construction: text-only prompts (no rep spans), CE only, all
/// decoder parameters trainable. Stands in for the pretrained foundation
/// model that LoRA later adapts.
std::vector<StepLog> pretrain_base(Model& model,
                                   const std::vector<AVSample>& train_samples,
                                   const std::vector<NBestList>& train_nbest);

/// Fine-tuning per the MLC objective: trains LoRA adapters plus all encoder
/// parameters; base decoder weights stay frozen. Emits a checkpoint per
/// epoch under out_dir when provided.
std::vector<StepLog> finetune(Model& model, const std::vector<AVSample>& train_samples,
                              const std::vector<NBestList>& train_nbest,
                              const std::filesystem::path* out_dir);

/// Full pipeline: tokenizer training, model build, base pretrain, LoRA
/// attach, MLC finetune, final checkpoint at out_dir/checkpoint.
std::unique_ptr<Model> run_training(Config cfg, const std::filesystem::path& corpus_dir,
                                    const std::filesystem::path& out_dir,
                                    TrainLogs* logs = nullptr);

void save_train_log(const std::filesystem::path& path, const std::vector<StepLog>& log);

}  // namespace avger
