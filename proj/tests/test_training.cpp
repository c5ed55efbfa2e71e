#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "avger/harness.hpp"
#include "avger/training.hpp"
#include "test_configs.hpp"
#include "test_util.hpp"

using namespace avger;
using namespace avger::test;
using nn::GradBuffer;
using nn::Mat;

TEST_CASE("linear warmup then constant learning rate") {
  // 100 total steps, 10% warmup
  CHECK(lr_at_step(1.0, 0, 100, 0.1) == doctest::Approx(0.1));
  CHECK(lr_at_step(1.0, 4, 100, 0.1) == doctest::Approx(0.5));
  CHECK(lr_at_step(1.0, 9, 100, 0.1) == doctest::Approx(1.0));
  CHECK(lr_at_step(1.0, 50, 100, 0.1) == doctest::Approx(1.0));
  CHECK(lr_at_step(1.0, 0, 100, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("AdamW walks a quadratic toward its minimum and decays weights") {
  nn::ParameterSet ps;
  auto& w = ps.add("w", 2, 2);
  nn::init_normal(w, 1.0, 3);
  Mat target = Mat::Constant(2, 2, 0.7);
  AdamW opt({&w}, 0.0);
  for (int i = 0; i < 400; ++i) {
    GradBuffer gb(1);
    gb.accumulate(w, Mat(2.0 * (w.value - target)));
    opt.step(gb, 1e-2);
  }
  CHECK((w.value - target).cwiseAbs().maxCoeff() < 1e-3);

  // untouched parameters stay bit-identical
  auto& frozen = ps.add("frozen", 2, 2);
  nn::init_normal(frozen, 1.0, 4);
  Mat before = frozen.value;
  AdamW opt2({&w, &frozen}, 0.1);
  GradBuffer gb(2);
  gb.accumulate(w, Mat::Ones(2, 2));
  opt2.step(gb, 1e-2);
  CHECK(std::memcmp(frozen.value.data(), before.data(), sizeof(double) * 4) == 0);
}

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("training is bit-deterministic and logs total == cmd + wer + ce") {
  TempDir corpus_dir("train_det_corpus");
  TempDir out1("train_det_out1"), out2("train_det_out2");
  Config cfg = tiny_config();
  generate_corpus(cfg.seed, 16, cfg.corpus, corpus_dir.path());
  save_corpus_config(corpus_dir.path(), cfg.corpus);

  TrainLogs logs1, logs2;
  auto m1 = run_training(cfg, corpus_dir.path(), out1.path(), &logs1);
  auto m2 = run_training(cfg, corpus_dir.path(), out2.path(), &logs2);

  REQUIRE(logs1.finetune.size() == logs2.finetune.size());
  REQUIRE(!logs1.finetune.empty());
  for (size_t i = 0; i < logs1.finetune.size(); ++i) {
    const StepLog &a = logs1.finetune[i], &b = logs2.finetune[i];
    CHECK(a.total == b.total);
    CHECK(a.cmd == b.cmd);
    CHECK(a.wer == b.wer);
    CHECK(a.ce == b.ce);
    CHECK(a.total == a.cmd + a.wer + a.ce);
    CHECK(a.lr == lr_at_step(cfg.training.lr, a.step, int(logs1.finetune.size()),
                             cfg.training.warmup_frac));
  }
  // checkpoints byte-identical
  CHECK(slurp(out1.path() / "checkpoint/params.bin") ==
        slurp(out2.path() / "checkpoint/params.bin"));

  // parameters in memory match too
  for (size_t i = 0; i < m1->params.count(); ++i) {
    const nn::Parameter* p1 = m1->params.ordered()[i];
    const nn::Parameter* p2 = m2->params.ordered()[i];
    CHECK(std::memcmp(p1->value.data(), p2->value.data(),
                      sizeof(double) * size_t(p1->value.size())) == 0);
  }
}

TEST_CASE("thread count does not change the result") {
  TempDir corpus_dir("train_thr_corpus");
  TempDir out1("train_thr1"), out2("train_thr2");
  Config cfg = tiny_config();
  cfg.training.pretrain_epochs = 1;
  cfg.training.epochs = 1;
  generate_corpus(cfg.seed, 12, cfg.corpus, corpus_dir.path());
  save_corpus_config(corpus_dir.path(), cfg.corpus);

  Config c1 = cfg;
  c1.training.threads = 1;
  Config c2 = cfg;
  c2.training.threads = 2;
  run_training(c1, corpus_dir.path(), out1.path(), nullptr);
  run_training(c2, corpus_dir.path(), out2.path(), nullptr);
  CHECK(slurp(out1.path() / "checkpoint/params.bin") ==
        slurp(out2.path() / "checkpoint/params.bin"));
}

TEST_CASE("disabled loss terms log exactly zero and change nothing else") {
  TempDir corpus_dir("train_abl_corpus");
  Config cfg = tiny_config();
  generate_corpus(cfg.seed, 8, cfg.corpus, corpus_dir.path());
  save_corpus_config(corpus_dir.path(), cfg.corpus);

  {
    TempDir out("train_abl_wer");
    Config c = cfg;
    c.ablation.l_wer = false;
    TrainLogs logs;
    run_training(c, corpus_dir.path(), out.path(), &logs);
    for (const auto& s : logs.finetune) {
      CHECK(s.wer == 0.0);
      CHECK(s.cmd != 0.0);
      CHECK(s.total == s.cmd + s.ce);
    }
  }
  {
    TempDir out("train_abl_cmd");
    Config c = cfg;
    c.ablation.l_cmd = false;
    TrainLogs logs;
    run_training(c, corpus_dir.path(), out.path(), &logs);
    for (const auto& s : logs.finetune) CHECK(s.cmd == 0.0);
  }
}

TEST_CASE("single-sample overfit drives CE below 0.05 nats per token") {
  TempDir corpus_dir("train_overfit_corpus");
  TempDir out("train_overfit_out");
  Config cfg = tiny_config();
  cfg.training.pretrain_epochs = 150;
  cfg.training.pretrain_batch = 1;
  cfg.training.epochs = 200;
  cfg.training.batch = 1;
  cfg.training.lr = 1e-3;  // overfit probe, not the desk-scale default
  cfg.training.wer_samples = 1;
  generate_corpus(cfg.seed, 1, cfg.corpus, corpus_dir.path());
  save_corpus_config(corpus_dir.path(), cfg.corpus);

  TrainLogs logs;
  run_training(cfg, corpus_dir.path(), out.path(), &logs);
  REQUIRE(!logs.finetune.empty());
  CHECK(logs.finetune.back().ce < 0.05);
}

TEST_CASE("base decoder is frozen during finetune, trainable set is LoRA+encoder") {
  TempDir corpus_dir("train_frozen_corpus");
  TempDir out("train_frozen_out");
  Config cfg = tiny_config();
  generate_corpus(cfg.seed, 8, cfg.corpus, corpus_dir.path());
  save_corpus_config(corpus_dir.path(), cfg.corpus);
  auto model = run_training(cfg, corpus_dir.path(), out.path(), nullptr);
  for (const nn::Parameter* p : model->decoder->base_parameters())
    CHECK(!p->trainable);
  for (const nn::Parameter* p : model->params.ordered()) {
    bool is_lora = p->name.rfind("lora/", 0) == 0;
    bool is_encoder = p->name.rfind("encoder/", 0) == 0;
    CHECK(p->trainable == (is_lora || is_encoder));
  }
}

TEST_CASE("checkpoints reload to an identical model") {
  TempDir corpus_dir("ckpt_corpus");
  TempDir out("ckpt_out");
  Config cfg = tiny_config();
  generate_corpus(cfg.seed, 8, cfg.corpus, corpus_dir.path());
  save_corpus_config(corpus_dir.path(), cfg.corpus);
  auto model = run_training(cfg, corpus_dir.path(), out.path(), nullptr);
  auto reloaded = load_checkpoint(out.path() / "checkpoint");
  REQUIRE(reloaded->params.count() == model->params.count());
  for (size_t i = 0; i < model->params.count(); ++i) {
    const nn::Parameter* a = model->params.ordered()[i];
    const nn::Parameter* b = reloaded->params.ordered()[i];
    REQUIRE(a->name == b->name);
    CHECK(std::memcmp(a->value.data(), b->value.data(),
                      sizeof(double) * size_t(a->value.size())) == 0);
  }
}
