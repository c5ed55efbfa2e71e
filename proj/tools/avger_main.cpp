#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "avger/config.hpp"
#include "avger/harness.hpp"
#include "avger/model.hpp"
#include "avger/training.hpp"

namespace fs = std::filesystem;
using namespace avger;

namespace {

Config load_config_or_default(const std::string& path, bool seed_set, uint64_t seed) {
  Config cfg = path.empty() ? Config{} : Config::load(path);
  if (seed_set) cfg.seed = seed;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<ManifestEntry> split_entries(const fs::path& corpus, const std::string& split) {
  auto entries = load_manifest(corpus / "manifest.jsonl");
  std::vector<ManifestEntry> out;
  for (auto& e : entries)
    if (e.split == split) out.push_back(std::move(e));
  if (out.empty()) throw std::runtime_error("split '" + split + "' is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AVGER: generative error correction for audio-visual speech recognition"};
  app.require_subcommand(1);

  uint64_t seed = 7;
  bool seed_set = false;
  app.add_option("--seed", seed, "global seed (overrides config)")
      ->each([&](const std::string&) { seed_set = true; });

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic AV corpus");
  int gen_size = 2000;
  std::string gen_out, gen_config;
  gen->add_option("--size", gen_size, "number of samples (clean + noisy twins)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--config", gen_config, "config file (corpus section)");

  // train
  auto* train = app.add_subcommand("train", "train the corrector on a corpus");
  std::string train_config, train_corpus, train_out;
  train->add_option("--config", train_config, "config file");
  train->add_option("--corpus", train_corpus, "corpus directory")->required();
  train->add_option("--out", train_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_corpus, eval_split = "test", eval_hyps, eval_report;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--corpus", eval_corpus, "corpus directory")->required();
  eval->add_option("--split", eval_split, "split to evaluate (train|val|test)");
  eval->add_option("--hyps", eval_hyps, "external hypothesis file (replaces the stub)");
  eval->add_option("--report", eval_report, "report path (text; .csv written alongside)")
      ->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run the 8-row ablation grid");
  std::string ab_config, ab_corpus, ab_specs = "all", ab_out;
  ablate->add_option("--config", ab_config, "config file");
  ablate->add_option("--corpus", ab_corpus, "corpus directory (generated if omitted)");
  ablate->add_option("--specs", ab_specs, "comma-separated spec ids (1..7) or 'all'");
  ablate->add_option("--out", ab_out, "output directory")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "hyper-parameter sweep (Table-3 axes)");
  std::string sw_config, sw_corpus, sw_axis, sw_out;
  sweep->add_option("--config", sw_config, "config file");
  sweep->add_option("--corpus", sw_corpus, "corpus directory (generated if omitted)");
  sweep->add_option("--axis", sw_axis, "nbest | qtokens")->required();
  sweep->add_option("--out", sw_out, "output directory")->required();

  // config
  auto* conf = app.add_subcommand("config", "emit the default config");
  std::string conf_out;
  conf->add_option("--out", conf_out, "write to file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      Config cfg = load_config_or_default(gen_config, seed_set, seed);
      auto entries = generate_corpus(cfg.seed, gen_size, cfg.corpus, gen_out);
      save_corpus_config(gen_out, cfg.corpus);
      std::cout << "wrote " << entries.size() << " samples to " << gen_out << "\n";
    } else if (*train) {
      Config cfg = load_config_or_default(train_config, seed_set, seed);
      TrainLogs logs;
      auto model = run_training(cfg, train_corpus, train_out, &logs);
      std::cout << "pretrain steps: " << logs.pretrain.size()
                << ", finetune steps: " << logs.finetune.size() << "\n";
      std::cout << "checkpoint: " << (fs::path(train_out) / "checkpoint") << "\n";
    } else if (*eval) {
      auto model = load_checkpoint(eval_ckpt);
      if (seed_set) model->cfg.seed = seed;
      auto entries = split_entries(eval_corpus, eval_split);
      std::map<std::string, NBestList> hyps;
      EvalReport report;
      if (!eval_hyps.empty()) {
        hyps = import_hypotheses(eval_hyps);
        report = evaluate(*model, eval_corpus, entries, &hyps);
      } else {
        report = evaluate(*model, eval_corpus, entries, nullptr);
      }
      write_text(eval_report, report.to_text());
      write_text(fs::path(eval_report).replace_extension(".csv"), report.to_csv());
      std::string cases = emit_case_studies(report, model->cfg.harness.case_studies);
      if (!cases.empty())
        write_text(fs::path(eval_report).replace_extension(".cases.txt"), cases);
      std::cout << report.to_text();
    } else if (*ablate) {
      Config cfg = load_config_or_default(ab_config, seed_set, seed);
      fs::path corpus = ab_corpus;
      if (ab_corpus.empty()) {
        corpus = fs::path(ab_out) / "corpus";
        generate_corpus(cfg.seed, cfg.harness.ablation_corpus_size, cfg.corpus, corpus);
        save_corpus_config(corpus, cfg.corpus);
      }
      std::vector<AblationSpec> specs;
      if (ab_specs == "all") {
        specs = table2_specs();
      } else {
        auto all = table2_specs();
        std::stringstream ss(ab_specs);
        std::string item;
        while (std::getline(ss, item, ',')) {
          int id = std::stoi(item);
          bool found = false;
          for (const auto& s : all)
            if (s.id == id) {
              specs.push_back(s);
              found = true;
            }
          if (!found) throw std::invalid_argument("unknown ablation spec id: " + item);
        }
      }
      AblationReport report = run_ablation(cfg, corpus, specs, ab_out);
      write_text(fs::path(ab_out) / "ablation.txt", report.to_text());
      write_text(fs::path(ab_out) / "ablation.csv", report.to_csv());
      std::cout << report.to_text();
    } else if (*sweep) {
      Config cfg = load_config_or_default(sw_config, seed_set, seed);
      fs::path corpus = sw_corpus;
      if (sw_corpus.empty()) {
        corpus = fs::path(sw_out) / "corpus";
        generate_corpus(cfg.seed, cfg.harness.sweep_corpus_size, cfg.corpus, corpus);
        save_corpus_config(corpus, cfg.corpus);
      }
      SweepReport report = run_sweep(cfg, corpus, sw_axis, sw_out);
      write_text(fs::path(sw_out) / ("sweep_" + sw_axis + ".txt"), report.to_text());
      write_text(fs::path(sw_out) / ("sweep_" + sw_axis + ".csv"), report.to_csv());
      std::cout << report.to_text();
    } else if (*conf) {
      Config cfg;
      if (seed_set) cfg.seed = seed;
      if (conf_out.empty()) {
        std::cout << cfg.to_json_string();
      } else {
        write_text(conf_out, cfg.to_json_string());
      }
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
