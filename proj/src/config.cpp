#include "avger/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "avger/common.hpp"

namespace avger {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (lr <= 0 || pretrain_lr <= 0) throw std::invalid_argument("training: lr must be > 0");
  if (warmup_frac < 0 || warmup_frac >= 1)
    throw std::invalid_argument("training: warmup_frac in [0,1)");
  if (epochs < 0 || pretrain_epochs < 0) throw std::invalid_argument("training: epochs >= 0");
  if (batch < 1 || pretrain_batch < 1) throw std::invalid_argument("training: batch >= 1");
  if (weight_decay < 0) throw std::invalid_argument("training: weight_decay >= 0");
  if (wer_samples < 1) throw std::invalid_argument("training: wer_samples >= 1");
  if (mrt_temperature <= 0) throw std::invalid_argument("training: mrt_temperature > 0");
  if (mrt_max_new < 1 || eval_max_new < 1) throw std::invalid_argument("training: max_new >= 1");
  if (wer_warmstart_steps < 0) throw std::invalid_argument("training: warmstart >= 0");
  if (cmd_order_max < 2) throw std::invalid_argument("training: cmd_order_max >= 2");
  if (threads < 0) throw std::invalid_argument("training: threads >= 0");
}

void HarnessConfig::validate() const {
  if (case_studies < 0) throw std::invalid_argument("harness: case_studies >= 0");
  if (eval_split != "train" && eval_split != "val" && eval_split != "test")
    throw std::invalid_argument("harness: unknown eval split");
  if (ablation_corpus_size < 10 || sweep_corpus_size < 10)
    throw std::invalid_argument("harness: corpus sizes too small");
}

void Config::validate() const {
  corpus.validate();
  channel.validate();
  encoder.validate(corpus);
  if (tokenizer_vocab < BpeTokenizer::kBaseVocab)
    throw std::invalid_argument("config: tokenizer_vocab below base vocabulary");
  decoder.validate();
  lora.validate(decoder.d_llm);
  if (encoder.d_llm != decoder.d_llm)
    throw std::invalid_argument("config: encoder d_llm must match decoder d_llm");
  if (prompt.max_seq_len != decoder.max_seq_len)
    throw std::invalid_argument("config: prompt/decoder max_seq_len mismatch");
  training.validate();
  harness.validate();
}

namespace {

ordered_json corpus_to_json(const CorpusConfig& c) {
  ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["sample_rate"] = c.sample_rate;
  j["video_fps"] = c.video_fps;
  j["roi"] = c.roi;
  j["min_words"] = c.min_words;
  j["max_words"] = c.max_words;
  j["word_duration"] = c.word_duration;
  j["snr_levels"] = c.snr_levels;
  j["train_frac"] = c.train_frac;
  j["val_frac"] = c.val_frac;
  j["max_duration"] = c.max_duration;
  return j;
}

CorpusConfig corpus_from_json(const ordered_json& j) {
  CorpusConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.video_fps = j.value("video_fps", c.video_fps);
  c.roi = j.value("roi", c.roi);
  c.min_words = j.value("min_words", c.min_words);
  c.max_words = j.value("max_words", c.max_words);
  c.word_duration = j.value("word_duration", c.word_duration);
  if (j.contains("snr_levels")) c.snr_levels = j["snr_levels"].get<std::vector<double>>();
  c.train_frac = j.value("train_frac", c.train_frac);
  c.val_frac = j.value("val_frac", c.val_frac);
  c.max_duration = j.value("max_duration", c.max_duration);
  return c;
}

ordered_json channel_to_json(const ChannelConfig& c) {
  ordered_json j;
  j["clean_error_rate"] = c.clean_error_rate;
  ordered_json rates = ordered_json::object();
  for (const auto& [snr, rate] : c.snr_error_rates) {
    std::ostringstream key;
    key << snr;
    rates[key.str()] = rate;
  }
  j["snr_error_rates"] = rates;
  j["sub_frac"] = c.sub_frac;
  j["del_frac"] = c.del_frac;
  j["ins_frac"] = c.ins_frac;
  j["inclusion_rate"] = c.inclusion_rate;
  j["uncertainty_scale"] = c.uncertainty_scale;
  j["confusions_per_word"] = c.confusions_per_word;
  j["nbest"] = c.nbest;
  j["beam"] = c.beam;
  return j;
}

ChannelConfig channel_from_json(const ordered_json& j) {
  ChannelConfig c;
  c.clean_error_rate = j.value("clean_error_rate", c.clean_error_rate);
  if (j.contains("snr_error_rates")) {
    c.snr_error_rates.clear();
    for (const auto& [key, rate] : j["snr_error_rates"].items())
      c.snr_error_rates[std::stod(key)] = rate.get<double>();
  }
  c.sub_frac = j.value("sub_frac", c.sub_frac);
  c.del_frac = j.value("del_frac", c.del_frac);
  c.ins_frac = j.value("ins_frac", c.ins_frac);
  c.inclusion_rate = j.value("inclusion_rate", c.inclusion_rate);
  c.uncertainty_scale = j.value("uncertainty_scale", c.uncertainty_scale);
  c.confusions_per_word = j.value("confusions_per_word", c.confusions_per_word);
  c.nbest = j.value("nbest", c.nbest);
  c.beam = j.value("beam", c.beam);
  return c;
}

ordered_json encoder_to_json(const EncoderConfig& c) {
  ordered_json j;
  j["d"] = c.d;
  j["heads"] = c.heads;
  j["qformer_blocks"] = c.qformer_blocks;
  j["n_q"] = c.n_q;
  j["tau"] = c.tau;
  j["audio_fps_out"] = c.audio_fps_out;
  j["video_fps_out"] = c.video_fps_out;
  j["pos_table_len"] = c.pos_table_len;
  j["d_llm"] = c.d_llm;
  return j;
}

EncoderConfig encoder_from_json(const ordered_json& j) {
  EncoderConfig c;
  c.d = j.value("d", c.d);
  c.heads = j.value("heads", c.heads);
  c.qformer_blocks = j.value("qformer_blocks", c.qformer_blocks);
  c.n_q = j.value("n_q", c.n_q);
  c.tau = j.value("tau", c.tau);
  c.audio_fps_out = j.value("audio_fps_out", c.audio_fps_out);
  c.video_fps_out = j.value("video_fps_out", c.video_fps_out);
  c.pos_table_len = j.value("pos_table_len", c.pos_table_len);
  c.d_llm = j.value("d_llm", c.d_llm);
  return c;
}

ordered_json decoder_to_json(const DecoderConfig& c) {
  ordered_json j;
  j["layers"] = c.layers;
  j["d_llm"] = c.d_llm;
  j["heads"] = c.heads;
  j["ffn_multiple"] = c.ffn_multiple;
  j["vocab"] = c.vocab;
  j["max_seq_len"] = c.max_seq_len;
  return j;
}

DecoderConfig decoder_from_json(const ordered_json& j) {
  DecoderConfig c;
  c.layers = j.value("layers", c.layers);
  c.d_llm = j.value("d_llm", c.d_llm);
  c.heads = j.value("heads", c.heads);
  c.ffn_multiple = j.value("ffn_multiple", c.ffn_multiple);
  c.vocab = j.value("vocab", c.vocab);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  return c;
}

ordered_json training_to_json(const TrainConfig& c) {
  ordered_json j;
  j["lr"] = c.lr;
  j["warmup_frac"] = c.warmup_frac;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["weight_decay"] = c.weight_decay;
  j["wer_samples"] = c.wer_samples;
  j["mrt_temperature"] = c.mrt_temperature;
  j["mrt_max_new"] = c.mrt_max_new;
  j["wer_warmstart_steps"] = c.wer_warmstart_steps;
  j["cmd_order_max"] = c.cmd_order_max;
  j["cmd_orders_literal"] = c.cmd_orders_literal;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["pretrain_lr"] = c.pretrain_lr;
  j["pretrain_batch"] = c.pretrain_batch;
  j["threads"] = c.threads;
  j["eval_max_new"] = c.eval_max_new;
  return j;
}

TrainConfig training_from_json(const ordered_json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.wer_samples = j.value("wer_samples", c.wer_samples);
  c.mrt_temperature = j.value("mrt_temperature", c.mrt_temperature);
  c.mrt_max_new = j.value("mrt_max_new", c.mrt_max_new);
  c.wer_warmstart_steps = j.value("wer_warmstart_steps", c.wer_warmstart_steps);
  c.cmd_order_max = j.value("cmd_order_max", c.cmd_order_max);
  c.cmd_orders_literal = j.value("cmd_orders_literal", c.cmd_orders_literal);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
  c.pretrain_batch = j.value("pretrain_batch", c.pretrain_batch);
  c.threads = j.value("threads", c.threads);
  c.eval_max_new = j.value("eval_max_new", c.eval_max_new);
  return c;
}

}  // namespace

std::string Config::to_json_string() const {
  ordered_json j;
  j["seed"] = seed;
  j["corpus"] = corpus_to_json(corpus);
  j["channel"] = channel_to_json(channel);
  j["encoder"] = encoder_to_json(encoder);
  j["tokenizer"] = ordered_json{{"vocab_size", tokenizer_vocab}};
  j["decoder"] = decoder_to_json(decoder);
  j["lora"] = ordered_json{{"rank", lora.rank}, {"alpha", lora.alpha}};
  j["prompt"] =
      ordered_json{{"instruction", prompt.instruction}, {"max_seq_len", prompt.max_seq_len}};
  j["training"] = training_to_json(training);
  j["ablation"] = ordered_json{{"segment", ablation.segment},
                               {"speech", ablation.speech},
                               {"lip", ablation.lip},
                               {"l_cmd", ablation.l_cmd},
                               {"l_wer", ablation.l_wer}};
  j["harness"] = ordered_json{{"case_studies", harness.case_studies},
                              {"werr_round_half_even", harness.werr_round_half_even},
                              {"eval_split", harness.eval_split},
                              {"ablation_corpus_size", harness.ablation_corpus_size},
                              {"sweep_corpus_size", harness.sweep_corpus_size}};
  return j.dump(2) + "\n";
}

Config Config::from_json_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& ex) {
    throw ParseError(std::string("config: invalid json: ") + ex.what());
  }
  Config c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("corpus")) c.corpus = corpus_from_json(j["corpus"]);
  if (j.contains("channel")) c.channel = channel_from_json(j["channel"]);
  if (j.contains("encoder")) c.encoder = encoder_from_json(j["encoder"]);
  if (j.contains("tokenizer"))
    c.tokenizer_vocab = j["tokenizer"].value("vocab_size", c.tokenizer_vocab);
  if (j.contains("decoder")) c.decoder = decoder_from_json(j["decoder"]);
  if (j.contains("lora")) {
    c.lora.rank = j["lora"].value("rank", c.lora.rank);
    c.lora.alpha = j["lora"].value("alpha", c.lora.alpha);
  }
  if (j.contains("prompt")) {
    c.prompt.instruction = j["prompt"].value("instruction", c.prompt.instruction);
    c.prompt.max_seq_len = j["prompt"].value("max_seq_len", c.prompt.max_seq_len);
  }
  if (j.contains("training")) c.training = training_from_json(j["training"]);
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    c.ablation.segment = a.value("segment", true);
    c.ablation.speech = a.value("speech", true);
    c.ablation.lip = a.value("lip", true);
    c.ablation.l_cmd = a.value("l_cmd", true);
    c.ablation.l_wer = a.value("l_wer", true);
  }
  if (j.contains("harness")) {
    const auto& h = j["harness"];
    c.harness.case_studies = h.value("case_studies", c.harness.case_studies);
    c.harness.werr_round_half_even =
        h.value("werr_round_half_even", c.harness.werr_round_half_even);
    c.harness.eval_split = h.value("eval_split", c.harness.eval_split);
    c.harness.ablation_corpus_size =
        h.value("ablation_corpus_size", c.harness.ablation_corpus_size);
    c.harness.sweep_corpus_size = h.value("sweep_corpus_size", c.harness.sweep_corpus_size);
  }
  return c;
}

void Config::save(const fs::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("config: cannot write " + path.string());
  os << to_json_string();
}

Config Config::load(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_json_string(ss.str());
}

void save_corpus_config(const fs::path& corpus_dir, const CorpusConfig& cfg) {
  std::ofstream os(corpus_dir / "corpus_config.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write corpus config");
  os << corpus_to_json(cfg).dump(2) << "\n";
}

CorpusConfig load_corpus_config(const fs::path& corpus_dir) {
  std::ifstream is(corpus_dir / "corpus_config.json", std::ios::binary);
  if (!is) return CorpusConfig{};  // defaults
  std::ostringstream ss;
  ss << is.rdbuf();
  return corpus_from_json(ordered_json::parse(ss.str()));
}

}  // namespace avger
