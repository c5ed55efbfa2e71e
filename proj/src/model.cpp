#include "avger/model.hpp"

#include <fstream>

#include "avger/blob.hpp"
#include "avger/common.hpp"

namespace avger {

namespace fs = std::filesystem;
using nn::Mat;

std::unique_ptr<Model> Model::build(Config cfg, BpeTokenizer tok) {
  cfg.decoder.vocab = tok.vocab_size();
  cfg.validate();
  auto m = std::make_unique<Model>();
  m->cfg = cfg;
  m->tokenizer = std::move(tok);
  m->encoder = std::make_unique<SyncEncoder>(cfg.encoder, cfg.corpus, m->params,
                                             derive_seed(cfg.seed, "init/encoder"));
  m->decoder = std::make_unique<Decoder>(cfg.decoder, m->params,
                                         derive_seed(cfg.seed, "init/decoder"));
  return m;
}

PromptEmbedding Model::layout_for(const NBestList& nbest, int K) const {
  int span = K * cfg.encoder.n_q;
  int n_speech = cfg.ablation.speech ? span : 0;
  int n_video = cfg.ablation.lip ? span : 0;
  std::string text = build_prompt_text(nbest, cfg.prompt);
  return assemble_layout(text, n_speech, n_video, tokenizer, cfg.prompt.max_seq_len);
}

nn::Mat Model::inference_prefix(const AVSample& sample, const NBestList& nbest) const {
  nn::Tape tape(false);
  auto reps = encoder->encode_sync(tape, sample, cfg.ablation);
  PromptEmbedding pe = layout_for(nbest, reps.K);
  const Mat* rs = reps.speech ? &reps.speech->val() : nullptr;
  const Mat* rl = reps.lip ? &reps.lip->val() : nullptr;
  return materialize_prefix(pe, decoder->embedding_table().value, rs, rl);
}

Transcript Model::correct(const std::shared_ptr<const Decoder::Materialized>& w,
                          const AVSample& sample, const NBestList& nbest,
                          const GenMode& mode, int max_new) const {
  Mat prefix = inference_prefix(sample, nbest);
  GenerationResult gen = decoder->generate(w, prefix, mode, max_new, tokenizer.eos_id());
  return Transcript::from_text(tokenizer.decode(gen.tokens));
}

uint64_t nbest_seed(uint64_t global_seed, const std::string& sample_id) {
  return derive_seed(global_seed, "nbest/" + sample_id);
}

void save_checkpoint(const fs::path& dir, const Model& model) {
  fs::create_directories(dir);
  model.cfg.save(dir / "config.json");
  model.tokenizer.save(dir / "tokenizer.txt");
  std::vector<std::pair<std::string, Blob>> blobs;
  for (const nn::Parameter* p : model.params.ordered()) {
    Blob b;
    b.dtype = Dtype::F64;
    b.dims = {uint32_t(p->value.rows()), uint32_t(p->value.cols())};
    b.data.resize(size_t(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j)
        b.data[size_t(i) * size_t(p->value.cols()) + size_t(j)] = p->value(i, j);
    blobs.emplace_back(p->name, std::move(b));
  }
  std::ofstream os(dir / "params.bin", std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write params.bin");
  write_named_blobs(os, blobs);
}

std::unique_ptr<Model> load_checkpoint(const fs::path& dir) {
  Config cfg = Config::load(dir / "config.json");
  BpeTokenizer tok = BpeTokenizer::load(dir / "tokenizer.txt");
  auto model = Model::build(cfg, std::move(tok));

  std::ifstream is(dir / "params.bin", std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open params.bin");
  auto blobs = read_named_blobs(is);

  bool has_lora = false;
  for (const auto& [name, blob] : blobs)
    if (name.rfind("lora/", 0) == 0) has_lora = true;
  if (has_lora)
    model->decoder->attach_lora(cfg.lora, model->params, derive_seed(cfg.seed, "init/lora"));

  size_t assigned = 0;
  for (const auto& [name, blob] : blobs) {
    nn::Parameter* p = model->params.find(name);
    if (!p) throw std::runtime_error("checkpoint: unknown parameter " + name);
    if (blob.dims.size() != 2 || Eigen::Index(blob.dims[0]) != p->value.rows() ||
        Eigen::Index(blob.dims[1]) != p->value.cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j)
        p->value(i, j) = blob.data[size_t(i) * size_t(p->value.cols()) + size_t(j)];
    ++assigned;
  }
  if (assigned != model->params.count())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  return model;
}

}  // namespace avger
