#include "avger/prompt.hpp"

#include <sstream>
#include <stdexcept>

namespace avger {

using nn::Mat;
using nn::Tape;
using nn::Value;

const char* const kHeadingInstruction = "### Instruction";
const char* const kHeadingSpeech = "### Speech";
const char* const kHeadingVideo = "### Video";
const char* const kHeadingCandidates = "### Candidate transcriptions";
const char* const kHeadingBest = "### Best transcription";
const char* const kSpeechPlaceholder = "<|speech|>";
const char* const kVideoPlaceholder = "<|video|>";

std::string build_prompt_text(const NBestList& nbest, const PromptConfig& cfg) {
  if (nbest.hypotheses.empty()) throw std::invalid_argument("prompt: empty N-best list");
  std::ostringstream os;
  os << kHeadingInstruction << "\n" << cfg.instruction << "\n\n";
  os << kHeadingSpeech << "\n" << kSpeechPlaceholder << "\n\n";
  os << kHeadingVideo << "\n" << kVideoPlaceholder << "\n\n";
  os << kHeadingCandidates << "\n";
  int rank = 1;
  for (const auto& [hyp, score] : nbest.hypotheses) {
    os << rank++ << ". " << hyp.text() << "\n";
  }
  os << "\n" << kHeadingBest << "\n";
  return os.str();
}

std::vector<bool> PromptEmbedding::label_mask() const {
  std::vector<bool> mask(size_t(total_length()), false);
  for (size_t i = size_t(length()); i < mask.size(); ++i) mask[i] = true;
  return mask;
}

namespace {

void push_text(PromptEmbedding& pe, const std::vector<int>& ids) {
  for (int id : ids) {
    pe.source.push_back(PromptEmbedding::Source::Text);
    pe.tokens.push_back(id);
  }
}

void push_span(PromptEmbedding& pe, PromptEmbedding::Source src, int n, int& begin_out,
               int& len_out) {
  begin_out = pe.length();
  len_out = n;
  for (int i = 0; i < n; ++i) {
    pe.source.push_back(src);
    pe.tokens.push_back(-1);
  }
}

}  // namespace

PromptEmbedding assemble_layout(const std::string& prompt_text, int n_speech_rows,
                                int n_video_rows, const BpeTokenizer& tok,
                                int max_seq_len) {
  if (n_speech_rows < 0 || n_video_rows < 0)
    throw std::invalid_argument("assemble_layout: negative span");
  size_t sp = prompt_text.find(kSpeechPlaceholder);
  size_t vp = prompt_text.find(kVideoPlaceholder);
  if (sp == std::string::npos || vp == std::string::npos || vp < sp)
    throw std::invalid_argument("assemble_layout: placeholders missing or out of order");
  std::string chunk1 = prompt_text.substr(0, sp);
  std::string chunk2 = prompt_text.substr(sp + std::string(kSpeechPlaceholder).size(),
                                          vp - sp - std::string(kSpeechPlaceholder).size());
  std::string chunk3 = prompt_text.substr(vp + std::string(kVideoPlaceholder).size());

  PromptEmbedding pe;
  push_text(pe, tok.encode(chunk1));
  push_span(pe, PromptEmbedding::Source::Speech, n_speech_rows, pe.speech_begin,
            pe.speech_len);
  push_text(pe, tok.encode(chunk2));
  push_span(pe, PromptEmbedding::Source::Video, n_video_rows, pe.video_begin, pe.video_len);
  push_text(pe, tok.encode(chunk3));

  if (pe.length() > max_seq_len)
    throw std::length_error("assemble_layout: prompt exceeds max_seq_len; refusing to truncate");
  return pe;
}

void append_targets(PromptEmbedding& pe, std::vector<int> target_ids, int max_seq_len) {
  pe.target_tokens = std::move(target_ids);
  if (pe.total_length() + 1 > max_seq_len)  // +1 for the eos prediction step
    throw std::length_error("append_targets: sequence exceeds max_seq_len");
}

Mat materialize_prefix(const PromptEmbedding& pe, const Mat& embed_table,
                       const Mat* rep_speech, const Mat* rep_video) {
  if ((pe.speech_len > 0) != (rep_speech != nullptr && rep_speech->rows() > 0))
    throw std::invalid_argument("materialize_prefix: speech span/rep mismatch");
  if ((pe.video_len > 0) != (rep_video != nullptr && rep_video->rows() > 0))
    throw std::invalid_argument("materialize_prefix: video span/rep mismatch");
  if (rep_speech && rep_speech->rows() > 0 && rep_speech->rows() != pe.speech_len)
    throw std::invalid_argument("materialize_prefix: speech span length mismatch");
  if (rep_video && rep_video->rows() > 0 && rep_video->rows() != pe.video_len)
    throw std::invalid_argument("materialize_prefix: video span length mismatch");

  Mat out(pe.length(), embed_table.cols());
  int srow = 0, vrow = 0;
  for (int i = 0; i < pe.length(); ++i) {
    switch (pe.source[size_t(i)]) {
      case PromptEmbedding::Source::Text:
        out.row(i) = embed_table.row(pe.tokens[size_t(i)]);
        break;
      case PromptEmbedding::Source::Speech:
        out.row(i) = rep_speech->row(srow++);
        break;
      case PromptEmbedding::Source::Video:
        out.row(i) = rep_video->row(vrow++);
        break;
    }
  }
  return out;
}

Value materialize_prefix(Tape& t, const PromptEmbedding& pe, nn::Parameter& embed_table,
                         std::optional<Value> rep_speech, std::optional<Value> rep_video) {
  if (pe.speech_len > 0 && (!rep_speech || rep_speech->rows() != pe.speech_len))
    throw std::invalid_argument("materialize_prefix: speech span length mismatch");
  if (pe.video_len > 0 && (!rep_video || rep_video->rows() != pe.video_len))
    throw std::invalid_argument("materialize_prefix: video span length mismatch");

  Value table = t.param(embed_table);
  std::vector<Value> parts;
  std::vector<int> run;
  auto flush_run = [&]() {
    if (!run.empty()) {
      parts.push_back(t.gather_rows(table, run));
      run.clear();
    }
  };
  for (int i = 0; i < pe.length(); ++i) {
    switch (pe.source[size_t(i)]) {
      case PromptEmbedding::Source::Text:
        run.push_back(pe.tokens[size_t(i)]);
        break;
      case PromptEmbedding::Source::Speech:
        if (i == pe.speech_begin) {
          flush_run();
          parts.push_back(*rep_speech);
        }
        break;
      case PromptEmbedding::Source::Video:
        if (i == pe.video_begin) {
          flush_run();
          parts.push_back(*rep_video);
        }
        break;
    }
  }
  flush_run();
  if (parts.empty()) throw std::invalid_argument("materialize_prefix: empty prompt");
  return parts.size() == 1 ? parts[0] : t.concat_rows(parts);
}

}  // namespace avger
