#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "memorag/memory/memory.hpp"
#include "memorag/model/inference.hpp"
#include "memorag/retrieval/bm25.hpp"
#include "memorag/text/prompts.hpp"
#include "memorag/text/tokenizer.hpp"

namespace memorag::pipeline {

using model::Parameters;
using text::TokenId;
using text::Vocabulary;

enum class Mode { memorag, standard_rag, full_context };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::memorag: return "memorag";
    case Mode::standard_rag: return "standard_rag";
    case Mode::full_context: return "full_context";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "memorag") return Mode::memorag;
  if (s == "standard_rag" || s == "rag") return Mode::standard_rag;
  if (s == "full_context" || s == "full") return Mode::full_context;
  throw InputError("unknown mode '" + s + "' (expected memorag, standard_rag or full)");
}

struct PipelineConfig {
  std::size_t hits = 3;
  std::size_t chunk_max = 512;
  std::size_t beta = 4;
  std::size_t clue_max_tokens = 32;
  std::size_t answer_max_tokens = 16;
  std::string clue_prefix;    // auxiliary text placed before the clue prompt
  std::string answer_prefix;  // auxiliary text placed before the answer prompt
  bool include_original_query = true;
};

struct Clues {
  std::string query;
  std::vector<std::string> clue_strings;
  std::string raw;
};

struct Timings {
  double memory_ms = 0.0;  // formation, charged to the first query of a context
  double index_ms = 0.0;
  double clue_ms = 0.0;
  double retrieval_ms = 0.0;
  double answer_ms = 0.0;
};

struct TaskResult {
  std::string query;
  Mode mode = Mode::memorag;
  std::optional<Clues> clues;  // memorag mode only
  retrieval::EvidenceSet evidence;
  std::string answer;
  bool low_confidence = false;  // answered without evidence
  bool truncated = false;       // full-context input cut to fit max_seq
  Timings timings;
};

/// Newline-separated clues, trimmed; falls back to the query itself.
inline Clues parse_clues(const std::string& query, const std::string& raw) {
  Clues c;
  c.query = query;
  c.raw = raw;
  std::size_t start = 0;
  while (start <= raw.size()) {
    const auto end = raw.find('\n', start);
    const auto piece = retrieval::trim(raw.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (!piece.empty()) c.clue_strings.push_back(piece);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  if (c.clue_strings.empty()) c.clue_strings.push_back(query);
  return c;
}

/// A context ready for querying: tokens, chunk index and (when needed) memory.
struct PreparedContext {
  std::string text;
  std::vector<TokenId> tokens;
  retrieval::Index index;
  std::optional<memory::MemoryState> memory;
  double index_ms = 0.0;
  double memory_ms = 0.0;
};

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

/// Memory formation, clue generation, clue-guided retrieval and answer
/// generation, plus the two baselines. The generator defaults to the memory
/// model's own base weights.
class Pipeline {
 public:
  Pipeline(const Parameters& memory_model, const Vocabulary& vocab, PipelineConfig config,
           const Parameters* generator = nullptr)
      : mem_model_(memory_model), generator_(generator ? *generator : memory_model), vocab_(vocab),
        config_(std::move(config)) {
    detail::require(config_.hits >= 1, "pipeline: hits must be >= 1");
    detail::require(vocab_.size() == mem_model_.config.vocab_size, "pipeline: vocabulary does not match the model");
    detail::require(vocab_.size() == generator_.config.vocab_size, "pipeline: vocabulary does not match the generator");
  }

  const PipelineConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  /// Tokenizes and indexes the context. With `need_memory`, forms the memory
  /// unless `preloaded` is given, which must match the context and model.
  PreparedContext prepare(const std::string& context, bool need_memory,
                          const memory::MemoryState* preloaded = nullptr) const {
    PreparedContext p;
    p.text = context;
    p.tokens = vocab_.encode(context);
    auto t0 = std::chrono::steady_clock::now();
    p.index = retrieval::build_index(retrieval::chunk_context(context, config_.chunk_max));
    p.index_ms = elapsed_ms(t0);
    if (preloaded) {
      if (preloaded->context_fingerprint != io::fingerprint_tokens(std::span<const TokenId>(p.tokens))) {
        throw CompatibilityError("memory was formed over a different context");
      }
      if (preloaded->params_fingerprint != mem_model_.fingerprint()) {
        throw CompatibilityError("memory was formed with parameters " + std::to_string(preloaded->params_fingerprint) +
                                 " but the memory model is " + std::to_string(mem_model_.fingerprint()));
      }
      p.memory = *preloaded;
    } else if (need_memory) {
      if (p.tokens.empty()) throw InputError("pipeline: empty context");
      t0 = std::chrono::steady_clock::now();
      p.memory = memory::memorize(p.tokens, mem_model_, config_.beta);
      p.memory_ms = elapsed_ms(t0);
    }
    return p;
  }

  Clues generate_clues(const std::string& query, const memory::MemoryState& memory) const {
    if (memory.params_fingerprint != mem_model_.fingerprint()) {
      throw CompatibilityError("clue generation: memory formed with parameters " +
                               std::to_string(memory.params_fingerprint) + ", memory model is " +
                               std::to_string(mem_model_.fingerprint()));
    }
    auto state = model::session_from_memory(memory);
    const auto prompt = text::clue_prompt(vocab_.encode(config_.clue_prefix), vocab_.encode(query));
    auto out = model::generate(mem_model_, state, prompt, config_.clue_max_tokens, Vocabulary::eos);
    if (!out.empty() && out.back() == Vocabulary::eos) out.pop_back();
    return parse_clues(query, vocab_.decode(out));
  }

  retrieval::EvidenceSet retrieve(const std::string& query, const Clues* clues,
                                  const retrieval::Index& index) const {
    std::vector<std::string> queries;
    if (clues) queries = clues->clue_strings;
    if (!clues || config_.include_original_query) queries.push_back(query);
    return retrieval::retrieve(queries, index, config_.hits);
  }

  /// Greedy answer from (auxiliary text, evidence, query). Evidence that does
  /// not fit the generator's context is cut from the front.
  std::string answer(const std::string& query, const std::string& evidence, bool* truncated = nullptr) const {
    const auto aux = vocab_.encode(config_.answer_prefix);
    const auto q = vocab_.encode(query);
    auto ev = vocab_.encode(evidence);
    const std::size_t fixed = aux.size() + q.size() + 3 + config_.answer_max_tokens;
    const std::size_t cap = generator_.config.max_seq;
    if (fixed > cap) throw CapacityError("answer: query alone exceeds the generator context");
    if (ev.size() + fixed > cap) {
      ev.erase(ev.begin(), ev.begin() + static_cast<std::ptrdiff_t>(ev.size() + fixed - cap));
      if (truncated) *truncated = true;
    }
    model::DecodeState state;
    state.params_fingerprint = generator_.fingerprint();
    auto out = model::generate(generator_, state, text::answer_prompt(aux, ev, q), config_.answer_max_tokens,
                               Vocabulary::eos);
    if (!out.empty() && out.back() == Vocabulary::eos) out.pop_back();
    return vocab_.decode(out);
  }

  TaskResult query(const PreparedContext& ctx, const std::string& q, Mode mode) const {
    TaskResult r;
    r.query = q;
    r.mode = mode;
    auto t0 = std::chrono::steady_clock::now();
    std::string evidence_text;
    switch (mode) {
      case Mode::memorag: {
        detail::require(ctx.memory.has_value(), "pipeline: memorag mode needs a formed memory");
        r.clues = generate_clues(q, *ctx.memory);
        r.timings.clue_ms = elapsed_ms(t0);
        t0 = std::chrono::steady_clock::now();
        r.evidence = retrieve(q, &*r.clues, ctx.index);
        r.timings.retrieval_ms = elapsed_ms(t0);
        evidence_text = r.evidence.text;
        break;
      }
      case Mode::standard_rag:
        r.evidence = retrieve(q, nullptr, ctx.index);
        r.timings.retrieval_ms = elapsed_ms(t0);
        evidence_text = r.evidence.text;
        break;
      case Mode::full_context:
        evidence_text = ctx.text;
        break;
    }
    r.low_confidence = retrieval::trim(evidence_text).empty();
    t0 = std::chrono::steady_clock::now();
    r.answer = answer(q, evidence_text, &r.truncated);
    r.timings.answer_ms = elapsed_ms(t0);
    return r;
  }

  /// Answers every query over one context. Memory is formed once and reused.
  std::vector<TaskResult> run(const std::vector<std::string>& queries, const std::string& context, Mode mode,
                              const memory::MemoryState* preloaded = nullptr) const {
    std::vector<TaskResult> results;
    if (queries.empty()) return results;
    const auto ctx = prepare(context, mode == Mode::memorag, preloaded);
    for (const auto& q : queries) {
      results.push_back(query(ctx, q, mode));
      if (results.size() == 1) {
        results.back().timings.memory_ms = ctx.memory_ms;
        results.back().timings.index_ms = ctx.index_ms;
      }
    }
    return results;
  }

 private:
  const Parameters& mem_model_;
  const Parameters& generator_;
  const Vocabulary& vocab_;
  PipelineConfig config_;
};

}  // namespace memorag::pipeline
