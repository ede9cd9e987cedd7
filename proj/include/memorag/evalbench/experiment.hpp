#pragma once

#include <map>
#include <string>
#include <vector>

#include "memorag/evalbench/metrics.hpp"
#include "memorag/evalbench/tasks.hpp"
#include "memorag/pipeline/pipeline.hpp"
#include "memorag/training/trainer.hpp"

namespace memorag::evalbench {

/// One context with its queries; optional fields may be empty.
struct CorpusRecord {
  std::string context;
  std::vector<std::string> queries;
  std::vector<std::string> gold_answers;
  std::vector<std::vector<std::string>> clues;  // per query
  std::vector<std::size_t> gold_chunk_ids;      // per query, synthetic corpora only

  void validate() const {
    if (!gold_answers.empty() && gold_answers.size() != queries.size()) {
      throw InputError("corpus record: " + std::to_string(queries.size()) + " queries but " +
                       std::to_string(gold_answers.size()) + " gold answers");
    }
    if (!clues.empty() && clues.size() != queries.size()) {
      throw InputError("corpus record: clue lists do not match the queries");
    }
    if (!gold_chunk_ids.empty() && gold_chunk_ids.size() != queries.size()) {
      throw InputError("corpus record: gold chunk ids do not match the queries");
    }
  }
};

inline std::vector<CorpusRecord> to_corpus(const std::vector<SyntheticTask>& tasks) {
  std::vector<CorpusRecord> out;
  for (const auto& t : tasks) {
    CorpusRecord r;
    r.context = t.context;
    for (const auto& qa : t.qa) {
      r.queries.push_back(qa.query);
      r.gold_answers.push_back(qa.answer);
      r.clues.push_back({qa.clue});
      r.gold_chunk_ids.push_back(qa.gold_chunk_id);
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Small model sized for the synthetic tasks (documents of a few hundred tokens).
inline model::ModelConfig task_model_config(std::size_t vocab_size) {
  model::ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.window_l = 64;
  c.mem_k = 16;
  c.max_seq = 320;
  return c;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += '\n';
    out += l;
  }
  return out;
}

/// Training samples derived from a corpus:
///  - pretrain: every context;
///  - sft: (context, query) -> the query's clues, one per line;
///  - base: answer-prompt copying, evidence retrieved with clues and query.
inline training::TrainData training_data(const std::vector<CorpusRecord>& corpus, const text::Vocabulary& vocab,
                                         const pipeline::PipelineConfig& pc) {
  training::TrainData d;
  for (const auto& r : corpus) {
    r.validate();
    const auto ctx = vocab.encode(r.context);
    d.pretrain.push_back(ctx);
    const auto index = retrieval::build_index(retrieval::chunk_context(r.context, pc.chunk_max));
    for (std::size_t i = 0; i < r.queries.size(); ++i) {
      const auto q = vocab.encode(r.queries[i]);
      if (!r.clues.empty() && !r.clues[i].empty()) {
        d.sft.push_back({ctx, q, text::with_eos(vocab.encode(join_lines(r.clues[i])))});
      }
      if (r.gold_answers.empty()) continue;
      std::vector<std::string> lookups = r.clues.empty() ? std::vector<std::string>{} : r.clues[i];
      lookups.push_back(r.queries[i]);
      const auto ev = retrieval::retrieve(lookups, index, pc.hits);
      const auto prompt = text::answer_prompt(vocab.encode(pc.answer_prefix), vocab.encode(ev.text), q);
      training::BaseSample b{prompt, prompt.size()};
      const auto target = text::with_eos(vocab.encode(r.gold_answers[i]));
      b.tokens.insert(b.tokens.end(), target.begin(), target.end());
      d.base.push_back(std::move(b));
    }
  }
  return d;
}

struct ModeScores {
  std::size_t queries = 0;
  std::size_t gold_known = 0;  // queries with a gold chunk id
  double hits = 0.0;           // gold chunk among the evidence
  double f1 = 0.0;
  double rouge = 0.0;

  double hit_rate() const { return gold_known ? hits / static_cast<double>(gold_known) : 0.0; }
  double mean_f1() const { return queries ? f1 / static_cast<double>(queries) : 0.0; }
  double mean_rouge() const { return queries ? rouge / static_cast<double>(queries) : 0.0; }
};

/// Runs every mode over the corpus and scores answers against the gold ones.
inline std::map<pipeline::Mode, ModeScores> evaluate(const pipeline::Pipeline& pl,
                                                     const std::vector<CorpusRecord>& corpus,
                                                     const std::vector<pipeline::Mode>& modes) {
  std::map<pipeline::Mode, ModeScores> out;
  for (const auto& r : corpus) {
    r.validate();
    for (auto mode : modes) {
      auto& s = out[mode];
      const auto results = pl.run(r.queries, r.context, mode);
      for (std::size_t i = 0; i < results.size(); ++i) {
        ++s.queries;
        if (!r.gold_chunk_ids.empty() && mode != pipeline::Mode::full_context) {
          ++s.gold_known;
          s.hits += results[i].evidence.contains(r.gold_chunk_ids[i]) ? 1.0 : 0.0;
        }
        if (!r.gold_answers.empty()) {
          s.f1 += token_f1(results[i].answer, r.gold_answers[i]);
          s.rouge += rouge_l(results[i].answer, r.gold_answers[i]);
        }
      }
    }
  }
  return out;
}

/// Stage settings that train the task model within minutes on one core.
/// The defaults from the training module are sized for large models and
/// barely move a model this small.
inline training::TrainConfig desk_train_config(training::Stage stage) {
  auto c = training::default_train_config(stage);
  c.clip_norm = 1.0;
  switch (stage) {
    case training::Stage::base: c.learning_rate = 1e-2, c.max_steps = 700; break;
    case training::Stage::sft: c.learning_rate = 3e-2, c.max_steps = 2000; break;
    case training::Stage::pretrain: c.learning_rate = 1e-2, c.max_steps = 200; break;
    case training::Stage::rlgf: c.learning_rate = 1e-2, c.max_steps = 100; break;
  }
  return c;
}

}  // namespace memorag::evalbench
