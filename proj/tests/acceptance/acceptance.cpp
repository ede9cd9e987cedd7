// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memorag/diff/grad_check.hpp"
#include "memorag/evalbench/bench.hpp"
#include "memorag/evalbench/experiment.hpp"
#include "memorag/evalbench/metrics.hpp"
#include "memorag/memory/memory.hpp"
#include "memorag/model/inference.hpp"
#include "memorag/pipeline/pipeline.hpp"
#include "memorag/training/rlgf.hpp"
#include "memorag/training/trainer.hpp"

using namespace memorag;
using model::ModelConfig;
using text::TokenId;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> d(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> out(n);
  for (auto& t : out) t = d(rng);
  return out;
}

ModelConfig toy(std::size_t vocab, std::size_t d, std::size_t window, std::size_t mem_k, std::size_t max_seq) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.window_l = window;
  c.mem_k = mem_k;
  c.max_seq = max_seq;
  return c;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1 --------------------------------------------------------------------------
Outcome cache_equivalence() {
  const auto c = toy(37, 16, 16, 4, 128);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = model::init_parameters(c, {.seed = 100 + s});
    const auto tokens = random_tokens(128, c.vocab_size, 200 + s);
    auto state = model::prefill_light(p, std::span(tokens).first(1)).state;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto step = model::forward_decode(p, state, tokens[i]);
      const auto full = model::prefill_light(p, std::span(tokens).first(i + 1));
      worst = std::max(worst, diff::max_abs_diff(step.row_span(0), full.logits.row_span(i)));
    }
  }
  return {worst <= 1e-10, "max |decode - re-prefill| = " + fmt("%.3g", worst) + " over 10 x 128 tokens"};
}

// 2 --------------------------------------------------------------------------
Outcome gradient_fidelity() {
  const auto c = toy(11, 8, 8, 2, 128);
  auto p = model::init_parameters(c, {.seed = 7});
  const auto memory_tensors = p.tensors(model::ParamGroup::memory);
  const auto seq = random_tokens(21, c.vocab_size, 1);
  const std::vector<std::size_t> sizes = {2, 1, 2};
  const auto ctx = random_tokens(16, c.vocab_size, 2);
  const auto prompt = text::clue_prompt({}, random_tokens(3, c.vocab_size, 3));
  const auto out = text::with_eos(random_tokens(3, c.vocab_size, 4));
  const auto worse = text::with_eos(random_tokens(2, c.vocab_size, 5));
  auto bind = [&](diff::Tape& t) { return model::bind_parameters(t, p, model::Trainable::memory); };
  const std::vector<std::pair<const char*, diff::LossBuilder>> losses = {
      {"L_pre", [&](diff::Tape& t) { return training::loss_pretrain(t, bind(t), c, seq, sizes); }},
      {"L_sft", [&](diff::Tape& t) { return training::loss_sft(t, bind(t), c, ctx, 2, prompt, out); }},
      {"rlgf_margin",
       [&](diff::Tape& t) { return training::loss_rlgf_margin(t, bind(t), c, ctx, 2, prompt, out, worse); }},
  };
  bool pass = true;
  std::string detail;
  for (const auto& [name, fn] : losses) {
    const auto r = diff::grad_check_report(fn, memory_tensors, 1e-5);
    pass = pass && r.max_relative_error < 1e-4;
    detail += std::string(name) + " rel " + fmt("%.2g", r.max_relative_error) + " (|g|>=1e-6: " +
              fmt("%.2g", r.max_resolvable_relative_error) + ", abs " + fmt("%.2g", r.max_abs_error) + ", " +
              std::to_string(r.entries_checked) + " entries); ";
  }
  return {pass, detail};
}

// 3 --------------------------------------------------------------------------
Outcome compression_accounting() {
  const std::size_t n = 8192, l = 2048;
  const auto c = toy(23, 8, l, 512, n);
  const auto p = model::init_parameters(c, {.seed = 3});
  const auto tokens = random_tokens(n, c.vocab_size, 4);
  const auto light = memory::light_memorize(tokens, p);
  bool pass = true;
  std::string detail;
  for (std::size_t beta : {4, 8, 16, 32, 64}) {
    const auto m = memory::memorize(tokens, p, beta);
    const std::size_t expected = ((n + l - 1) / l) * (l / beta);
    const double ratio = static_cast<double>(m.payload_bytes()) / static_cast<double>(light.payload_bytes());
    const bool ok = m.entries() == expected && std::abs(ratio * beta - 1.0) <= 0.01;
    pass = pass && ok;
    detail += "b" + std::to_string(beta) + ": " + std::to_string(m.entries()) + "/" + std::to_string(expected) +
              " ratio " + fmt("%.5f", ratio) + "; ";
  }
  return {pass, detail};
}

// 4 --------------------------------------------------------------------------
Outcome frozen_base() {
  const auto c = toy(13, 8, 8, 2, 128);
  training::TrainData data;
  for (std::uint64_t s = 0; s < 8; ++s) {
    data.pretrain.push_back(random_tokens(24, c.vocab_size, s));
    data.sft.push_back({random_tokens(16, c.vocab_size, 10 + s), random_tokens(3, c.vocab_size, 20 + s),
                        text::with_eos(random_tokens(3, c.vocab_size, 30 + s))});
    data.rlgf.push_back({random_tokens(16, c.vocab_size, 40 + s), random_tokens(3, c.vocab_size, 50 + s),
                         text::with_eos(random_tokens(3, c.vocab_size, 60 + s)),
                         text::with_eos(random_tokens(2, c.vocab_size, 70 + s)), 1.0, 0.0});
  }
  auto snapshot = [](model::Parameters& p, model::ParamGroup g) {
    std::vector<double> out;
    for (auto* t : p.tensors(g)) out.insert(out.end(), t->values().begin(), t->values().end());
    return out;
  };
  bool pass = true;
  std::string detail;
  for (auto stage : {training::Stage::pretrain, training::Stage::sft, training::Stage::rlgf}) {
    auto p = model::init_parameters(c, {.seed = 11});
    const auto base0 = snapshot(p, model::ParamGroup::base);
    const auto mem0 = snapshot(p, model::ParamGroup::memory);
    auto tc = training::default_train_config(stage);
    tc.max_steps = 100;
    tc.batch_size = 2;
    tc.learning_rate = 1e-2;
    tc.betas = {4, 8};
    training::train(p, data, tc);
    const bool frozen = snapshot(p, model::ParamGroup::base) == base0;
    const bool moved = snapshot(p, model::ParamGroup::memory) != mem0;
    pass = pass && frozen && moved;
    detail += std::string(training::stage_name(stage)) + (frozen ? " base identical" : " BASE CHANGED") +
              (moved ? ", memory moved; " : ", memory unchanged; ");
  }
  return {pass, detail};
}

// 5 --------------------------------------------------------------------------
Outcome pretraining_sanity() {
  const auto c = toy(16, 16, 16, 4, 256);
  auto p = model::init_parameters(c, {.seed = 1});
  training::TrainData data;
  std::vector<TokenId> seq;
  for (int i = 0; i < 64; ++i) seq.push_back(static_cast<TokenId>(7 + i % 8));
  data.pretrain.push_back(seq);
  auto tc = training::default_train_config(training::Stage::pretrain);
  tc.learning_rate = 0.5;
  tc.batch_size = 1;
  tc.max_steps = 200;
  tc.clip_norm = 1.0;
  tc.betas = {4};
  const auto r = training::train(p, data, tc);
  const double end = training::smooth(r.loss_trace, 0.1).back();
  return {end < 0.5 * r.loss_trace.front(), "initial " + fmt("%.4f", r.loss_trace.front()) + ", smoothed final " +
                                                 fmt("%.4f", end) + " (ratio " +
                                                 fmt("%.3f", end / r.loss_trace.front()) + ")"};
}

// 6 --------------------------------------------------------------------------
Outcome clue_advantage() {
  const auto vocab = text::Vocabulary::from_words(evalbench::task_lexicon());
  auto p = model::init_parameters(evalbench::task_model_config(vocab.size()), {.seed = 1});
  pipeline::PipelineConfig pc;
  pc.chunk_max = 32;
  pc.clue_max_tokens = 8;
  pc.answer_max_tokens = 4;

  const auto train_tasks = evalbench::gen_indirection_tasks(1000, 200, 256);
  const auto eval_tasks = evalbench::gen_indirection_tasks(7, 50, 256);
  std::set<std::string> seen;
  for (const auto& t : train_tasks) seen.insert(t.context);
  for (const auto& t : eval_tasks) {
    if (seen.count(t.context)) return {false, "evaluation document also appears in training data"};
  }
  const auto data = evalbench::training_data(evalbench::to_corpus(train_tasks), vocab, pc);
  const auto rb = training::train(p, data, evalbench::desk_train_config(training::Stage::base));
  const auto rs = training::train(p, data, evalbench::desk_train_config(training::Stage::sft));

  const pipeline::Pipeline pl(p, vocab, pc);
  auto eval_corpus = evalbench::to_corpus(eval_tasks);
  const auto scores =
      evalbench::evaluate(pl, eval_corpus, {pipeline::Mode::memorag, pipeline::Mode::standard_rag});
  const auto& mem = scores.at(pipeline::Mode::memorag);
  const auto& rag = scores.at(pipeline::Mode::standard_rag);
  const double gap = mem.hit_rate() - rag.hit_rate();
  std::size_t clue_hits = 0, n = 0;
  for (const auto& t : eval_tasks) {
    const auto ctx = pl.prepare(t.context, true);
    for (const auto& qa : t.qa) {
      clue_hits += pl.generate_clues(qa.query, *ctx.memory).raw.find(qa.clue) != std::string::npos;
      ++n;
    }
  }
  std::ostringstream d;
  d << mem.queries << " queries: hit@3 memorag " << fmt("%.3f", mem.hit_rate()) << " vs standard "
    << fmt("%.3f", rag.hit_rate()) << " (gap " << fmt("%.1f", 100 * gap) << " pp); F1 " << fmt("%.3f", mem.mean_f1())
    << " vs " << fmt("%.3f", rag.mean_f1()) << "; canonical name in clue " << clue_hits << "/" << n
    << "; base loss " << fmt("%.3g", training::smooth(rb.loss_trace, 0.05).back()) << ", sft loss "
    << fmt("%.3g", training::smooth(rs.loss_trace, 0.05).back());
  return {gap >= 0.20 && mem.mean_f1() > rag.mean_f1(), d.str()};
}

// 7 --------------------------------------------------------------------------
Outcome rlgf_construction() {
  // For each synthetic document: the canonical name plus four filler clues
  // whose top hits miss the gold chunk. The reader answers with the city of
  // the first "<canonical> dwells in" sentence it finds.
  const auto tasks = evalbench::gen_indirection_tasks(31, 20, 256);
  training::RlgfBuildConfig cfg;
  cfg.chunk_max = 32;
  std::size_t fixtures = 0, sixteen = 0, contains = 0;
  for (const auto& t : tasks) {
    const auto& qa = t.qa[0];
    const auto index = retrieval::build_index(retrieval::chunk_context(t.context, cfg.chunk_max));
    std::vector<std::string> clues = {qa.clue};
    for (const auto& w : evalbench::filler_words()) {
      if (clues.size() == 5) break;
      const std::vector<std::string> one = {w};
      if (!retrieval::retrieve(one, index, cfg.hits).contains(qa.gold_chunk_id)) clues.push_back(w);
    }
    if (clues.size() < 5) continue;
    std::rotate(clues.begin(), clues.begin() + 1, clues.begin() + 3);  // gold clue at index 2
    const std::string canonical = qa.clue;
    auto reader = [&](const std::string&, const retrieval::EvidenceSet& ev) {
      const auto at = ev.text.find(canonical + " dwells in ");
      if (at == std::string::npos) return std::string("unknown");
      const auto start = at + canonical.size() + 11;
      return ev.text.substr(start, ev.text.find(' ', start) - start);
    };
    const training::RlgfSample sample{t.context, qa.query, qa.answer, clues};
    const auto built = training::construct_rlgf_pair(sample, reader, evalbench::token_f1, cfg);
    ++fixtures;
    sixteen += built.subsets.size() == 16;
    if (built.preferred) {
      const auto& m = built.subsets[*built.preferred].members;
      contains += std::find(m.begin(), m.end(), 2u) != m.end();
    }
  }
  const std::vector<std::tuple<double, double, double>> table = {
      {0.8, 0.3, 0.5}, {2.0, 0.5, 0.0}, {0.5, 0.5, 1.0}, {0.0, 1.0, 2.0}, {1.0, 0.0, 0.0}, {0.25, 0.75, 1.5}};
  std::size_t exact = 0;
  for (const auto& [plus, minus, want] : table) exact += training::loss_rlgf(plus, minus) == want;
  std::ostringstream d;
  d << fixtures << " fixtures: 16 subsets in " << sixteen << ", preferred holds the gold clue in " << contains
    << "; hinge table " << exact << "/" << table.size() << " exact";
  return {fixtures >= 10 && sixteen == fixtures && contains == fixtures && exact == table.size(), d.str()};
}

// 8 --------------------------------------------------------------------------
Outcome offload_round_trip() {
  const auto vocab = text::Vocabulary::from_words(evalbench::task_lexicon());
  const auto p = model::init_parameters(evalbench::task_model_config(vocab.size()), {.seed = 8});
  pipeline::PipelineConfig pc;
  pc.chunk_max = 32;
  pc.clue_max_tokens = 8;
  pc.answer_max_tokens = 4;
  const pipeline::Pipeline pl(p, vocab, pc);
  std::size_t same = 0, total = 0;
  for (const auto& t : evalbench::gen_indirection_tasks(3, 5, 256)) {
    std::vector<std::string> qs;
    for (const auto& qa : t.qa) qs.push_back(qa.query);
    const auto fresh = pl.run(qs, t.context, pipeline::Mode::memorag);
    const auto path = std::filesystem::temp_directory_path() /
                      ("acceptance_" + std::to_string(::getpid()) + "_" + std::to_string(total) + ".mrag");
    memory::offload(memory::memorize(vocab.encode(t.context), p, pc.beta), path);
    const auto loaded = memory::load(path, p);
    std::filesystem::remove(path);
    const auto reused = pl.run(qs, t.context, pipeline::Mode::memorag, &loaded);
    for (std::size_t i = 0; i < qs.size(); ++i, ++total) {
      same += fresh[i].answer == reused[i].answer && fresh[i].clues->raw == reused[i].clues->raw &&
              fresh[i].evidence.hits == reused[i].evidence.hits;
    }
  }
  return {same == total, std::to_string(same) + "/" + std::to_string(total) + " queries identical after reload"};
}

// 9 --------------------------------------------------------------------------
Outcome efficiency_ordering() {
  const auto vocab = text::Vocabulary::from_words(evalbench::task_lexicon());
  const std::size_t l = 256;
  const auto p = model::init_parameters(toy(vocab.size(), 32, l, 64, 8 * l + 64), {.seed = 9});
  evalbench::BenchConfig cfg;
  cfg.chunk_max = 64;
  cfg.clue_max_tokens = 16;
  const std::vector<std::size_t> lengths = {2 * l, 4 * l, 8 * l};
  const auto r = evalbench::bench_efficiency(lengths, p, vocab, cfg);
  bool pass = true;
  std::ostringstream d;
  for (std::size_t n : lengths) {
    const auto& mem = r.row(n, "memorag");
    const auto& rag = r.row(n, "standard_rag");
    const auto& light = r.row(n, "light");
    const bool index_order = rag.indexing_ms < mem.indexing_ms && rag.indexing_ms < light.indexing_ms;
    const bool smaller = mem.cache_bytes * cfg.beta <= light.cache_bytes;
    const bool retrieval_order = rag.retrieval_ms < mem.retrieval_ms;
    pass = pass && index_order && smaller && retrieval_order;
    d << n << ": index rag/mem/light " << fmt("%.2f", rag.indexing_ms) << "/" << fmt("%.1f", mem.indexing_ms) << "/"
      << fmt("%.1f", light.indexing_ms) << " ms, bytes " << mem.cache_bytes << " vs " << light.cache_bytes
      << ", retrieval rag/mem " << fmt("%.3f", rag.retrieval_ms) << "/" << fmt("%.1f", mem.retrieval_ms) << " ms; ";
  }
  return {pass, d.str()};
}

// 10 -------------------------------------------------------------------------
Outcome metric_correctness() {
  struct Case {
    double (*fn)(std::string_view, std::string_view);
    const char* pred;
    const char* gold;
    double want;
  };
  const std::vector<Case> cases = {
      {evalbench::token_f1, "a b c", "a b c", 1.0},
      {evalbench::token_f1, "a b", "c d", 0.0},
      {evalbench::token_f1, "a b", "b c", 0.5},
      {evalbench::token_f1, "", "", 1.0},
      {evalbench::token_f1, "", "a", 0.0},
      {evalbench::token_f1, "a a", "a", 2.0 / 3.0},
      {evalbench::token_f1, "The Cat.", "the cat", 1.0},
      {evalbench::rouge_l, "a b c d", "a b c d", 1.0},
      {evalbench::rouge_l, "a b c d", "a c d", 6.0 / 7.0},
      {evalbench::rouge_l, "a b", "c d", 0.0},
      {evalbench::rouge_l, "b a", "a b", 0.5},
      {evalbench::rouge_l, "a x b y c", "a b c", 0.75},
  };
  std::size_t ok = 0;
  for (const auto& c : cases) ok += std::abs(c.fn(c.pred, c.gold) - c.want) <= 1e-9;
  return {ok == cases.size(), std::to_string(ok) + "/" + std::to_string(cases.size()) + " tabulated examples"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "cache equivalence", 60, cache_equivalence},
      {2, "gradient fidelity", 300, gradient_fidelity},
      {3, "compression accounting", 60, compression_accounting},
      {4, "frozen base", 300, frozen_base},
      {5, "pretraining sanity", 600, pretraining_sanity},
      {6, "clue advantage", 900, clue_advantage},
      {7, "rlgf construction", 120, rlgf_construction},
      {8, "offload round trip", 60, offload_round_trip},
      {9, "efficiency ordering", 600, efficiency_ordering},
      {10, "metric correctness", 1, metric_correctness},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("[%s] %2d %-24s %s (%.2f s of %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
