#include <set>

#include <gtest/gtest.h>

#include "memorag/evalbench/bench.hpp"
#include "memorag/evalbench/metrics.hpp"
#include "memorag/evalbench/tasks.hpp"

using namespace memorag;
using namespace memorag::evalbench;

TEST(TokenF1, TabulatedCases) {
  EXPECT_NEAR(token_f1("a b c", "a b c"), 1.0, 1e-9);
  EXPECT_NEAR(token_f1("a b", "c d"), 0.0, 1e-9);
  EXPECT_NEAR(token_f1("a b", "b c"), 0.5, 1e-9);
  EXPECT_EQ(token_f1("", ""), 1.0);
  EXPECT_EQ(token_f1("", "a"), 0.0);
  EXPECT_EQ(token_f1("a", ""), 0.0);
  // multiset overlap: one shared "a"
  EXPECT_NEAR(token_f1("a a", "a"), 2.0 / 3.0, 1e-12);
  // normalization: case and punctuation
  EXPECT_EQ(token_f1("Paris.", "paris"), 1.0);
}

TEST(RougeL, TabulatedCases) {
  EXPECT_NEAR(rouge_l("a b c d", "a b c d"), 1.0, 1e-9);
  EXPECT_NEAR(rouge_l("a b c d", "a c d"), 6.0 / 7.0, 1e-9);
  EXPECT_NEAR(rouge_l("a b", "c d"), 0.0, 1e-9);
  EXPECT_NEAR(rouge_l("b a", "a b"), 0.5, 1e-9);
}

TEST(Metrics, PropertySymmetryAndBounds) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> w = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string x, y;
    for (std::size_t i = 0; i < rng() % 7; ++i) x += w[rng() % w.size()] + " ";
    for (std::size_t i = 0; i < rng() % 7; ++i) y += w[rng() % w.size()] + " ";
    for (auto f : {token_f1, rouge_l}) {
      const double s = f(x, y);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
      EXPECT_NEAR(s, f(y, x), 1e-12);
      EXPECT_EQ(f(x, x), 1.0);
    }
  }
}

TEST(Tasks, DeterministicGivenSeed) {
  const auto a = gen_indirection_tasks(5, 6, 256);
  const auto b = gen_indirection_tasks(5, 6, 256);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].context, b[i].context);
    EXPECT_EQ(a[i].gold_chunk_ids, b[i].gold_chunk_ids);
  }
  EXPECT_NE(gen_indirection_tasks(6, 1, 256)[0].context, a[0].context);
}

TEST(Tasks, GoldChunksShareNoContentTermsWithTheirQueries) {
  for (const auto& task : gen_indirection_tasks(11, 30, 256)) {
    const auto chunks = retrieval::chunk_context(task.context, 32);
    ASSERT_EQ(chunks.size(), 8u);
    for (const auto& qa : task.qa) {
      const auto gold = text::terms(chunks[qa.gold_chunk_id].text);
      const std::set<std::string> gold_terms(gold.begin(), gold.end());
      for (const auto& t : text::terms(qa.query)) EXPECT_EQ(gold_terms.count(t), 0u) << t;
      // the canonical name stays out of the query and the answer is in the gold chunk
      for (const auto& t : text::terms(qa.clue)) EXPECT_EQ(qa.query.find(t), std::string::npos);
      EXPECT_EQ(gold_terms.count(qa.answer), 1u);
      EXPECT_EQ(task.alias_map.at(qa.query.substr(15, qa.query.size() - 15 - 7)), qa.clue);
    }
  }
}

TEST(Tasks, QueryOnlyRetrievalMissesGoldAndClueFindsIt) {
  std::size_t missed = 0, found = 0, total = 0;
  for (const auto& task : gen_indirection_tasks(17, 50, 256)) {
    const auto index = retrieval::build_index(retrieval::chunk_context(task.context, 32));
    for (const auto& qa : task.qa) {
      const std::vector<std::string> q = {qa.query};
      const std::vector<std::string> qc = {qa.clue, qa.query};
      missed += !retrieval::retrieve(q, index, 3).contains(qa.gold_chunk_id);
      found += retrieval::retrieve(qc, index, 3).contains(qa.gold_chunk_id);
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(missed) / static_cast<double>(total), 0.7);
  EXPECT_EQ(found, total);
}

TEST(Tasks, LexiconCoversEveryGeneratedWord) {
  const auto lex = task_lexicon();
  const std::set<std::string> words(lex.begin(), lex.end());
  for (const auto& task : gen_indirection_tasks(2, 20, 256)) {
    for (const auto& p : text::split_pieces(task.context)) EXPECT_EQ(words.count(p.text), 1u) << p.text;
  }
}

TEST(Tasks, RejectsShortDocuments) { EXPECT_THROW(gen_indirection_tasks(1, 1, 100), ContractViolation); }

TEST(Bench, RowsPerLengthAndExactByteRatios) {
  const auto vocab = text::Vocabulary::from_words(task_lexicon());
  model::ModelConfig c;
  c.vocab_size = vocab.size();
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.window_l = 32;
  c.mem_k = 4;
  c.max_seq = 512;
  const auto params = model::init_parameters(c, {.seed = 1});
  BenchConfig cfg;
  cfg.beta = 8;
  cfg.chunk_max = 32;
  cfg.clue_max_tokens = 4;
  const std::vector<std::size_t> lengths = {64, 128, 256};
  const auto a = bench_efficiency(lengths, params, vocab, cfg);
  ASSERT_EQ(a.rows.size(), 9u);
  for (std::size_t n : lengths) {
    const double ratio = static_cast<double>(a.row(n, "memorag").cache_bytes) /
                         static_cast<double>(a.row(n, "light").cache_bytes);
    EXPECT_NEAR(ratio, 1.0 / 8.0, 0.01 / 8.0);
    EXPECT_EQ(a.row(n, "standard_rag").cache_bytes, 0u);
    EXPECT_GE(a.row(n, "memorag").indexing_ms, 0.0);
  }
  const auto b = bench_efficiency(lengths, params, vocab, cfg);
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].cache_bytes, b.rows[i].cache_bytes);
  const std::vector<std::size_t> unsorted = {128, 64};
  EXPECT_THROW(bench_efficiency(unsorted, params, vocab, cfg), ContractViolation);
  const std::vector<std::size_t> too_long = {512};  // no room for the clue prompt
  EXPECT_THROW(bench_efficiency(too_long, params, vocab, cfg), ContractViolation);
}

TEST(Bench, SyntheticContextHasExactLength) {
  const auto vocab = text::Vocabulary::from_words(task_lexicon());
  for (std::size_t n : {1u, 12u, 100u}) EXPECT_EQ(vocab.encode(synthetic_context(vocab, n, 3)).size(), n);
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0}), 2.5);
}
