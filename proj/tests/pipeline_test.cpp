#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "memorag/pipeline/pipeline.hpp"
#include "memorag/training/trainer.hpp"

using namespace memorag;
using namespace memorag::pipeline;

namespace {

const std::string kContext =
    "the red fox runs over the hill . the fox keeps a den near the river . "
    "anna berg dwells in oslo . anna berg keeps a lamp . the river is cold in winter . "
    "a boat sails down the river . people say the hill is old . the old tower stands on the hill . "
    "snow falls on the tower . the bird sings in the tree . the tree grows by the road .";

struct Fixture {
  text::Vocabulary vocab;
  model::Parameters params;
  PipelineConfig config;

  Fixture() {
    vocab = text::Vocabulary::build(std::vector<std::string>{kContext, "where does the fox live ? who is anna"});
    model::ModelConfig c;
    c.vocab_size = vocab.size();
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.ffn_mult = 2;
    c.window_l = 16;
    c.mem_k = 4;
    c.max_seq = 256;
    params = model::init_parameters(c, {.seed = 3});
    config.chunk_max = 16;
    config.clue_max_tokens = 6;
    config.answer_max_tokens = 4;
  }
};

void expect_same(const TaskResult& a, const TaskResult& b) {
  EXPECT_EQ(a.answer, b.answer);
  EXPECT_EQ(a.evidence.hits, b.evidence.hits);
  EXPECT_EQ(a.evidence.text, b.evidence.text);
  EXPECT_EQ(a.clues.has_value(), b.clues.has_value());
  if (a.clues && b.clues) EXPECT_EQ(a.clues->raw, b.clues->raw);
}

}  // namespace

TEST(ParseClues, SplitsOnNewlinesAndFallsBackToTheQuery) {
  auto c = parse_clues("q ?", "clue one\nclue two\n");
  EXPECT_EQ(c.clue_strings, (std::vector<std::string>{"clue one", "clue two"}));
  EXPECT_EQ(c.raw, "clue one\nclue two\n");
  EXPECT_EQ(parse_clues("q ?", "").clue_strings, (std::vector<std::string>{"q ?"}));
  EXPECT_EQ(parse_clues("q ?", " \n  \n").clue_strings, (std::vector<std::string>{"q ?"}));
  EXPECT_EQ(parse_clues("q", "  a  \n\nb").clue_strings, (std::vector<std::string>{"a", "b"}));
}

TEST(ParseMode, KnownNamesOnly) {
  EXPECT_EQ(parse_mode("memorag"), Mode::memorag);
  EXPECT_EQ(parse_mode("rag"), Mode::standard_rag);
  EXPECT_EQ(parse_mode("full"), Mode::full_context);
  EXPECT_THROW(parse_mode("hybrid"), InputError);
}

TEST(Pipeline, EmptyQueryListGivesNoResults) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  EXPECT_TRUE(p.run({}, kContext, Mode::memorag).empty());
}

TEST(Pipeline, MemoryIsFormedOncePerContext) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  const auto before = memory::formation_counter().load();
  const auto r = p.run({"where does the fox live ?", "who is anna ?", "where is the tower ?"}, kContext, Mode::memorag);
  EXPECT_EQ(memory::formation_counter().load() - before, 1u);
  ASSERT_EQ(r.size(), 3u);
  for (const auto& x : r) {
    ASSERT_TRUE(x.clues.has_value());
    EXPECT_FALSE(x.clues->clue_strings.empty());
    EXPECT_EQ(x.mode, Mode::memorag);
    EXPECT_LE(x.evidence.hits.size(), 3u);
  }
  EXPECT_GT(r[0].timings.memory_ms, 0.0);
  EXPECT_EQ(r[1].timings.memory_ms, 0.0);
}

TEST(Pipeline, BaselineModesPopulateTheirOwnFields) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  const auto before = memory::formation_counter().load();
  const auto rag = p.run({"where does the fox live ?"}, kContext, Mode::standard_rag);
  EXPECT_FALSE(rag[0].clues.has_value());
  EXPECT_EQ(rag[0].evidence.hits.size(), 3u);
  const auto full = p.run({"where does the fox live ?"}, kContext, Mode::full_context);
  EXPECT_FALSE(full[0].clues.has_value());
  EXPECT_TRUE(full[0].evidence.hits.empty());
  EXPECT_FALSE(full[0].truncated);
  EXPECT_EQ(memory::formation_counter().load(), before);
}

TEST(Pipeline, FullContextTruncatesWhenOverCapacity) {
  Fixture f;
  f.params.config.max_seq = 40;
  Pipeline p(f.params, f.vocab, f.config);
  const auto r = p.run({"where does the fox live ?"}, kContext, Mode::full_context);
  EXPECT_TRUE(r[0].truncated);
}

TEST(Pipeline, EmptyEvidenceStillAnswersWithLowConfidence) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  const auto r = p.run({"where does the fox live ?"}, "", Mode::standard_rag);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_TRUE(r[0].low_confidence);
  EXPECT_TRUE(r[0].evidence.hits.empty());
  EXPECT_EQ(r[0].answer, p.answer("where does the fox live ?", ""));
  EXPECT_FALSE(p.run({"where does the fox live ?"}, kContext, Mode::standard_rag)[0].low_confidence);
}

TEST(Pipeline, DeterministicAnswers) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  EXPECT_EQ(p.answer("who is anna ?", "anna berg dwells in oslo ."), p.answer("who is anna ?", "anna berg dwells in oslo ."));
  const auto a = p.run({"who is anna ?"}, kContext, Mode::memorag);
  const auto b = p.run({"who is anna ?"}, kContext, Mode::memorag);
  expect_same(a[0], b[0]);
}

TEST(Pipeline, StandardRagIgnoresMemoryWeights) {
  Fixture f;
  const std::vector<std::string> qs = {"where does the fox live ?", "who is anna ?"};
  const auto before = Pipeline(f.params, f.vocab, f.config).run(qs, kContext, Mode::standard_rag);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto* t : f.params.tensors(model::ParamGroup::memory)) {
    for (double& v : t->values()) v += noise(rng);
  }
  const auto after = Pipeline(f.params, f.vocab, f.config).run(qs, kContext, Mode::standard_rag);
  for (std::size_t i = 0; i < qs.size(); ++i) expect_same(before[i], after[i]);
}

TEST(Pipeline, PermutingQueriesPermutesResults) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  std::vector<std::string> qs = {"where does the fox live ?", "who is anna ?", "where is the tower ?"};
  const auto a = p.run(qs, kContext, Mode::memorag);
  std::reverse(qs.begin(), qs.end());
  const auto b = p.run(qs, kContext, Mode::memorag);
  for (std::size_t i = 0; i < qs.size(); ++i) expect_same(a[i], b[qs.size() - 1 - i]);
}

TEST(Pipeline, OffloadedMemoryGivesIdenticalResults) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  const std::vector<std::string> qs = {"where does the fox live ?", "who is anna ?"};
  const auto fresh = p.run(qs, kContext, Mode::memorag);
  const auto path = std::filesystem::temp_directory_path() / ("pipeline_mem_" + std::to_string(::getpid()) + ".mrag");
  memory::offload(memory::memorize(f.vocab.encode(kContext), f.params, f.config.beta), path);
  const auto loaded = memory::load(path, f.params);
  std::filesystem::remove(path);
  const auto reused = p.run(qs, kContext, Mode::memorag, &loaded);
  for (std::size_t i = 0; i < qs.size(); ++i) expect_same(fresh[i], reused[i]);
}

TEST(Pipeline, RejectsMemoryFromOtherWeightsOrContext) {
  Fixture f;
  Pipeline p(f.params, f.vocab, f.config);
  auto other = model::init_parameters(f.params.config, {.seed = 99});
  const auto foreign = memory::memorize(f.vocab.encode(kContext), other, 4);
  EXPECT_THROW(p.generate_clues("who is anna ?", foreign), CompatibilityError);
  EXPECT_THROW(p.run({"who is anna ?"}, kContext, Mode::memorag, &foreign), CompatibilityError);
  const auto elsewhere = memory::memorize(f.vocab.encode("the fox runs ."), f.params, 4);
  EXPECT_THROW(p.run({"who is anna ?"}, kContext, Mode::memorag, &elsewhere), CompatibilityError);
}

TEST(Pipeline, SeparateGeneratorIsUsedForAnswers) {
  Fixture f;
  auto gen = model::init_parameters(f.params.config, {.seed = 42});
  Pipeline same(f.params, f.vocab, f.config);
  Pipeline split(f.params, f.vocab, f.config, &gen);
  Pipeline gen_only(gen, f.vocab, f.config);
  const std::string ev = "anna berg dwells in oslo .";
  EXPECT_EQ(split.answer("who is anna ?", ev), gen_only.answer("who is anna ?", ev));
  const auto m = memory::memorize(f.vocab.encode(kContext), f.params, 4);
  EXPECT_EQ(split.generate_clues("who is anna ?", m).raw, same.generate_clues("who is anna ?", m).raw);
}

TEST(Pipeline, OverfitCopyGeneratorAnswersFromEvidence) {
  // base-stage training on "<ans> NAME dwells in CITY . <q> where ? <sep> CITY <eos>"
  const std::vector<std::string> names = {"anna", "omar", "ivan", "lena"};
  const std::vector<std::string> cities = {"oslo", "rome", "lima", "cairo"};
  auto vocab = text::Vocabulary::build(std::vector<std::string>{"dwells in . where ? anna omar ivan lena oslo rome lima cairo"});
  model::ModelConfig c;
  c.vocab_size = vocab.size();
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.window_l = 16;
  c.mem_k = 4;
  c.max_seq = 64;
  auto params = model::init_parameters(c, {.seed = 5});
  training::TrainData data;
  for (const auto& n : names) {
    for (const auto& city : cities) {
      const auto prompt = text::answer_prompt({}, vocab.encode(n + " dwells in " + city + " ."), vocab.encode("where ?"));
      training::BaseSample s{prompt, prompt.size()};
      const auto target = text::with_eos(vocab.encode(city));
      s.tokens.insert(s.tokens.end(), target.begin(), target.end());
      data.base.push_back(s);
    }
  }
  auto tc = training::default_train_config(training::Stage::base);
  tc.learning_rate = 0.05;
  tc.batch_size = 4;
  tc.max_steps = 300;
  tc.clip_norm = 1.0;
  training::train(params, data, tc);
  PipelineConfig pc;
  pc.answer_max_tokens = 3;
  Pipeline p(params, vocab, pc);
  std::size_t correct = 0;
  for (const auto& n : names) {
    for (const auto& city : cities) correct += p.answer("where ?", n + " dwells in " + city + " .") == city;
  }
  EXPECT_EQ(correct, names.size() * cities.size());
}
