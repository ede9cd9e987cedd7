// memorag: memory formation, clue-guided retrieval, training and evaluation.
//
// Exit codes: 0 ok, 2 bad input (including capacity and format problems),
// 3 incompatible artifacts, 4 numeric failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "memorag/evalbench/bench.hpp"
#include "memorag/evalbench/experiment.hpp"
#include "memorag/memory/memory.hpp"
#include "memorag/model/checkpoint.hpp"
#include "memorag/pipeline/pipeline.hpp"
#include "memorag/training/rlgf.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace memorag;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& body) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << body;
    if (!out) throw InputError("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

evalbench::CorpusRecord record_from_json(const json& j, const std::string& where) {
  evalbench::CorpusRecord r;
  try {
    r.context = j.at("context").get<std::string>();
    r.queries = j.value("queries", std::vector<std::string>{});
    r.gold_answers = j.value("gold_answers", std::vector<std::string>{});
    if (j.contains("clues")) {
      for (const auto& c : j.at("clues")) {
        r.clues.push_back(c.is_string() ? std::vector<std::string>{c.get<std::string>()}
                                        : c.get<std::vector<std::string>>());
      }
    }
    r.gold_chunk_ids = j.value("gold_chunk_ids", std::vector<std::size_t>{});
  } catch (const json::exception& e) {
    throw InputError(where + ": " + e.what());
  }
  try {
    r.validate();
  } catch (const InputError& e) {
    throw InputError(where + ": " + e.what());
  }
  return r;
}

json record_to_json(const evalbench::CorpusRecord& r) {
  json j{{"context", r.context}, {"queries", r.queries}};
  if (!r.gold_answers.empty()) j["gold_answers"] = r.gold_answers;
  if (!r.clues.empty()) j["clues"] = r.clues;
  if (!r.gold_chunk_ids.empty()) j["gold_chunk_ids"] = r.gold_chunk_ids;
  return j;
}

std::vector<evalbench::CorpusRecord> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read corpus " + path);
  std::vector<evalbench::CorpusRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (retrieval::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(path + ":" + std::to_string(n) + ": " + e.what());
    }
    out.push_back(record_from_json(j, path + ":" + std::to_string(n)));
  }
  if (out.empty()) throw InputError("corpus " + path + " has no records");
  return out;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

/// "4096", "4k" (4096), "2K".
std::size_t parse_length(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw InputError("bad length '" + s + "'");
  }
  const std::string suffix = s.substr(used);
  if (suffix == "k" || suffix == "K") return static_cast<std::size_t>(v) * 1024;
  if (!suffix.empty()) throw InputError("bad length '" + s + "'");
  return static_cast<std::size_t>(v);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = retrieval::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ModelOptions {
  std::string checkpoint;
  std::string generator;
};

struct PipelineOptions {
  std::size_t hits = 3;
  std::size_t chunk_max = 512;
  std::size_t beta = 4;
  std::size_t clue_max = 32;
  std::size_t answer_max = 16;
  std::string clue_prefix;
  std::string answer_prefix;
  bool no_query = false;

  pipeline::PipelineConfig config() const {
    pipeline::PipelineConfig c;
    c.hits = hits;
    c.chunk_max = chunk_max;
    c.beta = beta;
    c.clue_max_tokens = clue_max;
    c.answer_max_tokens = answer_max;
    c.clue_prefix = clue_prefix;
    c.answer_prefix = answer_prefix;
    c.include_original_query = !no_query;
    return c;
  }
};

void add_pipeline_options(CLI::App* cmd, PipelineOptions& o) {
  cmd->add_option("--hits", o.hits, "Evidence chunks per query")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--chunk-max", o.chunk_max, "Maximum tokens per retrieval chunk")->capture_default_str();
  cmd->add_option("--beta", o.beta, "Compression ratio (4, 8, 16, 32 or 64)")->capture_default_str();
  cmd->add_option("--clue-max", o.clue_max, "Token budget for clue generation")->capture_default_str();
  cmd->add_option("--answer-max", o.answer_max, "Token budget for answers")->capture_default_str();
  cmd->add_option("--clue-prefix", o.clue_prefix, "Text placed before the clue prompt");
  cmd->add_option("--answer-prefix", o.answer_prefix, "Text placed before the answer prompt");
  cmd->add_flag("--no-query", o.no_query, "Retrieve with clues only, without the original query");
}

struct Manifest {
  std::string path;
  json body;

  void write() const { write_text_atomic(path, body.dump(2) + "\n"); }
};

Manifest start_manifest(const CLI::App& cmd, const std::string& requested,
                        const std::string& out_path, json inputs, json outputs, json seeds) {
  Manifest m;
  m.path = !requested.empty() ? requested
           : !out_path.empty() ? out_path + ".manifest.json"
                               : "memorag-" + cmd.get_name() + ".manifest.json";
  m.body = {{"command", cmd.get_name()},
            {"version", kVersion},
            {"started", utc_now()},
            {"config", cmd.config_to_str(true, false)},
            {"inputs", std::move(inputs)},
            {"outputs", std::move(outputs)},
            {"seeds", std::move(seeds)}};
  m.write();
  return m;
}

void print_stats(const memory::MemoryStats& s) {
  std::cout << "raw_tokens " << s.n_raw_tokens << "\nmemory_entries " << s.n_mem_entries << "\nbytes " << s.bytes
            << "\nbeta " << s.beta << "\n";
}

model::Checkpoint load_model(const std::string& path) {
  if (path.empty()) throw InputError("--checkpoint is required");
  return model::load_checkpoint(path);
}

std::optional<model::Checkpoint> load_generator(const std::string& path, const text::Vocabulary& vocab) {
  if (path.empty()) return std::nullopt;
  auto g = model::load_checkpoint(path);
  if (g.vocab.size() != vocab.size()) {
    throw CompatibilityError("generator vocabulary (" + std::to_string(g.vocab.size()) +
                             " entries) differs from the memory model's (" + std::to_string(vocab.size()) + ")");
  }
  return g;
}

json result_json(const pipeline::TaskResult& r, bool timings) {
  json j{{"query", r.query}, {"mode", pipeline::mode_name(r.mode)}, {"answer", r.answer},
         {"evidence_ids", r.evidence.ids()}, {"low_confidence", r.low_confidence}, {"truncated", r.truncated}};
  if (r.clues) j["clues"] = r.clues->clue_strings;
  if (timings) {
    j["timings_ms"] = {{"memory", r.timings.memory_ms},
                       {"index", r.timings.index_ms},
                       {"clues", r.timings.clue_ms},
                       {"retrieval", r.timings.retrieval_ms},
                       {"answer", r.timings.answer_ms}};
  }
  return j;
}

void print_result(const pipeline::TaskResult& r, bool timings) {
  std::cout << "query: " << r.query << "\nmode: " << pipeline::mode_name(r.mode) << "\n";
  if (r.clues) {
    std::cout << "clues:\n";
    for (const auto& c : r.clues->clue_strings) std::cout << "  - " << c << "\n";
  }
  std::cout << "evidence:";
  for (auto id : r.evidence.ids()) std::cout << " " << id;
  std::cout << "\nanswer: " << r.answer << "\n";
  if (r.low_confidence) std::cout << "note: answered without evidence\n";
  if (r.truncated) std::cout << "note: context truncated to fit the generator\n";
  if (timings) {
    std::cout << std::fixed << std::setprecision(2) << "timings_ms: memory " << r.timings.memory_ms << " index "
              << r.timings.index_ms << " clues " << r.timings.clue_ms << " retrieval " << r.timings.retrieval_ms
              << " answer " << r.timings.answer_ms << "\n";
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CompatibilityError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memorag: memory-guided retrieval over long contexts"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "INI file of option values; command-line flags take precedence");
  app.require_subcommand(1);
  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "Run manifest path (default: <out>.manifest.json)");

  // init
  auto* init = app.add_subcommand("init", "Create a randomly initialised checkpoint");
  std::string init_out, init_vocab_from;
  bool init_task_lexicon = false;
  auto mcfg = evalbench::task_model_config(0);
  std::uint64_t init_seed = 0;
  init->add_option("--out", init_out, "Checkpoint path")->required();
  init->add_option("--vocab-from", init_vocab_from, "Corpus whose words form the vocabulary");
  init->add_flag("--task-lexicon", init_task_lexicon, "Use the synthetic task vocabulary");
  init->add_option("--d-model", mcfg.d_model)->capture_default_str();
  init->add_option("--layers", mcfg.n_layers)->capture_default_str();
  init->add_option("--heads", mcfg.n_heads)->capture_default_str();
  init->add_option("--ffn-mult", mcfg.ffn_mult)->capture_default_str();
  init->add_option("--window", mcfg.window_l, "Raw tokens per memory window")->capture_default_str();
  init->add_option("--mem-k", mcfg.mem_k, "Memory slots per window")->capture_default_str();
  init->add_option("--max-seq", mcfg.max_seq, "Native context length")->capture_default_str();
  init->add_option("--seed", init_seed)->capture_default_str();

  // gen-tasks
  auto* gen = app.add_subcommand("gen-tasks", "Write synthetic alias-indirection tasks as a corpus");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t gen_docs = 10, gen_len = 256;
  evalbench::TaskGenConfig gen_cfg;
  gen->add_option("--out", gen_out, "Corpus path (JSON lines)")->required();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--docs", gen_docs)->capture_default_str();
  gen->add_option("--doc-len", gen_len, "Tokens per document")->capture_default_str();
  gen->add_option("--chunk-max", gen_cfg.chunk_max)->capture_default_str();
  gen->add_option("--entities", gen_cfg.entities_per_doc, "Entities (queries) per document")->capture_default_str();

  // memorize
  auto* mem = app.add_subcommand("memorize", "Form and save the compact memory of a context");
  std::string mem_input, mem_out;
  ModelOptions mem_model;
  std::size_t mem_beta = 4;
  mem->add_option("--input", mem_input, "Context text file")->required();
  mem->add_option("--out", mem_out, "Memory file")->required();
  mem->add_option("--checkpoint", mem_model.checkpoint)->required();
  mem->add_option("--beta", mem_beta, "Compression ratio (4, 8, 16, 32 or 64)")->capture_default_str();

  // query
  auto* query = app.add_subcommand("query", "Answer a query over a context");
  std::string q_context, q_memory, q_text, q_mode = "memorag";
  ModelOptions q_model;
  PipelineOptions q_opts;
  bool q_json = false, q_timings = false;
  query->add_option("--context", q_context, "Context text file")->required();
  query->add_option("--query", q_text, "Query text")->required();
  query->add_option("--checkpoint", q_model.checkpoint)->required();
  query->add_option("--generator", q_model.generator, "Separate answer-generator checkpoint");
  query->add_option("--memory", q_memory, "Saved memory of the context (formed on the fly otherwise)");
  query->add_option("--mode", q_mode, "memorag, standard_rag or full")->capture_default_str();
  query->add_flag("--json", q_json, "Print a JSON record");
  query->add_flag("--timings", q_timings, "Include timings");
  add_pipeline_options(query, q_opts);

  // train
  auto* train = app.add_subcommand("train", "Run one training stage on a corpus");
  std::string t_stage = "pretrain", t_data, t_out, t_trace;
  ModelOptions t_model;
  PipelineOptions t_opts;
  double t_lr = -1.0, t_clip = 0.0;
  std::size_t t_batch = 0, t_epochs = 0, t_steps = 0;
  std::uint64_t t_seed = 0;
  train->add_option("--stage", t_stage, "base, pretrain, sft or rlgf")->capture_default_str();
  train->add_option("--data", t_data, "Corpus path (JSON lines)")->required();
  train->add_option("--checkpoint", t_model.checkpoint, "Starting checkpoint")->required();
  train->add_option("--out", t_out, "Trained checkpoint path")->required();
  train->add_option("--trace", t_trace, "Loss trace output (JSON lines)");
  train->add_option("--lr", t_lr, "Learning rate (default: stage default)");
  train->add_option("--batch", t_batch, "Batch size (default: stage default)");
  train->add_option("--epochs", t_epochs, "Epochs (default: stage default)");
  train->add_option("--max-steps", t_steps, "Stop after this many steps");
  train->add_option("--clip", t_clip, "Gradient-norm clip, 0 disables")->capture_default_str();
  train->add_option("--seed", t_seed)->capture_default_str();
  add_pipeline_options(train, t_opts);

  // eval
  auto* eval = app.add_subcommand("eval", "Score modes on a corpus with gold answers");
  std::string e_data, e_modes = "memorag,standard_rag,full", e_out;
  ModelOptions e_model;
  PipelineOptions e_opts;
  eval->add_option("--data", e_data, "Corpus path (JSON lines)")->required();
  eval->add_option("--checkpoint", e_model.checkpoint)->required();
  eval->add_option("--generator", e_model.generator, "Separate answer-generator checkpoint");
  eval->add_option("--modes", e_modes, "Comma-separated modes")->capture_default_str();
  eval->add_option("--out", e_out, "Per-query results (JSON lines)");
  add_pipeline_options(eval, e_opts);

  // bench
  auto* bench = app.add_subcommand("bench", "Indexing/retrieval latency and cache size per context length");
  std::string b_lengths = "1k,2k,4k", b_out;
  ModelOptions b_model;
  evalbench::BenchConfig b_cfg;
  bench->add_option("--checkpoint", b_model.checkpoint)->required();
  bench->add_option("--lengths", b_lengths, "Comma-separated context lengths, k = 1024")->capture_default_str();
  bench->add_option("--beta", b_cfg.beta)->capture_default_str();
  bench->add_option("--repeats", b_cfg.repeats)->capture_default_str();
  bench->add_option("--chunk-max", b_cfg.chunk_max)->capture_default_str();
  bench->add_option("--clue-max", b_cfg.clue_max_tokens)->capture_default_str();
  bench->add_option("--seed", b_cfg.seed)->capture_default_str();
  bench->add_option("--out", b_out, "Report records (JSON lines)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (init->parsed()) {
      start_manifest(*init, manifest_path, init_out, {{"vocab_from", init_vocab_from}}, {{"checkpoint", init_out}},
                     {{"init", init_seed}});
      text::Vocabulary vocab;
      if (init_task_lexicon) vocab = text::Vocabulary::from_words(evalbench::task_lexicon());
      if (!init_vocab_from.empty()) {
        std::vector<std::string> texts;
        for (const auto& r : read_corpus(init_vocab_from)) {
          texts.push_back(r.context);
          for (const auto& q : r.queries) texts.push_back(q);
          for (const auto& a : r.gold_answers) texts.push_back(a);
          for (const auto& cl : r.clues) texts.insert(texts.end(), cl.begin(), cl.end());
        }
        const auto found = text::Vocabulary::build(texts);
        for (std::size_t id = text::Vocabulary::n_special; id < found.size(); ++id) {
          vocab.add(found.word(static_cast<text::TokenId>(id)));
        }
      }
      if (vocab.size() == text::Vocabulary::n_special) throw InputError("init: give --task-lexicon or --vocab-from");
      mcfg.vocab_size = vocab.size();
      const auto params = model::init_parameters(mcfg, {.seed = init_seed});
      model::save_checkpoint(init_out, params, vocab);
      std::cout << "vocab " << vocab.size() << "\nparameters " << params.count() << "\nfingerprint "
                << params.fingerprint() << "\n";
      return 0;
    }

    if (gen->parsed()) {
      start_manifest(*gen, manifest_path, gen_out, json::object(), {{"corpus", gen_out}}, {{"tasks", gen_seed}});
      std::string body;
      for (const auto& r : evalbench::to_corpus(evalbench::gen_indirection_tasks(gen_seed, gen_docs, gen_len, gen_cfg))) {
        body += record_to_json(r).dump() + "\n";
      }
      write_text_atomic(gen_out, body);
      std::cout << "documents " << gen_docs << "\n";
      return 0;
    }

    if (mem->parsed()) {
      if (!fs::exists(mem_input)) throw InputError("input not found: " + mem_input);
      start_manifest(*mem, manifest_path, mem_out, {{"input", mem_input}, {"checkpoint", mem_model.checkpoint}},
                     {{"memory", mem_out}}, json::object());
      const auto ck = load_model(mem_model.checkpoint);
      const auto m = memory::memorize(ck.vocab.encode(read_text(mem_input)), ck.params, mem_beta);
      memory::offload(m, mem_out);
      print_stats(memory::memory_stats(m));
      return 0;
    }

    if (query->parsed()) {
      start_manifest(*query, manifest_path, "",
                     {{"context", q_context}, {"memory", q_memory}, {"checkpoint", q_model.checkpoint},
                      {"generator", q_model.generator}},
                     json::object(), json::object());
      const auto ck = load_model(q_model.checkpoint);
      const auto gen_ck = load_generator(q_model.generator, ck.vocab);
      const pipeline::Pipeline pl(ck.params, ck.vocab, q_opts.config(), gen_ck ? &gen_ck->params : nullptr);
      const auto mode = pipeline::parse_mode(q_mode);
      std::optional<memory::MemoryState> saved;
      if (!q_memory.empty() && mode == pipeline::Mode::memorag) saved = memory::load(q_memory, ck.params);
      const auto results = pl.run({q_text}, read_text(q_context), mode, saved ? &*saved : nullptr);
      if (q_json) std::cout << result_json(results.at(0), q_timings).dump() << "\n";
      else print_result(results.at(0), q_timings);
      return 0;
    }

    if (train->parsed()) {
      const auto stage = training::parse_stage(t_stage);
      start_manifest(*train, manifest_path, t_out, {{"data", t_data}, {"checkpoint", t_model.checkpoint}},
                     {{"checkpoint", t_out}, {"trace", t_trace}}, {{"train", t_seed}});
      auto ck = load_model(t_model.checkpoint);
      const auto corpus = read_corpus(t_data);
      const auto pc = t_opts.config();
      auto data = evalbench::training_data(corpus, ck.vocab, pc);
      auto tc = training::default_train_config(stage);
      if (t_lr >= 0.0) tc.learning_rate = t_lr;
      if (t_batch) tc.batch_size = t_batch;
      if (t_epochs) tc.epochs = t_epochs;
      tc.max_steps = t_steps;
      tc.clip_norm = t_clip;
      tc.seed = t_seed;
      tc.beta = pc.beta;
      if (stage == training::Stage::rlgf) {
        std::vector<training::RlgfSample> samples;
        for (const auto& r : corpus) {
          if (r.clues.empty() || r.gold_answers.empty()) continue;
          for (std::size_t i = 0; i < r.queries.size(); ++i) {
            samples.push_back({r.context, r.queries[i], r.gold_answers[i], r.clues[i]});
          }
        }
        const pipeline::Pipeline pl(ck.params, ck.vocab, pc);
        training::RlgfBuildConfig bc;
        bc.hits = pc.hits;
        bc.chunk_max = pc.chunk_max;
        bc.seed = t_seed;
        auto built = training::build_rlgf_pairs(
            samples, ck.vocab,
            [&](const std::string& q, const retrieval::EvidenceSet& ev) { return pl.answer(q, ev.text); }, bc);
        for (const auto& s : built.skipped) std::cerr << "skipped " << s << "\n";
        data.rlgf = std::move(built.pairs);
      }
      std::cout << "stage " << training::stage_name(stage) << " samples " << data.size(stage) << " lr "
                << tc.learning_rate << " batch " << tc.batch_size << "\n";
      std::string trace;
      const auto report = training::train(ck.params, data, tc, [&](std::size_t step, double loss) {
        trace += json{{"step", step}, {"loss", loss}}.dump() + "\n";
      });
      model::save_checkpoint(t_out, ck.params, ck.vocab);
      if (!t_trace.empty()) write_text_atomic(t_trace, trace);
      const auto smooth = training::smooth(report.loss_trace, 0.1);
      std::cout << "steps " << report.steps << "\nloss_first " << report.loss_trace.front() << "\nloss_smoothed "
                << smooth.back() << "\n";
      return 0;
    }

    if (eval->parsed()) {
      start_manifest(*eval, manifest_path, e_out,
                     {{"data", e_data}, {"checkpoint", e_model.checkpoint}, {"generator", e_model.generator}},
                     {{"results", e_out}}, json::object());
      const auto ck = load_model(e_model.checkpoint);
      const auto gen_ck = load_generator(e_model.generator, ck.vocab);
      const pipeline::Pipeline pl(ck.params, ck.vocab, e_opts.config(), gen_ck ? &gen_ck->params : nullptr);
      std::vector<pipeline::Mode> modes;
      for (const auto& m : split_list(e_modes)) modes.push_back(pipeline::parse_mode(m));
      if (modes.empty()) throw InputError("--modes is empty");
      const auto corpus = read_corpus(e_data);
      if (!e_out.empty()) {
        std::string body;
        for (const auto& r : corpus) {
          for (auto mode : modes) {
            for (const auto& res : pl.run(r.queries, r.context, mode)) body += result_json(res, false).dump() + "\n";
          }
        }
        write_text_atomic(e_out, body);
      }
      const auto scores = evalbench::evaluate(pl, corpus, modes);
      std::cout << std::left << std::setw(14) << "mode" << std::right << std::setw(9) << "queries" << std::setw(9)
                << "hit@" + std::to_string(e_opts.hits) << std::setw(9) << "f1" << std::setw(9) << "rouge_l" << "\n";
      for (auto mode : modes) {
        const auto& s = scores.at(mode);
        std::cout << std::left << std::setw(14) << pipeline::mode_name(mode) << std::right << std::setw(9)
                  << s.queries << std::fixed << std::setprecision(4) << std::setw(9)
                  << (s.gold_known ? std::to_string(s.hit_rate()).substr(0, 6) : std::string("-")) << std::setw(9)
                  << s.mean_f1() << std::setw(9) << s.mean_rouge() << "\n";
      }
      return 0;
    }

    if (bench->parsed()) {
      std::vector<std::size_t> lengths;
      for (const auto& l : split_list(b_lengths)) lengths.push_back(parse_length(l));
      if (lengths.empty()) throw InputError("--lengths is empty");
      std::sort(lengths.begin(), lengths.end());
      start_manifest(*bench, manifest_path, b_out, {{"checkpoint", b_model.checkpoint}}, {{"report", b_out}},
                     {{"contexts", b_cfg.seed}});
      const auto ck = load_model(b_model.checkpoint);
      const auto report = evalbench::bench_efficiency(lengths, ck.params, ck.vocab, b_cfg);
      std::cout << std::left << std::setw(9) << "tokens" << std::setw(14) << "mode" << std::right << std::setw(13)
                << "index_ms" << std::setw(14) << "retrieval_ms" << std::setw(14) << "cache_bytes" << "\n";
      std::string body;
      for (const auto& r : report.rows) {
        std::cout << std::left << std::setw(9) << r.context_tokens << std::setw(14) << r.mode_label << std::right
                  << std::fixed << std::setprecision(3) << std::setw(13) << r.indexing_ms << std::setw(14)
                  << r.retrieval_ms << std::setw(14) << r.cache_bytes << "\n";
        body += json{{"tokens", r.context_tokens}, {"mode", r.mode_label}, {"indexing_ms", r.indexing_ms},
                     {"retrieval_ms", r.retrieval_ms}, {"cache_bytes", r.cache_bytes}, {"beta", report.beta},
                     {"repeats", report.repeats}}
                    .dump() +
                "\n";
      }
      if (!b_out.empty()) write_text_atomic(b_out, body);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
