#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "memorag/error.hpp"
#include "memorag/retrieval/bm25.hpp"
#include "memorag/text/tokenizer.hpp"

namespace memorag::evalbench {

struct Entity {
  std::string alias;      // how queries refer to it
  std::string canonical;  // how the evidence refers to it
};

/// Fixed alias table shared by every generated task.
inline const std::vector<Entity>& entity_table() {
  static const std::vector<Entity> table = {
      {"red king", "anna berg"},     {"old sailor", "omar lind"},  {"quiet baker", "ivan ross"},
      {"tall painter", "lena marsh"}, {"young doctor", "paul kent"}, {"blind poet", "nina holt"},
      {"lucky farmer", "karl frost"}, {"silver knight", "rosa vane"},
  };
  return table;
}

inline const std::vector<std::string>& city_names() {
  static const std::vector<std::string> cities = {"paris", "rome",  "oslo",  "cairo", "lima",
                                                  "tokyo", "delhi", "quito", "dakar", "hanoi"};
  return cities;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "bread", "salt",  "river", "hill",   "cloud", "wind",  "sand",  "grass", "lamp",  "door",
      "table", "chair", "cup",   "plate",  "song",  "dance", "bridge", "tower", "field", "road",
      "snow",  "leaf",  "tree",  "bird",   "fish",  "horse", "cart",  "boat",  "rain",  "moon"};
  return words;
}

struct QAPair {
  std::string query;
  std::string answer;
  std::string clue;  // the canonical name: the lexical bridge to the evidence
  std::size_t gold_chunk_id = 0;
};

struct SyntheticTask {
  std::string context;
  std::map<std::string, std::string> alias_map;
  std::vector<QAPair> qa;
  std::vector<std::size_t> gold_chunk_ids;
  std::uint64_t seed = 0;
};

struct TaskGenConfig {
  std::size_t chunk_max = 32;
  std::size_t entities_per_doc = 2;
};

inline std::string query_for(const std::string& alias) { return "where does the " + alias + " live ?"; }

namespace detail_tasks {

using Rng = std::mt19937_64;

inline std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

/// Appends filler sentences until `pieces` holds exactly `target` tokens.
inline void pad_with_filler(std::vector<std::string>& pieces, std::size_t target, Rng& rng) {
  const auto& words = filler_words();
  while (pieces.size() < target) {
    const std::size_t room = target - pieces.size();
    std::size_t len = 3 + pick(rng, 5);  // words, plus the full stop
    if (len + 1 > room) len = room - 1;
    else if (room - (len + 1) == 1) ++len;  // never leave a lone full stop
    for (std::size_t i = 0; i < len; ++i) pieces.push_back(words[pick(rng, words.size())]);
    pieces.push_back(".");
  }
}

inline void append_words(std::vector<std::string>& pieces, const std::string& sentence) {
  for (const auto& p : text::split_pieces(sentence)) pieces.push_back(p.text);
}

inline std::string join(const std::vector<std::string>& pieces) {
  std::string out;
  for (const auto& p : pieces) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

inline std::string gold_paragraph(const Entity& e, const std::string& city, std::size_t chunk_max, Rng& rng) {
  std::vector<std::string> pieces;
  append_words(pieces, e.canonical + " dwells in " + city + " .");
  const auto& words = filler_words();
  append_words(pieces, e.canonical + " keeps a " + words[pick(rng, words.size())] + " .");
  pad_with_filler(pieces, chunk_max, rng);
  return join(pieces);
}

inline std::string distractor_paragraph(const Entity& e, std::size_t chunk_max, Rng& rng) {
  static const std::array<const char*, 4> templates = {
      "the {} sang of the {} .", "people wonder where the {} might live .", "the {} does like the {} .",
      "no one knows where the {} does sleep ."};
  const auto& words = filler_words();
  std::vector<std::string> pieces;
  const std::size_t first = pick(rng, templates.size());
  for (std::size_t t : {first, (first + 1 + pick(rng, templates.size() - 1)) % templates.size()}) {
    std::string s = templates[t];
    s.replace(s.find("{}"), 2, e.alias);
    if (const auto at = s.find("{}"); at != std::string::npos) s.replace(at, 2, words[pick(rng, words.size())]);
    append_words(pieces, s);
  }
  pad_with_filler(pieces, chunk_max, rng);
  return join(pieces);
}

}  // namespace detail_tasks

/// Builds one document per task: for each chosen entity a gold paragraph
/// (canonical name and city, no query words) and distractor paragraphs that
/// repeat the alias and the query wording. Each paragraph is exactly one
/// chunk. Documents where the canonical clue cannot pull the gold chunk into
/// the top 3 next to the query, or where the query alone finds it, are redrawn.
inline std::vector<SyntheticTask> gen_indirection_tasks(std::uint64_t seed, std::size_t n_docs, std::size_t doc_len,
                                                        const TaskGenConfig& cfg = {}) {
  detail::require(doc_len >= 4 * cfg.chunk_max, "gen_indirection_tasks: doc_len must be >= 4 * chunk_max");
  detail::require(cfg.chunk_max >= 16, "gen_indirection_tasks: chunk_max must be >= 16");
  const std::size_t n_paragraphs = doc_len / cfg.chunk_max;
  detail::require(n_paragraphs >= 2 * cfg.entities_per_doc, "gen_indirection_tasks: document too short");
  const auto& table = entity_table();
  detail::require(cfg.entities_per_doc >= 1 && cfg.entities_per_doc <= table.size(),
                  "gen_indirection_tasks: bad entity count");
  detail_tasks::Rng rng(seed);
  std::vector<SyntheticTask> tasks;
  while (tasks.size() < n_docs) {
    SyntheticTask task;
    task.seed = seed;
    std::vector<std::size_t> ids(table.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(cfg.entities_per_doc);
    std::vector<std::string> cities = city_names();
    std::shuffle(cities.begin(), cities.end(), rng);

    // (paragraph text, entity slot or -1 for distractors)
    std::vector<std::pair<std::string, int>> paragraphs;
    for (std::size_t e = 0; e < ids.size(); ++e) {
      paragraphs.emplace_back(detail_tasks::gold_paragraph(table[ids[e]], cities[e], cfg.chunk_max, rng),
                              static_cast<int>(e));
    }
    for (std::size_t i = 0; paragraphs.size() < n_paragraphs; ++i) {
      paragraphs.emplace_back(detail_tasks::distractor_paragraph(table[ids[i % ids.size()]], cfg.chunk_max, rng), -1);
    }
    std::shuffle(paragraphs.begin(), paragraphs.end(), rng);

    std::vector<std::size_t> gold_of(ids.size());
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      if (!task.context.empty()) task.context += ' ';
      task.context += paragraphs[p].first;
      if (paragraphs[p].second >= 0) gold_of[static_cast<std::size_t>(paragraphs[p].second)] = p;
    }
    const auto index = retrieval::build_index(retrieval::chunk_context(task.context, cfg.chunk_max));
    if (index.size() != paragraphs.size()) continue;

    bool usable = true;
    for (std::size_t e = 0; e < ids.size(); ++e) {
      const Entity& ent = table[ids[e]];
      QAPair qa{query_for(ent.alias), cities[e], ent.canonical, gold_of[e]};
      const std::vector<std::string> q_only = {qa.query};
      const std::vector<std::string> with_clue = {qa.clue, qa.query};
      if (retrieval::retrieve(q_only, index, 3).contains(qa.gold_chunk_id) ||
          !retrieval::retrieve(with_clue, index, 3).contains(qa.gold_chunk_id)) {
        usable = false;
      }
      task.alias_map[ent.alias] = ent.canonical;
      task.gold_chunk_ids.push_back(qa.gold_chunk_id);
      task.qa.push_back(std::move(qa));
    }
    if (usable) tasks.push_back(std::move(task));
  }
  return tasks;
}

/// Every word the generator can emit, for building a closed vocabulary.
inline std::vector<std::string> task_lexicon() {
  std::vector<std::string> texts = {"where does the might live ? . dwells in keeps a people wonder sang of like "
                                    "no one knows sleep"};
  for (const auto& e : entity_table()) texts.push_back(e.alias + " " + e.canonical);
  for (const auto& c : city_names()) texts.push_back(c);
  for (const auto& w : filler_words()) texts.push_back(w);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& t : texts) {
    for (const auto& p : text::split_pieces(t)) {
      if (seen.insert(p.text).second) out.push_back(p.text);
    }
  }
  return out;
}

}  // namespace memorag::evalbench
