#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "zsnmt/common.hpp"

namespace zsnmt {

// A synthetic language: a bijective surface mapping of a shared interlingua
// plus a fixed local reordering. Every language owns the disjoint surface
// block [lang_id*V, (lang_id+1)*V).
struct LanguageSpec {
  int lang_id = 0;
  int base_vocab = 0;                 // V, semantic symbols 0..V-1
  std::vector<int> sym_to_surf;       // within-block surface id per symbol
  std::vector<int> surf_to_sym;       // inverse of the above
  int window = 1;                     // reorder window size, 1..3
  std::vector<int> window_perm;       // permutation of 0..window-1
  std::set<int> split_set;            // symbols realized as two tokens (off by default)
  std::vector<int> split_payload;     // second token id per split symbol, aligned with split_set order

  int block_base() const { return lang_id * base_vocab; }
  bool owns_token(int surface) const {
    return surface >= block_base() && surface < block_base() + base_vocab;
  }
};

enum class TopologyKind { star, chain, custom };

// Supervision graph over languages. Edges are undirected; training covers
// both directions of every edge, every other ordered pair is zero-shot.
struct LanguageTopology {
  TopologyKind kind = TopologyKind::star;
  int n_languages = 0;
  std::vector<std::pair<int, int>> edges;  // normalized a < b

  static LanguageTopology star(int n_languages, int hub = 0);
  static LanguageTopology chain(int n_languages);
  static LanguageTopology custom(int n_languages, std::vector<std::pair<int, int>> edges);

  bool supervised(int a, int b) const;
  bool connected() const;
  int distance(int src, int tgt) const;  // shortest-path hops on the edge graph
  std::string name() const;

  std::vector<std::pair<int, int>> supervised_directions() const;  // ordered pairs
  std::vector<std::pair<int, int>> zero_shot_directions() const;
};

struct ParallelExample {
  int src_lang = 0;
  int tgt_lang = 0;
  std::vector<int> src;  // surface tokens
  std::vector<int> tgt;
  int64_t interlingua_id = 0;
};

struct CorpusMeta {
  std::string topology;
  int n_languages = 0;
  int base_vocab = 0;
  uint64_t seed = 0;
  int len_min = 0, len_max = 0;
  double p_multiway = 0.0;
  size_t n_train = 0, n_valid = 0, n_test = 0;
  std::string config_digest;    // stamped by the CLI, empty when built in-process
  std::string topology_digest;
};

struct Corpus {
  LanguageTopology topology;
  std::vector<LanguageSpec> specs;
  std::vector<ParallelExample> train;  // supervised directions only
  std::vector<ParallelExample> valid;  // supervised directions only (checkpoint selection)
  std::vector<ParallelExample> test;   // all directions, zero-shot flags derivable
  CorpusMeta meta;
};

// Deterministic in (seed, lang_id). n_splits > 0 turns on two-token
// realizations for that many symbols (reserved marker scheme).
LanguageSpec make_language_spec(uint64_t seed, int lang_id, int base_vocab_size,
                                int n_splits = 0);

std::vector<int> realize_sentence(const std::vector<int>& interlingua, const LanguageSpec& spec);

// Exact inverse of realize_sentence; throws value_error on tokens outside the
// language's surface block or malformed split pairs.
std::vector<int> invert_sentence(const std::vector<int>& surface, const LanguageSpec& spec);

std::vector<int> oracle_translate(const std::vector<int>& sentence, const LanguageSpec& src_spec,
                                  const LanguageSpec& tgt_spec);

struct CorpusParams {
  int n_train_per_pair = 4000;
  int n_eval_per_direction = 200;
  int n_valid_per_direction = 64;
  double p_multiway = 0.6;
  uint64_t seed = 1;
  int len_min = 5;
  int len_max = 12;
};

Corpus build_corpus(const LanguageTopology& topology, const std::vector<LanguageSpec>& specs,
                    const CorpusParams& params);

// Tab-separated split files plus a sidecar metadata file, byte-stable for a
// given corpus.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace zsnmt
