#include "zsnmt/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <queue>
#include <sstream>

namespace zsnmt {

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

LanguageTopology LanguageTopology::star(int n_languages, int hub) {
  LanguageTopology t;
  t.kind = TopologyKind::star;
  t.n_languages = n_languages;
  for (int i = 0; i < n_languages; ++i)
    if (i != hub) t.edges.emplace_back(std::min(hub, i), std::max(hub, i));
  std::sort(t.edges.begin(), t.edges.end());
  return t;
}

LanguageTopology LanguageTopology::chain(int n_languages) {
  LanguageTopology t;
  t.kind = TopologyKind::chain;
  t.n_languages = n_languages;
  for (int i = 0; i + 1 < n_languages; ++i) t.edges.emplace_back(i, i + 1);
  return t;
}

LanguageTopology LanguageTopology::custom(int n_languages,
                                          std::vector<std::pair<int, int>> edges) {
  LanguageTopology t;
  t.kind = TopologyKind::custom;
  t.n_languages = n_languages;
  for (auto& e : edges) {
    if (e.first == e.second || e.first < 0 || e.second >= n_languages || e.first >= n_languages ||
        e.second < 0)
      throw value_error("custom topology: bad edge " + std::to_string(e.first) + "-" +
                        std::to_string(e.second));
    t.edges.emplace_back(std::min(e.first, e.second), std::max(e.first, e.second));
  }
  std::sort(t.edges.begin(), t.edges.end());
  t.edges.erase(std::unique(t.edges.begin(), t.edges.end()), t.edges.end());
  return t;
}

bool LanguageTopology::supervised(int a, int b) const {
  auto e = std::make_pair(std::min(a, b), std::max(a, b));
  return std::find(edges.begin(), edges.end(), e) != edges.end();
}

bool LanguageTopology::connected() const {
  if (n_languages == 0) return false;
  std::vector<char> seen(static_cast<size_t>(n_languages), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (auto& e : edges) {
      int v = -1;
      if (e.first == u) v = e.second;
      if (e.second == u) v = e.first;
      if (v >= 0 && !seen[static_cast<size_t>(v)]) {
        seen[static_cast<size_t>(v)] = 1;
        ++count;
        q.push(v);
      }
    }
  }
  return count == n_languages;
}

int LanguageTopology::distance(int src, int tgt) const {
  if (src < 0 || src >= n_languages || tgt < 0 || tgt >= n_languages)
    throw value_error("distance: unknown language " + std::to_string(src < 0 || src >= n_languages ? src : tgt));
  if (src == tgt) return 0;
  std::vector<int> dist(static_cast<size_t>(n_languages), -1);
  std::queue<int> q;
  q.push(src);
  dist[static_cast<size_t>(src)] = 0;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (auto& e : edges) {
      int v = e.first == u ? e.second : (e.second == u ? e.first : -1);
      if (v >= 0 && dist[static_cast<size_t>(v)] < 0) {
        dist[static_cast<size_t>(v)] = dist[static_cast<size_t>(u)] + 1;
        q.push(v);
      }
    }
  }
  if (dist[static_cast<size_t>(tgt)] < 0)
    throw value_error("distance: no bridge path between " + std::to_string(src) + " and " +
                      std::to_string(tgt));
  return dist[static_cast<size_t>(tgt)];
}

std::string LanguageTopology::name() const {
  switch (kind) {
    case TopologyKind::star: return "star";
    case TopologyKind::chain: return "chain";
    default: return "custom";
  }
}

std::vector<std::pair<int, int>> LanguageTopology::supervised_directions() const {
  std::vector<std::pair<int, int>> dirs;
  for (auto& e : edges) {
    dirs.emplace_back(e.first, e.second);
    dirs.emplace_back(e.second, e.first);
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::vector<std::pair<int, int>> LanguageTopology::zero_shot_directions() const {
  std::vector<std::pair<int, int>> dirs;
  for (int a = 0; a < n_languages; ++a)
    for (int b = 0; b < n_languages; ++b)
      if (a != b && !supervised(a, b)) dirs.emplace_back(a, b);
  return dirs;
}

// ---------------------------------------------------------------------------
// Language specs and the translation oracle
// ---------------------------------------------------------------------------

LanguageSpec make_language_spec(uint64_t seed, int lang_id, int base_vocab_size, int n_splits) {
  if (base_vocab_size < 8) throw value_error("base_vocab_size must be >= 8");
  if (n_splits < 0 || n_splits > base_vocab_size / 4)
    throw value_error("n_splits out of range");
  LanguageSpec spec;
  spec.lang_id = lang_id;
  spec.base_vocab = base_vocab_size;
  RngStream rng(derive_seed(seed, "lang", lang_id));

  // Split symbols are realized as [marker, payload]; markers live at the top
  // of the block and are excluded from the plain bijection so the inverse
  // map stays unambiguous.
  const int plain_ids = base_vocab_size - n_splits;
  std::vector<int> surf_ids(static_cast<size_t>(plain_ids));
  for (int i = 0; i < plain_ids; ++i) surf_ids[static_cast<size_t>(i)] = i;
  rng.shuffle(surf_ids);

  std::vector<int> symbols(static_cast<size_t>(base_vocab_size));
  for (int s = 0; s < base_vocab_size; ++s) symbols[static_cast<size_t>(s)] = s;
  rng.shuffle(symbols);
  for (int i = 0; i < n_splits; ++i) spec.split_set.insert(symbols[static_cast<size_t>(i)]);

  spec.sym_to_surf.assign(static_cast<size_t>(base_vocab_size), -1);
  spec.surf_to_sym.assign(static_cast<size_t>(base_vocab_size), -1);
  int next_plain = 0;
  int next_marker = base_vocab_size - 1;
  for (int s = 0; s < base_vocab_size; ++s) {
    if (spec.split_set.count(s)) {
      spec.sym_to_surf[static_cast<size_t>(s)] = next_marker;
      spec.surf_to_sym[static_cast<size_t>(next_marker)] = s;
      --next_marker;
    } else {
      spec.sym_to_surf[static_cast<size_t>(s)] = surf_ids[static_cast<size_t>(next_plain++)];
      spec.surf_to_sym[static_cast<size_t>(spec.sym_to_surf[static_cast<size_t>(s)])] = s;
    }
  }
  for (int s : spec.split_set) {
    (void)s;
    spec.split_payload.push_back(rng.next_int(plain_ids));
  }

  spec.window = 1 + rng.next_int(3);
  spec.window_perm.resize(static_cast<size_t>(spec.window));
  for (int i = 0; i < spec.window; ++i) spec.window_perm[static_cast<size_t>(i)] = i;
  rng.shuffle(spec.window_perm);
  return spec;
}

static int split_index(const LanguageSpec& spec, int symbol) {
  int idx = 0;
  for (int s : spec.split_set) {
    if (s == symbol) return idx;
    ++idx;
  }
  return -1;
}

std::vector<int> realize_sentence(const std::vector<int>& interlingua, const LanguageSpec& spec) {
  for (int s : interlingua)
    if (s < 0 || s >= spec.base_vocab)
      throw value_error("realize_sentence: semantic id " + std::to_string(s) +
                        " outside [0," + std::to_string(spec.base_vocab) + ")");
  // Reorder within fixed windows; a trailing partial window keeps its order.
  std::vector<int> reordered(interlingua.size());
  const size_t w = static_cast<size_t>(spec.window);
  for (size_t base = 0; base < interlingua.size(); base += w) {
    const size_t span = std::min(w, interlingua.size() - base);
    for (size_t j = 0; j < span; ++j) {
      const size_t src = span == w ? static_cast<size_t>(spec.window_perm[j]) : j;
      reordered[base + j] = interlingua[base + src];
    }
  }
  std::vector<int> out;
  out.reserve(reordered.size());
  const int blk = spec.block_base();
  for (int s : reordered) {
    out.push_back(blk + spec.sym_to_surf[static_cast<size_t>(s)]);
    const int si = split_index(spec, s);
    if (si >= 0) out.push_back(blk + spec.split_payload[static_cast<size_t>(si)]);
  }
  return out;
}

std::vector<int> invert_sentence(const std::vector<int>& surface, const LanguageSpec& spec) {
  std::vector<int> reordered;
  reordered.reserve(surface.size());
  for (size_t i = 0; i < surface.size(); ++i) {
    const int tok = surface[i];
    if (!spec.owns_token(tok))
      throw value_error("invert_sentence: token " + std::to_string(tok) +
                        " outside surface block of language " + std::to_string(spec.lang_id));
    const int sym = spec.surf_to_sym[static_cast<size_t>(tok - spec.block_base())];
    reordered.push_back(sym);
    const int si = split_index(spec, sym);
    if (si >= 0) {
      if (i + 1 >= surface.size() ||
          surface[i + 1] - spec.block_base() != spec.split_payload[static_cast<size_t>(si)])
        throw value_error("invert_sentence: split symbol " + std::to_string(sym) +
                          " missing its payload token");
      ++i;
    }
  }
  std::vector<int> out(reordered.size());
  const size_t w = static_cast<size_t>(spec.window);
  for (size_t base = 0; base < reordered.size(); base += w) {
    const size_t span = std::min(w, reordered.size() - base);
    for (size_t j = 0; j < span; ++j) {
      const size_t src = span == w ? static_cast<size_t>(spec.window_perm[j]) : j;
      out[base + src] = reordered[base + j];
    }
  }
  return out;
}

std::vector<int> oracle_translate(const std::vector<int>& sentence, const LanguageSpec& src_spec,
                                  const LanguageSpec& tgt_spec) {
  return realize_sentence(invert_sentence(sentence, src_spec), tgt_spec);
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

static std::vector<int> random_interlingua(RngStream& rng, int len_min, int len_max, int vocab) {
  const int len = len_min + rng.next_int(len_max - len_min + 1);
  std::vector<int> s(static_cast<size_t>(len));
  for (int& x : s) x = rng.next_int(vocab);
  return s;
}

Corpus build_corpus(const LanguageTopology& topology, const std::vector<LanguageSpec>& specs,
                    const CorpusParams& params) {
  if (!topology.connected())
    throw value_error("build_corpus: supervision graph is disconnected; zero-shot pairs need a bridge path");
  if (static_cast<int>(specs.size()) != topology.n_languages)
    throw value_error("build_corpus: spec count does not match topology");
  if (params.p_multiway < 0.0 || params.p_multiway > 1.0)
    throw value_error("build_corpus: p_multiway must lie in [0,1]");
  if (params.len_min < 3 || params.len_max < params.len_min)
    throw value_error("build_corpus: bad length range");

  Corpus corpus;
  corpus.topology = topology;
  corpus.specs = specs;
  const int vocab = specs[0].base_vocab;

  // Multiway pool: the same interlingua sentences reused by every pair,
  // mirroring a corpus that is partly true-parallel.
  const int n_shared =
      static_cast<int>(std::lround(params.p_multiway * params.n_train_per_pair));
  RngStream shared_rng(derive_seed(params.seed, "shared-pool"));
  std::vector<std::vector<int>> shared_pool;
  shared_pool.reserve(static_cast<size_t>(n_shared));
  for (int i = 0; i < n_shared; ++i)
    shared_pool.push_back(random_interlingua(shared_rng, params.len_min, params.len_max, vocab));

  int64_t next_unique_id = 1'000'000;
  for (size_t e = 0; e < topology.edges.size(); ++e) {
    const auto [a, b] = topology.edges[e];
    RngStream rng(derive_seed(params.seed, "pair", static_cast<int>(e)));
    std::vector<int> order(static_cast<size_t>(params.n_train_per_pair));
    for (int i = 0; i < params.n_train_per_pair; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);  // interleave shared and pair-specific sentences
    for (int i = 0; i < params.n_train_per_pair; ++i) {
      const int slot = order[static_cast<size_t>(i)];
      std::vector<int> inter;
      int64_t inter_id;
      if (slot < n_shared) {
        inter = shared_pool[static_cast<size_t>(slot)];
        inter_id = slot;
      } else {
        inter = random_interlingua(rng, params.len_min, params.len_max, vocab);
        inter_id = next_unique_id++;
      }
      ParallelExample ex;
      const bool forward = (i % 2) == 0;
      ex.src_lang = forward ? a : b;
      ex.tgt_lang = forward ? b : a;
      ex.src = realize_sentence(inter, specs[static_cast<size_t>(ex.src_lang)]);
      ex.tgt = realize_sentence(inter, specs[static_cast<size_t>(ex.tgt_lang)]);
      ex.interlingua_id = inter_id;
      corpus.train.push_back(std::move(ex));
    }
  }

  int64_t valid_id = 2'000'000'000LL;
  for (auto [s, t] : topology.supervised_directions()) {
    RngStream rng(derive_seed(params.seed, "valid", s, t));
    for (int i = 0; i < params.n_valid_per_direction; ++i) {
      auto inter = random_interlingua(rng, params.len_min, params.len_max, vocab);
      ParallelExample ex;
      ex.src_lang = s;
      ex.tgt_lang = t;
      ex.src = realize_sentence(inter, specs[static_cast<size_t>(s)]);
      ex.tgt = realize_sentence(inter, specs[static_cast<size_t>(t)]);
      ex.interlingua_id = valid_id++;
      corpus.valid.push_back(std::move(ex));
    }
  }

  int64_t test_id = 3'000'000'000LL;
  for (int s = 0; s < topology.n_languages; ++s)
    for (int t = 0; t < topology.n_languages; ++t) {
      if (s == t) continue;
      RngStream rng(derive_seed(params.seed, "test", s, t));
      for (int i = 0; i < params.n_eval_per_direction; ++i) {
        auto inter = random_interlingua(rng, params.len_min, params.len_max, vocab);
        ParallelExample ex;
        ex.src_lang = s;
        ex.tgt_lang = t;
        ex.src = realize_sentence(inter, specs[static_cast<size_t>(s)]);
        ex.tgt = realize_sentence(inter, specs[static_cast<size_t>(t)]);
        ex.interlingua_id = test_id++;
        corpus.test.push_back(std::move(ex));
      }
    }

  corpus.meta.topology = topology.name();
  corpus.meta.n_languages = topology.n_languages;
  corpus.meta.base_vocab = vocab;
  corpus.meta.seed = params.seed;
  corpus.meta.len_min = params.len_min;
  corpus.meta.len_max = params.len_max;
  corpus.meta.p_multiway = params.p_multiway;
  corpus.meta.n_train = corpus.train.size();
  corpus.meta.n_valid = corpus.valid.size();
  corpus.meta.n_test = corpus.test.size();
  return corpus;
}

// ---------------------------------------------------------------------------
// Disk format: one example per line,
//   src_lang \t tgt_lang \t src tokens \t tgt tokens \t interlingua_id
// plus a metadata sidecar that records how the corpus was built.
// ---------------------------------------------------------------------------

static void write_split(const std::string& path, const std::vector<ParallelExample>& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw value_error("cannot open " + path + " for writing");
  for (const auto& ex : split) {
    out << ex.src_lang << '\t' << ex.tgt_lang << '\t';
    for (size_t i = 0; i < ex.src.size(); ++i) out << (i ? " " : "") << ex.src[i];
    out << '\t';
    for (size_t i = 0; i < ex.tgt.size(); ++i) out << (i ? " " : "") << ex.tgt[i];
    out << '\t' << ex.interlingua_id << '\n';
  }
}

static std::vector<ParallelExample> read_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw value_error("cannot open corpus split " + path);
  std::vector<ParallelExample> split;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f0, f1, f2, f3, f4;
    if (!std::getline(ls, f0, '\t') || !std::getline(ls, f1, '\t') ||
        !std::getline(ls, f2, '\t') || !std::getline(ls, f3, '\t') || !std::getline(ls, f4))
      throw value_error("malformed corpus line in " + path + ": " + line);
    ParallelExample ex;
    ex.src_lang = std::stoi(f0);
    ex.tgt_lang = std::stoi(f1);
    std::istringstream ss(f2);
    int tok;
    while (ss >> tok) ex.src.push_back(tok);
    std::istringstream ts(f3);
    while (ts >> tok) ex.tgt.push_back(tok);
    ex.interlingua_id = std::stoll(f4);
    split.push_back(std::move(ex));
  }
  return split;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_split(dir + "/train.tsv", corpus.train);
  write_split(dir + "/valid.tsv", corpus.valid);
  write_split(dir + "/test.tsv", corpus.test);
  std::ofstream meta(dir + "/metadata.tsv", std::ios::binary);
  if (!meta) throw value_error("cannot write corpus metadata in " + dir);
  meta << "topology\t" << corpus.meta.topology << '\n';
  meta << "n_languages\t" << corpus.meta.n_languages << '\n';
  meta << "base_vocab\t" << corpus.meta.base_vocab << '\n';
  meta << "seed\t" << corpus.meta.seed << '\n';
  meta << "len_min\t" << corpus.meta.len_min << '\n';
  meta << "len_max\t" << corpus.meta.len_max << '\n';
  meta << "p_multiway\t" << corpus.meta.p_multiway << '\n';
  meta << "n_train\t" << corpus.meta.n_train << '\n';
  meta << "n_valid\t" << corpus.meta.n_valid << '\n';
  meta << "n_test\t" << corpus.meta.n_test << '\n';
  meta << "config_digest\t" << corpus.meta.config_digest << '\n';
  meta << "topology_digest\t" << corpus.meta.topology_digest << '\n';
  std::ofstream edges(dir + "/edges.tsv", std::ios::binary);
  for (auto& e : corpus.topology.edges) edges << e.first << '\t' << e.second << '\n';
  std::ofstream specs(dir + "/specs.tsv", std::ios::binary);
  for (const auto& sp : corpus.specs) {
    specs << sp.lang_id << '\t' << sp.base_vocab << '\t' << sp.window << '\t';
    for (size_t i = 0; i < sp.window_perm.size(); ++i) specs << (i ? " " : "") << sp.window_perm[i];
    specs << '\t';
    for (size_t i = 0; i < sp.sym_to_surf.size(); ++i) specs << (i ? " " : "") << sp.sym_to_surf[i];
    specs << '\t';
    bool first = true;
    for (int s : sp.split_set) {
      specs << (first ? "" : " ") << s;
      first = false;
    }
    if (sp.split_set.empty()) specs << "-";
    specs << '\t';
    for (size_t i = 0; i < sp.split_payload.size(); ++i)
      specs << (i ? " " : "") << sp.split_payload[i];
    if (sp.split_payload.empty()) specs << "-";
    specs << '\n';
  }
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  std::ifstream meta(dir + "/metadata.tsv", std::ios::binary);
  if (!meta)
    throw value_error("no corpus found in '" + dir + "' (run gen-data first)");
  std::string key, val, line;
  while (std::getline(meta, line)) {
    std::istringstream ls(line);
    if (!std::getline(ls, key, '\t') || !std::getline(ls, val)) continue;
    if (key == "topology") corpus.meta.topology = val;
    else if (key == "n_languages") corpus.meta.n_languages = std::stoi(val);
    else if (key == "base_vocab") corpus.meta.base_vocab = std::stoi(val);
    else if (key == "seed") corpus.meta.seed = std::stoull(val);
    else if (key == "len_min") corpus.meta.len_min = std::stoi(val);
    else if (key == "len_max") corpus.meta.len_max = std::stoi(val);
    else if (key == "p_multiway") corpus.meta.p_multiway = std::stod(val);
    else if (key == "config_digest") corpus.meta.config_digest = val;
    else if (key == "topology_digest") corpus.meta.topology_digest = val;
  }
  std::vector<std::pair<int, int>> edges;
  std::ifstream ef(dir + "/edges.tsv", std::ios::binary);
  while (std::getline(ef, line)) {
    std::istringstream ls(line);
    int a, b;
    if (ls >> a >> b) edges.emplace_back(a, b);
  }
  if (corpus.meta.topology == "star")
    corpus.topology = LanguageTopology::star(corpus.meta.n_languages);
  else if (corpus.meta.topology == "chain")
    corpus.topology = LanguageTopology::chain(corpus.meta.n_languages);
  else
    corpus.topology = LanguageTopology::custom(corpus.meta.n_languages, edges);
  if (corpus.topology.edges != LanguageTopology::custom(corpus.meta.n_languages, edges).edges)
    throw value_error("corpus metadata inconsistent with edge list in " + dir);

  std::ifstream sf(dir + "/specs.tsv", std::ios::binary);
  while (std::getline(sf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f;
    LanguageSpec sp;
    std::getline(ls, f, '\t');
    sp.lang_id = std::stoi(f);
    std::getline(ls, f, '\t');
    sp.base_vocab = std::stoi(f);
    std::getline(ls, f, '\t');
    sp.window = std::stoi(f);
    std::getline(ls, f, '\t');
    {
      std::istringstream ps(f);
      int x;
      while (ps >> x) sp.window_perm.push_back(x);
    }
    std::getline(ls, f, '\t');
    {
      std::istringstream ms(f);
      int x;
      while (ms >> x) sp.sym_to_surf.push_back(x);
    }
    sp.surf_to_sym.assign(sp.sym_to_surf.size(), -1);
    for (size_t s = 0; s < sp.sym_to_surf.size(); ++s)
      sp.surf_to_sym[static_cast<size_t>(sp.sym_to_surf[s])] = static_cast<int>(s);
    std::getline(ls, f, '\t');
    if (f != "-") {
      std::istringstream ss(f);
      int x;
      while (ss >> x) sp.split_set.insert(x);
    }
    std::getline(ls, f);
    if (f != "-") {
      std::istringstream ss(f);
      int x;
      while (ss >> x) sp.split_payload.push_back(x);
    }
    corpus.specs.push_back(std::move(sp));
  }

  corpus.train = read_split(dir + "/train.tsv");
  corpus.valid = read_split(dir + "/valid.tsv");
  corpus.test = read_split(dir + "/test.tsv");
  corpus.meta.n_train = corpus.train.size();
  corpus.meta.n_valid = corpus.valid.size();
  corpus.meta.n_test = corpus.test.size();
  return corpus;
}

}  // namespace zsnmt
