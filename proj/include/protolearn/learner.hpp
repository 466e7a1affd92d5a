#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "protolearn/adapter.hpp"
#include "protolearn/error.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/rng.hpp"

namespace protolearn {

// Anything that answers output queries on whole words, starting from reset.
class Sul {
public:
  virtual ~Sul() = default;
  virtual Word query(const Word& inputs) = 0;
};

// A known machine acting as the SUL.
class MachineSul : public Sul {
public:
  explicit MachineSul(MealyMachine m) : m_(std::move(m)) {}
  Word query(const Word& inputs) override {
    ++queries_;
    return run(m_, inputs);
  }
  std::size_t queries() const { return queries_; }

private:
  MealyMachine m_;
  std::size_t queries_ = 0;
};

// Voted queries through an adapter; disagreement aborts with the report.
class AdapterSul : public Sul {
public:
  AdapterSul(Adapter& adapter, VotePolicy policy) : adapter_(&adapter), policy_(policy) { policy_.validate(); }
  Word query(const Word& inputs) override {
    auto r = adapter_->voted_query(inputs, policy_);
    if (auto* rep = std::get_if<NondeterminismReport>(&r)) throw NondeterminismError(*rep);
    return std::get<Word>(r);
  }
  Adapter& adapter() { return *adapter_; }

private:
  Adapter* adapter_;
  VotePolicy policy_;
};

// Prefix-closed answer cache. A node at depth i holds the i-th output of the
// query that created it, so every cached answer is a prefix of one real run.
class QueryCache : public Sul {
public:
  enum class Phase { membership, testing };

  QueryCache(Sul& inner, std::vector<AbstractSymbol> inputs) : inner_(&inner), inputs_(std::move(inputs)) {
    nodes_.emplace_back();
  }

  void set_phase(Phase p) { phase_ = p; }

  Word query(const Word& w) override {
    if (auto hit = lookup(w)) {
      ++hits_;
      return *hit;
    }
    (phase_ == Phase::membership ? membership_misses_ : test_misses_)++;
    Word out = inner_->query(w);
    if (out.size() != w.size()) throw Error(ErrorCode::transport, "SUL returned a trace of the wrong length");
    insert(w, out);
    return out;
  }

  std::optional<Word> lookup(const Word& w) const {
    Word out;
    std::size_t n = 0;
    for (const auto& a : w) {
      auto it = nodes_[n].children.find(index(a));
      if (it == nodes_[n].children.end()) return std::nullopt;
      n = it->second;
      out.push_back(*nodes_[n].output);
    }
    return out;
  }

  // Every maximal cached word with its answer.
  std::vector<Trace> entries() const {
    std::vector<Trace> out;
    Trace cur;
    collect(0, cur, out);
    return out;
  }

  std::size_t hits() const { return hits_; }
  std::size_t membership_misses() const { return membership_misses_; }
  std::size_t test_misses() const { return test_misses_; }

private:
  struct Node {
    std::map<std::size_t, std::size_t> children;
    std::optional<AbstractSymbol> output;
  };

  std::size_t index(const AbstractSymbol& a) const {
    const auto e = a.erased();
    for (std::size_t i = 0; i < inputs_.size(); ++i)
      if (inputs_[i].erased() == e) return i;
    throw Error(ErrorCode::unknown_symbol, "input symbol " + a.to_string() + " is not in the alphabet");
  }

  void insert(const Word& w, const Word& out) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::size_t a = index(w[i]);
      auto it = nodes_[n].children.find(a);
      std::size_t child;
      if (it == nodes_[n].children.end()) {
        child = nodes_.size();
        nodes_[n].children.emplace(a, child);
        nodes_.push_back({{}, out[i]});
      } else {
        child = it->second;
      }
      n = child;
    }
  }

  void collect(std::size_t n, Trace& cur, std::vector<Trace>& out) const {
    if (nodes_[n].children.empty()) {
      if (!cur.inputs.empty()) out.push_back(cur);
      return;
    }
    for (const auto& [a, c] : nodes_[n].children) {
      cur.inputs.push_back(inputs_[a]);
      cur.outputs.push_back(*nodes_[c].output);
      collect(c, cur, out);
      cur.inputs.pop_back();
      cur.outputs.pop_back();
    }
  }

  Sul* inner_;
  std::vector<AbstractSymbol> inputs_;
  std::vector<Node> nodes_;
  Phase phase_ = Phase::membership;
  std::size_t hits_ = 0, membership_misses_ = 0, test_misses_ = 0;
};

struct EquivOracleConfig {
  enum class Strategy { random_words, bounded_w_method, exhaustive };
  Strategy strategy = Strategy::random_words;
  std::size_t num_tests = 2000;  // random_words
  std::size_t max_len = 12;      // random_words: longest word; exhaustive: word length
  std::size_t depth = 1;         // bounded_w_method: middle-word length bound
  std::uint64_t seed = 1;

  static EquivOracleConfig random_words(std::size_t n = 2000, std::size_t len = 12, std::uint64_t seed = 1) {
    return {Strategy::random_words, n, len, 1, seed};
  }
  static EquivOracleConfig w_method(std::size_t depth = 1) { return {Strategy::bounded_w_method, 0, 0, depth, 1}; }
  static EquivOracleConfig exhaustive_up_to(std::size_t k) { return {Strategy::exhaustive, 0, k, 0, 1}; }
};

inline std::string to_string(EquivOracleConfig::Strategy s) {
  switch (s) {
    case EquivOracleConfig::Strategy::random_words: return "random";
    case EquivOracleConfig::Strategy::bounded_w_method: return "wmethod";
    case EquivOracleConfig::Strategy::exhaustive: return "exhaustive";
  }
  return "?";
}

inline EquivOracleConfig::Strategy parse_strategy(const std::string& s) {
  if (s == "random") return EquivOracleConfig::Strategy::random_words;
  if (s == "wmethod") return EquivOracleConfig::Strategy::bounded_w_method;
  if (s == "exhaustive") return EquivOracleConfig::Strategy::exhaustive;
  throw Error(ErrorCode::config, "unknown equivalence strategy '" + s + "' (random, wmethod, exhaustive)");
}

// Words per exhaustive check beyond which the strategy is refused.
inline constexpr std::uint64_t exhaustive_limit = 20'000'000;

struct LearnStats {
  std::size_t membership_queries = 0;  // distinct words the table needed from the SUL
  std::size_t equivalence_queries = 0;
  std::size_t test_queries = 0;        // distinct words the equivalence oracle needed
  std::size_t cache_hits = 0;
  std::size_t rounds = 0;
  std::size_t states = 0;
  std::size_t transitions = 0;
  bool vacuous_equivalence = false;
  double wall_seconds = 0;

  // Wall time is left out so reports are reproducible.
  std::string to_string() const {
    return "membership_queries " + std::to_string(membership_queries) + "\nequivalence_queries " +
           std::to_string(equivalence_queries) + "\ntest_queries " + std::to_string(test_queries) + "\ncache_hits " +
           std::to_string(cache_hits) + "\nrounds " + std::to_string(rounds) + "\nstates " + std::to_string(states) +
           "\ntransitions " + std::to_string(transitions) + "\nvacuous_equivalence " + (vacuous_equivalence ? "1" : "0") +
           "\n";
  }
};

inline std::optional<Trace> find_counterexample(const MealyMachine& hyp, Sul& sul, const EquivOracleConfig& cfg);

// Observation-table learner for Mealy machines. Rows of the access-word set
// are pairwise distinct by construction, so only closedness is checked;
// counterexamples add a single suffix found by binary search.
class LStarLearner {
public:
  LStarLearner(Sul& sul, std::vector<AbstractSymbol> inputs, std::vector<AbstractSymbol> outputs,
               bool alphabet_suffixes = true)
      : sul_(&sul), inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
    if (inputs_.empty()) throw Error(ErrorCode::config, "learner needs a non-empty input alphabet");
    access_.push_back({});
    if (alphabet_suffixes)
      for (const auto& a : inputs_) suffixes_.push_back({a.erased()});
    close();
  }

  const MealyMachine& hypothesis() const { return hyp_; }
  std::size_t num_suffixes() const { return suffixes_.size(); }
  const std::vector<Word>& access_words() const { return access_; }

  // Access word of each hypothesis state (indexed by state id).
  Word access_word(StateId s) const { return access_[state_row_[s]]; }

  // Incorporates a counterexample. Rejects words on which the hypothesis and
  // the SUL agree.
  void refine(const Word& ce) {
    Word sul_out = sul_->query(ce);
    Word hyp_out = run(hyp_, ce);
    std::size_t m = 0;
    while (m < ce.size() && sul_out[m] == hyp_out[m]) ++m;
    if (m == ce.size()) throw Error(ErrorCode::non_distinguishing, "counterexample " + to_string(ce) + " does not distinguish");
    Word w(ce.begin(), ce.begin() + static_cast<std::ptrdiff_t>(m) + 1);
    const AbstractSymbol target = sul_out[m];
    // agrees(i): the SUL, started from the hypothesis state reached by w[:i]
    // (via its access word), still produces the SUL's last output on w[i:].
    auto agrees = [&](std::size_t i) {
      Word prefix(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(i));
      Word q = access_word(hyp_.walk(to_indices(hyp_, prefix)));
      q.insert(q.end(), w.begin() + static_cast<std::ptrdiff_t>(i), w.end());
      return sul_->query(q).back() == target;
    };
    std::size_t lo = 0, hi = w.size() - 1;  // agrees(lo), !agrees(hi)
    while (hi - lo > 1) {
      std::size_t mid = lo + (hi - lo) / 2;
      if (agrees(mid)) lo = mid;
      else hi = mid;
    }
    Word suffix(w.begin() + static_cast<std::ptrdiff_t>(hi), w.end());
    if (std::find(suffixes_.begin(), suffixes_.end(), suffix) == suffixes_.end()) suffixes_.push_back(suffix);
    const std::size_t before = hyp_.num_states();
    close();
    if (hyp_.num_states() == before && run(hyp_, ce) == hyp_out)
      throw Error(ErrorCode::nondeterminism, "counterexample " + to_string(ce) + " could not be incorporated; SUL answers are inconsistent");
  }

private:
  using Row = std::vector<Word>;

  Row row(const Word& u) {
    Row r;
    for (const auto& e : suffixes_) {
      Word q = u;
      q.insert(q.end(), e.begin(), e.end());
      Word out = sul_->query(q);
      r.emplace_back(out.end() - static_cast<std::ptrdiff_t>(e.size()), out.end());
    }
    return r;
  }

  void close() {
    std::vector<Row> rows;
    for (const auto& u : access_) rows.push_back(row(u));
    for (std::size_t i = 0; i < access_.size(); ++i) {
      for (const auto& a : inputs_) {
        Word ua = access_[i];
        ua.push_back(a.erased());
        Row r = row(ua);
        if (std::find(rows.begin(), rows.end(), r) == rows.end()) {
          access_.push_back(ua);
          rows.push_back(std::move(r));
        }
      }
    }
    build(rows);
  }

  void build(const std::vector<Row>& rows) {
    const std::size_t n = access_.size(), k = inputs_.size();
    std::vector<StateId> next(n * k);
    std::vector<std::size_t> out(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < k; ++a) {
        Word ua = access_[i];
        ua.push_back(inputs_[a].erased());
        Row r = row(ua);
        next[i * k + a] = static_cast<StateId>(std::find(rows.begin(), rows.end(), r) - rows.begin());
        const AbstractSymbol o = sul_->query(ua).back();
        auto it = std::find_if(outputs_.begin(), outputs_.end(), [&](const AbstractSymbol& s) { return s.erased() == o.erased(); });
        if (it == outputs_.end()) throw Error(ErrorCode::unmappable_packet, "SUL produced undeclared output " + o.to_string());
        out[i * k + a] = static_cast<std::size_t>(it - outputs_.begin());
      }
    }
    std::vector<AbstractSymbol> ins;
    for (const auto& a : inputs_) ins.push_back(a.erased());
    hyp_ = MealyMachine(ins, outputs_, n, 0, next, out);
    // Map BFS-renumbered states back to table rows by walking access words.
    state_row_.assign(hyp_.num_states(), 0);
    for (std::size_t i = 0; i < n; ++i) state_row_[hyp_.walk(to_indices(hyp_, access_[i]))] = i;
  }

  Sul* sul_;
  std::vector<AbstractSymbol> inputs_;
  std::vector<AbstractSymbol> outputs_;
  std::vector<Word> access_;
  std::vector<Word> suffixes_;
  MealyMachine hyp_;
  std::vector<std::size_t> state_row_;
};

// Pairwise distinguishing words for the states of `m` (shortest, by BFS over
// state pairs), deduplicated, plus every single input symbol.
inline std::vector<Word> characterizing_set(const MealyMachine& m) {
  const std::size_t n = m.num_states(), k = m.inputs().size();
  std::vector<Word> w;
  for (const auto& a : m.inputs()) w.push_back({a});
  for (StateId p = 0; p < n; ++p)
    for (StateId q = p + 1; q < n; ++q) {
      struct Node {
        StateId a, b;
        std::size_t parent, sym;
      };
      std::vector<Node> nodes{{p, q, SIZE_MAX, SIZE_MAX}};
      std::vector<bool> seen(n * n, false);
      seen[p * n + q] = true;
      bool found = false;
      for (std::size_t h = 0; h < nodes.size() && !found; ++h)
        for (std::size_t x = 0; x < k && !found; ++x) {
          const Node cur = nodes[h];
          if (m.output_index(cur.a, x) != m.output_index(cur.b, x)) {
            Word word{m.inputs()[x]};
            for (std::size_t i = h; nodes[i].parent != SIZE_MAX; i = nodes[i].parent) word.push_back(m.inputs()[nodes[i].sym]);
            std::reverse(word.begin(), word.end());
            if (std::find(w.begin(), w.end(), word) == w.end()) w.push_back(word);
            found = true;
            break;
          }
          StateId na = m.next(cur.a, x), nb = m.next(cur.b, x);
          if (!seen[na * n + nb]) {
            seen[na * n + nb] = true;
            nodes.push_back({na, nb, h, x});
          }
        }
    }
  return w;
}

inline std::optional<Trace> check_word(const MealyMachine& hyp, Sul& sul, const Word& w) {
  Word expect = run(hyp, w);
  Word got = sul.query(w);
  if (got != expect) return Trace{w, got};
  return std::nullopt;
}

// Searches for a word on which `hyp` and the SUL disagree. The returned trace
// carries the SUL's outputs.
inline std::optional<Trace> find_counterexample(const MealyMachine& hyp, Sul& sul, const EquivOracleConfig& cfg) {
  const auto& sigma = hyp.inputs();
  const std::size_t k = sigma.size();
  switch (cfg.strategy) {
    case EquivOracleConfig::Strategy::random_words: {
      if (cfg.num_tests > 0 && cfg.max_len < 1) throw Error(ErrorCode::config, "random words need max_len >= 1");
      auto rng = make_rng(cfg.seed, Stream::equivalence);
      std::uniform_int_distribution<std::size_t> len(1, std::max<std::size_t>(cfg.max_len, 1));
      std::uniform_int_distribution<std::size_t> sym(0, k - 1);
      for (std::size_t t = 0; t < cfg.num_tests; ++t) {
        Word w;
        for (std::size_t n = len(rng); n > 0; --n) w.push_back(sigma[sym(rng)]);
        if (auto ce = check_word(hyp, sul, w)) return ce;
      }
      return std::nullopt;
    }
    case EquivOracleConfig::Strategy::bounded_w_method: {
      const auto wset = characterizing_set(hyp);
      std::vector<Word> access(hyp.num_states());
      {
        std::vector<bool> seen(hyp.num_states(), false);
        std::vector<StateId> order{0};
        seen[0] = true;
        for (std::size_t h = 0; h < order.size(); ++h)
          for (std::size_t a = 0; a < k; ++a)
            if (StateId t = hyp.next(order[h], a); !seen[t]) {
              seen[t] = true;
              access[t] = access[order[h]];
              access[t].push_back(sigma[a]);
              order.push_back(t);
            }
      }
      std::vector<Word> middles{{}};
      for (std::size_t d = 0, from = 0; d < cfg.depth + 1; ++d) {
        std::size_t to = middles.size();
        for (std::size_t i = from; i < to; ++i)
          for (const auto& a : sigma) {
            Word m = middles[i];
            m.push_back(a);
            middles.push_back(std::move(m));
          }
        from = to;
      }
      for (const auto& acc : access)
        for (const auto& mid : middles)
          for (const auto& suf : wset) {
            Word w = acc;
            w.insert(w.end(), mid.begin(), mid.end());
            w.insert(w.end(), suf.begin(), suf.end());
            if (auto ce = check_word(hyp, sul, w)) return ce;
          }
      return std::nullopt;
    }
    case EquivOracleConfig::Strategy::exhaustive: {
      std::uint64_t total = 1;
      for (std::size_t i = 0; i < cfg.max_len; ++i)
        if (__builtin_mul_overflow(total, k, &total) || total > exhaustive_limit)
          throw Error(ErrorCode::config, "exhaustive equivalence up to length " + std::to_string(cfg.max_len) +
                                             " is too large for this alphabet");
      // Words of length exactly max_len; the cache makes their prefixes free.
      std::vector<std::size_t> idx(cfg.max_len, 0);
      for (std::uint64_t n = 0; n < total; ++n) {
        Word w;
        for (auto i : idx) w.push_back(sigma[i]);
        if (auto ce = check_word(hyp, sul, w)) return ce;
        for (std::size_t p = cfg.max_len; p-- > 0;) {
          if (++idx[p] < k) break;
          idx[p] = 0;
        }
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

struct LearnResult {
  MealyMachine model;
  LearnStats stats;
  std::vector<Trace> observations;  // every cached answer, for consistency checks
};

inline LearnResult learn(Sul& sul, const std::vector<AbstractSymbol>& inputs, const std::vector<AbstractSymbol>& outputs,
                         const EquivOracleConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  QueryCache cache(sul, inputs);
  LStarLearner learner(cache, inputs, outputs);
  LearnStats st;
  st.vacuous_equivalence = cfg.strategy == EquivOracleConfig::Strategy::random_words && cfg.num_tests == 0;
  for (;;) {
    ++st.rounds;
    ++st.equivalence_queries;
    cache.set_phase(QueryCache::Phase::testing);
    auto ce = find_counterexample(learner.hypothesis(), cache, cfg);
    cache.set_phase(QueryCache::Phase::membership);
    if (!ce) break;
    learner.refine(ce->inputs);
  }
  st.membership_queries = cache.membership_misses();
  st.test_queries = cache.test_misses();
  st.cache_hits = cache.hits();
  st.states = learner.hypothesis().num_states();
  st.transitions = learner.hypothesis().num_transitions();
  st.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {learner.hypothesis(), st, cache.entries()};
}

inline LearnResult learn(Adapter& adapter, const EquivOracleConfig& cfg, const VotePolicy& vote = {}) {
  AdapterSul sul(adapter, vote);
  return learn(sul, adapter.alphabet().symbols(Direction::input), adapter.alphabet().symbols(Direction::output), cfg);
}

} // namespace protolearn
