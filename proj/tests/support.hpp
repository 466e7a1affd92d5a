#pragma once
// Shared helpers for the test binaries: random machines, brute-force oracles
// and the small hand-built machines several suites use.

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "protolearn/protolearn.hpp"

namespace testing {

using namespace protolearn;

inline AbstractSymbol sym(const std::string& text, std::size_t arity = 2) { return AbstractSymbol::parse(text, arity); }

inline Word word(std::initializer_list<const char*> items, std::size_t arity = 2) {
  Word w;
  for (const char* s : items) w.push_back(sym(s, arity));
  return w;
}

inline std::vector<AbstractSymbol> letters(std::size_t n, const char* prefix) {
  std::vector<AbstractSymbol> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({std::string(prefix) + std::to_string(i), {}, std::nullopt, {}});
  return out;
}

// Uniformly random total machine over `k` inputs and `o` outputs.
inline MealyMachine random_machine(std::mt19937_64& rng, std::size_t states, std::size_t k, std::size_t o) {
  std::uniform_int_distribution<std::size_t> st(0, states - 1), out(0, o - 1);
  std::vector<StateId> next(states * k);
  std::vector<std::size_t> outs(states * k);
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] = static_cast<StateId>(st(rng));
    outs[i] = out(rng);
  }
  return MealyMachine(letters(k, "i"), letters(o, "o"), states, 0, next, outs);
}

// Calls `f` on every word of length 1..max_len over `inputs`, stopping early
// when `f` returns true. Returns whether it stopped.
template <class F>
bool for_each_word(const std::vector<AbstractSymbol>& inputs, std::size_t max_len, F&& f) {
  std::vector<std::size_t> idx;
  for (std::size_t len = 1; len <= max_len; ++len) {
    idx.assign(len, 0);
    for (;;) {
      Word w;
      for (auto i : idx) w.push_back(inputs[i]);
      if (f(w)) return true;
      std::size_t p = len;
      while (p > 0 && ++idx[p - 1] == inputs.size()) idx[--p] = 0;
      if (p == 0) break;
    }
  }
  return false;
}

// Shortest distinguishing word by plain enumeration (any two machines with
// n and m states that differ do so on a word of length <= n + m - 1).
inline std::optional<Word> brute_force_difference(const MealyMachine& a, const MealyMachine& b) {
  std::optional<Word> found;
  for_each_word(a.inputs(), a.num_states() + b.num_states() - 1, [&](const Word& w) {
    if (run(a, w) != run(b, w)) found = w;
    return found.has_value();
  });
  return found;
}

// Number of pairwise distinguishable states, by enumeration from every state.
inline bool all_states_distinct(const MealyMachine& m) {
  const std::size_t n = m.num_states(), k = m.inputs().size();
  auto outputs_from = [&](StateId s, const std::vector<std::size_t>& w) {
    std::vector<std::size_t> out;
    for (auto a : w) {
      out.push_back(m.output_index(s, a));
      s = m.next(s, a);
    }
    return out;
  };
  for (StateId p = 0; p < n; ++p)
    for (StateId q = p + 1; q < n; ++q) {
      bool distinct = false;
      for (std::size_t len = 1; len <= n && !distinct; ++len) {
        std::vector<std::size_t> w(len, 0);
        for (;;) {
          if (outputs_from(p, w) != outputs_from(q, w)) {
            distinct = true;
            break;
          }
          std::size_t i = len;
          while (i > 0 && ++w[i - 1] == k) w[--i] = 0;
          if (i == 0) break;
        }
      }
      if (!distinct) return false;
    }
  return true;
}

// The two-state machine of the worked synthesis example: q0 --ACK/NIL--> q0,
// q0 --SYN/ACK--> q1, q1 --SYN/NIL--> q0 (q1 --ACK/NIL--> q1 completes it).
inline MealyMachine handshake_skeleton() {
  MealyBuilder b({sym("ACK(?,?,0)"), sym("SYN(?,?,0)")}, {AbstractSymbol::nil(), sym("ACK(?,?,0)")});
  b.add("q0", "ACK(?,?,0)", "NIL", "q0").add("q0", "SYN(?,?,0)", "ACK(?,?,0)", "q1");
  b.add("q1", "SYN(?,?,0)", "NIL", "q0").add("q1", "ACK(?,?,0)", "NIL", "q1");
  return b.build("q0");
}

// Transitions of the worked example that carry unknowns (q1 --ACK--> is left out).
inline std::vector<std::size_t> handshake_subset() { return {0, 1, 3}; }

inline std::vector<RegisterDecl> tcp_regs() { return sim::tcp_registers(); }
inline std::vector<std::string> tcp_params() { return {"sn", "an"}; }

// r := r + 1 on ACK; SYN answers ACK(pr, pr + 1).
inline ExtendedMealyMachine handshake_extended() {
  auto m = handshake_skeleton();
  const std::vector<Term> keep{Term::reg(0), Term::reg(1), Term::reg(2)};
  std::vector<std::vector<Term>> upd(m.num_transitions(), keep), out(m.num_transitions());
  upd[0][0] = Term::reg(0, 1);
  out[1] = {Term::reg(1), Term::reg(1, 1)};
  return ExtendedMealyMachine(m, tcp_regs(), tcp_params(), upd, out);
}

// The two traces of the worked example.
inline std::vector<Trace> worked_traces() {
  return {{word({"ACK(0,3,0)", "SYN(2,5,0)"}), {AbstractSymbol::nil(), sym("ACK(4,5,0)")}},
          {word({"SYN(2,3,0)", "SYN(2,3,0)"}), {sym("ACK(4,5,0)"), AbstractSymbol::nil()}}};
}

// Initial values worth trying for free registers on `t`: 0 and every
// observed output value minus 0..len+1 (a free register drifts by at most
// one per step before it is read).
inline std::vector<Value> init_candidates(const Trace& t) {
  std::vector<Value> c{0};
  for (const auto& o : t.outputs)
    for (const auto& p : o.params)
      if (p)
        for (Value d = 0; d <= static_cast<Value>(t.inputs.size()) + 1; ++d) c.push_back(*p - d);
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

// Independent consistency oracle for a full assignment: replays `t` with the
// concrete interpreter, trying every plausible initial value for the free
// registers (observed outputs minus small offsets, or 0).
inline bool replays_with_some_init(const ExtendedMealyMachine& x, const Trace& t) {
  std::vector<std::string> free_regs;
  for (const auto& r : x.registers())
    if (r.init == InitPolicy::free) free_regs.push_back(r.name);
  const auto candidates = init_candidates(t);
  std::vector<std::size_t> pick(free_regs.size(), 0);
  for (;;) {
    std::map<std::string, Value> init;
    for (std::size_t i = 0; i < free_regs.size(); ++i) init[free_regs[i]] = candidates[pick[i]];
    if (run_extended(x, t.inputs, init) == t.outputs) return true;
    std::size_t i = 0;
    while (i < pick.size() && ++pick[i] == candidates.size()) pick[i++] = 0;
    if (i == pick.size()) return false;
  }
}

// Concrete replay of a partial assignment (-1 = not chosen yet). Whatever
// depends on an unchosen unknown is unconstrained, so a false answer rules
// out every completion.
inline bool partial_consistent(const synth::Sketch& s, const std::vector<int>& a, const Trace& t) {
  const auto& m = s.skeleton;
  const std::size_t R = s.registers.size(), k = m.inputs().size();
  std::vector<std::size_t> free_regs;
  for (std::size_t r = 0; r < R; ++r)
    if (s.registers[r].init == InitPolicy::free) free_regs.push_back(r);
  const auto cands = init_candidates(t);
  std::vector<std::size_t> pick(free_regs.size(), 0);
  for (;;) {
    std::vector<std::optional<Value>> regs(R, Value{0});
    for (std::size_t i = 0; i < free_regs.size(); ++i) regs[free_regs[i]] = cands[pick[i]];
    StateId st = m.initial();
    bool ok = true;
    for (std::size_t i = 0; i < t.inputs.size() && ok; ++i) {
      auto in = m.input_index(t.inputs[i]);
      if (!in || m.output(st, *in).erased() != t.outputs[i].erased()) return false;
      const std::size_t tr = k * st + *in;
      auto eval = [&](const Term& term) -> std::optional<Value> {
        if (term.kind == Term::Kind::param) return *t.inputs[i].params[term.index] + term.offset;
        if (!regs[term.index]) return std::nullopt;
        return *regs[term.index] + term.offset;
      };
      const bool sketched = s.first_unknown[tr] >= 0;
      std::vector<std::optional<Value>> next(R);
      for (std::size_t r = 0; r < R; ++r) {
        if (!sketched) {
          next[r] = regs[r];
          continue;
        }
        const int v = a[s.update_unknown(tr, r)];
        if (v >= 0) next[r] = eval(s.update_grammar[static_cast<std::size_t>(v)]);
      }
      regs = next;
      const auto& obs = t.outputs[i].params;
      for (std::size_t j = 0; j < obs.size(); ++j) {
        std::optional<Value> got;
        if (!sketched) got = eval(s.output_grammar.front());
        else if (const int v = a[s.output_unknown(tr, j)]; v >= 0) got = eval(s.output_grammar[static_cast<std::size_t>(v)]);
        if (got && *got != *obs[j]) ok = false;
      }
      st = m.next(st, *in);
    }
    if (ok) return true;
    std::size_t i = 0;
    while (i < pick.size() && ++pick[i] == cands.size()) pick[i++] = 0;
    if (i == pick.size()) return false;
  }
}

// Lexicographically least consistent assignment: enumeration in E-vector
// order, cutting off prefixes the concrete replay already refutes.
inline std::optional<synth::TermAssignment> brute_force_least(const synth::Sketch& s, const std::vector<Trace>& traces) {
  const std::size_t n = s.unknowns.size();
  std::vector<int> a(n, -1);
  auto fits = [&] {
    for (const auto& t : traces)
      if (!partial_consistent(s, a, t)) return false;
    return true;
  };
  if (!fits()) return std::nullopt;
  std::size_t i = 0;
  while (true) {
    if (i == n) return synth::TermAssignment(a.begin(), a.end());
    if (++a[i] == static_cast<int>(s.domain(i))) {
      a[i] = -1;
      if (i == 0) return std::nullopt;
      --i;
      continue;
    }
    if (fits()) ++i;
  }
}

// A random small synthesis instance over the two-state skeleton (at most 10
// unknowns), with traces from a random ground-truth assignment and, a third
// of the time, one corrupted output value.
struct SynthInstance {
  synth::Sketch sketch;
  std::vector<Trace> traces;
};

inline SynthInstance random_instance(std::mt19937_64& rng) {
  const std::vector<std::vector<RegisterDecl>> reg_sets{
      {{"pr", InitPolicy::free}},
      {{"r", InitPolicy::zero}},
      {{"r", InitPolicy::zero}, {"pr", InitPolicy::free}},
      {{"pr", InitPolicy::free}, {"pi", InitPolicy::zero}},
  };
  const auto& regs = reg_sets[rng() % reg_sets.size()];
  // two registers on all four transitions would be 10 update unknowns plus
  // outputs; those instances keep q1 out, so words stop at the first SYN
  const bool small = regs.size() == 1;
  std::optional<std::vector<std::size_t>> subset;
  if (!small) subset = std::vector<std::size_t>{0, 1};
  SynthInstance in{synth::build_sketch(handshake_skeleton(), regs, tcp_params(), subset), {}};
  synth::TermAssignment truth(in.sketch.unknowns.size());
  for (std::size_t u = 0; u < truth.size(); ++u) truth[u] = rng() % in.sketch.domain(u);
  auto x = synth::to_extended(in.sketch, truth);
  const std::size_t n_traces = 1 + rng() % 3;
  for (std::size_t k = 0; k < n_traces; ++k) {
    Word w;
    const std::size_t len = 1 + rng() % 5;
    for (std::size_t i = 0; i < len; ++i) {
      bool syn = rng() % 3 == 0;
      if (!small) syn = i + 1 == len;
      auto s = sym(syn ? "SYN(?,?,0)" : "ACK(?,?,0)");
      s.params = {Value(rng() % 20), Value(rng() % 20)};
      w.push_back(s);
    }
    std::map<std::string, Value> init;
    for (const auto& r : regs)
      if (r.init == InitPolicy::free) init[r.name] = 100 + static_cast<Value>(rng() % 50);
    in.traces.push_back({w, run_extended(x, w, init)});
  }
  if (rng() % 3 == 0) {
    bool done = false;
    for (auto& t : in.traces)
      for (auto& o : t.outputs)
        if (!done && !o.params.empty()) {
          *o.params[rng() % o.params.size()] += 1 + static_cast<Value>(rng() % 3);
          done = true;
        }
  }
  return in;
}

// Parameterized traces of everything the adapter has run so far.
inline std::vector<Trace> param_traces(const Adapter& a) {
  std::vector<Trace> out;
  for (const auto& e : a.oracle_table_snapshot()) out.push_back(synth::to_param_trace(e, a.alphabet()));
  return out;
}

// Fresh SUL runs with concrete parameters, as synthesis consumes them.
inline synth::TraceSource fresh_source(Adapter& a) {
  return [&a](const Word& w) {
    auto q = a.query_logged(w);
    return synth::to_param_trace({q.abstract, q.concrete}, a.alphabet());
  };
}

} // namespace testing
