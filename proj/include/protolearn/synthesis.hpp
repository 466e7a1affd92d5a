#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/extended.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/oracle_table.hpp"
#include "protolearn/rng.hpp"
#include "protolearn/sat.hpp"
#include "protolearn/symbol.hpp"

// Register synthesis for a learned skeleton: every (transition, register)
// gets an update unknown u and every output parameter an output unknown o;
// each unknown picks a term from a finite grammar (its E-variable). Traces
// with concrete parameter values constrain the choices.
namespace protolearn::synth {

struct GrammarOptions {
  bool params_plus_one = false;  // also offer `param + 1` as an update term
};

struct Unknown {
  enum class Kind { update, output };
  Kind kind = Kind::update;
  std::size_t transition = 0;
  std::size_t slot = 0;  // register index or output parameter index
  std::string name;      // u1, u2, ... / o1, o2, ...
};

struct Sketch {
  MealyMachine skeleton;
  std::vector<RegisterDecl> registers;
  std::vector<std::string> params;
  std::vector<Term> update_grammar;
  std::vector<Term> output_grammar;
  std::vector<Unknown> unknowns;            // E-vector order: transition-major, updates then outputs
  std::vector<std::size_t> transitions;     // transitions that carry unknowns, ascending
  std::vector<std::ptrdiff_t> first_unknown;  // per transition, -1 when not in the sketch
  GrammarOptions options;

  std::size_t update_unknown(std::size_t t, std::size_t r) const { return static_cast<std::size_t>(first_unknown[t]) + r; }
  std::size_t output_unknown(std::size_t t, std::size_t j) const {
    return static_cast<std::size_t>(first_unknown[t]) + registers.size() + j;
  }
  std::size_t domain(std::size_t u) const {
    return unknowns[u].kind == Unknown::Kind::update ? update_grammar.size() : output_grammar.size();
  }
  const Term& term(std::size_t u, std::size_t choice) const {
    return unknowns[u].kind == Unknown::Kind::update ? update_grammar[choice] : output_grammar[choice];
  }
  std::size_t count(Unknown::Kind k) const {
    return static_cast<std::size_t>(std::count_if(unknowns.begin(), unknowns.end(), [&](const Unknown& u) { return u.kind == k; }));
  }
  TermRules rules() const {
    return {1, options.params_plus_one ? 1 : 0, registers.empty()};
  }
  std::string term_to_string(const Term& t) const {
    std::string base = t.kind == Term::Kind::reg ? registers[t.index].name : params[t.index];
    return t.offset ? base + "+" + std::to_string(t.offset) : base;
  }
};

// Grammar order: each register, then each register + 1, interleaved per
// register ([r, r+1, pr, pr+1, ...]), then the input parameters. Outputs
// range over the register half only; with no registers they read the inputs.
inline Sketch build_sketch(const MealyMachine& m, std::vector<RegisterDecl> registers, std::vector<std::string> params,
                           std::optional<std::vector<std::size_t>> subset = std::nullopt, GrammarOptions opts = {}) {
  for (const auto& in : m.inputs())
    if (in.params.size() != params.size())
      throw Error(ErrorCode::config, "input " + in.to_string() + " has " + std::to_string(in.params.size()) +
                                         " parameter slots but " + std::to_string(params.size()) + " names were declared");
  Sketch s;
  s.skeleton = m;
  s.registers = std::move(registers);
  s.params = std::move(params);
  s.options = opts;
  for (std::size_t r = 0; r < s.registers.size(); ++r) {
    s.update_grammar.push_back(Term::reg(r));
    s.update_grammar.push_back(Term::reg(r, 1));
  }
  s.output_grammar = s.update_grammar;
  for (std::size_t p = 0; p < s.params.size(); ++p) {
    s.update_grammar.push_back(Term::param(p));
    if (opts.params_plus_one) s.update_grammar.push_back(Term::param(p, 1));
  }
  if (s.registers.empty())
    for (std::size_t p = 0; p < s.params.size(); ++p) {
      s.output_grammar.push_back(Term::param(p));
      if (opts.params_plus_one) s.output_grammar.push_back(Term::param(p, 1));
    }

  const std::size_t n = m.num_transitions(), k = m.inputs().size();
  if (subset) {
    s.transitions = *subset;
    std::sort(s.transitions.begin(), s.transitions.end());
    s.transitions.erase(std::unique(s.transitions.begin(), s.transitions.end()), s.transitions.end());
    for (auto t : s.transitions)
      if (t >= n) throw Error(ErrorCode::config, "sketch transition " + std::to_string(t) + " does not exist");
  } else {
    for (std::size_t t = 0; t < n; ++t) s.transitions.push_back(t);
  }
  s.first_unknown.assign(n, -1);
  std::size_t nu = 0, no = 0;
  for (auto t : s.transitions) {
    s.first_unknown[t] = static_cast<std::ptrdiff_t>(s.unknowns.size());
    for (std::size_t r = 0; r < s.registers.size(); ++r)
      s.unknowns.push_back({Unknown::Kind::update, t, r, "u" + std::to_string(++nu)});
    const auto& out = m.output(static_cast<StateId>(t / k), t % k);
    if (!out.params.empty() && s.output_grammar.empty())
      throw Error(ErrorCode::config, "output " + out.to_string() + " has parameters but the grammar has no output terms");
    for (std::size_t j = 0; j < out.params.size(); ++j)
      s.unknowns.push_back({Unknown::Kind::output, t, j, "o" + std::to_string(++no)});
  }
  return s;
}

// A trace step whose parameters are concrete: `ACK(0,3,0)` / `NIL`.
inline Trace to_param_trace(const OracleEntry& e, const AlphabetConfig& alphabet) {
  Trace t;
  for (std::size_t i = 0; i < e.concrete.inputs.size(); ++i) {
    t.inputs.push_back(abstract_packet(e.concrete.inputs[i], alphabet, Direction::input, true));
    t.outputs.push_back(abstract_packet(e.concrete.outputs[i], alphabet, Direction::output, true));
  }
  return t;
}

struct NegativeExample {
  std::size_t trace = 0;
  std::size_t step = 0;
  std::size_t param = 0;
  Value wrong = 0;

  friend bool operator==(const NegativeExample&, const NegativeExample&) = default;
};

// "E_u1=7 ⟹ r[1]=3": choosing `choice` for `unknown` forces `text`'s equation.
struct Implication {
  std::size_t unknown = 0;
  std::size_t choice = 0;
  std::size_t trace = 0;
  std::size_t step = 0;
  std::string text;
};

namespace detail {

struct CompiledTrace {
  std::vector<std::size_t> transitions;
  std::vector<std::vector<Value>> in;
  std::vector<std::vector<Value>> out;  // observed output parameters (empty for NIL)
};

inline CompiledTrace compile(const Sketch& s, const Trace& t, std::size_t index) {
  const auto& m = s.skeleton;
  CompiledTrace c;
  StateId st = m.initial();
  auto where = [&](std::size_t i) { return "trace " + std::to_string(index) + " step " + std::to_string(i + 1) + ": "; };
  if (t.inputs.size() != t.outputs.size()) throw Error(ErrorCode::synthesis, where(0) + "inputs and outputs differ in length");
  for (std::size_t i = 0; i < t.inputs.size(); ++i) {
    auto a = m.input_index(t.inputs[i]);
    if (!a) throw Error(ErrorCode::synthesis, where(i) + "input " + t.inputs[i].to_string() + " is not in the skeleton");
    const std::size_t tr = m.inputs().size() * st + *a;
    const auto& expect = m.output(st, *a);
    if (expect.erased() != t.outputs[i].erased())
      throw Error(ErrorCode::synthesis, where(i) + "observed " + t.outputs[i].to_string() + " but the skeleton outputs " +
                                            expect.to_string());
    if (s.first_unknown[tr] < 0)
      throw Error(ErrorCode::synthesis, where(i) + "transition " + std::to_string(tr) + " is not part of the sketch");
    c.transitions.push_back(tr);
    std::vector<Value> in, out;
    for (const auto& p : t.inputs[i].params) {
      if (!p) throw Error(ErrorCode::synthesis, where(i) + "input parameter value missing");
      in.push_back(*p);
    }
    for (const auto& p : t.outputs[i].params) {
      if (!p) throw Error(ErrorCode::synthesis, where(i) + "output parameter value missing");
      out.push_back(*p);
    }
    c.in.push_back(std::move(in));
    c.out.push_back(std::move(out));
    st = m.next(st, *a);
  }
  return c;
}

// Fixed-width bitset over unknown indices.
class Bits {
public:
  explicit Bits(std::size_t n = 0) : w_((n + 63) / 64, 0) {}
  void set(std::size_t i) { w_[i / 64] |= std::uint64_t{1} << (i % 64); }
  void reset(std::size_t i) { w_[i / 64] &= ~(std::uint64_t{1} << (i % 64)); }
  void merge(const Bits& o) {
    for (std::size_t i = 0; i < w_.size(); ++i) w_[i] |= o.w_[i];
  }
  void clear() { std::fill(w_.begin(), w_.end(), 0); }
  bool empty() const {
    return std::all_of(w_.begin(), w_.end(), [](std::uint64_t x) { return x == 0; });
  }
  template <class F>
  void for_each(F&& f) const {
    for (std::size_t i = 0; i < w_.size(); ++i)
      for (std::uint64_t x = w_[i]; x; x &= x - 1) f(i * 64 + static_cast<std::size_t>(__builtin_ctzll(x)));
  }
  std::size_t max() const {
    for (std::size_t i = w_.size(); i-- > 0;)
      if (w_[i]) return i * 64 + 63 - static_cast<std::size_t>(__builtin_clzll(w_[i]));
    return SIZE_MAX;
  }

private:
  std::vector<std::uint64_t> w_;
};

// Register value as `init(base) + off`, or a constant when base < 0.
struct Sym {
  bool known = false;
  int base = -1;
  Value off = 0;
};

} // namespace detail

struct TraceConstraintSystem {
  Sketch sketch;
  std::vector<Trace> traces;
  std::vector<NegativeExample> negatives;
  std::vector<Implication> implications;
  std::size_t timeline_variables = 0;  // one per (trace, register, step 0..len)
  std::vector<detail::CompiledTrace> compiled;
};

namespace detail {

inline std::string timeline(const Sketch& s, std::size_t reg, std::size_t trace, std::size_t step, bool many) {
  return s.registers[reg].name + (many ? "_" + std::to_string(trace) : "") + "[" + std::to_string(step) + "]";
}

inline std::string term_text(const Sketch& s, const Term& t, const CompiledTrace& c, std::size_t trace, std::size_t step,
                             bool many) {
  if (t.kind == Term::Kind::param) return std::to_string(c.in[step][t.index] + t.offset);
  std::string base = timeline(s, t.index, trace, step, many);
  return t.offset ? base + "+" + std::to_string(t.offset) : base;
}

} // namespace detail

inline TraceConstraintSystem generate_constraints(const Sketch& sketch, std::vector<Trace> traces,
                                                  std::vector<NegativeExample> negatives = {}) {
  TraceConstraintSystem sys;
  sys.sketch = sketch;
  sys.traces = std::move(traces);
  sys.negatives = std::move(negatives);
  const bool many = sys.traces.size() > 1;
  for (std::size_t ti = 0; ti < sys.traces.size(); ++ti) {
    sys.compiled.push_back(detail::compile(sketch, sys.traces[ti], ti));
    const auto& c = sys.compiled.back();
    sys.timeline_variables += sketch.registers.size() * (c.transitions.size() + 1);
    for (std::size_t i = 0; i < c.transitions.size(); ++i) {
      const std::size_t t = c.transitions[i];
      for (std::size_t r = 0; r < sketch.registers.size(); ++r) {
        const std::size_t u = sketch.update_unknown(t, r);
        for (std::size_t k = 0; k < sketch.update_grammar.size(); ++k)
          sys.implications.push_back({u, k, ti, i,
                                      "E_" + sketch.unknowns[u].name + "=" + std::to_string(k) + " ⟹ " +
                                          detail::timeline(sketch, r, ti, i + 1, many) + "=" +
                                          detail::term_text(sketch, sketch.update_grammar[k], c, ti, i, many)});
      }
      for (std::size_t j = 0; j < c.out[i].size(); ++j) {
        const std::size_t o = sketch.output_unknown(t, j);
        for (std::size_t k = 0; k < sketch.output_grammar.size(); ++k) {
          const Term& term = sketch.output_grammar[k];
          std::string lhs = term.kind == Term::Kind::param ? detail::term_text(sketch, term, c, ti, i, many)
                                                           : detail::term_text(sketch, term, c, ti, i + 1, many);
          sys.implications.push_back({o, k, ti, i,
                                      "E_" + sketch.unknowns[o].name + "=" + std::to_string(k) + " ⟹ " + lhs + "=" +
                                          std::to_string(c.out[i][j])});
        }
      }
    }
  }
  for (const auto& n : sys.negatives) {
    if (n.trace >= sys.compiled.size() || n.step >= sys.compiled[n.trace].out.size() ||
        n.param >= sys.compiled[n.trace].out[n.step].size())
      throw Error(ErrorCode::synthesis, "negative example points outside its trace");
  }
  return sys;
}

using TermAssignment = std::vector<std::size_t>;  // one grammar index per unknown

struct SolveResult {
  bool sat = false;
  TermAssignment assignment;
  std::vector<std::map<std::string, Value>> initial_values;  // per trace, free registers only
  std::vector<std::size_t> unsat_core;                        // trace indices
  std::size_t nodes = 0;
};

namespace detail {

// Simulates traces symbolically under a partial assignment. Values carry no
// dependency sets; each (time, register) slot remembers the unknown that
// wrote it and the register it copied, and conflicts are explained by
// walking those links back.
struct Checker {
  const Sketch& s;
  const std::vector<CompiledTrace>& traces;
  std::vector<std::vector<NegativeExample>> negs;  // per trace
  std::size_t n;

  Checker(const Sketch& sk, const std::vector<CompiledTrace>& tr, const std::vector<NegativeExample>& neg)
      : s(sk), traces(tr), negs(tr.size()), n(sk.unknowns.size()) {
    for (const auto& x : neg) negs[x.trace].push_back(x);
  }

  // An observed value: output unknown `o` read register `reg` at `time`
  // (reg < 0: an input parameter).
  struct Origin {
    std::size_t time = 0;
    int reg = -1;
    std::size_t o = 0;
  };

  void explain(const Origin& at, Bits& out) const {
    out.set(at.o);
    int reg = at.reg;
    const std::size_t R = s.registers.size();
    for (std::size_t time = at.time; reg >= 0 && time > 0; --time) {
      const std::size_t slot = time * R + static_cast<std::size_t>(reg);
      if (writer_[slot] < 0) break;
      out.set(static_cast<std::size_t>(writer_[slot]));
      reg = read_[slot];
    }
  }

  // "unknown = value is impossible because of the unknowns in `because`".
  struct Exclusion {
    std::size_t unknown;
    std::size_t value;
    Bits because;
  };
  using Excluded = std::function<bool(std::size_t unknown, std::size_t value)>;

  // Forward check of one trace under a partial assignment (-1 = unassigned).
  // On failure `conflict` holds the unknowns responsible. `pins` receives
  // the initial values the trace forces on free registers. With `found`,
  // values of unassigned output unknowns that already contradict the trace
  // are reported (skipping those `excluded` says are known).
  bool check(std::size_t ti, const std::vector<int>& assign, Bits& conflict,
             std::vector<std::optional<Value>>* pins_out = nullptr, const Excluded* excluded = nullptr,
             std::vector<Exclusion>* found = nullptr) const {
    const auto& c = traces[ti];
    const std::size_t R = s.registers.size();
    const std::size_t len = c.transitions.size();
    vals_.assign((len + 1) * R, Sym{});
    writer_.assign((len + 1) * R, -1);
    read_.assign((len + 1) * R, -1);
    for (std::size_t r = 0; r < R; ++r)
      vals_[r] = {true, s.registers[r].init == InitPolicy::free ? static_cast<int>(r) : -1, 0};
    std::vector<std::optional<Value>> pin(R);
    std::vector<Origin> pin_at(R);
    pending_.clear();
    auto fail = [&](const Origin& a, const Origin* b) {
      conflict.clear();
      explain(a, conflict);
      if (b) explain(*b, conflict);
      return false;
    };
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t t = c.transitions[i];
      const Sym* cur = &vals_[i * R];
      Sym* next = &vals_[(i + 1) * R];
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t u = s.update_unknown(t, r);
        if (assign[u] < 0) continue;  // stays unknown
        const Term& term = s.update_grammar[static_cast<std::size_t>(assign[u])];
        const std::size_t slot = (i + 1) * R + r;
        writer_[slot] = static_cast<int>(u);
        if (term.kind == Term::Kind::param) {
          next[r] = {true, -1, c.in[i][term.index] + term.offset};
        } else {
          read_[slot] = static_cast<int>(term.index);
          next[r] = cur[term.index];
          if (next[r].known) next[r].off += term.offset;
        }
      }
      for (std::size_t j = 0; j < c.out[i].size(); ++j) {
        const std::size_t o = s.output_unknown(t, j);
        const Value observed = c.out[i][j];
        auto value_of = [&](std::size_t k, Origin& at) {
          const Term& term = s.output_grammar[k];
          at = {i + 1, -1, o};
          if (term.kind == Term::Kind::param) return Sym{true, -1, c.in[i][term.index] + term.offset};
          Sym v = next[term.index];
          v.off += term.offset;
          at.reg = static_cast<int>(term.index);
          return v;
        };
        if (assign[o] < 0) {
          if (!found) continue;
          for (std::size_t k = 0; k < s.domain(o); ++k) {
            if ((*excluded)(o, k)) continue;
            Origin at;
            const Sym v = value_of(k, at);
            if (!v.known) continue;
            const Origin* other = nullptr;
            if (v.base < 0) {
              if (v.off == observed) continue;
            } else {
              const auto b = static_cast<std::size_t>(v.base);
              if (!pin[b] || *pin[b] + v.off == observed) continue;
              other = &pin_at[b];
            }
            Bits why(n);
            explain(at, why);
            if (other) explain(*other, why);
            why.reset(o);
            found->push_back({o, k, std::move(why)});
          }
          continue;
        }
        Origin at;
        const Sym v = value_of(static_cast<std::size_t>(assign[o]), at);
        if (!v.known) continue;
        if (v.base < 0) {
          if (v.off != observed) return fail(at, nullptr);
        } else {
          auto& p = pin[static_cast<std::size_t>(v.base)];
          if (!p) {
            p = observed - v.off;
            pin_at[static_cast<std::size_t>(v.base)] = at;
          } else if (*p != observed - v.off) {
            return fail(at, &pin_at[static_cast<std::size_t>(v.base)]);
          }
        }
        for (const auto& ng : negs[ti])
          if (ng.step == i && ng.param == j) pending_.push_back({v, at, ng.wrong});
      }
    }
    for (const auto& p : pending_) {
      if (p.v.base < 0) {
        if (p.v.off == p.wrong) return fail(p.at, nullptr);
        continue;
      }
      const auto b = static_cast<std::size_t>(p.v.base);
      if (pin[b] && *pin[b] + p.v.off == p.wrong) return fail(p.at, &pin_at[b]);
    }
    if (pins_out) *pins_out = pin;
    return true;
  }

private:
  struct PendingNegative {
    Sym v;
    Origin at;
    Value wrong;
  };
  mutable std::vector<Sym> vals_;
  mutable std::vector<int> writer_, read_;
  mutable std::vector<PendingNegative> pending_;
};

inline std::vector<std::vector<std::size_t>> traces_touching(const Sketch& s, const std::vector<CompiledTrace>& traces) {
  std::vector<std::vector<std::size_t>> touching(s.skeleton.num_transitions());
  for (std::size_t ti = 0; ti < traces.size(); ++ti) {
    std::vector<std::size_t> ts = traces[ti].transitions;
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    for (auto t : ts) touching[t].push_back(ti);
  }
  return touching;
}

inline void record_initial_values(const Sketch& s, const Checker& chk, std::size_t num_traces, const std::vector<int>& assign,
                                  SolveResult& res) {
  Bits c(s.unknowns.size());
  for (std::size_t ti = 0; ti < num_traces; ++ti) {
    std::vector<std::optional<Value>> pins;
    chk.check(ti, assign, c, &pins);
    std::map<std::string, Value> init;
    for (std::size_t r = 0; r < s.registers.size(); ++r)
      if (s.registers[r].init == InitPolicy::free) init[s.registers[r].name] = pins[r].value_or(0);
    res.initial_values.push_back(std::move(init));
  }
}

// Depth-first search over E-variables in index order with forward checking
// and conflict-directed backjumping: returns the lexicographically least
// consistent assignment.
inline SolveResult search(const Sketch& s, const std::vector<CompiledTrace>& traces, const std::vector<NegativeExample>& negs,
                          std::size_t budget) {
  const std::size_t n = s.unknowns.size();
  Checker chk(s, traces, negs);
  const auto touching = traces_touching(s, traces);
  SolveResult res;
  std::vector<int> assign(n, -1);
  std::vector<Bits> conf(n, Bits(n));
  std::size_t i = 0;
  Bits c(n);
  while (i < n) {
    bool ok = false;
    const std::size_t t = s.unknowns[i].transition;
    while (++assign[i] < static_cast<int>(s.domain(i))) {
      if (++res.nodes > budget) throw Error(ErrorCode::synthesis, "solver budget of " + std::to_string(budget) + " nodes exhausted");
      bool good = true;
      for (auto ti : touching[t])
        if (!chk.check(ti, assign, c)) {
          conf[i].merge(c);
          good = false;
          break;
        }
      if (good) {
        ok = true;
        break;
      }
    }
    if (ok) {
      if (++i < n) {
        assign[i] = -1;
        conf[i].clear();
      }
      continue;
    }
    assign[i] = -1;
    conf[i].reset(i);
    if (conf[i].empty()) return res;  // unsat
    const std::size_t h = conf[i].max();
    conf[h].merge(conf[i]);
    conf[h].reset(h);
    for (std::size_t j = h + 1; j <= i; ++j) {
      assign[j] = -1;
      conf[j].clear();
    }
    i = h;
  }
  res.sat = true;
  for (auto a : assign) res.assignment.push_back(static_cast<std::size_t>(a));
  record_initial_values(s, chk, traces.size(), assign, res);
  return res;
}

// Clause-learning search with the trace checker as theory: each checker
// conflict becomes a learned clause. Decisions prefer `hint`, then leaving a
// register unchanged, then grammar order; the result is some consistent
// assignment, not necessarily the least one.
inline SolveResult cdcl_search(const Sketch& s, const std::vector<CompiledTrace>& traces,
                               const std::vector<NegativeExample>& negs, std::size_t budget, const TermAssignment* hint,
                               const std::vector<int>* fixed = nullptr) {
  const std::size_t n = s.unknowns.size();
  Checker chk(s, traces, negs);
  const auto touching = traces_touching(s, traces);
  sat::Solver solver;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = s.unknowns[i];
    std::vector<int> pref;
    if (hint && hint->size() == n) pref.push_back(static_cast<int>((*hint)[i]));
    if (u.kind == Unknown::Kind::update)
      for (std::size_t k = 0; k < s.update_grammar.size(); ++k)
        if (s.update_grammar[k] == Term::reg(u.slot)) pref.push_back(static_cast<int>(k));
    solver.add_group(static_cast<int>(s.domain(i)), pref);
    if (fixed && (*fixed)[i] >= 0) solver.add_clause({solver.lit(static_cast<int>(i), (*fixed)[i])});
  }
  std::vector<int> assign(n, -1);
  Bits c(n);
  std::vector<char> queued(traces.size(), 0);
  const Checker::Excluded excluded = [&](std::size_t u, std::size_t k) {
    return solver.is_false(solver.lit(static_cast<int>(u), static_cast<int>(k)));
  };
  std::vector<Checker::Exclusion> found;
  auto theory = [&]() {
    for (std::size_t i = 0; i < n; ++i) assign[i] = solver.value_of(static_cast<int>(i)).value_or(-1);
    std::vector<std::size_t> todo;
    for (int g : solver.pending_groups())
      for (auto ti : touching[s.unknowns[static_cast<std::size_t>(g)].transition])
        if (!queued[ti]) {
          queued[ti] = 1;
          todo.push_back(ti);
        }
    sat::Solver::TheoryResult out;
    found.clear();
    for (auto ti : todo) {
      if (!out.conflict && !chk.check(ti, assign, c, nullptr, &excluded, &found)) {
        std::vector<sat::Lit> clause;
        c.for_each([&](std::size_t u) { clause.push_back(sat::negate(solver.lit(static_cast<int>(u), assign[u]))); });
        out.conflict = std::move(clause);
      }
      queued[ti] = 0;
    }
    if (out.conflict) return out;
    for (const auto& e : found) {
      std::vector<sat::Lit> clause{sat::negate(solver.lit(static_cast<int>(e.unknown), static_cast<int>(e.value)))};
      e.because.for_each([&](std::size_t u) { clause.push_back(sat::negate(solver.lit(static_cast<int>(u), assign[u]))); });
      out.implied.push_back(std::move(clause));
    }
    return out;
  };
  SolveResult res;
  const auto verdict = solver.solve(theory, budget);
  res.nodes = solver.conflicts() + solver.decisions();
  if (verdict == sat::Solver::Result::budget)
    throw Error(ErrorCode::synthesis, "solver budget of " + std::to_string(budget) + " nodes exhausted");
  if (verdict == sat::Solver::Result::unsat) return res;
  res.sat = true;
  for (std::size_t i = 0; i < n; ++i) assign[i] = *solver.value_of(static_cast<int>(i));
  for (auto a : assign) res.assignment.push_back(static_cast<std::size_t>(a));
  record_initial_values(s, chk, traces.size(), assign, res);
  return res;
}

} // namespace detail

inline constexpr std::size_t default_node_budget = 20'000'000;

// Traces up to this count get a deletion-minimized unsat core.
inline constexpr std::size_t core_minimization_limit = 64;

// Lexicographically least consistent assignment in grammar order. With
// `frame_first`, clause-learning search for any consistent assignment,
// preferring `hint` (a previous solution) and unchanged registers.
inline SolveResult solve(const TraceConstraintSystem& sys, std::size_t budget = default_node_budget, bool frame_first = false,
                         const TermAssignment* hint = nullptr) {
  auto run = [&](const std::vector<detail::CompiledTrace>& tr, const std::vector<NegativeExample>& ng) {
    return frame_first ? detail::cdcl_search(sys.sketch, tr, ng, budget, hint) : detail::search(sys.sketch, tr, ng, budget);
  };
  auto res = run(sys.compiled, sys.negatives);
  if (res.sat) return res;
  std::vector<std::size_t> core(sys.compiled.size());
  for (std::size_t i = 0; i < core.size(); ++i) core[i] = i;
  if (core.size() <= core_minimization_limit) {
    for (std::size_t k = core.size(); k-- > 0;) {
      std::vector<std::size_t> trial = core;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(k));
      std::vector<detail::CompiledTrace> sub;
      std::vector<std::size_t> remap(sys.compiled.size(), SIZE_MAX);
      for (auto ti : trial) {
        remap[ti] = sub.size();
        sub.push_back(sys.compiled[ti]);
      }
      std::vector<NegativeExample> negs;
      for (auto ng : sys.negatives)
        if (remap[ng.trace] != SIZE_MAX) {
          ng.trace = remap[ng.trace];
          negs.push_back(ng);
        }
      if (!run(sub, negs).sat) core = std::move(trial);
    }
  }
  res.unsat_core = std::move(core);
  return res;
}

inline std::size_t keep_term(const Sketch& s, std::size_t reg) {
  return static_cast<std::size_t>(std::find(s.update_grammar.begin(), s.update_grammar.end(), Term::reg(reg)) -
                                  s.update_grammar.begin());
}

// Unknown values forced by declaring registers never updated (-1: free).
inline std::vector<int> steady_constraints(const Sketch& s, const std::vector<bool>& steady) {
  std::vector<int> fixed(s.unknowns.size(), -1);
  for (std::size_t i = 0; i < s.unknowns.size(); ++i) {
    const auto& u = s.unknowns[i];
    if (u.kind == Unknown::Kind::update && u.slot < steady.size() && steady[u.slot])
      fixed[i] = static_cast<int>(keep_term(s, u.slot));
  }
  return fixed;
}

// Re-solve after traces `first_new..` were added to a system `prev`
// satisfied: only transitions those traces visit may change at first; while
// that is unsat the free region grows by every trace touching it. `steady`
// registers stay unchanged everywhere.
inline SolveResult repair(const TraceConstraintSystem& sys, const TermAssignment& prev, std::size_t first_new,
                          const std::vector<bool>& steady, std::size_t budget = default_node_budget) {
  const auto& s = sys.sketch;
  const std::size_t T = s.skeleton.num_transitions();
  const auto base = steady_constraints(s, steady);
  std::vector<bool> frozen(T, true);
  for (std::size_t ti = first_new; ti < sys.compiled.size(); ++ti)
    for (auto t : sys.compiled[ti].transitions) frozen[t] = false;
  std::size_t nodes = 0;
  for (;;) {
    auto fixed = base;
    for (std::size_t i = 0; i < s.unknowns.size(); ++i)
      if (frozen[s.unknowns[i].transition] && fixed[i] < 0) fixed[i] = static_cast<int>(prev[i]);
    auto res = detail::cdcl_search(s, sys.compiled, sys.negatives, budget, &prev, &fixed);
    nodes += res.nodes;
    if (res.sat || std::none_of(frozen.begin(), frozen.end(), [](bool f) { return f; })) {
      res.nodes = nodes;
      return res;
    }
    auto grown = frozen;
    for (const auto& c : sys.compiled)
      if (std::any_of(c.transitions.begin(), c.transitions.end(), [&](std::size_t t) { return !frozen[t]; }))
        for (auto t : c.transitions) grown[t] = false;
    if (grown == frozen) std::fill(grown.begin(), grown.end(), false);
    frozen = std::move(grown);
  }
}

// Greedy clean-up of a consistent assignment: leave registers unchanged
// where the traces allow it, then move each output term as early in the
// grammar as it can go. Every accepted step keeps all traces consistent.
inline std::size_t simplify(const TraceConstraintSystem& sys, TermAssignment& a) {
  const auto& s = sys.sketch;
  const std::size_t n = s.unknowns.size();
  if (a.size() != n) return 0;
  detail::Checker chk(s, sys.compiled, sys.negatives);
  const auto touching = detail::traces_touching(s, sys.compiled);
  std::vector<int> assign(a.begin(), a.end());
  detail::Bits c(n);
  auto fits = [&](std::size_t i) {
    for (auto ti : touching[s.unknowns[i].transition])
      if (!chk.check(ti, assign, c)) return false;
    return true;
  };
  auto attempt = [&](std::size_t i, int v) {
    const int old = assign[i];
    assign[i] = v;
    if (fits(i)) return true;
    assign[i] = old;
    return false;
  };
  std::size_t changed = 0;
  for (bool again = true; again;) {
    again = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& u = s.unknowns[i];
      if (u.kind != Unknown::Kind::update) continue;
      const auto keep = static_cast<int>(keep_term(s, u.slot));
      if (assign[i] != keep && attempt(i, keep)) again = true, ++changed;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (s.unknowns[i].kind != Unknown::Kind::output) continue;
      for (int v = 0; v < assign[i]; ++v)
        if (attempt(i, v)) {
          again = true, ++changed;
          break;
        }
    }
  }
  for (std::size_t i = 0; i < n; ++i) a[i] = static_cast<std::size_t>(assign[i]);
  return changed;
}

inline ExtendedMealyMachine to_extended(const Sketch& s, const TermAssignment& a) {
  const auto& m = s.skeleton;
  const std::size_t k = m.inputs().size();
  std::vector<std::vector<Term>> upd(m.num_transitions()), outs(m.num_transitions());
  for (std::size_t t = 0; t < m.num_transitions(); ++t) {
    const auto arity = m.output(static_cast<StateId>(t / k), t % k).params.size();
    if (s.first_unknown[t] < 0) {
      for (std::size_t r = 0; r < s.registers.size(); ++r) upd[t].push_back(Term::reg(r));
      for (std::size_t j = 0; j < arity; ++j) outs[t].push_back(s.output_grammar.front());
      continue;
    }
    for (std::size_t r = 0; r < s.registers.size(); ++r) upd[t].push_back(s.update_grammar[a[s.update_unknown(t, r)]]);
    for (std::size_t j = 0; j < arity; ++j) outs[t].push_back(s.output_grammar[a[s.output_unknown(t, j)]]);
  }
  return ExtendedMealyMachine(m, s.registers, s.params, std::move(upd), std::move(outs), s.rules());
}

struct ReplayMismatch {
  std::size_t step = 0;
  std::optional<std::size_t> param;  // empty: the output symbol itself differs
  std::optional<Value> predicted;
  Value observed = 0;
};

// Replays a parameterized trace on `m`, with free registers starting at
// whatever the trace's first observation of them implies. Returns the first
// step where the machine cannot produce the observed output.
inline std::optional<ReplayMismatch> replay_mismatch(const ExtendedMealyMachine& m, const Trace& t,
                                                     std::map<std::string, Value>* initial = nullptr) {
  const auto& sk = m.skeleton();
  const std::size_t R = m.registers().size();
  struct V {
    int base;
    Value off;
  };
  std::vector<V> regs(R);
  for (std::size_t r = 0; r < R; ++r) regs[r] = {m.registers()[r].init == InitPolicy::free ? static_cast<int>(r) : -1, 0};
  std::vector<std::optional<Value>> pin(R);
  StateId st = 0;
  for (std::size_t i = 0; i < t.inputs.size(); ++i) {
    auto a = sk.input_index(t.inputs[i]);
    if (!a || sk.output(st, *a).erased() != t.outputs[i].erased()) return ReplayMismatch{i, std::nullopt, std::nullopt, 0};
    const std::size_t tr = m.transition(st, *a);
    auto eval = [&](const Term& term) -> V {
      if (term.kind == Term::Kind::param) return {-1, t.inputs[i].params[term.index].value_or(0) + term.offset};
      V v = regs[term.index];
      v.off += term.offset;
      return v;
    };
    std::vector<V> next(R);
    for (std::size_t r = 0; r < R; ++r) next[r] = eval(m.updates(tr)[r]);
    regs = std::move(next);
    for (std::size_t j = 0; j < t.outputs[i].params.size(); ++j) {
      const V v = eval(m.output_terms(tr)[j]);
      const Value obs = t.outputs[i].params[j].value_or(0);
      if (v.base < 0) {
        if (v.off != obs) return ReplayMismatch{i, j, v.off, obs};
        continue;
      }
      auto& p = pin[static_cast<std::size_t>(v.base)];
      if (!p) p = obs - v.off;
      else if (*p + v.off != obs) return ReplayMismatch{i, j, *p + v.off, obs};
    }
    st = sk.next(st, *a);
  }
  if (initial)
    for (std::size_t r = 0; r < R; ++r)
      if (m.registers()[r].init == InitPolicy::free) (*initial)[m.registers()[r].name] = pin[r].value_or(0);
  return std::nullopt;
}

struct SynthesisConfig {
  std::size_t max_iterations = 25;
  std::size_t validation_traces = 5000;
  std::size_t validation_max_len = 12;
  std::size_t initial_trace_cap = 300;
  std::size_t per_transition = 1;  // initial traces aim to cover each transition this often
  std::size_t counterexamples_per_round = 8;
  bool shrink = true;
  bool simplify = true;  // canonicalize each candidate before validating it
  std::size_t normalize_budget = 500'000;  // per attempt to pin a register as never updated  // cut counterexamples at the mismatch and drop inputs that don't matter
  std::uint64_t seed = 1;
  std::size_t node_budget = default_node_budget;
  bool frame_first = true;
  GrammarOptions grammar;
};

struct SynthesisReport {
  std::size_t iterations = 0;
  std::size_t traces_used = 0;
  std::size_t negatives = 0;
  std::size_t validation_runs = 0;
  std::size_t solver_nodes = 0;
  bool validated = false;
  std::vector<std::string> chosen;  // one line per transition

  std::string to_string() const {
    std::string out = "iterations " + std::to_string(iterations) + "\ntraces " + std::to_string(traces_used) +
                      "\nnegative_examples " + std::to_string(negatives) + "\nvalidation_runs " +
                      std::to_string(validation_runs) + "\nsolver_nodes " + std::to_string(solver_nodes) +
                      "\nvalidated " + (validated ? "1" : "0") + "\n";
    for (const auto& c : chosen) out += "term " + c + "\n";
    return out;
  }
};

struct SynthesisResult {
  ExtendedMealyMachine machine;
  SynthesisReport report;
  Sketch sketch;
  TermAssignment assignment;
};

// Runs a fresh query on the SUL and returns it with concrete parameters.
using TraceSource = std::function<Trace(const Word&)>;

// Greedy pick: first traces that reach uncovered transitions, then traces that
// raise a transition's count below `per`, up to `cap`.
inline std::vector<Trace> select_traces(const MealyMachine& m, const std::vector<Trace>& pool, std::size_t cap, std::size_t per) {
  std::vector<std::size_t> cover(m.num_transitions(), 0);
  std::vector<bool> taken(pool.size(), false);
  std::vector<Trace> out;
  auto path = [&](const Trace& t) {
    std::vector<std::size_t> p;
    StateId s = 0;
    for (const auto& in : t.inputs) {
      auto a = m.input_index(in);
      if (!a) break;
      p.push_back(s * m.inputs().size() + *a);
      s = m.next(s, *a);
    }
    return p;
  };
  for (std::size_t need : {std::size_t{1}, per}) {
    for (std::size_t i = 0; i < pool.size() && out.size() < cap; ++i) {
      if (taken[i] || pool[i].inputs.empty()) continue;
      auto p = path(pool[i]);
      bool useful = std::any_of(p.begin(), p.end(), [&](std::size_t t) { return cover[t] < need; });
      if (!useful) continue;
      taken[i] = true;
      for (auto t : p) ++cover[t];
      out.push_back(pool[i]);
    }
  }
  return out;
}

inline std::vector<std::string> describe(const ExtendedMealyMachine& x) {
  std::vector<std::string> out;
  const auto& sk = x.skeleton();
  for (StateId s = 0; s < sk.num_states(); ++s)
    for (std::size_t a = 0; a < sk.inputs().size(); ++a) {
      const auto t = x.transition(s, a);
      std::string line = "s" + std::to_string(s) + " " + sk.inputs()[a].to_string() + " / " + sk.output(s, a).to_string() + " |";
      for (const auto& u : x.updates(t)) line += " " + x.term_to_string(u);
      line += " |";
      for (const auto& o : x.output_terms(t)) line += " " + x.term_to_string(o);
      out.push_back(line);
    }
  return out;
}

// Short counterexample: cut after the mismatch, then greedily drop earlier
// inputs as long as a fresh run of the shorter word still disagrees.
inline Trace shrink_counterexample(const ExtendedMealyMachine& x, Word w, const TraceSource& fresh, std::size_t& runs) {
  for (std::size_t p = 0; p + 1 < w.size();) {
    Word shorter = w;
    shorter.erase(shorter.begin() + static_cast<std::ptrdiff_t>(p));
    ++runs;
    auto mm = replay_mismatch(x, fresh(shorter));
    if (mm && mm->param) {
      shorter.resize(mm->step + 1);
      w = std::move(shorter);
    } else {
      ++p;
    }
  }
  ++runs;
  return fresh(w);
}

// Counterexample-guided loop: solve on the current traces, test the candidate
// on fresh random SUL runs, add a few failing runs (plus negative examples
// for the wrong values) and re-solve around the previous answer. Once a
// candidate passes, registers are tried one by one as never updated; each
// such tightening is validated like any other candidate.
inline SynthesisResult synthesize(const MealyMachine& m, const std::vector<Trace>& table, const TraceSource& fresh,
                                  const std::vector<RegisterDecl>& registers, const std::vector<std::string>& params,
                                  const SynthesisConfig& cfg = {}) {
  if (table.empty()) throw Error(ErrorCode::synthesis, "no cached traces to synthesize from; run learn first");
  SynthesisResult out;
  out.sketch = build_sketch(m, registers, params, std::nullopt, cfg.grammar);
  const auto& sk = out.sketch;
  std::vector<Trace> traces = select_traces(m, table, cfg.initial_trace_cap, cfg.per_transition);
  std::vector<NegativeExample> negatives;
  auto rng = make_rng(cfg.seed, Stream::synthesis);
  const auto& sigma = m.inputs();
  const std::size_t per_round = std::max<std::size_t>(cfg.counterexamples_per_round, 1);
  std::vector<bool> steady(sk.registers.size(), false);
  std::size_t next_steady = cfg.frame_first ? 0 : steady.size();
  std::size_t first_new = 0;
  std::optional<TermAssignment> candidate;  // already solved, waiting for validation
  for (std::size_t iter = 1; iter <= cfg.max_iterations; ++iter) {
    out.report.iterations = iter;
    auto sys = generate_constraints(sk, traces, negatives);
    if (!candidate) {
      SolveResult res;
      if (cfg.frame_first && !out.assignment.empty()) {
        res = repair(sys, out.assignment, first_new, steady, cfg.node_budget);
        if (!res.sat && std::count(steady.begin(), steady.end(), true) > 0) {
          std::fill(steady.begin(), steady.end(), false);
          next_steady = steady.size();
          out.report.solver_nodes += res.nodes;
          res = repair(sys, out.assignment, first_new, steady, cfg.node_budget);
        }
        if (!res.sat) res = solve(sys, cfg.node_budget, true, &out.assignment);  // for the unsat core
      } else {
        res = solve(sys, cfg.node_budget, cfg.frame_first);
      }
      out.report.solver_nodes += res.nodes;
      if (!res.sat) {
        std::string core;
        for (auto ti : res.unsat_core) core += " " + to_string(traces[ti].inputs);
        throw Error(ErrorCode::synthesis, "grammar insufficient: no term assignment reproduces " +
                                              std::to_string(res.unsat_core.size()) + " trace(s):" + core);
      }
      candidate = res.assignment;
    }
    out.assignment = std::move(*candidate);
    candidate.reset();
    if (cfg.simplify) simplify(sys, out.assignment);
    out.machine = to_extended(sk, out.assignment);
    out.report.traces_used = traces.size();
    out.report.negatives = negatives.size();
    out.report.chosen = describe(out.machine);
    std::size_t failed = 0;
    first_new = traces.size();
    std::uniform_int_distribution<std::size_t> len(1, std::max<std::size_t>(cfg.validation_max_len, 1));
    std::uniform_int_distribution<std::size_t> sym(0, sigma.size() - 1);
    for (std::size_t v = 0; v < cfg.validation_traces && failed < per_round; ++v) {
      Word w;
      for (std::size_t n = len(rng); n > 0; --n) w.push_back(sigma[sym(rng)]);
      Trace t = fresh(w);
      ++out.report.validation_runs;
      auto mm = replay_mismatch(out.machine, t);
      if (!mm) continue;
      if (!mm->param)
        throw Error(ErrorCode::synthesis, "SUL left the learned skeleton at step " + std::to_string(mm->step + 1) +
                                              " of " + to_string(t.inputs));
      ++failed;
      if (cfg.shrink) {
        w.resize(mm->step + 1);
        t = shrink_counterexample(out.machine, std::move(w), fresh, out.report.validation_runs);
        mm = replay_mismatch(out.machine, t);
        if (!mm || !mm->param) continue;  // the SUL changed its mind; the original run stays unused
        t.inputs.resize(mm->step + 1);
        t.outputs.resize(mm->step + 1);
      }
      traces.push_back(t);
      if (mm->predicted) negatives.push_back({traces.size() - 1, mm->step, *mm->param, *mm->predicted});
    }
    if (failed > 0) continue;
    out.report.validated = true;
    while (!candidate && next_steady < steady.size()) {
      auto trial = steady;
      trial[next_steady++] = true;
      const auto fixed = steady_constraints(sk, trial);
      try {
        auto res = detail::cdcl_search(sk, sys.compiled, sys.negatives, cfg.normalize_budget, &out.assignment, &fixed);
        out.report.solver_nodes += res.nodes;
        if (!res.sat) continue;
        steady = std::move(trial);
        if (res.assignment != out.assignment) candidate = std::move(res.assignment);
      } catch (const Error&) {
        // too expensive to decide; leave the register free
      }
    }
    if (!candidate) return out;
    out.report.validated = false;
  }
  return out;
}

} // namespace protolearn::synth
