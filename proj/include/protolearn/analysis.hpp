#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "protolearn/adapter.hpp"
#include "protolearn/dot.hpp"
#include "protolearn/error.hpp"
#include "protolearn/extended.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/rng.hpp"
#include "protolearn/synthesis.hpp"
#include "protolearn/text.hpp"

namespace protolearn::analysis {

// ---------------------------------------------------------------- diff

struct DiffExample {
  Word inputs;
  Word outputs_a;
  Word outputs_b;
};

struct DiffReport {
  bool equivalent = true;
  std::vector<DiffExample> examples;  // shortest first
  std::size_t states_a = 0, states_b = 0;
  std::size_t transitions_a = 0, transitions_b = 0;
  TransitionHighlight differing_a;  // transitions of `a` where some example diverges
  std::string summary;              // per reachable state pair, outputs side by side

  std::string to_string() const {
    std::string out = std::string("verdict ") + (equivalent ? "equivalent" : "differing") + "\n";
    out += "states " + std::to_string(states_a) + " " + std::to_string(states_b) + "\n";
    out += "transitions " + std::to_string(transitions_a) + " " + std::to_string(transitions_b) + "\n";
    for (const auto& e : examples) {
      out += "counterexample " + protolearn::to_string(e.inputs) + "\n";
      out += "  a: " + protolearn::to_string(e.outputs_a) + "\n";
      out += "  b: " + protolearn::to_string(e.outputs_b) + "\n";
    }
    return out + summary;
  }
};

// Product-machine search. Every divergence found while expanding the product
// breadth-first becomes an example, so examples come out shortest first.
inline DiffReport diff(const MealyMachine& a, const MealyMachine& b, std::size_t max_examples = 3) {
  const auto map = align_inputs(a, b);
  const std::size_t k = a.inputs().size();
  DiffReport rep;
  rep.states_a = a.num_states();
  rep.states_b = b.num_states();
  rep.transitions_a = a.num_transitions();
  rep.transitions_b = b.num_transitions();
  struct Node {
    StateId sa, sb;
    std::size_t parent, sym;
  };
  std::vector<Node> nodes{{0, 0, SIZE_MAX, SIZE_MAX}};
  std::vector<bool> seen(a.num_states() * b.num_states(), false);
  seen[0] = true;
  auto word_to = [&](std::size_t n) {
    Word w;
    for (; nodes[n].parent != SIZE_MAX; n = nodes[n].parent) w.push_back(a.inputs()[nodes[n].sym]);
    std::reverse(w.begin(), w.end());
    return w;
  };
  for (std::size_t h = 0; h < nodes.size(); ++h) {
    const Node cur = nodes[h];
    std::string row = "  s" + std::to_string(cur.sa) + "|s" + std::to_string(cur.sb) + ":";
    for (std::size_t x = 0; x < k; ++x) {
      const auto& oa = a.output(cur.sa, x);
      const auto& ob = b.output(cur.sb, map[x]);
      const bool differs = oa.erased() != ob.erased();
      row += " " + a.inputs()[x].kind + "=" + oa.kind + (differs ? "*" + ob.kind : "");
      if (differs) {
        rep.equivalent = false;
        rep.differing_a.insert({cur.sa, x});
        if (rep.examples.size() < max_examples) {
          Word w = word_to(h);
          w.push_back(a.inputs()[x]);
          rep.examples.push_back({w, run(a, w), run(b, w)});
        }
      }
      const StateId na = a.next(cur.sa, x), nb = b.next(cur.sb, map[x]);
      if (!seen[na * b.num_states() + nb]) {
        seen[na * b.num_states() + nb] = true;
        nodes.push_back({na, nb, h, x});
      }
    }
    rep.summary += row + "\n";
  }
  rep.summary = "side-by-side (a=out, * marks b's differing output)\n" + rep.summary;
  return rep;
}

inline std::string diff_dot(const MealyMachine& a, const DiffReport& rep) { return to_dot(a, rep.differing_a); }

// ---------------------------------------------------------------- safety

// Symbol-name pattern: `*`, `A|B|C`, or `!A|B` (anything but).
struct Pattern {
  bool any = false;
  bool negate = false;
  std::set<std::string> names;

  static Pattern parse(const std::string& s) {
    Pattern p;
    if (s == "*") {
      p.any = true;
      return p;
    }
    std::string body = s;
    if (!body.empty() && body[0] == '!') {
      p.negate = true;
      body = body.substr(1);
    }
    for (auto& n : text::split(body, '|'))
      if (!n.empty()) p.names.insert(n);
    if (p.names.empty()) throw Error(ErrorCode::parse, "empty symbol pattern '" + s + "'");
    return p;
  }

  bool matches(const AbstractSymbol& sym) const {
    if (any) return true;
    return (names.count(sym.kind) > 0) != negate;
  }
};

// Deterministic monitor over (input, output) steps. Rules are tried in file
// order; the first match fires. Reaching `sink` is a violation.
struct Monitor {
  struct Rule {
    std::size_t from;
    Pattern in, out;
    std::size_t to;
  };
  std::string name;
  std::string description;
  std::vector<std::string> states;
  std::size_t initial = 0;
  std::size_t sink = 0;
  std::vector<Rule> rules;

  std::optional<std::size_t> step(std::size_t q, const AbstractSymbol& in, const AbstractSymbol& out) const {
    for (const auto& r : rules)
      if (r.from == q && r.in.matches(in) && r.out.matches(out)) return r.to;
    return std::nullopt;
  }
};

//   protolearn-monitor 1
//   name no-data-after-close
//   description text ...
//   states open closed bad
//   initial open
//   sink bad
//   rule open * RST|ACK+RST closed
//   rule open * * open
//   ...
//   end
inline Monitor parse_monitor(std::string_view doc) {
  auto ls = text::lines(doc);
  text::expect_header(ls, "protolearn-monitor", 1);
  Monitor m;
  std::optional<std::string> initial, sink;
  struct RawRule {
    std::size_t line;
    std::vector<std::string> t;
  };
  std::vector<RawRule> raw;
  bool ended = false;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto& l = ls[i];
    const auto& t = l.tokens;
    if (ended) throw ParseError(l.number, t[0], "content after 'end'");
    if (t[0] == "name" && t.size() == 2) m.name = t[1];
    else if (t[0] == "description") {
      for (std::size_t k = 1; k < t.size(); ++k) m.description += (k > 1 ? " " : "") + t[k];
    } else if (t[0] == "states") m.states.assign(t.begin() + 1, t.end());
    else if (t[0] == "initial" && t.size() == 2) initial = t[1];
    else if (t[0] == "sink" && t.size() == 2) sink = t[1];
    else if (t[0] == "rule") {
      if (t.size() != 5) throw ParseError(l.number, "rule", "expected 'rule <state> <input-pattern> <output-pattern> <state>'");
      raw.push_back({l.number, t});
    } else if (t[0] == "end") ended = true;
    else throw ParseError(l.number, t[0], "unknown or malformed directive");
  }
  if (!ended) throw ParseError(ls.back().number, "end", "document is truncated (missing 'end')");
  auto state = [&](std::size_t line, const std::string& field, const std::string& n) {
    auto it = std::find(m.states.begin(), m.states.end(), n);
    if (it == m.states.end()) throw ParseError(line, field, "undeclared monitor state '" + n + "'");
    return static_cast<std::size_t>(it - m.states.begin());
  };
  if (m.states.empty()) throw ParseError(ls.front().number, "states", "monitor declares no states");
  if (!initial) throw ParseError(ls.front().number, "initial", "monitor has no initial state");
  if (!sink) throw ParseError(ls.front().number, "sink", "monitor has no sink state");
  m.initial = state(ls.front().number, "initial", *initial);
  m.sink = state(ls.front().number, "sink", *sink);
  for (const auto& r : raw) {
    try {
      m.rules.push_back({state(r.line, "rule", r.t[1]), Pattern::parse(r.t[2]), Pattern::parse(r.t[3]), state(r.line, "rule", r.t[4])});
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(r.line, "rule", e.what());
    }
  }
  return m;
}

// Throws if some monitor state has no rule for an (input, output) pair the
// machine can produce.
inline void require_total(const Monitor& mon, const MealyMachine& m) {
  for (std::size_t q = 0; q < mon.states.size(); ++q)
    for (const auto& in : m.inputs())
      for (const auto& out : m.outputs())
        if (!mon.step(q, in, out))
          throw Error(ErrorCode::config, "monitor '" + mon.name + "' is not total: state " + mon.states[q] + " has no rule for " +
                                             in.to_string() + " / " + out.to_string());
}

struct SafetyResult {
  bool holds = true;
  Trace witness;  // shortest word driving the monitor into its sink, with m's outputs

  std::string to_string(const std::string& name) const {
    if (holds) return "property " + name + " holds\n";
    std::string out = "property " + name + " violated by " + protolearn::to_string(witness.inputs) + "\n";
    for (std::size_t i = 0; i < witness.inputs.size(); ++i)
      out += "  " + witness.inputs[i].to_string() + " / " + witness.outputs[i].to_string() + "\n";
    return out;
  }
};

inline SafetyResult check_safety(const MealyMachine& m, const Monitor& mon) {
  require_total(mon, m);
  SafetyResult res;
  if (mon.initial == mon.sink) {
    res.holds = false;
    return res;
  }
  const std::size_t Q = mon.states.size(), k = m.inputs().size();
  struct Node {
    StateId s;
    std::size_t q, parent, sym;
  };
  std::vector<Node> nodes{{0, mon.initial, SIZE_MAX, SIZE_MAX}};
  std::vector<bool> seen(m.num_states() * Q, false);
  seen[mon.initial] = true;
  for (std::size_t h = 0; h < nodes.size(); ++h)
    for (std::size_t x = 0; x < k; ++x) {
      const Node cur = nodes[h];
      const std::size_t q = *mon.step(cur.q, m.inputs()[x], m.output(cur.s, x));
      const StateId s = m.next(cur.s, x);
      if (q == mon.sink) {
        Word w{m.inputs()[x]};
        for (std::size_t n = h; nodes[n].parent != SIZE_MAX; n = nodes[n].parent) w.push_back(m.inputs()[nodes[n].sym]);
        std::reverse(w.begin(), w.end());
        res.holds = false;
        res.witness = {w, run(m, w)};
        return res;
      }
      if (!seen[s * Q + q]) {
        seen[s * Q + q] = true;
        nodes.push_back({s, q, h, x});
      }
    }
  return res;
}

// ---------------------------------------------------------------- quantitative

struct QuantitativeProperty {
  enum class Kind { nonzero, equals_input_plus, increasing };
  std::string name;
  Kind kind = Kind::nonzero;
  std::string output;        // output symbol kind the predicate looks at
  std::string out_param;
  std::string in_param;      // equals_input_plus
  Value k = 0;               // equals_input_plus
};

struct SamplingConfig {
  std::size_t samples = 1000;
  std::size_t max_len = 12;
  std::uint64_t seed = 1;
};

//   protolearn-quantitative 1
//   property ack-nonzero nonzero ACK an
//   property synack-ack equals-input-plus ACK+SYN an sn 1
//   property seq-grows increasing ACK sn
//   end
inline std::vector<QuantitativeProperty> parse_quantitative(std::string_view doc) {
  auto ls = text::lines(doc);
  text::expect_header(ls, "protolearn-quantitative", 1);
  std::vector<QuantitativeProperty> out;
  bool ended = false;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto& l = ls[i];
    const auto& t = l.tokens;
    if (ended) throw ParseError(l.number, t[0], "content after 'end'");
    if (t[0] == "end") {
      ended = true;
      continue;
    }
    if (t[0] != "property" || t.size() < 3) throw ParseError(l.number, t[0], "expected 'property <name> <kind> ...'");
    QuantitativeProperty p;
    p.name = t[1];
    if (t[2] == "nonzero" || t[2] == "increasing") {
      if (t.size() != 5) throw ParseError(l.number, t[2], "expected '<OUT> <param>'");
      p.kind = t[2] == "nonzero" ? QuantitativeProperty::Kind::nonzero : QuantitativeProperty::Kind::increasing;
      p.output = t[3];
      p.out_param = t[4];
    } else if (t[2] == "equals-input-plus") {
      if (t.size() != 7) throw ParseError(l.number, t[2], "expected '<OUT> <out-param> <in-param> <k>'");
      p.kind = QuantitativeProperty::Kind::equals_input_plus;
      p.output = t[3];
      p.out_param = t[4];
      p.in_param = t[5];
      p.k = text::require_int(l, "k", t[6]);
    } else {
      throw ParseError(l.number, t[2], "unknown property kind");
    }
    out.push_back(std::move(p));
  }
  if (!ended) throw ParseError(ls.back().number, "end", "document is truncated (missing 'end')");
  return out;
}

struct QuantitativeResult {
  bool violated = false;
  bool vacuous = false;      // the predicate never applied to any sampled step
  std::size_t samples = 0;
  std::size_t applicable_steps = 0;
  Trace witness;
  std::size_t witness_step = 0;

  std::string to_string(const std::string& name) const {
    if (violated) {
      std::string out = "property " + name + " violated at step " + std::to_string(witness_step + 1) + " of:\n";
      for (std::size_t i = 0; i < witness.inputs.size(); ++i)
        out += "  " + witness.inputs[i].to_string() + " / " + witness.outputs[i].to_string() + "\n";
      return out;
    }
    if (vacuous) return "property " + name + " vacuous: no sampled step emitted the observed output\n";
    return "property " + name + ": no violation found in " + std::to_string(samples) + " samples\n";
  }
};

// Index of the step where the predicate fails, if any; counts steps it applies to.
inline std::optional<std::size_t> violation(const QuantitativeProperty& p, const Trace& t, const std::vector<std::string>& params,
                                            std::size_t& applicable) {
  auto idx = [&](const std::string& n) -> std::size_t {
    auto it = std::find(params.begin(), params.end(), n);
    if (it == params.end()) throw Error(ErrorCode::config, "property " + p.name + " names unknown parameter '" + n + "'");
    return static_cast<std::size_t>(it - params.begin());
  };
  const std::size_t op = idx(p.out_param);
  const std::size_t ip = p.kind == QuantitativeProperty::Kind::equals_input_plus ? idx(p.in_param) : 0;
  std::optional<Value> last;
  for (std::size_t i = 0; i < t.outputs.size(); ++i) {
    const auto& o = t.outputs[i];
    if (o.kind != p.output || op >= o.params.size() || !o.params[op]) continue;
    ++applicable;
    const Value v = *o.params[op];
    switch (p.kind) {
      case QuantitativeProperty::Kind::nonzero:
        if (v == 0) return i;
        break;
      case QuantitativeProperty::Kind::equals_input_plus:
        if (!t.inputs[i].params[ip] || v != *t.inputs[i].params[ip] + p.k) return i;
        break;
      case QuantitativeProperty::Kind::increasing:
        if (last && v <= *last) return i;
        last = v;
        break;
    }
  }
  return std::nullopt;
}

// Samples random parameterized runs of `m` (or, when `sul` is given, real SUL
// runs of random words) and returns the first violating trace.
inline QuantitativeResult check_quantitative(const ExtendedMealyMachine& m, const QuantitativeProperty& p,
                                             const SamplingConfig& cfg = {},
                                             const std::optional<synth::TraceSource>& sul = std::nullopt) {
  QuantitativeResult res;
  const auto& sk = m.skeleton();
  if (m.params().empty()) {
    res.vacuous = true;
    return res;
  }
  auto rng = make_rng(cfg.seed, Stream::sampling);
  std::uniform_int_distribution<std::size_t> len(1, std::max<std::size_t>(cfg.max_len, 1));
  std::uniform_int_distribution<std::size_t> sym(0, sk.inputs().size() - 1);
  std::uniform_int_distribution<Value> val(0, (Value{1} << 32) - 1);
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    Word w;
    for (std::size_t l = len(rng); l > 0; --l) w.push_back(sk.inputs()[sym(rng)]);
    Trace t;
    if (sul) {
      t = (*sul)(w);
    } else {
      std::map<std::string, Value> init;
      for (const auto& r : m.registers())
        if (r.init == InitPolicy::free) init[r.name] = val(rng);
      for (auto& in : w)
        for (auto& slot : in.params) slot = val(rng);
      t = {w, run_extended(m, w, init)};
    }
    ++res.samples;
    if (auto step = violation(p, t, m.params(), res.applicable_steps)) {
      res.violated = true;
      res.witness = std::move(t);
      res.witness_step = *step;
      return res;
    }
  }
  res.vacuous = res.applicable_steps == 0;
  return res;
}

// ---------------------------------------------------------------- nondeterminism

inline NondeterminismReport report_nondeterminism(const NondeterminismReport& base, Adapter& adapter, std::size_t replays) {
  return adapter.enrich(base, replays);
}

} // namespace protolearn::analysis
