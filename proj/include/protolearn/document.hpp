#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/extended.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/text.hpp"

// Versioned text documents for learned and extended models.
//
//   protolearn-model 1
//   params sn an
//   input SYN(?,?,0)
//   output NIL
//   output ACK+SYN(?,?,0)
//   states s0 s1 s2
//   initial s0
//   t s0 SYN(?,?,0) ACK+SYN(?,?,0) s1
//   end
//
// Extended models use the `protolearn-extended-model` header, add
// `registers r:zero pr:free ...` and `rules <reg-offset> <param-offset>
// <outputs-read-params>`, and append `| <updates...> | <output terms...>` to
// every transition line.
namespace protolearn {

namespace detail {

inline std::string params_line(const std::vector<std::string>& names) {
  std::string out = "params";
  for (const auto& n : names) out += " " + n;
  return out + "\n";
}

inline std::vector<std::string> default_param_names(const MealyMachine& m) {
  std::size_t arity = 0;
  for (const auto& s : m.inputs()) arity = std::max(arity, s.params.size());
  for (const auto& s : m.outputs()) arity = std::max(arity, s.params.size());
  std::vector<std::string> names;
  for (std::size_t i = 0; i < arity; ++i) names.push_back("p" + std::to_string(i));
  return names;
}

inline std::string skeleton_header(const MealyMachine& m, const std::vector<std::string>& params) {
  std::string out = params_line(params);
  for (const auto& s : m.inputs()) out += "input " + s.to_string() + "\n";
  for (const auto& s : m.outputs()) out += "output " + s.to_string() + "\n";
  out += "states";
  for (std::size_t s = 0; s < m.num_states(); ++s) out += " s" + std::to_string(s);
  out += "\ninitial s0\n";
  return out;
}

inline std::string transition_prefix(const MealyMachine& m, StateId s, std::size_t a) {
  return "t s" + std::to_string(s) + " " + m.inputs()[a].to_string() + " " + m.output(s, a).to_string() + " s" +
         std::to_string(m.next(s, a));
}

struct ParsedSkeleton {
  MealyMachine machine;
  std::vector<std::string> params;
  std::vector<RegisterDecl> registers;
  TermRules rules;
  // Per transition (original state numbering) the raw term groups.
  std::vector<std::vector<std::string>> update_tokens;
  std::vector<std::vector<std::string>> output_tokens;
  std::vector<std::size_t> term_lines;
};

inline Term parse_term(const text::Line& l, const std::string& tok, const std::vector<RegisterDecl>& regs,
                       const std::vector<std::string>& params) {
  std::string base = tok;
  int offset = 0;
  if (auto plus = tok.find('+'); plus != std::string::npos) {
    base = tok.substr(0, plus);
    offset = static_cast<int>(text::require_int(l, "term", tok.substr(plus + 1)));
  }
  for (std::size_t i = 0; i < regs.size(); ++i)
    if (regs[i].name == base) return Term::reg(i, offset);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i] == base) return Term::param(i, offset);
  throw ParseError(l.number, "term", "unknown register or parameter '" + base + "'");
}

inline ParsedSkeleton parse_skeleton(std::string_view doc, std::string_view kind, bool extended) {
  auto ls = text::lines(doc);
  text::expect_header(ls, kind, 1);
  ParsedSkeleton out;
  std::vector<AbstractSymbol> inputs, outputs;
  std::map<std::string, StateId> states;
  std::optional<std::string> initial;
  struct Row {
    std::size_t line;
    std::string from, in, out, to;
    std::vector<std::string> upd, outs;
  };
  std::vector<Row> rows;
  bool ended = false;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto& l = ls[i];
    const auto& t = l.tokens;
    if (ended) throw ParseError(l.number, t[0], "content after 'end'");
    if (t[0] == "params") {
      out.params.assign(t.begin() + 1, t.end());
    } else if (t[0] == "registers" && extended) {
      for (std::size_t k = 1; k < t.size(); ++k) {
        auto colon = t[k].find(':');
        if (colon == std::string::npos) throw ParseError(l.number, "registers", "expected name:zero or name:free");
        auto pol = t[k].substr(colon + 1);
        if (pol != "zero" && pol != "free") throw ParseError(l.number, "registers", "unknown init policy '" + pol + "'");
        out.registers.push_back({t[k].substr(0, colon), pol == "zero" ? InitPolicy::zero : InitPolicy::free});
      }
    } else if (t[0] == "rules" && extended) {
      if (t.size() != 4) throw ParseError(l.number, "rules", "expected 'rules <reg-offset> <param-offset> <0|1>'");
      out.rules.max_register_offset = static_cast<int>(text::require_int(l, "rules", t[1]));
      out.rules.max_param_offset = static_cast<int>(text::require_int(l, "rules", t[2]));
      out.rules.outputs_may_read_params = text::require_int(l, "rules", t[3]) != 0;
    } else if (t[0] == "input" || t[0] == "output") {
      if (t.size() != 2) throw ParseError(l.number, t[0], "expected one symbol");
      AbstractSymbol s;
      try {
        s = t[1] == "NIL" ? AbstractSymbol::nil() : AbstractSymbol::parse(t[1], out.params.size());
      } catch (const Error& e) {
        throw ParseError(l.number, t[0], e.what());
      }
      (t[0] == "input" ? inputs : outputs).push_back(std::move(s));
    } else if (t[0] == "states") {
      for (std::size_t k = 1; k < t.size(); ++k) {
        if (states.count(t[k])) throw ParseError(l.number, "states", "duplicate state '" + t[k] + "'");
        states.emplace(t[k], static_cast<StateId>(states.size()));
      }
    } else if (t[0] == "initial") {
      if (t.size() != 2) throw ParseError(l.number, "initial", "expected one state");
      initial = t[1];
    } else if (t[0] == "t") {
      Row r;
      r.line = l.number;
      std::vector<std::vector<std::string>> groups(1);
      for (std::size_t k = 1; k < t.size(); ++k) {
        if (t[k] == "|") groups.emplace_back();
        else groups.back().push_back(t[k]);
      }
      if (groups[0].size() != 4) throw ParseError(l.number, "t", "expected 't <from> <input> <output> <to>'");
      if (extended && groups.size() != 3) throw ParseError(l.number, "t", "expected '| updates | output terms'");
      if (!extended && groups.size() != 1) throw ParseError(l.number, "t", "unexpected term groups in a plain model");
      r.from = groups[0][0];
      r.in = groups[0][1];
      r.out = groups[0][2];
      r.to = groups[0][3];
      if (extended) {
        r.upd = groups[1];
        r.outs = groups[2];
      }
      rows.push_back(std::move(r));
    } else if (t[0] == "end") {
      ended = true;
    } else {
      throw ParseError(l.number, t[0], "unknown directive");
    }
  }
  if (!ended) throw ParseError(ls.back().number, "end", "document is truncated (missing 'end')");
  if (inputs.empty()) throw ParseError(ls.front().number, "input", "no input symbols declared");
  if (states.empty()) throw ParseError(ls.front().number, "states", "no states declared");
  if (!initial) throw ParseError(ls.front().number, "initial", "no initial state");
  if (!states.count(*initial)) throw ParseError(ls.front().number, "initial", "undeclared state '" + *initial + "'");

  const std::size_t k = inputs.size();
  const std::size_t n = states.size();
  std::vector<StateId> next(n * k);
  std::vector<std::size_t> outs(n * k);
  std::vector<bool> seen(n * k, false);
  out.update_tokens.resize(n * k);
  out.output_tokens.resize(n * k);
  out.term_lines.resize(n * k);
  auto find_sym = [](const std::vector<AbstractSymbol>& list, const std::string& label) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < list.size(); ++i)
      if (list[i].to_string() == label) return i;
    return std::nullopt;
  };
  for (const auto& r : rows) {
    auto f = states.find(r.from);
    if (f == states.end()) throw ParseError(r.line, "from", "undeclared state '" + r.from + "'");
    auto to = states.find(r.to);
    if (to == states.end()) throw ParseError(r.line, "to", "undeclared state '" + r.to + "'");
    auto a = find_sym(inputs, r.in);
    if (!a) throw ParseError(r.line, "input", "undeclared input symbol '" + r.in + "'");
    auto o = find_sym(outputs, r.out);
    if (!o) throw ParseError(r.line, "output", "undeclared output symbol '" + r.out + "'");
    std::size_t cell = f->second * k + *a;
    if (seen[cell]) throw ParseError(r.line, "t", "duplicate transition from '" + r.from + "' on " + r.in);
    seen[cell] = true;
    next[cell] = to->second;
    outs[cell] = *o;
    out.update_tokens[cell] = r.upd;
    out.output_tokens[cell] = r.outs;
    out.term_lines[cell] = r.line;
  }
  for (const auto& [name, id] : states)
    for (std::size_t a = 0; a < k; ++a)
      if (!seen[id * k + a])
        throw ParseError(ls.back().number, "t", "state '" + name + "' has no transition on " + inputs[a].to_string());

  // Reorder term tokens to the machine's BFS numbering.
  MealyMachine m(inputs, outputs, n, states.at(*initial), next, outs);
  std::vector<StateId> order{states.at(*initial)};
  std::vector<bool> placed(n, false);
  placed[order[0]] = true;
  for (std::size_t h = 0; h < order.size(); ++h)
    for (std::size_t a = 0; a < k; ++a)
      if (StateId t = next[order[h] * k + a]; !placed[t]) {
        placed[t] = true;
        order.push_back(t);
      }
  std::vector<std::vector<std::string>> upd(m.num_transitions()), ot(m.num_transitions());
  std::vector<std::size_t> lines(m.num_transitions());
  for (std::size_t s = 0; s < order.size(); ++s)
    for (std::size_t a = 0; a < k; ++a) {
      upd[s * k + a] = out.update_tokens[order[s] * k + a];
      ot[s * k + a] = out.output_tokens[order[s] * k + a];
      lines[s * k + a] = out.term_lines[order[s] * k + a];
    }
  out.update_tokens = std::move(upd);
  out.output_tokens = std::move(ot);
  out.term_lines = std::move(lines);
  out.machine = std::move(m);
  return out;
}

} // namespace detail

inline std::string serialize(const MealyMachine& m, const std::vector<std::string>& param_names = {}) {
  auto params = param_names.empty() ? detail::default_param_names(m) : param_names;
  std::string out = "protolearn-model 1\n" + detail::skeleton_header(m, params);
  for (StateId s = 0; s < m.num_states(); ++s)
    for (std::size_t a = 0; a < m.inputs().size(); ++a) out += detail::transition_prefix(m, s, a) + "\n";
  return out + "end\n";
}

inline MealyMachine deserialize_model(std::string_view doc) {
  return detail::parse_skeleton(doc, "protolearn-model", false).machine;
}

// Parameter names recorded in a model document.
inline std::vector<std::string> model_param_names(std::string_view doc) {
  return detail::parse_skeleton(doc, "protolearn-model", false).params;
}

inline std::string serialize(const ExtendedMealyMachine& m) {
  const auto& sk = m.skeleton();
  std::string out = "protolearn-extended-model 1\n" + detail::skeleton_header(sk, m.params());
  out += "registers";
  for (const auto& r : m.registers()) out += " " + r.name + (r.init == InitPolicy::zero ? ":zero" : ":free");
  out += "\nrules " + std::to_string(m.rules().max_register_offset) + " " + std::to_string(m.rules().max_param_offset) +
         " " + (m.rules().outputs_may_read_params ? "1" : "0") + "\n";
  for (StateId s = 0; s < sk.num_states(); ++s)
    for (std::size_t a = 0; a < sk.inputs().size(); ++a) {
      const auto t = m.transition(s, a);
      out += detail::transition_prefix(sk, s, a) + " |";
      for (const auto& u : m.updates(t)) out += " " + m.term_to_string(u);
      out += " |";
      for (const auto& o : m.output_terms(t)) out += " " + m.term_to_string(o);
      out += "\n";
    }
  return out + "end\n";
}

inline ExtendedMealyMachine deserialize_extended(std::string_view doc) {
  auto p = detail::parse_skeleton(doc, "protolearn-extended-model", true);
  const std::size_t n = p.machine.num_transitions();
  std::vector<std::vector<Term>> upd(n), outs(n);
  for (std::size_t t = 0; t < n; ++t) {
    text::Line l{p.term_lines[t], {}};
    for (const auto& tok : p.update_tokens[t]) upd[t].push_back(detail::parse_term(l, tok, p.registers, p.params));
    for (const auto& tok : p.output_tokens[t]) outs[t].push_back(detail::parse_term(l, tok, p.registers, p.params));
  }
  try {
    return ExtendedMealyMachine(std::move(p.machine), std::move(p.registers), std::move(p.params), std::move(upd),
                                std::move(outs), p.rules);
  } catch (const Error& e) {
    throw ParseError(0, "terms", e.what());
  }
}

} // namespace protolearn
