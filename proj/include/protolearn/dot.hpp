#pragma once

#include <set>
#include <string>
#include <utility>

#include "protolearn/extended.hpp"
#include "protolearn/mealy.hpp"

namespace protolearn {

namespace detail {

inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

inline std::string dot_nodes(std::size_t n) {
  std::string out;
  for (std::size_t s = 0; s < n; ++s)
    out += "  s" + std::to_string(s) + (s == 0 ? " [shape=doublecircle];\n" : ";\n");
  return out;
}

} // namespace detail

// Set of (state, input index) pairs to draw in red.
using TransitionHighlight = std::set<std::pair<StateId, std::size_t>>;

inline std::string to_dot(const MealyMachine& m, const TransitionHighlight& highlight = {}) {
  std::string out = "digraph mealy {\n  rankdir=LR;\n  node [shape=circle];\n";
  out += detail::dot_nodes(m.num_states());
  for (StateId s = 0; s < m.num_states(); ++s) {
    for (std::size_t a = 0; a < m.inputs().size(); ++a) {
      std::string label = m.inputs()[a].to_string() + " / " + m.output(s, a).to_string();
      out += "  s" + std::to_string(s) + " -> s" + std::to_string(m.next(s, a)) + " [label=\"" +
             detail::dot_escape(label) + "\"";
      if (highlight.count({s, a})) out += ", color=red, fontcolor=red, penwidth=2";
      out += "];\n";
    }
  }
  return out + "}\n";
}

// Edges carry `in / out` on the first line and the register updates below it.
inline std::string to_dot(const ExtendedMealyMachine& m) {
  const auto& sk = m.skeleton();
  std::string out = "digraph extended_mealy {\n  rankdir=LR;\n  node [shape=circle];\n";
  out += detail::dot_nodes(sk.num_states());
  for (StateId s = 0; s < sk.num_states(); ++s) {
    for (std::size_t a = 0; a < sk.inputs().size(); ++a) {
      const std::size_t t = m.transition(s, a);
      AbstractSymbol in = sk.inputs()[a];
      std::string in_label = in.kind;
      if (!in.params.empty() || in.payload_class) {
        in_label += "(";
        for (std::size_t p = 0; p < in.params.size(); ++p) in_label += (p ? "," : "") + m.params()[p];
        if (in.payload_class) in_label += (in.params.empty() ? "" : ",") + std::to_string(*in.payload_class);
        in_label += ")";
      }
      const AbstractSymbol& o = sk.output(s, a);
      std::string out_label = o.kind;
      if (!o.is_nil()) {
        out_label += "(";
        for (std::size_t p = 0; p < o.params.size(); ++p) out_label += (p ? "," : "") + m.term_to_string(m.output_terms(t)[p]);
        if (o.payload_class) out_label += (o.params.empty() ? "" : ",") + std::to_string(*o.payload_class);
        out_label += ")";
      }
      std::string upd;
      for (std::size_t r = 0; r < m.registers().size(); ++r)
        upd += (r ? ", " : "") + m.registers()[r].name + " = " + m.term_to_string(m.updates(t)[r]);
      std::string label = in_label + " / " + out_label + (upd.empty() ? "" : "\n" + upd);
      std::string escaped;
      for (char c : detail::dot_escape(label)) escaped += (c == '\n') ? std::string("\\n") : std::string(1, c);
      out += "  s" + std::to_string(s) + " -> s" + std::to_string(sk.next(s, a)) + " [label=\"" + escaped + "\"];\n";
    }
  }
  return out + "}\n";
}

} // namespace protolearn
