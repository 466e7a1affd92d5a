#pragma once

#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/symbol.hpp"
#include "protolearn/text.hpp"
#include "protolearn/wire.hpp"

namespace protolearn {

struct ConcreteTrace {
  std::vector<ConcretePacket> inputs;
  std::vector<ConcretePacket> outputs;

  friend bool operator==(const ConcreteTrace&, const ConcreteTrace&) = default;
};

// One completed query: what the learner saw and what crossed the wire.
struct OracleEntry {
  Trace abstract;
  ConcreteTrace concrete;

  friend bool operator==(const OracleEntry&, const OracleEntry&) = default;
};

// Append-only cache of observed query pairs. Writers may be concurrent.
class OracleTable {
public:
  void add(OracleEntry e) {
    if (e.abstract.inputs.size() != e.concrete.inputs.size() || e.abstract.outputs.size() != e.concrete.outputs.size() ||
        e.abstract.inputs.size() != e.abstract.outputs.size())
      throw Error(ErrorCode::config, "oracle entry sides have different lengths");
    std::lock_guard lock(mu_);
    entries_.push_back(std::move(e));
  }

  std::vector<OracleEntry> snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  void clear() {
    std::lock_guard lock(mu_);
    entries_.clear();
  }

private:
  mutable std::mutex mu_;
  std::vector<OracleEntry> entries_;
};

// protolearn-oracle-table 1
// arity 2
// entry 0
// step SYN(?,?,0) ACK+SYN(?,?,0) ; <input record> ; <output record>
// end
inline std::string serialize_oracle_table(const std::vector<OracleEntry>& entries, std::size_t param_arity) {
  std::string out = "protolearn-oracle-table 1\narity " + std::to_string(param_arity) + "\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    out += "entry " + std::to_string(i) + "\n";
    for (std::size_t k = 0; k < e.abstract.inputs.size(); ++k)
      out += "step " + e.abstract.inputs[k].to_string() + " " + e.abstract.outputs[k].to_string() + " ; " +
             wire::encode(e.concrete.inputs[k]) + " ; " + wire::encode(e.concrete.outputs[k]) + "\n";
  }
  return out + "end\n";
}

inline std::vector<OracleEntry> deserialize_oracle_table(std::string_view doc) {
  auto ls = text::lines(doc);
  text::expect_header(ls, "protolearn-oracle-table", 1);
  std::size_t arity = 0;
  std::vector<OracleEntry> out;
  bool ended = false;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto& l = ls[i];
    const auto& t = l.tokens;
    if (ended) throw ParseError(l.number, t[0], "content after 'end'");
    if (t[0] == "arity") {
      if (t.size() != 2) throw ParseError(l.number, "arity", "expected 'arity <n>'");
      arity = static_cast<std::size_t>(text::require_int(l, "arity", t[1]));
    } else if (t[0] == "entry") {
      out.emplace_back();
    } else if (t[0] == "step") {
      if (out.empty()) throw ParseError(l.number, "step", "step outside an entry");
      // step <in> <out> ; <record...> ; <record...>
      std::vector<std::vector<std::string>> groups(1);
      for (std::size_t k = 1; k < t.size(); ++k) {
        if (t[k] == ";") groups.emplace_back();
        else groups.back().push_back(t[k]);
      }
      if (groups.size() != 3 || groups[0].size() != 2) throw ParseError(l.number, "step", "expected '<in> <out> ; <record> ; <record>'");
      auto join = [](const std::vector<std::string>& v) {
        std::string s;
        for (std::size_t k = 0; k < v.size(); ++k) s += (k ? " " : "") + v[k];
        return s;
      };
      auto& e = out.back();
      try {
        auto sym = [&](const std::string& s) { return s == "NIL" ? AbstractSymbol::nil() : AbstractSymbol::parse(s, arity); };
        e.abstract.inputs.push_back(sym(groups[0][0]));
        e.abstract.outputs.push_back(sym(groups[0][1]));
        e.concrete.inputs.push_back(wire::decode(join(groups[1])));
        e.concrete.outputs.push_back(wire::decode(join(groups[2])));
      } catch (const ParseError&) {
        throw;
      } catch (const Error& err) {
        throw ParseError(l.number, "step", err.what());
      }
    } else if (t[0] == "end") {
      ended = true;
    } else {
      throw ParseError(l.number, t[0], "unknown directive");
    }
  }
  if (!ended) throw ParseError(ls.back().number, "end", "document is truncated (missing 'end')");
  return out;
}

} // namespace protolearn
