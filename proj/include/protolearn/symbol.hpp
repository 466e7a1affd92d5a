#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/text.hpp"

namespace protolearn {

using Value = std::int64_t;

// Element of the abstract alphabet, e.g. `ACK+SYN(?,?,0)`.
//
// `params` are wildcard slots: empty optionals print as `?`, filled ones carry
// the concrete integers used during synthesis. `payload_class` is the trailing
// slot of TCP-style symbols; frame-style symbols (`INITIAL(?,?)[CRYPTO]`) carry
// their frame list in `frames` instead.
struct AbstractSymbol {
  std::string kind;
  std::vector<std::optional<Value>> params;
  std::optional<int> payload_class;
  std::vector<std::string> frames;

  static AbstractSymbol nil() { return AbstractSymbol{"NIL", {}, std::nullopt, {}}; }

  bool is_nil() const { return kind == "NIL" && params.empty() && !payload_class && frames.empty(); }

  // Same symbol with every parameter replaced by the wildcard.
  AbstractSymbol erased() const {
    AbstractSymbol s = *this;
    for (auto& p : s.params) p.reset();
    return s;
  }

  std::string to_string() const {
    if (is_nil()) return kind;
    std::string out = kind;
    if (!params.empty() || payload_class) {
      out += '(';
      bool first = true;
      for (const auto& p : params) {
        if (!first) out += ',';
        first = false;
        out += p ? std::to_string(*p) : std::string("?");
      }
      if (payload_class) {
        if (!first) out += ',';
        out += std::to_string(*payload_class);
      }
      out += ')';
    }
    if (!frames.empty()) {
      out += '[';
      for (std::size_t i = 0; i < frames.size(); ++i) {
        if (i) out += ',';
        out += frames[i];
      }
      out += ']';
    }
    return out;
  }

  // Parses the printed form. `param_arity` says how many leading slots are
  // parameters; a remaining slot is the payload class.
  static AbstractSymbol parse(std::string_view text, std::size_t param_arity) {
    AbstractSymbol s;
    auto open = text.find('(');
    auto bracket = text.find('[');
    auto kind_end = std::min(open, bracket);
    s.kind = std::string(text.substr(0, kind_end));
    if (s.kind.empty()) throw Error(ErrorCode::parse, "symbol without kind: '" + std::string(text) + "'");
    if (open != std::string_view::npos && open < bracket) {
      auto close = text.find(')', open);
      if (close == std::string_view::npos) throw Error(ErrorCode::parse, "unbalanced '(' in '" + std::string(text) + "'");
      auto slots = text::split(text.substr(open + 1, close - open - 1), ',');
      if (slots.size() == 1 && slots[0].empty()) slots.clear();
      if (slots.size() < param_arity || slots.size() > param_arity + 1)
        throw Error(ErrorCode::parse, "symbol '" + std::string(text) + "' has " + std::to_string(slots.size()) +
                                          " slots, expected " + std::to_string(param_arity) + " parameters");
      for (std::size_t i = 0; i < slots.size(); ++i) {
        std::optional<Value> v;
        if (slots[i] != "?") {
          v = text::parse_int(slots[i]);
          if (!v) throw Error(ErrorCode::parse, "bad slot '" + slots[i] + "' in '" + std::string(text) + "'");
        }
        if (i < param_arity) {
          s.params.push_back(v);
        } else {
          if (!v) throw Error(ErrorCode::parse, "payload class must be concrete in '" + std::string(text) + "'");
          s.payload_class = static_cast<int>(*v);
        }
      }
      bracket = text.find('[', close);
    }
    if (bracket != std::string_view::npos) {
      auto close = text.find(']', bracket);
      if (close == std::string_view::npos) throw Error(ErrorCode::parse, "unbalanced '[' in '" + std::string(text) + "'");
      s.frames = text::split(text.substr(bracket + 1, close - bracket - 1), ',');
    }
    return s;
  }

  friend bool operator==(const AbstractSymbol&, const AbstractSymbol&) = default;
};

// Fully fielded TCP-like packet; the field set is the wire record's.
struct ConcretePacket {
  bool is_null = false;
  Value source_port = 0;
  Value destination_port = 0;
  Value seq_number = 0;
  Value ack_number = 0;
  std::optional<Value> data_offset;
  Value reserved = 0;
  std::string flags;
  Value window = 8192;
  std::optional<Value> checksum;
  Value urgent_pointer = 0;

  static ConcretePacket null_packet() {
    ConcretePacket p;
    p.is_null = true;
    return p;
  }

  bool has_flag(char f) const { return flags.find(f) != std::string::npos; }

  friend bool operator==(const ConcretePacket&, const ConcretePacket&) = default;
};

// Returns the value of a named concrete field (`seqNumber`, ...); a null
// optional field reads as 0.
inline Value packet_field(const ConcretePacket& p, std::string_view field) {
  if (field == "sourcePort") return p.source_port;
  if (field == "destinationPort") return p.destination_port;
  if (field == "seqNumber") return p.seq_number;
  if (field == "ackNumber") return p.ack_number;
  if (field == "dataOffset") return p.data_offset.value_or(0);
  if (field == "reserved") return p.reserved;
  if (field == "window") return p.window;
  if (field == "checksum") return p.checksum.value_or(0);
  if (field == "urgentPointer") return p.urgent_pointer;
  throw Error(ErrorCode::config, "unknown packet field '" + std::string(field) + "'");
}

inline void set_packet_field(ConcretePacket& p, std::string_view field, Value v) {
  if (field == "sourcePort") p.source_port = v;
  else if (field == "destinationPort") p.destination_port = v;
  else if (field == "seqNumber") p.seq_number = v;
  else if (field == "ackNumber") p.ack_number = v;
  else if (field == "dataOffset") p.data_offset = v;
  else if (field == "reserved") p.reserved = v;
  else if (field == "window") p.window = v;
  else if (field == "checksum") p.checksum = v;
  else if (field == "urgentPointer") p.urgent_pointer = v;
  else throw Error(ErrorCode::config, "unknown packet field '" + std::string(field) + "'");
}

inline bool is_packet_field(std::string_view field) {
  static constexpr std::string_view known[] = {"sourcePort", "destinationPort", "seqNumber", "ackNumber", "dataOffset",
                                               "reserved", "window", "checksum", "urgentPointer"};
  return std::find(std::begin(known), std::end(known), field) != std::end(known);
}

// Puts TCP flag letters in the conventional F S R P A U E C order.
inline std::string canonical_flags(std::string_view flags) {
  static constexpr std::string_view order = "FSRPAUEC";
  std::string out;
  for (char c : order)
    if (flags.find(c) != std::string_view::npos) out += c;
  return out;
}

enum class Direction { input, output };

struct SymbolDecl {
  std::string name;
  std::string flags;  // canonical
  std::vector<std::string> frames;
  int payload_class = 0;
  bool frame_style = false;
};

// A parameter slot: short name used in terms (`sn`) and the concrete field it reads.
struct ParamDecl {
  std::string name;
  std::string field;
};

// Abstract alphabet declaration. Declaration order is the canonical symbol
// order used for tie-breaking everywhere.
struct AlphabetConfig {
  std::vector<ParamDecl> params;
  std::vector<SymbolDecl> inputs;
  std::vector<SymbolDecl> outputs;

  const std::vector<SymbolDecl>& decls(Direction d) const { return d == Direction::input ? inputs : outputs; }

  AbstractSymbol symbol_of(const SymbolDecl& d) const {
    AbstractSymbol s;
    s.kind = d.name;
    s.params.assign(params.size(), std::nullopt);
    if (d.frame_style) s.frames = d.frames;
    else s.payload_class = d.payload_class;
    return s;
  }

  std::vector<AbstractSymbol> symbols(Direction d) const {
    std::vector<AbstractSymbol> out;
    if (d == Direction::output) out.push_back(AbstractSymbol::nil());
    for (const auto& decl : decls(d)) out.push_back(symbol_of(decl));
    return out;
  }

  const SymbolDecl* find(Direction d, std::string_view name) const {
    for (const auto& decl : decls(d))
      if (decl.name == name) return &decl;
    return nullptr;
  }
};

// Document format:
//
//   protolearn-alphabet 1
//   param sn seqNumber
//   input SYN flags=S len=0
//   output ACK+SYN flags=SA len=0
//   input INITIAL frames=CRYPTO
//
// NIL is implicit in the output alphabet.
inline AlphabetConfig parse_alphabet(std::string_view doc) {
  auto ls = text::lines(doc);
  text::expect_header(ls, "protolearn-alphabet", 1);
  AlphabetConfig cfg;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto& l = ls[i];
    const auto& t = l.tokens;
    if (t[0] == "param") {
      if (t.size() != 3) throw ParseError(l.number, "param", "expected 'param <name> <field>'");
      if (!is_packet_field(t[2])) throw ParseError(l.number, "param", "unknown packet field '" + t[2] + "'");
      for (const auto& p : cfg.params)
        if (p.name == t[1]) throw ParseError(l.number, "param", "duplicate parameter '" + t[1] + "'");
      cfg.params.push_back({t[1], t[2]});
    } else if (t[0] == "input" || t[0] == "output") {
      if (t.size() < 2) throw ParseError(l.number, t[0], "missing symbol name");
      SymbolDecl d;
      d.name = t[1];
      if (d.name == "NIL") throw ParseError(l.number, t[0], "NIL is implicit and cannot be declared");
      for (std::size_t k = 2; k < t.size(); ++k) {
        auto eq = t[k].find('=');
        if (eq == std::string::npos) throw ParseError(l.number, t[k], "expected key=value");
        auto key = t[k].substr(0, eq);
        auto val = t[k].substr(eq + 1);
        if (key == "flags") {
          d.flags = canonical_flags(val);
          if (d.flags.size() != val.size()) throw ParseError(l.number, "flags", "unknown or repeated flag in '" + val + "'");
        } else if (key == "len") {
          d.payload_class = static_cast<int>(text::require_int(l, "len", val));
        } else if (key == "frames") {
          d.frames = text::split(val, ',');
          d.frame_style = true;
        } else {
          throw ParseError(l.number, key, "unknown symbol attribute");
        }
      }
      auto& list = t[0] == "input" ? cfg.inputs : cfg.outputs;
      for (const auto& other : list)
        if (other.name == d.name) throw ParseError(l.number, t[0], "duplicate symbol '" + d.name + "'");
      list.push_back(std::move(d));
    } else {
      throw ParseError(l.number, t[0], "unknown directive");
    }
  }
  if (cfg.inputs.empty()) throw ParseError(ls.front().number, "input", "alphabet declares no input symbols");
  return cfg;
}

inline std::string serialize_alphabet(const AlphabetConfig& cfg) {
  std::string out = "protolearn-alphabet 1\n";
  for (const auto& p : cfg.params) out += "param " + p.name + " " + p.field + "\n";
  auto emit = [&](const char* dir, const SymbolDecl& d) {
    out += std::string(dir) + " " + d.name;
    if (d.frame_style) {
      out += " frames=";
      for (std::size_t i = 0; i < d.frames.size(); ++i) out += (i ? "," : "") + d.frames[i];
    } else {
      out += " flags=" + d.flags + " len=" + std::to_string(d.payload_class);
    }
    out += "\n";
  };
  for (const auto& d : cfg.inputs) emit("input", d);
  for (const auto& d : cfg.outputs) emit("output", d);
  return out;
}

// The seven-symbol TCP input alphabet and the server-side output symbols.
inline AlphabetConfig tcp_alphabet() {
  return parse_alphabet(R"(protolearn-alphabet 1
param sn seqNumber
param an ackNumber
input SYN flags=S len=0
input SYN+ACK flags=SA len=0
input ACK flags=A len=0
input ACK+PSH flags=PA len=1
input FIN+ACK flags=FA len=0
input RST flags=R len=0
input ACK+RST flags=RA len=0
output ACK+SYN flags=SA len=0
output ACK flags=A len=0
output RST flags=R len=0
output ACK+RST flags=RA len=0
output FIN+ACK flags=FA len=0
)");
}

// Payload length of a concrete packet. The wire record carries no payload
// field, so a PSH-flagged segment is taken to carry exactly one byte.
inline int payload_length(const ConcretePacket& p) { return p.has_flag('P') ? 1 : 0; }

// The abstraction function on a single packet.
inline AbstractSymbol abstract_packet(const ConcretePacket& p, const AlphabetConfig& alphabet, Direction dir,
                                      bool keep_params = false) {
  if (p.is_null) return AbstractSymbol::nil();
  const auto flags = canonical_flags(p.flags);
  const int len = payload_length(p) > 0 ? 1 : 0;
  for (const auto& d : alphabet.decls(dir)) {
    if (d.frame_style || d.flags != flags || d.payload_class != len) continue;
    AbstractSymbol s = alphabet.symbol_of(d);
    if (keep_params)
      for (std::size_t i = 0; i < alphabet.params.size(); ++i) s.params[i] = packet_field(p, alphabet.params[i].field);
    return s;
  }
  throw Error(ErrorCode::unmappable_packet, std::string("no ") + (dir == Direction::input ? "input" : "output") +
                                                " symbol matches flags '" + p.flags + "' payload " +
                                                std::to_string(len));
}

} // namespace protolearn
