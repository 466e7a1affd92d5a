#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/extended.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/rng.hpp"
#include "protolearn/symbol.hpp"
#include "protolearn/text.hpp"
#include "protolearn/wire.hpp"

// Simulated protocol servers speaking the record protocol of wire.hpp.
namespace protolearn::sim {

inline constexpr Value server_port = 44344;
inline constexpr Value client_port = 40965;

struct BugInjection {
  enum class Kind { probabilistic_reset, constant_field, transition_flip };
  Kind kind = Kind::probabilistic_reset;
  // probabilistic_reset: in `state`, a reset answer is sent only with probability p, else NIL.
  double p = 0.82;
  // constant_field: every `output` response carries `field` = `value`.
  // transition_flip: (`state`, `input`) emits `output` instead.
  std::string output;
  std::string field;
  Value value = 0;
  std::string state;
  std::string input;
};

// Accepts `probabilistic_reset:<p>[:<state>]`, `constant_field:<OUT>:<field>:<value>`,
// `transition_flip:<state>:<IN>:<OUT>`.
inline BugInjection parse_bug(std::string_view s) {
  auto parts = text::split(s, ':');
  BugInjection b;
  auto bad = [&](const std::string& why) { return Error(ErrorCode::config, "bad --bug '" + std::string(s) + "': " + why); };
  if (parts[0] == "probabilistic_reset") {
    if (parts.size() < 2 || parts.size() > 3) throw bad("expected probabilistic_reset:<p>[:<state>]");
    try {
      std::size_t used = 0;
      b.p = std::stod(parts[1], &used);
      if (used != parts[1].size()) throw bad("p is not a number");
    } catch (const std::logic_error&) {
      throw bad("p is not a number");
    }
    if (!(b.p > 0 && b.p < 1)) throw bad("p must lie in (0,1)");
    b.state = parts.size() == 3 ? parts[2] : "D";
  } else if (parts[0] == "constant_field") {
    if (parts.size() != 4) throw bad("expected constant_field:<OUT>:<field>:<value>");
    b.kind = BugInjection::Kind::constant_field;
    b.output = parts[1];
    b.field = parts[2];
    if (!is_packet_field(b.field)) throw bad("unknown packet field");
    auto v = text::parse_int(parts[3]);
    if (!v) throw bad("value is not an integer");
    b.value = *v;
  } else if (parts[0] == "transition_flip") {
    if (parts.size() != 4) throw bad("expected transition_flip:<state>:<IN>:<OUT>");
    b.kind = BugInjection::Kind::transition_flip;
    b.state = parts[1];
    b.input = parts[2];
    b.output = parts[3];
  } else {
    throw bad("unknown bug kind");
  }
  return b;
}

// Hand-written transition table; outputs and inputs are alphabet symbol names.
struct FixtureRow {
  std::string from, input, output, to;
};

struct FixtureTable {
  std::string initial;
  std::vector<FixtureRow> rows;
};

// Register behaviour of one transition given its endpoints and output.
struct TransitionTerms {
  std::vector<Term> updates;
  std::vector<Term> outputs;
};
using TermRule = std::function<TransitionTerms(const std::string& state, const std::string& input,
                                               const std::string& output)>;

struct SimSpec {
  std::string name;
  AlphabetConfig alphabet;
  ExtendedMealyMachine semantics;       // skeleton is the abstract behaviour
  std::vector<std::string> state_names; // indexed by state id
  std::optional<BugInjection> bug;
  bool retransmit = false;              // send every non-NIL answer twice

  const MealyMachine& machine() const { return semantics.skeleton(); }

  std::optional<StateId> state_id(std::string_view n) const {
    for (std::size_t i = 0; i < state_names.size(); ++i)
      if (state_names[i] == n) return static_cast<StateId>(i);
    return std::nullopt;
  }
};

inline constexpr std::size_t reg_r = 0, reg_pr = 1, reg_pi = 2;
inline constexpr std::size_t param_sn = 0, param_an = 1;

inline std::vector<RegisterDecl> tcp_registers() {
  return {{"r", InitPolicy::zero}, {"pr", InitPolicy::free}, {"pi", InitPolicy::zero}};
}

// Seq/ack arithmetic of the TCP fixtures. `state` may carry a `.suffix`
// (product fixtures); only the base name matters.
inline TransitionTerms tcp_terms(const std::string& state, const std::string&, const std::string& output) {
  const std::string base = state.substr(0, state.find('.'));
  const std::vector<Term> keep{Term::reg(reg_r), Term::reg(reg_pr), Term::reg(reg_pi)};
  const std::vector<Term> take_sn{Term::reg(reg_r), Term::reg(reg_pr), Term::param(param_sn)};
  if (output == "NIL") return {keep, {}};
  if (output == "ACK+SYN") return {take_sn, {Term::reg(reg_pr), Term::reg(reg_pi, 1)}};
  if (output == "RST") {
    if (base == "L" || base == "SR")
      return {{Term::reg(reg_r), Term::reg(reg_pr), Term::param(param_an)}, {Term::reg(reg_pi), Term::reg(reg_r)}};
    return {keep, {Term::reg(reg_pr, 1), Term::reg(reg_r)}};
  }
  return {take_sn, {Term::reg(reg_pr, 1), Term::reg(reg_pi, 1)}};
}

inline SimSpec build_spec(std::string name, const FixtureTable& table, const TermRule& rule,
                          std::optional<BugInjection> bug = std::nullopt, TermRules rules = {1, 0, false}) {
  AlphabetConfig alphabet = tcp_alphabet();
  FixtureTable t = table;
  if (bug && bug->kind == BugInjection::Kind::transition_flip) {
    bool hit = false;
    for (auto& row : t.rows)
      if (row.from == bug->state && row.input == bug->input) {
        row.output = bug->output;
        hit = true;
      }
    if (!hit) throw Error(ErrorCode::config, "transition_flip targets no transition (" + bug->state + ", " + bug->input + ")");
    if (bug->output != "NIL" && !alphabet.find(Direction::output, bug->output))
      throw Error(ErrorCode::config, "transition_flip output '" + bug->output + "' is not an output symbol");
  }
  auto ins = alphabet.symbols(Direction::input);
  auto outs = alphabet.symbols(Direction::output);
  auto label = [&](Direction d, const std::string& n) -> std::string {
    if (n == "NIL" && d == Direction::output) return "NIL";
    const auto* decl = alphabet.find(d, n);
    if (!decl) throw Error(ErrorCode::config, "fixture uses undeclared symbol '" + n + "'");
    return alphabet.symbol_of(*decl).to_string();
  };
  MealyBuilder b(ins, outs);
  for (const auto& row : t.rows) b.add(row.from, label(Direction::input, row.input), label(Direction::output, row.output), row.to);
  auto names = b.names_in_order(t.initial);
  MealyMachine m = b.build(t.initial);

  std::vector<std::vector<Term>> upd(m.num_transitions()), ot(m.num_transitions());
  for (StateId s = 0; s < m.num_states(); ++s)
    for (std::size_t a = 0; a < ins.size(); ++a) {
      auto terms = rule(names[s], ins[a].kind, m.output(s, a).kind);
      upd[s * ins.size() + a] = std::move(terms.updates);
      ot[s * ins.size() + a] = std::move(terms.outputs);
    }
  SimSpec spec;
  spec.name = std::move(name);
  spec.alphabet = std::move(alphabet);
  spec.semantics = ExtendedMealyMachine(std::move(m), tcp_registers(), {"sn", "an"}, std::move(upd), std::move(ot), rules);
  spec.state_names = std::move(names);
  spec.bug = std::move(bug);
  if (spec.bug && spec.bug->kind == BugInjection::Kind::probabilistic_reset && !spec.state_id(spec.bug->state))
    throw Error(ErrorCode::config, "probabilistic_reset names unknown state '" + spec.bug->state + "'");
  return spec;
}

// Six states: L listen, SR syn-received, E established, DR data-received,
// F fin-wait, D reset-dead.
inline FixtureTable tcp_basic_table() {
  return {"L",
          {
              {"L", "SYN", "ACK+SYN", "SR"},   {"L", "SYN+ACK", "RST", "L"},  {"L", "ACK", "NIL", "L"},
              {"L", "ACK+PSH", "RST", "L"},    {"L", "FIN+ACK", "RST", "L"},  {"L", "RST", "NIL", "L"},
              {"L", "ACK+RST", "NIL", "L"},

              {"SR", "SYN", "NIL", "SR"},      {"SR", "SYN+ACK", "RST", "SR"}, {"SR", "ACK", "NIL", "E"},
              {"SR", "ACK+PSH", "ACK", "DR"},  {"SR", "FIN+ACK", "ACK", "F"},  {"SR", "RST", "NIL", "L"},
              {"SR", "ACK+RST", "NIL", "L"},

              {"E", "SYN", "ACK", "E"},        {"E", "SYN+ACK", "ACK", "E"},   {"E", "ACK", "NIL", "E"},
              {"E", "ACK+PSH", "ACK", "DR"},   {"E", "FIN+ACK", "ACK", "F"},   {"E", "RST", "NIL", "D"},
              {"E", "ACK+RST", "NIL", "D"},

              {"DR", "SYN", "ACK", "DR"},      {"DR", "SYN+ACK", "ACK", "DR"}, {"DR", "ACK", "NIL", "DR"},
              {"DR", "ACK+PSH", "ACK", "DR"},  {"DR", "FIN+ACK", "FIN+ACK", "F"}, {"DR", "RST", "NIL", "D"},
              {"DR", "ACK+RST", "NIL", "D"},

              {"F", "SYN", "ACK+RST", "D"},    {"F", "SYN+ACK", "ACK+RST", "D"}, {"F", "ACK", "NIL", "F"},
              {"F", "ACK+PSH", "ACK+RST", "D"}, {"F", "FIN+ACK", "ACK", "F"},  {"F", "RST", "NIL", "D"},
              {"F", "ACK+RST", "NIL", "D"},

              {"D", "SYN", "RST", "D"},        {"D", "SYN+ACK", "RST", "D"},   {"D", "ACK", "RST", "D"},
              {"D", "ACK+PSH", "RST", "D"},    {"D", "FIN+ACK", "RST", "D"},   {"D", "RST", "RST", "D"},
              {"D", "ACK+RST", "RST", "D"},
          }};
}

// tcp-basic times a parity bit flipped by ACK+PSH. With odd parity a bare ACK
// is answered with ACK (or ACK+RST where tcp-basic would reset).
inline FixtureTable tcp_parity_table() {
  FixtureTable base = tcp_basic_table();
  FixtureTable t{"L.0", {}};
  for (int parity = 0; parity < 2; ++parity)
    for (const auto& row : base.rows) {
      FixtureRow r = row;
      r.from += "." + std::to_string(parity);
      int np = row.input == "ACK+PSH" ? 1 - parity : parity;
      r.to += "." + std::to_string(np);
      if (parity == 1 && row.input == "ACK") r.output = row.output == "RST" ? "ACK+RST" : "ACK";
      t.rows.push_back(std::move(r));
    }
  return t;
}

inline FixtureTable single_state_table(const std::string& output) {
  FixtureTable t{"Q", {}};
  for (const auto& d : tcp_alphabet().inputs) t.rows.push_back({"Q", d.name, output, "Q"});
  return t;
}

inline const std::vector<std::string>& fixture_names() {
  static const std::vector<std::string> names{"tcp-basic", "tcp-noisy-reset", "tcp-constant-field", "tcp-variant",
                                              "tcp-parity", "echo", "step2"};
  return names;
}

// Named fixtures. `bug` is applied on top of the fixture's own injection.
inline SimSpec make_fixture(const std::string& name, std::optional<BugInjection> bug = std::nullopt) {
  auto with = [&](BugInjection own) { return bug ? bug : std::optional<BugInjection>(own); };
  if (name == "tcp-basic") return build_spec(name, tcp_basic_table(), tcp_terms, bug);
  if (name == "tcp-noisy-reset") {
    BugInjection b;
    b.kind = BugInjection::Kind::probabilistic_reset;
    b.p = 0.82;
    b.state = "D";
    return build_spec(name, tcp_basic_table(), tcp_terms, with(b));
  }
  if (name == "tcp-constant-field") {
    BugInjection b;
    b.kind = BugInjection::Kind::constant_field;
    b.output = "ACK";
    b.field = "ackNumber";
    b.value = 0;
    return build_spec(name, tcp_basic_table(), tcp_terms, with(b));
  }
  if (name == "tcp-variant") {
    BugInjection b;
    b.kind = BugInjection::Kind::transition_flip;
    b.state = "SR";
    b.input = "SYN+ACK";
    b.output = "ACK+RST";
    return build_spec(name, tcp_basic_table(), tcp_terms, with(b));
  }
  if (name == "tcp-parity") return build_spec(name, tcp_parity_table(), tcp_terms, bug);
  if (name == "echo") return build_spec(name, single_state_table("ACK"), tcp_terms, bug);
  if (name == "step2") {
    auto rule = [](const std::string&, const std::string&, const std::string&) {
      return TransitionTerms{{Term::reg(reg_r), Term::reg(reg_pr, 2), Term::reg(reg_pi)},
                             {Term::reg(reg_pr), Term::reg(reg_r)}};
    };
    return build_spec(name, single_state_table("ACK"), rule, bug, {2, 0, false});
  }
  throw Error(ErrorCode::config, "unknown fixture '" + name + "'");
}

// The exact abstract machine the server implements.
inline MealyMachine ground_truth(const SimSpec& spec) {
  if (spec.bug && spec.bug->kind == BugInjection::Kind::probabilistic_reset)
    throw Error(ErrorCode::config, "fixture '" + spec.name + "' is probabilistic and has no ground-truth machine");
  return spec.machine();
}

// One server-side connection state. Copyable, so callers can fork a session
// to explore alternative continuations.
class SimSession {
public:
  SimSession(std::shared_ptr<const SimSpec> spec, std::uint64_t seed)
      : spec_(std::move(spec)), rng_(make_rng(seed, Stream::simulator)), runner_(spec_->semantics) {
    reset();
  }

  const SimSpec& spec() const { return *spec_; }

  void reset() {
    std::uniform_int_distribution<Value> isn(0, (Value{1} << 32) - 1);
    runner_ = ExtendedRunner(spec_->semantics, {{"pr", isn(rng_)}});
  }

  StateId state() const { return runner_.state(); }
  const std::vector<Value>& registers() const { return runner_.registers(); }

  // Response to one client packet; a null packet means no answer.
  ConcretePacket handle(const ConcretePacket& in) {
    const auto& alphabet = spec_->alphabet;
    AbstractSymbol sym;
    try {
      sym = abstract_packet(in, alphabet, Direction::input, true);
    } catch (const Error&) {
      return ConcretePacket::null_packet();
    }
    const StateId before = runner_.state();
    AbstractSymbol out = runner_.step(sym);
    if (out.is_nil()) return ConcretePacket::null_packet();
    const auto& bug = spec_->bug;
    if (bug && bug->kind == BugInjection::Kind::probabilistic_reset && spec_->state_names[before] == bug->state) {
      std::bernoulli_distribution coin(bug->p);
      if (!coin(rng_)) return ConcretePacket::null_packet();
    }
    const auto* decl = alphabet.find(Direction::output, out.kind);
    ConcretePacket p;
    p.source_port = server_port;
    p.destination_port = in.source_port;
    p.flags = decl->flags;
    for (std::size_t i = 0; i < alphabet.params.size(); ++i) set_packet_field(p, alphabet.params[i].field, *out.params[i]);
    if (bug && bug->kind == BugInjection::Kind::constant_field && bug->output == out.kind)
      set_packet_field(p, bug->field, bug->value);
    return p;
  }

  // Full record-level exchange: RESET, NIL or a packet record in, one or more
  // records out. Malformed records are answered with nothing.
  std::vector<std::string> handle_record(std::string_view record) {
    if (record == wire::reset_record) {
      reset();
      return {std::string(wire::reset_ok_record)};
    }
    ConcretePacket in;
    try {
      in = wire::decode(record);
    } catch (const Error&) {
      return {};
    }
    if (in.is_null) return {std::string(wire::nil_record)};
    ConcretePacket out = handle(in);
    std::vector<std::string> recs{wire::encode(out)};
    if (spec_->retransmit && !out.is_null) recs.push_back(recs.front());
    return recs;
  }

private:
  std::shared_ptr<const SimSpec> spec_;
  std::mt19937_64 rng_;
  ExtendedRunner runner_;
};

// Synchronous channel straight into a SimSession.
class InProcChannel : public wire::Channel {
public:
  explicit InProcChannel(SimSession session) : session_(std::move(session)) {}

  void send_line(std::string_view line) override {
    for (auto& r : session_.handle_record(line)) pending_.push_back(std::move(r));
  }

  std::optional<std::string> receive_line(std::chrono::milliseconds) override {
    if (pending_.empty()) return std::nullopt;
    std::string r = std::move(pending_.front());
    pending_.pop_front();
    return r;
  }

  SimSession& session() { return session_; }

private:
  SimSession session_;
  std::deque<std::string> pending_;
};

// Background server. Connections are served one at a time; all of them share
// one session RNG so a run is reproducible from the seed.
class Server {
public:
  Server(std::shared_ptr<const SimSpec> spec, const wire::Endpoint& ep, std::uint64_t seed)
      : listener_(ep), session_(std::move(spec), seed) {
    thread_ = std::thread([this] { loop(); });
  }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  int port() const { return listener_.port(); }

  void stop() {
    stop_ = true;
    if (thread_.joinable()) thread_.join();
  }

  void wait() {
    if (thread_.joinable()) thread_.join();
  }

private:
  void loop() {
    using namespace std::chrono_literals;
    while (!stop_) {
      auto sock = listener_.accept(100ms);
      if (!sock) continue;
      wire::SocketChannel ch(std::move(*sock));
      try {
        while (!stop_) {
          auto line = ch.receive_line(100ms);
          if (!line) continue;
          for (const auto& r : session_.handle_record(*line)) ch.send_line(r);
        }
      } catch (const TransportError&) {
        // client went away
      }
    }
  }

  wire::Listener listener_;
  SimSession session_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

inline std::unique_ptr<Server> serve(const SimSpec& spec, const wire::Endpoint& ep, std::uint64_t seed) {
  return std::make_unique<Server>(std::make_shared<const SimSpec>(spec), ep, seed);
}

} // namespace protolearn::sim
