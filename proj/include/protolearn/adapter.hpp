#pragma once

#include <algorithm>
#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/oracle_table.hpp"
#include "protolearn/rng.hpp"
#include "protolearn/refsim.hpp"
#include "protolearn/symbol.hpp"
#include "protolearn/wire.hpp"

namespace protolearn {

// Reference-client state: the part of a TCP client needed to build packets
// that fit the current connection, plus the queue of packets its logic wanted
// to send on its own but was not allowed to.
class ClientSession {
public:
  enum class Phase { closed, syn_sent, established, closing };

  ClientSession(AlphabetConfig alphabet, std::uint64_t seed) : alphabet_(std::move(alphabet)), rng_(make_rng(seed, Stream::client)) { reset(); }

  void reset() {
    std::uniform_int_distribution<Value> isn(0, (Value{1} << 32) - 1);
    isn_ = isn(rng_);
    snd_next_ = isn_;
    rcv_next_ = 0;
    phase_ = Phase::closed;
    queue_.clear();
  }

  // γ: a queued packet whose abstraction is `sym` if there is one (FIFO),
  // otherwise a fresh packet built from the current counters.
  ConcretePacket concretize(const AbstractSymbol& sym) {
    const auto want = sym.erased();
    for (auto it = queue_.begin(); it != queue_.end(); ++it) {
      if (abstract_packet(*it, alphabet_, Direction::input) == want) {
        ConcretePacket p = *it;
        queue_.erase(it);
        return p;
      }
    }
    const SymbolDecl* decl = alphabet_.find(Direction::input, sym.kind);
    if (!decl) throw Error(ErrorCode::unknown_symbol, "input symbol " + sym.to_string() + " is not in the alphabet");
    if (decl->frame_style) throw Error(ErrorCode::config, "frame-style symbol " + sym.kind + " cannot be built by the TCP client");
    ConcretePacket p;
    p.source_port = sim::client_port;
    p.destination_port = sim::server_port;
    p.flags = decl->flags;
    p.seq_number = p.has_flag('S') ? isn_ : snd_next_;
    p.ack_number = p.has_flag('A') ? rcv_next_ : 0;
    return p;
  }

  void on_sent(const ConcretePacket& p) {
    if (p.has_flag('S')) {
      snd_next_ = isn_ + 1;
      if (phase_ == Phase::closed) phase_ = Phase::syn_sent;
    }
    if (p.has_flag('F')) {
      snd_next_ += 1;
      phase_ = Phase::closing;
    }
    snd_next_ += payload_length(p);
    if (p.has_flag('R')) phase_ = Phase::closed;
  }

  void on_received(const ConcretePacket& p) {
    if (p.is_null) return;
    if (p.has_flag('R')) {
      phase_ = Phase::closed;
      return;
    }
    if (p.has_flag('S') || p.has_flag('F')) {
      rcv_next_ = p.seq_number + 1;
      if (p.has_flag('S')) phase_ = Phase::established;
      ConcretePacket ack;
      ack.source_port = sim::client_port;
      ack.destination_port = sim::server_port;
      ack.flags = "A";
      ack.seq_number = snd_next_;
      ack.ack_number = rcv_next_;
      queue_.push_back(ack);
    }
  }

  const AlphabetConfig& alphabet() const { return alphabet_; }
  Value isn() const { return isn_; }
  Value snd_next() const { return snd_next_; }
  Value rcv_next() const { return rcv_next_; }
  Phase phase() const { return phase_; }
  const std::deque<ConcretePacket>& pending() const { return queue_; }

private:
  AlphabetConfig alphabet_;
  std::mt19937_64 rng_;
  Value isn_ = 0;
  Value snd_next_ = 0;
  Value rcv_next_ = 0;
  Phase phase_ = Phase::closed;
  std::deque<ConcretePacket> queue_;
};

struct VotePolicy {
  int min_repeats = 3;
  double agreement_threshold = 0.8;
  int max_repeats = 20;

  void validate() const {
    if (min_repeats < 1) throw Error(ErrorCode::config, "vote min_repeats must be >= 1");
    if (!(agreement_threshold > 0.5 && agreement_threshold <= 1.0))
      throw Error(ErrorCode::config, "vote agreement_threshold must lie in (0.5, 1]");
    if (max_repeats < min_repeats) throw Error(ErrorCode::config, "vote max_repeats must be >= min_repeats");
  }
};

struct NondeterminismReport {
  Word inputs;
  std::vector<Word> answers;          // distinct, in order of first observation
  std::vector<std::size_t> counts;    // parallel to answers
  std::vector<ConcreteTrace> witness_logs;  // concrete runs for two differing answers

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  std::vector<double> frequencies() const {
    std::vector<double> f;
    for (auto c : counts) f.push_back(static_cast<double>(c) / static_cast<double>(total()));
    return f;
  }
  std::string to_string() const {
    std::string out = "nondeterminism on " + protolearn::to_string(inputs) + " over " + std::to_string(total()) + " runs\n";
    for (std::size_t i = 0; i < answers.size(); ++i)
      out += "  " + std::to_string(counts[i]) + "x " + protolearn::to_string(answers[i]) + "\n";
    for (std::size_t w = 0; w < witness_logs.size(); ++w) {
      out += "  run " + std::to_string(w) + ":\n";
      for (std::size_t k = 0; k < witness_logs[w].inputs.size(); ++k)
        out += "    > " + wire::encode(witness_logs[w].inputs[k]) + "\n    < " + wire::encode(witness_logs[w].outputs[k]) + "\n";
    }
    return out;
  }
};

class NondeterminismError : public Error {
public:
  explicit NondeterminismError(NondeterminismReport r)
      : Error(ErrorCode::nondeterminism, "SUL answered " + protolearn::to_string(r.inputs) + " inconsistently"),
        report_(std::move(r)) {}
  const NondeterminismReport& report() const { return report_; }

private:
  NondeterminismReport report_;
};

using VoteResult = std::variant<Word, NondeterminismReport>;

struct AdapterConfig {
  std::chrono::milliseconds timeout{200};
  int transport_attempts = 3;
  std::uint64_t seed = 1;
};

struct AdapterStats {
  std::size_t queries = 0;
  std::size_t packets_sent = 0;       // packet records only, RESET excluded
  std::size_t retransmissions_dropped = 0;
  std::size_t unsolicited_records = 0;
};

struct QueryResult {
  Trace abstract;
  ConcreteTrace concrete;
  std::size_t packets_sent = 0;
};

// The SUL-facing adapter. One logical session at a time.
class Adapter {
public:
  using ChannelFactory = std::function<std::unique_ptr<wire::Channel>()>;

  Adapter(AlphabetConfig alphabet, ChannelFactory factory, AdapterConfig cfg = {})
      : alphabet_(std::move(alphabet)), factory_(std::move(factory)), cfg_(cfg), client_(alphabet_, cfg.seed) {}

  const AlphabetConfig& alphabet() const { return alphabet_; }
  const AdapterStats& stats() const { return stats_; }
  OracleTable& oracle_table() { return table_; }
  std::vector<OracleEntry> oracle_table_snapshot() const { return table_.snapshot(); }
  const ClientSession& client() const { return client_; }

  Word query(const Word& inputs) { return query_logged(inputs).abstract.outputs; }

  QueryResult query_logged(const Word& inputs) {
    for (int attempt = 1;; ++attempt) {
      try {
        auto r = run_once(inputs);
        table_.add({r.abstract, r.concrete});
        ++stats_.queries;
        return r;
      } catch (const TransportError& e) {
        channel_.reset();
        if (!e.retryable() || attempt >= cfg_.transport_attempts)
          throw TransportError("query " + to_string(inputs) + " failed after " + std::to_string(attempt) +
                                   " attempt(s): " + e.what(),
                               false);
      }
    }
  }

  VoteResult voted_query(const Word& inputs, const VotePolicy& policy) {
    policy.validate();
    std::vector<Word> answers;
    std::vector<std::size_t> counts;
    std::vector<ConcreteTrace> logs;
    auto record = [&](QueryResult r) {
      auto it = std::find(answers.begin(), answers.end(), r.abstract.outputs);
      if (it == answers.end()) {
        answers.push_back(r.abstract.outputs);
        counts.push_back(1);
        logs.push_back(std::move(r.concrete));
      } else {
        ++counts[static_cast<std::size_t>(it - answers.begin())];
      }
    };
    int runs = 0;
    for (; runs < policy.min_repeats; ++runs) record(query_logged(inputs));
    if (answers.size() == 1) return answers.front();
    for (; runs < policy.max_repeats; ++runs) record(query_logged(inputs));
    auto best = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    if (static_cast<double>(counts[best]) / runs >= policy.agreement_threshold) return answers[best];
    NondeterminismReport rep{inputs, answers, counts, {}};
    rep.witness_logs.push_back(logs[0]);
    rep.witness_logs.push_back(logs[1]);
    return rep;
  }

  // Re-executes the report's word `replays` times and replaces its
  // distribution with the fresh one.
  NondeterminismReport enrich(const NondeterminismReport& base, std::size_t replays) {
    NondeterminismReport rep{base.inputs, {}, {}, {}};
    std::vector<ConcreteTrace> logs;
    for (std::size_t i = 0; i < replays; ++i) {
      auto r = query_logged(base.inputs);
      auto it = std::find(rep.answers.begin(), rep.answers.end(), r.abstract.outputs);
      if (it == rep.answers.end()) {
        rep.answers.push_back(r.abstract.outputs);
        rep.counts.push_back(1);
        logs.push_back(std::move(r.concrete));
      } else {
        ++rep.counts[static_cast<std::size_t>(it - rep.answers.begin())];
      }
    }
    for (std::size_t i = 0; i < logs.size() && i < 2; ++i) rep.witness_logs.push_back(logs[i]);
    return rep;
  }

private:
  wire::Channel& channel() {
    if (!channel_) channel_ = factory_();
    return *channel_;
  }

  QueryResult run_once(const Word& inputs) {
    auto& ch = channel();
    ch.send_line(wire::reset_record);
    for (;;) {
      auto line = ch.receive_line(cfg_.timeout);
      if (!line) throw TransportError("SUL did not acknowledge RESET within " + std::to_string(cfg_.timeout.count()) + " ms", true);
      if (*line == wire::reset_ok_record) break;
      ++stats_.unsolicited_records;  // stale record from an earlier session
    }
    client_.reset();
    QueryResult r;
    for (const auto& a : inputs) {
      ConcretePacket p = client_.concretize(a);
      if (abstract_packet(p, alphabet_, Direction::input) != a.erased())
        throw Error(ErrorCode::config, "reference client built " + wire::encode(p) + " for " + a.to_string());
      ch.send_line(wire::encode(p));
      ++r.packets_sent;
      ++stats_.packets_sent;
      client_.on_sent(p);
      ConcretePacket resp = ConcretePacket::null_packet();
      if (auto line = ch.receive_line(cfg_.timeout)) resp = decode_response(*line);
      drain_after(ch, resp);
      client_.on_received(resp);
      r.abstract.inputs.push_back(a.erased());
      r.abstract.outputs.push_back(abstract_packet(resp, alphabet_, Direction::output));
      r.concrete.inputs.push_back(p);
      r.concrete.outputs.push_back(resp);
    }
    return r;
  }

  static ConcretePacket decode_response(const std::string& line) {
    try {
      return wire::decode(line);
    } catch (const Error& e) {
      throw TransportError(std::string("malformed record from SUL: ") + e.what(), true);
    }
  }

  // Drops immediately available copies of the response just delivered.
  void drain_after(wire::Channel& ch, const ConcretePacket& delivered) {
    while (auto line = ch.receive_line(std::chrono::milliseconds(0))) {
      ConcretePacket extra = decode_response(*line);
      if (!extra.is_null && !delivered.is_null && extra.flags == delivered.flags && extra.seq_number == delivered.seq_number)
        ++stats_.retransmissions_dropped;
      else
        ++stats_.unsolicited_records;
    }
  }

  AlphabetConfig alphabet_;
  ChannelFactory factory_;
  AdapterConfig cfg_;
  ClientSession client_;
  std::unique_ptr<wire::Channel> channel_;
  OracleTable table_;
  AdapterStats stats_;
};

// Channel factories.
inline Adapter::ChannelFactory inproc_factory(const sim::SimSpec& spec, std::uint64_t seed) {
  auto shared = std::make_shared<const sim::SimSpec>(spec);
  return [shared, seed]() -> std::unique_ptr<wire::Channel> {
    return std::make_unique<sim::InProcChannel>(sim::SimSession(shared, seed));
  };
}

inline Adapter::ChannelFactory socket_factory(wire::Endpoint ep) {
  return [ep]() -> std::unique_ptr<wire::Channel> {
    return std::make_unique<wire::SocketChannel>(wire::SocketChannel::connect(ep));
  };
}

// `host:port`, `tcp://host:port`, or `inproc:<fixture>`.
inline Adapter::ChannelFactory channel_factory(const std::string& sul, std::uint64_t seed,
                                               std::optional<sim::BugInjection> bug = std::nullopt) {
  if (sul.starts_with("inproc:")) return inproc_factory(sim::make_fixture(sul.substr(7), bug), seed);
  return socket_factory(wire::parse_endpoint(sul));
}

} // namespace protolearn
