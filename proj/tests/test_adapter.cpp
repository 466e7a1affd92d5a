#include "catch_amalgamated.hpp"
#include "support.hpp"

using namespace protolearn;
using namespace testing;

namespace {

Word random_word(std::mt19937_64& rng, const std::vector<AbstractSymbol>& alphabet, std::size_t max_len) {
  Word w(1 + rng() % max_len);
  for (auto& s : w) s = alphabet[rng() % alphabet.size()];
  return w;
}

Adapter fixture_adapter(const std::string& name, std::uint64_t seed = 1) {
  return Adapter(tcp_alphabet(), inproc_factory(sim::make_fixture(name), seed), AdapterConfig{.seed = seed});
}

} // namespace

TEST_CASE("wire records round-trip") {
  std::mt19937_64 rng(5);
  const char* flags[] = {"S", "SA", "A", "PA", "FA", "R", "RA"};
  for (int i = 0; i < 500; ++i) {
    ConcretePacket p;
    p.source_port = rng() % 65536;
    p.destination_port = rng() % 65536;
    p.seq_number = rng() % (1ULL << 32);
    p.ack_number = rng() % (1ULL << 32);
    if (rng() % 2) p.data_offset = rng() % 16;
    p.flags = flags[rng() % 7];
    p.window = rng() % 65536;
    if (rng() % 2) p.checksum = rng() % 65536;
    CHECK(wire::decode(wire::encode(p)) == p);
  }
  CHECK(wire::decode(wire::encode(ConcretePacket::null_packet())).is_null);
  CHECK_THROWS_AS(wire::decode("isNull=false sourcePort=1"), Error);
  CHECK_THROWS_AS(wire::decode(wire::encode(ConcretePacket{}) + " extra=1"), Error);
}

TEST_CASE("concretizing then abstracting is the identity on inputs") {
  auto alph = tcp_alphabet();
  auto inputs = alph.symbols(Direction::input);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 300; ++i) {
    ClientSession c(alph, rng());
    for (const auto& a : random_word(rng, inputs, 12)) {
      auto p = c.concretize(a);
      REQUIRE(abstract_packet(p, alph, Direction::input) == a);
      auto kept = abstract_packet(p, alph, Direction::input, true);
      CHECK(kept.erased() == a);
      CHECK(kept.params == std::vector<std::optional<Value>>{p.seq_number, p.ack_number});
      c.on_sent(p);
    }
  }
}

TEST_CASE("the handshake answers through the adapter") {
  auto a = fixture_adapter("tcp-basic");
  CHECK(a.query(word({"SYN(?,?,0)", "ACK(?,?,0)"})) == Word{sym("ACK+SYN(?,?,0)"), AbstractSymbol::nil()});
  CHECK(a.query({}).empty());
  CHECK(a.query(word({"ACK(?,?,0)"})) == Word{AbstractSymbol::nil()});
}

TEST_CASE("one packet per input and outputs abstract back") {
  auto alph = tcp_alphabet();
  auto inputs = alph.symbols(Direction::input);
  auto a = fixture_adapter("tcp-basic", 3);
  auto truth = sim::ground_truth(sim::make_fixture("tcp-basic"));
  std::mt19937_64 rng(3);
  std::size_t total = 0;
  for (int i = 0; i < 200; ++i) {
    auto w = random_word(rng, inputs, 10);
    auto r = a.query_logged(w);
    total += w.size();
    CHECK(r.packets_sent == w.size());
    REQUIRE(r.concrete.outputs.size() == w.size());
    for (std::size_t k = 0; k < w.size(); ++k) {
      CHECK(abstract_packet(r.concrete.inputs[k], alph, Direction::input) == r.abstract.inputs[k]);
      CHECK(abstract_packet(r.concrete.outputs[k], alph, Direction::output) == r.abstract.outputs[k]);
    }
    CHECK(r.abstract.outputs == run(truth, w));
  }
  CHECK(a.stats().packets_sent == total);
  CHECK(a.stats().queries == 200);
}

TEST_CASE("same seed, same concrete exchange") {
  auto inputs = tcp_alphabet().symbols(Direction::input);
  std::mt19937_64 rng(21);
  auto a = fixture_adapter("tcp-basic", 8), b = fixture_adapter("tcp-basic", 8);
  for (int i = 0; i < 50; ++i) {
    auto w = random_word(rng, inputs, 8);
    CHECK(a.query_logged(w).concrete == b.query_logged(w).concrete);
  }
}

TEST_CASE("every query lands in the oracle table") {
  auto alph = tcp_alphabet();
  auto a = fixture_adapter("tcp-basic");
  std::mt19937_64 rng(4);
  for (int i = 0; i < 40; ++i) a.query(random_word(rng, alph.symbols(Direction::input), 6));
  auto table = a.oracle_table_snapshot();
  REQUIRE(table.size() == 40);
  for (const auto& e : table)
    for (std::size_t k = 0; k < e.abstract.inputs.size(); ++k)
      CHECK(abstract_packet(e.concrete.outputs[k], alph, Direction::output) == e.abstract.outputs[k]);
  auto back = deserialize_oracle_table(serialize_oracle_table(table, 2));
  REQUIRE(back.size() == table.size());
  CHECK(back.back().concrete == table.back().concrete);
}

TEST_CASE("votes on a deterministic SUL stop after the minimum") {
  auto a = fixture_adapter("tcp-basic");
  auto v = a.voted_query(word({"SYN(?,?,0)", "ACK(?,?,0)", "RST(?,?,0)"}), VotePolicy{});
  REQUIRE(std::holds_alternative<Word>(v));
  CHECK(a.stats().queries == 3);
  CHECK_THROWS_AS(VotePolicy({0, 0.8, 20}).validate(), Error);
  CHECK_THROWS_AS(VotePolicy({3, 1.5, 20}).validate(), Error);
  CHECK_THROWS_AS(VotePolicy({5, 0.8, 4}).validate(), Error);
}

TEST_CASE("votes on the noisy SUL eventually disagree") {
  auto a = fixture_adapter("tcp-noisy-reset", 2);
  const auto w = word({"SYN(?,?,0)", "ACK(?,?,0)", "RST(?,?,0)", "SYN(?,?,0)"});
  int reports = 0;
  for (int i = 0; i < 20; ++i) {
    auto v = a.voted_query(w, VotePolicy{10, 1.0, 10});
    if (auto* rep = std::get_if<NondeterminismReport>(&v)) {
      ++reports;
      CHECK(rep->answers.size() >= 2);
      CHECK(rep->total() == 10);
      CHECK(rep->witness_logs.size() == 2);
      double sum = 0;
      for (double f : rep->frequencies()) sum += f;
      CHECK(sum == Catch::Approx(1.0));
    }
  }
  CHECK(reports > 10);
}

TEST_CASE("socket and in-process transports agree") {
  auto spec = sim::make_fixture("tcp-basic");
  auto server = sim::serve(spec, wire::parse_endpoint("127.0.0.1:0"), 6);
  Adapter net(tcp_alphabet(), socket_factory(wire::parse_endpoint("127.0.0.1:" + std::to_string(server->port()))),
              AdapterConfig{.seed = 6});
  auto local = fixture_adapter("tcp-basic", 6);
  auto inputs = tcp_alphabet().symbols(Direction::input);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 30; ++i) {
    auto w = random_word(rng, inputs, 8);
    auto x = net.query_logged(w), y = local.query_logged(w);
    CHECK(x.abstract == y.abstract);
    CHECK(x.concrete == y.concrete);
  }
  server->stop();
}

TEST_CASE("unreachable SUL is a transport error") {
  Adapter a(tcp_alphabet(), socket_factory(wire::parse_endpoint("127.0.0.1:1")), AdapterConfig{});
  CHECK_THROWS_AS(a.query(word({"SYN(?,?,0)"})), TransportError);
}

TEST_CASE("retransmitted answers are dropped") {
  auto spec = sim::make_fixture("tcp-basic");
  spec.retransmit = true;
  Adapter a(tcp_alphabet(), inproc_factory(spec, 1), AdapterConfig{});
  auto truth = sim::ground_truth(spec);
  const auto w = word({"SYN(?,?,0)", "ACK(?,?,0)", "ACK+PSH(?,?,1)", "FIN+ACK(?,?,0)"});
  CHECK(a.query(w) == run(truth, w));
  CHECK(a.stats().retransmissions_dropped > 0);
  CHECK(a.stats().unsolicited_records == 0);
}
