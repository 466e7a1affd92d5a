#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "support.hpp"

using namespace protolearn;
using namespace testing;

namespace {

std::string slurp(const std::string& rel) {
  std::ifstream f(std::string(PROTOLEARN_SOURCE_DIR) + "/" + rel);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Total random monitor over the names of `m`'s symbols; the last state is the sink.
analysis::Monitor random_monitor(std::mt19937_64& rng, const MealyMachine& m, std::size_t states) {
  analysis::Monitor mon;
  mon.name = "random";
  for (std::size_t q = 0; q < states; ++q) mon.states.push_back("q" + std::to_string(q));
  mon.initial = 0;
  mon.sink = states - 1;
  for (std::size_t q = 0; q < states; ++q)
    for (const auto& in : m.inputs())
      for (const auto& out : m.outputs()) {
        // mostly stay put so that violations are neither certain nor rare
        const std::size_t to = rng() % 4 == 0 ? rng() % states : q;
        mon.rules.push_back({q, analysis::Pattern::parse(in.kind), analysis::Pattern::parse(out.kind), to});
      }
  return mon;
}

std::optional<Word> brute_force_violation(const MealyMachine& m, const analysis::Monitor& mon) {
  std::optional<Word> found;
  for_each_word(m.inputs(), m.num_states() * mon.states.size(), [&](const Word& w) {
    auto out = run(m, w);
    std::size_t q = mon.initial;
    for (std::size_t i = 0; i < w.size(); ++i) q = *mon.step(q, w[i], out[i]);
    if (q == mon.sink) found = w;
    return found.has_value();
  });
  return found;
}

analysis::QuantitativeProperty property(const std::string& line) {
  return analysis::parse_quantitative("protolearn-quantitative 1\nproperty " + line + "\nend\n").at(0);
}

} // namespace

TEST_CASE("diff of a machine with itself is empty") {
  auto m = sim::ground_truth(sim::make_fixture("tcp-basic"));
  auto d = analysis::diff(m, m);
  CHECK(d.equivalent);
  CHECK(d.examples.empty());
  CHECK(d.to_string().rfind("verdict equivalent", 0) == 0);
}

TEST_CASE("diff agrees with brute force and is symmetric") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 100; ++i) {
    auto a = random_machine(rng, 1 + rng() % 5, 2, 2), b = random_machine(rng, 1 + rng() % 5, 2, 2);
    auto ab = analysis::diff(a, b), ba = analysis::diff(b, a);
    auto brute = brute_force_difference(a, b);
    REQUIRE(ab.equivalent == !brute);
    CHECK(ba.equivalent == ab.equivalent);
    if (ab.equivalent) continue;
    CHECK(ab.examples.front().inputs.size() == brute->size());
    CHECK(ba.examples.front().inputs.size() == brute->size());
    for (const auto& e : ab.examples) {
      CHECK(run(a, e.inputs) == e.outputs_a);
      CHECK(run(b, e.inputs) == e.outputs_b);
      CHECK(e.outputs_a != e.outputs_b);
    }
  }
}

TEST_CASE("the variant differs and the counterexample replays on both servers") {
  auto a = sim::ground_truth(sim::make_fixture("tcp-basic"));
  auto b = sim::ground_truth(sim::make_fixture("tcp-variant"));
  auto d = analysis::diff(a, b);
  REQUIRE_FALSE(d.equivalent);
  const auto& e = d.examples.front();
  CHECK(e.inputs == word({"SYN(?,?,0)", "SYN+ACK(?,?,0)"}));
  Adapter sa(tcp_alphabet(), inproc_factory(sim::make_fixture("tcp-basic"), 1), AdapterConfig{});
  Adapter sb(tcp_alphabet(), inproc_factory(sim::make_fixture("tcp-variant"), 1), AdapterConfig{});
  CHECK(sa.query(e.inputs) == e.outputs_a);
  CHECK(sb.query(e.inputs) == e.outputs_b);
  auto dot = analysis::diff_dot(a, d);
  CHECK(dot.find("red") != std::string::npos);
}

TEST_CASE("safety check agrees with brute force") {
  std::mt19937_64 rng(7);
  int violated = 0;
  for (int i = 0; i < 150; ++i) {
    auto m = random_machine(rng, 1 + rng() % 5, 2, 2);
    auto mon = random_monitor(rng, m, 2 + rng() % 2);
    auto r = analysis::check_safety(m, mon);
    auto brute = brute_force_violation(m, mon);
    REQUIRE(r.holds == !brute);
    if (r.holds) continue;
    ++violated;
    CHECK(r.witness.inputs.size() == brute->size());
    CHECK(r.witness.outputs == run(m, r.witness.inputs));
  }
  CHECK(violated > 20);
}

TEST_CASE("example monitors on the handshake") {
  auto m = sim::ground_truth(sim::make_fixture("tcp-basic"));
  auto quiet = analysis::parse_monitor(slurp("examples_cfg/reset-then-quiet.monitor"));
  auto r = analysis::check_safety(m, quiet);
  REQUIRE_FALSE(r.holds);
  CHECK(r.witness.inputs.size() == brute_force_violation(m, quiet)->size());
  CHECK(analysis::check_safety(m, analysis::parse_monitor(slurp("examples_cfg/input-first.monitor"))).holds);
}

TEST_CASE("a violation five steps deep is found at depth five") {
  // counter monitor: the fifth SYN in a row trips it
  MealyBuilder b(letters(2, "i"), letters(1, "o"));
  b.add("s", "i0", "o0", "s").add("s", "i1", "o0", "s");
  auto m = b.build("s");
  analysis::Monitor mon;
  mon.name = "five";
  mon.states = {"c0", "c1", "c2", "c3", "c4", "bad"};
  mon.sink = 5;
  for (std::size_t q = 0; q < 5; ++q) {
    mon.rules.push_back({q, analysis::Pattern::parse("i0"), analysis::Pattern::parse("*"), q + 1});
    mon.rules.push_back({q, analysis::Pattern::parse("*"), analysis::Pattern::parse("*"), 0});
  }
  mon.rules.push_back({5, analysis::Pattern::parse("*"), analysis::Pattern::parse("*"), 5});
  auto r = analysis::check_safety(m, mon);
  REQUIRE_FALSE(r.holds);
  CHECK(r.witness.inputs == Word(5, m.inputs()[0]));
}

TEST_CASE("monitor documents are validated") {
  CHECK_THROWS_AS(analysis::parse_monitor("protolearn-monitor 1\nstates a\ninitial a\nsink a\n"), ParseError);
  CHECK_THROWS_AS(analysis::parse_monitor("protolearn-monitor 1\nstates a b\ninitial a\nsink b\nrule a * * c\nend\n"), ParseError);
  CHECK_THROWS_AS(analysis::parse_monitor("protolearn-monitor 1\nstates a b\ninitial a\nsink b\nrule a * *\nend\n"), ParseError);
  auto partial = analysis::parse_monitor("protolearn-monitor 1\nstates a b\ninitial a\nsink b\nrule a SYN * a\nend\n");
  CHECK_THROWS_AS(analysis::require_total(partial, sim::ground_truth(sim::make_fixture("tcp-basic"))), Error);
  auto neg = analysis::Pattern::parse("!RST|NIL");
  CHECK(neg.matches(sym("ACK(?,?,0)")));
  CHECK_FALSE(neg.matches(AbstractSymbol::nil()));
}

TEST_CASE("quantitative properties: hold, fail, vacuous") {
  auto spec = sim::make_fixture("tcp-basic");
  auto holds = analysis::check_quantitative(spec.semantics, property("hs equals-input-plus ACK+SYN an sn 1"));
  CHECK_FALSE(holds.violated);
  CHECK_FALSE(holds.vacuous);
  CHECK(holds.samples == 1000);
  CHECK(holds.applicable_steps > 0);

  auto x = handshake_extended();
  auto bad = analysis::check_quantitative(x, property("off equals-input-plus ACK an sn 1"));
  REQUIRE(bad.violated);
  const auto& o = bad.witness.outputs[bad.witness_step];
  CHECK(o.kind == "ACK");
  CHECK(*o.params[1] != *bad.witness.inputs[bad.witness_step].params[0] + 1);
  CHECK(run_extended(x, bad.witness.inputs, {{"pr", *o.params[0]}}) == bad.witness.outputs);

  auto none = analysis::check_quantitative(x, property("fin nonzero FIN+ACK sn"));
  CHECK(none.vacuous);
  CHECK_FALSE(none.violated);
  CHECK_THROWS_AS(analysis::check_quantitative(x, property("bad nonzero ACK zz")), Error);
  CHECK_THROWS_AS(analysis::parse_quantitative("protolearn-quantitative 1\nproperty p sometimes ACK sn\nend\n"), ParseError);
}

TEST_CASE("constant field is caught on live runs") {
  auto spec = sim::make_fixture("tcp-constant-field");
  Adapter a(tcp_alphabet(), inproc_factory(spec, 1), AdapterConfig{});
  auto r = analysis::check_quantitative(spec.semantics, property("ack nonzero ACK an"), {200, 8, 1}, fresh_source(a));
  REQUIRE(r.violated);
  CHECK(*r.witness.outputs[r.witness_step].params[1] == 0);
}

TEST_CASE("noisy reset frequencies come back near p") {
  Adapter a(tcp_alphabet(), inproc_factory(sim::make_fixture("tcp-noisy-reset"), 5), AdapterConfig{.seed = 5});
  const auto w = word({"SYN(?,?,0)", "ACK(?,?,0)", "RST(?,?,0)", "SYN(?,?,0)"});
  std::optional<NondeterminismReport> base;
  for (int i = 0; i < 20 && !base; ++i)
    if (auto v = a.voted_query(w, VotePolicy{10, 1.0, 10}); auto* r = std::get_if<NondeterminismReport>(&v)) base = *r;
  REQUIRE(base);
  auto rep = analysis::report_nondeterminism(*base, a, 200);
  CHECK(rep.total() == 200);
  REQUIRE(rep.answers.size() == 2);
  auto f = rep.frequencies();
  CHECK(f[0] + f[1] == Catch::Approx(1.0));
  CHECK(std::max(f[0], f[1]) == Catch::Approx(0.82).margin(0.06));
  CHECK(rep.to_string().find(to_string(w)) != std::string::npos);
}

TEST_CASE("a deterministic SUL never trips the strict vote") {
  Adapter a(tcp_alphabet(), inproc_factory(sim::make_fixture("tcp-basic"), 1), AdapterConfig{});
  CHECK_NOTHROW(learn(a, EquivOracleConfig::random_words(300, 8), VotePolicy{10, 1.0, 10}));
}
