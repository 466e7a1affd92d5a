#include "catch_amalgamated.hpp"
#include "support.hpp"

using namespace protolearn;
using namespace testing;

namespace {

synth::Sketch worked_sketch() { return synth::build_sketch(handshake_skeleton(), tcp_regs(), tcp_params(), handshake_subset()); }

std::size_t term_index(const std::vector<Term>& grammar, const Term& t) {
  return static_cast<std::size_t>(std::find(grammar.begin(), grammar.end(), t) - grammar.begin());
}

} // namespace

TEST_CASE("the worked sketch has the expected unknowns") {
  auto s = worked_sketch();
  CHECK(s.update_grammar.size() == 8);
  CHECK(s.output_grammar.size() == 6);
  CHECK(s.count(synth::Unknown::Kind::update) == 9);
  CHECK(s.count(synth::Unknown::Kind::output) == 2);
  std::vector<std::string> names;
  for (const auto& u : s.unknowns) names.push_back(u.name);
  CHECK(names == std::vector<std::string>{"u1", "u2", "u3", "u4", "u5", "u6", "o1", "o2", "u7", "u8", "u9"});
  CHECK(s.term_to_string(s.update_grammar[1]) == "r+1");
  CHECK(s.term_to_string(s.update_grammar[7]) == "an");
  auto plus = synth::build_sketch(handshake_skeleton(), tcp_regs(), tcp_params(), std::nullopt, {.params_plus_one = true});
  CHECK(plus.update_grammar.size() == 10);
  CHECK(plus.output_grammar.size() == 6);
}

TEST_CASE("implications read like the hand-written constraints") {
  auto s = worked_sketch();
  auto sys = synth::generate_constraints(s, {worked_traces()[0]});
  std::set<std::string> texts;
  for (const auto& i : sys.implications) texts.insert(i.text);
  for (const char* want : {"E_u1=0 ⟹ r[1]=r[0]", "E_u1=1 ⟹ r[1]=r[0]+1", "E_u1=2 ⟹ r[1]=pr[0]", "E_u1=5 ⟹ r[1]=pi[0]+1",
                           "E_u1=6 ⟹ r[1]=0", "E_u1=7 ⟹ r[1]=3", "E_o2=0 ⟹ r[2]=5", "E_o2=3 ⟹ pr[2]+1=5",
                           "E_o2=4 ⟹ pi[2]=5"})
    CHECK(texts.count(want) == 1);
  auto two = synth::generate_constraints(s, worked_traces());
  bool indexed = false;
  for (const auto& i : two.implications) indexed |= i.text == "E_u4=7 ⟹ r_1[1]=3";
  CHECK(indexed);
  CHECK(two.timeline_variables == 3 * 3 * 2);
}

TEST_CASE("constraint count grows linearly with trace length") {
  auto s = synth::build_sketch(handshake_skeleton(), tcp_regs(), tcp_params());
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    Trace t;
    StateId st = 0;
    std::size_t expect = 0;
    const auto& m = s.skeleton;
    for (std::size_t k = 0, len = rng() % 30; k < len; ++k) {
      const std::size_t a = rng() % 2;
      auto in = m.inputs()[a];
      in.params = {Value(k), Value(k)};
      auto out = m.output(st, a);
      for (auto& p : out.params) p = Value(7);
      expect += 3 * 8 + out.params.size() * 6;
      t.inputs.push_back(in);
      t.outputs.push_back(out);
      st = m.next(st, a);
    }
    CHECK(synth::generate_constraints(s, {t}).implications.size() == expect);
  }
}

TEST_CASE("nothing to satisfy means the least assignment") {
  auto s = worked_sketch();
  auto r = synth::solve(synth::generate_constraints(s, {}));
  REQUIRE(r.sat);
  CHECK(r.assignment == synth::TermAssignment(s.unknowns.size(), 0));
}

TEST_CASE("worked example: solver and enumeration agree") {
  auto s = worked_sketch();
  auto traces = worked_traces();
  auto r = synth::solve(synth::generate_constraints(s, traces));
  auto oracle = brute_force_least(s, traces);
  REQUIRE(r.sat);
  REQUIRE(oracle);
  CHECK(r.assignment == *oracle);
  for (const auto& t : traces) CHECK(replays_with_some_init(synth::to_extended(s, r.assignment), t));

  // The published solution (r := r+1 on the ACK loop, ACK(pr, pr+1)) is
  // consistent too, just not the least one.
  const auto& g = s.update_grammar;
  synth::TermAssignment fig(s.unknowns.size());
  const std::size_t r_ = 0, pr = 1, pi = 2;
  const std::vector<std::pair<const char*, Term>> pick{
      {"u1", Term::reg(r_, 1)}, {"u2", Term::reg(pr)}, {"u3", Term::param(0)}, {"u4", Term::reg(pr)},
      {"u5", Term::reg(pr)},    {"u6", Term::reg(pi)}, {"u7", Term::reg(r_, 1)}, {"u8", Term::reg(pr)},
      {"u9", Term::reg(pi)}};
  for (std::size_t u = 0; u < s.unknowns.size(); ++u)
    for (const auto& [name, term] : pick)
      if (s.unknowns[u].name == name) fig[u] = term_index(g, term);
  fig[s.output_unknown(1, 0)] = term_index(s.output_grammar, Term::reg(pr));
  fig[s.output_unknown(1, 1)] = term_index(s.output_grammar, Term::reg(pr, 1));
  CHECK(fig[0] == 1);
  CHECK(fig[s.output_unknown(1, 1)] == 3);
  for (const auto& t : traces) CHECK(replays_with_some_init(synth::to_extended(s, fig), t));
  CHECK(fig > r.assignment);
}

TEST_CASE("solver matches enumeration on random small systems") {
  std::mt19937_64 rng(12);
  int sat = 0, unsat = 0;
  for (int i = 0; i < 100; ++i) {
    auto in = random_instance(rng);
    auto sys = synth::generate_constraints(in.sketch, in.traces);
    auto r = synth::solve(sys);
    auto oracle = brute_force_least(in.sketch, in.traces);
    REQUIRE(r.sat == oracle.has_value());
    auto ff = synth::solve(sys, synth::default_node_budget, true);
    CHECK(ff.sat == r.sat);
    if (!r.sat) {
      ++unsat;
      // the core is unsat on its own and minimal
      REQUIRE_FALSE(r.unsat_core.empty());
      std::vector<Trace> core;
      for (auto ti : r.unsat_core) core.push_back(in.traces[ti]);
      CHECK_FALSE(brute_force_least(in.sketch, core));
      for (std::size_t k = 0; k < core.size(); ++k) {
        auto less = core;
        less.erase(less.begin() + static_cast<std::ptrdiff_t>(k));
        CHECK(brute_force_least(in.sketch, less));
      }
      continue;
    }
    ++sat;
    CHECK(r.assignment == *oracle);
    auto x = synth::to_extended(in.sketch, r.assignment);
    for (std::size_t t = 0; t < in.traces.size(); ++t)
      CHECK(run_extended(x, in.traces[t].inputs, r.initial_values[t]) == in.traces[t].outputs);
    auto y = synth::to_extended(in.sketch, ff.assignment);
    for (const auto& t : in.traces) {
      CHECK(replays_with_some_init(y, t));
      CHECK_FALSE(synth::replay_mismatch(y, t));
    }
  }
  CHECK(sat > 30);
  CHECK(unsat > 5);
}

TEST_CASE("negative examples exclude values") {
  auto s = worked_sketch();
  auto traces = worked_traces();
  const auto base = synth::solve(synth::generate_constraints(s, traces));
  // ruling out the observed value itself is a contradiction
  CHECK_FALSE(synth::solve(synth::generate_constraints(s, traces, {{0, 1, 0, 4}})).sat);
  // ruling out a value nobody predicts changes nothing
  auto same = synth::solve(synth::generate_constraints(s, traces, {{0, 1, 0, 9}}));
  REQUIRE(same.sat);
  CHECK(same.assignment == base.assignment);
  CHECK_THROWS_AS(synth::generate_constraints(s, traces, {{5, 0, 0, 1}}), Error);
}

TEST_CASE("unreachable terms report an insufficient grammar") {
  Adapter a(tcp_alphabet(), inproc_factory(sim::make_fixture("step2"), 1), AdapterConfig{});
  auto model = learn(a, EquivOracleConfig::random_words(200, 6)).model;
  synth::SynthesisConfig cfg;
  cfg.validation_traces = 200;
  try {
    synth::synthesize(model, param_traces(a), fresh_source(a), tcp_regs(), tcp_params(), cfg);
    FAIL("step-2 counter synthesized with a +1 grammar");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::synthesis);
    CHECK(std::string(e.what()).find("grammar insufficient") != std::string::npos);
  }
}

TEST_CASE("trace selection covers every transition the pool reaches") {
  auto m = sim::ground_truth(sim::make_fixture("tcp-basic"));
  Adapter a(tcp_alphabet(), inproc_factory(sim::make_fixture("tcp-basic"), 1), AdapterConfig{});
  learn(a, EquivOracleConfig::random_words(300, 8));
  auto pool = param_traces(a);
  auto picked = synth::select_traces(m, pool, 1000, 1);
  auto covered = [&](const std::vector<Trace>& ts) {
    std::set<std::size_t> c;
    for (const auto& t : ts) {
      StateId s = 0;
      for (const auto& in : t.inputs) {
        auto k = *m.input_index(in);
        c.insert(s * 7 + k);
        s = m.next(s, k);
      }
    }
    return c;
  };
  CHECK(covered(picked) == covered(pool));
  CHECK(picked.size() < pool.size());
  CHECK(synth::select_traces(m, pool, 5, 1).size() == 5);
}

TEST_CASE("echo synthesizes and validates") {
  Adapter a(tcp_alphabet(), inproc_factory(sim::make_fixture("echo"), 4), AdapterConfig{.seed = 4});
  auto model = learn(a, EquivOracleConfig::random_words(200, 6)).model;
  auto fresh = fresh_source(a);
  auto res = synth::synthesize(model, param_traces(a), fresh, tcp_regs(), tcp_params());
  CHECK(res.report.validated);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    Word w(1 + rng() % 10);
    for (auto& s : w) s = model.inputs()[rng() % 7];
    CHECK_FALSE(synth::replay_mismatch(res.machine, fresh(w)));
  }
  CHECK(deserialize_extended(serialize(res.machine)).skeleton().num_states() == 1);
}

TEST_CASE("a constant field comes out as the zero register") {
  Adapter a(tcp_alphabet(), inproc_factory(sim::make_fixture("tcp-constant-field"), 2), AdapterConfig{.seed = 2});
  auto model = learn(a, EquivOracleConfig::random_words()).model;
  auto res = synth::synthesize(model, param_traces(a), fresh_source(a), tcp_regs(), tcp_params());
  REQUIRE(res.report.validated);
  const auto& x = res.machine;
  const auto& sk = x.skeleton();
  int ack_edges = 0;
  for (StateId s = 0; s < sk.num_states(); ++s)
    for (std::size_t k = 0; k < 7; ++k) {
      const auto t = x.transition(s, k);
      CHECK(x.updates(t)[0] == Term::reg(0));
      if (sk.output(s, k).kind == "ACK") {
        ++ack_edges;
        CHECK(x.output_terms(t)[1] == Term::reg(0));
      }
    }
  CHECK(ack_edges > 0);
}
