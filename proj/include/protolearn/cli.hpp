#pragma once

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "protolearn/adapter.hpp"
#include "protolearn/analysis.hpp"
#include "protolearn/document.hpp"
#include "protolearn/dot.hpp"
#include "protolearn/error.hpp"
#include "protolearn/learner.hpp"
#include "protolearn/oracle_table.hpp"
#include "protolearn/refsim.hpp"
#include "protolearn/synthesis.hpp"

namespace protolearn::cli {

inline constexpr const char* env_prefix = "PROTOLEARN_";

inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::transport:
    case ErrorCode::unmappable_packet: return 3;
    case ErrorCode::nondeterminism: return 4;
    case ErrorCode::property_violation: return 5;
    default: return 2;
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::config, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// "-" writes to `out`.
inline void write_file(const std::string& path, const std::string& content, std::ostream& out) {
  if (path == "-") {
    out << content;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << content)) throw Error(ErrorCode::config, "cannot write '" + path + "'");
}

inline std::string first_token(const std::string& doc) {
  std::istringstream ss(doc);
  std::string tok;
  ss >> tok;
  return tok;
}

using AnyModel = std::variant<MealyMachine, ExtendedMealyMachine>;

inline AnyModel load_model(const std::string& path) {
  const auto doc = read_file(path);
  if (first_token(doc) == "protolearn-extended-model") return deserialize_extended(doc);
  return deserialize_model(doc);
}

inline const MealyMachine& skeleton_of(const AnyModel& m) {
  if (auto* x = std::get_if<ExtendedMealyMachine>(&m)) return x->skeleton();
  return std::get<MealyMachine>(m);
}

// `r:zero,pr:free,pi:zero`
inline std::vector<RegisterDecl> parse_registers(const std::string& s) {
  std::vector<RegisterDecl> out;
  for (const auto& item : text::split(s, ',')) {
    if (item.empty()) continue;
    auto parts = text::split(item, ':');
    if (parts.size() != 2 || parts[0].empty() || (parts[1] != "zero" && parts[1] != "free"))
      throw Error(ErrorCode::config, "bad register declaration '" + item + "' (want name:zero or name:free)");
    out.push_back({parts[0], parts[1] == "zero" ? InitPolicy::zero : InitPolicy::free});
  }
  return out;
}

struct RunConfig {
  std::string alphabet;
  std::string sul;
  std::uint64_t seed = 1;
  VotePolicy vote;
  std::string equiv_strategy = "random";
  std::size_t equiv_tests = 2000;
  std::size_t equiv_maxlen = 12;
  std::size_t equiv_depth = 1;
  std::string out = "-";
  std::string oracle_table;
  std::string fixture;
  std::string bug;
  std::string listen = "127.0.0.1:0";
  std::vector<std::string> models;
  std::vector<std::string> properties;
  std::string registers = "r:zero,pr:free,pi:zero";
  bool params_plus_one = false;
  std::size_t synth_validation = 5000;
  std::size_t synth_iterations = 25;
  std::size_t timeout_ms = 200;
  std::size_t samples = 1000;
  std::size_t max_examples = 3;
  std::string report;

  AlphabetConfig load_alphabet() const { return alphabet.empty() ? tcp_alphabet() : parse_alphabet(read_file(alphabet)); }

  std::optional<sim::BugInjection> bug_injection() const {
    if (bug.empty()) return std::nullopt;
    return sim::parse_bug(bug);
  }

  EquivOracleConfig equiv() const {
    EquivOracleConfig c;
    c.strategy = parse_strategy(equiv_strategy);
    c.num_tests = equiv_tests;
    c.max_len = equiv_maxlen;
    c.depth = equiv_depth;
    c.seed = seed;
    return c;
  }

  AdapterConfig adapter_config() const {
    AdapterConfig ac;
    ac.seed = seed;
    ac.timeout = std::chrono::milliseconds(timeout_ms);
    return ac;
  }

  Adapter make_adapter() const {
    if (sul.empty()) throw Error(ErrorCode::config, "no SUL given (--sul host:port or inproc:<fixture>)");
    return Adapter(load_alphabet(), channel_factory(sul, seed, bug_injection()), adapter_config());
  }
};

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> f{false};
  return f;
}

inline int cmd_simulate(const RunConfig& rc, std::ostream& out) {
  if (rc.fixture.empty()) throw Error(ErrorCode::config, "--fixture is required");
  auto spec = sim::make_fixture(rc.fixture, rc.bug_injection());
  auto server = sim::serve(spec, wire::parse_endpoint(rc.listen), rc.seed);
  out << "listening " << server->port() << std::endl;
  std::signal(SIGINT, [](int) { stop_flag() = true; });
  std::signal(SIGTERM, [](int) { stop_flag() = true; });
  while (!stop_flag()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server->stop();
  return 0;
}

inline int cmd_learn(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  auto adapter = rc.make_adapter();
  const auto eq = rc.equiv();
  rc.vote.validate();
  auto names = [&] {
    std::vector<std::string> n;
    for (const auto& p : adapter.alphabet().params) n.push_back(p.name);
    return n;
  };
  LearnResult res;
  try {
    res = learn(adapter, eq, rc.vote);
  } catch (const NondeterminismError& e) {
    auto rep = analysis::report_nondeterminism(e.report(), adapter, rc.vote.min_repeats);
    const std::string path = rc.report.empty() ? (rc.out == "-" ? "nondeterminism-report.txt" : rc.out + ".nondeterminism")
                                               : rc.report;
    write_file(path, rep.to_string(), out);
    err << "nondeterminism report written to " << path << "\n";
    throw NondeterminismError(rep);
  }
  write_file(rc.out, serialize(res.model, names()), out);
  if (!rc.oracle_table.empty())
    write_file(rc.oracle_table, serialize_oracle_table(adapter.oracle_table_snapshot(), adapter.alphabet().params.size()), out);
  std::string stats = res.stats.to_string();
  const auto& as = adapter.stats();
  stats += "packets_sent " + std::to_string(as.packets_sent) + "\nretransmissions_dropped " +
           std::to_string(as.retransmissions_dropped) + "\nunsolicited_records " + std::to_string(as.unsolicited_records) + "\n";
  if (!rc.report.empty()) write_file(rc.report, stats, out);
  (rc.out == "-" ? err : out) << stats;
  return 0;
}

inline int cmd_synth(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.models.size() != 1) throw Error(ErrorCode::config, "synth needs exactly one --model");
  if (rc.oracle_table.empty()) throw Error(ErrorCode::config, "synth needs --oracle-table from a learn run");
  const auto model_doc = read_file(rc.models[0]);
  const auto m = deserialize_model(model_doc);
  const auto table = deserialize_oracle_table(read_file(rc.oracle_table));
  auto adapter = rc.make_adapter();
  const auto& alph = adapter.alphabet();
  std::vector<Trace> traces;
  for (const auto& e : table) traces.push_back(synth::to_param_trace(e, alph));
  synth::TraceSource fresh = [&](const Word& w) {
    auto q = adapter.query_logged(w);
    return synth::to_param_trace({q.abstract, q.concrete}, alph);
  };
  synth::SynthesisConfig sc;
  sc.seed = rc.seed;
  sc.validation_traces = rc.synth_validation;
  sc.max_iterations = rc.synth_iterations;
  sc.grammar.params_plus_one = rc.params_plus_one;
  auto res = synth::synthesize(m, traces, fresh, parse_registers(rc.registers), model_param_names(model_doc), sc);
  write_file(rc.out, serialize(res.machine), out);
  const auto rep = res.report.to_string();
  if (!rc.report.empty()) write_file(rc.report, rep, out);
  (rc.out == "-" ? err : out) << rep;
  if (!res.report.validated) err << "warning: iteration cap reached before the candidate passed validation\n";
  return 0;
}

inline int cmd_diff(const RunConfig& rc, std::ostream& out) {
  if (rc.models.size() != 2) throw Error(ErrorCode::config, "diff needs exactly two --model arguments");
  const auto a = load_model(rc.models[0]);
  const auto b = load_model(rc.models[1]);
  auto rep = analysis::diff(skeleton_of(a), skeleton_of(b), rc.max_examples);
  out << rep.to_string();
  if (!rc.report.empty()) write_file(rc.report, analysis::diff_dot(skeleton_of(a), rep), out);
  return 0;
}

inline int cmd_check(const RunConfig& rc, std::ostream& out) {
  if (rc.models.size() != 1) throw Error(ErrorCode::config, "check needs exactly one --model");
  if (rc.properties.empty()) throw Error(ErrorCode::config, "check needs at least one --properties file");
  const auto model = load_model(rc.models[0]);
  bool violated = false;
  for (const auto& path : rc.properties) {
    const auto doc = read_file(path);
    const auto kind = first_token(doc);
    if (kind == "protolearn-monitor") {
      auto mon = analysis::parse_monitor(doc);
      auto res = analysis::check_safety(skeleton_of(model), mon);
      out << res.to_string(mon.name);
      violated |= !res.holds;
    } else if (kind == "protolearn-quantitative") {
      auto* x = std::get_if<ExtendedMealyMachine>(&model);
      if (!x) throw Error(ErrorCode::config, "quantitative properties need an extended model (run synth first)");
      std::unique_ptr<Adapter> adapter;
      std::optional<synth::TraceSource> sul;
      if (!rc.sul.empty()) {
        adapter = std::make_unique<Adapter>(rc.load_alphabet(), channel_factory(rc.sul, rc.seed, rc.bug_injection()),
                                            rc.adapter_config());
        sul = [&](const Word& w) {
          auto q = adapter->query_logged(w);
          return synth::to_param_trace({q.abstract, q.concrete}, adapter->alphabet());
        };
      }
      for (const auto& p : analysis::parse_quantitative(doc)) {
        auto res = analysis::check_quantitative(*x, p, {rc.samples, rc.equiv_maxlen, rc.seed}, sul);
        out << res.to_string(p.name);
        violated |= res.violated;
      }
    } else {
      throw Error(ErrorCode::config, "'" + path + "' is neither a monitor nor a quantitative property document");
    }
  }
  if (violated) throw Error(ErrorCode::property_violation, "at least one property is violated");
  return 0;
}

inline int cmd_viz(const RunConfig& rc, std::ostream& out) {
  if (rc.models.size() != 1) throw Error(ErrorCode::config, "viz needs exactly one --model");
  const auto m = load_model(rc.models[0]);
  write_file(rc.out, std::visit([](const auto& x) { return to_dot(x); }, m), out);
  return 0;
}

inline std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

inline void report_error(std::ostream& err, const char* code, int exit, const std::string& msg) {
  err << "error: code=" << code << " exit=" << exit << " message=\"" << one_line(msg) << "\"\n";
}

// args excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Black-box protocol model learning, synthesis and analysis", "protolearn"};
  app.require_subcommand(1);
  RunConfig rc;
  auto env = [](const char* name) { return std::string(env_prefix) + name; };

  auto common = [&](CLI::App* c) {
    c->add_option("--alphabet", rc.alphabet, "alphabet document (default: built-in TCP alphabet)")->envname(env("ALPHABET"));
    c->add_option("--seed", rc.seed, "seed for every random choice")->envname(env("SEED"));
    c->add_option("--out", rc.out, "output path, '-' for stdout")->envname(env("OUT"));
  };
  auto sul_opts = [&](CLI::App* c) {
    c->add_option("--sul", rc.sul, "host:port or inproc:<fixture>")->envname(env("SUL"));
    c->add_option("--bug", rc.bug, "bug injection for inproc fixtures")->envname(env("BUG"));
    c->add_option("--timeout-ms", rc.timeout_ms, "per-record receive timeout")->check(CLI::PositiveNumber)->envname(env("TIMEOUT_MS"));
    c->add_option("--oracle-table", rc.oracle_table, "oracle table path")->envname(env("ORACLE_TABLE"));
  };

  auto* sim = app.add_subcommand("simulate", "serve a reference fixture");
  common(sim);
  sim->add_option("--fixture", rc.fixture, "fixture name")->envname(env("FIXTURE"));
  sim->add_option("--listen", rc.listen, "endpoint to listen on")->envname(env("LISTEN"));
  sim->add_option("--bug", rc.bug, "bug injection")->envname(env("BUG"));

  auto* learn_cmd = app.add_subcommand("learn", "learn a Mealy model of the SUL");
  common(learn_cmd);
  sul_opts(learn_cmd);
  learn_cmd->add_option("--vote-min", rc.vote.min_repeats)->check(CLI::PositiveNumber)->envname(env("VOTE_MIN"));
  learn_cmd->add_option("--vote-threshold", rc.vote.agreement_threshold)->check(CLI::PositiveNumber)->envname(env("VOTE_THRESHOLD"));
  learn_cmd->add_option("--vote-max", rc.vote.max_repeats)->check(CLI::PositiveNumber)->envname(env("VOTE_MAX"));
  learn_cmd->add_option("--equiv-strategy", rc.equiv_strategy, "random | wmethod | exhaustive")->envname(env("EQUIV_STRATEGY"));
  learn_cmd->add_option("--equiv-tests", rc.equiv_tests)->check(CLI::PositiveNumber)->envname(env("EQUIV_TESTS"));
  learn_cmd->add_option("--equiv-maxlen", rc.equiv_maxlen)->check(CLI::PositiveNumber)->envname(env("EQUIV_MAXLEN"));
  learn_cmd->add_option("--equiv-depth", rc.equiv_depth)->envname(env("EQUIV_DEPTH"));
  learn_cmd->add_option("--report", rc.report, "stats (or nondeterminism report) path")->envname(env("REPORT"));

  auto* synth_cmd = app.add_subcommand("synth", "synthesize register terms for a learned model");
  common(synth_cmd);
  sul_opts(synth_cmd);
  synth_cmd->add_option("--model", rc.models, "learned model document")->envname(env("MODEL"));
  synth_cmd->add_option("--registers", rc.registers, "name:zero|free,...")->envname(env("REGISTERS"));
  synth_cmd->add_flag("--params-plus-one", rc.params_plus_one, "add param+1 terms to the grammar");
  synth_cmd->add_option("--validation-traces", rc.synth_validation)->check(CLI::PositiveNumber)->envname(env("VALIDATION_TRACES"));
  synth_cmd->add_option("--max-iterations", rc.synth_iterations)->check(CLI::PositiveNumber)->envname(env("MAX_ITERATIONS"));
  synth_cmd->add_option("--report", rc.report, "synthesis report path")->envname(env("REPORT"));

  auto* diff_cmd = app.add_subcommand("diff", "compare two models");
  diff_cmd->add_option("--model", rc.models, "two model documents")->required();
  diff_cmd->add_option("--max-examples", rc.max_examples)->check(CLI::PositiveNumber);
  diff_cmd->add_option("--report", rc.report, "DOT file highlighting differing transitions of the first model");

  auto* check_cmd = app.add_subcommand("check", "check properties on a model");
  check_cmd->add_option("--model", rc.models, "model or extended model document")->required();
  check_cmd->add_option("--properties", rc.properties, "monitor or quantitative property documents")->envname(env("PROPERTIES"));
  check_cmd->add_option("--seed", rc.seed)->envname(env("SEED"));
  check_cmd->add_option("--samples", rc.samples)->check(CLI::PositiveNumber)->envname(env("SAMPLES"));
  check_cmd->add_option("--max-len", rc.equiv_maxlen)->check(CLI::PositiveNumber);
  check_cmd->add_option("--sul", rc.sul, "also replay sampled words on this SUL")->envname(env("SUL"));

  auto* viz_cmd = app.add_subcommand("viz", "render a model as DOT");
  viz_cmd->add_option("--model", rc.models, "model document")->required();
  viz_cmd->add_option("--out", rc.out, "output path, '-' for stdout")->envname(env("OUT"));

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, to_string(ErrorCode::config), 2, e.what());
    return 2;
  }

  try {
    if (*sim) return cmd_simulate(rc, out);
    if (*learn_cmd) return cmd_learn(rc, out, err);
    if (*synth_cmd) return cmd_synth(rc, out, err);
    if (*diff_cmd) return cmd_diff(rc, out);
    if (*check_cmd) return cmd_check(rc, out);
    if (*viz_cmd) return cmd_viz(rc, out);
  } catch (const Error& e) {
    const int code = exit_code(e.code());
    report_error(err, to_string(e.code()), code, e.what());
    return code;
  } catch (const std::exception& e) {
    report_error(err, to_string(ErrorCode::config), 2, e.what());
    return 2;
  }
  return 2;
}

} // namespace protolearn::cli
