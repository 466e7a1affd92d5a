#include <cstdlib>
#include <filesystem>
#include <regex>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "support.hpp"
#include "protolearn/cli.hpp"

using namespace protolearn;
using namespace testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  static fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("protolearn-cli-" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (scratch() / name).string(); }
std::string cfg(const std::string& name) { return std::string(PROTOLEARN_SOURCE_DIR) + "/examples_cfg/" + name; }

const std::regex error_line(R"(error: code=[A-Z_]+ exit=[0-9] message="[^"\n]*"\n)");

} // namespace

TEST_CASE("learn writes a model, an oracle table and stats") {
  auto r = invoke({"learn", "--sul", "inproc:tcp-basic", "--out", path("basic.plm"), "--oracle-table", path("basic.otab"),
                "--report", path("basic.stats")});
  REQUIRE(r.code == 0);
  auto m = deserialize_model(cli::read_file(path("basic.plm")));
  CHECK(m.num_states() == 6);
  CHECK(equivalent(m, sim::ground_truth(sim::make_fixture("tcp-basic"))).equivalent);
  CHECK_FALSE(deserialize_oracle_table(cli::read_file(path("basic.otab"))).empty());
  auto stats = cli::read_file(path("basic.stats"));
  CHECK(stats.find("membership_queries") != std::string::npos);
  CHECK(stats.find("packets_sent") != std::string::npos);
}

TEST_CASE("fixed seeds give byte-identical artifacts") {
  for (const char* tag : {"a", "b"}) {
    auto r = invoke({"learn", "--sul", "inproc:tcp-basic", "--seed", "9", "--out", path(std::string("s9") + tag + ".plm"),
                  "--oracle-table", path(std::string("s9") + tag + ".otab")});
    REQUIRE(r.code == 0);
  }
  CHECK(cli::read_file(path("s9a.plm")) == cli::read_file(path("s9b.plm")));
  CHECK(cli::read_file(path("s9a.otab")) == cli::read_file(path("s9b.otab")));
  REQUIRE(invoke({"learn", "--sul", "inproc:tcp-basic", "--seed", "10", "--out", path("s10.plm"), "--oracle-table",
               path("s10.otab")})
              .code == 0);
  // other seed: same abstract model, other sequence numbers
  CHECK(cli::read_file(path("s10.plm")) == cli::read_file(path("s9a.plm")));
  CHECK(cli::read_file(path("s10.otab")) != cli::read_file(path("s9a.otab")));
  auto x = invoke({"viz", "--model", path("s9a.plm")}), y = invoke({"viz", "--model", path("s9b.plm")});
  CHECK(x.out == y.out);
}

TEST_CASE("nondeterminism exits with 4 and leaves a report") {
  auto r = invoke({"learn", "--sul", "inproc:tcp-noisy-reset", "--vote-min", "10", "--vote-threshold", "1.0", "--vote-max", "10",
                "--out", path("noisy.plm"), "--report", path("noisy.report")});
  CHECK(r.code == 4);
  CHECK(std::regex_search(r.err, error_line));
  CHECK(r.err.find("code=NONDETERMINISM exit=4") != std::string::npos);
  CHECK(cli::read_file(path("noisy.report")).find("nondeterminism") != std::string::npos);
  CHECK_FALSE(fs::exists(path("noisy.plm")));
}

TEST_CASE("configuration and transport failures map to their exit codes") {
  auto bad_fixture = invoke({"learn", "--sul", "inproc:nope"});
  CHECK(bad_fixture.code == 2);
  CHECK(std::regex_match(bad_fixture.err, error_line));
  CHECK(invoke({"learn", "--sul", "inproc:tcp-basic", "--vote-threshold", "1.5"}).code == 2);
  CHECK(invoke({"learn"}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"viz", "--model", path("missing.plm")}).code == 2);
  auto down = invoke({"learn", "--sul", "127.0.0.1:1", "--out", path("down.plm")});
  CHECK(down.code == 3);
  CHECK(down.err.find("code=TRANSPORT_ERROR exit=3") != std::string::npos);
  CHECK(invoke({"viz", "--help"}).code == 0);
}

TEST_CASE("environment variables stand in for flags") {
  ::setenv("PROTOLEARN_SUL", "inproc:echo", 1);
  auto r = invoke({"learn", "--out", path("echo.plm")});
  ::unsetenv("PROTOLEARN_SUL");
  REQUIRE(r.code == 0);
  CHECK(deserialize_model(cli::read_file(path("echo.plm"))).num_states() == 1);
}

TEST_CASE("diff, viz and safety checks") {
  REQUIRE(invoke({"learn", "--sul", "inproc:tcp-basic", "--out", path("d-basic.plm")}).code == 0);
  REQUIRE(invoke({"learn", "--sul", "inproc:tcp-variant", "--out", path("d-variant.plm")}).code == 0);
  auto d = invoke({"diff", "--model", path("d-basic.plm"), "--model", path("d-variant.plm"), "--report", path("diff.dot")});
  CHECK(d.code == 0);
  CHECK(d.out.rfind("verdict differing", 0) == 0);
  CHECK(cli::read_file(path("diff.dot")).find("digraph") != std::string::npos);
  CHECK(invoke({"diff", "--model", path("d-basic.plm"), "--model", path("d-basic.plm")}).out.rfind("verdict equivalent", 0) == 0);

  auto v = invoke({"viz", "--model", path("d-basic.plm")});
  CHECK(v.code == 0);
  CHECK(v.out.find("digraph") != std::string::npos);

  auto bad = invoke({"check", "--model", path("d-basic.plm"), "--properties", cfg("reset-then-quiet.monitor")});
  CHECK(bad.code == 5);
  CHECK(bad.out.find("violated by") != std::string::npos);
  CHECK(invoke({"check", "--model", path("d-basic.plm"), "--properties", cfg("input-first.monitor")}).code == 0);
  CHECK(invoke({"check", "--model", path("d-basic.plm"), "--properties", cfg("handshake.quant")}).code == 2);
}

TEST_CASE("synth, then quantitative checks on the result") {
  REQUIRE(invoke({"learn", "--sul", "inproc:tcp-constant-field", "--out", path("cf.plm"), "--oracle-table", path("cf.otab")}).code == 0);
  auto s = invoke({"synth", "--sul", "inproc:tcp-constant-field", "--model", path("cf.plm"), "--oracle-table", path("cf.otab"),
                "--out", path("cf.xplm"), "--report", path("cf.report")});
  REQUIRE(s.code == 0);
  CHECK(cli::read_file(path("cf.report")).find("validated") != std::string::npos);
  auto x = deserialize_extended(cli::read_file(path("cf.xplm")));
  CHECK(x.skeleton().num_states() == 6);
  auto c = invoke({"check", "--model", path("cf.xplm"), "--properties", cfg("ack-offset.quant")});
  CHECK(c.code == 5);
  auto live = invoke({"check", "--model", path("cf.xplm"), "--properties", cfg("ack-offset.quant"), "--sul",
                   "inproc:tcp-constant-field", "--samples", "200"});
  CHECK(live.code == 5);
  CHECK(invoke({"check", "--model", path("cf.xplm"), "--properties", cfg("handshake.quant")}).code == 0);
  CHECK(invoke({"synth", "--sul", "inproc:tcp-constant-field", "--model", path("cf.plm")}).code == 2);
}
