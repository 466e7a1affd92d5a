#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/mealy.hpp"

namespace protolearn {

// How a register obtains its value at the start of a trace. `zero` registers
// start at 0; `free` registers start at a per-trace unknown (a session-chosen
// value such as a peer's initial sequence number).
enum class InitPolicy { zero, free };

struct RegisterDecl {
  std::string name;
  InitPolicy init = InitPolicy::zero;

  friend bool operator==(const RegisterDecl&, const RegisterDecl&) = default;
};

// `register + offset` or `input parameter + offset`.
struct Term {
  enum class Kind { reg, param };
  Kind kind = Kind::reg;
  std::size_t index = 0;
  int offset = 0;

  static Term reg(std::size_t i, int off = 0) { return {Kind::reg, i, off}; }
  static Term param(std::size_t i, int off = 0) { return {Kind::param, i, off}; }

  friend bool operator==(const Term&, const Term&) = default;
};

// Offsets admitted by a machine's term grammar.
struct TermRules {
  int max_register_offset = 1;
  int max_param_offset = 0;
  bool outputs_may_read_params = false;

  friend bool operator==(const TermRules&, const TermRules&) = default;
};

// Mealy machine whose transitions update registers and instantiate output
// parameters. Register updates are simultaneous; output terms read the
// post-update register values.
class ExtendedMealyMachine {
public:
  ExtendedMealyMachine() = default;

  ExtendedMealyMachine(MealyMachine skeleton, std::vector<RegisterDecl> registers, std::vector<std::string> params,
                       std::vector<std::vector<Term>> updates, std::vector<std::vector<Term>> output_terms,
                       TermRules rules = {})
      : skeleton_(std::move(skeleton)),
        registers_(std::move(registers)),
        params_(std::move(params)),
        updates_(std::move(updates)),
        output_terms_(std::move(output_terms)),
        rules_(rules) {
    validate();
  }

  const MealyMachine& skeleton() const { return skeleton_; }
  const std::vector<RegisterDecl>& registers() const { return registers_; }
  const std::vector<std::string>& params() const { return params_; }
  const TermRules& rules() const { return rules_; }

  std::size_t transition(StateId s, std::size_t input) const { return s * skeleton_.inputs().size() + input; }
  const std::vector<Term>& updates(std::size_t t) const { return updates_[t]; }
  const std::vector<Term>& output_terms(std::size_t t) const { return output_terms_[t]; }

  // Parameter count carried by an output symbol (NIL carries none).
  static std::size_t arity(const AbstractSymbol& s) { return s.params.size(); }

  std::optional<std::size_t> register_index(std::string_view name) const {
    for (std::size_t i = 0; i < registers_.size(); ++i)
      if (registers_[i].name == name) return i;
    return std::nullopt;
  }

  std::string term_to_string(const Term& t) const {
    std::string base = t.kind == Term::Kind::reg ? registers_.at(t.index).name : params_.at(t.index);
    if (t.offset > 0) return base + "+" + std::to_string(t.offset);
    if (t.offset < 0) return base + std::to_string(t.offset);
    return base;
  }

  friend bool operator==(const ExtendedMealyMachine&, const ExtendedMealyMachine&) = default;

private:
  void validate() const {
    const std::size_t n = skeleton_.num_transitions();
    if (updates_.size() != n || output_terms_.size() != n)
      throw Error(ErrorCode::config, "extended machine needs terms for all " + std::to_string(n) + " transitions");
    for (std::size_t t = 0; t < n; ++t) {
      const StateId s = static_cast<StateId>(t / skeleton_.inputs().size());
      const std::size_t a = t % skeleton_.inputs().size();
      if (updates_[t].size() != registers_.size())
        throw Error(ErrorCode::config, "transition " + std::to_string(t) + " needs one update per register");
      for (const auto& u : updates_[t]) check(u, true);
      if (output_terms_[t].size() != arity(skeleton_.output(s, a)))
        throw Error(ErrorCode::config, "transition " + std::to_string(t) + " output term count mismatch");
      for (const auto& o : output_terms_[t]) check(o, false);
    }
  }

  void check(const Term& t, bool update) const {
    if (t.kind == Term::Kind::reg) {
      if (t.index >= registers_.size()) throw Error(ErrorCode::config, "term names an unknown register");
      if (t.offset < 0 || t.offset > rules_.max_register_offset)
        throw Error(ErrorCode::config, "register offset " + std::to_string(t.offset) + " outside the term grammar");
    } else {
      if (!update && !rules_.outputs_may_read_params)
        throw Error(ErrorCode::config, "output terms may only read registers");
      if (t.index >= params_.size()) throw Error(ErrorCode::config, "term names an unknown input parameter");
      if (t.offset < 0 || t.offset > rules_.max_param_offset)
        throw Error(ErrorCode::config, "parameter offset " + std::to_string(t.offset) + " outside the term grammar");
    }
  }

  MealyMachine skeleton_;
  std::vector<RegisterDecl> registers_;
  std::vector<std::string> params_;
  std::vector<std::vector<Term>> updates_;
  std::vector<std::vector<Term>> output_terms_;
  TermRules rules_;
};

// Steps an extended machine one input at a time; keeps the register file.
class ExtendedRunner {
public:
  ExtendedRunner(const ExtendedMealyMachine& m, const std::map<std::string, Value>& initial_registers = {})
      : m_(&m), regs_(m.registers().size(), 0) {
    for (const auto& [name, v] : initial_registers) {
      auto i = m.register_index(name);
      if (!i) throw Error(ErrorCode::config, "unknown register '" + name + "'");
      regs_[*i] = v;
    }
  }

  AbstractSymbol step(const AbstractSymbol& input) {
    const auto& sk = m_->skeleton();
    const std::size_t a = sk.require_input(input);
    if (input.params.size() != m_->params().size())
      throw Error(ErrorCode::unknown_symbol, "input " + input.to_string() + " has the wrong parameter count");
    const std::size_t t = m_->transition(state_, a);
    std::vector<Value> next(regs_.size());
    for (std::size_t r = 0; r < regs_.size(); ++r) next[r] = eval(m_->updates(t)[r], input);
    regs_ = std::move(next);
    AbstractSymbol out = sk.output(state_, a);
    for (std::size_t p = 0; p < out.params.size(); ++p) out.params[p] = eval(m_->output_terms(t)[p], input);
    state_ = sk.next(state_, a);
    return out;
  }

  StateId state() const { return state_; }
  const std::vector<Value>& registers() const { return regs_; }

private:
  Value eval(const Term& t, const AbstractSymbol& input) const {
    if (t.kind == Term::Kind::reg) return regs_[t.index] + t.offset;
    const auto& p = input.params[t.index];
    if (!p) throw Error(ErrorCode::config, "input " + input.to_string() + " lacks a concrete value for parameter " +
                                               m_->params()[t.index]);
    return *p + t.offset;
  }

  const ExtendedMealyMachine* m_;
  StateId state_ = 0;
  std::vector<Value> regs_;
};

// Runs the machine on parameterized inputs. Registers absent from
// `initial_registers` start at 0.
inline Word run_extended(const ExtendedMealyMachine& m, std::span<const AbstractSymbol> inputs,
                         const std::map<std::string, Value>& initial_registers = {}) {
  ExtendedRunner r(m, initial_registers);
  Word out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(r.step(in));
  return out;
}

} // namespace protolearn
