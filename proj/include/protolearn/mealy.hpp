#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protolearn/error.hpp"
#include "protolearn/symbol.hpp"

namespace protolearn {

using StateId = std::uint32_t;
using Word = std::vector<AbstractSymbol>;

// Paired input/output sequences of equal length. NIL marks "no packet".
struct Trace {
  Word inputs;
  Word outputs;

  friend bool operator==(const Trace&, const Trace&) = default;
};

inline std::string to_string(const Word& w) {
  std::string out = "[";
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? ", " : "") + w[i].to_string();
  return out + "]";
}

// Deterministic, total Mealy machine. Construction prunes unreachable states
// and renumbers the rest in breadth-first order from the initial state, so the
// state id doubles as the stable display index (s0, s1, ...). Immutable after
// construction.
class MealyMachine {
public:
  MealyMachine() = default;

  // `next` and `out` are row-major tables of size num_states * inputs.size();
  // `out` holds indices into `outputs`.
  MealyMachine(std::vector<AbstractSymbol> inputs, std::vector<AbstractSymbol> outputs, std::size_t num_states,
               StateId initial, const std::vector<StateId>& next, const std::vector<std::size_t>& out)
      : inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
    const std::size_t k = inputs_.size();
    if (k == 0) throw Error(ErrorCode::config, "Mealy machine needs a non-empty input alphabet");
    if (num_states == 0 || initial >= num_states) throw Error(ErrorCode::config, "initial state out of range");
    if (next.size() != num_states * k || out.size() != num_states * k)
      throw Error(ErrorCode::config, "transition table is not total");
    for (std::size_t i = 0; i < next.size(); ++i) {
      if (next[i] >= num_states) throw Error(ErrorCode::config, "transition target out of range");
      if (out[i] >= outputs_.size()) throw Error(ErrorCode::config, "output index out of range");
    }
    for (std::size_t i = 0; i < inputs_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (inputs_[i] == inputs_[j]) throw Error(ErrorCode::config, "duplicate input symbol " + inputs_[i].to_string());

    std::vector<std::optional<StateId>> renum(num_states);
    std::vector<StateId> order{initial};
    renum[initial] = 0;
    for (std::size_t head = 0; head < order.size(); ++head) {
      for (std::size_t a = 0; a < k; ++a) {
        StateId t = next[order[head] * k + a];
        if (!renum[t]) {
          renum[t] = static_cast<StateId>(order.size());
          order.push_back(t);
        }
      }
    }
    num_states_ = order.size();
    next_.resize(num_states_ * k);
    out_.resize(num_states_ * k);
    for (std::size_t s = 0; s < num_states_; ++s) {
      for (std::size_t a = 0; a < k; ++a) {
        next_[s * k + a] = *renum[next[order[s] * k + a]];
        out_[s * k + a] = out[order[s] * k + a];
      }
    }
  }

  std::size_t num_states() const { return num_states_; }
  std::size_t num_transitions() const { return num_states_ * inputs_.size(); }
  StateId initial() const { return 0; }
  const std::vector<AbstractSymbol>& inputs() const { return inputs_; }
  const std::vector<AbstractSymbol>& outputs() const { return outputs_; }

  StateId next(StateId s, std::size_t input) const { return next_[s * inputs_.size() + input]; }
  std::size_t output_index(StateId s, std::size_t input) const { return out_[s * inputs_.size() + input]; }
  const AbstractSymbol& output(StateId s, std::size_t input) const { return outputs_[output_index(s, input)]; }

  // Matches on the parameter-erased symbol.
  std::optional<std::size_t> input_index(const AbstractSymbol& sym) const {
    const auto e = sym.erased();
    for (std::size_t i = 0; i < inputs_.size(); ++i)
      if (inputs_[i].erased() == e) return i;
    return std::nullopt;
  }

  std::size_t require_input(const AbstractSymbol& sym) const {
    auto i = input_index(sym);
    if (!i) throw Error(ErrorCode::unknown_symbol, "input symbol " + sym.to_string() + " is not in the alphabet");
    return *i;
  }

  std::optional<std::size_t> find_output(const AbstractSymbol& sym) const {
    const auto e = sym.erased();
    for (std::size_t i = 0; i < outputs_.size(); ++i)
      if (outputs_[i].erased() == e) return i;
    return std::nullopt;
  }

  StateId walk(std::span<const std::size_t> word, StateId from = 0) const {
    for (auto a : word) from = next(from, a);
    return from;
  }

  friend bool operator==(const MealyMachine&, const MealyMachine&) = default;

private:
  std::vector<AbstractSymbol> inputs_;
  std::vector<AbstractSymbol> outputs_;
  std::size_t num_states_ = 0;
  std::vector<StateId> next_;
  std::vector<std::size_t> out_;
};

// Builds a machine from named states and printed symbols; handy for fixtures.
class MealyBuilder {
public:
  MealyBuilder(std::vector<AbstractSymbol> inputs, std::vector<AbstractSymbol> outputs)
      : inputs_(std::move(inputs)), outputs_(std::move(outputs)) {}

  StateId state(const std::string& name) {
    if (auto it = ids_.find(name); it != ids_.end()) return it->second;
    StateId id = static_cast<StateId>(names_.size());
    ids_.emplace(name, id);
    names_.push_back(name);
    next_.resize(names_.size() * inputs_.size());
    out_.resize(names_.size() * inputs_.size());
    set_.resize(names_.size() * inputs_.size(), false);
    return id;
  }

  MealyBuilder& add(const std::string& from, const std::string& input, const std::string& output,
                    const std::string& to) {
    StateId f = state(from);
    StateId t = state(to);
    std::size_t a = index_of(inputs_, input, "input");
    std::size_t o = index_of(outputs_, output, "output");
    std::size_t cell = f * inputs_.size() + a;
    next_[cell] = t;
    out_[cell] = o;
    set_[cell] = true;
    return *this;
  }

  // Fills every unset transition of `from` with a self-loop emitting `output`.
  MealyBuilder& fill(const std::string& from, const std::string& output) {
    StateId f = state(from);
    std::size_t o = index_of(outputs_, output, "output");
    for (std::size_t a = 0; a < inputs_.size(); ++a) {
      std::size_t cell = f * inputs_.size() + a;
      if (set_[cell]) continue;
      next_[cell] = f;
      out_[cell] = o;
      set_[cell] = true;
    }
    return *this;
  }

  MealyMachine build(const std::string& initial) {
    StateId init = state(initial);
    for (std::size_t c = 0; c < set_.size(); ++c)
      if (!set_[c])
        throw Error(ErrorCode::config, "state '" + names_[c / inputs_.size()] + "' has no transition on " +
                                           inputs_[c % inputs_.size()].to_string());
    return MealyMachine(inputs_, outputs_, names_.size(), init, next_, out_);
  }

  // Names of the reachable states in the order build() numbers them.
  std::vector<std::string> names_in_order(const std::string& initial) {
    std::vector<StateId> order{state(initial)};
    std::vector<bool> seen(names_.size(), false);
    seen[order[0]] = true;
    for (std::size_t h = 0; h < order.size(); ++h)
      for (std::size_t a = 0; a < inputs_.size(); ++a)
        if (StateId t = next_[order[h] * inputs_.size() + a]; !seen[t]) {
          seen[t] = true;
          order.push_back(t);
        }
    std::vector<std::string> out;
    for (auto s : order) out.push_back(names_[s]);
    return out;
  }

private:
  static std::size_t index_of(const std::vector<AbstractSymbol>& list, const std::string& label, const char* what) {
    for (std::size_t i = 0; i < list.size(); ++i)
      if (list[i].to_string() == label) return i;
    throw Error(ErrorCode::unknown_symbol, std::string("unknown ") + what + " symbol " + label);
  }

  std::vector<AbstractSymbol> inputs_;
  std::vector<AbstractSymbol> outputs_;
  std::map<std::string, StateId> ids_;
  std::vector<std::string> names_;
  std::vector<StateId> next_;
  std::vector<std::size_t> out_;
  std::vector<bool> set_;
};

inline std::vector<std::size_t> to_indices(const MealyMachine& m, std::span<const AbstractSymbol> inputs) {
  std::vector<std::size_t> idx;
  idx.reserve(inputs.size());
  for (const auto& s : inputs) idx.push_back(m.require_input(s));
  return idx;
}

inline Word run(const MealyMachine& m, std::span<const AbstractSymbol> inputs) {
  Word out;
  out.reserve(inputs.size());
  StateId s = m.initial();
  for (const auto& sym : inputs) {
    auto a = m.require_input(sym);
    out.push_back(m.output(s, a));
    s = m.next(s, a);
  }
  return out;
}

struct EquivalenceVerdict {
  bool equivalent = true;
  Trace counterexample_a;  // the distinguishing word with a's outputs
  Word outputs_b;          // b's outputs on the same word
};

// Maps each input of `a` to the corresponding input index in `b`; the two
// alphabets must coincide as sets.
inline std::vector<std::size_t> align_inputs(const MealyMachine& a, const MealyMachine& b) {
  if (a.inputs().size() != b.inputs().size())
    throw Error(ErrorCode::alphabet_mismatch, "machines have input alphabets of different sizes");
  std::vector<std::size_t> map;
  for (const auto& s : a.inputs()) {
    auto j = b.input_index(s);
    if (!j) throw Error(ErrorCode::alphabet_mismatch, "input " + s.to_string() + " missing from second machine");
    map.push_back(*j);
  }
  return map;
}

// Breadth-first search over the product machine. Symbols are expanded in a's
// declared order, so the first disagreement found is the shortest and, among
// those, lexicographically least distinguishing word.
inline EquivalenceVerdict equivalent(const MealyMachine& a, const MealyMachine& b) {
  const auto map = align_inputs(a, b);
  const std::size_t k = a.inputs().size();
  struct Node {
    StateId sa, sb;
    std::size_t parent;
    std::size_t symbol;
  };
  std::vector<Node> nodes{{a.initial(), b.initial(), SIZE_MAX, SIZE_MAX}};
  std::vector<bool> seen(a.num_states() * b.num_states(), false);
  seen[0] = true;
  for (std::size_t head = 0; head < nodes.size(); ++head) {
    const Node cur = nodes[head];
    for (std::size_t x = 0; x < k; ++x) {
      if (a.output(cur.sa, x).erased() != b.output(cur.sb, map[x]).erased()) {
        std::vector<std::size_t> word{x};
        for (std::size_t n = head; nodes[n].parent != SIZE_MAX; n = nodes[n].parent) word.push_back(nodes[n].symbol);
        std::reverse(word.begin(), word.end());
        EquivalenceVerdict v;
        v.equivalent = false;
        for (auto s : word) v.counterexample_a.inputs.push_back(a.inputs()[s]);
        v.counterexample_a.outputs = run(a, v.counterexample_a.inputs);
        v.outputs_b = run(b, v.counterexample_a.inputs);
        return v;
      }
      StateId na = a.next(cur.sa, x);
      StateId nb = b.next(cur.sb, map[x]);
      std::size_t key = na * b.num_states() + nb;
      if (!seen[key]) {
        seen[key] = true;
        nodes.push_back({na, nb, head, x});
      }
    }
  }
  return {};
}

// Number of non-empty words of length at most `max_len` over an alphabet of
// `alphabet_size` symbols. Throws on 64-bit overflow.
inline std::uint64_t count_traces(std::uint64_t alphabet_size, std::uint64_t max_len) {
  if (alphabet_size < 1 || max_len < 1) throw Error(ErrorCode::config, "count_traces needs alphabet_size, max_len >= 1");
  std::uint64_t total = 0;
  std::uint64_t power = 1;
  for (std::uint64_t i = 1; i <= max_len; ++i) {
    if (__builtin_mul_overflow(power, alphabet_size, &power) || __builtin_add_overflow(total, power, &total))
      throw Error(ErrorCode::overflow, "trace count overflows 64 bits at length " + std::to_string(i));
  }
  return total;
}

} // namespace protolearn
