#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace protolearn::sat {

// Literal encoding: 2*var for the positive literal, 2*var+1 for its negation.
using Lit = int;
inline Lit pos(int v) { return 2 * v; }
inline Lit neg(int v) { return 2 * v + 1; }
inline int var_of(Lit l) { return l >> 1; }
inline Lit negate(Lit l) { return l ^ 1; }

// CDCL solver over one-hot groups of boolean variables (one group per
// finite-domain unknown). Decisions pick a group by activity and set one of
// its values true; a theory callback may reject partial assignments by
// returning a clause that is false under the current assignment.
class Solver {
public:
  enum class Result { sat, unsat, budget };
  // A conflict clause (all literals false), or clauses whose first literal
  // is implied (unassigned, every other literal false).
  struct TheoryResult {
    std::optional<std::vector<Lit>> conflict;
    std::vector<std::vector<Lit>> implied;
  };
  using Theory = std::function<TheoryResult()>;

  // `preference` lists values in the order decisions should try them.
  int add_group(int size, const std::vector<int>& preference) {
    const int g = static_cast<int>(groups_.size());
    Group grp;
    for (int k = 0; k < size; ++k) grp.vars.push_back(new_var(g, k));
    grp.preference = preference;
    for (int k = 0; k < size; ++k)
      if (std::find(preference.begin(), preference.end(), k) == preference.end()) grp.preference.push_back(k);
    groups_.push_back(grp);
    std::vector<Lit> alo;
    for (int v : groups_[g].vars) alo.push_back(pos(v));
    add_clause(alo);
    for (int a = 0; a < size; ++a)
      for (int b = a + 1; b < size; ++b) add_clause({neg(groups_[g].vars[a]), neg(groups_[g].vars[b])});
    group_activity_.push_back(0.0);
    return g;
  }

  Lit lit(int group, int value) const { return pos(groups_[group].vars[value]); }
  int num_groups() const { return static_cast<int>(groups_.size()); }
  bool is_false(Lit l) const { return value(l) == 0; }

  std::optional<int> value_of(int group) const {
    const auto& g = groups_[group];
    for (std::size_t k = 0; k < g.vars.size(); ++k)
      if (val_[g.vars[k]] == 1) return static_cast<int>(k);
    return std::nullopt;
  }

  // Level-0 clause. Returns false once the formula is known unsatisfiable.
  bool add_clause(std::vector<Lit> c) {
    if (!ok_) return false;
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    std::vector<Lit> kept;
    for (Lit l : c) {
      if (value(l) == 1) return true;
      if (value(l) == -1) kept.push_back(l);
    }
    if (kept.empty()) return ok_ = false;
    if (kept.size() == 1) {
      enqueue(kept[0], -1);
      if (propagate() >= 0) ok_ = false;
      return ok_;
    }
    attach(std::move(kept));
    return true;
  }

  // Groups whose value became true since the theory last accepted the
  // assignment, in trail order.
  std::vector<int> pending_groups() const {
    std::vector<int> out;
    for (std::size_t i = reported_; i < trail_.size(); ++i)
      if ((trail_[i] & 1) == 0) out.push_back(group_of_[var_of(trail_[i])]);
    return out;
  }

  std::size_t conflicts() const { return conflicts_; }
  std::size_t decisions() const { return decisions_; }

  Result solve(const Theory& theory, std::size_t budget) {
    if (!ok_) return Result::unsat;
    std::size_t restart_at = luby(restart_count_) * restart_unit;
    std::size_t since_restart = 0;
    for (;;) {
      const int confl = propagate();
      std::optional<std::vector<Lit>> tconf;
      if (confl < 0) {
        auto tr = theory();
        tconf = std::move(tr.conflict);
        if (!tconf) {
          reported_ = trail_.size();
          // Unconditional facts go to level 0; that invalidates the other
          // implications, which the next theory call will find again.
          std::vector<Lit> units;
          for (const auto& c : tr.implied)
            if (c.size() == 1) units.push_back(c[0]);
          if (!units.empty()) {
            cancel_until(0);
            for (Lit l : units) {
              if (value(l) == 0) return Result::unsat;
              if (value(l) == -1) enqueue(l, -1);
            }
            continue;
          }
          bool any = false;
          for (auto& c : tr.implied)
            if (value(c[0]) == -1) {
              imply(std::move(c));
              any = true;
            }
          if (any) continue;
        }
      }
      if (confl >= 0 || tconf) {
        ++conflicts_;
        ++since_restart;
        if (conflicts_ + decisions_ > budget) return Result::budget;
        std::vector<Lit> c = confl >= 0 ? clauses_[static_cast<std::size_t>(confl)] : *tconf;
        if (!resolve_conflict(c)) return Result::unsat;
        continue;
      }
      if (since_restart >= restart_at) {
        cancel_until(0);
        since_restart = 0;
        restart_at = luby(++restart_count_) * restart_unit;
        continue;
      }
      const int g = pick_group();
      if (g < 0) return Result::sat;
      ++decisions_;
      if (conflicts_ + decisions_ > budget) return Result::budget;
      trail_lim_.push_back(trail_.size());
      enqueue(pos(groups_[g].vars[static_cast<std::size_t>(pick_value(g))]), -1);
    }
  }

private:
  struct Group {
    std::vector<int> vars;
    std::vector<int> preference;
    int phase = -1;  // last value held
  };

  static constexpr std::size_t restart_unit = 64;
  static constexpr double decay = 0.95;

  std::vector<Group> groups_;
  std::vector<int> group_of_, index_in_group_;
  std::vector<double> group_activity_;
  double bump_ = 1.0;
  std::vector<std::vector<Lit>> clauses_;
  std::vector<std::vector<int>> watches_;  // per literal: clauses watching its negation becoming true
  std::vector<std::int8_t> val_;           // per var: -1 unassigned, 0 false, 1 true
  std::vector<int> level_, reason_;
  std::vector<Lit> trail_;
  std::vector<std::size_t> trail_lim_;
  std::size_t qhead_ = 0, reported_ = 0;
  std::size_t conflicts_ = 0, decisions_ = 0, restart_count_ = 0;
  std::vector<char> seen_;
  bool ok_ = true;

  static std::size_t luby(std::size_t i) {
    std::size_t size = 1, seq = 0;
    while (size < i + 1) {
      ++seq;
      size = 2 * size + 1;
    }
    while (size - 1 != i) {
      size = (size - 1) >> 1;
      --seq;
      i = i % size;
    }
    return std::size_t{1} << seq;
  }

  int new_var(int group, int index) {
    const int v = static_cast<int>(val_.size());
    val_.push_back(-1);
    level_.push_back(0);
    reason_.push_back(-1);
    seen_.push_back(0);
    group_of_.push_back(group);
    index_in_group_.push_back(index);
    watches_.emplace_back();
    watches_.emplace_back();
    return v;
  }

  int value(Lit l) const {
    const int v = val_[var_of(l)];
    if (v < 0) return -1;
    return (l & 1) ? 1 - v : v;
  }

  int decision_level() const { return static_cast<int>(trail_lim_.size()); }

  void enqueue(Lit l, int reason) {
    const int v = var_of(l);
    val_[v] = (l & 1) ? 0 : 1;
    level_[v] = decision_level();
    reason_[v] = reason;
    trail_.push_back(l);
    if (val_[v] == 1) groups_[static_cast<std::size_t>(group_of_[v])].phase = index_in_group_[v];
  }

  void imply(std::vector<Lit> c) {
    std::size_t hi = 1;
    for (std::size_t i = 2; i < c.size(); ++i)
      if (level_[var_of(c[i])] > level_[var_of(c[hi])]) hi = i;
    std::swap(c[1], c[hi]);
    const int id = attach(std::move(c));
    enqueue(clauses_[static_cast<std::size_t>(id)][0], id);
  }

  int attach(std::vector<Lit> c) {
    const int id = static_cast<int>(clauses_.size());
    watches_[negate(c[0])].push_back(id);
    watches_[negate(c[1])].push_back(id);
    clauses_.push_back(std::move(c));
    return id;
  }

  // Returns a conflicting clause id or -1.
  int propagate() {
    while (qhead_ < trail_.size()) {
      const Lit p = trail_[qhead_++];  // p became true; clauses watching ~p must move
      auto& ws = watches_[p];
      std::size_t i = 0, j = 0;
      int conflict = -1;
      while (i < ws.size()) {
        const int cid = ws[i++];
        auto& c = clauses_[static_cast<std::size_t>(cid)];
        const Lit false_lit = negate(p);
        if (c[0] == false_lit) std::swap(c[0], c[1]);
        if (value(c[0]) == 1) {
          ws[j++] = cid;
          continue;
        }
        bool moved = false;
        for (std::size_t k = 2; k < c.size(); ++k)
          if (value(c[k]) != 0) {
            std::swap(c[1], c[k]);
            watches_[negate(c[1])].push_back(cid);
            moved = true;
            break;
          }
        if (moved) continue;
        ws[j++] = cid;
        if (value(c[0]) == 0) {
          conflict = cid;
          while (i < ws.size()) ws[j++] = ws[i++];
        } else {
          enqueue(c[0], cid);
        }
      }
      ws.resize(j);
      if (conflict >= 0) return conflict;
    }
    return -1;
  }

  void cancel_until(int lvl) {
    if (decision_level() <= lvl) return;
    for (std::size_t i = trail_.size(); i-- > trail_lim_[static_cast<std::size_t>(lvl)];) {
      const int v = var_of(trail_[i]);
      val_[v] = -1;
      reason_[v] = -1;
    }
    trail_.resize(trail_lim_[static_cast<std::size_t>(lvl)]);
    trail_lim_.resize(static_cast<std::size_t>(lvl));
    qhead_ = std::min(qhead_, trail_.size());
    reported_ = std::min(reported_, trail_.size());
  }

  void bump(int v) {
    group_activity_[static_cast<std::size_t>(group_of_[v])] += bump_;
    if (group_activity_[static_cast<std::size_t>(group_of_[v])] > 1e100) {
      for (auto& a : group_activity_) a *= 1e-100;
      bump_ *= 1e-100;
    }
  }

  // First-UIP learning. `c` is false under the current assignment.
  bool resolve_conflict(std::vector<Lit> c) {
    int top = 0;
    for (Lit l : c) top = std::max(top, level_[var_of(l)]);
    if (top == 0) return ok_ = false;
    cancel_until(top);
    std::vector<Lit> learnt{0};
    int path = 0;
    std::size_t idx = trail_.size();
    Lit p = -1;
    const std::vector<Lit>* reason = &c;
    std::vector<Lit> scratch;
    for (;;) {
      for (Lit q : *reason) {
        if (p >= 0 && q == p) continue;
        const int v = var_of(q);
        if (seen_[v] || level_[v] == 0) continue;
        seen_[v] = 1;
        bump(v);
        if (level_[v] >= top) ++path;
        else learnt.push_back(q);
      }
      while (!seen_[var_of(trail_[--idx])]) {
      }
      p = trail_[idx];
      seen_[var_of(p)] = 0;
      if (--path == 0) break;
      scratch = clauses_[static_cast<std::size_t>(reason_[var_of(p)])];
      reason = &scratch;
    }
    learnt[0] = negate(p);
    for (std::size_t i = 1; i < learnt.size(); ++i) seen_[var_of(learnt[i])] = 0;
    bump_ /= decay;
    int back = 0;
    std::size_t second = 1;
    for (std::size_t i = 1; i < learnt.size(); ++i)
      if (level_[var_of(learnt[i])] > back) {
        back = level_[var_of(learnt[i])];
        second = i;
      }
    cancel_until(back);
    if (learnt.size() == 1) {
      enqueue(learnt[0], -1);
      return true;
    }
    std::swap(learnt[1], learnt[second]);
    const int id = attach(learnt);
    enqueue(clauses_[static_cast<std::size_t>(id)][0], id);
    return true;
  }

  int pick_group() const {
    int best = -1;
    for (int g = 0; g < num_groups(); ++g) {
      if (value_of(g)) continue;
      if (best < 0 || group_activity_[static_cast<std::size_t>(g)] > group_activity_[static_cast<std::size_t>(best)]) best = g;
    }
    return best;
  }

  int pick_value(int g) const {
    const auto& grp = groups_[g];
    if (grp.phase >= 0 && val_[grp.vars[static_cast<std::size_t>(grp.phase)]] != 0) return grp.phase;
    for (int k : grp.preference)
      if (val_[grp.vars[static_cast<std::size_t>(k)]] != 0) return k;
    return -1;  // unreachable: an unassigned group has a non-false value
  }
};

} // namespace protolearn::sat
