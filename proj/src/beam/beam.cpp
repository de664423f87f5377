// SPDX-License-Identifier: Apache-2.0

#include "molgen/beam/beam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "molgen/util/parallel.hpp"
#include "molgen/util/rng.hpp"

namespace molgen::beam {

using chem::BondType;

namespace {

constexpr std::uint64_t kRestartStream = 0xBEA3;
constexpr BondType kBondKinds[] = {BondType::kSingle, BondType::kDouble, BondType::kTriple};
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Connected components of the selected edges with their pooled leftover valence.
struct Components {
  std::vector<std::size_t> of;
  std::vector<int> capacity;
};

Components components(const BeamState& state) {
  const std::size_t n = state.size();
  Components c;
  c.of.assign(n, n);
  std::vector<std::size_t> stack;
  for (std::size_t root = 0; root < n; ++root) {
    if (c.of[root] != n) continue;
    const std::size_t id = c.capacity.size();
    c.capacity.push_back(0);
    c.of[root] = id;
    stack.push_back(root);
    while (!stack.empty()) {
      const std::size_t a = stack.back();
      stack.pop_back();
      c.capacity[id] += state.remaining_valence[a];
      for (std::size_t b = 0; b < n; ++b) {
        if (c.of[b] == n && state.is_selected(a, b)) {
          c.of[b] = id;
          stack.push_back(b);
        }
      }
    }
  }
  return c;
}

// A tree over `count` components with degree bounds cap_k exists iff every
// cap_k >= 1 and sum(min(cap_k, count - 1)) >= 2 (count - 1).
bool tree_possible(std::span<const int> capacity, std::size_t count) {
  if (count <= 1) return true;
  const long need = 2L * static_cast<long>(count - 1);
  long have = 0;
  for (const int cap : capacity) {
    if (cap < 1) return false;
    have += std::min<long>(cap, static_cast<long>(count - 1));
  }
  return have >= need;
}

bool connectable_with(const Components& c, std::size_t i, std::size_t j, int order) {
  std::vector<int> capacity = c.capacity;
  const std::size_t ci = c.of[i], cj = c.of[j];
  capacity[ci] -= order;
  capacity[cj] -= order;
  if (ci != cj) {
    capacity[ci] += capacity[cj];
    capacity.erase(capacity.begin() + static_cast<std::ptrdiff_t>(cj));
  }
  return tree_possible(capacity, capacity.size());
}

struct Choice {
  BondType type = BondType::kNone;
  double prob = kNegInf;
};

class Restart {
 public:
  Restart(const EdgeScores& scores, std::vector<int> valence, bool lookahead, DecodeMode mode, Rng rng)
      : scores_(scores), state_(std::move(valence)), lookahead_(lookahead), mode_(mode), rng_(rng),
        decided_(state_.size() * state_.size(), false) {}

  BeamState run() {
    seed_edge();
    if (mode_ == DecodeMode::kMaxProb) {
      grow_greedy();
    } else {
      grow_sampled();
    }
    attach_leftovers();
    return state_;
  }

 private:
  double p(std::size_t i, std::size_t j, BondType t) const { return scores_.prob(i, j, t); }

  bool allowed(const Components& comps, std::size_t i, std::size_t j, BondType t) const {
    if (!valency_feasible(state_, i, j, t)) return false;
    return !lookahead_ || connectable_with(comps, i, j, chem::bond_order(t));
  }

  Choice best_type(const Components& comps, std::size_t i, std::size_t j) const {
    Choice best;
    for (const BondType t : kBondKinds) {
      if (allowed(comps, i, j, t) && p(i, j, t) > best.prob) best = {t, p(i, j, t)};
    }
    return best;
  }

  bool adjacent(std::size_t i, std::size_t j) const {
    return state_.empty() || state_.touched[i] || state_.touched[j];
  }

  void seed_edge() {
    const std::size_t n = state_.size();
    const Components comps = components(state_);
    std::vector<std::pair<std::size_t, std::size_t>> favoured, any;
    std::vector<BondType> favoured_type, any_type;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const Choice c = best_type(comps, i, j);
        if (c.type == BondType::kNone) continue;
        any.emplace_back(i, j);
        any_type.push_back(c.type);
        if (c.prob > p(i, j, BondType::kNone)) {
          favoured.emplace_back(i, j);
          favoured_type.push_back(c.type);
        }
      }
    }
    if (any.empty()) throw NoFeasibleEdge("no atom pair admits a bond");
    const bool use_favoured = !favoured.empty();
    const auto& pool = use_favoured ? favoured : any;
    const auto& types = use_favoured ? favoured_type : any_type;
    const std::size_t pick = uniform_index(rng_, pool.size());
    state_.select(pool[pick].first, pool[pick].second, types[pick]);
  }

  // Repeatedly adds the most probable feasible bond that beats None.
  void grow_greedy() {
    const std::size_t n = state_.size();
    for (;;) {
      const Components comps = components(state_);
      Choice best;
      std::size_t bi = 0, bj = 0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (!adjacent(i, j)) continue;
          const Choice c = best_type(comps, i, j);
          if (c.type == BondType::kNone || !(c.prob > p(i, j, BondType::kNone))) continue;
          if (c.prob > best.prob) {
            best = c;
            bi = i;
            bj = j;
          }
        }
      }
      if (best.type == BondType::kNone) return;
      state_.select(bi, bj, best.type);
    }
  }

  // Draws a pair in proportion to its best feasible type, then a type from
  // the renormalised feasible categorical including None. A None draw
  // settles the pair.
  void grow_sampled() {
    const std::size_t n = state_.size();
    struct Candidate {
      std::size_t i, j;
      double weight;
    };
    std::vector<Candidate> pool;
    for (;;) {
      const Components comps = components(state_);
      pool.clear();
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (decided_[i * n + j] || !adjacent(i, j)) continue;
          const Choice c = best_type(comps, i, j);
          if (c.type == BondType::kNone) continue;
          pool.push_back({i, j, c.prob});
          total += c.prob;
        }
      }
      if (pool.empty()) return;

      std::size_t pick = pool.size() - 1;
      if (total > 0.0) {
        double u = uniform01(rng_) * total;
        for (std::size_t c = 0; c < pool.size(); ++c) {
          if (u < pool[c].weight) {
            pick = c;
            break;
          }
          u -= pool[c].weight;
        }
      } else {
        pick = uniform_index(rng_, pool.size());
      }
      const std::size_t i = pool[pick].i, j = pool[pick].j;

      std::vector<std::pair<BondType, double>> options{{BondType::kNone, p(i, j, BondType::kNone)}};
      double mass = options[0].second;
      for (const BondType t : kBondKinds) {
        if (allowed(comps, i, j, t)) {
          options.emplace_back(t, p(i, j, t));
          mass += p(i, j, t);
        }
      }
      BondType drawn = options.back().first;
      if (mass > 0.0) {
        double u = uniform01(rng_) * mass;
        for (const auto& [t, w] : options) {
          if (u < w) {
            drawn = t;
            break;
          }
          u -= w;
        }
      }
      decided_[i * n + j] = true;
      if (drawn != BondType::kNone) state_.select(i, j, drawn);
    }
  }

  // Connects atoms no bond reached yet, most probable feasible bond first.
  void attach_leftovers() {
    const std::size_t n = state_.size();
    for (;;) {
      if (std::all_of(state_.touched.begin(), state_.touched.end(), [](bool t) { return t; })) return;
      const Components comps = components(state_);
      Choice best;
      std::size_t bi = 0, bj = 0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (state_.touched[i] == state_.touched[j]) continue;
          const Choice c = best_type(comps, i, j);
          if (c.type != BondType::kNone && c.prob > best.prob) {
            best = c;
            bi = i;
            bj = j;
          }
        }
      }
      if (best.type == BondType::kNone) return;
      state_.select(bi, bj, best.type);
    }
  }

  const EdgeScores& scores_;
  BeamState state_;
  bool lookahead_;
  DecodeMode mode_;
  Rng rng_;
  std::vector<bool> decided_;
};

struct Setup {
  std::vector<chem::AtomType> types;
  std::vector<int> valence;
};

Setup setup(const EdgeScores& scores, const chem::BagOfAtoms& boa, const chem::Vocabulary& vocab) {
  if (boa.counts.size() != vocab.size()) throw Error("formula does not match the vocabulary");
  Setup s;
  for (const chem::Atom& a : chem::expand_formula(boa, vocab)) {
    s.types.push_back(a.type);
    s.valence.push_back(vocab.max_valence(a.type));
  }
  if (s.types.size() != scores.size()) {
    throw InvalidScores("edge scores cover " + std::to_string(scores.size()) + " atoms, formula has " +
                        std::to_string(s.types.size()));
  }
  if (s.types.size() < 2) throw NoFeasibleEdge("bond decoding needs at least 2 atoms");
  return s;
}

DecodeResult finish(const EdgeScores& scores, const Setup& s, const BeamState& state) {
  DecodeResult out;
  out.log_prob = assignment_log_prob(scores, state.bonds);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state.touched[i]) kept.push_back(i);
  }
  out.formula_deviation = kept.size() != state.size();
  std::vector<chem::AtomType> types;
  chem::BondMatrix bonds(kept.size());
  for (std::size_t a = 0; a < kept.size(); ++a) {
    types.push_back(s.types[kept[a]]);
    for (std::size_t b = a + 1; b < kept.size(); ++b) bonds.set(a, b, state.bonds(kept[a], kept[b]));
  }
  out.molecule = chem::Molecule::from_graph(types, bonds);
  return out;
}

bool better(const DecodeResult& a, const DecodeResult& b) {
  if (a.formula_deviation != b.formula_deviation) return !a.formula_deviation;
  return a.objective > b.objective;
}

}  // namespace

BeamState::BeamState(std::vector<int> max_valence)
    : bonds(max_valence.size()), remaining_valence(std::move(max_valence)),
      touched(remaining_valence.size(), false) {}

void BeamState::select(std::size_t i, std::size_t j, BondType t) {
  bonds.set(i, j, t);
  remaining_valence[i] -= chem::bond_order(t);
  remaining_valence[j] -= chem::bond_order(t);
  touched[i] = touched[j] = true;
  ++edge_count;
}

bool valency_feasible(const BeamState& state, std::size_t i, std::size_t j, BondType t) {
  if (i == j || i >= state.size() || j >= state.size() || t == BondType::kNone) return false;
  if (state.is_selected(i, j)) return false;
  const int order = chem::bond_order(t);
  if (order > state.remaining_valence[i] || order > state.remaining_valence[j]) return false;
  return state.empty() || state.touched[i] || state.touched[j];
}

bool connectable(const BeamState& state) {
  const Components c = components(state);
  return tree_possible(c.capacity, c.capacity.size());
}

double assignment_log_prob(const EdgeScores& scores, const chem::BondMatrix& bonds) {
  if (bonds.size() != scores.size()) throw InvalidScores("bond matrix does not match edge scores");
  double total = 0.0;
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    for (std::size_t j = i + 1; j < bonds.size(); ++j) total += std::log(scores.prob(i, j, bonds(i, j)));
  }
  return total;
}

DecodeResult beam_decode(const EdgeScores& scores, const chem::BagOfAtoms& boa,
                         const chem::Vocabulary& vocab, const BeamOptions& options) {
  if (options.restarts == 0) throw Error("beam_decode needs at least one restart");
  const Setup s = setup(scores, boa, vocab);
  const bool lookahead = connectable(BeamState(s.valence));

  std::vector<DecodeResult> candidates(options.restarts);
  parallel_for(options.restarts, options.threads, [&](std::size_t r) {
    Restart restart(scores, s.valence, lookahead, options.mode, make_rng(options.seed, kRestartStream, r));
    DecodeResult c = finish(scores, s, restart.run());
    if (options.property) {
      c.objective = options.property(c.molecule);
      if (std::isnan(c.objective)) c.objective = kNegInf;
    } else {
      c.objective = c.log_prob;
    }
    c.restart = r;
    candidates[r] = std::move(c);
  });

  std::size_t best = 0;
  for (std::size_t r = 1; r < candidates.size(); ++r) {
    if (better(candidates[r], candidates[best])) best = r;
  }
  DecodeResult out = std::move(candidates[best]);
  out.restarts_used = options.restarts;
  return out;
}

DecodeResult exhaustive_decode(const EdgeScores& scores, const chem::BagOfAtoms& boa,
                               const chem::Vocabulary& vocab) {
  if (boa.total() > static_cast<int>(kExhaustiveLimit)) {
    throw TooLarge("exhaustive decoding is limited to " + std::to_string(kExhaustiveLimit) + " atoms");
  }
  const Setup s = setup(scores, boa, vocab);
  const std::size_t n = s.types.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }

  BeamState state(s.valence);
  double best_score = kNegInf;
  bool found = false;
  BeamState best_state;
  // Depth-first over pair assignments in row-major order, so the partial
  // sums match assignment_log_prob bit for bit.
  auto search = [&](auto&& self, std::size_t depth, double partial) -> void {
    if (depth == pairs.size()) {
      if (std::find(state.touched.begin(), state.touched.end(), false) != state.touched.end()) return;
      if (components(state).capacity.size() != 1) return;
      if (!found || partial > best_score) {
        found = true;
        best_score = partial;
        best_state = state;
      }
      return;
    }
    const auto [i, j] = pairs[depth];
    self(self, depth + 1, partial + std::log(scores.prob(i, j, BondType::kNone)));
    for (const BondType t : kBondKinds) {
      const int order = chem::bond_order(t);
      if (order > state.remaining_valence[i] || order > state.remaining_valence[j]) continue;
      const BeamState saved = state;
      state.select(i, j, t);
      self(self, depth + 1, partial + std::log(scores.prob(i, j, t)));
      state = saved;
    }
  };
  search(search, 0, 0.0);
  if (!found) throw NoFeasibleEdge("no valid connected molecule uses every formula atom");
  DecodeResult out = finish(scores, s, best_state);
  out.objective = out.log_prob;
  return out;
}

}  // namespace molgen::beam
