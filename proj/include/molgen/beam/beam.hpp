// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "molgen/beam/edge_scores.hpp"
#include "molgen/chem/molecule.hpp"

namespace molgen::beam {

MOLGEN_DEFINE_ERROR(NoFeasibleEdge);
MOLGEN_DEFINE_ERROR(TooLarge);

/// Partial bond assignment built by one restart.
struct BeamState {
  BeamState() = default;
  explicit BeamState(std::vector<int> max_valence);

  std::size_t size() const { return remaining_valence.size(); }
  bool empty() const { return edge_count == 0; }
  bool is_selected(std::size_t i, std::size_t j) const { return bonds(i, j) != chem::BondType::kNone; }
  /// Records the bond. Does not check feasibility.
  void select(std::size_t i, std::size_t j, chem::BondType t);

  chem::BondMatrix bonds;
  std::vector<int> remaining_valence;
  std::vector<bool> touched;
  std::size_t edge_count = 0;
};

/// order(t) fits the remaining valence of both atoms, (i, j) is unselected,
/// and the state is empty or the pair touches a selected edge.
bool valency_feasible(const BeamState& state, std::size_t i, std::size_t j, chem::BondType t);

/// Whether the atoms can still be joined into one connected molecule: the
/// components of the selected edges must admit a spanning tree of single
/// bonds within each component's leftover valence.
bool connectable(const BeamState& state);

/// Sum over every unordered pair of log P(assigned type); unbonded pairs
/// count as None.
double assignment_log_prob(const EdgeScores& scores, const chem::BondMatrix& bonds);

enum class DecodeMode { kMaxProb, kBernoulli };

/// Property used as the candidate-selection objective; higher is better.
using PropertyFn = std::function<double(const chem::Molecule&)>;

struct BeamOptions {
  std::size_t restarts = 20;
  DecodeMode mode = DecodeMode::kMaxProb;
  /// Empty selects the edge-probability objective.
  PropertyFn property;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct DecodeResult {
  chem::Molecule molecule;
  double log_prob = 0.0;
  /// Value of the selection objective for this candidate.
  double objective = 0.0;
  std::size_t restarts_used = 0;
  /// Index of the winning restart.
  std::size_t restart = 0;
  /// Some formula atoms could not be connected and were dropped.
  bool formula_deviation = false;
};

/// Greedy valency-constrained decoding with random restarts. Throws
/// NoFeasibleEdge, InvalidScores.
DecodeResult beam_decode(const EdgeScores& scores, const chem::BagOfAtoms& boa,
                         const chem::Vocabulary& vocab, const BeamOptions& options = {});

/// Exact maximiser of assignment_log_prob over valid connected molecules
/// using every formula atom. Throws TooLarge above 5 atoms and
/// NoFeasibleEdge when no such molecule exists.
DecodeResult exhaustive_decode(const EdgeScores& scores, const chem::BagOfAtoms& boa,
                               const chem::Vocabulary& vocab);

inline constexpr std::size_t kExhaustiveLimit = 5;

}  // namespace molgen::beam
