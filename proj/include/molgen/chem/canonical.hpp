// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "molgen/chem/molecule.hpp"

namespace molgen::chem {

/// Generic vertex- and edge-labelled graph fed to the ranker. The parser
/// also ranks aromatic graphs before kekulization, which is why this is not
/// tied to Molecule.
struct LabelledGraph {
  std::vector<std::vector<int>> atom_labels;
  /// adjacency[i] = (neighbour, bond label) pairs.
  std::vector<std::vector<std::pair<std::size_t, int>>> adjacency;
};

/// Morgan-style ranking: iterative refinement of atom invariants followed by
/// tie-breaking search. The returned ranks are a permutation of 0..N-1 and
/// depend only on the isomorphism class of the graph (up to automorphism).
std::vector<std::size_t> canonical_ranks(const LabelledGraph& graph);

LabelledGraph ranking_graph(const Molecule& mol);

std::vector<std::size_t> canonical_ranks(const Molecule& mol);

/// Depth-first layout shared by the SMILES writer and the canonical order.
struct SmilesTraversal {
  /// Atoms in the order they appear in the SMILES string.
  std::vector<std::size_t> order;
  /// Tree children of each atom, in emission order.
  std::vector<std::vector<std::size_t>> children;
  /// Ring-closure partners of each atom, in the order their digits are written.
  std::vector<std::vector<std::size_t>> ring_partners;
};

SmilesTraversal traverse(const Molecule& mol, std::span<const std::size_t> ranks);

/// Atom indices in canonical order: the order in which atoms appear in the
/// canonical SMILES. Invariant to the input atom order.
std::vector<std::size_t> canonical_order(const Molecule& mol);

/// Re-orders atoms canonically and assigns positional indices.
Molecule canonicalize(const Molecule& mol);

}  // namespace molgen::chem
