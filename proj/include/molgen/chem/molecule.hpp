// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "molgen/chem/vocabulary.hpp"

namespace molgen::chem {

MOLGEN_DEFINE_ERROR(ValenceError);

struct Atom {
  AtomType type;
  /// Rank of this atom among atoms of the same type in canonical order (1-based).
  int position_index = 1;

  friend bool operator==(const Atom&, const Atom&) = default;
};

/// Symmetric N x N matrix of bond types with an empty diagonal.
class BondMatrix {
 public:
  BondMatrix() = default;
  explicit BondMatrix(std::size_t n) : n_(n), bonds_(n * n, BondType::kNone) {}

  std::size_t size() const { return n_; }
  BondType operator()(std::size_t i, std::size_t j) const { return bonds_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, BondType b);

  friend bool operator==(const BondMatrix&, const BondMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<BondType> bonds_;
};

class Molecule {
 public:
  Molecule() = default;

  /// Keeps the given atom order. Position indices are taken as provided.
  Molecule(std::vector<Atom> atoms, BondMatrix bonds);

  /// Builds a molecule from an arbitrary-order graph: atoms are re-ordered
  /// canonically and receive their positional indices.
  static Molecule from_graph(std::span<const AtomType> types, const BondMatrix& bonds);

  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const Atom& atom(std::size_t i) const { return atoms_.at(i); }
  const BondMatrix& bonds() const { return bonds_; }
  BondType bond(std::size_t i, std::size_t j) const { return bonds_(i, j); }

  std::vector<AtomType> atom_types() const;
  int degree(std::size_t i) const;
  int bond_order_sum(std::size_t i) const;
  std::size_t num_bonds() const;
  std::vector<std::size_t> neighbors(std::size_t i) const;
  /// True for N <= 1 or when non-None bonds connect every atom.
  bool is_connected() const;

  /// Atom k of the result is atom order[k] of this molecule. Position
  /// indices travel with their atoms.
  Molecule permuted(std::span<const std::size_t> order) const;

  friend bool operator==(const Molecule&, const Molecule&) = default;

 private:
  std::vector<Atom> atoms_;
  BondMatrix bonds_;
};

/// Per-type atom counts, indexed by vocabulary type id.
struct BagOfAtoms {
  std::vector<int> counts;

  int total() const;
  friend bool operator==(const BagOfAtoms&, const BagOfAtoms&) = default;
};

/// Throws UnknownType for atoms outside the vocabulary.
BagOfAtoms bag_of_atoms(const Molecule& mol, const Vocabulary& vocab);

/// The formula's atoms in (type id, positional index) order, i.e. the node
/// order used by the bond decoder.
std::vector<Atom> expand_formula(const BagOfAtoms& boa, const Vocabulary& vocab);

/// Throws ValenceError if any atom's bond-order sum exceeds its max valence.
void check_valence(const Molecule& mol, const Vocabulary& vocab);

/// Symmetry, empty diagonal, valence, connectivity, vocabulary membership,
/// unique (type, position) pairs and N <= max_atoms.
bool satisfies_invariants(const Molecule& mol, const Vocabulary& vocab,
                          std::size_t max_atoms);

/// Number of independent cycles (bonds - atoms + 1 for a connected graph).
int ring_count(const Molecule& mol);

}  // namespace molgen::chem
