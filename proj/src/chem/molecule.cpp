// SPDX-License-Identifier: Apache-2.0

#include "molgen/chem/molecule.hpp"

#include <numeric>
#include <set>
#include <utility>

#include "molgen/chem/canonical.hpp"

namespace molgen::chem {

void BondMatrix::set(std::size_t i, std::size_t j, BondType b) {
  if (i >= n_ || j >= n_) throw Error("bond index out of range");
  if (i == j && b != BondType::kNone) throw Error("self bond");
  bonds_[i * n_ + j] = b;
  bonds_[j * n_ + i] = b;
}

Molecule::Molecule(std::vector<Atom> atoms, BondMatrix bonds)
    : atoms_(std::move(atoms)), bonds_(std::move(bonds)) {
  if (bonds_.size() != atoms_.size()) {
    throw Error("bond matrix size does not match atom count");
  }
}

Molecule Molecule::from_graph(std::span<const AtomType> types, const BondMatrix& bonds) {
  std::vector<Atom> atoms;
  atoms.reserve(types.size());
  for (const auto& t : types) atoms.push_back({t, 1});
  return canonicalize(Molecule(std::move(atoms), bonds));
}

std::vector<AtomType> Molecule::atom_types() const {
  std::vector<AtomType> out;
  out.reserve(atoms_.size());
  for (const auto& a : atoms_) out.push_back(a.type);
  return out;
}

int Molecule::degree(std::size_t i) const {
  int d = 0;
  for (std::size_t j = 0; j < size(); ++j) d += bonds_(i, j) != BondType::kNone;
  return d;
}

int Molecule::bond_order_sum(std::size_t i) const {
  int s = 0;
  for (std::size_t j = 0; j < size(); ++j) s += bond_order(bonds_(i, j));
  return s;
}

std::size_t Molecule::num_bonds() const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = i + 1; j < size(); ++j) count += bonds_(i, j) != BondType::kNone;
  }
  return count;
}

std::vector<std::size_t> Molecule::neighbors(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < size(); ++j) {
    if (bonds_(i, j) != BondType::kNone) out.push_back(j);
  }
  return out;
}

bool Molecule::is_connected() const {
  if (size() <= 1) return true;
  std::vector<bool> seen(size(), false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const std::size_t a = stack.back();
    stack.pop_back();
    for (std::size_t b = 0; b < size(); ++b) {
      if (!seen[b] && bonds_(a, b) != BondType::kNone) {
        seen[b] = true;
        ++reached;
        stack.push_back(b);
      }
    }
  }
  return reached == size();
}

Molecule Molecule::permuted(std::span<const std::size_t> order) const {
  if (order.size() != size()) throw Error("permutation size mismatch");
  std::vector<Atom> atoms;
  atoms.reserve(size());
  for (const std::size_t k : order) atoms.push_back(atoms_.at(k));
  BondMatrix bonds(size());
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = i + 1; j < size(); ++j) bonds.set(i, j, bonds_(order[i], order[j]));
  }
  return Molecule(std::move(atoms), std::move(bonds));
}

int BagOfAtoms::total() const { return std::accumulate(counts.begin(), counts.end(), 0); }

BagOfAtoms bag_of_atoms(const Molecule& mol, const Vocabulary& vocab) {
  BagOfAtoms boa{std::vector<int>(vocab.size(), 0)};
  for (const auto& a : mol.atoms()) ++boa.counts[vocab.index_of(a.type)];
  return boa;
}

std::vector<Atom> expand_formula(const BagOfAtoms& boa, const Vocabulary& vocab) {
  if (boa.counts.size() != vocab.size()) {
    throw Error("formula length does not match vocabulary size");
  }
  std::vector<Atom> atoms;
  for (std::size_t t = 0; t < boa.counts.size(); ++t) {
    for (int p = 1; p <= boa.counts[t]; ++p) atoms.push_back({vocab.type(t), p});
  }
  return atoms;
}

void check_valence(const Molecule& mol, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < mol.size(); ++i) {
    const int limit = vocab.max_valence(mol.atom(i).type);
    const int used = mol.bond_order_sum(i);
    if (used > limit) {
      throw ValenceError("atom " + std::to_string(i) + " (" +
                         to_string(mol.atom(i).type) + ") has bond order sum " +
                         std::to_string(used) + " > max valence " +
                         std::to_string(limit));
    }
  }
}

bool satisfies_invariants(const Molecule& mol, const Vocabulary& vocab,
                          std::size_t max_atoms) {
  if (mol.empty() || mol.size() > max_atoms) return false;
  const auto& b = mol.bonds();
  std::set<std::pair<AtomType, int>> seen;
  for (std::size_t i = 0; i < mol.size(); ++i) {
    if (b(i, i) != BondType::kNone) return false;
    for (std::size_t j = 0; j < mol.size(); ++j) {
      if (b(i, j) != b(j, i)) return false;
    }
    const auto& atom = mol.atom(i);
    const auto t = vocab.find(atom.type);
    if (!t) return false;
    if (mol.bond_order_sum(i) > vocab.entry(*t).max_valence) return false;
    if (atom.position_index < 1) return false;
    if (!seen.insert({atom.type, atom.position_index}).second) return false;
  }
  return mol.is_connected();
}

int ring_count(const Molecule& mol) {
  if (mol.empty()) return 0;
  // Components: count them so disconnected inputs are still handled.
  std::vector<int> comp(mol.size(), -1);
  int components = 0;
  for (std::size_t s = 0; s < mol.size(); ++s) {
    if (comp[s] >= 0) continue;
    std::vector<std::size_t> stack{s};
    comp[s] = components;
    while (!stack.empty()) {
      const auto a = stack.back();
      stack.pop_back();
      for (const auto b : mol.neighbors(a)) {
        if (comp[b] < 0) {
          comp[b] = components;
          stack.push_back(b);
        }
      }
    }
    ++components;
  }
  return static_cast<int>(mol.num_bonds()) - static_cast<int>(mol.size()) + components;
}

}  // namespace molgen::chem
