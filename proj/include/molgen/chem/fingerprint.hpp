// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bitset>
#include <cstddef>
#include <cstdint>
#include <span>

#include "molgen/chem/molecule.hpp"

namespace molgen::chem {

inline constexpr std::size_t kFingerprintBits = 2048;
inline constexpr int kFingerprintRadius = 2;

/// Circular (Morgan/ECFP-style) fingerprint folded to 2048 bits.
///
/// Round 0 identifies each atom by FNV-1a-64 over (element, charge, degree,
/// bond-order sum). Round r hashes (r, previous identifier, sorted list of
/// (bond order, neighbour identifier)). Every identifier from rounds 0..2 sets
/// bit `id mod 2048`. Sorting makes the result independent of atom order.
struct Fingerprint {
  std::bitset<kFingerprintBits> bits;

  std::size_t count() const { return bits.count(); }
  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

Fingerprint fingerprint(const Molecule& mol);

/// |a & b| / |a | b|; two empty fingerprints have similarity 1.
double tanimoto(const Fingerprint& a, const Fingerprint& b);
double tanimoto(const Molecule& a, const Molecule& b);

/// FNV-1a 64-bit over the little-endian bytes of each value.
std::uint64_t fnv1a(std::span<const std::int64_t> values);

}  // namespace molgen::chem
