// SPDX-License-Identifier: Apache-2.0

#include "molgen/chem/fingerprint.hpp"

#include <algorithm>
#include <utility>
#include <vector>

namespace molgen::chem {

std::uint64_t fnv1a(std::span<const std::int64_t> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::int64_t v : values) {
    auto u = static_cast<std::uint64_t>(v);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (u >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Fingerprint fingerprint(const Molecule& mol) {
  const std::size_t n = mol.size();
  Fingerprint fp;
  std::vector<std::uint64_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = mol.atom(i).type;
    const std::int64_t init[] = {static_cast<std::int64_t>(t.element), t.charge,
                                 mol.degree(i), mol.bond_order_sum(i)};
    ids[i] = fnv1a(init);
    fp.bits.set(ids[i] % kFingerprintBits);
  }
  std::vector<std::uint64_t> next(n);
  for (int round = 1; round <= kFingerprintRadius; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<int, std::uint64_t>> env;
      for (std::size_t j = 0; j < n; ++j) {
        if (const auto b = mol.bond(i, j); b != BondType::kNone) {
          env.emplace_back(bond_order(b), ids[j]);
        }
      }
      std::sort(env.begin(), env.end());
      std::vector<std::int64_t> key{round, static_cast<std::int64_t>(ids[i])};
      for (const auto& [order, id] : env) {
        key.push_back(order);
        key.push_back(static_cast<std::int64_t>(id));
      }
      next[i] = fnv1a(key);
      fp.bits.set(next[i] % kFingerprintBits);
    }
    std::swap(ids, next);
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  const std::size_t uni = (a.bits | b.bits).count();
  if (uni == 0) return 1.0;
  return static_cast<double>((a.bits & b.bits).count()) / static_cast<double>(uni);
}

double tanimoto(const Molecule& a, const Molecule& b) {
  return tanimoto(fingerprint(a), fingerprint(b));
}

}  // namespace molgen::chem
