// SPDX-License-Identifier: Apache-2.0

#include "molgen/chem/canonical.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

namespace molgen::chem {
namespace {

// Leaves explored by the tie-breaking search before falling back to the
// first candidate at each remaining branch point.
constexpr std::size_t kLeafBudget = 1024;

std::size_t count_classes(const std::vector<std::size_t>& ranks) {
  return std::set<std::size_t>(ranks.begin(), ranks.end()).size();
}

// Dense ranks of `keys` (equal keys share a rank).
template <typename Key>
std::vector<std::size_t> dense_ranks(const std::vector<Key>& keys) {
  std::vector<std::size_t> idx(keys.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  std::vector<std::size_t> ranks(keys.size());
  std::size_t r = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k > 0 && keys[idx[k - 1]] < keys[idx[k]]) ++r;
    ranks[idx[k]] = r;
  }
  return ranks;
}

std::vector<std::size_t> refine(const LabelledGraph& g, std::vector<std::size_t> ranks) {
  const std::size_t n = ranks.size();
  std::size_t classes = count_classes(ranks);
  using Key = std::pair<std::size_t, std::vector<std::pair<std::size_t, int>>>;
  std::vector<Key> keys(n);
  while (classes < n) {
    for (std::size_t i = 0; i < n; ++i) {
      keys[i].first = ranks[i];
      auto& nbrs = keys[i].second;
      nbrs.clear();
      for (const auto& [j, label] : g.adjacency[i]) nbrs.emplace_back(ranks[j], label);
      std::sort(nbrs.begin(), nbrs.end());
    }
    auto next = dense_ranks(keys);
    const std::size_t next_classes = count_classes(next);
    ranks = std::move(next);
    if (next_classes == classes) break;
    classes = next_classes;
  }
  return ranks;
}

std::vector<long> encode(const LabelledGraph& g, const std::vector<std::size_t>& ranks) {
  const std::size_t n = ranks.size();
  std::vector<std::size_t> by_rank(n);
  for (std::size_t i = 0; i < n; ++i) by_rank[ranks[i]] = i;
  std::vector<long> code;
  for (const std::size_t i : by_rank) {
    std::vector<std::pair<std::size_t, int>> nbrs;
    for (const auto& [j, label] : g.adjacency[i]) nbrs.emplace_back(ranks[j], label);
    std::sort(nbrs.begin(), nbrs.end());
    for (const auto& [r, label] : nbrs) {
      code.push_back(static_cast<long>(r));
      code.push_back(label);
    }
    code.push_back(-1);
  }
  return code;
}

struct TieBreaker {
  const LabelledGraph& graph;
  std::size_t leaves = 0;
  std::vector<long> best_code;
  std::vector<std::size_t> best_ranks;

  void search(std::vector<std::size_t> ranks) {
    ranks = refine(graph, std::move(ranks));
    const std::size_t n = ranks.size();
    std::vector<std::size_t> class_size(n, 0);
    for (const auto r : ranks) ++class_size[r];
    std::size_t target = n;
    for (std::size_t r = 0; r < n; ++r) {
      if (class_size[r] > 1) {
        target = r;
        break;
      }
    }
    if (target == n) {
      ++leaves;
      auto code = encode(graph, ranks);
      if (best_ranks.empty() || code < best_code) {
        best_code = std::move(code);
        best_ranks = std::move(ranks);
      }
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (ranks[i] != target) continue;
      std::vector<std::size_t> split(n);
      for (std::size_t j = 0; j < n; ++j) {
        split[j] = 2 * ranks[j] + (ranks[j] == target && j != i ? 1 : 0);
      }
      search(dense_ranks(split));
      if (leaves >= kLeafBudget) return;
    }
  }
};

}  // namespace

std::vector<std::size_t> canonical_ranks(const LabelledGraph& graph) {
  const std::size_t n = graph.atom_labels.size();
  if (n == 0) return {};
  TieBreaker breaker{graph, 0, {}, {}};
  breaker.search(dense_ranks(graph.atom_labels));
  return breaker.best_ranks;
}

LabelledGraph ranking_graph(const Molecule& mol) {
  LabelledGraph g;
  const std::size_t n = mol.size();
  g.atom_labels.resize(n);
  g.adjacency.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = mol.atom(i).type;
    g.atom_labels[i] = {mol.degree(i), static_cast<int>(t.element), t.charge,
                        mol.bond_order_sum(i)};
    for (std::size_t j = 0; j < n; ++j) {
      if (const auto b = mol.bond(i, j); b != BondType::kNone) {
        g.adjacency[i].emplace_back(j, bond_order(b));
      }
    }
  }
  return g;
}

std::vector<std::size_t> canonical_ranks(const Molecule& mol) {
  return canonical_ranks(ranking_graph(mol));
}

SmilesTraversal traverse(const Molecule& mol, std::span<const std::size_t> ranks) {
  const std::size_t n = mol.size();
  SmilesTraversal out;
  out.children.resize(n);
  out.ring_partners.resize(n);
  if (n == 0) return out;

  std::vector<std::vector<std::size_t>> sorted_nbrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    sorted_nbrs[i] = mol.neighbors(i);
    std::sort(sorted_nbrs[i].begin(), sorted_nbrs[i].end(),
              [&](std::size_t a, std::size_t b) { return ranks[a] < ranks[b]; });
  }
  std::vector<bool> visited(n, false);
  std::vector<std::size_t> parent(n, n);
  std::set<std::pair<std::size_t, std::size_t>> closures;

  // Iterative DFS keeping an explicit neighbour cursor per frame.
  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (ranks[i] < ranks[start]) start = i;
  }
  std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
  visited[start] = true;
  out.order.push_back(start);
  while (!stack.empty()) {
    auto& [a, cursor] = stack.back();
    if (cursor == sorted_nbrs[a].size()) {
      stack.pop_back();
      continue;
    }
    const std::size_t b = sorted_nbrs[a][cursor++];
    if (b == parent[a]) continue;
    if (visited[b]) {
      const auto key = std::minmax(a, b);
      if (closures.insert(key).second) {
        out.ring_partners[a].push_back(b);
        out.ring_partners[b].push_back(a);
      }
      continue;
    }
    visited[b] = true;
    parent[b] = a;
    out.children[a].push_back(b);
    out.order.push_back(b);
    stack.emplace_back(b, 0);
  }
  if (out.order.size() != n) {
    throw Error("cannot traverse a disconnected molecule");
  }
  return out;
}

std::vector<std::size_t> canonical_order(const Molecule& mol) {
  return traverse(mol, canonical_ranks(mol)).order;
}

Molecule canonicalize(const Molecule& mol) {
  const auto order = canonical_order(mol);
  Molecule reordered = mol.permuted(order);
  std::vector<Atom> atoms = reordered.atoms();
  std::map<AtomType, int> seen;
  for (auto& a : atoms) a.position_index = ++seen[a.type];
  return Molecule(std::move(atoms), reordered.bonds());
}

}  // namespace molgen::chem
