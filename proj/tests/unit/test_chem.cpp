// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "molgen/chem/canonical.hpp"
#include "molgen/chem/corpus.hpp"
#include "molgen/chem/fingerprint.hpp"
#include "molgen/chem/molecule.hpp"
#include "molgen/chem/smiles.hpp"
#include "molgen/util/rng.hpp"

using namespace molgen;
using namespace molgen::chem;

namespace {

const std::string kData = MOLGEN_TEST_DATA;

Vocabulary cno_vocab() {
  return Vocabulary({{{Element::C, 0}, 4}, {{Element::N, 0}, 3}, {{Element::O, 0}, 2}});
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  return order;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

// Brute-force isomorphism over all atom bijections; the independent oracle
// for canonical-form equality on small molecules.
bool isomorphic(const Molecule& a, const Molecule& b) {
  if (a.size() != b.size()) return false;
  std::vector<std::size_t> p(a.size());
  std::iota(p.begin(), p.end(), 0);
  do {
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      ok = a.atom(i).type == b.atom(p[i]).type;
      for (std::size_t j = 0; j < a.size() && ok; ++j) ok = a.bond(i, j) == b.bond(p[i], p[j]);
    }
    if (ok) return true;
  } while (std::next_permutation(p.begin(), p.end()));
  return false;
}

std::vector<std::string> corpus_smiles() {
  std::ifstream in(kData + "/toy100.smi");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

int count_bonds(const Molecule& mol, BondType t) {
  int n = 0;
  for (std::size_t i = 0; i < mol.size(); ++i) {
    for (std::size_t j = i + 1; j < mol.size(); ++j) n += mol.bond(i, j) == t;
  }
  return n;
}

}  // namespace

TEST_CASE("vocabulary valence table") {
  const Vocabulary& v = Vocabulary::standard();
  CHECK(v.max_valence({Element::C, 0}) == 4);
  CHECK(v.max_valence({Element::O, 0}) == 2);
  CHECK(v.max_valence({Element::N, 1}) == 4);
  CHECK(v.max_valence({Element::O, -1}) == 1);
  CHECK(v.max_valence({Element::B, 0}) == 3);
  CHECK(v.max_valence({Element::P, 0}) == 5);
  CHECK(v.max_valence({Element::S, 0}) == 6);
  for (const Element e : {Element::F, Element::Cl, Element::Br, Element::I}) CHECK(v.max_valence({e, 0}) == 1);
  CHECK_THROWS_AS(v.max_valence({Element::C, 2}), UnknownType);
  CHECK_THROWS_AS(v.index_of({Element::F, -1}), UnknownType);
}

TEST_CASE("vocabulary text round trip and validation") {
  const Vocabulary& v = Vocabulary::standard();
  std::istringstream in(v.to_text());
  CHECK(Vocabulary::parse(in) == v);

  std::istringstream custom("# comment\nC 0 4\n\nN 1 4  # charged\n");
  const Vocabulary parsed = Vocabulary::parse(custom);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed.type(1) == AtomType{Element::N, 1});

  std::istringstream dup("C 0 4\nC 0 3\n");
  CHECK_THROWS(Vocabulary::parse(dup));
  std::istringstream bad("Xx 0 4\n");
  CHECK_THROWS(Vocabulary::parse(bad));
}

TEST_CASE("parse_smiles examples") {
  const Molecule co2 = parse_smiles("O=C=O");
  REQUIRE(co2.size() == 3);
  CHECK(count_bonds(co2, BondType::kDouble) == 2);
  CHECK(co2.num_bonds() == 2);

  const Molecule methane = parse_smiles("C");
  CHECK(methane.size() == 1);
  CHECK(methane.num_bonds() == 0);

  const Molecule benzene = parse_smiles("c1ccccc1");
  CHECK(benzene.size() == 6);
  CHECK(count_bonds(benzene, BondType::kSingle) == 3);
  CHECK(count_bonds(benzene, BondType::kDouble) == 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(benzene.bond_order_sum(i) == 3);
}

TEST_CASE("parse_smiles errors") {
  try {
    parse_smiles("CC(C");
    FAIL("expected a syntax error");
  } catch (const SmilesSyntaxError& e) {
    CHECK(e.position() <= 4);
  }
  CHECK_THROWS_AS(parse_smiles("C1CC"), SmilesSyntaxError);
  CHECK_THROWS_AS(parse_smiles("C)C"), SmilesSyntaxError);
  CHECK_THROWS_AS(parse_smiles(""), SmilesSyntaxError);
  CHECK_THROWS_AS(parse_smiles("C=1CC-1"), SmilesSyntaxError);
  CHECK_THROWS_AS(parse_smiles("[13CH4]"), UnsupportedFeature);
  CHECK_THROWS_AS(parse_smiles("C/C=C/C"), UnsupportedFeature);
  CHECK_THROWS_AS(parse_smiles("N[C@@H](C)O"), UnsupportedFeature);
  CHECK_THROWS_AS(parse_smiles("[H]C"), UnsupportedFeature);
  CHECK_THROWS_AS(parse_smiles("CC.O"), UnsupportedFeature);
  CHECK_THROWS_AS(parse_smiles("[Na+]"), UnsupportedFeature);
  CHECK_THROWS_AS(parse_smiles("C(C)(C)(C)(C)C"), ValenceError);
  CHECK_THROWS_AS(parse_smiles("O=O=O"), ValenceError);
  CHECK_THROWS_AS(parse_smiles("c1cccc1"), KekulizationError);
}

TEST_CASE("write_smiles examples and fixed point") {
  CHECK(write_smiles(parse_smiles("O=C=O")) == "O=C=O");
  CHECK(write_smiles(parse_smiles("C")) == "C");
  CHECK(write_smiles(parse_smiles("OCC")) == write_smiles(parse_smiles("CCO")));
  const std::string charged = canonical_smiles("C[N+](C)(C)C");
  CHECK(charged.find("[N+]") != std::string::npos);
  CHECK(canonical_smiles(charged) == charged);
  CHECK(canonical_smiles("CC(=O)[O-]") == canonical_smiles("[O-]C(C)=O"));
}

TEST_CASE("bag_of_atoms examples") {
  const Vocabulary v = cno_vocab();
  CHECK(bag_of_atoms(parse_smiles("OC(=O)O", v), v).counts == std::vector<int>{1, 0, 3});
  CHECK(bag_of_atoms(parse_smiles("N#N", v), v).counts == std::vector<int>{0, 2, 0});
  CHECK(bag_of_atoms(parse_smiles("O=C=O", v), v).counts == std::vector<int>{1, 0, 2});
  CHECK_THROWS_AS(bag_of_atoms(parse_smiles("CCl"), v), UnknownType);
}

TEST_CASE("positional indices") {
  const Molecule co2 = parse_smiles("O=C=O");
  std::map<std::string, std::vector<int>> positions;
  for (const Atom& a : co2.atoms()) positions[to_string(a.type)].push_back(a.position_index);
  for (auto& [_, p] : positions) std::sort(p.begin(), p.end());
  CHECK(positions["C"] == std::vector<int>{1});
  CHECK(positions["O"] == std::vector<int>{1, 2});

  // A Cl2O6-like graph needs chlorine in a high-valence state.
  const Vocabulary hv({{{Element::O, 0}, 2}, {{Element::Cl, 0}, 7}});
  const Molecule cl2o6 = parse_smiles("O=Cl(=O)(=O)OCl(=O)=O", hv);
  REQUIRE(cl2o6.size() == 8);
  std::vector<std::pair<std::string, int>> labels;
  for (const Atom& a : cl2o6.atoms()) labels.emplace_back(to_string(a.type), a.position_index);
  std::sort(labels.begin(), labels.end());
  const std::vector<std::pair<std::string, int>> expect{{"Cl", 1}, {"Cl", 2}, {"O", 1}, {"O", 2},
                                                        {"O", 3},  {"O", 4},  {"O", 5}, {"O", 6}};
  CHECK(labels == expect);
}

TEST_CASE("canonical order is invariant to input permutation") {
  Rng rng = make_rng(5, 0);
  for (const std::string& smiles : corpus_smiles()) {
    const Molecule mol = parse_smiles(smiles);
    const std::string canonical = write_smiles(mol);
    for (int trial = 0; trial < 100; ++trial) {
      const Molecule shuffled = mol.permuted(random_permutation(mol.size(), rng));
      const Molecule again = canonicalize(shuffled);
      REQUIRE(again.atoms() == mol.atoms());
      REQUIRE(write_smiles(again) == canonical);
    }
  }
}

TEST_CASE("corpus round trip: parse, write, parse") {
  for (const std::string& smiles : corpus_smiles()) {
    const Molecule first = parse_smiles(smiles);
    const std::string written = write_smiles(first);
    const Molecule second = parse_smiles(written);
    CHECK_MESSAGE(second == first, smiles);
    CHECK_MESSAGE(write_smiles(second) == written, smiles);
    CHECK(satisfies_invariants(first, Vocabulary::standard(), 38));
  }
}

TEST_CASE("corpus agrees with the external toolkit reference") {
  std::ifstream in(kData + "/toy100_reference.tsv");
  REQUIRE(in.good());
  const Vocabulary& v = Vocabulary::standard();
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    REQUIRE(f.size() == 6);
    const Molecule mol = parse_smiles(f[0]);
    CHECK_MESSAGE(mol.size() == std::stoul(f[1]), f[0]);
    CHECK_MESSAGE(mol.num_bonds() == std::stoul(f[2]), f[0]);
    int order_sum = 0;
    for (std::size_t i = 0; i < mol.size(); ++i) order_sum += mol.bond_order_sum(i);
    CHECK_MESSAGE(order_sum / 2 == std::stoi(f[3]), f[0]);
    CHECK_MESSAGE(ring_count(mol) == std::stoi(f[4]), f[0]);

    std::map<std::string, int> counts;
    const BagOfAtoms boa = bag_of_atoms(mol, v);
    CHECK(boa.total() == static_cast<int>(mol.size()));
    for (std::size_t t = 0; t < v.size(); ++t) {
      if (boa.counts[t] == 0) continue;
      const AtomType& type = v.type(t);
      std::string key(element_symbol(type.element));
      key += type.charge >= 0 ? "+" : "-";
      key += std::to_string(std::abs(type.charge));
      counts[key] = boa.counts[t];
    }
    std::string formula;
    for (const auto& [key, n] : counts) formula += (formula.empty() ? "" : ",") + key + ":" + std::to_string(n);
    CHECK_MESSAGE(formula == f[5], f[0]);
    ++rows;
  }
  CHECK(rows == 100);
}

TEST_CASE("independent writings of a molecule share one canonical form") {
  std::ifstream in(kData + "/toy100_permuted.tsv");
  REQUIRE(in.good());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    const std::string canonical = canonical_smiles(f[0]);
    for (std::size_t i = 1; i < f.size(); ++i) CHECK_MESSAGE(canonical_smiles(f[i]) == canonical, f[i]);
  }
}

TEST_CASE("canonical equality coincides with brute-force isomorphism") {
  std::vector<Molecule> small;
  for (const std::string& s : corpus_smiles()) {
    Molecule m = parse_smiles(s);
    if (m.size() <= 7) small.push_back(std::move(m));
  }
  // Add tricky near-isomers with identical formulas and degree sequences.
  for (const char* s : {"CC1CC1C", "CCC1CC1", "C1CCC1C", "CC(C)CC", "CCCCC", "OCC=CC", "OC=CCC", "C1CC2CC12"}) {
    small.push_back(parse_smiles(s));
  }
  for (std::size_t a = 0; a < small.size(); ++a) {
    for (std::size_t b = a; b < small.size(); ++b) {
      if (small[a].size() != small[b].size()) continue;
      const bool same = write_smiles(small[a]) == write_smiles(small[b]);
      CHECK(same == isomorphic(small[a], small[b]));
    }
  }
}

TEST_CASE("molecule helpers") {
  const Molecule m = parse_smiles("C1CC1C(=O)O");
  CHECK(ring_count(m) == 1);
  CHECK(m.is_connected());
  const std::vector<Atom> nodes = expand_formula(bag_of_atoms(m, Vocabulary::standard()), Vocabulary::standard());
  REQUIRE(nodes.size() == m.size());
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const auto ti = Vocabulary::standard().index_of(nodes[i].type);
    const auto tp = Vocabulary::standard().index_of(nodes[i - 1].type);
    CHECK((tp < ti || (tp == ti && nodes[i - 1].position_index + 1 == nodes[i].position_index)));
  }
  BondMatrix b(2);
  b.set(0, 1, BondType::kDouble);
  CHECK(b(1, 0) == BondType::kDouble);
  const Molecule bad({{{Element::O, 0}, 1}, {{Element::O, 0}, 2}}, BondMatrix(2));
  CHECK_FALSE(bad.is_connected());
  CHECK_FALSE(satisfies_invariants(bad, Vocabulary::standard(), 38));
}

TEST_CASE("fnv1a reference vectors") {
  CHECK(fnv1a({}) == 0xcbf29ce484222325ULL);
  const std::int64_t one[] = {1};
  CHECK(fnv1a(one) == 0x89cd31291d2aefa4ULL);
  const std::int64_t two[] = {-1, 42};
  CHECK(fnv1a(two) == 0xded3ccdec9e430f7ULL);
}

TEST_CASE("tanimoto properties") {
  const Molecule ethanol = parse_smiles("CCO");
  const Molecule propane = parse_smiles("CCC");
  CHECK(tanimoto(ethanol, ethanol) == 1.0);
  CHECK(tanimoto(ethanol, propane) == tanimoto(propane, ethanol));
  CHECK(tanimoto(Molecule{}, Molecule{}) == 1.0);
  CHECK(tanimoto(parse_smiles("C"), parse_smiles("O")) == 0.0);

  // Golden value for this fingerprint definition, pinned from the first run.
  CHECK(tanimoto(ethanol, propane) == 0.25);

  Rng rng = make_rng(9, 0);
  const Molecule ring = parse_smiles("Cc1ccc(O)cc1");
  const Fingerprint fp = fingerprint(ring);
  for (int t = 0; t < 20; ++t) {
    CHECK(fingerprint(ring.permuted(random_permutation(ring.size(), rng))) == fp);
  }
  const auto corpus = corpus_smiles();
  for (std::size_t i = 0; i + 1 < corpus.size(); i += 7) {
    const double s = tanimoto(parse_smiles(corpus[i]), parse_smiles(corpus[i + 1]));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("corpus reader skips and logs bad lines") {
  std::istringstream in("# header\nCCO ethanol\n\nC[C@H](O)N\nXYZ\nc1ccccc1\n");
  std::ostringstream log;
  const Corpus c = read_corpus(in, Vocabulary::standard(), &log);
  REQUIRE(c.entries.size() == 2);
  CHECK(c.entries[0].line == 2);
  CHECK(c.entries[1].smiles == "c1ccccc1");
  REQUIRE(c.skipped.size() == 2);
  CHECK(c.skipped[0].line == 4);
  CHECK(log.str().find("line 4") != std::string::npos);
  CHECK_THROWS(read_corpus(std::filesystem::path("/nonexistent/corpus.smi")));
  CHECK(read_corpus(std::filesystem::path(kData + "/toy100.smi")).entries.size() == 100);
}
