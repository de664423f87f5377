// SPDX-License-Identifier: Apache-2.0

#include "molgen/chem/vocabulary.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <sstream>

namespace molgen::chem {
namespace {

constexpr std::array<std::string_view, kNumElements> kSymbols = {
    "B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"};

}  // namespace

std::string_view element_symbol(Element e) {
  return kSymbols[static_cast<std::size_t>(e)];
}

std::optional<Element> element_from_symbol(std::string_view symbol) {
  for (std::size_t i = 0; i < kSymbols.size(); ++i) {
    if (kSymbols[i] == symbol) return static_cast<Element>(i);
  }
  return std::nullopt;
}

int default_valence(Element e, int charge) {
  // A cation of a group 15/16 element bonds like its left neighbour in the
  // periodic table, an anion like its right neighbour.
  int valence = 0;
  switch (e) {
    case Element::B: valence = charge == -1 ? 4 : 3 - charge; break;
    case Element::C: valence = 4 - (charge < 0 ? -charge : charge); break;
    case Element::N:
    case Element::P: valence = 3 + charge; break;
    case Element::O:
    case Element::S: valence = 2 + charge; break;
    case Element::F:
    case Element::Cl:
    case Element::Br:
    case Element::I: valence = 1 + charge; break;
  }
  return valence < 0 ? 0 : valence;
}

std::string to_string(const AtomType& t) {
  std::string out(element_symbol(t.element));
  if (t.charge > 0) out += "+" + (t.charge > 1 ? std::to_string(t.charge) : "");
  if (t.charge < 0) out += "-" + (t.charge < -1 ? std::to_string(-t.charge) : "");
  return out;
}

Vocabulary::Vocabulary(std::vector<Entry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].max_valence < 0) {
      throw Error("negative max valence for " + to_string(entries_[i].type));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (entries_[j].type == entries_[i].type) {
        throw Error("duplicate vocabulary entry " + to_string(entries_[i].type));
      }
    }
  }
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab({
      {{Element::B, 0}, 3},
      {{Element::C, 0}, 4},
      {{Element::N, 0}, 3},
      {{Element::O, 0}, 2},
      {{Element::F, 0}, 1},
      {{Element::P, 0}, 5},
      {{Element::S, 0}, 6},
      {{Element::Cl, 0}, 1},
      {{Element::Br, 0}, 1},
      {{Element::I, 0}, 1},
      {{Element::N, 1}, 4},
      {{Element::N, -1}, 2},
      {{Element::O, 1}, 3},
      {{Element::O, -1}, 1},
      {{Element::S, 1}, 3},
      {{Element::S, -1}, 1},
  });
  return vocab;
}

Vocabulary Vocabulary::parse(std::istream& in) {
  std::vector<Entry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream fields(line);
    std::string symbol;
    if (!(fields >> symbol)) continue;
    int charge = 0;
    int valence = 0;
    std::string extra;
    if (!(fields >> charge >> valence) || (fields >> extra)) {
      throw Error("vocabulary line " + std::to_string(lineno) +
                  ": expected `element charge max_valence`");
    }
    const auto element = element_from_symbol(symbol);
    if (!element) {
      throw UnknownType("vocabulary line " + std::to_string(lineno) +
                        ": unsupported element " + symbol);
    }
    entries.push_back({{*element, charge}, valence});
  }
  if (entries.empty()) throw Error("vocabulary is empty");
  return Vocabulary(std::move(entries));
}

Vocabulary Vocabulary::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary file " + path.string());
  return parse(in);
}

std::string Vocabulary::to_text() const {
  std::ostringstream out;
  for (const auto& e : entries_) {
    out << element_symbol(e.type.element) << ' ' << e.type.charge << ' '
        << e.max_valence << '\n';
  }
  return out.str();
}

std::optional<std::size_t> Vocabulary::find(const AtomType& t) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].type == t) return i;
  }
  return std::nullopt;
}

std::size_t Vocabulary::index_of(const AtomType& t) const {
  if (const auto i = find(t)) return *i;
  throw UnknownType("atom type " + to_string(t) + " is not in the vocabulary");
}

int Vocabulary::max_valence(const AtomType& t) const {
  return entries_[index_of(t)].max_valence;
}

bool operator==(const Vocabulary& a, const Vocabulary& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].type != b.entries_[i].type ||
        a.entries_[i].max_valence != b.entries_[i].max_valence) {
      return false;
    }
  }
  return true;
}

}  // namespace molgen::chem
