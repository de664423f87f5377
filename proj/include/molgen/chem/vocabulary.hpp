// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "molgen/error.hpp"

namespace molgen::chem {

MOLGEN_DEFINE_ERROR(UnknownType);

/// Heavy elements handled by the model. Hydrogen is always implicit.
enum class Element : std::uint8_t { B, C, N, O, F, P, S, Cl, Br, I };

inline constexpr std::size_t kNumElements = 10;

std::string_view element_symbol(Element e);
std::optional<Element> element_from_symbol(std::string_view symbol);

/// Typical (lowest) valence used to decide which aromatic atoms need a
/// double bond during kekulization.
int default_valence(Element e, int charge);

struct AtomType {
  Element element = Element::C;
  int charge = 0;

  friend auto operator<=>(const AtomType&, const AtomType&) = default;
};

std::string to_string(const AtomType& t);

enum class BondType : std::uint8_t { kNone = 0, kSingle = 1, kDouble = 2, kTriple = 3 };

inline constexpr std::size_t kNumBondTypes = 4;

constexpr int bond_order(BondType b) { return static_cast<int>(b); }

inline BondType bond_from_order(int order) {
  if (order < 0 || order > 3) throw Error("bond order out of range");
  return static_cast<BondType>(order);
}

/// The atom-type table of a model: each (element, charge) entry with its
/// maximum bond-order sum. The index of an entry is its model-level type id.
class Vocabulary {
 public:
  struct Entry {
    AtomType type;
    int max_valence = 0;
  };

  Vocabulary() = default;
  explicit Vocabulary(std::vector<Entry> entries);

  /// B, C, N, O, F, P, S, Cl, Br, I plus the charged forms common in ZINC.
  static const Vocabulary& standard();

  /// Text form: one `element charge max_valence` triple per line, `#`
  /// comments allowed.
  static Vocabulary parse(std::istream& in);
  static Vocabulary from_file(const std::filesystem::path& path);
  std::string to_text() const;

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t index) const { return entries_.at(index); }
  const AtomType& type(std::size_t index) const { return entries_.at(index).type; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::optional<std::size_t> find(const AtomType& t) const;
  /// Throws UnknownType.
  std::size_t index_of(const AtomType& t) const;
  /// Throws UnknownType.
  int max_valence(const AtomType& t) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b);

 private:
  std::vector<Entry> entries_;
};

}  // namespace molgen::chem
