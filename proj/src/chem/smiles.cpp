// SPDX-License-Identifier: Apache-2.0

#include "molgen/chem/smiles.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>

#include "molgen/chem/canonical.hpp"

namespace molgen::chem {
namespace {

struct RawAtom {
  AtomType type;
  bool aromatic = false;
  bool bracket = false;
  int hydrogens = 0;
};

struct RawBond {
  std::size_t a = 0;
  std::size_t b = 0;
  int order = 1;
  bool aromatic = false;
};

struct RingOpening {
  std::size_t atom = 0;
  std::optional<char> symbol;
};

bool is_bond_symbol(char c) { return c == '-' || c == '=' || c == '#' || c == ':'; }

class Parser {
 public:
  Parser(std::string_view text, const Vocabulary& vocab) : text_(text), vocab_(vocab) {}

  void run() {
    if (text_.empty()) throw SmilesSyntaxError("empty SMILES", 0);
    std::optional<std::size_t> prev;
    std::vector<std::size_t> branches;
    std::optional<char> pending;
    std::size_t pending_pos = 0;
    bool just_opened_branch = false;

    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '(') {
        if (!prev) throw SmilesSyntaxError("branch before any atom", pos_);
        if (pending) throw SmilesSyntaxError("bond symbol before branch", pending_pos);
        branches.push_back(*prev);
        just_opened_branch = true;
        ++pos_;
        continue;
      }
      if (c == ')') {
        if (branches.empty()) throw SmilesSyntaxError("unmatched ')'", pos_);
        if (just_opened_branch) throw SmilesSyntaxError("empty branch", pos_);
        if (pending) throw SmilesSyntaxError("dangling bond symbol", pending_pos);
        prev = branches.back();
        branches.pop_back();
        ++pos_;
        continue;
      }
      just_opened_branch = false;
      if (is_bond_symbol(c)) {
        if (!prev) throw SmilesSyntaxError("bond before any atom", pos_);
        if (pending) throw SmilesSyntaxError("consecutive bond symbols", pos_);
        pending = c;
        pending_pos = pos_++;
        continue;
      }
      if (c == '/' || c == '\\') {
        throw UnsupportedFeature("directional bond '" + std::string(1, c) +
                                 "' (stereochemistry) at position " + std::to_string(pos_));
      }
      if (c == '$') {
        throw UnsupportedFeature("quadruple bond at position " + std::to_string(pos_));
      }
      if (c == '.') {
        throw UnsupportedFeature("disconnected components ('.') at position " +
                                 std::to_string(pos_));
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
        if (!prev) throw SmilesSyntaxError("ring closure before any atom", pos_);
        const std::size_t at = pos_;
        const int number = ring_number();
        if (auto it = rings_.find(number); it != rings_.end()) {
          const RingOpening open = it->second;
          rings_.erase(it);
          if (open.atom == *prev) throw SmilesSyntaxError("ring closure to itself", at);
          if (pending && open.symbol && *pending != *open.symbol) {
            throw SmilesSyntaxError("conflicting ring-closure bond symbols", at);
          }
          add_bond(open.atom, *prev, pending ? pending : open.symbol, at);
        } else {
          rings_[number] = {*prev, pending};
        }
        pending.reset();
        continue;
      }
      const std::size_t at = pos_;
      const std::size_t atom = c == '[' ? bracket_atom() : organic_atom();
      if (prev) add_bond(*prev, atom, pending, at);
      pending.reset();
      prev = atom;
    }
    if (pending) throw SmilesSyntaxError("dangling bond symbol", pending_pos);
    if (!branches.empty()) throw SmilesSyntaxError("unclosed branch", text_.size());
    if (!rings_.empty()) {
      throw SmilesSyntaxError("unclosed ring " + std::to_string(rings_.begin()->first),
                              text_.size());
    }
  }

  std::vector<RawAtom> atoms;
  std::vector<RawBond> bonds;

 private:
  int ring_number() {
    if (text_[pos_] == '%') {
      if (pos_ + 2 >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(text_[pos_ + 2]))) {
        throw SmilesSyntaxError("'%' must be followed by two digits", pos_);
      }
      const int n = (text_[pos_ + 1] - '0') * 10 + (text_[pos_ + 2] - '0');
      pos_ += 3;
      return n;
    }
    return text_[pos_++] - '0';
  }

  void add_bond(std::size_t a, std::size_t b, std::optional<char> symbol, std::size_t at) {
    for (const auto& bond : bonds) {
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) {
        throw SmilesSyntaxError("duplicate bond", at);
      }
    }
    RawBond bond{a, b, 1, false};
    if (!symbol) {
      bond.aromatic = atoms[a].aromatic && atoms[b].aromatic;
    } else if (*symbol == '=') {
      bond.order = 2;
    } else if (*symbol == '#') {
      bond.order = 3;
    } else if (*symbol == ':') {
      if (!atoms[a].aromatic || !atoms[b].aromatic) {
        throw SmilesSyntaxError("aromatic bond between non-aromatic atoms", at);
      }
      bond.aromatic = true;
    }
    bonds.push_back(bond);
  }

  std::size_t push_atom(const RawAtom& atom, std::size_t at) {
    if (!vocab_.find(atom.type)) {
      throw UnsupportedFeature("atom type " + to_string(atom.type) +
                               " outside the vocabulary at position " + std::to_string(at));
    }
    atoms.push_back(atom);
    return atoms.size() - 1;
  }

  std::size_t organic_atom() {
    const std::size_t at = pos_;
    const char c = text_[pos_];
    if (c == 'C' && pos_ + 1 < text_.size() && text_[pos_ + 1] == 'l') {
      pos_ += 2;
      return push_atom({{Element::Cl, 0}}, at);
    }
    if (c == 'B' && pos_ + 1 < text_.size() && text_[pos_ + 1] == 'r') {
      pos_ += 2;
      return push_atom({{Element::Br, 0}}, at);
    }
    const auto single = [&](Element e, bool aromatic) {
      ++pos_;
      return push_atom({{e, 0}, aromatic}, at);
    };
    switch (c) {
      case 'B': return single(Element::B, false);
      case 'C': return single(Element::C, false);
      case 'N': return single(Element::N, false);
      case 'O': return single(Element::O, false);
      case 'P': return single(Element::P, false);
      case 'S': return single(Element::S, false);
      case 'F': return single(Element::F, false);
      case 'I': return single(Element::I, false);
      case 'b': return single(Element::B, true);
      case 'c': return single(Element::C, true);
      case 'n': return single(Element::N, true);
      case 'o': return single(Element::O, true);
      case 'p': return single(Element::P, true);
      case 's': return single(Element::S, true);
      default: break;
    }
    if (c == '*') throw UnsupportedFeature("wildcard atom at position " + std::to_string(at));
    if (std::isalpha(static_cast<unsigned char>(c))) {
      throw SmilesSyntaxError("'" + std::string(1, c) +
                                  "' is not an organic-subset atom (use brackets)",
                              at);
    }
    throw SmilesSyntaxError("unexpected character '" + std::string(1, c) + "'", at);
  }

  std::size_t bracket_atom() {
    const std::size_t open = pos_++;
    auto peek = [&]() -> char { return pos_ < text_.size() ? text_[pos_] : '\0'; };
    if (std::isdigit(static_cast<unsigned char>(peek()))) {
      throw UnsupportedFeature("isotope label at position " + std::to_string(pos_));
    }
    std::string symbol;
    bool aromatic = false;
    if (std::isupper(static_cast<unsigned char>(peek()))) {
      symbol += text_[pos_++];
      if (std::islower(static_cast<unsigned char>(peek()))) symbol += text_[pos_++];
    } else if (std::islower(static_cast<unsigned char>(peek()))) {
      aromatic = true;
      symbol += static_cast<char>(std::toupper(static_cast<unsigned char>(text_[pos_++])));
      const char next = peek();
      if ((symbol == "S" && next == 'e') || (symbol == "A" && next == 's') ||
          (symbol == "T" && next == 'e')) {
        symbol += text_[pos_++];
      }
    } else if (peek() == '*') {
      throw UnsupportedFeature("wildcard atom at position " + std::to_string(pos_));
    } else {
      throw SmilesSyntaxError("missing element symbol in bracket atom", pos_);
    }
    if (symbol == "H") {
      throw UnsupportedFeature("explicit hydrogen atom at position " + std::to_string(open));
    }
    const auto element = element_from_symbol(symbol);
    if (!element) {
      throw UnsupportedFeature("element " + symbol + " outside the vocabulary at position " +
                               std::to_string(open));
    }
    if (aromatic && *element != Element::B && *element != Element::C &&
        *element != Element::N && *element != Element::O && *element != Element::P &&
        *element != Element::S) {
      throw SmilesSyntaxError("element " + symbol + " cannot be aromatic", open);
    }
    if (peek() == '@') {
      throw UnsupportedFeature("chirality marker at position " + std::to_string(pos_));
    }
    int hydrogens = 0;
    if (peek() == 'H') {
      ++pos_;
      hydrogens = 1;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        hydrogens = 0;
        while (std::isdigit(static_cast<unsigned char>(peek()))) {
          hydrogens = hydrogens * 10 + (text_[pos_++] - '0');
        }
      }
    }
    int charge = 0;
    if (peek() == '+' || peek() == '-') {
      const char sign = text_[pos_++];
      int magnitude = 1;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        magnitude = 0;
        while (std::isdigit(static_cast<unsigned char>(peek()))) {
          magnitude = magnitude * 10 + (text_[pos_++] - '0');
        }
      } else {
        while (peek() == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      charge = sign == '+' ? magnitude : -magnitude;
    }
    if (peek() == ':') {
      throw UnsupportedFeature("atom class at position " + std::to_string(pos_));
    }
    if (peek() != ']') throw SmilesSyntaxError("unterminated bracket atom", open);
    ++pos_;
    return push_atom({{*element, charge}, aromatic, true, hydrogens}, open);
  }

  std::string_view text_;
  const Vocabulary& vocab_;
  std::size_t pos_ = 0;
  std::map<int, RingOpening> rings_;
};

// Assigns Double to a perfect matching of the aromatic atoms that still need
// a pi bond. Atoms and partners are tried in canonical rank order of the
// aromatic graph, so the chosen Kekulé structure does not depend on how the
// input string was written.
class Kekulizer {
 public:
  Kekulizer(const std::vector<RawAtom>& atoms, std::vector<RawBond>& bonds)
      : atoms_(atoms), bonds_(bonds) {}

  void run() {
    const std::size_t n = atoms_.size();
    bool any_aromatic = false;
    for (const auto& b : bonds_) any_aromatic |= b.aromatic;
    for (const auto& a : atoms_) any_aromatic |= a.aromatic;
    if (!any_aromatic) return;

    LabelledGraph graph;
    graph.atom_labels.resize(n);
    graph.adjacency.resize(n);
    std::vector<int> sigma(n, 0);
    std::vector<int> degree(n, 0);
    for (std::size_t k = 0; k < bonds_.size(); ++k) {
      const auto& b = bonds_[k];
      const int label = b.aromatic ? 4 : b.order;
      graph.adjacency[b.a].emplace_back(b.b, label);
      graph.adjacency[b.b].emplace_back(b.a, label);
      sigma[b.a] += b.aromatic ? 1 : b.order;
      sigma[b.b] += b.aromatic ? 1 : b.order;
      ++degree[b.a];
      ++degree[b.b];
    }
    need_.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = atoms_[i];
      graph.atom_labels[i] = {degree[i], static_cast<int>(a.type.element), a.type.charge,
                              a.aromatic ? 1 : 0, a.hydrogens};
      if (a.aromatic) {
        const int free = default_valence(a.type.element, a.type.charge) - sigma[i] - a.hydrogens;
        need_[i] = free >= 1;
      }
    }
    ranks_ = canonical_ranks(graph);

    partners_.assign(n, {});
    for (std::size_t k = 0; k < bonds_.size(); ++k) {
      const auto& b = bonds_[k];
      if (b.aromatic && need_[b.a] && need_[b.b]) {
        partners_[b.a].push_back({b.b, k});
        partners_[b.b].push_back({b.a, k});
      }
    }
    for (auto& p : partners_) {
      std::sort(p.begin(), p.end(),
                [&](const auto& x, const auto& y) { return ranks_[x.first] < ranks_[y.first]; });
    }
    match_.assign(n, kUnmatched);
    if (!solve()) {
      throw KekulizationError("no alternating single/double assignment exists for the "
                              "aromatic system");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (match_[i] != kUnmatched && match_[i] > i) {
        for (const auto& [j, k] : partners_[i]) {
          if (j == match_[i]) bonds_[k].order = 2;
        }
      }
    }
    for (auto& b : bonds_) b.aromatic = false;
  }

 private:
  static constexpr std::size_t kUnmatched = static_cast<std::size_t>(-1);

  bool solve() {
    // Most constrained unmatched atom first; ties by rank.
    std::size_t pick = kUnmatched;
    std::size_t pick_options = 0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      if (!need_[i] || match_[i] != kUnmatched) continue;
      std::size_t options = 0;
      for (const auto& [j, k] : partners_[i]) options += match_[j] == kUnmatched;
      if (options == 0) return false;
      if (pick == kUnmatched || options < pick_options ||
          (options == pick_options && ranks_[i] < ranks_[pick])) {
        pick = i;
        pick_options = options;
      }
    }
    if (pick == kUnmatched) return true;
    for (const auto& [j, k] : partners_[pick]) {
      if (match_[j] != kUnmatched) continue;
      match_[pick] = j;
      match_[j] = pick;
      if (solve()) return true;
      match_[pick] = kUnmatched;
      match_[j] = kUnmatched;
    }
    return false;
  }

  const std::vector<RawAtom>& atoms_;
  std::vector<RawBond>& bonds_;
  std::vector<bool> need_;
  std::vector<std::size_t> ranks_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> partners_;
  std::vector<std::size_t> match_;
};

void write_atom(std::string& out, const Atom& atom, int bond_sum, const Vocabulary& vocab) {
  const auto symbol = element_symbol(atom.type.element);
  if (atom.type.charge == 0) {
    out += symbol;
    return;
  }
  out += '[';
  out += symbol;
  const int hydrogens = std::max(0, vocab.max_valence(atom.type) - bond_sum);
  if (hydrogens > 0) {
    out += 'H';
    if (hydrogens > 1) out += std::to_string(hydrogens);
  }
  out += atom.type.charge > 0 ? '+' : '-';
  const int magnitude = std::abs(atom.type.charge);
  if (magnitude > 1) out += std::to_string(magnitude);
  out += ']';
}

void write_bond(std::string& out, BondType b) {
  if (b == BondType::kDouble) out += '=';
  if (b == BondType::kTriple) out += '#';
}

void write_ring_digit(std::string& out, int digit) {
  if (digit < 10) {
    out += static_cast<char>('0' + digit);
  } else {
    out += '%';
    out += std::to_string(digit);
  }
}

}  // namespace

Molecule parse_smiles(std::string_view text, const Vocabulary& vocab) {
  Parser parser(text, vocab);
  parser.run();
  Kekulizer(parser.atoms, parser.bonds).run();

  const std::size_t n = parser.atoms.size();
  BondMatrix bonds(n);
  for (const auto& b : parser.bonds) bonds.set(b.a, b.b, bond_from_order(b.order));
  std::vector<AtomType> types;
  types.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& atom = parser.atoms[i];
    types.push_back(atom.type);
    int used = atom.hydrogens;
    for (std::size_t j = 0; j < n; ++j) used += bond_order(bonds(i, j));
    const int limit = vocab.max_valence(atom.type);
    if (used > limit) {
      throw ValenceError(to_string(atom.type) + " atom " + std::to_string(i) +
                         " has valence " + std::to_string(used) + " > " +
                         std::to_string(limit));
    }
  }
  return Molecule::from_graph(types, bonds);
}

std::string write_smiles(const Molecule& mol, const Vocabulary& vocab) {
  if (mol.empty()) return {};
  const auto ranks = canonical_ranks(mol);
  const auto layout = traverse(mol, ranks);
  const std::size_t n = mol.size();

  std::vector<std::size_t> emitted_at(n, n);
  for (std::size_t k = 0; k < layout.order.size(); ++k) emitted_at[layout.order[k]] = k;

  std::string out;
  std::vector<bool> digit_in_use(100, false);
  std::map<std::pair<std::size_t, std::size_t>, int> open_digits;

  // Explicit stack of (atom, incoming bond, wrap-in-parentheses) frames;
  // a null atom marks a closing parenthesis.
  struct Frame {
    std::size_t atom;
    BondType incoming;
    bool branch;
    bool close;
  };
  std::vector<Frame> stack{{layout.order.front(), BondType::kNone, false, false}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (f.close) {
      out += ')';
      continue;
    }
    if (f.branch) out += '(';
    write_bond(out, f.incoming);
    const std::size_t a = f.atom;
    write_atom(out, mol.atom(a), mol.bond_order_sum(a), vocab);
    for (const std::size_t b : layout.ring_partners[a]) {
      const auto key = std::minmax(a, b);
      if (emitted_at[b] < emitted_at[a]) {
        const int digit = open_digits.at(key);
        open_digits.erase(key);
        digit_in_use[digit] = false;
        write_ring_digit(out, digit);
      } else {
        int digit = 1;
        while (digit_in_use[digit]) ++digit;
        digit_in_use[digit] = true;
        open_digits[key] = digit;
        write_bond(out, mol.bond(a, b));
        write_ring_digit(out, digit);
      }
    }
    const auto& kids = layout.children[a];
    // Pushed in reverse so the first child is emitted first; all but the
    // last child are wrapped in parentheses.
    for (std::size_t k = kids.size(); k-- > 0;) {
      const bool branch = k + 1 < kids.size();
      if (branch) stack.push_back({0, BondType::kNone, false, true});
      stack.push_back({kids[k], mol.bond(a, kids[k]), branch, false});
    }
  }
  return out;
}

std::string canonical_smiles(std::string_view text, const Vocabulary& vocab) {
  return write_smiles(parse_smiles(text, vocab), vocab);
}

}  // namespace molgen::chem
