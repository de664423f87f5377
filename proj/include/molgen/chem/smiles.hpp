// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "molgen/chem/molecule.hpp"

namespace molgen::chem {

class SmilesSyntaxError : public Error {
 public:
  SmilesSyntaxError(const std::string& message, std::size_t position)
      : Error(message + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

MOLGEN_DEFINE_ERROR(UnsupportedFeature);
MOLGEN_DEFINE_ERROR(KekulizationError);

/// Parses the supported SMILES subset: organic-subset and bracket atoms with
/// charge and hydrogen count, branches, ring closures (digits and %nn), the
/// bond symbols - = # :, and lowercase aromatic atoms, which are kekulized.
/// Stereo, isotopes, atom classes, hydrogen atoms and '.' are rejected.
/// The result is in canonical atom order with positional indices assigned.
Molecule parse_smiles(std::string_view text,
                      const Vocabulary& vocab = Vocabulary::standard());

/// Canonical Kekulé SMILES. Charged atoms are bracketed with the implicit
/// hydrogen count implied by the vocabulary's max valence.
std::string write_smiles(const Molecule& mol,
                         const Vocabulary& vocab = Vocabulary::standard());

/// parse + write.
std::string canonical_smiles(std::string_view text,
                             const Vocabulary& vocab = Vocabulary::standard());

}  // namespace molgen::chem
