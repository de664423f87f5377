// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "molgen/chem/molecule.hpp"

namespace molgen::chem {

struct CorpusEntry {
  std::size_t line = 0;
  std::string smiles;
  Molecule molecule;
};

struct SkippedLine {
  std::size_t line = 0;
  std::string text;
  std::string reason;
};

struct Corpus {
  std::vector<CorpusEntry> entries;
  std::vector<SkippedLine> skipped;
};

/// Reads a SMILES corpus: one SMILES per line (anything after the first
/// whitespace is ignored), blank and `#` lines skipped. Lines that fail to
/// parse are recorded in `skipped` and logged to `log` when non-null.
Corpus read_corpus(std::istream& in, const Vocabulary& vocab = Vocabulary::standard(),
                   std::ostream* log = nullptr);
Corpus read_corpus(const std::filesystem::path& path,
                   const Vocabulary& vocab = Vocabulary::standard(),
                   std::ostream* log = nullptr);

}  // namespace molgen::chem
