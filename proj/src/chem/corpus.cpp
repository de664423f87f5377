// SPDX-License-Identifier: Apache-2.0

#include "molgen/chem/corpus.hpp"

#include <fstream>
#include <ostream>

#include "molgen/chem/smiles.hpp"

namespace molgen::chem {

Corpus read_corpus(std::istream& in, const Vocabulary& vocab, std::ostream* log) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos || line[begin] == '#') continue;
    const auto end = line.find_first_of(" \t\r", begin);
    std::string smiles = line.substr(begin, end == std::string::npos ? end : end - begin);
    try {
      Molecule mol = parse_smiles(smiles, vocab);
      corpus.entries.push_back({lineno, std::move(smiles), std::move(mol)});
    } catch (const Error& e) {
      if (log != nullptr) *log << "skipping line " << lineno << " (" << smiles << "): " << e.what() << '\n';
      corpus.skipped.push_back({lineno, std::move(smiles), e.what()});
    }
  }
  return corpus;
}

Corpus read_corpus(const std::filesystem::path& path, const Vocabulary& vocab, std::ostream* log) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus " + path.string());
  return read_corpus(in, vocab, log);
}

}  // namespace molgen::chem
