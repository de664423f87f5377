// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <sstream>

#include "json.hpp"
#include "molgen/chem/canonical.hpp"
#include "molgen/chem/smiles.hpp"
#include "molgen/cli/cli.hpp"
#include "molgen/util/text.hpp"

namespace molgen::cli {
namespace {

constexpr std::array<std::string_view, 11> kCommandKeys = {
    "corpus", "checkpoint", "out", "property", "mode", "threads", "count", "steps", "restarts", "step_size", "delta"};

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::size_t size_value(const std::string& key, const std::string& text) {
  const auto v = parse_integer<std::size_t>(text);
  if (!v) throw ConfigError("'" + key + "' expects a non-negative integer, got '" + text + "'");
  return *v;
}

double real_value(const std::string& key, const std::string& text) {
  const auto v = parse_real(text);
  if (!v) throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  return *v;
}

}  // namespace

std::span<const std::string_view> command_keys() { return kCommandKeys; }

std::map<std::string, std::string> parse_config(std::string_view text) {
  std::map<std::string, std::string> values;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!values.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": '" + key + "' given twice");
    }
  }
  return values;
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  auto hp_values = hp.to_map();
  auto train_values = train.to_map();
  for (const auto& [key, value] : values) {
    if (hp_values.count(key) != 0) {
      hp_values[key] = value;
    } else if (train_values.count(key) != 0) {
      train_values[key] = value;
      train_overrides[key] = value;
    } else if (key == "corpus") {
      corpus = value;
    } else if (key == "checkpoint") {
      checkpoint = value;
    } else if (key == "out") {
      out = value;
    } else if (key == "property") {
      property = value;
    } else if (key == "mode") {
      if (value != "max_prob" && value != "bernoulli") {
        throw ConfigError("'mode' expects max_prob or bernoulli, got '" + value + "'");
      }
      mode = value;
    } else if (key == "threads") {
      threads = size_value(key, value);
    } else if (key == "count") {
      count = size_value(key, value);
    } else if (key == "steps") {
      steps = size_value(key, value);
    } else if (key == "restarts") {
      restarts = size_value(key, value);
      if (restarts == 0) throw ConfigError("'restarts' must be >= 1");
    } else if (key == "step_size") {
      step_size = real_value(key, value);
    } else if (key == "delta") {
      deltas.clear();
      std::istringstream in(value);
      std::string item;
      while (std::getline(in, item, ',')) {
        const double d = real_value(key, trim(item));
        if (d < 0.0 || d > 1.0) throw ConfigError("'delta' values must lie in [0, 1]");
        deltas.push_back(d);
      }
      if (deltas.empty()) throw ConfigError("'delta' needs at least one value");
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }
  try {
    hp = vae::HyperParams::from_map(hp_values);
    hp.validate();
    train = train::TrainConfig::from_map(train_values);
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::string dump_json(const chem::CorpusEntry& entry, const chem::Vocabulary& vocab) {
  const chem::Molecule& mol = entry.molecule;
  nlohmann::ordered_json j;
  j["line"] = entry.line;
  j["smiles"] = entry.smiles;
  j["canonical"] = chem::write_smiles(chem::canonicalize(mol), vocab);
  auto atoms = nlohmann::json::array();
  std::map<std::string, int> formula;
  for (const auto& a : mol.atoms()) {
    const std::string symbol(chem::element_symbol(a.type.element));
    atoms.push_back({{"symbol", symbol}, {"charge", a.type.charge}, {"position", a.position_index}});
    ++formula[symbol];
  }
  j["atoms"] = atoms;
  auto bonds = nlohmann::json::array();
  for (std::size_t i = 0; i < mol.size(); ++i) {
    for (std::size_t jdx = i + 1; jdx < mol.size(); ++jdx) {
      const int order = chem::bond_order(mol.bond(i, jdx));
      if (order != 0) bonds.push_back({i, jdx, order});
    }
  }
  j["bonds"] = bonds;
  j["formula"] = formula;
  auto valence = nlohmann::json::array();
  auto max_valence = nlohmann::json::array();
  for (std::size_t i = 0; i < mol.size(); ++i) {
    valence.push_back(mol.bond_order_sum(i));
    max_valence.push_back(vocab.max_valence(mol.atom(i).type));
  }
  j["bond_order_sums"] = valence;
  j["max_valence"] = max_valence;
  j["rings"] = chem::ring_count(mol);
  return j.dump();
}

}  // namespace molgen::cli
