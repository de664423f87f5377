// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "molgen/chem/corpus.hpp"
#include "molgen/train/trainer.hpp"
#include "molgen/vae/hyper_params.hpp"

namespace molgen::cli {

MOLGEN_DEFINE_ERROR(ConfigError);
MOLGEN_DEFINE_ERROR(MissingInput);

/// Flat `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Malformed lines and repeated keys throw ConfigError naming the line.
std::map<std::string, std::string> parse_config(std::string_view text);

/// Model, training and command settings merged from a config file and the
/// command line. Command-line flags take precedence.
struct RunConfig {
  vae::HyperParams hp;
  train::TrainConfig train;
  std::optional<std::string> corpus;
  std::optional<std::string> checkpoint;
  std::optional<std::string> out;
  std::optional<std::string> property;
  std::optional<std::string> mode;
  std::size_t threads = 0;  ///< 0 means one per core
  std::optional<std::size_t> count;
  std::size_t steps = 20;
  std::size_t restarts = 20;
  double step_size = 0.5;
  std::vector<double> deltas = {0.0, 0.2, 0.4, 0.6};
  /// Training keys set explicitly, which override stored settings on resume.
  std::map<std::string, std::string> train_overrides;

  /// Applies every entry; unknown keys throw ConfigError.
  void apply(const std::map<std::string, std::string>& values);
};

/// Keys accepted by RunConfig::apply besides the hp and train ones.
std::span<const std::string_view> command_keys();

/// One JSON object describing a parsed corpus entry, for external
/// cross-checking: input and canonical SMILES, atoms, bonds, formula, bond
/// order sums, maximum valences and ring count.
std::string dump_json(const chem::CorpusEntry& entry, const chem::Vocabulary& vocab);

/// Entry point of the molgen tool. Returns the process exit code; errors
/// are reported on `err` and give 1.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace molgen::cli
