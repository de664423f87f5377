// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <sys/types.h>

#include "molgen/beam/beam.hpp"
#include "molgen/chem/molecule.hpp"

namespace molgen::evalgen {

MOLGEN_DEFINE_ERROR(UnknownProperty);
MOLGEN_DEFINE_ERROR(OracleError);

enum class PropertyKind { kAtoms, kBondSum, kRings, kOracle };

/// "atoms", "bond_sum", "rings" or "oracle"; throws UnknownProperty.
PropertyKind parse_property_kind(std::string_view name);
std::string_view property_name(PropertyKind kind);

/// Environment variable naming the oracle executable.
inline constexpr const char* kOracleEnv = "MOLGEN_ORACLE_CMD";

/// A long-lived oracle process speaking the line protocol: one SMILES per
/// line on its stdin, one real per line on its stdout. The command runs
/// under /bin/sh. Calls are serialised, so one client may be shared by
/// threads.
class OracleClient {
 public:
  explicit OracleClient(const std::string& command);
  ~OracleClient();
  OracleClient(const OracleClient&) = delete;
  OracleClient& operator=(const OracleClient&) = delete;

  /// NaN when the oracle answers "nan" (unscorable input). Throws
  /// OracleError if the process exits or answers with something else.
  double score(const std::string& smiles);
  const std::string& command() const { return command_; }

 private:
  std::string command_;
  pid_t pid_ = -1;
  std::FILE* to_child_ = nullptr;
  std::FILE* from_child_ = nullptr;
  std::mutex mutex_;
};

/// A property function plus what actually backs it.
struct Property {
  beam::PropertyFn fn;
  PropertyKind kind = PropertyKind::kBondSum;
  /// Oracle was requested but MOLGEN_ORACLE_CMD is unset.
  bool fell_back = false;
  std::shared_ptr<OracleClient> oracle;
};

/// Built-in surrogates: atom count, sum of bond orders, ring count. The
/// oracle kind reads MOLGEN_ORACLE_CMD and falls back to bond_sum when it is
/// unset or empty. Oracle scores of NaN map to -infinity so an unscorable
/// candidate never wins a selection.
Property make_property(PropertyKind kind, const chem::Vocabulary& vocab = chem::Vocabulary::standard());

}  // namespace molgen::evalgen
