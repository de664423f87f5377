// SPDX-License-Identifier: Apache-2.0

#include "molgen/evalgen/property.hpp"

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <sys/wait.h>
#include <unistd.h>

#include "molgen/chem/smiles.hpp"
#include "molgen/util/text.hpp"

namespace molgen::evalgen {

PropertyKind parse_property_kind(std::string_view name) {
  if (name == "atoms") return PropertyKind::kAtoms;
  if (name == "bond_sum") return PropertyKind::kBondSum;
  if (name == "rings") return PropertyKind::kRings;
  if (name == "oracle") return PropertyKind::kOracle;
  throw UnknownProperty("unknown property '" + std::string(name) + "' (expected atoms, bond_sum, rings or oracle)");
}

std::string_view property_name(PropertyKind kind) {
  switch (kind) {
    case PropertyKind::kAtoms: return "atoms";
    case PropertyKind::kBondSum: return "bond_sum";
    case PropertyKind::kRings: return "rings";
    case PropertyKind::kOracle: return "oracle";
  }
  return "?";
}

OracleClient::OracleClient(const std::string& command) : command_(command) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw OracleError("oracle: pipe failed: " + std::string(std::strerror(errno)));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw OracleError("oracle: pipe failed: " + std::string(std::strerror(errno)));
  }
  pid_ = fork();
  if (pid_ < 0) throw OracleError("oracle: fork failed: " + std::string(std::strerror(errno)));
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = fdopen(in_pipe[1], "w");
  from_child_ = fdopen(out_pipe[0], "r");
  if (to_child_ == nullptr || from_child_ == nullptr) throw OracleError("oracle: fdopen failed");
}

OracleClient::~OracleClient() {
  if (to_child_ != nullptr) std::fclose(to_child_);
  if (from_child_ != nullptr) std::fclose(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

double OracleClient::score(const std::string& smiles) {
  std::lock_guard lock(mutex_);
  // A dead child would raise SIGPIPE on write.
  struct sigaction ignore {};
  struct sigaction previous {};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGPIPE, &ignore, &previous);
  const bool written = std::fprintf(to_child_, "%s\n", smiles.c_str()) >= 0 && std::fflush(to_child_) == 0;
  sigaction(SIGPIPE, &previous, nullptr);
  if (!written) throw OracleError("oracle '" + command_ + "' stopped accepting input");

  std::string line;
  for (int c = std::fgetc(from_child_); c != '\n'; c = std::fgetc(from_child_)) {
    if (c == EOF) throw OracleError("oracle '" + command_ + "' closed its output while scoring '" + smiles + "'");
    line.push_back(static_cast<char>(c));
  }
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
  const auto value = parse_real(line);
  if (!value) throw OracleError("oracle '" + command_ + "' answered '" + line + "' for '" + smiles + "'");
  return *value;
}

Property make_property(PropertyKind kind, const chem::Vocabulary& vocab) {
  Property p;
  p.kind = kind;
  if (kind == PropertyKind::kOracle) {
    const char* command = std::getenv(kOracleEnv);
    if (command == nullptr || *command == '\0') {
      kind = PropertyKind::kBondSum;
      p.kind = kind;
      p.fell_back = true;
    } else {
      auto client = std::make_shared<OracleClient>(command);
      p.oracle = client;
      p.fn = [client, vocab](const chem::Molecule& mol) {
        const double v = client->score(chem::write_smiles(mol, vocab));
        return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
      };
      return p;
    }
  }
  switch (kind) {
    case PropertyKind::kAtoms:
      p.fn = [](const chem::Molecule& mol) { return static_cast<double>(mol.size()); };
      break;
    case PropertyKind::kBondSum:
      p.fn = [](const chem::Molecule& mol) {
        int total = 0;
        for (std::size_t i = 0; i < mol.size(); ++i) total += mol.bond_order_sum(i);
        return static_cast<double>(total / 2);
      };
      break;
    case PropertyKind::kRings:
      p.fn = [](const chem::Molecule& mol) { return static_cast<double>(chem::ring_count(mol)); };
      break;
    case PropertyKind::kOracle:
      break;
  }
  return p;
}

}  // namespace molgen::evalgen
