// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "molgen/beam/edge_scores.hpp"
#include "molgen/chem/molecule.hpp"
#include "molgen/tensor/checkpoint.hpp"
#include "molgen/vae/graph.hpp"
#include "molgen/vae/hyper_params.hpp"

namespace molgen::vae {

MOLGEN_DEFINE_ERROR(OversizeMolecule);
MOLGEN_DEFINE_ERROR(UndersizeMolecule);
MOLGEN_DEFINE_ERROR(DegenerateFormula);
MOLGEN_DEFINE_ERROR(FormulaTooLarge);
MOLGEN_DEFINE_ERROR(PositionOverflow);
MOLGEN_DEFINE_ERROR(AlignmentError);

struct LatentGaussian {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> z;
};

/// m x (r+1) count scores; column j scores "count = j".
struct BoaScores {
  tensor::Tensor scores;
  chem::BagOfAtoms formula;
};

/// Row-wise argmax of count scores, ties toward the smaller count.
chem::BagOfAtoms argmax_formula(const tensor::Tensor& scores);

/// argmax_formula, adjusted to 1 <= total <= max_total by the cheapest
/// score changes: an empty formula gains the single best non-zero count, an
/// oversized one lowers counts one step at a time.
chem::BagOfAtoms repaired_formula(const tensor::Tensor& scores, int max_total);

/// -1/2 sum(1 + 2 log sigma - mu^2 - sigma^2).
double kl_divergence(std::span<const double> mu, std::span<const double> sigma);

struct LossBreakdown {
  double edge_ce = 0.0;
  double boa_ce = 0.0;
  double kl = 0.0;
  double prop_l2 = 0.0;
  double total = 0.0;
};

struct LossTerms {
  tensor::Var total;
  tensor::Var edge_ce;
  tensor::Var boa_ce;
  tensor::Var kl;
  std::optional<tensor::Var> prop_l2;
  LossBreakdown values() const;
};

struct LossInputs {
  /// Canonically ordered molecules, all of the same size in practice.
  std::span<const chem::Molecule* const> molecules;
  /// One (normalised) target per molecule, or empty for no supervision.
  std::span<const double> property_targets;
  /// graphs x k noise; null means eps = 0.
  const tensor::Tensor* noise = nullptr;
  /// Multiplier on lambda_kl, used for warm-up.
  double kl_scale = 1.0;
};

class Model {
 public:
  Model(HyperParams hp, chem::Vocabulary vocab, std::uint64_t seed);
  /// Adopts existing parameters; throws InvalidHyperParams on a missing
  /// name or wrong shape.
  Model(HyperParams hp, chem::Vocabulary vocab, tensor::ParamStore params);

  const HyperParams& hyper() const { return hp_; }
  const chem::Vocabulary& vocab() const { return vocab_; }
  tensor::ParamStore& params() { return params_; }
  const tensor::ParamStore& params() const { return params_; }
  std::size_t atom_types() const { return vocab_.size(); }

  /// Rows of `table` ("enc.atom_embed" or "dec.atom_embed") for each atom:
  /// the type row plus, with positional features on, the position row.
  /// Equivalent to one-hot(type) ++ one-hot(position) times the table.
  tensor::Var embed_atoms(Forward& fw, const char* table, std::span<const chem::Atom> atoms) const;

  // Batch building blocks. Molecules must be canonically ordered.
  struct Encoded {
    GraphState graph;
    tensor::Var mu;
    tensor::Var log_sigma;
  };
  Encoded encode(Forward& fw, std::span<const chem::Molecule* const> mols) const;
  /// (graphs * m) x (r+1) count logits.
  tensor::Var atom_logits(Forward& fw, tensor::Var z) const;
  /// Symmetrised edge logits, one row per ordered pair of `layout`.
  tensor::Var bond_logits(Forward& fw, tensor::Var z,
                          std::span<const std::vector<chem::Atom>> nodes,
                          const GraphBatch& layout) const;
  /// graphs x 1.
  tensor::Var property(Forward& fw, tensor::Var z) const;
  LossTerms loss(Forward& fw, const LossInputs& inputs) const;

  /// Sets every size's running statistics to the mean of the batch
  /// statistics of `molecules` encoded with eps = 0, in same-size batches
  /// of at most `batch_size`. Sizes absent from `molecules` are untouched.
  void recalibrate_statistics(std::span<const chem::Molecule> molecules, std::size_t batch_size);

  // Single-molecule evaluation; safe to call concurrently.
  /// Canonicalizes first. eps = 0 when rng is null.
  LatentGaussian encode(const chem::Molecule& mol, Rng* rng = nullptr) const;
  tensor::Tensor atom_scores(std::span<const double> z) const;
  /// Throws DegenerateFormula when every count is zero.
  BoaScores decode_atoms(std::span<const double> z) const;
  beam::EdgeScores decode_bonds(std::span<const double> z, const chem::BagOfAtoms& boa) const;
  double predict_property(std::span<const double> z) const;
  std::vector<double> property_gradient(std::span<const double> z) const;

  /// Checkpoint header entries describing the model (`hp.*` and `vocab`).
  std::map<std::string, std::string> header() const;
  /// Ignores header keys outside `hp.*` and `vocab`.
  static Model from_checkpoint(tensor::Checkpoint checkpoint);

 private:
  void init_params(std::uint64_t seed);
  LayerOptions layer_options() const;
  /// Points batch normalisation at the running statistics for `sizes`.
  void bind_statistics(Forward& fw, std::span<const std::size_t> sizes) const;
  /// The trained size whose statistics serve molecules of n atoms.
  std::size_t statistics_size(std::size_t n) const;

  HyperParams hp_;
  chem::Vocabulary vocab_;
  tensor::ParamStore params_;
};

/// For each decoder node, the index of the atom of `mol` with the same
/// (type, position). Throws AlignmentError unless this is a bijection.
std::vector<std::size_t> align_to_formula(const chem::Molecule& mol, const chem::Vocabulary& vocab,
                                          std::span<const chem::Atom> nodes);

}  // namespace molgen::vae
