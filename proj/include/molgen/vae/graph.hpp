// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "molgen/tensor/tape.hpp"
#include "molgen/util/rng.hpp"

namespace molgen::vae {

/// Row layout of a batch of dense graphs. Every graph contributes its nodes
/// and all ordered pairs (i, j), i != j, as edge rows. Within a graph, edge
/// rows run over i, then j.
struct GraphBatch {
  std::vector<std::size_t> sizes;
  std::vector<std::uint32_t> node_offset;  ///< graphs + 1 entries
  std::vector<std::uint32_t> edge_offset;  ///< graphs + 1 entries
  tensor::Index node_graph;
  tensor::Index edge_src;      ///< global node row of i
  tensor::Index edge_dst;      ///< global node row of j
  tensor::Index edge_graph;
  tensor::Index edge_reverse;  ///< row of (j, i)
  tensor::Index edge_upper;    ///< rows with i < j, in row order

  static GraphBatch dense(std::span<const std::size_t> sizes);

  std::size_t graphs() const { return sizes.size(); }
  std::size_t nodes() const { return node_offset.back(); }
  std::size_t edges() const { return edge_offset.back(); }
  /// Row of (i, j) in graph g; i and j are local node indices.
  std::size_t edge_row(std::size_t g, std::size_t i, std::size_t j) const;
};

enum class Mode { kTrain, kEval };

/// Binds a tape to a parameter store for one forward pass. A mutable store
/// receives parameter gradients and, in training mode, batch-norm running
/// statistics. A const store makes the pass read-only, so several passes may
/// share it concurrently.
class Forward {
 public:
  Forward(tensor::Tape& tape, tensor::ParamStore& store, Mode mode)
      : tape_(tape), mutable_(&store), store_(store), mode_(mode) {}
  Forward(tensor::Tape& tape, const tensor::ParamStore& store, Mode mode)
      : tape_(tape), store_(store), mode_(mode) {}

  tensor::Tape& tape() { return tape_; }
  Mode mode() const { return mode_; }
  /// Null when the store is read-only.
  tensor::ParamStore* mutable_store() { return mutable_; }
  tensor::Var param(std::string_view name);

  /// Molecule size whose running statistics batch_norm reads (evaluation)
  /// or updates (training with a mutable store). Unset in training mode
  /// means the batch mixes sizes and running statistics are left alone.
  void set_statistics_slot(std::optional<std::size_t> size) { slot_ = size; }
  std::optional<std::size_t> statistics_slot() const { return slot_; }
  /// Replaces the layer momentum for running-statistic updates.
  void set_momentum_override(std::optional<double> momentum) { momentum_ = momentum; }

  /// gamma * normalise(x) + beta with parameters `prefix.gamma` etc.
  tensor::Var batch_norm(const std::string& prefix, tensor::Var x, double eps, double momentum);

 private:
  tensor::Tape& tape_;
  tensor::ParamStore* mutable_ = nullptr;
  const tensor::ParamStore& store_;
  Mode mode_;
  std::optional<std::size_t> slot_;
  std::optional<double> momentum_;
};

struct GraphState {
  tensor::Var h;  ///< nodes x d
  tensor::Var e;  ///< edges x d
};

struct LayerOptions {
  double attention_eps = 1e-6;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
};

/// Glorot-uniform matrix.
tensor::Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng);

/// Name of the running-statistics buffer `stat` ("running_mean" or
/// "running_var") kept for molecules of `size` atoms.
std::string running_stat_name(const std::string& prefix, const char* stat, std::size_t size);
/// gamma, beta and one pair of running statistics per size in [2, max_size].
void add_batch_norm_params(tensor::ParamStore& store, const std::string& prefix, std::size_t width,
                           std::size_t max_size);
void add_gcn_params(tensor::ParamStore& store, const std::string& prefix, std::size_t d,
                    std::size_t max_size, Rng& rng);
/// `log_sigma_head` starts the D matrix at zero, so the head begins at
/// unit standard deviation.
void add_readout_params(tensor::ParamStore& store, const std::string& prefix, std::size_t d,
                        std::size_t k, Rng& rng, bool zero_output = false);

/// One residual edge-gated GCN layer with dense attention over j != i.
GraphState gcn_layer(Forward& fw, const std::string& prefix, GraphState in,
                     const GraphBatch& batch, const LayerOptions& options);

/// Per-graph sum over edges of sigmoid(e A + h_i B + h_j C) * (e D).
tensor::Var gated_readout(Forward& fw, const std::string& prefix, GraphState state,
                          const GraphBatch& batch);

}  // namespace molgen::vae
