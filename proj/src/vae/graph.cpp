// SPDX-License-Identifier: Apache-2.0

#include "molgen/vae/graph.hpp"

#include <cmath>

namespace molgen::vae {

using tensor::Tensor;
using tensor::Var;

GraphBatch GraphBatch::dense(std::span<const std::size_t> sizes) {
  GraphBatch b;
  b.sizes.assign(sizes.begin(), sizes.end());
  std::vector<std::uint32_t> node_graph, src, dst, graph, reverse, upper;
  b.node_offset.push_back(0);
  b.edge_offset.push_back(0);
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const std::size_t n = sizes[g];
    const auto base = b.node_offset.back();
    const auto ebase = b.edge_offset.back();
    for (std::size_t i = 0; i < n; ++i) node_graph.push_back(static_cast<std::uint32_t>(g));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto row = static_cast<std::uint32_t>(src.size());
        src.push_back(static_cast<std::uint32_t>(base + i));
        dst.push_back(static_cast<std::uint32_t>(base + j));
        graph.push_back(static_cast<std::uint32_t>(g));
        const std::size_t rev_local = j * (n - 1) + (i < j ? i : i - 1);
        reverse.push_back(static_cast<std::uint32_t>(ebase + rev_local));
        if (i < j) upper.push_back(row);
      }
    }
    b.node_offset.push_back(static_cast<std::uint32_t>(base + n));
    b.edge_offset.push_back(static_cast<std::uint32_t>(ebase + n * (n ? n - 1 : 0)));
  }
  b.node_graph = tensor::make_index(std::move(node_graph));
  b.edge_src = tensor::make_index(std::move(src));
  b.edge_dst = tensor::make_index(std::move(dst));
  b.edge_graph = tensor::make_index(std::move(graph));
  b.edge_reverse = tensor::make_index(std::move(reverse));
  b.edge_upper = tensor::make_index(std::move(upper));
  return b;
}

std::size_t GraphBatch::edge_row(std::size_t g, std::size_t i, std::size_t j) const {
  const std::size_t n = sizes.at(g);
  if (i >= n || j >= n || i == j) throw Error("edge_row: invalid pair");
  return edge_offset[g] + i * (n - 1) + (j < i ? j : j - 1);
}

Var Forward::param(std::string_view name) {
  if (mutable_ != nullptr) return tape_.param(mutable_->at(name));
  return tape_.param(store_.at(name));
}

Var Forward::batch_norm(const std::string& prefix, Var x, double eps, double momentum) {
  tensor::BatchNormOptions opts;
  opts.eps = eps;
  opts.momentum = momentum_.value_or(momentum);
  opts.training = mode_ == Mode::kTrain;
  if (opts.training) {
    if (mutable_ != nullptr && slot_) {
      opts.running_mean = &mutable_->at(running_stat_name(prefix, "running_mean", *slot_)).value;
      opts.running_var = &mutable_->at(running_stat_name(prefix, "running_var", *slot_)).value;
    }
  } else {
    if (!slot_) throw Error("batch_norm: evaluation needs a statistics slot");
    opts.eval_mean = &store_.at(running_stat_name(prefix, "running_mean", *slot_)).value;
    opts.eval_var = &store_.at(running_stat_name(prefix, "running_var", *slot_)).value;
  }
  return tensor::batch_norm(x, param(prefix + ".gamma"), param(prefix + ".beta"), opts);
}

Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : t.data()) v = (2.0 * uniform01(rng) - 1.0) * limit;
  return t;
}

std::string running_stat_name(const std::string& prefix, const char* stat, std::size_t size) {
  return prefix + "." + stat + ".n" + std::to_string(size);
}

void add_batch_norm_params(tensor::ParamStore& store, const std::string& prefix, std::size_t width,
                           std::size_t max_size) {
  store.add(prefix + ".gamma", Tensor({width}, 1.0));
  store.add(prefix + ".beta", Tensor({width}, 0.0));
  for (std::size_t n = 2; n <= max_size; ++n) {
    store.add(running_stat_name(prefix, "running_mean", n), Tensor({width}, 0.0), false);
    store.add(running_stat_name(prefix, "running_var", n), Tensor({width}, 1.0), false);
  }
}

void add_gcn_params(tensor::ParamStore& store, const std::string& prefix, std::size_t d,
                    std::size_t max_size, Rng& rng) {
  for (const char* name : {".W1", ".W2", ".V1", ".V2", ".V3"}) {
    store.add(prefix + name, glorot(d, d, rng));
  }
  add_batch_norm_params(store, prefix + ".bn_h", d, max_size);
  add_batch_norm_params(store, prefix + ".bn_e", d, max_size);
}

void add_readout_params(tensor::ParamStore& store, const std::string& prefix, std::size_t d,
                        std::size_t k, Rng& rng, bool zero_output) {
  for (const char* name : {".A", ".B", ".C"}) store.add(prefix + name, glorot(d, k, rng));
  store.add(prefix + ".D", zero_output ? Tensor({d, k}) : glorot(d, k, rng));
}

GraphState gcn_layer(Forward& fw, const std::string& prefix, GraphState in,
                     const GraphBatch& batch, const LayerOptions& options) {
  using namespace tensor;
  const std::size_t n = batch.nodes();

  // Dense attention: eta_ij = sigmoid(e_ij) / (sum_j' sigmoid(e_ij') + eps).
  const Var gate = sigmoid(in.e);
  const Var denom = add_scalar(gather_rows(segment_sum(gate, batch.edge_src, n), batch.edge_src),
                               options.attention_eps);
  const Var eta = div(gate, denom);
  const Var messages = mul(eta, gather_rows(matmul(in.h, fw.param(prefix + ".W2")), batch.edge_dst));
  const Var h_pre = add(matmul(in.h, fw.param(prefix + ".W1")), segment_sum(messages, batch.edge_src, n));
  const Var h_out = add(in.h, relu(fw.batch_norm(prefix + ".bn_h", h_pre, options.bn_eps, options.bn_momentum)));

  const Var e_pre = add(add(matmul(in.e, fw.param(prefix + ".V1")),
                            gather_rows(matmul(in.h, fw.param(prefix + ".V2")), batch.edge_src)),
                        gather_rows(matmul(in.h, fw.param(prefix + ".V3")), batch.edge_dst));
  const Var e_out = add(in.e, relu(fw.batch_norm(prefix + ".bn_e", e_pre, options.bn_eps, options.bn_momentum)));
  return {h_out, e_out};
}

Var gated_readout(Forward& fw, const std::string& prefix, GraphState state, const GraphBatch& batch) {
  using namespace tensor;
  const Var gate = sigmoid(add(add(matmul(state.e, fw.param(prefix + ".A")),
                                   gather_rows(matmul(state.h, fw.param(prefix + ".B")), batch.edge_src)),
                               gather_rows(matmul(state.h, fw.param(prefix + ".C")), batch.edge_dst)));
  const Var value = matmul(state.e, fw.param(prefix + ".D"));
  return segment_sum(mul(gate, value), batch.edge_graph, batch.graphs());
}

}  // namespace molgen::vae
