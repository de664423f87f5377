// SPDX-License-Identifier: Apache-2.0

#include "molgen/vae/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "molgen/chem/canonical.hpp"

namespace molgen::vae {

using tensor::Tensor;
using tensor::Var;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr const char* kSeenName = "bn.seen";

std::string layer_prefix(const char* part, std::size_t l) {
  return std::string(part) + ".L" + std::to_string(l);
}

void check_latent(std::span<const double> z, std::size_t k) {
  if (z.size() != k) {
    throw tensor::ShapeMismatch("latent has " + std::to_string(z.size()) + " entries, expected " +
                                std::to_string(k));
  }
  for (const double v : z) {
    if (!std::isfinite(v)) throw tensor::NonFiniteValue("latent vector is not finite");
  }
}

// Two-layer MLP: relu(x W1 + b1) W2 + b2.
Var mlp(Forward& fw, const std::string& prefix, Var x) {
  using namespace tensor;
  const Var hidden = relu(add_bias(matmul(x, fw.param(prefix + ".W1")), fw.param(prefix + ".b1")));
  return add_bias(matmul(hidden, fw.param(prefix + ".W2")), fw.param(prefix + ".b2"));
}

void add_mlp_params(tensor::ParamStore& store, const std::string& prefix, std::size_t in,
                    std::size_t hidden, std::size_t out, Rng& rng) {
  store.add(prefix + ".W1", glorot(in, hidden, rng));
  store.add(prefix + ".b1", Tensor({hidden}));
  store.add(prefix + ".W2", glorot(hidden, out, rng));
  store.add(prefix + ".b2", Tensor({out}));
}

}  // namespace

chem::BagOfAtoms argmax_formula(const Tensor& scores) {
  chem::BagOfAtoms boa;
  const std::size_t cols = scores.cols();
  for (std::size_t t = 0; t < scores.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (scores.at(t, c) > scores.at(t, best)) best = c;
    }
    boa.counts.push_back(static_cast<int>(best));
  }
  return boa;
}

chem::BagOfAtoms repaired_formula(const Tensor& scores, int max_total) {
  if (max_total < 1) throw Error("repaired_formula: max_total must be >= 1");
  chem::BagOfAtoms boa = argmax_formula(scores);
  const std::size_t cols = scores.cols();
  if (boa.total() == 0) {
    double best_drop = std::numeric_limits<double>::infinity();
    std::size_t best_row = 0, best_col = 1;
    for (std::size_t t = 0; t < scores.rows(); ++t) {
      for (std::size_t c = 1; c < cols; ++c) {
        const double drop = scores.at(t, 0) - scores.at(t, c);
        if (drop < best_drop) {
          best_drop = drop;
          best_row = t;
          best_col = c;
        }
      }
    }
    boa.counts[best_row] = static_cast<int>(best_col);
  }
  while (boa.total() > max_total) {
    double best_drop = std::numeric_limits<double>::infinity();
    std::size_t best_row = 0;
    for (std::size_t t = 0; t < scores.rows(); ++t) {
      const int c = boa.counts[t];
      if (c == 0) continue;
      const double drop = scores.at(t, static_cast<std::size_t>(c)) - scores.at(t, static_cast<std::size_t>(c - 1));
      if (drop < best_drop) {
        best_drop = drop;
        best_row = t;
      }
    }
    --boa.counts[best_row];
  }
  return boa;
}

double kl_divergence(std::span<const double> mu, std::span<const double> sigma) {
  if (mu.size() != sigma.size()) throw tensor::ShapeMismatch("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw Error("kl_divergence: sigma must be positive");
    kl += 1.0 + 2.0 * std::log(sigma[i]) - mu[i] * mu[i] - sigma[i] * sigma[i];
  }
  return -0.5 * kl;
}

LossBreakdown LossTerms::values() const {
  LossBreakdown out;
  out.edge_ce = edge_ce.value().item();
  out.boa_ce = boa_ce.value().item();
  out.kl = kl.value().item();
  out.prop_l2 = prop_l2 ? prop_l2->value().item() : 0.0;
  out.total = total.value().item();
  return out;
}

std::vector<std::size_t> align_to_formula(const chem::Molecule& mol, const chem::Vocabulary& vocab,
                                          std::span<const chem::Atom> nodes) {
  if (nodes.size() != mol.size()) {
    throw AlignmentError("decoder has " + std::to_string(nodes.size()) + " nodes, molecule has " +
                         std::to_string(mol.size()) + " atoms");
  }
  std::map<std::pair<std::size_t, int>, std::size_t> by_label;
  for (std::size_t a = 0; a < mol.size(); ++a) {
    const auto key = std::make_pair(vocab.index_of(mol.atom(a).type), mol.atom(a).position_index);
    if (!by_label.emplace(key, a).second) {
      throw AlignmentError("duplicate (type, position) label " + chem::to_string(mol.atom(a).type) + "," +
                           std::to_string(key.second));
    }
  }
  std::vector<std::size_t> out;
  out.reserve(nodes.size());
  for (const chem::Atom& node : nodes) {
    const auto it = by_label.find({vocab.index_of(node.type), node.position_index});
    if (it == by_label.end()) {
      throw AlignmentError("decoder node " + chem::to_string(node.type) + "," +
                           std::to_string(node.position_index) + " has no matching atom");
    }
    out.push_back(it->second);
  }
  return out;
}

Model::Model(HyperParams hp, chem::Vocabulary vocab, std::uint64_t seed)
    : hp_(hp), vocab_(std::move(vocab)) {
  hp_.validate();
  if (vocab_.size() == 0) throw InvalidHyperParams("vocabulary is empty");
  init_params(seed);
}

Model::Model(HyperParams hp, chem::Vocabulary vocab, tensor::ParamStore params)
    : Model(hp, std::move(vocab), 0) {
  for (const tensor::Parameter& expected : params_.parameters()) {
    const tensor::Parameter* got = params.find(expected.name);
    if (got == nullptr) throw InvalidHyperParams("missing parameter " + expected.name);
    if (got->value.shape() != expected.value.shape()) {
      throw InvalidHyperParams("parameter " + expected.name + " has shape " +
                               tensor::shape_string(got->value.shape()) + ", expected " +
                               tensor::shape_string(expected.value.shape()));
    }
  }
  if (params.size() != params_.size()) throw InvalidHyperParams("unexpected extra parameters");
  params_ = std::move(params);
}

void Model::init_params(std::uint64_t seed) {
  Rng rng = make_rng(seed, kInitStream);
  const std::size_t d = hp_.d, k = hp_.k, m = vocab_.size(), r = hp_.max_atoms;
  const std::size_t table_rows = m + hp_.max_position;

  params_.add("enc.atom_embed", glorot(table_rows, d, rng));
  params_.add("enc.bond_embed", glorot(chem::kNumBondTypes, d, rng));
  for (std::size_t l = 0; l < hp_.layers; ++l) add_gcn_params(params_, layer_prefix("enc", l), d, r, rng);
  add_readout_params(params_, "enc.mu", d, k, rng);
  add_readout_params(params_, "enc.log_sigma", d, k, rng, /*zero_output=*/true);

  add_mlp_params(params_, "dec.boa", k, d, m * (r + 1), rng);
  params_.add("dec.atom_embed", glorot(table_rows, d, rng));
  params_.add("dec.U", glorot(k, d, rng));
  for (std::size_t l = 0; l < hp_.decoder_layers; ++l) {
    add_gcn_params(params_, layer_prefix("dec", l), d, r, rng);
  }
  add_mlp_params(params_, "dec.edge", d, d, chem::kNumBondTypes, rng);
  add_mlp_params(params_, "prop", k, d, 1, rng);
  // Training batches seen per molecule size.
  params_.add(kSeenName, Tensor({r + 1}), false);
}

void Model::bind_statistics(Forward& fw, std::span<const std::size_t> sizes) const {
  const bool uniform = !sizes.empty() && std::all_of(sizes.begin(), sizes.end(),
                                                     [&](std::size_t n) { return n == sizes.front(); });
  if (fw.mode() == Mode::kTrain) {
    fw.set_statistics_slot(uniform ? std::optional<std::size_t>(sizes.front()) : std::nullopt);
    return;
  }
  if (!uniform) throw Error("evaluation batches must hold molecules of one size");
  fw.set_statistics_slot(statistics_size(sizes.front()));
}

void Model::recalibrate_statistics(std::span<const chem::Molecule> molecules, std::size_t batch_size) {
  if (batch_size == 0) throw Error("recalibrate_statistics: batch_size must be >= 1");
  std::map<std::size_t, std::vector<chem::Molecule>> by_size;
  for (const auto& m : molecules) by_size[m.size()].push_back(chem::canonicalize(m));
  for (const auto& [size, group] : by_size) {
    std::size_t chunk = 0;
    for (std::size_t start = 0; start < group.size(); start += batch_size, ++chunk) {
      std::vector<const chem::Molecule*> batch;
      for (std::size_t i = start; i < std::min(group.size(), start + batch_size); ++i) batch.push_back(&group[i]);
      tensor::Tape tape;
      tape.set_grad_enabled(false);
      Forward fw(tape, params_, Mode::kTrain);
      // Momentum c/(c+1) keeps a plain running mean over chunks.
      fw.set_momentum_override(static_cast<double>(chunk) / static_cast<double>(chunk + 1));
      LossInputs in;
      in.molecules = batch;
      loss(fw, in);
    }
  }
}

std::size_t Model::statistics_size(std::size_t n) const {
  const Tensor& seen = params_.at(kSeenName).value;
  if (n < seen.size() && seen[n] > 0.0) return n;
  // Nearest trained size, smaller on ties; n itself before any training.
  std::size_t best = n, best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t s = 2; s < seen.size(); ++s) {
    const std::size_t gap = s > n ? s - n : n - s;
    if (seen[s] > 0.0 && gap < best_gap) {
      best = s;
      best_gap = gap;
    }
  }
  return best;
}

LayerOptions Model::layer_options() const {
  return LayerOptions{hp_.attention_eps, hp_.bn_eps, hp_.bn_momentum};
}

Var Model::embed_atoms(Forward& fw, const char* table, std::span<const chem::Atom> atoms) const {
  std::vector<std::uint32_t> types, positions;
  types.reserve(atoms.size());
  for (const chem::Atom& a : atoms) {
    types.push_back(static_cast<std::uint32_t>(vocab_.index_of(a.type)));
    if (a.position_index < 1 || static_cast<std::size_t>(a.position_index) > hp_.max_position) {
      throw PositionOverflow("position index " + std::to_string(a.position_index) + " outside 1.." +
                             std::to_string(hp_.max_position));
    }
    positions.push_back(static_cast<std::uint32_t>(vocab_.size() + a.position_index - 1));
  }
  const Var weights = fw.param(table);
  Var out = tensor::embed(weights, tensor::make_index(std::move(types)));
  if (hp_.positional_features) out = tensor::add(out, tensor::embed(weights, tensor::make_index(std::move(positions))));
  return out;
}

Model::Encoded Model::encode(Forward& fw, std::span<const chem::Molecule* const> mols) const {
  std::vector<std::size_t> sizes;
  std::vector<chem::Atom> atoms;
  for (const chem::Molecule* mol : mols) {
    if (mol->size() > hp_.max_atoms) {
      throw OversizeMolecule("molecule has " + std::to_string(mol->size()) + " atoms, limit is " +
                             std::to_string(hp_.max_atoms));
    }
    if (mol->size() < 2) throw UndersizeMolecule("the encoder needs at least 2 atoms");
    sizes.push_back(mol->size());
    atoms.insert(atoms.end(), mol->atoms().begin(), mol->atoms().end());
  }
  const GraphBatch batch = GraphBatch::dense(sizes);
  bind_statistics(fw, sizes);

  std::vector<std::uint32_t> labels;
  labels.reserve(batch.edges());
  for (const chem::Molecule* mol : mols) {
    for (std::size_t i = 0; i < mol->size(); ++i) {
      for (std::size_t j = 0; j < mol->size(); ++j) {
        if (i != j) labels.push_back(static_cast<std::uint32_t>(chem::bond_order(mol->bond(i, j))));
      }
    }
  }

  GraphState state{embed_atoms(fw, "enc.atom_embed", atoms),
                   tensor::embed(fw.param("enc.bond_embed"), tensor::make_index(std::move(labels)))};
  const LayerOptions options = layer_options();
  for (std::size_t l = 0; l < hp_.layers; ++l) {
    state = gcn_layer(fw, layer_prefix("enc", l), state, batch, options);
  }
  return Encoded{state, gated_readout(fw, "enc.mu", state, batch),
                 gated_readout(fw, "enc.log_sigma", state, batch)};
}

Var Model::atom_logits(Forward& fw, Var z) const {
  const Var flat = mlp(fw, "dec.boa", z);
  return tensor::reshape(flat, {z.value().rows() * vocab_.size(), hp_.max_atoms + 1});
}

Var Model::bond_logits(Forward& fw, Var z, std::span<const std::vector<chem::Atom>> nodes,
                       const GraphBatch& layout) const {
  using namespace tensor;
  if (nodes.size() != layout.graphs() || z.value().rows() != layout.graphs()) {
    throw ShapeMismatch("bond_logits: batch size mismatch");
  }
  std::vector<chem::Atom> all;
  for (std::size_t g = 0; g < nodes.size(); ++g) {
    if (nodes[g].size() != layout.sizes[g]) throw ShapeMismatch("bond_logits: node count mismatch");
    all.insert(all.end(), nodes[g].begin(), nodes[g].end());
  }
  bind_statistics(fw, layout.sizes);
  GraphState state{embed_atoms(fw, "dec.atom_embed", all),
                   gather_rows(matmul(z, fw.param("dec.U")), layout.edge_graph)};
  const LayerOptions options = layer_options();
  for (std::size_t l = 0; l < hp_.decoder_layers; ++l) {
    state = gcn_layer(fw, layer_prefix("dec", l), state, layout, options);
  }
  const Var logits = mlp(fw, "dec.edge", state.e);
  return scale(add(logits, gather_rows(logits, layout.edge_reverse)), 0.5);
}

Var Model::property(Forward& fw, Var z) const { return mlp(fw, "prop", z); }

LossTerms Model::loss(Forward& fw, const LossInputs& in) const {
  using namespace tensor;
  const std::size_t graphs = in.molecules.size();
  if (graphs == 0) throw Error("loss: empty batch");
  const Encoded enc = encode(fw, in.molecules);
  Tape& tape = fw.tape();

  Var z = enc.mu;
  if (in.noise != nullptr) {
    if (in.noise->shape() != Shape{graphs, hp_.k}) throw ShapeMismatch("loss: noise must be graphs x k");
    z = add(enc.mu, mul(exp(enc.log_sigma), tape.constant(*in.noise)));
  }

  // Formula head: one count class per (graph, type).
  std::vector<int> count_targets;
  std::vector<std::vector<chem::Atom>> nodes;
  std::vector<std::size_t> sizes;
  std::vector<int> edge_targets;
  for (const chem::Molecule* mol : in.molecules) {
    const chem::BagOfAtoms boa = chem::bag_of_atoms(*mol, vocab_);
    count_targets.insert(count_targets.end(), boa.counts.begin(), boa.counts.end());
    nodes.push_back(chem::expand_formula(boa, vocab_));
    const std::vector<std::size_t> atom_of = align_to_formula(*mol, vocab_, nodes.back());
    sizes.push_back(mol->size());
    for (std::size_t a = 0; a < atom_of.size(); ++a) {
      for (std::size_t b = a + 1; b < atom_of.size(); ++b) {
        edge_targets.push_back(chem::bond_order(mol->bond(atom_of[a], atom_of[b])));
      }
    }
  }
  const Var boa_ce = softmax_cross_entropy(atom_logits(fw, z), count_targets);

  const GraphBatch layout = GraphBatch::dense(sizes);
  const Var logits = bond_logits(fw, z, nodes, layout);
  const Var edge_ce = softmax_cross_entropy(gather_rows(logits, layout.edge_upper), edge_targets);

  // KL = 1/2 sum(mu^2 + sigma^2 - 2 log sigma - 1), averaged over graphs.
  const Var two_log_sigma = scale(enc.log_sigma, 2.0);
  const Var kl_sum = sum(sub(add(square(enc.mu), exp(two_log_sigma)), two_log_sigma));
  const double g = static_cast<double>(graphs);
  const Var kl = scale(add_scalar(kl_sum, -g * static_cast<double>(hp_.k)), 0.5 / g);

  LossTerms terms{{}, edge_ce, boa_ce, kl, std::nullopt};
  Var total = add(scale(edge_ce, hp_.lambda_edge), scale(boa_ce, hp_.lambda_atoms));
  total = add(total, scale(kl, hp_.lambda_kl * in.kl_scale));
  if (!in.property_targets.empty()) {
    if (in.property_targets.size() != graphs) throw ShapeMismatch("loss: one property target per molecule");
    const Var target = tape.constant(
        Tensor({graphs, 1}, std::vector<double>(in.property_targets.begin(), in.property_targets.end())));
    // Regressing from noisy z biases predictions at mu toward the mean.
    const Var l2 = mean(square(sub(property(fw, enc.mu), target)));
    terms.prop_l2 = l2;
    total = add(total, scale(l2, hp_.lambda_prop));
  }
  terms.total = total;
  if (fw.mode() == Mode::kTrain && fw.mutable_store() != nullptr && fw.statistics_slot()) {
    fw.mutable_store()->at(kSeenName).value[*fw.statistics_slot()] += 1.0;
  }
  return terms;
}

LatentGaussian Model::encode(const chem::Molecule& mol, Rng* rng) const {
  const chem::Molecule canonical = chem::canonicalize(mol);
  tensor::Tape tape;
  tape.set_grad_enabled(false);
  Forward fw(tape, params_, Mode::kEval);
  const chem::Molecule* batch[] = {&canonical};
  const Encoded enc = encode(fw, batch);

  LatentGaussian out;
  const auto mu = enc.mu.value().data();
  const auto log_sigma = enc.log_sigma.value().data();
  out.mu.assign(mu.begin(), mu.end());
  out.z = out.mu;
  NormalSampler normal;
  for (std::size_t i = 0; i < hp_.k; ++i) {
    out.sigma.push_back(std::exp(log_sigma[i]));
    if (rng != nullptr) out.z[i] += out.sigma[i] * normal(*rng);
  }
  return out;
}

Tensor Model::atom_scores(std::span<const double> z) const {
  check_latent(z, hp_.k);
  tensor::Tape tape;
  tape.set_grad_enabled(false);
  Forward fw(tape, params_, Mode::kEval);
  const Var zv = tape.constant(Tensor({1, hp_.k}, std::vector<double>(z.begin(), z.end())));
  return atom_logits(fw, zv).value();
}

BoaScores Model::decode_atoms(std::span<const double> z) const {
  BoaScores out{atom_scores(z), {}};
  out.formula = argmax_formula(out.scores);
  if (out.formula.total() == 0) throw DegenerateFormula("every atom count decoded as zero");
  return out;
}

beam::EdgeScores Model::decode_bonds(std::span<const double> z, const chem::BagOfAtoms& boa) const {
  check_latent(z, hp_.k);
  const int total = boa.total();
  if (total > static_cast<int>(hp_.max_atoms)) {
    throw FormulaTooLarge("formula has " + std::to_string(total) + " atoms, limit is " +
                          std::to_string(hp_.max_atoms));
  }
  if (total < 2) throw DegenerateFormula("bond decoding needs at least 2 atoms");
  const std::vector<std::vector<chem::Atom>> nodes{chem::expand_formula(boa, vocab_)};
  const std::size_t n = nodes[0].size();
  const std::size_t sizes[] = {n};
  const GraphBatch layout = GraphBatch::dense(sizes);

  tensor::Tape tape;
  tape.set_grad_enabled(false);
  Forward fw(tape, params_, Mode::kEval);
  const Var zv = tape.constant(Tensor({1, hp_.k}, std::vector<double>(z.begin(), z.end())));
  const Tensor& logits = bond_logits(fw, zv, nodes, layout).value();

  constexpr std::size_t kB = chem::kNumBondTypes;
  std::vector<double> dense(n * n * kB, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const std::size_t row = layout.edge_row(0, i, j);
      for (std::size_t t = 0; t < kB; ++t) dense[(i * n + j) * kB + t] = logits.at(row, t);
    }
  }
  return beam::EdgeScores::from_logits(n, dense);
}

double Model::predict_property(std::span<const double> z) const {
  check_latent(z, hp_.k);
  tensor::Tape tape;
  tape.set_grad_enabled(false);
  Forward fw(tape, params_, Mode::kEval);
  const Var zv = tape.constant(Tensor({1, hp_.k}, std::vector<double>(z.begin(), z.end())));
  return property(fw, zv).value().item();
}

std::vector<double> Model::property_gradient(std::span<const double> z) const {
  check_latent(z, hp_.k);
  tensor::Tape tape;
  Forward fw(tape, params_, Mode::kEval);
  const Var zv = tape.variable(Tensor({1, hp_.k}, std::vector<double>(z.begin(), z.end())));
  tape.backward(tensor::sum(property(fw, zv)));
  const Tensor grad = tape.grad(zv);
  return {grad.data().begin(), grad.data().end()};
}

std::map<std::string, std::string> Model::header() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : hp_.to_map()) out["hp." + key] = value;
  out["vocab"] = vocab_.to_text();
  return out;
}

Model Model::from_checkpoint(tensor::Checkpoint checkpoint) {
  std::map<std::string, std::string> hp_values;
  for (const auto& [key, value] : checkpoint.header) {
    if (key.starts_with("hp.")) hp_values[key.substr(3)] = value;
  }
  const auto vocab_it = checkpoint.header.find("vocab");
  if (vocab_it == checkpoint.header.end()) throw tensor::CheckpointError("checkpoint has no vocabulary");
  std::istringstream vocab_text(vocab_it->second);
  return Model(HyperParams::from_map(hp_values), chem::Vocabulary::parse(vocab_text),
               std::move(checkpoint.params));
}

}  // namespace molgen::vae
