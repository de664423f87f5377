// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include "../support/gradcheck.hpp"
#include "../support/model_gradcheck.hpp"
#include "doctest.h"
#include "molgen/chem/canonical.hpp"
#include "molgen/chem/corpus.hpp"
#include "molgen/chem/smiles.hpp"
#include "molgen/vae/model.hpp"

using namespace molgen;
using namespace molgen::vae;
using molgen::testing::random_tensor;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

const std::string kData = MOLGEN_TEST_DATA;

HyperParams tiny() {
  HyperParams hp;
  hp.d = 6;
  hp.k = 5;
  hp.layers = 2;
  hp.decoder_layers = 2;
  hp.max_atoms = 6;
  hp.max_position = 6;
  return hp;
}

HyperParams small() {
  HyperParams hp;
  hp.d = 16;
  hp.k = 8;
  hp.layers = 2;
  hp.decoder_layers = 2;
  hp.max_atoms = 12;
  hp.max_position = 12;
  return hp;
}

struct LayerFixture {
  tensor::ParamStore store;
  std::size_t n, d;
  Tensor h, e;

  LayerFixture(std::size_t nodes, std::size_t width, std::uint64_t seed) : n(nodes), d(width) {
    Rng rng = make_rng(seed, 0);
    add_gcn_params(store, "g", d, n, rng);
    store.at("g.bn_h.gamma").value = random_tensor({d}, rng, 0.5, 1.5);
    store.at("g.bn_h.beta").value = random_tensor({d}, rng);
    store.at("g.bn_e.gamma").value = random_tensor({d}, rng, 0.5, 1.5);
    store.at("g.bn_e.beta").value = random_tensor({d}, rng);
    h = random_tensor({n, d}, rng);
    e = random_tensor({n * (n - 1), d}, rng);
  }

  std::pair<Tensor, Tensor> run(const Tensor& hv, const Tensor& ev, Mode mode = Mode::kTrain) const {
    Tape tape;
    Forward fw(tape, store, mode);
    fw.set_statistics_slot(n);
    const std::size_t sizes[] = {n};
    const GraphBatch batch = GraphBatch::dense(sizes);
    const GraphState out = gcn_layer(fw, "g", {tape.constant(hv), tape.constant(ev)}, batch, {});
    return {out.h.value(), out.e.value()};
  }
};

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  shuffle(p, rng);
  return p;
}

chem::BagOfAtoms formula_of(const std::string& smiles, const chem::Vocabulary& v = chem::Vocabulary::standard()) {
  return chem::bag_of_atoms(chem::parse_smiles(smiles, v), v);
}

}  // namespace

TEST_CASE("hyperparameters") {
  HyperParams hp = tiny();
  hp.positional_features = false;
  hp.lambda_kl = 0.125;
  CHECK(HyperParams::from_map(hp.to_map()) == hp);
  HyperParams bad = tiny();
  bad.max_position = 3;
  CHECK_THROWS_AS(bad.validate(), InvalidHyperParams);
  bad = tiny();
  bad.lambda_edge = -1;
  CHECK_THROWS_AS(bad.validate(), InvalidHyperParams);
  CHECK_THROWS_AS(HyperParams::from_map({{"depth", "3"}}), InvalidHyperParams);
  CHECK_THROWS_AS(HyperParams::from_map({{"d", "x"}}), InvalidHyperParams);
  const HyperParams defaults;
  CHECK(defaults.d == 128);
  CHECK(defaults.k == 56);
  CHECK(defaults.layers == 4);
  CHECK(defaults.decoder_layers == 4);
  CHECK(defaults.lambda_kl == 1e-2);
}

TEST_CASE("dense graph layout") {
  const std::size_t sizes[] = {3, 2};
  const GraphBatch b = GraphBatch::dense(sizes);
  CHECK(b.nodes() == 5);
  CHECK(b.edges() == 8);
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t i = 0; i < sizes[g]; ++i) {
      for (std::size_t j = 0; j < sizes[g]; ++j) {
        if (i == j) continue;
        const std::size_t row = b.edge_row(g, i, j);
        CHECK((*b.edge_src)[row] == b.node_offset[g] + i);
        CHECK((*b.edge_dst)[row] == b.node_offset[g] + j);
        CHECK((*b.edge_graph)[row] == g);
        CHECK((*b.edge_reverse)[row] == b.edge_row(g, j, i));
      }
    }
  }
  CHECK(b.edge_upper->size() == 4);
  for (const auto row : *b.edge_upper) CHECK((*b.edge_src)[row] < (*b.edge_dst)[row]);
}

TEST_CASE("gcn layer with zero weights is the identity") {
  LayerFixture f(4, 5, 1);
  for (const char* w : {"g.W1", "g.W2", "g.V1", "g.V2", "g.V3"}) f.store.at(w).value.fill(0.0);
  for (const char* g : {"g.bn_h.gamma", "g.bn_e.gamma"}) f.store.at(g).value.fill(1.0);
  for (const char* b : {"g.bn_h.beta", "g.bn_e.beta"}) f.store.at(b).value.fill(0.0);
  const auto [h, e] = f.run(f.h, f.e);
  CHECK(h == f.h);
  CHECK(e == f.e);
}

TEST_CASE("gcn layer is permutation-equivariant") {
  Rng rng = make_rng(2, 0);
  for (const Mode mode : {Mode::kTrain, Mode::kEval}) {
    for (int trial = 0; trial < 10; ++trial) {
      LayerFixture f(2 + uniform_index(rng, 6), 4, 100 + trial);
      const std::size_t n = f.n;
      const auto perm = random_permutation(n, rng);
      const std::size_t sizes[] = {n};
      const GraphBatch b = GraphBatch::dense(sizes);
      Tensor hp({n, f.d}), ep({n * (n - 1), f.d});
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t c = 0; c < f.d; ++c) hp.at(k, c) = f.h.at(perm[k], c);
        for (std::size_t l = 0; l < n; ++l) {
          if (k == l) continue;
          for (std::size_t c = 0; c < f.d; ++c) ep.at(b.edge_row(0, k, l), c) = f.e.at(b.edge_row(0, perm[k], perm[l]), c);
        }
      }
      const auto [h, e] = f.run(f.h, f.e, mode);
      const auto [h2, e2] = f.run(hp, ep, mode);
      double worst = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t c = 0; c < f.d; ++c) worst = std::max(worst, std::abs(h2.at(k, c) - h.at(perm[k], c)));
        for (std::size_t l = 0; l < n; ++l) {
          if (k == l) continue;
          for (std::size_t c = 0; c < f.d; ++c) {
            worst = std::max(worst, std::abs(e2.at(b.edge_row(0, k, l), c) - e.at(b.edge_row(0, perm[k], perm[l]), c)));
          }
        }
      }
      CHECK(worst <= 1e-12);
    }
  }
}

TEST_CASE("gcn layer gradients match finite differences") {
  for (int trial = 0; trial < 3; ++trial) {
    LayerFixture f(3, 4, 40 + trial);
    const std::size_t sizes[] = {3};
    const GraphBatch batch = GraphBatch::dense(sizes);
    Rng weights = make_rng(7, trial);
    const Tensor wh = random_tensor({3, 4}, weights), we = random_tensor({6, 4}, weights);
    auto loss_of = [&](Tape& tape, GraphState out) {
      return tensor::add(tensor::sum(tensor::mul(out.h, tape.constant(wh))),
                         tensor::sum(tensor::mul(out.e, tape.constant(we))));
    };
    // Inputs.
    const double input_error = molgen::testing::gradient_error(
        {f.h, f.e}, [&](Tape& tape, std::span<const Var> v) {
          Forward fw(tape, static_cast<const tensor::ParamStore&>(f.store), Mode::kTrain);
          return loss_of(tape, gcn_layer(fw, "g", {v[0], v[1]}, batch, {}));
        });
    CHECK(input_error <= 1e-4);
    // Parameters.
    const double param_error = molgen::testing::param_gradient_error(f.store, [&](Forward& fw) {
      Tape& tape = fw.tape();
      return loss_of(tape, gcn_layer(fw, "g", {tape.constant(f.h), tape.constant(f.e)}, batch, {}));
    });
    CHECK(param_error <= 1e-4);
  }
}

TEST_CASE("end-to-end loss gradient on a 4-atom molecule") {
  const chem::Molecule mol = chem::parse_smiles("OC(=O)C");
  REQUIRE(mol.size() == 4);
  for (int trial = 0; trial < 2; ++trial) {
    Model model(tiny(), chem::Vocabulary::standard(), 500 + trial);
    Rng rng = make_rng(9, trial);
    // Start the sigma head away from zero so its gradient path is exercised.
    model.params().at("enc.log_sigma.D").value = random_tensor({6, 5}, rng, -0.3, 0.3);
    const Tensor noise = random_tensor({1, 5}, rng);
    const chem::Molecule* batch[] = {&mol};
    const double target[] = {0.7};
    const double err = molgen::testing::param_gradient_error(model.params(), [&](Forward& fw) {
      LossInputs in;
      in.molecules = batch;
      in.property_targets = target;
      in.noise = &noise;
      return model.loss(fw, in).total;
    });
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("encoder") {
  Model model(small(), chem::Vocabulary::standard(), 3);
  const chem::Molecule mol = chem::parse_smiles("Cc1ccc(O)cc1");

  SUBCASE("eps = 0 gives z = mu") {
    const LatentGaussian g = model.encode(mol);
    CHECK(g.z == g.mu);
    for (const double s : g.sigma) CHECK(s > 0.0);
  }
  SUBCASE("latent is invariant to atom order") {
    const LatentGaussian ref = model.encode(mol);
    Rng rng = make_rng(4, 0);
    for (int t = 0; t < 20; ++t) {
      const LatentGaussian g = model.encode(mol.permuted(random_permutation(mol.size(), rng)));
      for (std::size_t i = 0; i < ref.mu.size(); ++i) {
        CHECK(std::abs(g.mu[i] - ref.mu[i]) <= 1e-9);
        CHECK(std::abs(g.sigma[i] - ref.sigma[i]) <= 1e-9);
      }
    }
  }
  SUBCASE("sampled z concentrates around mu") {
    model.params().at("enc.log_sigma.D").value = random_tensor({16, 8}, *std::make_unique<Rng>(make_rng(5, 0)), -0.05, 0.05);
    Rng rng = make_rng(6, 0);
    const LatentGaussian ref = model.encode(mol);
    std::vector<double> sum(ref.mu.size(), 0.0);
    const int samples = 10000;
    for (int s = 0; s < samples; ++s) {
      const LatentGaussian g = model.encode(mol, &rng);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g.z[i];
    }
    int within = 0;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      within += std::abs(sum[i] / samples - ref.mu[i]) <= 4.0 * ref.sigma[i] / std::sqrt(double(samples));
    }
    CHECK(within >= static_cast<int>(0.95 * static_cast<double>(sum.size())));
  }
  SUBCASE("errors") {
    HyperParams hp = small();
    hp.max_atoms = 4;
    hp.max_position = 4;
    Model narrow(hp, chem::Vocabulary::standard(), 1);
    CHECK_THROWS_AS(narrow.encode(mol), OversizeMolecule);
    CHECK_THROWS_AS(model.encode(chem::parse_smiles("C")), UndersizeMolecule);
    const chem::Vocabulary cno({{{chem::Element::C, 0}, 4}, {{chem::Element::O, 0}, 2}});
    Model cno_model(small(), cno, 1);
    CHECK_THROWS_AS(cno_model.encode(chem::parse_smiles("CCN")), chem::UnknownType);
  }
}

TEST_CASE("atom embeddings") {
  HyperParams hp = small();
  Model model(hp, chem::Vocabulary::standard(), 8);
  const std::vector<chem::Atom> atoms{{{chem::Element::O, 0}, 1}, {{chem::Element::O, 0}, 2}};
  {
    Tape tape;
    Forward fw(tape, static_cast<const tensor::ParamStore&>(model.params()), Mode::kEval);
    const Tensor& v = model.embed_atoms(fw, "enc.atom_embed", atoms).value();
    bool differ = false;
    for (std::size_t c = 0; c < hp.d; ++c) differ |= v.at(0, c) != v.at(1, c);
    CHECK(differ);
  }
  Model zero = model;
  zero.params().at("enc.atom_embed").value.fill(0.0);
  {
    Tape tape;
    Forward fw(tape, static_cast<const tensor::ParamStore&>(zero.params()), Mode::kEval);
    for (const double x : zero.embed_atoms(fw, "enc.atom_embed", atoms).value().data()) CHECK(x == 0.0);
  }
  const std::vector<chem::Atom> overflow{{{chem::Element::C, 0}, static_cast<int>(hp.max_position) + 1}};
  Tape tape;
  Forward fw(tape, static_cast<const tensor::ParamStore&>(model.params()), Mode::kEval);
  CHECK_THROWS_AS(model.embed_atoms(fw, "enc.atom_embed", overflow), PositionOverflow);

  // The loss gradient reaches only the rows of the types and positions present.
  const chem::Molecule mol = chem::parse_smiles("OCC(=O)O");
  model.params().zero_grad();
  {
    Tape t2;
    Forward train(t2, model.params(), Mode::kTrain);
    const chem::Molecule* batch[] = {&mol};
    LossInputs in;
    in.molecules = batch;
    t2.backward(model.loss(train, in).total);
  }
  const auto& vocab = chem::Vocabulary::standard();
  std::set<std::size_t> active;
  for (const chem::Atom& a : mol.atoms()) {
    active.insert(vocab.index_of(a.type));
    active.insert(vocab.size() + static_cast<std::size_t>(a.position_index) - 1);
  }
  const Tensor& g = model.params().at("enc.atom_embed").grad;
  for (std::size_t row = 0; row < g.rows(); ++row) {
    double norm = 0.0;
    for (std::size_t c = 0; c < g.cols(); ++c) norm += std::abs(g.at(row, c));
    CHECK((norm > 0.0) == (active.count(row) == 1));
  }
}

TEST_CASE("formula decoding") {
  Tensor scores({3, 4}, {0, 5, 1, 0,    // count 1
                         3, 1, 0, 0,    // count 0
                         0, 1, 4, 2});  // count 2
  CHECK(argmax_formula(scores).counts == std::vector<int>{1, 0, 2});
  Tensor tie({1, 4}, {0, 1, 3, 3});
  CHECK(argmax_formula(tie).counts == std::vector<int>{2});

  Tensor empty({2, 3}, {5, 1, 0, 4, 3.5, 0});
  CHECK(argmax_formula(empty).total() == 0);
  CHECK(repaired_formula(empty, 5).counts == std::vector<int>{0, 1});
  Tensor big({2, 4}, {0, 0, 1, 3, 0, 0, 0, 9});
  const chem::BagOfAtoms fixed = repaired_formula(big, 4);
  CHECK(fixed.total() == 4);
  CHECK(fixed.counts == std::vector<int>{1, 3});

  Model model(small(), chem::Vocabulary::standard(), 2);
  const std::vector<double> z(8, 0.1);
  const Tensor s = model.atom_scores(z);
  CHECK(s.rows() == 16);
  CHECK(s.cols() == 13);
  model.params().at("dec.boa.W2").value.fill(0.0);
  Tensor& bias = model.params().at("dec.boa.b2").value;
  bias.fill(0.0);
  for (std::size_t t = 0; t < 16; ++t) bias[t * 13] = 1.0;
  CHECK_THROWS_AS(model.decode_atoms(z), DegenerateFormula);
}

TEST_CASE("bond decoder symmetry breaking") {
  const chem::BagOfAtoms boa = formula_of("OCC(C)O");  // C x3, O x2
  Rng rng = make_rng(10, 0);
  std::vector<double> z(8);
  for (double& v : z) v = uniform01(rng) - 0.5;

  HyperParams off = small();
  off.positional_features = false;
  const Model model_off(off, chem::Vocabulary::standard(), 11);
  const beam::EdgeScores s_off = model_off.decode_bonds(z, boa);
  // Nodes: C1 C2 C3 O1 O2.
  for (const auto [a, b] : {std::pair{0, 1}, std::pair{1, 2}, std::pair{3, 4}}) {
    for (std::size_t c = 0; c < 5; ++c) {
      if (c == std::size_t(a) || c == std::size_t(b)) continue;
      for (std::size_t t = 0; t < 4; ++t) {
        CHECK(s_off.prob(a, c, chem::BondType(t)) == s_off.prob(b, c, chem::BondType(t)));
      }
    }
  }

  const Model model_on(small(), chem::Vocabulary::standard(), 11);
  const beam::EdgeScores s_on = model_on.decode_bonds(z, boa);
  double largest = 0.0;
  for (std::size_t t = 0; t < 4; ++t) {
    largest = std::max(largest, std::abs(s_on.prob(0, 3, chem::BondType(t)) - s_on.prob(1, 3, chem::BondType(t))));
  }
  CHECK(largest > 1e-6);

  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double total = 0.0;
      for (std::size_t t = 0; t < 4; ++t) {
        CHECK(s_on.prob(i, j, chem::BondType(t)) == s_on.prob(j, i, chem::BondType(t)));
        total += s_on.prob(i, j, chem::BondType(t));
      }
      CHECK(total == doctest::Approx(1.0));
    }
  }
  chem::BagOfAtoms huge = boa;
  huge.counts[1] = 20;
  CHECK_THROWS_AS(model_on.decode_bonds(z, huge), FormulaTooLarge);
}

TEST_CASE("property head") {
  Model model(small(), chem::Vocabulary::standard(), 12);
  Rng rng = make_rng(13, 0);
  std::vector<double> z(8);
  for (double& v : z) v = uniform01(rng) - 0.5;

  const std::vector<double> grad = model.property_gradient(z);
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    std::vector<double> up = z, down = z;
    up[i] += 1e-5;
    down[i] -= 1e-5;
    const double numeric = (model.predict_property(up) - model.predict_property(down)) / 2e-5;
    worst = std::max(worst, std::abs(numeric - grad[i]));
    scale = std::max(scale, std::abs(numeric));
  }
  CHECK(worst / std::max(scale, 1e-8) <= 1e-4);

  for (const char* name : {"prop.W1", "prop.W2", "prop.b1"}) model.params().at(name).value.fill(0.0);
  model.params().at("prop.b2").value[0] = 1.25;
  CHECK(model.predict_property(z) == 1.25);
  for (const double g : model.property_gradient(z)) CHECK(g == 0.0);
}

TEST_CASE("loss terms") {
  const double zero[] = {0.0}, one[] = {1.0};
  CHECK(kl_divergence(zero, one) == 0.0);
  CHECK(kl_divergence(one, one) == 0.5);
  Rng rng = make_rng(14, 0);
  for (int t = 0; t < 1000; ++t) {
    const double mu[] = {4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2};
    const double sigma[] = {0.01 + 3 * uniform01(rng), 0.01 + 3 * uniform01(rng)};
    CHECK(kl_divergence(mu, sigma) >= 0.0);
  }

  Tape tape;
  Tensor logits({2, 4}, -50.0);
  logits.at(0, 1) = 50.0;
  logits.at(1, 3) = 50.0;
  const int targets[] = {1, 3};
  CHECK(tensor::softmax_cross_entropy(tape.constant(logits), targets).value().item() < 1e-40);

  Model model(small(), chem::Vocabulary::standard(), 15);
  const chem::Molecule a = chem::parse_smiles("CCO"), b = chem::parse_smiles("CCN");
  const chem::Molecule* batch[] = {&a, &b};
  Tape t2;
  Forward fw(t2, static_cast<const tensor::ParamStore&>(model.params()), Mode::kTrain);
  LossInputs in;
  in.molecules = batch;
  const LossTerms terms = model.loss(fw, in);
  const LossBreakdown v = terms.values();
  const HyperParams& hp = model.hyper();
  CHECK(v.total == doctest::Approx(hp.lambda_edge * v.edge_ce + hp.lambda_atoms * v.boa_ce + hp.lambda_kl * v.kl));
  CHECK_FALSE(terms.prop_l2.has_value());
  // The batch KL matches the per-molecule closed form averaged over graphs.
  Tape t3;
  Forward fw3(t3, static_cast<const tensor::ParamStore&>(model.params()), Mode::kTrain);
  const Model::Encoded enc = model.encode(fw3, batch);
  double expect = 0.0;
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<double> mu, sigma;
    for (std::size_t i = 0; i < hp.k; ++i) {
      mu.push_back(enc.mu.value().at(g, i));
      sigma.push_back(std::exp(enc.log_sigma.value().at(g, i)));
    }
    expect += kl_divergence(mu, sigma) / 2.0;
  }
  CHECK(v.kl == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("teacher forcing alignment over the corpus") {
  const auto corpus = chem::read_corpus(std::filesystem::path(kData + "/toy100.smi"));
  const auto& vocab = chem::Vocabulary::standard();
  for (const auto& entry : corpus.entries) {
    const auto nodes = chem::expand_formula(chem::bag_of_atoms(entry.molecule, vocab), vocab);
    const auto atom_of = align_to_formula(entry.molecule, vocab, nodes);
    std::set<std::size_t> used(atom_of.begin(), atom_of.end());
    CHECK(used.size() == entry.molecule.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) CHECK(entry.molecule.atom(atom_of[k]) == nodes[k]);
  }
  // Duplicate labels cannot be aligned.
  const chem::Molecule bad({{{chem::Element::C, 0}, 1}, {{chem::Element::C, 0}, 1}}, chem::BondMatrix(2));
  const auto nodes = chem::expand_formula(chem::bag_of_atoms(bad, vocab), vocab);
  CHECK_THROWS_AS(align_to_formula(bad, vocab, nodes), AlignmentError);
}

TEST_CASE("checkpoint round trip and concurrent evaluation") {
  Model model(small(), chem::Vocabulary::standard(), 16);
  std::stringstream buf;
  tensor::write_checkpoint(buf, model.header(), model.params());
  const Model back = Model::from_checkpoint(tensor::read_checkpoint(buf));
  CHECK(back.hyper() == model.hyper());
  CHECK(back.vocab() == model.vocab());
  const chem::Molecule mol = chem::parse_smiles("c1ccncc1");
  CHECK(back.encode(mol).mu == model.encode(mol).mu);

  tensor::Checkpoint wrong{model.header(), {}};
  CHECK_THROWS_AS(Model::from_checkpoint(std::move(wrong)), InvalidHyperParams);

  const auto expect = model.encode(mol).mu;
  std::vector<std::vector<double>> results(4);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] { results[t] = model.encode(mol).mu; });
  }
  for (auto& th : threads) th.join();
  for (const auto& r : results) CHECK(r == expect);
}
