// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "molgen/beam/beam.hpp"
#include "molgen/chem/canonical.hpp"
#include "molgen/chem/corpus.hpp"
#include "molgen/chem/smiles.hpp"
#include "molgen/train/trainer.hpp"
#include "molgen/util/io.hpp"

using namespace molgen;
using namespace molgen::train;

namespace {

const std::string kData = MOLGEN_TEST_DATA;

vae::HyperParams small(std::size_t r = 12) {
  vae::HyperParams hp;
  hp.d = 16;
  hp.k = 8;
  hp.layers = 2;
  hp.decoder_layers = 2;
  hp.max_atoms = r;
  hp.max_position = r;
  return hp;
}

std::vector<chem::Molecule> parse_all(std::initializer_list<const char*> smiles,
                                      const chem::Vocabulary& vocab = chem::Vocabulary::standard()) {
  std::vector<chem::Molecule> out;
  for (const char* s : smiles) out.push_back(chem::parse_smiles(s, vocab));
  return out;
}

std::vector<chem::Molecule> toy_corpus() {
  std::vector<chem::Molecule> out;
  for (auto& e : chem::read_corpus(std::filesystem::path(kData + "/toy100.smi")).entries) {
    out.push_back(std::move(e.molecule));
  }
  return out;
}

// Capacity checks keep the rate nearly constant: with one molecule per
// batch the epoch loss is dominated by latent noise and the 1% rule would
// end training on noise.
TrainConfig steady(std::size_t epochs, std::size_t passes) {
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.passes_per_epoch = passes;
  cfg.lr_decay_factor = 1.0001;
  return cfg;
}

bool reconstructs(const vae::Model& model, const chem::Molecule& mol) {
  const auto latent = model.encode(mol);
  const auto boa = model.decode_atoms(latent.mu).formula;
  if (boa.total() < 2 || static_cast<std::size_t>(boa.total()) > model.hyper().max_atoms) return false;
  const auto result = beam::beam_decode(model.decode_bonds(latent.mu, boa), boa, model.vocab());
  return chem::write_smiles(chem::canonicalize(result.molecule)) == chem::write_smiles(chem::canonicalize(mol));
}

std::string without_wall_clock(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

}  // namespace

TEST_CASE("training configuration") {
  TrainConfig c;
  c.seed = 99;
  c.passes_per_epoch = 3;
  c.property_supervision = true;
  c.initial_lr = 0.25;
  CHECK(TrainConfig::from_map(c.to_map()) == c);
  CHECK_THROWS_AS(TrainConfig::from_map({{"epochs", "3"}}), InvalidTrainConfig);
  CHECK_THROWS_AS(TrainConfig::from_map({{"batch_size", "0"}}), InvalidTrainConfig);
  CHECK_THROWS_AS(TrainConfig::from_map({{"lr_decay_factor", "1"}}), InvalidTrainConfig);
  CHECK_THROWS_AS(TrainConfig::from_map({{"seed", "-1"}}), InvalidTrainConfig);
  const TrainConfig defaults;
  CHECK(defaults.batch_size == 50);
  CHECK(defaults.lr_decay_factor == 1.25);
  CHECK(defaults.improvement_threshold == 0.01);
  CHECK(defaults.stop_lr == 1e-6);
}

TEST_CASE("bucketing") {
  const auto mols = parse_all({"CCC", "CCO", "CCCCC"});
  const auto buckets = bucket_corpus(mols);
  REQUIRE(buckets.size() == 2);
  CHECK(buckets[0].size == 3);
  CHECK(buckets[0].members == std::vector<std::size_t>{0, 1});
  CHECK(buckets[1].size == 5);
  CHECK(buckets[1].members == std::vector<std::size_t>{2});

  CHECK(bucket_corpus(parse_all({"CC", "CO", "OO"})).size() == 1);
  CHECK_THROWS_AS(bucket_corpus(std::vector<chem::Molecule>{}), EmptyCorpus);

  // Histogram against an independent atom count from the reference table.
  std::map<std::size_t, std::size_t> expected;
  std::ifstream ref(kData + "/toy100_reference.tsv");
  std::string line;
  while (std::getline(ref, line)) {
    if (line.starts_with("#")) continue;
    std::istringstream fields(line);
    std::string smiles, atoms;
    std::getline(fields, smiles, '\t');
    std::getline(fields, atoms, '\t');
    ++expected[std::stoul(atoms)];
  }
  std::map<std::size_t, std::size_t> got;
  for (const Bucket& b : bucket_corpus(toy_corpus())) got[b.size] = b.members.size();
  CHECK(got == expected);
}

TEST_CASE("batches stay within one size and cover the corpus once") {
  const auto mols = toy_corpus();
  const auto buckets = bucket_corpus(mols);
  Rng rng = make_rng(1, 0);
  for (const std::size_t batch_size : {1, 4, 7, 50}) {
    const auto batches = make_batches(buckets, batch_size, rng);
    std::multiset<std::size_t> seen;
    for (const auto& batch : batches) {
      CHECK(!batch.empty());
      CHECK(batch.size() <= batch_size);
      for (const std::size_t i : batch) {
        CHECK(mols[i].size() == mols[batch.front()].size());
        seen.insert(i);
      }
    }
    CHECK(seen.size() == mols.size());
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == mols.size());
  }
}

TEST_CASE("learning-rate schedule") {
  const ScheduleStep hold = lr_schedule_step(1.0, 0.98, 1e-3);
  CHECK(hold.lr == 1e-3);
  CHECK_FALSE(hold.stop);
  const ScheduleStep decay = lr_schedule_step(1.0, 0.995, 1e-3);
  CHECK(decay.lr == 1e-3 / 1.25);
  CHECK_FALSE(decay.stop);
  const ScheduleStep stop = lr_schedule_step(1.0, 1.0, 1.2e-6);
  CHECK(stop.lr == doctest::Approx(0.96e-6).epsilon(1e-15));
  CHECK(stop.stop);

  // Any bounded loss sequence ends within log_1.25(lr0 / 1e-6) flat epochs.
  Rng rng = make_rng(3, 0);
  for (int trial = 0; trial < 200; ++trial) {
    double lr = 1e-3, prev = 10.0;
    int epochs = 0, flat = 0;
    bool stopped = false;
    while (!stopped && epochs < 100000) {
      const double loss = uniform01(rng) < 0.3 ? prev * (0.9 + 0.05 * uniform01(rng)) : 0.5 + uniform01(rng);
      const ScheduleStep s = lr_schedule_step(prev, loss, lr);
      CHECK(s.lr <= lr);
      flat += s.lr < lr;
      lr = s.lr;
      stopped = s.stop;
      prev = loss;
      ++epochs;
    }
    CHECK(stopped);
    CHECK(flat == static_cast<int>(std::ceil(std::log(1e-3 / 1e-6) / std::log(1.25))));
  }
}

TEST_CASE("property scale") {
  const double values[] = {1.0, 2.0, 3.0, 6.0};
  const PropertyScale s = PropertyScale::fit(values);
  CHECK(s.mean == 3.0);
  CHECK(s.stddev == doctest::Approx(std::sqrt(3.5)));
  CHECK(s.raw(s.normalise(4.5)) == doctest::Approx(4.5));
  std::map<std::string, std::string> header;
  s.write(header);
  const PropertyScale back = PropertyScale::read(header);
  CHECK(back.mean == s.mean);
  CHECK(back.stddev == s.stddev);
  const double constant[] = {2.0, 2.0};
  CHECK(PropertyScale::fit(constant).stddev == 1.0);
}

TEST_CASE("a single molecule is memorised") {
  TrainConfig cfg = steady(200, 10);
  cfg.seed = 2;
  const auto mols = parse_all({"CC(=O)Nc1ccccc1"});
  Trainer trainer(cfg, vae::Model(small(), chem::Vocabulary::standard(), 2), mols);
  EpochMetrics last;
  while (!trainer.finished()) last = trainer.run_epoch();
  MESSAGE("last training epoch loss " << last.loss.total);
  CHECK(last.loss.total < 1e-2);
  const vae::LossBreakdown loss = evaluation_loss(trainer.model(), mols);
  MESSAGE("final loss " << loss.total << " (edge " << loss.edge_ce << ", formula " << loss.boa_ce << ", KL "
                        << loss.kl << ")");
  CHECK(loss.total < 1e-2);
  CHECK(reconstructs(trainer.model(), mols[0]));
}

TEST_CASE("CO2 formula is recovered") {
  const chem::Vocabulary cno({{{chem::Element::C, 0}, 4}, {{chem::Element::N, 0}, 3}, {{chem::Element::O, 0}, 2}});
  const TrainConfig cfg = steady(100, 5);
  const auto mols = parse_all({"O=C=O"}, cno);
  Trainer trainer(cfg, vae::Model(small(4), cno, 5), mols);
  while (!trainer.finished()) trainer.run_epoch();
  const auto& model = trainer.model();
  CHECK(model.decode_atoms(model.encode(mols[0]).mu).formula.counts == std::vector<int>{1, 0, 2});
  CHECK(reconstructs(model, mols[0]));
}

TEST_CASE("property head fits a small corpus") {
  const auto mols = parse_all({"CC", "CCO", "CCCO", "OCCCO", "CC(C)CO", "c1ccccc1", "CC(=O)OC", "CCN(CC)CC",
                               "OC1CCCCC1", "CCCCCCCCC"});
  std::vector<double> atoms;
  for (const auto& m : mols) atoms.push_back(static_cast<double>(m.size()));
  // A gentle decay lets the rate settle; a constant rate leaves ~0.1 of jitter.
  TrainConfig cfg = steady(200, 30);
  cfg.lr_decay_factor = 1.05;
  cfg.property_supervision = true;
  Trainer trainer(cfg, vae::Model(small(), chem::Vocabulary::standard(), 6), mols, atoms);
  while (!trainer.finished()) trainer.run_epoch();
  double worst = 0.0;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    const auto& model = trainer.model();
    const double predicted = trainer.property_scale().raw(model.predict_property(model.encode(mols[i]).mu));
    worst = std::max(worst, std::abs(predicted - atoms[i]));
  }
  MESSAGE("largest property error " << worst);
  CHECK(worst <= 0.05);
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  auto mols = toy_corpus();
  mols.resize(30);
  std::vector<double> prop;
  for (const auto& m : mols) prop.push_back(static_cast<double>(m.size()));
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.batch_size = 4;
  cfg.seed = 11;
  cfg.property_supervision = true;
  cfg.kl_warmup_epochs = 3;
  const vae::Model init(small(), chem::Vocabulary::standard(), 3);

  Trainer straight(cfg, init, mols, prop);
  std::vector<EpochMetrics> reference;
  while (!straight.finished()) reference.push_back(straight.run_epoch());

  Trainer first(cfg, init, mols, prop);
  first.run_epoch();
  first.run_epoch();
  std::stringstream buf;
  const auto ck = first.checkpoint();
  tensor::write_checkpoint(buf, ck.header, ck.params);
  Trainer resumed = Trainer::resume(cfg, tensor::read_checkpoint(buf), mols, prop);
  CHECK(resumed.epoch() == 2);
  for (std::size_t e = 2; e < reference.size(); ++e) {
    const EpochMetrics m = resumed.run_epoch();
    CHECK(std::abs(m.loss.total - reference[e].loss.total) <= 1e-12);
    CHECK(m.loss.total == reference[e].loss.total);
    CHECK(m.lr == reference[e].lr);
  }
  CHECK(resumed.model().params().parameters().back().value == straight.model().params().parameters().back().value);
}

TEST_CASE("training run artifacts") {
  auto mols = toy_corpus();
  mols.resize(20);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.seed = 7;
  const auto dir = std::filesystem::temp_directory_path() / "molgen_train_artifacts";
  std::filesystem::remove_all(dir);

  auto run = [&](const std::filesystem::path& out) {
    Trainer t(cfg, vae::Model(small(), chem::Vocabulary::standard(), 1), mols);
    std::size_t calls = 0;
    run_training(t, out, [&](const EpochMetrics&) { ++calls; });
    CHECK(calls == 3);
    return read_text_file(out / "metrics.csv");
  };
  const std::string a = run(dir / "a");
  const std::string b = run(dir / "b");
  CHECK(a.starts_with("epoch,lr,edge_ce,boa_ce,kl,prop_l2,total,wall_seconds\n"));
  CHECK(std::count(a.begin(), a.end(), '\n') == 4);
  CHECK(without_wall_clock(a) == without_wall_clock(b));
  CHECK(std::filesystem::exists(dir / "a" / "checkpoint.bin"));
  CHECK(std::filesystem::exists(dir / "a" / "best.bin"));
  const auto ck = tensor::load_checkpoint(dir / "a" / "checkpoint.bin");
  CHECK(ck.header.at("train.epoch") == "3");
  CHECK(vae::Model::from_checkpoint(ck).hyper() == small());

  // Resuming from the epoch-3 checkpoint with a larger budget keeps the rows.
  TrainConfig more = cfg;
  more.max_epochs = 4;
  Trainer resumed = Trainer::resume(more, tensor::load_checkpoint(dir / "a" / "checkpoint.bin"), mols);
  run_training(resumed, dir / "a");
  const std::string extended = read_text_file(dir / "a" / "metrics.csv");
  CHECK(extended.starts_with(a));
  CHECK(std::count(extended.begin(), extended.end(), '\n') == 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training errors") {
  vae::HyperParams hp = small();
  hp.lambda_edge = 1e308;
  hp.lambda_atoms = 1e308;
  TrainConfig cfg;
  Trainer blowup(cfg, vae::Model(hp, chem::Vocabulary::standard(), 1), parse_all({"CCO", "CCC"}));
  try {
    blowup.run_epoch();
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }

  CHECK_THROWS_AS(Trainer(cfg, vae::Model(small(4), chem::Vocabulary::standard(), 1), parse_all({"CCCCCC"})),
                  vae::OversizeMolecule);
  CHECK_THROWS_AS(Trainer(cfg, vae::Model(small(), chem::Vocabulary::standard(), 1), {}), EmptyCorpus);
  TrainConfig supervised;
  supervised.property_supervision = true;
  CHECK_THROWS_AS(Trainer(supervised, vae::Model(small(), chem::Vocabulary::standard(), 1), parse_all({"CC"})),
                  InvalidTrainConfig);
  TrainConfig one;
  one.max_epochs = 1;
  Trainer done(one, vae::Model(small(), chem::Vocabulary::standard(), 1), parse_all({"CC"}));
  done.run_epoch();
  CHECK(done.finished());
  CHECK_THROWS_AS(done.run_epoch(), Error);
}
