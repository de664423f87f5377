// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "molgen/chem/canonical.hpp"
#include "molgen/chem/smiles.hpp"
#include "molgen/cli/cli.hpp"
#include "molgen/evalgen/evalgen.hpp"
#include "molgen/evalgen/property.hpp"
#include "molgen/tensor/checkpoint.hpp"
#include "molgen/util/io.hpp"
#include "molgen/util/parallel.hpp"
#include "molgen/util/text.hpp"

namespace molgen::cli {
namespace fs = std::filesystem;
namespace {

struct Context {
  RunConfig cfg;
  bool resume = false;
  std::optional<std::string> generated;
  std::optional<std::string> training;
  std::ostream& out;
  std::ostream& err;
};

fs::path input_path(const std::optional<std::string>& path, const std::string& what) {
  if (!path) throw ConfigError("--" + what + " is required");
  if (!fs::exists(*path)) throw MissingInput(what + " not found: " + *path);
  return *path;
}

fs::path output_dir(const RunConfig& cfg) {
  if (!cfg.out) throw ConfigError("--out is required");
  fs::create_directories(*cfg.out);
  return *cfg.out;
}

std::size_t thread_count(const RunConfig& cfg) { return cfg.threads == 0 ? default_thread_count() : cfg.threads; }

std::vector<chem::Molecule> load_molecules(const fs::path& path, const chem::Vocabulary& vocab, std::ostream& err) {
  chem::Corpus corpus = chem::read_corpus(path, vocab, &err);
  if (corpus.entries.empty()) throw train::EmptyCorpus("no usable molecules in " + path.string());
  std::vector<chem::Molecule> mols;
  for (auto& e : corpus.entries) mols.push_back(std::move(e.molecule));
  return mols;
}

// Molecules the model can encode, with a note about the rest.
std::vector<chem::Molecule> encodable(std::vector<chem::Molecule> mols, const vae::Model& model, std::ostream& err) {
  const std::size_t before = mols.size();
  std::erase_if(mols, [&](const chem::Molecule& m) { return m.size() < 2 || m.size() > model.hyper().max_atoms; });
  if (mols.size() != before) {
    err << "molgen: skipped " << before - mols.size() << " molecule(s) outside 2.." << model.hyper().max_atoms
        << " atoms\n";
  }
  if (mols.empty()) throw train::EmptyCorpus("no molecule fits the model");
  return mols;
}

vae::Model load_model(const RunConfig& cfg, tensor::Checkpoint* keep = nullptr) {
  tensor::Checkpoint ck = tensor::load_checkpoint(input_path(cfg.checkpoint, "checkpoint"));
  if (keep != nullptr) *keep = ck;
  return vae::Model::from_checkpoint(std::move(ck));
}

evalgen::DecodeSettings decode_settings(const RunConfig& cfg) {
  evalgen::DecodeSettings s;
  s.restarts = cfg.restarts;
  s.mode = cfg.mode.value_or("max_prob") == "bernoulli" ? beam::DecodeMode::kBernoulli : beam::DecodeMode::kMaxProb;
  s.seed = cfg.train.seed;
  return s;
}

evalgen::Property property_for(const RunConfig& cfg, const chem::Vocabulary& vocab, std::ostream& err) {
  evalgen::Property p = evalgen::make_property(evalgen::parse_property_kind(cfg.property.value_or("bond_sum")), vocab);
  if (p.fell_back) err << "molgen: " << evalgen::kOracleEnv << " is not set; using bond_sum instead of oracle\n";
  return p;
}

std::string rate_text(std::size_t hits, std::size_t total) {
  std::ostringstream s;
  s << hits << "/" << total << " (" << (total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total))
    << "%)";
  return s.str();
}

int cmd_train(Context& c) {
  RunConfig& cfg = c.cfg;
  const auto corpus_path = input_path(cfg.corpus, "corpus");
  const fs::path dir = output_dir(cfg);
  const chem::Vocabulary& vocab = chem::Vocabulary::standard();
  std::vector<chem::Molecule> mols = load_molecules(corpus_path, vocab, c.err);
  std::vector<double> targets;
  if (cfg.train.property_supervision && !cfg.property) throw ConfigError("property_supervision needs --property");
  if (cfg.property) {
    const evalgen::Property p = property_for(cfg, vocab, c.err);
    cfg.train.property_supervision = true;
    for (const auto& m : mols) targets.push_back(p.fn(m));
  }
  std::optional<train::Trainer> trainer;
  const fs::path last = dir / "checkpoint.bin";
  if (c.resume && fs::exists(last)) {
    tensor::Checkpoint ck = tensor::load_checkpoint(last);
    std::map<std::string, std::string> stored;
    for (const auto& [key, value] : ck.header) {
      if (key.starts_with("train.config.")) stored[key.substr(13)] = value;
    }
    for (const auto& [key, value] : cfg.train_overrides) stored[key] = value;
    if (cfg.property) stored["property_supervision"] = "1";
    trainer.emplace(train::Trainer::resume(train::TrainConfig::from_map(stored), std::move(ck), std::move(mols),
                                           std::move(targets)));
    c.out << "resuming after epoch " << trainer->epoch() << "\n";
  } else {
    trainer.emplace(cfg.train, vae::Model(cfg.hp, vocab, cfg.train.seed), std::move(mols), std::move(targets));
  }
  train::run_training(*trainer, dir, [&](const train::EpochMetrics& m) {
    c.out << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.loss.total << " (edge " << m.loss.edge_ce
          << ", formula " << m.loss.boa_ce << ", kl " << m.loss.kl;
    if (cfg.train.property_supervision) c.out << ", property " << m.loss.prop_l2;
    c.out << ")\n";
  });
  c.out << (trainer->stopped_by_schedule() ? "stopped by the learning-rate rule" : "reached max_epochs") << " after "
        << trainer->epoch() << " epochs; best loss " << trainer->best_loss() << "\n";
  c.out << "wrote " << (dir / "checkpoint.bin").string() << ", " << (dir / "best.bin").string() << ", "
        << (dir / "metrics.csv").string() << "\n";
  return 0;
}

int cmd_reconstruct(Context& c) {
  const RunConfig& cfg = c.cfg;
  const vae::Model model = load_model(cfg);
  const auto mols = encodable(load_molecules(input_path(cfg.corpus, "corpus"), model.vocab(), c.err), model, c.err);
  const fs::path dir = output_dir(cfg);
  std::vector<evalgen::Reconstruction> results(mols.size());
  parallel_for(mols.size(), thread_count(cfg), [&](std::size_t i) {
    results[i] = evalgen::reconstruct(model, mols[i], cfg.restarts, cfg.train.seed);
  });
  std::string csv = "input,reconstructed,exact\n";
  std::size_t exact = 0;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    exact += results[i].exact ? 1 : 0;
    csv += chem::write_smiles(chem::canonicalize(mols[i]), model.vocab()) + ',' +
           chem::write_smiles(chem::canonicalize(results[i].molecule), model.vocab()) + ',' +
           (results[i].exact ? "1" : "0") + '\n';
  }
  write_text_atomic(dir / "reconstruct.csv", csv);
  c.out << "reconstructed " << rate_text(exact, mols.size()) << "\n";
  c.out << "wrote " << (dir / "reconstruct.csv").string() << "\n";
  return 0;
}

void print_metrics(std::ostream& out, const evalgen::MetricsReport& r, bool novelty) {
  out << "validity " << rate_text(r.valid, r.total) << ", uniqueness " << rate_text(r.unique, r.total);
  if (novelty) out << ", novelty " << rate_text(r.novel, r.total);
  out << "\n";
}

int cmd_sample(Context& c) {
  const RunConfig& cfg = c.cfg;
  const vae::Model model = load_model(cfg);
  const fs::path dir = output_dir(cfg);
  const std::size_t count = cfg.count.value_or(100);
  const auto samples = evalgen::sample_prior(model, count, cfg.train.seed, decode_settings(cfg), thread_count(cfg));
  std::string text;
  for (const auto& m : samples) text += chem::write_smiles(chem::canonicalize(m), model.vocab()) + '\n';
  write_text_atomic(dir / "samples.smi", text);
  std::vector<chem::Molecule> training;
  if (cfg.corpus) training = load_molecules(input_path(cfg.corpus, "corpus"), model.vocab(), c.err);
  const auto report = evalgen::compute_metrics(samples, training, model.vocab(), model.hyper().max_atoms);
  print_metrics(c.out, report, cfg.corpus.has_value());
  c.out << "wrote " << (dir / "samples.smi").string();
  if (cfg.corpus) {
    write_text_atomic(dir / "sample_metrics.csv",
                      evalgen::metrics_csv_header() + evalgen::metrics_csv_row("molgen", report));
    c.out << ", " << (dir / "sample_metrics.csv").string();
  }
  c.out << "\n";
  return 0;
}

int cmd_eval(Context& c) {
  const RunConfig& cfg = c.cfg;
  const fs::path generated_path = input_path(c.generated, "generated");
  const fs::path training_path = input_path(c.training, "train");
  const fs::path dir = output_dir(cfg);
  const chem::Vocabulary& vocab = chem::Vocabulary::standard();
  chem::Corpus generated = chem::read_corpus(generated_path, vocab, &c.err);
  const auto training = load_molecules(training_path, vocab, c.err);
  std::vector<chem::Molecule> mols;
  for (auto& e : generated.entries) mols.push_back(std::move(e.molecule));
  evalgen::MetricsReport r = evalgen::compute_metrics(mols, training, vocab, cfg.hp.max_atoms);
  // Unparseable lines are generated molecules too, and invalid ones.
  r.total += generated.skipped.size();
  if (r.total > 0) {
    const double n = static_cast<double>(r.total);
    r.validity_rate = static_cast<double>(r.valid) / n;
    r.novelty_rate = static_cast<double>(r.novel) / n;
    r.uniqueness_rate = static_cast<double>(r.unique) / n;
  }
  write_text_atomic(dir / "metrics.csv",
                    evalgen::metrics_csv_header() + evalgen::metrics_csv_row(generated_path.stem().string(), r));
  print_metrics(c.out, r, true);
  c.out << "wrote " << (dir / "metrics.csv").string() << "\n";
  return 0;
}

int cmd_optimize(Context& c) {
  const RunConfig& cfg = c.cfg;
  tensor::Checkpoint ck;
  const vae::Model model = load_model(cfg, &ck);
  auto origins = encodable(load_molecules(input_path(cfg.corpus, "corpus"), model.vocab(), c.err), model, c.err);
  if (origins.size() > cfg.count.value_or(50)) origins.resize(cfg.count.value_or(50));
  const fs::path dir = output_dir(cfg);
  const evalgen::Property property = property_for(cfg, model.vocab(), c.err);
  const train::PropertyScale scale = train::PropertyScale::read(ck.header);
  evalgen::OptimizeSettings s;
  s.steps = cfg.steps;
  s.step_size = cfg.step_size;
  s.property_mean = scale.mean;
  s.property_stddev = scale.stddev;
  s.decode = decode_settings(cfg);
  std::vector<std::vector<evalgen::OptimizationTrace>> traces;
  const auto rows = evalgen::constrained_sweep(model, origins, cfg.deltas, property.fn, s, thread_count(cfg), &traces);

  std::string table = evalgen::constrained_csv_header();
  for (const auto& row : rows) table += evalgen::constrained_csv_row(row);
  std::string steps = "delta,origin,step,smiles,property,predicted,similarity,accepted,novel\n";
  for (std::size_t d = 0; d < traces.size(); ++d) {
    for (std::size_t o = 0; o < traces[d].size(); ++o) {
      const auto& trace = traces[d][o];
      for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        const auto& st = trace.steps[t];
        steps += format_double(cfg.deltas[d]) + ',' + trace.origin_smiles + ',' + std::to_string(t) + ',' + st.smiles +
                 ',' + format_double(st.property) + ',' + format_double(st.predicted) + ',' +
                 format_double(st.similarity) + ',' + (st.accepted ? "1" : "0") + ',' + (st.novel ? "1" : "0") + '\n';
      }
    }
  }
  write_text_atomic(dir / "constrained.csv", table);
  write_text_atomic(dir / "traces.csv", steps);
  c.out << "property " << evalgen::property_name(property.kind) << ", " << origins.size() << " molecules, "
        << cfg.steps << " steps\n";
  for (const auto& row : rows) {
    c.out << "delta " << row.delta << ": improvement " << row.improvement_mean << " +- " << row.improvement_std
          << ", similarity " << row.similarity_mean << ", success " << rate_text(row.successes, row.molecules)
          << "\n";
  }
  c.out << "wrote " << (dir / "constrained.csv").string() << ", " << (dir / "traces.csv").string() << "\n";
  return 0;
}

int cmd_dump(Context& c) {
  const RunConfig& cfg = c.cfg;
  const fs::path corpus_path = input_path(cfg.corpus, "corpus");
  const fs::path dir = output_dir(cfg);
  const chem::Vocabulary& vocab = chem::Vocabulary::standard();
  const chem::Corpus corpus = chem::read_corpus(corpus_path, vocab, nullptr);
  // Entries and skipped lines, in file order.
  std::map<std::size_t, std::string> lines;
  for (const auto& e : corpus.entries) lines[e.line] = dump_json(e, vocab);
  for (const auto& s : corpus.skipped) {
    nlohmann::ordered_json j;
    j["line"] = s.line;
    j["smiles"] = s.text;
    j["error"] = s.reason;
    lines[s.line] = j.dump();
  }
  std::string text;
  for (const auto& [line, json] : lines) text += json + '\n';
  write_text_atomic(dir / "dump.jsonl", text);
  c.out << "dumped " << corpus.entries.size() << " molecules, " << corpus.skipped.size() << " skipped line(s)\n";
  c.out << "wrote " << (dir / "dump.jsonl").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("Molecular-graph variational auto-encoder", "molgen");
  app.require_subcommand(1);
  std::map<std::string, std::string> flags;
  std::optional<std::string> config_path;
  bool resume = false;
  std::optional<std::string> generated;
  std::optional<std::string> training;

  auto opt = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        "--" + name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option_function<std::string>(
        "--config", [&config_path](const std::string& v) { config_path = v; }, "key = value configuration file");
    opt(sub, "seed", "seed", "random seed");
    opt(sub, "threads", "threads", "worker threads (default: one per core)");
    opt(sub, "out", "out", "output directory");
  };
  auto decoding = [&](CLI::App* sub) {
    opt(sub, "restarts", "restarts", "beam-search restarts");
    opt(sub, "mode", "mode", "max_prob or bernoulli");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a SMILES corpus");
  common(train_cmd);
  opt(train_cmd, "corpus", "corpus", "training SMILES, one per line");
  opt(train_cmd, "property", "property", "supervise the property head with atoms, bond_sum, rings or oracle");
  train_cmd->add_flag("--resume", resume, "continue from <out>/checkpoint.bin; given training keys override the stored ones");

  CLI::App* recon_cmd = app.add_subcommand("reconstruct", "encode and decode every corpus molecule");
  common(recon_cmd);
  decoding(recon_cmd);
  opt(recon_cmd, "corpus", "corpus", "SMILES to reconstruct");
  opt(recon_cmd, "checkpoint", "checkpoint", "model checkpoint");

  CLI::App* sample_cmd = app.add_subcommand("sample", "decode latent points drawn from the prior");
  common(sample_cmd);
  decoding(sample_cmd);
  opt(sample_cmd, "checkpoint", "checkpoint", "model checkpoint");
  opt(sample_cmd, "count", "count", "number of samples (default 100)");
  opt(sample_cmd, "corpus", "corpus", "training SMILES, for novelty");

  CLI::App* eval_cmd = app.add_subcommand("eval", "validity, novelty and uniqueness of generated SMILES");
  common(eval_cmd);
  eval_cmd->add_option_function<std::string>(
      "--generated", [&generated](const std::string& v) { generated = v; }, "generated SMILES");
  eval_cmd->add_option_function<std::string>(
      "--train", [&training](const std::string& v) { training = v; }, "training SMILES");

  CLI::App* opt_cmd = app.add_subcommand("optimize", "property ascent in latent space under similarity constraints");
  common(opt_cmd);
  decoding(opt_cmd);
  opt(opt_cmd, "checkpoint", "checkpoint", "model checkpoint");
  opt(opt_cmd, "corpus", "corpus", "starting molecules");
  opt(opt_cmd, "count", "count", "number of starting molecules (default 50)");
  opt(opt_cmd, "steps", "steps", "ascent steps");
  opt(opt_cmd, "step-size", "step_size", "ascent step size");
  opt(opt_cmd, "property", "property", "reporting property: atoms, bond_sum, rings or oracle");
  opt_cmd->add_option_function<std::vector<std::string>>(
      "--delta",
      [&flags](const std::vector<std::string>& v) {
        std::string joined;
        for (const auto& d : v) joined += (joined.empty() ? "" : ",") + d;
        flags["delta"] = joined;
      },
      "similarity threshold(s); repeat or separate with commas");

  CLI::App* dump_cmd = app.add_subcommand("dump", "write parsed molecules as JSON lines for cross-checking");
  common(dump_cmd);
  opt(dump_cmd, "corpus", "corpus", "SMILES to dump");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    Context c{RunConfig{}, resume, generated, training, out, err};
    if (config_path) {
      if (!fs::exists(*config_path)) throw MissingInput("config not found: " + *config_path);
      c.cfg.apply(parse_config(read_text_file(*config_path)));
    }
    c.cfg.apply(flags);
    if (train_cmd->parsed()) return cmd_train(c);
    if (recon_cmd->parsed()) return cmd_reconstruct(c);
    if (sample_cmd->parsed()) return cmd_sample(c);
    if (eval_cmd->parsed()) return cmd_eval(c);
    if (opt_cmd->parsed()) return cmd_optimize(c);
    if (dump_cmd->parsed()) return cmd_dump(c);
    return 1;
  } catch (const std::exception& e) {
    err << "molgen: error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace molgen::cli
