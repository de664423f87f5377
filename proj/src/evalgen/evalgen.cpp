// SPDX-License-Identifier: Apache-2.0

#include "molgen/evalgen/evalgen.hpp"

#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

#include "molgen/chem/canonical.hpp"
#include "molgen/chem/fingerprint.hpp"
#include "molgen/chem/smiles.hpp"
#include "molgen/util/parallel.hpp"
#include "molgen/util/rng.hpp"
#include "molgen/util/text.hpp"

namespace molgen::evalgen {
namespace {

constexpr std::uint64_t kPriorStream = 0x5A3;
constexpr std::uint64_t kPriorBeamStream = 0x5A4;

std::string canonical_text(const chem::Molecule& mol, const chem::Vocabulary& vocab) {
  return chem::write_smiles(chem::canonicalize(mol), vocab);
}

}  // namespace

Decoded decode_latent(const vae::Model& model, std::span<const double> z, const DecodeSettings& settings) {
  const auto& vocab = model.vocab();
  const chem::BagOfAtoms boa =
      vae::repaired_formula(model.atom_scores(z), static_cast<int>(model.hyper().max_atoms));
  if (boa.total() == 1) {
    const auto atoms = chem::expand_formula(boa, vocab);
    return {chem::Molecule(atoms, chem::BondMatrix(1)), false};
  }
  beam::BeamOptions options;
  options.restarts = settings.restarts;
  options.mode = settings.mode;
  options.property = settings.objective;
  options.seed = settings.seed;
  beam::DecodeResult result = beam::beam_decode(model.decode_bonds(z, boa), boa, vocab, options);
  return {std::move(result.molecule), result.formula_deviation};
}

Reconstruction reconstruct(const vae::Model& model, const chem::Molecule& mol, std::size_t restarts,
                           std::uint64_t seed) {
  const vae::LatentGaussian latent = model.encode(mol);
  DecodeSettings settings;
  settings.restarts = restarts;
  settings.seed = seed;
  Decoded decoded = decode_latent(model, latent.mu, settings);
  const bool exact = canonical_text(decoded.molecule, model.vocab()) == canonical_text(mol, model.vocab());
  return {std::move(decoded.molecule), exact};
}

double reconstruction_rate(const vae::Model& model, std::span<const chem::Molecule> molecules,
                           std::size_t restarts, std::size_t threads) {
  if (molecules.empty()) return 0.0;
  std::vector<char> exact(molecules.size(), 0);
  parallel_for(molecules.size(), threads,
               [&](std::size_t i) { exact[i] = reconstruct(model, molecules[i], restarts).exact ? 1 : 0; });
  std::size_t hits = 0;
  for (char e : exact) hits += static_cast<std::size_t>(e);
  return static_cast<double>(hits) / static_cast<double>(molecules.size());
}

std::vector<chem::Molecule> sample_prior(const vae::Model& model, std::size_t count, std::uint64_t seed,
                                         const DecodeSettings& settings, std::size_t threads) {
  std::vector<chem::Molecule> out(count);
  parallel_for(count, threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, kPriorStream, i);
    NormalSampler normal;
    std::vector<double> z(model.hyper().k);
    for (double& v : z) v = normal(rng);
    DecodeSettings s = settings;
    s.seed = derive_seed(seed, kPriorBeamStream, i);
    out[i] = decode_latent(model, z, s).molecule;
  });
  return out;
}

MetricsReport compute_metrics(std::span<const chem::Molecule> generated, std::span<const chem::Molecule> training,
                              const chem::Vocabulary& vocab, std::size_t max_atoms) {
  std::unordered_set<std::string> known;
  for (const auto& m : training) known.insert(canonical_text(m, vocab));
  MetricsReport r;
  r.total = generated.size();
  std::set<std::string> distinct;
  for (const auto& m : generated) {
    if (!chem::satisfies_invariants(m, vocab, max_atoms)) continue;
    ++r.valid;
    const std::string text = canonical_text(m, vocab);
    if (known.count(text) == 0) ++r.novel;
    distinct.insert(text);
  }
  r.unique = distinct.size();
  if (r.total > 0) {
    const double n = static_cast<double>(r.total);
    r.validity_rate = static_cast<double>(r.valid) / n;
    r.novelty_rate = static_cast<double>(r.novel) / n;
    r.uniqueness_rate = static_cast<double>(r.unique) / n;
  }
  return r;
}

std::string metrics_csv_header() { return "method,samples,validity,novelty,uniqueness\n"; }

std::string metrics_csv_row(const std::string& method, const MetricsReport& r) {
  return method + ',' + std::to_string(r.total) + ',' + format_double(r.validity_rate) + ',' +
         format_double(r.novelty_rate) + ',' + format_double(r.uniqueness_rate) + '\n';
}

std::vector<std::vector<double>> gradient_ascent(
    std::span<const double> z0, std::size_t steps, double step_size,
    const std::function<std::vector<double>(std::span<const double>)>& gradient) {
  std::vector<std::vector<double>> path;
  path.reserve(steps + 1);
  path.emplace_back(z0.begin(), z0.end());
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> next = path.back();
    const std::vector<double> g = gradient(next);
    if (g.size() != next.size()) throw Error("gradient_ascent: gradient has the wrong length");
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += step_size * g[i];
    path.push_back(std::move(next));
  }
  return path;
}

double OptimizationTrace::improvement() const {
  return best ? steps[*best].property - origin_property : 0.0;
}

namespace {

OptimizationTrace run_trace(const vae::Model& model, std::span<const double> z0, const chem::Molecule* origin,
                            double delta, const beam::PropertyFn& property, const OptimizeSettings& settings) {
  if (!property) throw Error("optimize: no property function");
  const auto& vocab = model.vocab();
  const auto path = gradient_ascent(z0, settings.steps, settings.step_size,
                                    [&](std::span<const double> z) { return model.property_gradient(z); });
  OptimizationTrace trace;
  std::optional<chem::Fingerprint> origin_fp;
  if (origin != nullptr) {
    trace.origin_smiles = canonical_text(*origin, vocab);
    trace.origin_property = property(*origin);
    origin_fp = chem::fingerprint(chem::canonicalize(*origin));
  }
  for (const auto& z : path) {
    TraceStep step;
    step.z = z;
    const chem::Molecule mol = chem::canonicalize(decode_latent(model, z, settings.decode).molecule);
    step.smiles = chem::write_smiles(mol, vocab);
    step.property = property(mol);
    step.predicted = settings.property_mean + settings.property_stddev * model.predict_property(z);
    if (origin_fp) {
      step.similarity = chem::tanimoto(*origin_fp, chem::fingerprint(mol));
      step.novel = step.smiles != trace.origin_smiles;
    }
    step.accepted = step.similarity >= delta;
    const std::size_t index = trace.steps.size();
    if (step.accepted) {
      if (!trace.best || step.property > trace.steps[*trace.best].property) trace.best = index;
      if (step.novel) trace.success = true;
    }
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

}  // namespace

OptimizationTrace optimize_latent(const vae::Model& model, std::span<const double> z0,
                                  const beam::PropertyFn& property, const OptimizeSettings& settings) {
  return run_trace(model, z0, nullptr, 0.0, property, settings);
}

OptimizationTrace optimize_constrained(const vae::Model& model, const chem::Molecule& origin, double delta,
                                       const beam::PropertyFn& property, const OptimizeSettings& settings) {
  const vae::LatentGaussian latent = model.encode(origin);
  return run_trace(model, latent.mu, &origin, delta, property, settings);
}

std::vector<ConstrainedRow> constrained_sweep(const vae::Model& model, std::span<const chem::Molecule> origins,
                                              std::span<const double> deltas, const beam::PropertyFn& property,
                                              const OptimizeSettings& settings, std::size_t threads,
                                              std::vector<std::vector<OptimizationTrace>>* traces) {
  const std::size_t n = origins.size();
  std::vector<OptimizationTrace> all(deltas.size() * n);
  parallel_for(all.size(), threads, [&](std::size_t task) {
    all[task] = optimize_constrained(model, origins[task % n], deltas[task / n], property, settings);
  });
  std::vector<ConstrainedRow> rows;
  for (std::size_t d = 0; d < deltas.size(); ++d) {
    ConstrainedRow row;
    row.delta = deltas[d];
    row.molecules = n;
    double sum = 0.0, sum_sq = 0.0, sim = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const OptimizationTrace& t = all[d * n + i];
      if (!t.success) continue;
      ++row.successes;
      const double gain = t.improvement();
      sum += gain;
      sum_sq += gain * gain;
      sim += t.steps[*t.best].similarity;
    }
    if (row.successes > 0) {
      const double k = static_cast<double>(row.successes);
      row.improvement_mean = sum / k;
      row.improvement_std = std::sqrt(std::max(0.0, sum_sq / k - row.improvement_mean * row.improvement_mean));
      row.similarity_mean = sim / k;
    }
    row.success_rate = n == 0 ? 0.0 : static_cast<double>(row.successes) / static_cast<double>(n);
    rows.push_back(row);
  }
  if (traces != nullptr) {
    traces->assign(deltas.size(), {});
    for (std::size_t task = 0; task < all.size(); ++task) (*traces)[task / n].push_back(std::move(all[task]));
  }
  return rows;
}

std::string constrained_csv_header() {
  return "delta,molecules,improvement_mean,improvement_std,similarity_mean,success_rate\n";
}

std::string constrained_csv_row(const ConstrainedRow& r) {
  return format_double(r.delta) + ',' + std::to_string(r.molecules) + ',' + format_double(r.improvement_mean) +
         ',' + format_double(r.improvement_std) + ',' + format_double(r.similarity_mean) + ',' +
         format_double(r.success_rate) + '\n';
}

}  // namespace molgen::evalgen
