// SPDX-License-Identifier: Apache-2.0

#include "molgen/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "molgen/chem/canonical.hpp"
#include "molgen/util/io.hpp"
#include "molgen/util/text.hpp"

namespace molgen::train {

using tensor::Tensor;

namespace {

constexpr std::uint64_t kEpochStream = 0x7A1;

std::size_t parse_size(const std::string& key, const std::string& text) {
  if (const auto v = parse_integer<std::size_t>(text)) return *v;
  throw InvalidTrainConfig("bad integer for " + key + ": '" + text + "'");
}

double parse_double(const std::string& key, const std::string& text) {
  if (const auto v = parse_real(text)) return *v;
  throw InvalidTrainConfig("bad number for " + key + ": '" + text + "'");
}

const std::string& header_value(const std::map<std::string, std::string>& header, const std::string& key) {
  const auto it = header.find(key);
  if (it == header.end()) throw tensor::CheckpointError("checkpoint header lacks '" + key + "'");
  return it->second;
}

double header_double(const std::map<std::string, std::string>& header, const std::string& key) {
  const auto v = parse_real(header_value(header, key));
  if (!v) throw tensor::CheckpointError("bad value for '" + key + "'");
  return *v;
}

void accumulate(vae::LossBreakdown& into, const vae::LossBreakdown& part, double weight) {
  into.edge_ce += weight * part.edge_ce;
  into.boa_ce += weight * part.boa_ce;
  into.kl += weight * part.kl;
  into.prop_l2 += weight * part.prop_l2;
  into.total += weight * part.total;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidTrainConfig("batch_size must be >= 1");
  if (passes_per_epoch == 0) throw InvalidTrainConfig("passes_per_epoch must be >= 1");
  if (!(lr_decay_factor > 1.0)) throw InvalidTrainConfig("lr_decay_factor must be > 1");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw InvalidTrainConfig("initial_lr must be positive");
  if (!(stop_lr > 0.0)) throw InvalidTrainConfig("stop_lr must be positive");
  if (!(improvement_threshold >= 0.0 && improvement_threshold < 1.0)) {
    throw InvalidTrainConfig("improvement_threshold must be in [0, 1)");
  }
  if (!(clip_norm >= 0.0)) throw InvalidTrainConfig("clip_norm must be >= 0");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"batch_size", std::to_string(batch_size)},
      {"initial_lr", format_double(initial_lr)},
      {"lr_decay_factor", format_double(lr_decay_factor)},
      {"improvement_threshold", format_double(improvement_threshold)},
      {"stop_lr", format_double(stop_lr)},
      {"max_epochs", std::to_string(max_epochs)},
      {"passes_per_epoch", std::to_string(passes_per_epoch)},
      {"seed", std::to_string(seed)},
      {"property_supervision", property_supervision ? "1" : "0"},
      {"clip_norm", format_double(clip_norm)},
      {"kl_warmup_epochs", std::to_string(kl_warmup_epochs)},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& values) {
  TrainConfig c;
  for (const auto& [key, text] : values) {
    if (key == "batch_size") c.batch_size = parse_size(key, text);
    else if (key == "initial_lr") c.initial_lr = parse_double(key, text);
    else if (key == "lr_decay_factor") c.lr_decay_factor = parse_double(key, text);
    else if (key == "improvement_threshold") c.improvement_threshold = parse_double(key, text);
    else if (key == "stop_lr") c.stop_lr = parse_double(key, text);
    else if (key == "max_epochs") c.max_epochs = parse_size(key, text);
    else if (key == "passes_per_epoch") c.passes_per_epoch = parse_size(key, text);
    else if (key == "seed") {
      const auto v = parse_integer<std::uint64_t>(text);
      if (!v) throw InvalidTrainConfig("bad integer for seed: '" + text + "'");
      c.seed = *v;
    } else if (key == "property_supervision") {
      const auto v = parse_flag(text);
      if (!v) throw InvalidTrainConfig("bad boolean for property_supervision: '" + text + "'");
      c.property_supervision = *v;
    } else if (key == "clip_norm") c.clip_norm = parse_double(key, text);
    else if (key == "kl_warmup_epochs") c.kl_warmup_epochs = parse_size(key, text);
    else throw InvalidTrainConfig("unknown training option '" + key + "'");
  }
  c.validate();
  return c;
}

std::vector<Bucket> bucket_corpus(std::span<const chem::Molecule> molecules) {
  if (molecules.empty()) throw EmptyCorpus("corpus has no molecules");
  std::map<std::size_t, Bucket> by_size;
  for (std::size_t i = 0; i < molecules.size(); ++i) {
    Bucket& b = by_size[molecules[i].size()];
    b.size = molecules[i].size();
    b.members.push_back(i);
  }
  std::vector<Bucket> out;
  for (auto& [size, bucket] : by_size) out.push_back(std::move(bucket));
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<Bucket>& buckets,
                                                   std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw InvalidTrainConfig("batch_size must be >= 1");
  std::vector<std::vector<std::size_t>> batches;
  for (const Bucket& b : buckets) {
    std::vector<std::size_t> order = b.members;
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  shuffle(batches, rng);
  return batches;
}

ScheduleStep lr_schedule_step(double prev_epoch_loss, double this_epoch_loss, double lr, double decay,
                              double threshold, double stop_lr) {
  ScheduleStep step{lr, false};
  if (this_epoch_loss > prev_epoch_loss * (1.0 - threshold)) step.lr = lr / decay;
  step.stop = step.lr < stop_lr;
  return step;
}

PropertyScale PropertyScale::fit(std::span<const double> values) {
  PropertyScale s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (const double v : values) sq += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(sq / static_cast<double>(values.size()));
  s.stddev = sd > 1e-12 ? sd : 1.0;
  return s;
}

void PropertyScale::write(std::map<std::string, std::string>& header) const {
  header["property.mean"] = format_double(mean);
  header["property.stddev"] = format_double(stddev);
}

PropertyScale PropertyScale::read(const std::map<std::string, std::string>& header) {
  PropertyScale s;
  if (header.count("property.mean") == 0) return s;
  s.mean = header_double(header, "property.mean");
  s.stddev = header_double(header, "property.stddev");
  return s;
}

vae::LossBreakdown evaluation_loss(const vae::Model& model, std::span<const chem::Molecule> molecules,
                                   std::span<const double> targets) {
  if (!targets.empty() && targets.size() != molecules.size()) {
    throw tensor::ShapeMismatch("evaluation_loss: one target per molecule");
  }
  std::vector<chem::Molecule> canonical;
  for (const auto& m : molecules) canonical.push_back(chem::canonicalize(m));
  vae::LossBreakdown total;
  for (const Bucket& b : bucket_corpus(canonical)) {
    std::vector<const chem::Molecule*> mols;
    std::vector<double> t;
    for (const std::size_t i : b.members) {
      mols.push_back(&canonical[i]);
      if (!targets.empty()) t.push_back(targets[i]);
    }
    tensor::Tape tape;
    tape.set_grad_enabled(false);
    vae::Forward fw(tape, model.params(), vae::Mode::kEval);
    vae::LossInputs in;
    in.molecules = mols;
    in.property_targets = t;
    accumulate(total, model.loss(fw, in).values(), static_cast<double>(mols.size()));
  }
  vae::LossBreakdown mean;
  accumulate(mean, total, 1.0 / static_cast<double>(molecules.size()));
  return mean;
}

std::string metrics_csv_header() { return "epoch,lr,edge_ce,boa_ce,kl,prop_l2,total,wall_seconds\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream row;
  row << m.epoch << ',' << format_double(m.lr) << ',' << format_double(m.loss.edge_ce) << ','
      << format_double(m.loss.boa_ce) << ',' << format_double(m.loss.kl) << ','
      << format_double(m.loss.prop_l2) << ',' << format_double(m.loss.total) << ','
      << format_double(m.wall_seconds) << '\n';
  return row.str();
}

Trainer::Trainer(TrainConfig config, vae::Model model, std::vector<chem::Molecule> molecules,
                 std::vector<double> properties)
    : config_(std::move(config)),
      model_(std::move(model)),
      best_loss_(std::numeric_limits<double>::infinity()) {
  config_.validate();
  buckets_ = bucket_corpus(molecules);
  const std::size_t largest = buckets_.back().size;
  if (largest > model_.hyper().max_atoms) {
    throw vae::OversizeMolecule("corpus has a " + std::to_string(largest) + "-atom molecule but max_atoms is " +
                                std::to_string(model_.hyper().max_atoms));
  }
  if (buckets_.front().size < 2) throw vae::UndersizeMolecule("corpus has a single-atom molecule");
  molecules_.reserve(molecules.size());
  for (const auto& m : molecules) molecules_.push_back(chem::canonicalize(m));
  if (config_.property_supervision) {
    if (properties.size() != molecules_.size()) {
      throw InvalidTrainConfig("property supervision needs one value per molecule");
    }
    scale_ = PropertyScale::fit(properties);
    for (const double v : properties) targets_.push_back(scale_.normalise(v));
  }
  lr_ = config_.initial_lr;
}

Trainer Trainer::resume(TrainConfig config, tensor::Checkpoint checkpoint, std::vector<chem::Molecule> molecules,
                        std::vector<double> properties) {
  const auto header = checkpoint.header;
  Trainer t(std::move(config), vae::Model::from_checkpoint(std::move(checkpoint)), std::move(molecules),
            std::move(properties));
  const auto epoch = parse_integer<std::size_t>(header_value(header, "train.epoch"));
  if (!epoch) throw tensor::CheckpointError("bad value for 'train.epoch'");
  t.epoch_ = *epoch;
  t.lr_ = header_double(header, "train.lr");
  t.best_loss_ = header_double(header, "train.best_loss");
  t.stopped_ = header_value(header, "train.stopped") == "1";
  if (header.count("train.prev_loss") != 0) t.prev_loss_ = header_double(header, "train.prev_loss");
  if (t.config_.property_supervision) {
    // Keep the normalisation the model was trained against.
    const PropertyScale stored = PropertyScale::read(header);
    for (std::size_t i = 0; i < t.targets_.size(); ++i) {
      t.targets_[i] = stored.normalise(t.scale_.raw(t.targets_[i]));
    }
    t.scale_ = stored;
  }
  return t;
}

EpochMetrics Trainer::run_epoch() {
  if (finished()) throw Error("run_epoch: training already finished");
  const auto start = std::chrono::steady_clock::now();
  Rng rng = make_rng(config_.seed, kEpochStream, epoch_);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t pass = 0; pass < config_.passes_per_epoch; ++pass) {
    auto more = make_batches(buckets_, config_.batch_size, rng);
    batches.insert(batches.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  const vae::HyperParams& hp = model_.hyper();
  const double kl_scale = config_.kl_warmup_epochs == 0
                              ? 1.0
                              : std::min(1.0, static_cast<double>(epoch_ + 1) /
                                                  static_cast<double>(config_.kl_warmup_epochs));
  EpochMetrics metrics;
  metrics.epoch = epoch_ + 1;
  metrics.lr = lr_;
  NormalSampler normal;
  tensor::ParamStore& params = model_.params();
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    std::vector<const chem::Molecule*> mols;
    std::vector<double> targets;
    for (const std::size_t i : batch) {
      mols.push_back(&molecules_[i]);
      if (!targets_.empty()) targets.push_back(targets_[i]);
    }
    Tensor noise({batch.size(), hp.k});
    for (double& v : noise.data()) v = normal(rng);

    const std::string where =
        " in epoch " + std::to_string(epoch_ + 1) + ", batch " + std::to_string(b);
    params.zero_grad();
    vae::LossBreakdown values;
    try {
      tensor::Tape tape;
      vae::Forward fw(tape, params, vae::Mode::kTrain);
      vae::LossInputs in;
      in.molecules = mols;
      in.property_targets = targets;
      in.noise = &noise;
      in.kl_scale = kl_scale;
      const vae::LossTerms terms = model_.loss(fw, in);
      values = terms.values();
      if (!std::isfinite(values.total)) throw NonFiniteLoss("non-finite loss" + where);
      tape.backward(terms.total);
    } catch (const tensor::NonFiniteValue& e) {
      throw NonFiniteLoss(std::string(e.what()) + where);
    }
    const double norm = params.grad_norm();
    if (!std::isfinite(norm)) throw NonFiniteLoss("non-finite gradient" + where);
    if (config_.clip_norm > 0.0 && norm > config_.clip_norm) params.scale_grads(config_.clip_norm / norm);
    tensor::adam_step(params, lr_);
    accumulate(metrics.loss, values, static_cast<double>(batch.size()));
  }
  model_.recalibrate_statistics(molecules_, config_.batch_size);
  vae::LossBreakdown mean;
  accumulate(mean, metrics.loss,
             1.0 / static_cast<double>(molecules_.size() * config_.passes_per_epoch));
  metrics.loss = mean;

  ++epoch_;
  if (prev_loss_) {
    const ScheduleStep step = lr_schedule_step(*prev_loss_, mean.total, lr_, config_.lr_decay_factor,
                                               config_.improvement_threshold, config_.stop_lr);
    lr_ = step.lr;
    stopped_ = step.stop;
  }
  prev_loss_ = mean.total;
  if (mean.total < best_loss_) {
    best_loss_ = mean.total;
    best_ = model_;
  }
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return metrics;
}

std::map<std::string, std::string> Trainer::header_for(const vae::Model& model) const {
  auto header = model.header();
  if (config_.property_supervision) scale_.write(header);
  for (const auto& [key, value] : config_.to_map()) header["train.config." + key] = value;
  header["train.epoch"] = std::to_string(epoch_);
  header["train.lr"] = format_double(lr_);
  header["train.best_loss"] = format_double(best_loss_);
  header["train.stopped"] = stopped_ ? "1" : "0";
  if (prev_loss_) header["train.prev_loss"] = format_double(*prev_loss_);
  return header;
}

tensor::Checkpoint Trainer::checkpoint() const { return {header_for(model_), model_.params()}; }

tensor::Checkpoint Trainer::best_checkpoint() const {
  const vae::Model& m = best_model();
  return {header_for(m), m.params()};
}

void run_training(Trainer& trainer, const std::filesystem::path& out_dir,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  std::filesystem::create_directories(out_dir);
  std::string csv = metrics_csv_header();
  const auto metrics_path = out_dir / "metrics.csv";
  if (trainer.epoch() > 0 && std::filesystem::exists(metrics_path)) {
    // Keep the rows of epochs already completed.
    std::istringstream existing(read_text_file(metrics_path));
    std::string line;
    std::getline(existing, line);
    while (std::getline(existing, line)) {
      const auto epoch = parse_integer<std::size_t>(line.substr(0, line.find(',')));
      if (epoch && *epoch <= trainer.epoch()) csv += line + '\n';
    }
  }
  while (!trainer.finished()) {
    const double best_before = trainer.best_loss();
    const EpochMetrics m = trainer.run_epoch();
    csv += metrics_csv_row(m);
    const auto ck = trainer.checkpoint();
    tensor::save_checkpoint(out_dir / "checkpoint.bin", ck.header, ck.params);
    if (trainer.best_loss() < best_before) {
      const auto best = trainer.best_checkpoint();
      tensor::save_checkpoint(out_dir / "best.bin", best.header, best.params);
    }
    write_text_atomic(metrics_path, csv);
    if (on_epoch) on_epoch(m);
  }
}

}  // namespace molgen::train
