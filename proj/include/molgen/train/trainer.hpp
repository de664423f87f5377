// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "molgen/tensor/checkpoint.hpp"
#include "molgen/vae/model.hpp"

namespace molgen::train {

MOLGEN_DEFINE_ERROR(EmptyCorpus);
MOLGEN_DEFINE_ERROR(NonFiniteLoss);
MOLGEN_DEFINE_ERROR(InvalidTrainConfig);

struct TrainConfig {
  std::size_t batch_size = 50;
  double initial_lr = 1e-3;
  double lr_decay_factor = 1.25;
  /// Relative improvement an epoch must reach to keep the learning rate.
  double improvement_threshold = 0.01;
  double stop_lr = 1e-6;
  std::size_t max_epochs = 1000;
  /// Corpus passes per schedule epoch. Small corpora give epochs of only a
  /// few optimizer steps whose loss is too noisy for the 1% rule.
  std::size_t passes_per_epoch = 1;
  std::uint64_t seed = 0;
  bool property_supervision = false;
  /// Global gradient-norm cap; 0 disables clipping.
  double clip_norm = 5.0;
  /// Linear KL warm-up length in epochs; 0 disables warm-up.
  std::size_t kl_warmup_epochs = 0;

  /// Throws InvalidTrainConfig.
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  /// Unknown keys throw InvalidTrainConfig.
  static TrainConfig from_map(const std::map<std::string, std::string>& values);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Bucket {
  std::size_t size = 0;
  std::vector<std::size_t> members;
};

/// Groups molecule indices by atom count, ascending; members keep corpus order.
std::vector<Bucket> bucket_corpus(std::span<const chem::Molecule> molecules);

/// Splits each bucket into shuffled batches of at most `batch_size`, then
/// shuffles the batch order. Remainders form smaller final batches.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<Bucket>& buckets,
                                                   std::size_t batch_size, Rng& rng);

struct ScheduleStep {
  double lr = 0.0;
  bool stop = false;
};

/// Divides lr by `decay` unless this epoch improved on the previous one by
/// at least `threshold` (relative); stops once lr falls below `stop_lr`.
ScheduleStep lr_schedule_step(double prev_epoch_loss, double this_epoch_loss, double lr,
                              double decay = 1.25, double threshold = 0.01, double stop_lr = 1e-6);

/// Affine map between raw property values and the normalised targets the
/// property head is trained on.
struct PropertyScale {
  double mean = 0.0;
  double stddev = 1.0;
  double normalise(double raw) const { return (raw - mean) / stddev; }
  double raw(double normalised) const { return mean + stddev * normalised; }

  /// Mean and population standard deviation (1 when degenerate).
  static PropertyScale fit(std::span<const double> values);
  void write(std::map<std::string, std::string>& header) const;
  /// Identity scale when the header has no property entries.
  static PropertyScale read(const std::map<std::string, std::string>& header);
};

struct EpochMetrics {
  std::size_t epoch = 0;  ///< 1-based
  double lr = 0.0;        ///< rate used during the epoch
  vae::LossBreakdown loss;  ///< per-molecule means
  double wall_seconds = 0.0;
};

/// Loss with eps = 0 in evaluation mode, averaged per molecule over
/// same-size batches. `targets` are normalised property values or empty.
vae::LossBreakdown evaluation_loss(const vae::Model& model, std::span<const chem::Molecule> molecules,
                                   std::span<const double> targets = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

class Trainer {
 public:
  /// `molecules` are canonicalized internally. `properties` holds one raw
  /// value per molecule and is required iff property supervision is on.
  Trainer(TrainConfig config, vae::Model model, std::vector<chem::Molecule> molecules,
          std::vector<double> properties = {});

  /// Continues from a checkpoint written by checkpoint(). The corpus must be
  /// the one training started with.
  static Trainer resume(TrainConfig config, tensor::Checkpoint checkpoint,
                        std::vector<chem::Molecule> molecules, std::vector<double> properties = {});

  /// passes_per_epoch passes over the corpus, then the schedule update.
  EpochMetrics run_epoch();
  bool finished() const { return stopped_ || epoch_ >= config_.max_epochs; }
  /// True once the learning-rate rule (not max_epochs) ended training.
  bool stopped_by_schedule() const { return stopped_; }

  std::size_t epoch() const { return epoch_; }
  double lr() const { return lr_; }
  double best_loss() const { return best_loss_; }
  const vae::Model& model() const { return model_; }
  const vae::Model& best_model() const { return best_ ? *best_ : model_; }
  const PropertyScale& property_scale() const { return scale_; }
  const std::vector<chem::Molecule>& molecules() const { return molecules_; }

  /// Model, property scale and resumable training state.
  tensor::Checkpoint checkpoint() const;
  tensor::Checkpoint best_checkpoint() const;

 private:
  std::map<std::string, std::string> header_for(const vae::Model& model) const;

  TrainConfig config_;
  vae::Model model_;
  std::optional<vae::Model> best_;
  std::vector<chem::Molecule> molecules_;
  std::vector<double> targets_;
  PropertyScale scale_;
  std::vector<Bucket> buckets_;
  std::size_t epoch_ = 0;
  double lr_ = 0.0;
  std::optional<double> prev_loss_;
  double best_loss_;
  bool stopped_ = false;
};

/// Runs `trainer` to completion, writing `checkpoint.bin` and `metrics.csv`
/// after every epoch and `best.bin` whenever the loss improves. All writes
/// are atomic. `on_epoch` may be empty.
void run_training(Trainer& trainer, const std::filesystem::path& out_dir,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace molgen::train
