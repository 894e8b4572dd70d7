#ifndef PSAL_TRAINING_HPP
#define PSAL_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "psal/data.hpp"
#include "psal/model.hpp"
#include "psal/rng.hpp"

namespace psal {

struct TrainConfig {
  double lambda_l1 = 0.01;
  double learning_rate = 0.001;
  double rms_decay = 0.9;
  double rms_epsilon = 1e-6;
  double momentum = 0.0;
  std::size_t batch_size = 2;
  std::size_t epochs = 1;
  double init_range = 0.05;
  std::uint64_t seed = 0;
  double prob_clip = 1e-7;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// RMSProp accumulators, one per trainable parameter in ParamSet order.
struct OptimizerState {
  std::vector<NamedTensor> mean_square;
  std::vector<NamedTensor> velocity;  // empty unless momentum > 0
  std::uint64_t step = 0;

  static OptimizerState for_params(const ParamSet& params, bool with_momentum);
  bool same_values(const OptimizerState& other) const;
};

// Losses. The scalar forms validate their probabilities; the tensor forms
// take [N] discriminator outputs and record gradients.

/// -[ln p_real + ln(1 - p_fake)] with both probabilities clamped to
/// [clip, 1 - clip].
double discriminator_loss(double d_real, double d_fake, double clip);
Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake, double clip);

/// -ln(clamp(p_fake)) + lambda * mean|gen_out - gt|.
double generator_loss(double d_fake, const Tensor& gen_out, const Tensor& gt, double lambda_l1, double clip);
Tensor generator_loss(const Tensor& d_fake, const Tensor& gen_out, const Tensor& gt, double lambda_l1, double clip);

/// One RMSProp update over the trainable parameters' gradients:
///   s <- rho * s + (1 - rho) * g^2;  theta <- theta - lr * g / (sqrt(s) + eps)
/// With momentum > 0 the step goes through a velocity buffer instead.
void rmsprop_step(ParamSet& params, OptimizerState& state, const TrainConfig& cfg);

/// Kernels and biases uniform on [-range, range]; batch-norm gamma 1, beta 0,
/// running mean 0, running variance 1.
void init_weights(ParamSet& params, Rng& rng, double range);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double kl[2] = {0.0, 0.0};
  double ssim[2] = {0.0, 0.0};
};

struct Checkpoint;

/// A training sample encoded for the networks.
struct EncodedSample {
  Tensor input;  // [1, 3, S, S]
  Tensor gt;     // [1, 1, S, S]
  ObserverLabel label;
};

EncodedSample encode_sample(const Sample& sample);

/// Generator, discriminator, optimizers and rng of one training run.
class Trainer {
 public:
  Trainer(const NetConfig& net, const TrainConfig& train);
  explicit Trainer(const Checkpoint& checkpoint);

  struct BatchLosses {
    double loss_d = 0.0;
    double loss_g = 0.0;
  };

  /// One alternating update: generator forward, discriminator step on the
  /// detached output, then generator step with the discriminator frozen.
  BatchLosses train_batch(std::span<const EncodedSample* const> batch);

  /// Shuffles with the run's rng, trains on full batches, recalibrates the
  /// batch-norm statistics and evaluates on `test`.
  EpochRecord run_epoch(std::span<const EncodedSample> train, std::span<const Sample> test);

  /// Resets the generator's batch-norm running statistics to their average
  /// over the training set. run_epoch calls this before evaluating.
  void recalibrate_stats(std::span<const EncodedSample> train);

  /// Mean KL(gt || prediction) and SSIM(prediction, gt) per label group.
  EpochRecord evaluate(std::span<const Sample> test);

  Checkpoint checkpoint() const;

  /// When set, every batch asserts bitwise that the discriminator step leaves
  /// the generator untouched and vice versa.
  void set_check_alternation(bool on) { check_alternation_ = on; }

  Generator& generator() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }
  const NetConfig& net_config() const { return net_; }
  const TrainConfig& train_config() const { return train_; }
  void set_train_config(const TrainConfig& cfg) {
    cfg.validate();
    train_ = cfg;
  }
  std::size_t epoch() const { return epoch_; }
  const Rng& rng() const { return rng_; }

 private:
  NetConfig net_;
  TrainConfig train_;
  Generator generator_;
  Discriminator discriminator_;
  OptimizerState opt_g_;
  OptimizerState opt_d_;
  std::size_t epoch_ = 0;
  Rng rng_;
  bool check_alternation_ = false;
};

struct TrainOptions {
  std::filesystem::path checkpoint_path;
  /// CSV metrics log; defaults to checkpoint_path + ".metrics.csv".
  std::filesystem::path log_path;
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Full training run over a split manifest. Returns the final checkpoint.
Checkpoint train(const DatasetManifest& dataset, const NetConfig& net, const TrainConfig& cfg,
                 const TrainOptions& options);

}  // namespace psal

#endif  // PSAL_TRAINING_HPP
