#ifndef PSAL_MODEL_HPP
#define PSAL_MODEL_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "psal/data.hpp"
#include "psal/ops.hpp"
#include "psal/rng.hpp"
#include "psal/tensor.hpp"

namespace psal {

/// Network scale. The defaults reproduce the full-size layout: 256x256
/// inputs, a 64x64x64 label tensor and a 512x1x1 bottleneck.
struct NetConfig {
  std::size_t image_size = 256;
  std::size_t inject_size = 64;
  std::size_t label_channels = 64;
  std::size_t base_channels = 64;
  std::size_t bottleneck_channels = 512;
  std::size_t disc_base_channels = 64;
  double dropout_rate = 0.2;
  std::size_t dropout_layers = 5;

  /// Defaults scaled to `image_size` (inject and label sizes image_size / 4).
  static NetConfig for_size(std::size_t image_size);

  /// Throws ParameterError on an inconsistent configuration.
  void validate() const;

  /// Number of stride-2 encoder modules, log2(image_size).
  std::size_t depth() const;
  /// Output channels of each encoder module.
  std::vector<std::size_t> encoder_channels() const;
  /// Encoder module whose output is concatenated with the label tensor.
  std::size_t inject_level() const;
  /// Widths of the four discriminator conv modules.
  std::vector<std::size_t> discriminator_channels() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Ordered, uniquely named parameter list. Order is the serialization order.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Shape shape, bool trainable = true, double fill = 0.0);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t scalar_count() const;

  /// Deep copy with independent storage.
  ParamSet clone() const;
  void zero_grad();
  /// Bitwise equality of names, shapes and values.
  bool same_values(const ParamSet& other) const;

 private:
  std::vector<NamedTensor> entries_;
};

/// Shapes and injection points observed during one forward pass.
struct ForwardTrace {
  std::vector<Shape> encoder_outputs;
  std::vector<Shape> decoder_outputs;
  Shape bottleneck;
  struct Injection {
    std::size_t module;       // index of the module the label feeds
    std::size_t spatial;
    std::size_t channels;
  };
  std::vector<Injection> label_injections;
  /// (encoder output, decoder output) shapes merged by each skip connection.
  std::vector<std::pair<Shape, Shape>> skips;
  std::size_t pools_before_injection = 0;
  Activation head = Activation::Relu;
  Shape output;
};

/// U-Net encoder-decoder conditioned on the observer label.
class Generator {
 public:
  explicit Generator(const NetConfig& cfg);

  /// x is [N, 3, S, S] in [-1, 1]; labels has N entries. Returns [N, 1, S, S]
  /// in (-1, 1). Batch-norm running statistics are updated in train mode
  /// unless track_stats is false.
  Tensor forward(const Tensor& x, std::span<const ObserverLabel> labels, Mode mode, Rng& rng,
                 ForwardTrace* trace = nullptr, bool track_stats = true);

  /// Replaces the batch-norm running statistics with the mean of the
  /// per-batch statistics of train-mode passes over the given batches.
  /// The momentum average of a few batches of two is too noisy for eval.
  void recalibrate_stats(std::span<const Tensor> inputs, std::span<const std::vector<ObserverLabel>> labels,
                         Rng& rng);

  const NetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  NetConfig cfg_;
  ParamSet params_;
  double stat_momentum_ = kBatchNormMomentum;
};

/// Pooled conv stack scoring (input, candidate map) pairs; label enters at
/// the third module.
class Discriminator {
 public:
  explicit Discriminator(const NetConfig& cfg);

  /// Returns [N] probabilities in (0, 1).
  Tensor forward(const Tensor& x, std::span<const ObserverLabel> labels, const Tensor& candidate, Mode mode,
                 ForwardTrace* trace = nullptr, bool track_stats = true);

  const NetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  NetConfig cfg_;
  ParamSet params_;
};

/// Eval-mode generator pass on one stimulus; output mapped back to [0, 1].
SaliencyMap predict(Generator& generator, const Grid& stimulus, const Grid& population_map, ObserverLabel label);

}  // namespace psal

#endif  // PSAL_MODEL_HPP
