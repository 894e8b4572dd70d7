#include "psal/model.hpp"

#include <algorithm>
#include <bit>
#include <unordered_set>

#include "psal/error.hpp"

namespace psal {

NetConfig NetConfig::for_size(std::size_t image_size) {
  NetConfig cfg;
  cfg.image_size = image_size;
  cfg.inject_size = image_size / 4;
  cfg.label_channels = cfg.inject_size;
  return cfg;
}

void NetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError("NetConfig: " + msg); };
  if (image_size < 32 || !std::has_single_bit(image_size)) fail("image_size must be a power of two >= 32");
  if (inject_size < 2 || inject_size >= image_size || image_size % inject_size)
    fail("inject_size must divide image_size and lie in [2, image_size)");
  if (label_channels < 1 || base_channels < 1 || bottleneck_channels < 1 || disc_base_channels < 1)
    fail("channel counts must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
}

std::size_t NetConfig::depth() const { return static_cast<std::size_t>(std::countr_zero(image_size)); }

std::vector<std::size_t> NetConfig::encoder_channels() const {
  const std::size_t levels = depth();
  std::vector<std::size_t> ch(levels);
  for (std::size_t i = 0; i < levels; ++i)
    ch[i] = std::min(base_channels << std::min<std::size_t>(i, 3), bottleneck_channels);
  ch.back() = bottleneck_channels;
  return ch;
}

std::size_t NetConfig::inject_level() const {
  return static_cast<std::size_t>(std::countr_zero(image_size / inject_size)) - 1;
}

std::vector<std::size_t> NetConfig::discriminator_channels() const {
  const auto b = disc_base_channels;
  return {b, 2 * b, 4 * b, 4 * b};
}

// ---------------------------------------------------------------------------

Tensor& ParamSet::add(const std::string& name, Shape shape, bool trainable, double fill) {
  if (contains(name)) throw UsageError("duplicate parameter name " + name);
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(trainable);
  entries_.push_back({name, t, trainable});
  return entries_.back().tensor;
}

Tensor& ParamSet::get(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw UsageError("unknown parameter " + name);
}

const Tensor& ParamSet::get(const std::string& name) const { return const_cast<ParamSet*>(this)->get(name); }

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& e : entries_) {
    Tensor t = e.tensor.detach();
    t.set_requires_grad(e.trainable);
    out.entries_.push_back({e.name, t, e.trainable});
  }
  return out;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

bool ParamSet::same_values(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape() || a.tensor.values() != b.tensor.values())
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kGenKernel = 4;
constexpr std::size_t kDiscKernel = 3;

void add_conv(ParamSet& p, const std::string& prefix, std::size_t out, std::size_t in, std::size_t k) {
  p.add(prefix + ".conv.weight", {out, in, k, k});
  p.add(prefix + ".conv.bias", {out});
}

void add_deconv(ParamSet& p, const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
  p.add(prefix + ".deconv.weight", {in, out, k, k});
  p.add(prefix + ".deconv.bias", {out});
}

void add_bn(ParamSet& p, const std::string& prefix, std::size_t c) {
  p.add(prefix + ".bn.gamma", {c}, true, 1.0);
  p.add(prefix + ".bn.beta", {c}, true, 0.0);
  p.add(prefix + ".bn.running_mean", {c}, false, 0.0);
  p.add(prefix + ".bn.running_var", {c}, false, 1.0);
}

Tensor bn(ParamSet& p, const std::string& prefix, const Tensor& x, Mode mode, bool track_stats,
          double momentum = kBatchNormMomentum) {
  BatchNormState state{p.get(prefix + ".bn.running_mean"), p.get(prefix + ".bn.running_var")};
  const bool use_state = mode == Mode::Eval || track_stats;
  return batchnorm2d(x, p.get(prefix + ".bn.gamma"), p.get(prefix + ".bn.beta"), mode, use_state ? &state : nullptr,
                     momentum);
}

std::string enc_name(std::size_t i) { return "enc" + std::to_string(i); }
std::string dec_name(std::size_t i) { return "dec" + std::to_string(i); }

void check_batch(const Tensor& x, std::size_t channels, std::size_t size, std::size_t labels, const char* what) {
  if (x.rank() != 4 || x.dim(1) != channels || x.dim(2) != size || x.dim(3) != size)
    throw DimensionError(std::string(what) + ": expected [N, " + std::to_string(channels) + ", " +
                         std::to_string(size) + ", " + std::to_string(size) + "], got " + shape_str(x.shape()));
  if (x.dim(0) != labels)
    throw DimensionError(std::string(what) + ": " + std::to_string(labels) + " labels for a batch of " +
                         std::to_string(x.dim(0)));
}

}  // namespace

Generator::Generator(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto enc = cfg_.encoder_channels();
  const std::size_t levels = enc.size(), inject = cfg_.inject_level();
  std::size_t in = 3;
  for (std::size_t i = 0; i < levels; ++i) {
    add_conv(params_, enc_name(i), enc[i], in, kGenKernel);
    add_bn(params_, enc_name(i), enc[i]);
    in = enc[i] + (i == inject ? cfg_.label_channels : 0);
  }
  // Decoder module j mirrors encoder module levels - 2 - j.
  in = enc.back();
  for (std::size_t j = 0; j + 1 < levels; ++j) {
    const std::size_t out = enc[levels - 2 - j];
    add_deconv(params_, dec_name(j), in, out, kGenKernel);
    add_bn(params_, dec_name(j), out);
    in = out + enc[levels - 2 - j];
  }
  add_deconv(params_, "out", in, 1, kGenKernel);
}

Tensor Generator::forward(const Tensor& x, std::span<const ObserverLabel> labels, Mode mode, Rng& rng,
                          ForwardTrace* trace, bool track_stats) {
  check_batch(x, 3, cfg_.image_size, labels.size(), "generator");
  const auto enc = cfg_.encoder_channels();
  const std::size_t levels = enc.size(), inject = cfg_.inject_level();

  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t i = 0; i < levels; ++i) {
    const auto name = enc_name(i);
    h = conv2d(h, params_.get(name + ".conv.weight"), params_.get(name + ".conv.bias"), 2, 1);
    h = bn(params_, name, relu(h), mode, track_stats, stat_momentum_);
    if (trace) trace->encoder_outputs.push_back(h.shape());
    if (i + 1 < levels) skips.push_back(h);
    if (i == inject) {
      auto label = build_label_tensor(labels, cfg_.label_channels, cfg_.inject_size);
      h = concat_channels(h, label);
      if (trace) trace->label_injections.push_back({i + 1, label.dim(2), label.dim(1)});
    }
  }
  if (trace) trace->bottleneck = h.shape();

  for (std::size_t j = 0; j + 1 < levels; ++j) {
    const auto name = dec_name(j);
    h = deconv2d(h, params_.get(name + ".deconv.weight"), params_.get(name + ".deconv.bias"), 2, 1);
    h = bn(params_, name, relu(h), mode, track_stats, stat_momentum_);
    if (j < cfg_.dropout_layers) h = dropout(h, cfg_.dropout_rate, mode, rng);
    if (trace) trace->decoder_outputs.push_back(h.shape());
    const auto& skip = skips[levels - 2 - j];
    if (trace) trace->skips.emplace_back(skip.shape(), h.shape());
    h = concat_channels(h, skip);
  }
  h = psal::tanh(deconv2d(h, params_.get("out.deconv.weight"), params_.get("out.deconv.bias"), 2, 1));
  if (trace) {
    trace->head = Activation::Tanh;
    trace->output = h.shape();
  }
  return h;
}

void Generator::recalibrate_stats(std::span<const Tensor> inputs, std::span<const std::vector<ObserverLabel>> labels,
                                  Rng& rng) {
  if (inputs.size() != labels.size()) throw UsageError("recalibrate_stats: inputs and labels differ in length");
  if (inputs.empty()) return;
  std::vector<Tensor*> stats;
  for (auto& e : params_.entries())
    if (!e.trainable) stats.push_back(&e.tensor);
  std::vector<Buffer> sum;
  for (auto* t : stats) sum.emplace_back(t->numel(), 0.0);

  // Momentum 0 leaves each batch's own statistics in the running buffers.
  NoGradGuard no_grad;
  stat_momentum_ = 0.0;
  try {
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      forward(inputs[b], labels[b], Mode::Train, rng);
      for (std::size_t k = 0; k < stats.size(); ++k)
        for (std::size_t i = 0; i < sum[k].size(); ++i) sum[k][i] += stats[k]->data()[i];
    }
  } catch (...) {
    stat_momentum_ = kBatchNormMomentum;
    throw;
  }
  stat_momentum_ = kBatchNormMomentum;
  const double n = static_cast<double>(inputs.size());
  for (std::size_t k = 0; k < stats.size(); ++k)
    for (std::size_t i = 0; i < sum[k].size(); ++i) stats[k]->data()[i] = sum[k][i] / n;
}

Discriminator::Discriminator(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto ch = cfg_.discriminator_channels();
  std::size_t in = 4;
  for (std::size_t m = 0; m < 4; ++m) {
    const auto name = "d" + std::to_string(m + 1);
    if (m == 2) in += cfg_.label_channels;
    add_conv(params_, name, ch[m], in, kDiscKernel);
    add_bn(params_, name, ch[m]);
    in = ch[m];
  }
  add_conv(params_, "head", 1, in, 1);
}

Tensor Discriminator::forward(const Tensor& x, std::span<const ObserverLabel> labels, const Tensor& candidate,
                              Mode mode, ForwardTrace* trace, bool track_stats) {
  check_batch(x, 3, cfg_.image_size, labels.size(), "discriminator input");
  check_batch(candidate, 1, cfg_.image_size, labels.size(), "discriminator candidate");

  Tensor h = concat_channels(x, candidate);
  std::size_t pools = 0;
  for (std::size_t m = 0; m < 4; ++m) {
    const auto name = "d" + std::to_string(m + 1);
    if (m == 2) {
      auto label = build_label_tensor(labels, cfg_.label_channels, h.dim(2));
      h = concat_channels(h, label);
      if (trace) {
        trace->label_injections.push_back({m + 1, label.dim(2), label.dim(1)});
        trace->pools_before_injection = pools;
      }
    }
    h = conv2d(h, params_.get(name + ".conv.weight"), params_.get(name + ".conv.bias"), 1, 1);
    h = psal::tanh(bn(params_, name, h, mode, track_stats));
    if (m < 2) {
      h = maxpool2d(h, 2);
      ++pools;
    }
    if (trace) trace->encoder_outputs.push_back(h.shape());
  }
  h = sigmoid(conv2d(h, params_.get("head.conv.weight"), params_.get("head.conv.bias"), 1, 0));
  if (trace) {
    trace->head = Activation::Sigmoid;
    trace->output = h.shape();
  }
  return mean_per_sample(h);
}

SaliencyMap predict(Generator& generator, const Grid& stimulus, const Grid& population_map, ObserverLabel label) {
  const auto s = generator.config().image_size;
  if (stimulus.size() != s || population_map.size() != s)
    throw CompatibilityError("predict: model expects " + std::to_string(s) + "x" + std::to_string(s) +
                             " inputs, got " + std::to_string(stimulus.size()) + " and " +
                             std::to_string(population_map.size()));
  NoGradGuard no_grad;
  Rng unused(0);
  auto out = generator.forward(encode_generator_input(stimulus, population_map), std::span(&label, 1), Mode::Eval,
                               unused);
  return decode_map(out);
}

}  // namespace psal
