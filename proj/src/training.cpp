#include "psal/training.hpp"

#include <cmath>
#include <fstream>

#include "psal/checkpoint.hpp"
#include "psal/error.hpp"
#include "psal/ops.hpp"

namespace psal {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError("TrainConfig: " + msg); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(rms_decay > 0.0 && rms_decay < 1.0)) fail("rms_decay must be in (0, 1)");
  if (!(rms_epsilon > 0.0)) fail("rms_epsilon must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(lambda_l1 >= 0.0)) fail("lambda_l1 must be non-negative");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(init_range > 0.0)) fail("init_range must be positive");
  if (!(prob_clip > 0.0 && prob_clip < 0.5)) fail("prob_clip must be in (0, 0.5)");
}

OptimizerState OptimizerState::for_params(const ParamSet& params, bool with_momentum) {
  OptimizerState s;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    s.mean_square.push_back({e.name, Tensor(e.tensor.shape(), 0.0), false});
    if (with_momentum) s.velocity.push_back({e.name, Tensor(e.tensor.shape(), 0.0), false});
  }
  return s;
}

bool OptimizerState::same_values(const OptimizerState& other) const {
  auto same = [](const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape() ||
          a[i].tensor.values() != b[i].tensor.values())
        return false;
    return true;
  };
  return step == other.step && same(mean_square, other.mean_square) && same(velocity, other.velocity);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_probability(double p, const char* what) {
  if (!(p > 0.0 && p < 1.0)) throw UsageError(std::string(what) + " must be in (0, 1), got " + std::to_string(p));
}

void check_probabilities(const Tensor& t, const char* what) {
  for (double p : t.values())
    if (!(p >= 0.0 && p <= 1.0))
      throw UsageError(std::string(what) + " must be a probability, got " + std::to_string(p));
}

}  // namespace

Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake, double clip) {
  check_probabilities(d_real, "d_real");
  check_probabilities(d_fake, "d_fake");
  auto real_term = log(clamp(d_real, clip, 1.0 - clip));
  auto fake_term = log(add_scalar(scale(clamp(d_fake, clip, 1.0 - clip), -1.0), 1.0));
  return scale(mean(add(real_term, fake_term)), -1.0);
}

double discriminator_loss(double d_real, double d_fake, double clip) {
  check_probability(d_real, "d_real");
  check_probability(d_fake, "d_fake");
  NoGradGuard no_grad;
  return discriminator_loss(Tensor::scalar(d_real), Tensor::scalar(d_fake), clip).item();
}

Tensor generator_loss(const Tensor& d_fake, const Tensor& gen_out, const Tensor& gt, double lambda_l1, double clip) {
  check_probabilities(d_fake, "d_fake");
  if (gen_out.shape() != gt.shape())
    throw DimensionError("generator_loss: output " + shape_str(gen_out.shape()) + " vs ground truth " +
                         shape_str(gt.shape()));
  auto adversarial = scale(mean(log(clamp(d_fake, clip, 1.0 - clip))), -1.0);
  if (lambda_l1 == 0.0) return adversarial;
  return add(adversarial, scale(mean(abs(sub(gen_out, gt))), lambda_l1));
}

double generator_loss(double d_fake, const Tensor& gen_out, const Tensor& gt, double lambda_l1, double clip) {
  check_probability(d_fake, "d_fake");
  NoGradGuard no_grad;
  return generator_loss(Tensor::scalar(d_fake), gen_out, gt, lambda_l1, clip).item();
}

// ---------------------------------------------------------------------------

void rmsprop_step(ParamSet& params, OptimizerState& state, const TrainConfig& cfg) {
  const bool with_momentum = cfg.momentum > 0.0;
  std::size_t k = 0;
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (k >= state.mean_square.size() || state.mean_square[k].name != e.name)
      throw UsageError("rmsprop_step: optimizer state does not match parameter " + e.name);
    if (with_momentum && state.velocity.size() != state.mean_square.size())
      throw UsageError("rmsprop_step: momentum requested but no velocity buffers");
    auto theta = e.tensor.data();
    auto g = e.tensor.grad();
    for (double v : g)
      if (!std::isfinite(v)) throw TrainingError("non-finite gradient in parameter " + e.name);
    auto s = state.mean_square[k].tensor.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      s[i] = cfg.rms_decay * s[i] + (1.0 - cfg.rms_decay) * g[i] * g[i];
      const double step = cfg.learning_rate * g[i] / (std::sqrt(s[i]) + cfg.rms_epsilon);
      if (with_momentum) {
        auto v = state.velocity[k].tensor.data();
        v[i] = cfg.momentum * v[i] + step;
        theta[i] -= v[i];
      } else {
        theta[i] -= step;
      }
    }
    ++k;
  }
  ++state.step;
}

void init_weights(ParamSet& params, Rng& rng, double range) {
  if (!(range > 0.0)) throw ParameterError("init_weights: range must be positive");
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& e : params.entries()) {
    auto d = e.tensor.data();
    if (ends_with(e.name, ".gamma") || ends_with(e.name, ".running_var")) {
      std::fill(d.begin(), d.end(), 1.0);
    } else if (ends_with(e.name, ".beta") || ends_with(e.name, ".running_mean")) {
      std::fill(d.begin(), d.end(), 0.0);
    } else {
      for (auto& v : d) v = rng.uniform(-range, range);
    }
  }
}

// ---------------------------------------------------------------------------

EncodedSample encode_sample(const Sample& sample) {
  return {encode_generator_input(sample.stimulus, sample.population_map), encode_map(sample.gt_map), sample.label};
}

Trainer::Trainer(const NetConfig& net, const TrainConfig& train)
    : net_(net),
      train_(train),
      generator_(net),
      discriminator_(net),
      opt_g_(OptimizerState::for_params(generator_.params(), train.momentum > 0.0)),
      opt_d_(OptimizerState::for_params(discriminator_.params(), train.momentum > 0.0)),
      rng_(train.seed) {
  train_.validate();
  Rng init = Rng(train.seed).fork(0x1417);
  init_weights(generator_.params(), init, train.init_range);
  init_weights(discriminator_.params(), init, train.init_range);
}

Trainer::Trainer(const Checkpoint& c)
    : net_(c.net),
      train_(c.train),
      generator_(c.net),
      discriminator_(c.net),
      opt_g_(c.opt_g),
      opt_d_(c.opt_d),
      epoch_(c.epoch),
      rng_(c.rng) {
  train_.validate();
  auto copy_into = [](ParamSet& dst, const ParamSet& src) {
    if (dst.entries().size() != src.entries().size())
      throw CompatibilityError("checkpoint parameters do not match the network configuration");
    for (std::size_t i = 0; i < dst.entries().size(); ++i) {
      auto& d = dst.entries()[i];
      const auto& s = src.entries()[i];
      if (d.name != s.name || d.tensor.shape() != s.tensor.shape())
        throw CompatibilityError("checkpoint parameter " + s.name + " does not match the network configuration");
      std::copy(s.tensor.values().begin(), s.tensor.values().end(), d.tensor.data().begin());
    }
  };
  copy_into(generator_.params(), c.generator);
  copy_into(discriminator_.params(), c.discriminator);
  // Deep copies so the checkpoint and the trainer never share buffers.
  for (auto* opt : {&opt_g_, &opt_d_}) {
    for (auto& e : opt->mean_square) e.tensor = e.tensor.detach();
    for (auto& e : opt->velocity) e.tensor = e.tensor.detach();
  }
}

Trainer::BatchLosses Trainer::train_batch(std::span<const EncodedSample* const> batch) {
  std::vector<Tensor> inputs, gts;
  std::vector<ObserverLabel> labels;
  for (const auto* s : batch) {
    inputs.push_back(s->input);
    gts.push_back(s->gt);
    labels.push_back(s->label);
  }
  const Tensor x = stack_batch(inputs);
  const Tensor gt = stack_batch(gts);

  auto fake = generator_.forward(x, labels, Mode::Train, rng_);

  // Discriminator step on the detached generator output.
  std::optional<ParamSet> g_before;
  if (check_alternation_) g_before = generator_.params().clone();
  discriminator_.params().zero_grad();
  auto d_real = discriminator_.forward(x, labels, gt, Mode::Train);
  auto d_fake = discriminator_.forward(x, labels, fake.detach(), Mode::Train);
  auto loss_d = discriminator_loss(d_real, d_fake, train_.prob_clip);
  backward(loss_d);
  rmsprop_step(discriminator_.params(), opt_d_, train_);
  if (g_before && !g_before->same_values(generator_.params()))
    throw TrainingError("discriminator step modified generator parameters");

  // Generator step; the discriminator is frozen, its running stats included.
  std::optional<ParamSet> d_before;
  if (check_alternation_) d_before = discriminator_.params().clone();
  generator_.params().zero_grad();
  auto d_fake_for_g = discriminator_.forward(x, labels, fake, Mode::Train, nullptr, false);
  auto loss_g = generator_loss(d_fake_for_g, fake, gt, train_.lambda_l1, train_.prob_clip);
  backward(loss_g);
  rmsprop_step(generator_.params(), opt_g_, train_);
  discriminator_.params().zero_grad();
  if (d_before && !d_before->same_values(discriminator_.params()))
    throw TrainingError("generator step modified discriminator parameters");

  return {loss_d.item(), loss_g.item()};
}

EpochRecord Trainer::evaluate(std::span<const Sample> test) {
  EpochRecord rec;
  rec.epoch = epoch_;
  std::size_t count[2] = {0, 0};
  for (const auto& s : test) {
    const auto pred = predict(generator_, s.stimulus, s.population_map, s.label);
    const int g = s.label.group();
    rec.kl[g] += kl_div(s.gt_map, pred);
    rec.ssim[g] += ssim(pred, s.gt_map);
    ++count[g];
  }
  for (int g = 0; g < 2; ++g) {
    if (count[g] == 0) continue;
    rec.kl[g] /= static_cast<double>(count[g]);
    rec.ssim[g] /= static_cast<double>(count[g]);
  }
  return rec;
}

EpochRecord Trainer::run_epoch(std::span<const EncodedSample> train, std::span<const Sample> test) {
  std::vector<const EncodedSample*> order;
  for (const auto& s : train) order.push_back(&s);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);

  const std::size_t bs = train_.batch_size;
  double sum_d = 0.0, sum_g = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
    const auto losses = train_batch(std::span(order).subspan(start, bs));
    if (!std::isfinite(losses.loss_d) || !std::isfinite(losses.loss_g))
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", batch " +
                          std::to_string(batches));
    sum_d += losses.loss_d;
    sum_g += losses.loss_g;
    ++batches;
  }
  if (batches == 0) throw UsageError("training set smaller than one batch");
  recalibrate_stats(train);
  ++epoch_;
  auto rec = evaluate(test);
  rec.loss_d = sum_d / static_cast<double>(batches);
  rec.loss_g = sum_g / static_cast<double>(batches);
  return rec;
}

void Trainer::recalibrate_stats(std::span<const EncodedSample> train) {
  // Unshuffled full batches, with a dropout stream of their own so the
  // training stream is untouched.
  const std::size_t bs = train_.batch_size;
  std::vector<Tensor> inputs;
  std::vector<std::vector<ObserverLabel>> labels;
  for (std::size_t start = 0; start + bs <= train.size(); start += bs) {
    std::vector<Tensor> items;
    std::vector<ObserverLabel> lb;
    for (std::size_t i = start; i < start + bs; ++i) {
      items.push_back(train[i].input);
      lb.push_back(train[i].label);
    }
    inputs.push_back(stack_batch(items));
    labels.push_back(std::move(lb));
  }
  Rng rng = Rng(train_.seed).fork(0x5747 + epoch_);
  generator_.recalibrate_stats(inputs, labels, rng);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.net = net_;
  c.train = train_;
  c.generator = generator_.params().clone();
  c.discriminator = discriminator_.params().clone();
  c.opt_g = opt_g_;
  c.opt_d = opt_d_;
  for (auto* opt : {&c.opt_g, &c.opt_d}) {
    for (auto& e : opt->mean_square) e.tensor = e.tensor.detach();
    for (auto& e : opt->velocity) e.tensor = e.tensor.detach();
  }
  c.epoch = epoch_;
  c.rng = rng_;
  return c;
}

// ---------------------------------------------------------------------------

Checkpoint train(const DatasetManifest& dataset, const NetConfig& net, const TrainConfig& cfg,
                 const TrainOptions& options) {
  net.validate();
  cfg.validate();
  if (net.image_size != dataset.size)
    throw CompatibilityError("network image_size " + std::to_string(net.image_size) + " does not match dataset size " +
                             std::to_string(dataset.size));

  const auto train_samples = load_samples(dataset, "train");
  const auto test_samples = load_samples(dataset, "test");
  if (train_samples.empty() || test_samples.empty())
    throw UsageError("dataset has no train/test split; run split first");
  std::vector<EncodedSample> encoded;
  for (const auto& s : train_samples) encoded.push_back(encode_sample(s));

  Trainer trainer = options.resume_from ? Trainer(load_checkpoint(*options.resume_from)) : Trainer(net, cfg);
  if (options.resume_from) {
    if (trainer.net_config() != net) throw CompatibilityError("resume checkpoint has a different network config");
    TrainConfig saved = trainer.train_config();
    saved.epochs = cfg.epochs;
    saved.checkpoint_every = cfg.checkpoint_every;
    if (saved != cfg) throw CompatibilityError("resume checkpoint has a different training config");
    trainer.set_train_config(saved);
  }

  const auto log_path =
      options.log_path.empty() ? std::filesystem::path(options.checkpoint_path.string() + ".metrics.csv")
                               : options.log_path;
  const bool fresh_log = !options.resume_from || !std::filesystem::exists(log_path);
  std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open metrics log " + log_path.string());
  if (fresh_log) log << "epoch,loss_d,loss_g,kl_g0,kl_g1,ssim_g0,ssim_g1\n";
  log.precision(17);

  while (trainer.epoch() < cfg.epochs) {
    const auto rec = trainer.run_epoch(encoded, test_samples);
    log << rec.epoch << "," << rec.loss_d << "," << rec.loss_g << "," << rec.kl[0] << "," << rec.kl[1] << ","
        << rec.ssim[0] << "," << rec.ssim[1] << "\n";
    log.flush();
    if (!log) throw IoError("failed writing metrics log " + log_path.string());
    if (options.on_epoch) options.on_epoch(rec);
    if (cfg.checkpoint_every && trainer.epoch() % cfg.checkpoint_every == 0 && trainer.epoch() < cfg.epochs)
      save_checkpoint(trainer.checkpoint(), options.checkpoint_path);
  }
  auto final_checkpoint = trainer.checkpoint();
  save_checkpoint(final_checkpoint, options.checkpoint_path);
  return final_checkpoint;
}

}  // namespace psal
