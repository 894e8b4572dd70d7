#include "psal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <unordered_set>

#include "psal/error.hpp"
#include "psal/pgm.hpp"
#include "psal/rng.hpp"

namespace psal {

namespace fs = std::filesystem;
using nlohmann::json;

ObserverLabel::ObserverLabel(int group) : group_(group) {
  if (group != 0 && group != 1) throw UsageError("observer label must be 0 or 1, got " + std::to_string(group));
}

SaliencyMap fixations_to_heatmap(const FixationSet& fixations, std::size_t size, double sigma) {
  if (fixations.empty()) throw UsageError("fixations_to_heatmap: empty fixation set");
  if (!(sigma > 0.0)) throw ParameterError("fixations_to_heatmap: sigma must be positive");
  if (fixations.frame() != size)
    throw DimensionError("fixations_to_heatmap: fixations index a " + std::to_string(fixations.frame()) +
                         " frame, requested size " + std::to_string(size));
  std::vector<double> v(size * size, 0.0);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& p : fixations.points())
    for (std::size_t r = 0; r < size; ++r) {
      const double dr = static_cast<double>(r) - p.row;
      for (std::size_t c = 0; c < size; ++c) {
        const double dc = static_cast<double>(c) - p.col;
        v[r * size + c] += std::exp(-(dr * dr + dc * dc) * inv);
      }
    }
  const double peak = *std::max_element(v.begin(), v.end());
  for (auto& x : v) x /= peak;
  // Division of the peak by itself is exact, so max is exactly 1.
  return SaliencyMap(size, std::move(v));
}

Tensor encode_generator_input(const Grid& stimulus, const Grid& population_map) {
  if (stimulus.size() != population_map.size())
    throw DimensionError("encode_generator_input: stimulus is " + std::to_string(stimulus.size()) +
                         ", population map is " + std::to_string(population_map.size()));
  const std::size_t s = stimulus.size(), plane = s * s;
  Tensor t({1, 3, s, s}, -1.0);
  auto d = t.data();
  for (std::size_t i = 0; i < plane; ++i) {
    d[i] = 2.0 * stimulus.values()[i] - 1.0;
    d[plane + i] = 2.0 * population_map.values()[i] - 1.0;
  }
  return t;
}

Tensor encode_map(const Grid& map) {
  const std::size_t s = map.size();
  Tensor t({1, 1, s, s});
  for (std::size_t i = 0; i < s * s; ++i) t.data()[i] = 2.0 * map.values()[i] - 1.0;
  return t;
}

SaliencyMap decode_map(const Tensor& output, std::size_t index) {
  if (output.rank() != 4 || output.dim(1) != 1 || output.dim(2) != output.dim(3))
    throw DimensionError("decode_map: expected [N, 1, S, S], got " + shape_str(output.shape()));
  const std::size_t s = output.dim(2), plane = s * s;
  std::vector<double> v(plane);
  for (std::size_t i = 0; i < plane; ++i)
    v[i] = std::clamp((output.data()[index * plane + i] + 1.0) / 2.0, 0.0, 1.0);
  return SaliencyMap(s, std::move(v));
}

Tensor build_label_tensor(ObserverLabel label, std::size_t channels, std::size_t spatial) {
  return build_label_tensor(std::span<const ObserverLabel>(&label, 1), channels, spatial);
}

Tensor build_label_tensor(std::span<const ObserverLabel> labels, std::size_t channels, std::size_t spatial) {
  if (channels < 1 || spatial < 1) throw UsageError("build_label_tensor: channels and spatial must be >= 1");
  Tensor t({labels.size(), channels, spatial, spatial});
  const std::size_t per = channels * spatial * spatial;
  for (std::size_t i = 0; i < labels.size(); ++i)
    std::fill_n(t.data().begin() + static_cast<std::ptrdiff_t>(i * per), per, static_cast<double>(labels[i].group()));
  return t;
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw UsageError("stack_batch: no items");
  Shape shape = items.front().shape();
  if (shape.size() != 4 || shape[0] != 1) throw DimensionError("stack_batch: items must be [1, C, H, W]");
  const std::size_t per = items.front().numel();
  std::vector<double> v;
  v.reserve(per * items.size());
  for (const auto& t : items) {
    if (t.shape() != items.front().shape()) throw DimensionError("stack_batch: mismatched item shapes");
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  shape[0] = items.size();
  return Tensor(shape, std::move(v));
}

// ---------------------------------------------------------------------------
// Synthetic dataset

namespace {

struct Blob {
  double row, col, std, amplitude;
};

Fixation sample_around(Rng& rng, double row, double col, double std, std::size_t size) {
  const auto s = static_cast<int>(size);
  for (;;) {
    const auto r = static_cast<int>(std::lround(rng.normal(row, std)));
    const auto c = static_cast<int>(std::lround(rng.normal(col, std)));
    if (r >= 0 && c >= 0 && r < s && c < s) return {r, c};
  }
}

std::string stimulus_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", index);
  return buf;
}

}  // namespace

SynthStimulus synth_stimulus(std::size_t index, std::size_t size, std::uint64_t seed, const SynthParams& params) {
  Rng rng = Rng(seed).fork(index);
  const double sz = static_cast<double>(size);

  const std::size_t blob_count = params.min_blobs + rng.below(params.max_blobs - params.min_blobs + 1);
  std::vector<Blob> blobs;
  for (std::size_t b = 0; b < blob_count; ++b) {
    Blob blob{rng.uniform(sz / 8.0, 7.0 * sz / 8.0), rng.uniform(sz / 8.0, 7.0 * sz / 8.0),
              rng.uniform(sz / 16.0, sz / 8.0), b == 0 ? 1.0 : rng.uniform(0.35, 0.75)};
    blobs.push_back(blob);
  }

  std::vector<double> stim(size * size, 0.0);
  for (const auto& b : blobs)
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c) {
        const double dr = static_cast<double>(r) - b.row, dc = static_cast<double>(c) - b.col;
        stim[r * size + c] += b.amplitude * std::exp(-(dr * dr + dc * dc) / (2.0 * b.std * b.std));
      }
  for (auto& v : stim) v = std::min(v, 1.0);

  // Group 0 looks tightly at the brightest blob (blob 0).
  std::vector<Fixation> young;
  for (std::size_t i = 0; i < params.fixations_per_group; ++i)
    young.push_back(sample_around(rng, blobs[0].row, blobs[0].col, sz * params.group0_std_frac, size));

  // Group 1 explores every blob and sometimes looks anywhere.
  std::vector<Fixation> elder;
  for (std::size_t i = 0; i < params.fixations_per_group; ++i) {
    if (rng.uniform() < params.outlier_rate) {
      elder.push_back({static_cast<int>(rng.below(size)), static_cast<int>(rng.below(size))});
    } else {
      const auto& b = blobs[rng.below(blobs.size())];
      elder.push_back(sample_around(rng, b.row, b.col, sz * params.group1_std_frac, size));
    }
  }

  const double sigma = sz * params.heatmap_sigma_frac;
  SynthStimulus out{Grid(size, std::move(stim)),
                    {},
                    {FixationSet(size, std::move(young)), FixationSet(size, std::move(elder))},
                    {}};
  for (int g = 0; g < 2; ++g) out.gt_maps[g] = fixations_to_heatmap(out.fixations[g], size, sigma);

  std::vector<double> pop(size * size);
  for (std::size_t i = 0; i < pop.size(); ++i)
    pop[i] = 0.5 * (out.gt_maps[0].values()[i] + out.gt_maps[1].values()[i]);
  const double peak = *std::max_element(pop.begin(), pop.end());
  for (auto& v : pop) v /= peak;
  out.population_map = SaliencyMap(size, std::move(pop));
  return out;
}

std::vector<std::string> DatasetManifest::stimulus_ids() const {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& e : samples)
    if (seen.insert(e.stimulus).second) ids.push_back(e.stimulus);
  return ids;
}

DatasetManifest synth_dataset(std::size_t n, std::size_t size, std::uint64_t seed, const fs::path& root,
                              const SynthParams& params) {
  if (n < 10) throw UsageError("synth_dataset: need at least 10 stimuli, got " + std::to_string(n));
  if (size < 32) throw UsageError("synth_dataset: size must be >= 32, got " + std::to_string(size));

  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError("cannot create " + (root / "images").string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = root;
  manifest.size = size;
  manifest.seed = seed;
  manifest.params = params;
  for (std::size_t i = 0; i < n; ++i) {
    const auto stim = synth_stimulus(i, size, seed, params);
    const auto stem = stimulus_stem(i);
    const std::string stim_file = "images/" + stem + "_stimulus.pgm";
    const std::string pop_file = "images/" + stem + "_population.pgm";
    write_pgm(root / stim_file, stim.stimulus);
    write_pgm(root / pop_file, stim.population_map);
    for (int g = 0; g < 2; ++g) {
      const std::string gt_file = "images/" + stem + "_gt" + std::to_string(g) + ".pgm";
      write_pgm(root / gt_file, stim.gt_maps[g]);
      manifest.samples.push_back(
          {stem + "_g" + std::to_string(g), stim_file, pop_file, gt_file, stim.fixations[g], ObserverLabel(g), ""});
    }
  }
  write_manifest(manifest);
  return manifest;
}

DatasetManifest split(const DatasetManifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw UsageError("split: test fraction must be in (0, 1), got " + std::to_string(test_fraction));
  auto ids = manifest.stimulus_ids();
  Rng rng(seed);
  // Fisher-Yates with the portable generator.
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(ids.size())));
  if (n_test == 0 || n_test == ids.size())
    throw UsageError("split: fraction " + std::to_string(test_fraction) + " of " + std::to_string(ids.size()) +
                     " stimuli leaves an empty split");
  const std::unordered_set<std::string> test_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));

  DatasetManifest out = manifest;
  out.test_fraction = test_fraction;
  out.split_seed = seed;
  for (auto& e : out.samples) e.split = test_ids.count(e.stimulus) ? "test" : "train";
  return out;
}

namespace {

json fixations_to_json(const FixationSet& f) {
  json arr = json::array();
  for (const auto& p : f.points()) arr.push_back({p.row, p.col});
  return arr;
}

}  // namespace

void write_manifest(const DatasetManifest& m) {
  json j;
  j["version"] = m.version;
  j["size"] = m.size;
  j["seed"] = m.seed;
  j["test_fraction"] = m.test_fraction;
  j["split_seed"] = m.split_seed;
  j["generator"] = {{"fixations_per_group", m.params.fixations_per_group},
                    {"min_blobs", m.params.min_blobs},
                    {"max_blobs", m.params.max_blobs},
                    {"group0_std_frac", m.params.group0_std_frac},
                    {"group1_std_frac", m.params.group1_std_frac},
                    {"outlier_rate", m.params.outlier_rate},
                    {"heatmap_sigma_frac", m.params.heatmap_sigma_frac}};
  json samples = json::array();
  for (const auto& e : m.samples)
    samples.push_back({{"id", e.id},
                       {"stimulus", e.stimulus},
                       {"population_map", e.population_map},
                       {"gt_map", e.gt_map},
                       {"fixations", fixations_to_json(e.fixations)},
                       {"label", e.label.group()},
                       {"split", e.split}});
  j["samples"] = std::move(samples);

  const auto path = m.root / "manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetManifest read_manifest(const fs::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  DatasetManifest m;
  m.root = root;
  try {
    const json j = json::parse(in);
    m.version = j.at("version").get<int>();
    if (m.version != DatasetManifest::kVersion)
      throw CompatibilityError(path.string() + ": unsupported manifest version " + std::to_string(m.version));
    m.size = j.at("size").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.test_fraction = j.value("test_fraction", 0.0);
    m.split_seed = j.value("split_seed", std::uint64_t{0});
    if (j.contains("generator")) {
      const auto& g = j["generator"];
      m.params.fixations_per_group = g.at("fixations_per_group").get<std::size_t>();
      m.params.min_blobs = g.at("min_blobs").get<std::size_t>();
      m.params.max_blobs = g.at("max_blobs").get<std::size_t>();
      m.params.group0_std_frac = g.at("group0_std_frac").get<double>();
      m.params.group1_std_frac = g.at("group1_std_frac").get<double>();
      m.params.outlier_rate = g.at("outlier_rate").get<double>();
      m.params.heatmap_sigma_frac = g.at("heatmap_sigma_frac").get<double>();
    }
    for (const auto& s : j.at("samples")) {
      std::vector<Fixation> pts;
      for (const auto& p : s.at("fixations")) pts.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
      m.samples.push_back({s.at("id").get<std::string>(), s.at("stimulus").get<std::string>(),
                           s.at("population_map").get<std::string>(), s.at("gt_map").get<std::string>(),
                           FixationSet(m.size, std::move(pts)), ObserverLabel(s.at("label").get<int>()),
                           s.value("split", std::string{})});
    }
  } catch (const json::exception& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
  return m;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const std::string& split_tag) {
  std::vector<Sample> out;
  for (const auto& e : manifest.samples) {
    if (!split_tag.empty() && e.split != split_tag) continue;
    Sample s{e.id,
             e.stimulus,
             read_pgm(manifest.root / e.stimulus),
             read_pgm(manifest.root / e.population_map),
             e.label,
             read_pgm(manifest.root / e.gt_map),
             e.fixations};
    if (s.stimulus.size() != manifest.size || s.population_map.size() != manifest.size ||
        s.gt_map.size() != manifest.size)
      throw DimensionError("sample " + e.id + " does not match manifest size " + std::to_string(manifest.size));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace psal
