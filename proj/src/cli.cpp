#include "psal/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "psal/checkpoint.hpp"
#include "psal/config.hpp"
#include "psal/data.hpp"
#include "psal/error.hpp"
#include "psal/metrics.hpp"
#include "psal/model.hpp"
#include "psal/pgm.hpp"
#include "psal/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace psal::cli {
namespace {

// Raised for bad argument combinations that CLI11 cannot express.
struct ArgError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LogLevel { Quiet, Info, Debug };

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {
    const char* env = std::getenv("PSAL_LOG");
    const std::string v = env ? env : "info";
    if (v == "quiet") {
      level_ = LogLevel::Quiet;
    } else if (v == "debug") {
      level_ = LogLevel::Debug;
    } else if (v != "info") {
      err_ << "warning: PSAL_LOG=" << v << " not one of quiet, info, debug; using info\n";
    }
  }
  void info(const std::string& msg) const {
    if (level_ != LogLevel::Quiet) err_ << msg << "\n";
  }
  void debug(const std::string& msg) const {
    if (level_ == LogLevel::Debug) err_ << msg << "\n";
  }
  void error(const std::string& msg) const { err_ << "error: " << msg << "\n"; }

 private:
  std::ostream& err_;
  LogLevel level_ = LogLevel::Info;
};

std::string fmt(double v, int precision = 6) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t n = 0;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, const Log& log) {
  log.info("generating " + std::to_string(a.n) + " stimuli of size " + std::to_string(a.size) + " into " + a.out);
  auto m = synth_dataset(a.n, a.size, a.seed, a.out);
  m = split(m, a.test_fraction, a.seed);
  write_manifest(m);
  std::size_t n_test = 0;
  for (const auto& e : m.samples) n_test += e.split == "test";
  out << "wrote " << m.samples.size() << " samples (" << m.samples.size() - n_test << " train, " << n_test
      << " test) to " << a.out << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::string resume;
};

int cmd_train(const TrainArgs& a, std::ostream& out, const Log& log) {
  auto run_cfg = load_run_config(a.config);
  if (a.epochs) run_cfg.train.epochs = *a.epochs;
  if (a.seed) run_cfg.train.seed = *a.seed;
  run_cfg.train.validate();
  const auto manifest = read_manifest(a.data);
  log.debug("config: " + render_run_config(run_cfg));

  TrainOptions opts;
  opts.checkpoint_path = a.out;
  if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
  const auto start = std::chrono::steady_clock::now();
  opts.on_epoch = [&](const EpochRecord& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.info("epoch " + std::to_string(r.epoch) + "  loss_d " + fmt(r.loss_d, 4) + "  loss_g " + fmt(r.loss_g, 4) +
             "  kl " + fmt(r.kl[0], 4) + "/" + fmt(r.kl[1], 4) + "  ssim " + fmt(r.ssim[0], 4) + "/" +
             fmt(r.ssim[1], 4) + "  (" + fmt(secs, 1) + "s)");
  };
  const auto ckpt = train(manifest, run_cfg.net, run_cfg.train, opts);
  out << "trained " << ckpt.epoch << " epochs; checkpoint " << a.out << "\n";
  return kOk;
}

// ---- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string ckpt;
  std::string stimulus;
  std::string population;
  std::string label;
  std::string out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, const Log& log) {
  if (a.label != "0" && a.label != "1") throw ArgError("--label must be 0 or 1, got '" + a.label + "'");
  const ObserverLabel label(a.label == "1" ? 1 : 0);
  Trainer trainer(load_checkpoint(a.ckpt));
  log.debug("loaded checkpoint at epoch " + std::to_string(trainer.epoch()));
  const auto stim = read_pgm(a.stimulus);
  const auto pop = read_pgm(a.population);
  const auto map = predict(trainer.generator(), stim, pop, label);
  write_pgm(a.out, map);
  out << "wrote " << a.out << "\n";
  return kOk;
}

// ---- eval -------------------------------------------------------------------

const std::vector<std::string> kMetricNames = {"auc", "nss", "kl", "ssim", "mse", "spread"};

std::vector<std::string> parse_metrics(const std::string& list) {
  std::vector<std::string> names;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (std::find(kMetricNames.begin(), kMetricNames.end(), item) == kMetricNames.end())
      throw ArgError("unknown metric '" + item + "' (expected auc, nss, kl, ssim, mse, spread)");
    if (std::find(names.begin(), names.end(), item) == names.end()) names.push_back(item);
  }
  if (names.empty()) throw ArgError("--metrics is empty");
  return names;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string fixations;
  std::string metrics = "auc,nss,kl,ssim,mse,spread";
  std::string split;
  bool json = false;
};

struct EvalItem {
  std::string id;
  fs::path pred;
  fs::path gt;
  std::optional<FixationSet> fixations;
  std::optional<int> label;
};

FixationSet read_fixation_file(const fs::path& path, std::size_t frame) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fixation file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("fixations")) j = j["fixations"];
  if (!j.is_array()) throw CorruptionError(path.string() + ": expected an array of [row, col] pairs");
  std::vector<Fixation> pts;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) throw CorruptionError(path.string() + ": expected [row, col] pairs");
    pts.push_back({p[0].get<int>(), p[1].get<int>()});
  }
  return FixationSet(frame, std::move(pts));
}

std::vector<EvalItem> collect_items(const EvalArgs& a) {
  std::vector<EvalItem> items;
  const fs::path pred(a.pred), gt(a.gt);
  if (!fs::exists(gt)) throw IoError("--gt path " + a.gt + " does not exist");
  if (!fs::exists(pred)) throw IoError("--pred path " + a.pred + " does not exist");

  if (fs::is_directory(gt) && fs::exists(gt / "manifest.json")) {
    // Dataset mode: predictions are <pred>/<sample id>.pgm.
    if (!fs::is_directory(pred)) throw ArgError("--pred must be a directory when --gt is a dataset");
    if (!a.fixations.empty()) throw ArgError("--fixations is taken from the manifest when --gt is a dataset");
    const auto m = read_manifest(gt);
    for (const auto& e : m.samples) {
      if (!a.split.empty() && e.split != a.split) continue;
      items.push_back({e.id, pred / (e.id + ".pgm"), m.root / e.gt_map, e.fixations, e.label.group()});
    }
    if (items.empty()) throw UsageError("no samples in " + a.gt + (a.split.empty() ? "" : " with split " + a.split));
    return items;
  }
  if (!a.split.empty()) throw ArgError("--split requires --gt to be a dataset directory");

  if (fs::is_directory(gt)) {
    if (!fs::is_directory(pred)) throw ArgError("--pred must be a directory when --gt is a directory");
    if (!a.fixations.empty() && !fs::is_directory(a.fixations))
      throw ArgError("--fixations must be a directory when --gt is a directory");
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(gt))
      if (de.is_regular_file() && de.path().extension() == ".pgm") files.push_back(de.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("no .pgm files in " + a.gt);
    for (const auto& f : files) {
      EvalItem it{f.stem().string(), pred / f.filename(), f, std::nullopt, std::nullopt};
      items.push_back(it);
    }
  } else {
    if (fs::is_directory(pred)) throw ArgError("--pred must be a file when --gt is a file");
    items.push_back({pred.stem().string(), pred, gt, std::nullopt, std::nullopt});
  }
  return items;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, const Log& log) {
  const auto metrics = parse_metrics(a.metrics);
  auto items = collect_items(a);
  const bool need_fix = std::any_of(metrics.begin(), metrics.end(), [](const auto& m) { return m == "auc" || m == "nss"; });

  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> values;
  for (auto& it : items) {
    if (!fs::exists(it.pred)) throw IoError("missing prediction " + it.pred.string());
    const auto p = read_pgm(it.pred);
    const auto g = read_pgm(it.gt);
    if (p.size() != g.size())
      throw DimensionError(it.id + ": prediction is " + std::to_string(p.size()) + " px, ground truth " +
                           std::to_string(g.size()) + " px");
    if (need_fix && !it.fixations) {
      if (a.fixations.empty()) throw ArgError("metrics auc and nss need --fixations");
      const fs::path f = fs::is_directory(a.fixations) ? fs::path(a.fixations) / (it.id + ".json") : fs::path(a.fixations);
      it.fixations = read_fixation_file(f, g.size());
    }
    std::vector<double> row;
    for (const auto& m : metrics) {
      double v = kNaN;
      try {
        if (m == "auc") v = auc_judd(p, *it.fixations);
        else if (m == "nss") v = nss(p, *it.fixations);
        else if (m == "kl") v = kl_div(g, p);
        else if (m == "ssim") v = ssim(p, g);
        else if (m == "mse") v = mse(p, g);
        else if (m == "spread") v = spread(p);
      } catch (const UndefinedMetricError& e) {
        log.info("warning: " + it.id + ": " + m + " undefined (" + e.what() + ")");
      }
      row.push_back(v);
    }
    log.debug("scored " + it.id);
    values.push_back(std::move(row));
  }

  // Groups: every label seen, then all samples together.
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].label) by_label[*items[i].label].push_back(i);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  for (const auto& [lbl, idx] : by_label) groups.push_back({"label=" + std::to_string(lbl), idx});
  std::vector<std::size_t> all(items.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  groups.push_back({"all", all});

  auto group_mean = [&](const std::vector<std::size_t>& idx, std::size_t k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (auto i : idx)
      if (std::isfinite(values[i][k])) sum += values[i][k], ++n;
    return n ? sum / static_cast<double>(n) : kNaN;
  };

  if (a.json) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json doc;
    doc["metrics"] = metrics;
    doc["samples"] = json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
      json s;
      s["id"] = items[i].id;
      s["label"] = items[i].label ? json(*items[i].label) : json(nullptr);
      for (std::size_t k = 0; k < metrics.size(); ++k) s[metrics[k]] = num(values[i][k]);
      doc["samples"].push_back(s);
    }
    doc["means"] = json::object();
    for (const auto& [name, idx] : groups) {
      json g;
      g["count"] = idx.size();
      for (std::size_t k = 0; k < metrics.size(); ++k) g[metrics[k]] = num(group_mean(idx, k));
      doc["means"][name] = g;
    }
    out << doc.dump(2) << "\n";
    return kOk;
  }

  std::size_t id_w = 12;
  for (const auto& it : items) id_w = std::max(id_w, it.id.size() + 2);
  for (const auto& g : groups) id_w = std::max(id_w, g.first.size() + 7);
  auto header = [&] {
    out << std::left << std::setw(static_cast<int>(id_w)) << "sample" << std::setw(7) << "label";
    for (const auto& m : metrics) out << std::right << std::setw(12) << m;
    out << "\n";
  };
  header();
  for (std::size_t i = 0; i < items.size(); ++i) {
    out << std::left << std::setw(static_cast<int>(id_w)) << items[i].id << std::setw(7)
        << (items[i].label ? std::to_string(*items[i].label) : "-");
    for (double v : values[i]) out << std::right << std::setw(12) << fmt(v);
    out << "\n";
  }
  out << "\n";
  header();
  for (const auto& [name, idx] : groups) {
    out << std::left << std::setw(static_cast<int>(id_w)) << ("mean[" + name + "]") << std::setw(7) << idx.size();
    for (std::size_t k = 0; k < metrics.size(); ++k) out << std::right << std::setw(12) << fmt(group_mean(idx, k));
    out << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"Personalized saliency: synthetic data, training, prediction and evaluation", "psal"};
  app.require_subcommand(1, 1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic two-group dataset with a train/test split");
  synth->add_option("--out", sa.out, "dataset directory")->required();
  synth->add_option("--n", sa.n, "number of stimuli")->required();
  synth->add_option("--size", sa.size, "image size in pixels")->required();
  synth->add_option("--seed", sa.seed, "generator and split seed")->required();
  synth->add_option("--test-fraction", sa.test_fraction, "held-out fraction of stimuli")->capture_default_str();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train a generator/discriminator pair on a split dataset");
  trn->add_option("--data", ta.data, "dataset directory")->required();
  trn->add_option("--config", ta.config, "JSON run config")->required();
  trn->add_option("--out", ta.out, "checkpoint path")->required();
  trn->add_option("--epochs", ta.epochs, "override the configured epoch count");
  trn->add_option("--seed", ta.seed, "override the configured seed");
  trn->add_option("--resume", ta.resume, "continue from this checkpoint");

  PredictArgs pa;
  auto* prd = app.add_subcommand("predict", "predict a personalized saliency map");
  prd->add_option("--ckpt", pa.ckpt, "checkpoint")->required();
  prd->add_option("--stimulus", pa.stimulus, "stimulus PGM")->required();
  prd->add_option("--population-map", pa.population, "population fixation map PGM")->required();
  prd->add_option("--label", pa.label, "observer group, 0 or 1")->required();
  prd->add_option("--out", pa.out, "output PGM")->required();

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "score predicted maps against ground truth");
  evl->add_option("--pred", ea.pred, "prediction PGM or directory")->required();
  evl->add_option("--gt", ea.gt, "ground-truth PGM, directory, or dataset directory")->required();
  evl->add_option("--fixations", ea.fixations, "fixation JSON file or directory (auc, nss)");
  evl->add_option("--metrics", ea.metrics, "comma list of auc,nss,kl,ssim,mse,spread")->capture_default_str();
  evl->add_option("--split", ea.split, "restrict a dataset to this split tag");
  evl->add_flag("--json", ea.json, "machine-readable output");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(sa, out, log);
    if (trn->parsed()) return cmd_train(ta, out, log);
    if (prd->parsed()) return cmd_predict(pa, out, log);
    if (evl->parsed()) return cmd_eval(ea, out, log);
  } catch (const ArgError& e) {
    err << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return kUsage;
  } catch (const std::exception& e) {
    log.error(e.what());
    return kRuntime;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace psal::cli
