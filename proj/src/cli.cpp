#include "scolio/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "scolio/checkpoint.hpp"
#include "scolio/explain.hpp"
#include "scolio/train.hpp"

namespace scolio {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

/// Bad flags or config values, as opposed to failures while running.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <typename F>
auto resolve(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::map<std::string, std::string> parse_sets(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    }
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int per_level = 300;
  std::string counts;
  std::string scheme = "general";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string size;
  std::string config;
  std::vector<std::string> sets;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  std::vector<int> counts;
  LevelScheme scheme;
  std::map<std::string, std::string> file_values;
  if (!a.config.empty()) file_values = read_key_values(a.config);
  resolve([&] {
    for (const auto& [key, v] : file_values) {
      std::string k = key;
      if (k.rfind("synth.", 0) == 0) k = k.substr(6);
      cfg.set(k, v);
    }
    for (const auto& [key, v] : parse_sets(a.sets)) {
      std::string k = key;
      if (k.rfind("synth.", 0) == 0) k = k.substr(6);
      cfg.set(k, v);
    }
    if (a.seed_given) cfg.seed = a.seed;
    if (!a.size.empty()) {
      const auto x = a.size.find('x');
      if (x == std::string::npos) throw std::invalid_argument("--size expects WxH");
      cfg.set("width", a.size.substr(0, x));
      cfg.set("height", a.size.substr(x + 1));
    }
    cfg.validate();
    scheme = scheme_from_string(a.scheme);
    if (!a.counts.empty()) {
      std::stringstream ss(a.counts);
      std::string item;
      while (std::getline(ss, item, ',')) counts.push_back(std::stoi(item));
    } else {
      if (a.per_level < 1) throw std::invalid_argument("--per-level must be >= 1");
      counts.assign(static_cast<std::size_t>(scheme.levels()), a.per_level);
    }
    if (static_cast<int>(counts.size()) != scheme.levels()) {
      throw std::invalid_argument("--counts needs " + std::to_string(scheme.levels()) + " values");
    }
    for (int c : counts) {
      if (c < 1) throw std::invalid_argument("every level needs at least one sample");
    }
    return 0;
  });
  const auto samples = generate_corpus(a.out, cfg, counts, scheme);
  std::vector<int> seen(static_cast<std::size_t>(scheme.levels()), 0);
  for (const auto& s : samples) ++seen[static_cast<std::size_t>(scheme.level(s.angle_deg) - 1)];
  for (int j = 1; j <= scheme.levels(); ++j) {
    out << scheme.name() << " level " << j << ": " << seen[static_cast<std::size_t>(j - 1)]
        << "\n";
  }
  out << "wrote " << samples.size() << " samples to " << a.out << "\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config, lambda, variant, split = "holdout";
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int epochs = 0;
};

RunConfig resolve_run_config(const std::string& config_file, const std::vector<std::string>& sets,
                             const std::function<void(RunConfig&)>& flags) {
  std::map<std::string, std::string> file_values;
  if (!config_file.empty()) file_values = read_key_values(config_file);
  return resolve([&] {
    RunConfig cfg;
    cfg.apply(file_values);
    cfg.apply(parse_sets(sets));
    flags(cfg);
    cfg.validate();
    return cfg;
  });
}

std::vector<std::size_t> split_indices(const std::vector<Sample>& data, const RunConfig& cfg,
                                       const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  const FoldSplit folds = make_folds(data, cfg.train.folds, cfg.train.seed);
  if (split == "train") return folds.train(0);
  if (split == "holdout") return folds.test(0);
  throw std::invalid_argument("unknown split '" + split + "'");
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_run_config(a.config, a.sets, [&](RunConfig& c) {
    if (a.seed_given) c.train.seed = a.seed;
    if (!a.lambda.empty()) c.train.lambda = LossWeights::from_ratio(a.lambda);
    if (!a.variant.empty()) apply_variant(c.model, a.variant);
    if (a.epochs > 0) c.train.epochs = a.epochs;
    if (a.split != "holdout" && a.split != "all") {
      throw std::invalid_argument("--split must be holdout or all");
    }
  });
  const auto data = read_corpus(a.data);
  const auto idx = split_indices(data, cfg, a.split == "all" ? "all" : "train");
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw std::runtime_error(a.out + ": " + ec.message());
  cfg.save(fs::path(a.out) / "config.txt");
  out << "# resolved config\n" << cfg.to_text();
  out << "# training " << cfg.model.variant_name() << " on " << idx.size() << " of "
      << data.size() << " samples\n";

  auto model = Model<double>::init(cfg.model, cfg.train.seed);
  const auto logs = fit<double>(model, data, idx, cfg.train, [&](const EpochLog& l) {
    out << "epoch " << l.epoch << "/" << cfg.train.epochs << "  L_general " << fmt("%.5f", l.l_general)
        << "  L_fine " << fmt("%.5f", l.l_fine) << "  L_total " << fmt("%.5f", l.l_total)
        << "  lr " << fmt("%.3g", l.lr) << "\n"
        << std::flush;
  });
  write_loss_csv(fs::path(a.out) / "loss.csv", logs);
  save_checkpoint(model.parameters(), fs::path(a.out) / "model.ckpt");
  out << "wrote " << (fs::path(a.out) / "model.ckpt").string() << "\n";
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

Model<double> load_model(const fs::path& ckpt, RunConfig* cfg_out) {
  const fs::path cfg_path = ckpt.parent_path() / "config.txt";
  if (!fs::exists(cfg_path)) {
    throw std::runtime_error(cfg_path.string() + ": missing config next to the checkpoint");
  }
  RunConfig cfg;
  try {
    cfg = RunConfig::load(cfg_path);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(cfg_path.string() + ": " + e.what());
  }
  auto model = Model<double>::init(cfg.model, 0);
  assign_checkpoint(load_checkpoint<double>(ckpt), model.parameters());
  if (cfg_out) *cfg_out = cfg;
  return model;
}

Json eval_json(const EvalReport& r) {
  return {{"general", Json::parse(report_json(r.general))},
          {"fine", Json::parse(report_json(r.fine))}};
}

void write_eval_files(const fs::path& dir, const EvalReport& r) {
  write_confusion_csv(dir / "confusion_general.csv", r.general.cm);
  write_confusion_csv(dir / "confusion_fine.csv", r.fine.cm);
  write_roc_csv(dir / "roc_general.csv", r.general);
  write_roc_csv(dir / "roc_fine.csv", r.fine);
}

void print_summary(std::ostream& out, const std::string& label, const EvalReport& r) {
  out << label << "  general acc " << fmt("%.4f", r.general.acc) << " mae "
      << fmt("%.4f", r.general.mae) << " kappa " << fmt("%.4f", r.general.kappa)
      << " | fine acc " << fmt("%.4f", r.fine.acc) << " mae " << fmt("%.4f", r.fine.mae)
      << " kappa " << fmt("%.4f", r.fine.kappa) << "\n";
}

struct EvalArgs {
  std::string data, ckpt, out;
  bool holdout = false, train_split = false, all = false;
  int folds = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const int modes = int(a.holdout) + int(a.train_split) + int(a.all) + int(a.folds > 0);
  if (modes > 1) throw UsageError("choose one of --holdout, --train-split, --all, --folds");
  if (a.folds == 1 || a.folds < 0) throw UsageError("--folds must be >= 2");
  RunConfig cfg;
  auto model = load_model(a.ckpt, &cfg);
  const auto data = read_corpus(a.data);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw std::runtime_error(a.out + ": " + ec.message());
  const fs::path dir(a.out);
  Json doc;
  if (a.folds > 0) {
    cfg.train.folds = a.folds;
    const CvResult cv = five_fold(data, cfg, [&](int f, const EpochLog& l) {
      if (l.epoch == cfg.train.epochs) out << "fold " << f + 1 << " trained\n" << std::flush;
    });
    doc["split"] = "folds";
    Json folds = Json::array();
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
      Json j = eval_json(cv.folds[f]);
      j["fold"] = f + 1;
      folds.push_back(j);
      print_summary(out, "fold " + std::to_string(f + 1), cv.folds[f]);
    }
    doc["folds"] = folds;
    doc["average"] = eval_json(cv.average);
    print_summary(out, "average", cv.average);
    write_confusion_csv(dir / "confusion_general.csv", cv.average.general.cm);
    write_confusion_csv(dir / "confusion_fine.csv", cv.average.fine.cm);
    write_roc_csv(dir / "roc_general.csv", cv.pooled.general);
    write_roc_csv(dir / "roc_fine.csv", cv.pooled.fine);
  } else {
    const std::string split = a.all ? "all" : a.train_split ? "train" : "holdout";
    const auto idx = split_indices(data, cfg, split);
    const EvalReport r = evaluate_model(model, data, idx, cfg.train.input_size);
    doc["split"] = split;
    doc.update(eval_json(r));
    write_eval_files(dir, r);
    print_summary(out, split, r);
  }
  std::ofstream f(dir / "report.json", std::ios::binary);
  if (!f) throw std::runtime_error((dir / "report.json").string() + ": cannot open for writing");
  f << doc.dump(2) << "\n";
  out << "wrote " << (dir / "report.json").string() << "\n";
  return kExitOk;
}

// ---- explain ---------------------------------------------------------------

struct ExplainArgs {
  std::string image, ckpt, out, bbox, layer;
  double alpha = 0.4;
};

/// Bbox for `image` from a manifest in its directory or the one above.
std::optional<BBox> manifest_bbox(const fs::path& image) {
  const fs::path target = fs::weakly_canonical(image);
  for (const fs::path& dir : {image.parent_path(), image.parent_path().parent_path()}) {
    const fs::path m = dir / "manifest.csv";
    if (dir.empty() || !fs::exists(m)) continue;
    for (const auto& row : read_manifest(m)) {
      if (fs::weakly_canonical(dir / row.path) == target) return row.bbox;
    }
  }
  return std::nullopt;
}

int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  std::optional<BBox> box;
  if (!a.bbox.empty()) {
    box = resolve([&] {
      std::vector<int> v;
      std::stringstream ss(a.bbox);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(std::stoi(item));
      if (v.size() != 4) throw std::invalid_argument("--bbox expects x,y,w,h");
      return BBox{v[0], v[1], v[2], v[3]};
    });
  }
  if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw UsageError("--alpha must lie in [0, 1]");
  RunConfig cfg;
  auto model = load_model(a.ckpt, &cfg);
  Sample s;
  s.image = from_gray(read_png(a.image));
  if (!box) box = manifest_bbox(a.image);
  s.bbox = box ? *box : BBox{0, 0, s.width(), s.height()};
  check_bbox(s.bbox, s.width(), s.height());

  const std::vector<Sample> one{s};
  const Predictions p = predict(model, one, std::vector<std::size_t>{0}, cfg.train.input_size);
  const TensorD input = make_batch<double>(one, {0}, cfg.train.input_size, cfg.train.input_size);
  const Heatmap heat = resolve([&] { return gradcam(model, input, a.layer); });
  overlay(heat, s, a.out, a.alpha);
  out << "general level: " << p.general.front() << "\n";
  out << "fine level: " << p.fine.front() << "\n";
  out << "grad-cam layer: " << heat.layer << " (" << heat.height << "x" << heat.width << ")\n";
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scoliosis severity grading from back images", "scolio"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic back-image corpus");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--per-level", sa.per_level, "Samples per level");
  synth->add_option("--counts", sa.counts, "Comma-separated per-level counts");
  synth->add_option("--scheme", sa.scheme, "Level scheme used for binning (general|fine)");
  synth->add_option("--seed", sa.seed, "Master seed")->each([&](const std::string&) {
    sa.seed_given = true;
  });
  synth->add_option("--size", sa.size, "Canvas size WxH");
  synth->add_option("--config", sa.config, "Generator key=value file");
  synth->add_option("--set", sa.sets, "Override one generator key (key=value)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a corpus");
  train->add_option("--data", ta.data, "Corpus directory")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--config", ta.config, "Run config key=value file");
  train->add_option("--set", ta.sets, "Override one config key (key=value)");
  train->add_option("--seed", ta.seed, "Master seed")->each([&](const std::string&) {
    ta.seed_given = true;
  });
  train->add_option("--lambda", ta.lambda, "Loss ratio general:fine, e.g. 2:1");
  train->add_option("--variant", ta.variant, "full|baseline+sfmm|baseline+orh|baseline");
  train->add_option("--epochs", ta.epochs, "Number of epochs");
  train->add_option("--split", ta.split, "holdout (train on the other folds) or all");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", ea.data, "Corpus directory")->required();
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint file")->required();
  eval->add_option("--out", ea.out, "Report directory")->required();
  eval->add_flag("--holdout", ea.holdout, "Held-out fold of the training split (default)");
  eval->add_flag("--train-split", ea.train_split, "Samples the checkpoint was trained on");
  eval->add_flag("--all", ea.all, "Every sample in the corpus");
  eval->add_option("--folds", ea.folds, "Cross-validate with N retrained folds");

  ExplainArgs xa;
  auto* explain = app.add_subcommand("explain", "Grad-CAM overlay for one image");
  explain->add_option("--image", xa.image, "Input PNG")->required();
  explain->add_option("--ckpt", xa.ckpt, "Checkpoint file")->required();
  explain->add_option("--out", xa.out, "Output PNG")->required();
  explain->add_option("--bbox", xa.bbox, "Back region x,y,w,h (default: manifest or full image)");
  explain->add_option("--layer", xa.layer, "Feature layer (general.sfmm|backbone)");
  explain->add_option("--alpha", xa.alpha, "Heat opacity in [0, 1]");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front()) {
      err << sub->help();
    }
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(sa, out);
    if (train->parsed()) return cmd_train(ta, out);
    if (eval->parsed()) return cmd_eval(ea, out);
    if (explain->parsed()) return cmd_explain(xa, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace scolio
