#include "memo/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memo/checkpoint.hpp"
#include "memo/evaluation.hpp"
#include "memo/image_io.hpp"
#include "memo/inference.hpp"
#include "memo/lora.hpp"
#include "memo/network.hpp"
#include "memo/run_config.hpp"
#include "memo/synthdata.hpp"
#include "memo/training.hpp"

namespace memo {
namespace {

namespace fs = std::filesystem;

uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<uint64_t>(rd()) << 32) ^ rd();
}

uint64_t resolve_seed(bool flag_given, uint64_t flag_value, bool config_given,
                      uint64_t config_value, const char* command) {
  uint64_t seed;
  if (flag_given)
    seed = flag_value;
  else if (config_given)
    seed = config_value;
  else
    seed = entropy_seed();
  std::cerr << command << ": seed " << seed << "\n";
  return seed;
}

RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

UnmaskStrategy parse_strategy(const std::string& s) {
  if (s == "locmax") return UnmaskStrategy::LocMax;
  if (s == "random") return UnmaskStrategy::Random;
  if (s == "topk") return UnmaskStrategy::TopK;
  throw std::invalid_argument("unknown strategy '" + s +
                              "' (expected locmax, random, or topk)");
}

EvalProtocol parse_protocol(const std::string& s) {
  if (s == "seval") return EvalProtocol::Standard;
  if (s == "ceval") return EvalProtocol::Crispness;
  throw std::invalid_argument("unknown protocol '" + s +
                              "' (expected seval or ceval)");
}

// Input paths may be image files or directories of them.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (ext == ".ppm" || ext == ".pgm") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      out.push_back(p);
    } else {
      throw std::runtime_error("no such file or directory: " + in);
    }
  }
  if (out.empty()) throw std::runtime_error("no input images found");
  return out;
}

std::map<std::string, fs::path> pgm_files_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm")
      out[e.path().stem().string()] = e.path();
  if (out.empty())
    throw std::runtime_error("no .pgm files in " + dir.string());
  return out;
}

std::vector<ProbabilityMap> load_pred_dir(const fs::path& dir,
                                          std::vector<std::string>& stems_out) {
  stems_out.clear();
  std::vector<ProbabilityMap> out;
  for (const auto& [stem, path] : pgm_files_by_stem(dir)) {
    stems_out.push_back(stem);
    out.push_back(read_probability_map(path.string()));
  }
  return out;
}

std::vector<ProbabilityMap> load_pred_by_stems(const fs::path& dir,
                                               const std::vector<std::string>& stems) {
  const auto files = pgm_files_by_stem(dir);
  std::vector<ProbabilityMap> out;
  for (const auto& stem : stems) {
    const auto it = files.find(stem);
    if (it == files.end())
      throw std::runtime_error("prediction missing for " + stem + " in " +
                               dir.string());
    out.push_back(read_probability_map(it->second.string()));
  }
  return out;
}

// Each prediction must have a ground-truth partner; extra gt files are fine
// (predictions may cover a subset).
std::vector<BinaryMap> load_gt_by_stems(const fs::path& dir,
                                        const std::vector<std::string>& stems) {
  const auto files = pgm_files_by_stem(dir);
  std::vector<BinaryMap> out;
  for (const auto& stem : stems) {
    const auto it = files.find(stem);
    if (it == files.end())
      throw std::runtime_error("ground truth missing for " + stem + " in " +
                               dir.string());
    out.push_back(read_binary_map(it->second.string()));
  }
  return out;
}

std::vector<TrainSample> load_training_set(const std::string& data_dir) {
  const fs::path root(data_dir);
  const DatasetManifest manifest = read_manifest((root / "manifest.txt").string());
  if (manifest.entries.empty())
    throw std::runtime_error("empty dataset manifest in " + data_dir);
  std::vector<TrainSample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    TrainSample s;
    s.image = read_image_tensor((root / e.image_path).string());
    s.edges = read_binary_map((root / e.edge_path).string());
    out.push_back(std::move(s));
  }
  return out;
}

void write_trace_tsv(const std::string& path, const InferenceTrace& trace) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "step\tmasked\n";
  for (size_t i = 0; i < trace.masked_per_step.size(); ++i)
    f << i << "\t" << trace.masked_per_step[i] << "\n";
  f << "# forward_passes\t" << trace.forward_passes << "\n";
}

struct GenDataArgs {
  int count = 0;
  std::string out_dir, config;
  int jobs = 0;
  uint64_t seed = 0;
  bool seed_given = false;
};

void run_gen_data(const GenDataArgs& a) {
  RunConfig cfg = load_config_or_default(a.config);
  cfg.data.seed = resolve_seed(a.seed_given, a.seed, !a.config.empty(),
                               cfg.data.seed, "gen-data");
  const int jobs = a.jobs > 0 ? a.jobs : cfg.data_jobs;
  const DatasetManifest m = build_dataset(a.count, cfg.data, a.out_dir, jobs);
  std::cout << "wrote " << m.entries.size() << " samples to " << a.out_dir << "\n";
}

struct TrainArgs {
  std::string config, data_dir, out, base;
  int lora_rank = 0;
  float lora_alpha = 0.f;
  uint64_t seed = 0;
  bool seed_given = false;
  int log_every = 25;
};

void run_train(const TrainArgs& a) {
  RunConfig cfg = load_config_or_default(a.config);
  cfg.train.seed = resolve_seed(a.seed_given, a.seed, !a.config.empty(),
                                cfg.train.seed, "train");

  MEMONetwork net(cfg.model, cfg.model_init_seed);
  if (!a.base.empty()) load_network(net, a.base);
  if (a.lora_rank > 0) {
    if (a.base.empty())
      throw std::invalid_argument("--lora requires --base checkpoint to adapt");
    const float alpha =
        a.lora_alpha > 0.f ? a.lora_alpha : static_cast<float>(a.lora_rank);
    lora_inject(net, a.lora_rank, alpha);
    std::cout << "lora: rank " << a.lora_rank << ", alpha " << alpha << ", "
              << lora_parameter_count(net) << " adapter parameters\n";
  }

  const std::vector<TrainSample> dataset = load_training_set(a.data_dir);
  std::cout << "training on " << dataset.size() << " samples, batch "
            << cfg.train.batch_size << ", " << cfg.train.epochs << " epochs\n";

  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.train.learning_rate;
  opt_cfg.beta1 = cfg.train.adam_beta1;
  opt_cfg.beta2 = cfg.train.adam_beta2;
  opt_cfg.eps = cfg.train.adam_eps;
  opt_cfg.weight_decay = cfg.train.weight_decay;
  AdamW opt(opt_cfg);

  const TrainReport report =
      train(net, dataset, cfg.train, opt, [&](int epoch, int step, float loss) {
        if (a.log_every > 0 && step % a.log_every == 0)
          std::cout << "epoch " << epoch << " step " << step << " loss " << loss
                    << std::endl;
      });
  for (size_t e = 0; e < report.epoch_mean_losses.size(); ++e)
    std::cout << "epoch " << e << " mean loss " << report.epoch_mean_losses[e]
              << "\n";

  save_checkpoint(net.params(), a.out);
  std::cout << "saved " << a.out << " (" << net.params().parameter_count()
            << " parameters, final loss " << report.final_loss << ")\n";
}

struct InferArgs {
  std::string ckpt, config, out_dir = ".";
  std::vector<std::string> inputs;
  std::string steps, strategy;
  double scale = -1.0;
  bool trace = false, raw = false;
  uint64_t seed = 0;
  bool seed_given = false;
};

InferenceConfig resolve_infer_config(const RunConfig& cfg, bool full,
                                     const Tensor& image) {
  InferenceConfig out = cfg.infer;
  if (full || cfg.infer_full) out.steps = image.dim(1) * image.dim(2);
  return out;
}

void run_infer(const InferArgs& a) {
  RunConfig cfg = load_config_or_default(a.config);
  bool full = false;
  if (!a.steps.empty()) {
    if (a.steps == "full") {
      full = true;
    } else {
      try {
        cfg.infer.steps = std::stoi(a.steps);
      } catch (const std::exception&) {
        throw std::invalid_argument("invalid --steps value '" + a.steps + "'");
      }
    }
  }
  if (!a.strategy.empty()) cfg.infer.strategy = parse_strategy(a.strategy);
  if (a.scale > 0) cfg.infer.scale = static_cast<float>(a.scale);
  cfg.infer.seed = resolve_seed(a.seed_given, a.seed, !a.config.empty(),
                                cfg.infer.seed, "infer");

  MEMONetwork net(cfg.model, cfg.model_init_seed);
  load_network(net, a.ckpt);

  fs::create_directories(a.out_dir);
  const std::vector<fs::path> inputs = expand_inputs(a.inputs);
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor image = read_image_tensor(inputs[i].string());
    InferenceConfig icfg = resolve_infer_config(cfg, full, image);
    icfg.seed = mix_seed(cfg.infer.seed, i);
    const InferenceResult result = run_inference(net, image, icfg);

    const std::string stem = inputs[i].stem().string();
    const fs::path base = fs::path(a.out_dir) / stem;
    write_pgm(base.string() + ".pgm", result.probabilities);
    fs::create_directories(fs::path(a.out_dir) / "edges");
    write_pgm((fs::path(a.out_dir) / "edges" / (stem + ".pgm")).string(),
              result.edges);
    if (a.raw) write_raw_f32(base.string() + ".raw", result.probabilities);
    if (a.trace) write_trace_tsv(base.string() + ".trace.tsv", result.trace);
    std::cout << stem << ": " << result.edges.count() << " edge pixels, "
              << result.trace.forward_passes << " forward passes\n";
  }
}

struct EvalArgs {
  std::string pred_dir, gt_dir, config, protocol, report;
  std::vector<std::string> scales;
  int jobs = 0;
};

void run_eval(const EvalArgs& a) {
  RunConfig cfg = load_config_or_default(a.config);
  if (!a.protocol.empty()) cfg.eval.protocol = parse_protocol(a.protocol);
  const int jobs = a.jobs > 0 ? a.jobs : cfg.eval.jobs;
  const std::vector<double> thresholds = default_thresholds(cfg.eval.threshold_count);

  std::vector<std::string> stems;
  EvalReport report;
  if (a.scales.empty()) {
    const std::vector<ProbabilityMap> preds = load_pred_dir(a.pred_dir, stems);
    report = ods_ois(preds, load_gt_by_stems(a.gt_dir, stems), thresholds,
                     cfg.eval.protocol, cfg.eval.tolerance_fraction, jobs);
  } else {
    std::vector<std::pair<double, std::vector<ProbabilityMap>>> per_scale;
    for (const auto& token : a.scales) {
      const fs::path dir = fs::path(a.pred_dir) / ("scale_" + token);
      if (per_scale.empty())
        per_scale.emplace_back(std::stod(token), load_pred_dir(dir, stems));
      else
        per_scale.emplace_back(std::stod(token), load_pred_by_stems(dir, stems));
    }
    report = multi_granularity_eval(per_scale, load_gt_by_stems(a.gt_dir, stems),
                                    thresholds, cfg.eval.protocol,
                                    cfg.eval.tolerance_fraction, jobs);
  }

  std::cout << format_report_summary(report) << "\n";
  const std::string report_path =
      a.report.empty() ? (fs::path(a.pred_dir) / "report.tsv").string() : a.report;
  write_report_tsv(report, report_path);
  std::cout << "report written to " << report_path << "\n";
}

struct SweepArgs {
  std::string ckpt, images, gt_dir, out_dir, config, protocol, steps, strategy;
  std::vector<std::string> scales;
  int jobs = 0;
  uint64_t seed = 0;
  bool seed_given = false;
};

void run_sweep(const SweepArgs& a) {
  if (a.scales.empty()) throw std::invalid_argument("--scales must list at least one scale");
  for (const auto& token : a.scales) {
    InferArgs ia;
    ia.ckpt = a.ckpt;
    ia.config = a.config;
    ia.inputs = {a.images};
    ia.out_dir = (fs::path(a.out_dir) / ("scale_" + token)).string();
    ia.steps = a.steps;
    ia.strategy = a.strategy;
    ia.scale = std::stod(token);
    ia.seed = a.seed;
    ia.seed_given = a.seed_given;
    run_infer(ia);
  }
  EvalArgs ea;
  ea.pred_dir = a.out_dir;
  ea.gt_dir = a.gt_dir;
  ea.config = a.config;
  ea.protocol = a.protocol;
  ea.scales = a.scales;
  ea.jobs = a.jobs;
  ea.report = (fs::path(a.out_dir) / "report.tsv").string();
  run_eval(ea);
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"masked edge prediction toolkit"};
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic edge dataset");
  gen->add_option("n", g.count, "number of samples")->required();
  gen->add_option("-o,--out", g.out_dir, "output directory")->required();
  gen->add_option("-c,--config", g.config, "run config file");
  gen->add_option("-j,--jobs", g.jobs, "worker threads");
  auto* gseed = gen->add_option("--seed", g.seed, "RNG seed");
  gen->callback([&] {
    g.seed_given = gseed->count() > 0;
    run_gen_data(g);
  });

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "train or fine-tune a model");
  tr->add_option("-c,--config", t.config, "run config file");
  tr->add_option("-d,--data", t.data_dir, "dataset directory (with manifest.txt)")
      ->required();
  tr->add_option("-o,--out", t.out, "output checkpoint path")->required();
  tr->add_option("--base", t.base, "starting checkpoint");
  tr->add_option("--lora", t.lora_rank, "adapter rank; freezes base weights");
  tr->add_option("--alpha", t.lora_alpha, "adapter scaling numerator (default: rank)");
  tr->add_option("--log-every", t.log_every, "steps between loss lines");
  auto* tseed = tr->add_option("--seed", t.seed, "RNG seed");
  tr->callback([&] {
    t.seed_given = tseed->count() > 0;
    run_train(t);
  });

  InferArgs inf;
  auto* in = app.add_subcommand("infer", "predict edge maps for images");
  in->add_option("--ckpt", inf.ckpt, "model checkpoint")->required();
  in->add_option("images", inf.inputs, "image files or directories")->required();
  in->add_option("-o,--out", inf.out_dir, "output directory");
  in->add_option("-c,--config", inf.config, "run config file");
  in->add_option("--steps", inf.steps, "unmasking steps, or 'full'");
  in->add_option("--strategy", inf.strategy, "locmax | random | topk");
  in->add_option("--scale", inf.scale, "granularity guidance scale");
  in->add_flag("--trace", inf.trace, "write per-step masked counts TSV");
  in->add_flag("--raw", inf.raw, "also write float32 probability dumps");
  auto* iseed = in->add_option("--seed", inf.seed, "RNG seed");
  in->callback([&] {
    inf.seed_given = iseed->count() > 0;
    run_infer(inf);
  });

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
  ev->add_option("pred-dir", e.pred_dir, "prediction directory")->required();
  ev->add_option("gt-dir", e.gt_dir, "ground-truth directory")->required();
  ev->add_option("--protocol", e.protocol, "seval | ceval");
  ev->add_option("--scales", e.scales, "scale list; expects scale_<s> subdirs")
      ->delimiter(',');
  ev->add_option("-j,--jobs", e.jobs, "worker threads");
  ev->add_option("-c,--config", e.config, "run config file");
  ev->add_option("--report", e.report, "report TSV path");
  ev->callback([&] { run_eval(e); });

  SweepArgs s;
  auto* sw = app.add_subcommand("sweep", "infer over a scale list, then evaluate");
  sw->add_option("--ckpt", s.ckpt, "model checkpoint")->required();
  sw->add_option("images", s.images, "image file or directory")->required();
  sw->add_option("--gt", s.gt_dir, "ground-truth directory")->required();
  sw->add_option("--scales", s.scales, "guidance scales to sweep")
      ->delimiter(',')
      ->required();
  sw->add_option("-o,--out", s.out_dir, "output directory")->required();
  sw->add_option("-c,--config", s.config, "run config file");
  sw->add_option("--steps", s.steps, "unmasking steps, or 'full'");
  sw->add_option("--strategy", s.strategy, "locmax | random | topk");
  sw->add_option("--protocol", s.protocol, "seval | ceval");
  sw->add_option("-j,--jobs", s.jobs, "worker threads");
  auto* sseed = sw->add_option("--seed", s.seed, "RNG seed");
  sw->callback([&] {
    s.seed_given = sseed->count() > 0;
    run_sweep(s);
  });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
}

}  // namespace memo
