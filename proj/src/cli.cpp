#include "reptrfd/cli.hpp"
#include "reptrfd/analysis.hpp"
#include "reptrfd/config.hpp"
#include "reptrfd/errors.hpp"
#include "reptrfd/io.hpp"
#include "reptrfd/metrics.hpp"
#include "reptrfd/reports.hpp"
#include "reptrfd/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

namespace reptrfd::cli {

namespace {

using nlohmann::json;

std::string format_fixed(double v, int digits)
{
  if (std::isinf(v)) { return v > 0 ? "Inf" : "-Inf"; }
  if (std::isnan(v)) { return "NaN"; }
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

Shape parse_shape(std::string const &text)
{
  Shape s;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      long long const v = std::stoll(tok, &used);
      if (used != tok.size() || v < 1) { throw std::invalid_argument(tok); }
      s.push_back(static_cast<Index>(v));
    } catch (std::exception const &) {
      throw ConfigError("shape '" + text + "': '" + tok + "' is not a positive integer");
    }
  }
  if (s.empty()) { throw ConfigError("shape '" + text + "' is empty"); }
  return s;
}

BasisScheme parse_scheme(std::string const &s)
{
  if (s == "xavier") { return BasisScheme::Xavier; }
  if (s == "kaiming") { return BasisScheme::Kaiming; }
  if (s == "explicit") { return BasisScheme::Explicit; }
  throw ConfigError("basis scheme '" + s + "': expected xavier, kaiming or explicit");
}

bool ssim_applicable(DenseTensor const &x)
{
  return (x.order() == 2 || x.order() == 3) && x.dim(0) >= 11 && x.dim(1) >= 11;
}

json quality(DenseTensor const &x, DenseTensor const &ref, double peak)
{
  json q;
  q["psnr"] = json_number(psnr(x, ref, peak));
  if (ssim_applicable(x)) { q["ssim"] = json_number(ssim(x, ref)); }
  if (ref.frobenius_norm() > 0.0) { q["nrmse"] = json_number(nrmse(x, ref)); }
  return q;
}

void emit(json const &j, std::string const &path, std::ostream &out)
{
  if (path.empty()) {
    out << j.dump(2) << '\n';
  } else {
    write_json(path, j);
  }
}

TraceCallback progress(std::ostream &err, bool quiet)
{
  if (quiet) { return {}; }
  return [&err](TraceRow const &row) {
    err << "iter " << row.iteration << "  loss " << format_fixed(row.loss, 6);
    if (row.psnr) { err << "  psnr " << format_fixed(*row.psnr, 2); }
    err << '\n';
  };
}

struct TaskOptions {
  std::string config;
  std::string output;
  long long iterations = -1;
  long long seed = -1;
  bool quiet = false;
};

int finish(TrainResult const &result, std::ostream &err)
{
  if (result.aborted) {
    err << "error: training aborted: " << result.diagnostic << " (last finite state written)\n";
    return kExitRuntime;
  }
  return kExitOk;
}

json train_summary(TaskConfig const &cfg, TrainResult const &result)
{
  json m;
  m["task"] = to_string(cfg.task);
  m["variant"] = to_string(cfg.variant);
  m["seed"] = cfg.seed;
  m["iterations"] = cfg.iterations;
  m["final_loss"] = result.trace.rows.empty() ? json(nullptr) : json_number(result.trace.rows.back().loss);
  m["aborted"] = result.aborted;
  if (result.aborted) { m["diagnostic"] = result.diagnostic; }
  return m;
}

int run_grid_task(TaskConfig cfg, TaskOptions const &opt, std::ostream &out, std::ostream &err)
{
  std::optional<DenseTensor> clean;
  bool png_input = false;
  if (!cfg.input.empty()) {
    clean = load_tensor(cfg.input);
    png_input = cfg.input.extension() == ".png" || cfg.input.extension() == ".PNG";
  }
  if (cfg.ground_truth) { clean = load_tensor(*cfg.ground_truth); }

  RecoveryTask task;
  task.kind = cfg.task;
  task.reg = cfg.reg;
  task.iterations = cfg.iterations;
  task.seed = cfg.seed;
  task.eval_every = cfg.eval_every;
  task.learning_rate = cfg.learning_rate;
  Shape recon_shape;

  switch (cfg.task) {
  case TaskKind::Inpaint: {
    task.observation = cfg.observation ? load_tensor(*cfg.observation) : *clean;
    task.mask = cfg.mask ? load_tensor(*cfg.mask)
                         : bernoulli_mask(task.observation.shape(), *cfg.sampling_ratio, cfg.seed);
    validate_mask(*task.mask);
    if (task.mask->shape() != task.observation.shape()) {
      throw ShapeError("mask " + shape_string(task.mask->shape()) + " does not match data " +
                       shape_string(task.observation.shape()));
    }
    for (Index i = 0; i < task.observation.size(); ++i) { task.observation[i] *= (*task.mask)[i]; }
    recon_shape = task.observation.shape();
    break;
  }
  case TaskKind::Denoise:
    task.observation = cfg.observation ? load_tensor(*cfg.observation) : add_noise(*clean, *cfg.noise_sd, cfg.seed);
    recon_shape = task.observation.shape();
    break;
  case TaskKind::SuperRes:
    task.scale = cfg.scale;
    if (cfg.observation) {
      task.observation = load_tensor(*cfg.observation);
      recon_shape = task.observation.shape();
      if (recon_shape.size() < 2) { throw ShapeError("super-resolution needs at least two modes"); }
      recon_shape[0] *= cfg.scale;
      recon_shape[1] *= cfg.scale;
    } else {
      recon_shape = clean->shape();
      task.observation = downsample(*clean, cfg.scale);
    }
    break;
  case TaskKind::PointCloud: break;
  }
  if (clean && clean->shape() != recon_shape) {
    throw ShapeError("ground truth " + shape_string(clean->shape()) + " does not match reconstruction " +
                     shape_string(recon_shape));
  }
  task.grids = normalized_grids(recon_shape);
  task.ground_truth = clean;

  auto const model_cfg = cfg.resolve_model(static_cast<Index>(recon_shape.size()), recon_shape);
  task.validate(model_cfg.order());
  fs::create_directories(cfg.output_dir);
  if (!opt.quiet) {
    err << to_string(cfg.task) << ": data " << shape_string(recon_shape) << ", " << to_string(cfg.variant)
        << ", " << cfg.iterations << " iterations\n";
  }

  auto result = train(task, FactorModel::init(model_cfg), progress(err, opt.quiet));
  auto const &recon = result.reconstruction;
  save_rten(task.observation, cfg.output_dir / "observation.rten");
  save_rten(recon, cfg.output_dir / "reconstruction.rten");
  if (png_input) { save_png(recon, cfg.output_dir / "reconstruction.png"); }
  save_checkpoint(result.model, cfg.output_dir / "checkpoint.rtrf");
  write_file_atomic(cfg.output_dir / "trace.csv", result.trace.to_csv());

  json metrics = train_summary(cfg, result);
  metrics["shape"] = recon_shape;
  if (clean) { metrics["reconstruction"] = quality(recon, *clean, 1.0); }
  write_json(cfg.output_dir / "metrics.json", metrics);
  out << "wrote " << (cfg.output_dir / "reconstruction.rten").string() << '\n';
  if (clean) {
    out << "PSNR/SSIM: " << format_fixed(psnr(recon, *clean), 2) << '/'
        << (ssim_applicable(recon) ? format_fixed(ssim(recon, *clean), 3) : std::string("n/a")) << '\n';
  }
  return finish(result, err);
}

int run_pointcloud(TaskConfig cfg, TaskOptions const &opt, std::ostream &out, std::ostream &err)
{
  RecoveryTask task;
  task.kind = TaskKind::PointCloud;
  task.points = load_pointcloud(cfg.input);
  task.iterations = cfg.iterations;
  task.seed = cfg.seed;
  task.eval_every = cfg.eval_every;
  task.learning_rate = cfg.learning_rate;
  auto const model_cfg = cfg.resolve_model(4);
  task.validate(model_cfg.order());
  fs::create_directories(cfg.output_dir);
  if (!opt.quiet) { err << "pointcloud: " << task.points.size() << " points, " << cfg.iterations << " iterations\n"; }

  auto result = train(task, FactorModel::init(model_cfg), progress(err, opt.quiet));
  save_rten(result.reconstruction, cfg.output_dir / "reconstruction.rten");
  save_pointcloud(task.points, result.reconstruction, cfg.output_dir / "predictions.txt");
  save_checkpoint(result.model, cfg.output_dir / "checkpoint.rtrf");
  write_file_atomic(cfg.output_dir / "trace.csv", result.trace.to_csv());

  json metrics = train_summary(cfg, result);
  metrics["points"] = task.points.size();
  if (task.points.values.frobenius_norm() > 0.0) {
    metrics["fit_nrmse"] = json_number(nrmse(result.reconstruction, task.points.values));
  }
  if (cfg.ground_truth) {
    auto const held = load_pointcloud(*cfg.ground_truth);
    auto const raw = denormalize_coords(held);
    auto const coords = normalize_coords(raw, task.points.col_min, task.points.col_max);
    auto const pred = result.model.eval_points(coords);
    metrics["test_nrmse"] = json_number(nrmse(pred, held.values));
    out << "NRMSE: " << format_fixed(nrmse(pred, held.values), 6) << '\n';
  }
  write_json(cfg.output_dir / "metrics.json", metrics);
  out << "wrote " << (cfg.output_dir / "reconstruction.rten").string() << '\n';
  return finish(result, err);
}

int run_task(TaskKind kind, TaskOptions const &opt, std::ostream &out, std::ostream &err)
{
  auto cfg = load_task_config(opt.config);
  if (cfg.task != kind) {
    throw ConfigError("config describes a " + to_string(cfg.task) + " task, not " + to_string(kind));
  }
  if (!opt.output.empty()) { cfg.output_dir = opt.output; }
  if (opt.iterations >= 0) { cfg.iterations = opt.iterations; }
  if (opt.seed >= 0) { cfg.seed = static_cast<std::uint64_t>(opt.seed); }
  return kind == TaskKind::PointCloud ? run_pointcloud(cfg, opt, out, err) : run_grid_task(cfg, opt, out, err);
}

int run_eval(std::string const &a, std::string const &b, double peak, std::string const &json_out, std::ostream &out)
{
  auto const x = load_tensor(a);
  auto const ref = load_tensor(b);
  if (x.shape() != ref.shape()) {
    throw ShapeError("shapes differ: " + shape_string(x.shape()) + " vs " + shape_string(ref.shape()));
  }
  double const p = psnr(x, ref, peak);
  std::string const s = ssim_applicable(x) ? format_fixed(ssim(x, ref), 3) : std::string("n/a");
  std::string const e = ref.frobenius_norm() > 0.0 ? format_fixed(nrmse(x, ref), 6) : std::string("n/a");
  out << "PSNR/SSIM: " << format_fixed(p, 2) << '/' << s << '\n';
  out << "NRMSE: " << e << '\n';
  if (!json_out.empty()) { write_json(json_out, quality(x, ref, peak)); }
  return kExitOk;
}

int run_info(std::vector<std::string> const &files, std::ostream &out)
{
  for (auto const &f : files) {
    auto const bytes = read_file(f);
    std::string_view const head(bytes.data(), std::min<std::size_t>(bytes.size(), 8));
    if (head.starts_with("RTEN")) {
      auto const t = decode_rten(bytes);
      out << f << ": RTEN v" << kRtenVersion << ", order " << t.order() << ", dims " << shape_string(t.shape())
          << ", " << t.size() << " values\n";
    } else if (head.starts_with("RTRF")) {
      auto const m = decode_checkpoint(bytes);
      auto const &c = m.config();
      std::vector<Index> ranks = c.ranks;
      Index count = 0;
      for (auto const &p : m.parameters()) { count += p.value->size(); }
      out << f << ": RTRF v" << kRtrfVersion << ", " << to_string(c.variant) << ", order " << c.order()
          << ", dims " << (c.dims.empty() ? std::string("-") : shape_string(c.dims)) << ", ranks "
          << shape_string(ranks) << ", layers " << shape_string(c.layers) << ", beta " << c.beta << ", omega0 "
          << c.omega0 << ", hidden " << c.hidden << ", basis " << to_string(c.basis_scheme)
          << (c.shared_embedding ? ", shared embedding" : ", per-mode embeddings") << ", " << count
          << " parameters\n";
    } else if (head.size() == 8 && head == std::string_view("\x89PNG\r\n\x1a\n", 8)) {
      auto const info = probe_png(f);
      out << f << ": PNG " << info.width << "x" << info.height << ", " << info.channels << " channel(s), "
          << info.bit_depth << "-bit\n";
    } else {
      throw FormatError(f + ": unrecognized file (expected RTEN, RTRF or PNG)");
    }
  }
  return kExitOk;
}

TRCores random_cores(Shape const &dims, std::vector<Index> ranks, std::uint64_t seed)
{
  if (ranks.size() == 1) { ranks.assign(dims.size(), ranks.front()); }
  if (ranks.size() != dims.size()) { throw ConfigError("ranks must have one entry or one per mode"); }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<DenseTensor> cores;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    DenseTensor g({ranks[k], dims[k], ranks[(k + 1) % dims.size()]});
    for (double &v : g.data()) { v = normal(rng); }
    cores.push_back(std::move(g));
  }
  return TRCores(std::move(cores));
}

ModelConfig small_model(Shape const &dims, std::vector<Index> ranks, Index beta, Index hidden, std::uint64_t seed)
{
  ModelConfig c;
  c.dims = dims;
  if (ranks.size() == 1) { ranks.assign(dims.size(), ranks.front()); }
  c.ranks = ranks;
  c.layers.assign(dims.size(), 1);
  c.beta = beta;
  c.hidden = hidden;
  c.omega0 = 30.0;
  c.seed = seed;
  c.validate();
  return c;
}

int dispatch(CLI::App &app, std::vector<std::string> args, std::ostream &out, std::ostream &err)
{
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  TaskOptions topt;
  std::vector<std::pair<CLI::App *, TaskKind>> task_cmds;
  for (auto kind : {TaskKind::Inpaint, TaskKind::Denoise, TaskKind::SuperRes, TaskKind::PointCloud}) {
    auto *sub = app.add_subcommand(to_string(kind), "Train on a " + to_string(kind) + " task from a JSON config");
    sub->add_option("-c,--config", topt.config, "Task config (JSON)")->required();
    sub->add_option("-o,--output", topt.output, "Output directory (overrides the config)");
    sub->add_option("--iterations", topt.iterations, "Iteration budget (overrides the config)");
    sub->add_option("--seed", topt.seed, "Seed (overrides the config)");
    sub->add_flag("-q,--quiet", topt.quiet, "No progress output");
    task_cmds.emplace_back(sub, kind);
  }

  std::string eval_a, eval_b, eval_json;
  double eval_peak = 1.0;
  auto *eval = app.add_subcommand("eval", "PSNR, SSIM and NRMSE of a tensor against a reference");
  eval->add_option("estimate", eval_a, "Estimate (.rten or .png)")->required();
  eval->add_option("reference", eval_b, "Reference (.rten or .png)")->required();
  eval->add_option("--peak", eval_peak, "PSNR peak value")->check(CLI::PositiveNumber);
  eval->add_option("--json", eval_json, "Also write the metrics as JSON");

  std::string mask_shape, mask_out;
  double mask_sr = 0.0;
  std::uint64_t mask_seed = 0;
  auto *gen = app.add_subcommand("gen-mask", "Bernoulli sampling mask");
  gen->add_option("--shape", mask_shape, "Comma-separated dims, e.g. 256,256,3")->required();
  gen->add_option("--sr", mask_sr, "Sampling ratio in [0, 1]")->required();
  gen->add_option("--seed", mask_seed, "Seed");
  gen->add_option("-o,--out", mask_out, "Output .rten path")->required();

  std::vector<std::string> info_files;
  auto *info = app.add_subcommand("info", "Print file headers");
  info->add_option("files", info_files, "RTEN, RTRF or PNG files")->required();

  auto *analyze = app.add_subcommand("analyze", "Run a verification harness and write a JSON report");
  analyze->require_subcommand(1);
  std::string report_out;

  std::string sp_dims = "8,8,8";
  std::vector<Index> sp_ranks{3};
  Index sp_cutoff = 1;
  std::uint64_t sp_seed = 0;
  bool sp_unfiltered = false;
  std::string sp_checkpoint;
  auto *spectral = analyze->add_subcommand("spectral", "Spectral decay bound of a TR reconstruction");
  spectral->add_option("--dims", sp_dims, "Dims of random cores or of the sampling grid");
  spectral->add_option("--ranks", sp_ranks, "Ranks of random cores");
  spectral->add_option("--cutoff", sp_cutoff, "Per-mode cutoff frequency");
  spectral->add_option("--seed", sp_seed, "Seed for random cores");
  spectral->add_flag("--unfiltered", sp_unfiltered, "Check the cores as drawn, without low-pass filtering");
  spectral->add_option("--checkpoint", sp_checkpoint, "Analyze the cores of a trained model instead");
  spectral->add_option("-o,--out", report_out, "Report path (stdout if omitted)");

  GradientRatioConfig gr;
  std::string gr_dims = "16,16,3", gr_scheme = "xavier";
  Index gr_seeds = 10;
  auto *grad = analyze->add_subcommand("grad-ratio", "High/low-frequency gradient ratios in G and C space");
  grad->add_option("--dims", gr_dims, "Data dims (three modes, each <= 32)");
  grad->add_option("--rank", gr.rank, "TR rank");
  grad->add_option("--beta", gr.beta, "Rank expansion factor");
  grad->add_option("--mode", gr.mode, "Probe mode");
  grad->add_option("--low", gr.omega_low, "Low probe frequency");
  grad->add_option("--high", gr.omega_high, "High probe frequency");
  grad->add_option("--seeds", gr_seeds, "Number of seeds, starting at 0")->check(CLI::PositiveNumber);
  grad->add_option("--scheme", gr_scheme, "Basis scheme (xavier, kaiming, explicit)");
  grad->add_option("--scale", gr.basis_scale, "Explicit basis scale");
  grad->add_option("-o,--out", report_out, "Report path (stdout if omitted)");

  Index var_r = 20, var_R = 200, var_trials = 1000000;
  std::string var_scheme = "xavier";
  double var_scale = 0.0;
  std::uint64_t var_seed = 0;
  auto *variance = analyze->add_subcommand("variance", "Forward/backward variance through the basis");
  variance->add_option("--r", var_r, "Rank r");
  variance->add_option("--R", var_R, "Expanded rank R");
  variance->add_option("--scheme", var_scheme, "Basis scheme (xavier, kaiming, explicit)");
  variance->add_option("--scale", var_scale, "Explicit basis scale");
  variance->add_option("--trials", var_trials, "Monte-Carlo trials");
  variance->add_option("--seed", var_seed, "Seed");
  variance->add_option("-o,--out", report_out, "Report path (stdout if omitted)");

  std::string lp_checkpoint, lp_dims = "8,8,3";
  std::vector<Index> lp_ranks{3};
  Index lp_beta = 3, lp_hidden = 16, lp_pairs = 10000;
  std::uint64_t lp_seed = 0;
  auto *lipschitz = analyze->add_subcommand("lipschitz", "Lipschitz bound and an empirical check");
  lipschitz->add_option("--checkpoint", lp_checkpoint, "Model to analyze (a random small model if omitted)");
  lipschitz->add_option("--dims", lp_dims, "Dims of the random model");
  lipschitz->add_option("--ranks", lp_ranks, "Ranks of the random model");
  lipschitz->add_option("--beta", lp_beta, "Beta of the random model");
  lipschitz->add_option("--hidden", lp_hidden, "Hidden width of the random model");
  lipschitz->add_option("--pairs", lp_pairs, "Random coordinate pairs");
  lipschitz->add_option("--seed", lp_seed, "Seed");
  lipschitz->add_option("-o,--out", report_out, "Report path (stdout if omitted)");

  std::reverse(args.begin(), args.end());
  app.parse(args);

  for (auto const &[sub, kind] : task_cmds) {
    if (sub->parsed()) { return run_task(kind, topt, out, err); }
  }
  if (eval->parsed()) { return run_eval(eval_a, eval_b, eval_peak, eval_json, out); }
  if (gen->parsed()) {
    save_rten(bernoulli_mask(parse_shape(mask_shape), mask_sr, mask_seed), mask_out);
    out << "wrote " << mask_out << '\n';
    return kExitOk;
  }
  if (info->parsed()) { return run_info(info_files, out); }

  if (spectral->parsed()) {
    auto const dims = parse_shape(sp_dims);
    TRCores cores = sp_checkpoint.empty() ? random_cores(dims, sp_ranks, sp_seed)
                                          : load_checkpoint(sp_checkpoint).build_cores(normalized_grids(dims));
    std::vector<Index> cutoffs(static_cast<std::size_t>(cores.order()), sp_cutoff);
    for (std::size_t k = 0; k < cutoffs.size(); ++k) {
      cutoffs[k] = std::min(cutoffs[k], cores.dims()[k] / 2);
    }
    TRCores checked = sp_unfiltered ? cores : lowpass_cores(cores, cutoffs);
    json j;
    j["filtered"] = !sp_unfiltered;
    j["spectral"] = spectral_bound_check(checked, cutoffs);
    j["lowpass_energy"] = lowpass_energy_experiment(cores, 0, cutoffs[0]);
    emit(j, report_out, out);
    return kExitOk;
  }
  if (grad->parsed()) {
    gr.dims = parse_shape(gr_dims);
    gr.scheme = parse_scheme(gr_scheme);
    json runs = json::array();
    Index amplified = 0;
    for (Index s = 0; s < gr_seeds; ++s) {
      gr.seed = static_cast<std::uint64_t>(s);
      auto const rep = gradient_ratio_experiment(gr);
      amplified += rep.c_space_amplifies ? 1 : 0;
      json r = rep;
      r["seed"] = s;
      runs.push_back(std::move(r));
    }
    emit({{"runs", runs}, {"seeds", gr_seeds}, {"c_space_amplifies_count", amplified}}, report_out, out);
    return kExitOk;
  }
  if (variance->parsed()) {
    emit(variance_preservation_check(var_r, var_R, parse_scheme(var_scheme), var_trials, var_seed, var_scale),
         report_out, out);
    return kExitOk;
  }
  if (lipschitz->parsed()) {
    auto const model = lp_checkpoint.empty()
                         ? FactorModel::init(small_model(parse_shape(lp_dims), lp_ranks, lp_beta, lp_hidden, lp_seed))
                         : load_checkpoint(lp_checkpoint);
    emit(lipschitz_check(model, lp_pairs, lp_seed), report_out, out);
    return kExitOk;
  }
  return kExitConfig;
}

} // namespace

int run(std::vector<std::string> args, std::ostream &out, std::ostream &err)
{
  CLI::App app{"Functional tensor-ring recovery with a reparameterized factor network"};
  app.name("reptrfd");
  try {
    return dispatch(app, std::move(args), out, err);
  } catch (CLI::CallForHelp const &) {
    out << app.help();
    return kExitOk;
  } catch (CLI::CallForAllHelp const &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (CLI::ParseError const &e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (ConfigError const &e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (ShapeError const &e) {
    err << "shape error: " << e.what() << '\n';
    return kExitConfig;
  } catch (RangeError const &e) {
    err << "range error: " << e.what() << '\n';
    return kExitConfig;
  } catch (FormatError const &e) {
    err << "file error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (NumericError const &e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (std::exception const &e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int main(int argc, char **argv)
{
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), std::cout, std::cerr);
}

} // namespace reptrfd::cli
