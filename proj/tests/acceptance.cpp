// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "experiments.hpp"
#include "gradcheck.hpp"

#include "reptrfd/analysis.hpp"
#include "reptrfd/io.hpp"
#include "reptrfd/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <sys/wait.h>

namespace reptrfd {
namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(char const *f, auto... args)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 ----

double rank_tuple_oracle(TRCores const &cores, std::vector<Index> const &idx)
{
  Index const d = cores.order();
  std::vector<Index> r(static_cast<std::size_t>(d), 0);
  double total = 0.0;
  while (true) {
    double term = 1.0;
    for (Index k = 0; k < d; ++k) {
      auto const &g = cores.core(k);
      term *= g[(r[k] * g.dim(1) + idx[k]) * g.dim(2) + r[(k + 1) % d]];
    }
    total += term;
    Index k = 0;
    while (k < d && ++r[k] == cores.core(k).dim(0)) { r[k++] = 0; }
    if (k == d) { break; }
  }
  return total;
}

Verdict oracle_equivalence()
{
  auto const t0 = Clock::now();
  std::mt19937_64 rng(2024);
  auto uniform = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    Index const d = uniform(2, 4);
    std::vector<Index> ranks, dims;
    for (Index k = 0; k < d; ++k) {
      ranks.push_back(uniform(1, 3));
      dims.push_back(uniform(1, 4));
    }
    std::vector<DenseTensor> cores;
    for (Index k = 0; k < d; ++k) {
      DenseTensor g({ranks[k], dims[k], ranks[(k + 1) % d]});
      for (double &v : g.data()) { v = normal(rng); }
      cores.push_back(std::move(g));
    }
    TRCores const tr(std::move(cores));
    auto const x = tr_contract(tr);
    std::vector<Index> idx(static_cast<std::size_t>(d), 0);
    for (Index flat = 0; flat < x.size(); ++flat) {
      Index rem = flat;
      for (Index k = d - 1; k >= 0; --k) {
        idx[k] = rem % dims[k];
        rem /= dims[k];
      }
      worst = std::max(worst, std::abs(x[flat] - rank_tuple_oracle(tr, idx)));
    }
  }
  double const t = seconds_since(t0);
  return {worst <= 1e-10 && t < 5.0, fmt("max abs error %.2e over 100 instances, %.2f s", worst, t)};
}

// ---- 2 ----

Verdict gradient_suite()
{
  auto const t0 = Clock::now();
  ModelConfig c;
  c.dims = {4, 4, 3};
  c.ranks = {2, 2, 2};
  c.layers = {1, 1, 2};
  c.beta = 3;
  c.hidden = 8;
  c.seed = 11;
  auto model = FactorModel::init(c);

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RecoveryTask task;
  task.kind = TaskKind::Inpaint;
  task.observation = DenseTensor(c.dims);
  task.mask = DenseTensor(c.dims);
  for (Index i = 0; i < task.observation.size(); ++i) {
    (*task.mask)[i] = u(rng) < 0.5 ? 1.0 : 0.0;
    task.observation[i] = u(rng) * (*task.mask)[i];
  }
  task.grids = normalized_grids(c.dims);
  task.reg = {0.1, 0.1};

  auto loss_of = [&](FactorModel const &m) {
    ad::Tape tape;
    ModelGraph graph(tape, m, false);
    return task_loss(graph, task).loss.value()[0];
  };

  ad::Tape tape;
  ModelGraph graph(tape, model, true);
  tape.backward(task_loss(graph, task).loss);

  double const h = 1e-5;
  auto refs = model.parameters();
  std::size_t leaf = 0;
  Index entries = 0, failures = 0;
  double worst = 0.0;
  std::string worst_name;
  for (auto &ref : refs) {
    if (!ref.trainable) { continue; }
    DenseTensor const analytic = graph.leaves()[leaf++].grad();
    for (Index e = 0; e < ref.value->size(); ++e) {
      double &x = (*ref.value)[e];
      double const x0 = x;
      x = x0 + h;
      double const up = loss_of(model);
      x = x0 - h;
      double const down = loss_of(model);
      x = x0;
      double const err = testing::relative_error(analytic[e], (up - down) / (2 * h));
      ++entries;
      if (err > 1e-4) { ++failures; }
      if (err > worst) {
        worst = err;
        worst_name = ref.name;
      }
    }
  }
  double const t = seconds_since(t0);
  return {failures == 0 && t < 60.0,
          fmt("%ld entries, %ld over tol, max rel error %.2e (%s), %.2f s", static_cast<long>(entries),
              static_cast<long>(failures), worst, worst_name.c_str(), t)};
}

// ---- 3 ----

Verdict spectral_bound()
{
  std::mt19937_64 rng(3);
  auto uniform = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  std::normal_distribution<double> normal;
  Index violations = 0;
  double max_eps = 0.0;
  double min_orders = std::numeric_limits<double>::infinity();
  for (int set = 0; set < 20; ++set) {
    Index const d = uniform(2, 4);
    std::vector<Index> ranks, dims;
    for (Index k = 0; k < d; ++k) {
      ranks.push_back(uniform(1, 3));
      dims.push_back(uniform(3, 8));
    }
    std::vector<DenseTensor> cores;
    for (Index k = 0; k < d; ++k) {
      DenseTensor g({ranks[k], dims[k], ranks[(k + 1) % d]});
      for (double &v : g.data()) { v = normal(rng); }
      cores.push_back(std::move(g));
    }
    TRCores const raw(std::move(cores));
    std::vector<Index> const cutoffs(static_cast<std::size_t>(d), 1);
    auto const report = spectral_bound_check(lowpass_cores(raw, cutoffs), cutoffs);
    violations += report.violations();
    max_eps = std::max(max_eps, report.max_epsilon());
    min_orders = std::min(min_orders, lowpass_energy_experiment(raw, 0, 1).orders_of_magnitude);
  }
  return {violations == 0 && max_eps <= 1e-12 && min_orders >= 6.0,
          fmt("20 core sets: %ld violations, max epsilon %.2e, min energy drop %.1f orders",
              static_cast<long>(violations), max_eps, min_orders)};
}

// ---- 4 ----

Verdict variance_preservation()
{
  auto const r = variance_preservation_check(20, 200, BasisScheme::Xavier, 1'000'000, 4);
  double const a = basis_bound(20, 200, BasisScheme::Xavier);
  bool const bound_ok = std::abs(a - std::sqrt(6.0 / 220.0)) < 1e-15 && std::abs(a - 0.1651) < 5e-5 &&
                        std::abs(a - 0.165) < 5e-4;
  return {r.forward_within(0.05) && r.backward_within(0.05) && bound_ok,
          fmt("forward %.4f (pred %.4f), backward %.4f (pred %.4f), a = %.6f", r.forward_measured,
              r.forward_predicted, r.backward_measured, r.backward_predicted, a)};
}

// ---- 5 ----

Verdict lipschitz_pairs()
{
  Index violations = 0, pairs = 0;
  double tightest = 0.0;
  Shape const dims[] = {{8, 8, 3}, {6, 5, 4}, {10, 10}, {4, 4, 4, 4}, {12, 9, 3}};
  for (std::uint64_t s = 0; s < 5; ++s) {
    ModelConfig c;
    c.dims = dims[s];
    Index const d = static_cast<Index>(c.dims.size());
    c.ranks.assign(static_cast<std::size_t>(d), 2 + static_cast<Index>(s % 3));
    c.layers.assign(static_cast<std::size_t>(d), 1);
    c.layers.back() = 1 + static_cast<Index>(s % 2);
    c.beta = 3;
    c.omega0 = 30.0;
    c.hidden = 16;
    c.seed = s;
    auto const r = lipschitz_check(FactorModel::init(c), 10'000, 100 + s);
    violations += r.violations;
    pairs += r.pairs;
    tightest = std::max(tightest, r.max_ratio / r.bound.delta);
  }
  return {violations == 0 && pairs == 50'000,
          fmt("%ld pairs over 5 models, %ld violations, max ratio/delta %.3e", static_cast<long>(pairs),
              static_cast<long>(violations), tightest)};
}

// ---- 6 ----

Verdict teacher_student()
{
  auto const t0 = Clock::now();
  auto const r = experiments::run_teacher_student(0, 100);
  double const t = seconds_since(t0);
  return {!r.aborted && r.heldout_psnr >= 30.0 && t < 300.0,
          fmt("held-out PSNR %.2f dB (observed %.2f dB), %.1f s", r.heldout_psnr, r.observed_psnr, t)};
}

// ---- 7, 8 ----

Verdict reparameterization(double rep, double trfd)
{
  return {rep >= trfd + 1.0, fmt("RepTRFD %.2f dB vs TRFD %.2f dB (gap %.2f dB)", rep, trfd, rep - trfd)};
}

Verdict basis_scale(double xavier, double small, double large)
{
  return {xavier >= small && xavier >= large,
          fmt("a=%.4f: %.2f dB, a=0.01: %.2f dB, a=1.0: %.2f dB", basis_bound(20, 200, BasisScheme::Xavier), xavier,
              small, large)};
}

// ---- 9, 10 ----

struct Shell {
  int code;
  std::string out;
};

Shell shell(std::string const &cmd)
{
  Shell s{-1, {}};
  FILE *pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!pipe) { return s; }
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) { s.out += buf; }
  int const status = pclose(pipe);
  s.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return s;
}

std::string const kCli = REPTRFD_CLI_PATH;

DenseTensor random_image(Index h, Index w, Index c, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  DenseTensor x(c == 1 ? Shape{h, w} : Shape{h, w, c});
  for (double &v : x.data()) { v = u(rng); }
  return x;
}

double ssim_oracle(DenseTensor const &x, DenseTensor const &y)
{
  Index const h = x.dim(0), w = x.dim(1);
  Index const c = x.order() == 3 ? x.dim(2) : 1;
  double g[11][11];
  double total = 0.0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
      total += g[i][j];
    }
  }
  auto clip = [](double v) { return std::clamp(v, 0.0, 1.0); };
  double acc = 0.0;
  for (Index s = 0; s < c; ++s) {
    double sum = 0.0;
    Index count = 0;
    for (Index r0 = 0; r0 + 11 <= h; ++r0) {
      for (Index c0 = 0; c0 + 11 <= w; ++c0) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i) {
          for (int j = 0; j < 11; ++j) {
            Index const off = ((r0 + i) * w + c0 + j) * c + s;
            double const wt = g[i][j] / total, a = clip(x[off]), b = clip(y[off]);
            mx += wt * a;
            my += wt * b;
            sxx += wt * a * a;
            syy += wt * b * b;
            sxy += wt * a * b;
          }
        }
        sxx -= mx * mx;
        syy -= my * my;
        sxy -= mx * my;
        sum += ((2 * mx * my + 1e-4) * (2 * sxy + 9e-4)) / ((mx * mx + my * my + 1e-4) * (sxx + syy + 9e-4));
        ++count;
      }
    }
    acc += sum / static_cast<double>(count);
  }
  return acc / static_cast<double>(c);
}

Verdict metric_correctness(fs::path const &dir)
{
  double psnr_err = 0.0, ssim_err = 0.0, nrmse_err = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Index const c = s % 2 == 0 ? 3 : 1;
    auto const ref = random_image(16 + static_cast<Index>(s), 14, c, s);
    auto const est = random_image(16 + static_cast<Index>(s), 14, c, s + 50, -0.1, 1.1);
    double mse = 0.0, ref_sq = 0.0;
    for (Index i = 0; i < ref.size(); ++i) {
      mse += (est[i] - ref[i]) * (est[i] - ref[i]);
      ref_sq += ref[i] * ref[i];
    }
    double const n = static_cast<double>(ref.size());
    psnr_err = std::max(psnr_err, std::abs(psnr(est, ref) - 10.0 * std::log10(1.0 / (mse / n))));
    nrmse_err = std::max(nrmse_err, std::abs(nrmse(est, ref) - std::sqrt(mse / ref_sq)));
    ssim_err = std::max(ssim_err, std::abs(ssim(est, ref) - ssim_oracle(est, ref)));
  }
  auto const file = dir / "self.rten";
  save_rten(random_image(24, 24, 3, 9), file);
  auto const eval = shell(kCli + " eval " + file.string() + " " + file.string());
  bool const inf_line = eval.code == 0 && eval.out.find("PSNR/SSIM: Inf/1.000") != std::string::npos;
  return {psnr_err <= 1e-10 && nrmse_err <= 1e-12 && ssim_err <= 1e-8 && inf_line,
          fmt("oracle errors psnr %.1e, ssim %.1e, nrmse %.1e; self-eval prints %s", psnr_err, ssim_err, nrmse_err,
              inf_line ? "Inf/1.000" : "something else")};
}

Verdict determinism(fs::path const &dir)
{
  save_rten(random_image(12, 12, 3, 21), dir / "image.rten");
  std::string points;
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 40; ++i) {
    for (int k = 0; k < 5; ++k) { points += fmt("%.9f", u(rng)) + (k < 4 ? " " : "\n"); }
  }
  write_file_atomic(dir / "points.txt", points);

  struct Case {
    char const *task;
    char const *input;
    char const *extra;
  };
  Case const cases[] = {{"inpaint", "image.rten", R"("sampling_ratio": 0.3, "gamma1": 5e-5, "gamma2": 5e-5)"},
                        {"denoise", "image.rten", R"("noise_sd": 0.1, "gamma1": 5e-5, "gamma2": 5e-5)"},
                        {"superres", "image.rten", R"("scale": 2, "gamma1": 5e-5)"},
                        {"pointcloud", "points.txt", R"("ranks": 3)"}};
  std::string failed;
  for (auto const &c : cases) {
    auto const cfg = dir / (std::string(c.task) + ".json");
    write_file_atomic(cfg, std::string(R"({"task": ")") + c.task + R"(", "input": ")" + c.input +
                             R"(", "ranks": 3, "beta": 3, "hidden": 16, "iterations": 40, "eval_every": 10, "seed": 5, )" +
                             c.extra + "}");
    std::string bytes[2];
    for (int run = 0; run < 2; ++run) {
      auto const out = dir / (std::string(c.task) + "_run" + std::to_string(run));
      auto const r = shell(kCli + " " + c.task + " -q -c " + cfg.string() + " -o " + out.string());
      bytes[run] = r.code == 0 ? read_file(out / "reconstruction.rten") : std::string();
    }
    if (bytes[0].empty() || bytes[0] != bytes[1]) { failed += std::string(failed.empty() ? "" : ", ") + c.task; }
  }
  return {failed.empty(), failed.empty() ? "inpaint, denoise, superres, pointcloud: identical reconstruction bytes"
                                         : "differing or failed: " + failed};
}

} // namespace
} // namespace reptrfd

int main()
{
  using namespace reptrfd;
  auto const dir = fs::temp_directory_path() / "reptrfd_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  int failures = 0;
  auto report = [&](int id, char const *name, Verdict const &v) {
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << v.detail << std::endl;
  };
  auto guarded = [](auto &&fn) {
    try {
      return fn();
    } catch (std::exception const &e) {
      return Verdict{false, std::string("threw: ") + e.what()};
    }
  };

  report(1, "tr_contract oracle equivalence", guarded(oracle_equivalence));
  report(2, "gradient suite", guarded(gradient_suite));
  report(3, "spectral decay bound", guarded(spectral_bound));
  report(4, "variance preservation", guarded(variance_preservation));
  report(5, "Lipschitz bound", guarded(lipschitz_pairs));
  report(6, "teacher-student recovery", guarded(teacher_student));

  using experiments::ablation_model;
  using experiments::run_ablation;
  double rep = 0.0, trfd = 0.0;
  auto const ablation = guarded([&] {
    auto const a = run_ablation(ablation_model(Variant::RepTRFD));
    auto const b = run_ablation(ablation_model(Variant::TRFD));
    rep = a.aborted ? -INFINITY : a.psnr;
    trfd = b.aborted ? -INFINITY : b.psnr;
    return reparameterization(rep, trfd);
  });
  report(7, "reparameterization ablation", ablation);
  report(8, "basis-scale sweep", guarded([&] {
           if (rep == 0.0) { return Verdict{false, "ablation baseline unavailable"}; }
           auto const small = run_ablation(ablation_model(Variant::RepTRFD, BasisScheme::Explicit, 0.01));
           auto const large = run_ablation(ablation_model(Variant::RepTRFD, BasisScheme::Explicit, 1.0));
           return basis_scale(rep, small.aborted ? -INFINITY : small.psnr, large.aborted ? -INFINITY : large.psnr);
         }));
  report(9, "metric correctness", guarded([&] { return metric_correctness(dir); }));
  report(10, "end-to-end determinism", guarded([&] { return determinism(dir); }));

  fs::remove_all(dir);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + (failures == 1 ? " criterion failed" : " criteria failed")) << std::endl;
  return failures == 0 ? 0 : 1;
}
