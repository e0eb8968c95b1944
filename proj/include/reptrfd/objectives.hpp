#pragma once

#include "reptrfd/autodiff.hpp"
#include "reptrfd/model.hpp"
#include "reptrfd/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace reptrfd {

struct RegWeights {
  double gamma1 = 0.0; // TV
  double gamma2 = 0.0; // SSTV
};

/// Scattered samples (x, y, z, c) -> s with coordinates normalized to [-1, 1].
struct PointSet {
  DenseTensor coords; // (N, 4)
  DenseTensor values; // (N)
  // Per-column min/max of the raw coordinates, for mapping back on export.
  std::vector<double> col_min;
  std::vector<double> col_max;

  Index size() const { return values.size(); }
};

/// Throws RangeError unless every entry is exactly 0 or 1.
void validate_mask(DenseTensor const &mask);

/// Sum over masked entries of (x - obs)^2.
double masked_mse(DenseTensor const &x, DenseTensor const &obs, DenseTensor const &mask);
/// l1 norm of forward differences along modes 0 and 1.
double tv(DenseTensor const &x);
/// l1 norm of mixed differences: mode 2 first, then mode 0 (resp. 1).
double sstv(DenseTensor const &x);
/// s x s block mean over modes 0 and 1.
DenseTensor downsample(DenseTensor const &x, Index s);

ad::Var masked_mse(ad::Var x, DenseTensor const &obs, DenseTensor const &mask);
ad::Var squared_error(ad::Var x, DenseTensor const &target);
ad::Var tv(ad::Var x);
ad::Var sstv(ad::Var x);

enum class TaskKind { Inpaint, Denoise, SuperRes, PointCloud };

std::string to_string(TaskKind kind);

/// Everything needed to fit a model to one observation.
struct RecoveryTask {
  TaskKind kind = TaskKind::Inpaint;
  DenseTensor observation;          // grid tasks; low resolution for SuperRes
  std::optional<DenseTensor> mask;  // Inpaint only
  Index scale = 1;                  // SuperRes only
  PointSet points;                  // PointCloud only
  RegWeights reg;
  std::vector<DenseTensor> grids;   // reconstruction coordinates per mode
  Index iterations = 3000;
  std::uint64_t seed = 0;
  Index eval_every = 100;
  double learning_rate = 3e-4;
  std::optional<DenseTensor> ground_truth; // PSNR tracing
  double psnr_peak = 1.0;

  /// Shape of the full-resolution reconstruction (grid tasks).
  Shape reconstruction_shape() const;
  std::vector<std::string> violations(Index model_order) const;
  void validate(Index model_order) const;
};

/// Default iteration budget per task kind.
Index default_iterations(TaskKind kind);

struct TaskLoss {
  ad::Var loss;
  ad::Var reconstruction; // grid tensor, or point predictions for PointCloud
};

/// Fidelity plus weighted regularizers; zero-weight terms are not built.
TaskLoss task_loss(ModelGraph const &graph, RecoveryTask const &task);

} // namespace reptrfd
