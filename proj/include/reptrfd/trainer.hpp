#pragma once

#include "reptrfd/model.hpp"
#include "reptrfd/objectives.hpp"
#include "reptrfd/tensor.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reptrfd {

struct AdamOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates for a fixed list of parameters.
class AdamState {
public:
  AdamState(AdamOptions options, std::vector<Shape> const &shapes);

  AdamOptions const &options() const { return options_; }
  Index step_count() const { return t_; }
  DenseTensor const &first_moment(std::size_t i) const { return m_.at(i); }
  DenseTensor const &second_moment(std::size_t i) const { return v_.at(i); }

  /// One bias-corrected update. Every gradient is checked before anything
  /// is modified; a non-finite entry throws NumericError naming the parameter.
  void step(std::span<ParameterRef const> params, std::span<DenseTensor const> grads);

private:
  AdamOptions options_;
  Index t_ = 0;
  std::vector<DenseTensor> m_;
  std::vector<DenseTensor> v_;
};

struct TraceRow {
  Index iteration = 0;
  double loss = 0.0;
  std::optional<double> psnr;
};

struct TrainTrace {
  std::vector<TraceRow> rows;

  /// `iter,loss,psnr` with an empty psnr field when not computed.
  std::string to_csv() const;
  void write_csv(std::filesystem::path const &path) const;
};

struct TrainResult {
  FactorModel model;
  TrainTrace trace;
  DenseTensor reconstruction; // grid tensor, or point predictions
  bool aborted = false;
  std::string diagnostic;
};

using TraceCallback = std::function<void(TraceRow const &)>;

/// Full-batch Adam on task_loss. On a non-finite loss or gradient the run stops
/// and the last finite parameters are returned with `aborted` set.
TrainResult train(RecoveryTask const &task, FactorModel model, TraceCallback on_row = {});

} // namespace reptrfd
