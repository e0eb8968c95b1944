#pragma once

#include "reptrfd/model.hpp"
#include "reptrfd/objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace reptrfd {

/// A recovery run as described by a JSON document. Model structure fields are
/// kept as written; resolve_model() fits them to the data order.
struct TaskConfig {
  TaskKind task = TaskKind::Inpaint;
  std::filesystem::path input;       // clean data (tensor, PNG or point file)
  std::optional<std::filesystem::path> observation; // pre-degraded data
  std::optional<std::filesystem::path> mask;
  std::optional<std::filesystem::path> ground_truth;
  std::optional<double> sampling_ratio;
  std::optional<double> noise_sd;
  Index scale = 1;

  std::vector<Index> ranks;  // one entry broadcasts to every mode
  Index beta = 10;
  double omega0 = 90.0;
  std::vector<Index> layers; // empty: per-task default
  Index hidden = 256;
  Variant variant = Variant::RepTRFD;
  BasisScheme basis_scheme = BasisScheme::Xavier;
  double basis_scale = 0.0;
  bool shared_embedding = true;
  bool basis_trainable = false;

  double learning_rate = 3e-4;
  Index iterations = 3000;
  Index eval_every = 100;
  RegWeights reg;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  /// Default hyperparameters for the task family.
  static TaskConfig defaults(TaskKind task);
  /// Model config for data of the given order (dims may be empty).
  ModelConfig resolve_model(Index order, Shape const &dims = {}) const;
};

/// Parses and validates; unknown keys and every violated constraint are
/// reported together in one ConfigError. Relative paths resolve against
/// `base_dir`.
TaskConfig parse_task_config(std::string_view json_text, std::filesystem::path const &base_dir = {});
TaskConfig load_task_config(std::filesystem::path const &path);

std::optional<TaskKind> task_kind_from_string(std::string_view s);

} // namespace reptrfd
