#pragma once

#include "reptrfd/analysis.hpp"
#include "reptrfd/model.hpp"

#include <json.hpp>

#include <filesystem>

namespace reptrfd {

/// Finite values as numbers; infinities and NaN as "Inf", "-Inf", "NaN".
nlohmann::json json_number(double v);

void to_json(nlohmann::json &j, SpectralReport const &r);
void to_json(nlohmann::json &j, LowpassEnergyReport const &r);
void to_json(nlohmann::json &j, GradientRatioReport const &r);
void to_json(nlohmann::json &j, VarianceReport const &r);
void to_json(nlohmann::json &j, LipschitzReport const &r);
void to_json(nlohmann::json &j, LipschitzCheck const &r);

/// Pretty-printed, newline-terminated, written atomically.
void write_json(std::filesystem::path const &path, nlohmann::json const &j);

} // namespace reptrfd
