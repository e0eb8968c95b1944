#include "reptrfd/reports.hpp"
#include "reptrfd/io.hpp"

#include <cmath>

namespace reptrfd {

using nlohmann::json;

json json_number(double v)
{
  if (std::isnan(v)) { return "NaN"; }
  if (std::isinf(v)) { return v > 0 ? "Inf" : "-Inf"; }
  return v;
}

void to_json(json &j, SpectralReport const &r)
{
  j = json::object();
  j["violations"] = r.violations();
  j["max_epsilon"] = json_number(r.max_epsilon());
  j["modes"] = json::array();
  for (auto const &m : r.modes) {
    json bins = json::array();
    for (auto const &b : m.bins) {
      bins.push_back({{"frequency", b.frequency},
                      {"magnitude", json_number(b.magnitude)},
                      {"out_of_band", b.out_of_band},
                      {"satisfied", b.satisfied}});
    }
    j["modes"].push_back({{"mode", m.mode},
                          {"cutoff", m.cutoff},
                          {"epsilon", json_number(m.epsilon)},
                          {"c", json_number(m.c)},
                          {"tolerance", json_number(m.tolerance)},
                          {"margin", json_number(m.margin)},
                          {"bins", std::move(bins)}});
  }
}

void to_json(json &j, LowpassEnergyReport const &r)
{
  j = {{"mode", r.mode},
       {"cutoff", r.cutoff},
       {"energy_before", json_number(r.energy_before)},
       {"energy_after", json_number(r.energy_after)},
       {"orders_of_magnitude", json_number(r.orders_of_magnitude)}};
}

namespace {

json summary(RatioSummary const &s)
{
  return {{"count", s.count}, {"excluded", s.excluded}, {"max", json_number(s.max)}, {"mean", json_number(s.mean)}};
}

json number_list(std::vector<double> const &v)
{
  json out = json::array();
  for (double x : v) { out.push_back(json_number(x)); }
  return out;
}

} // namespace

void to_json(json &j, GradientRatioReport const &r)
{
  j = {{"omega_low", r.omega_low},
       {"omega_high", r.omega_high},
       {"g_space", summary(r.g_space)},
       {"c_space", summary(r.c_space)},
       {"inconclusive", r.inconclusive},
       {"degenerate", r.degenerate},
       {"c_space_amplifies", r.c_space_amplifies}};
}

void to_json(json &j, VarianceReport const &r)
{
  j = {{"r", r.r},
       {"R", r.R},
       {"scheme", to_string(r.scheme)},
       {"bound", json_number(r.bound)},
       {"trials", r.trials},
       {"forward", {{"measured", json_number(r.forward_measured)},
                    {"predicted", json_number(r.forward_predicted)},
                    {"within_5_percent", r.forward_within(0.05)}}},
       {"backward", {{"measured", json_number(r.backward_measured)},
                     {"predicted", json_number(r.backward_predicted)},
                     {"within_5_percent", r.backward_within(0.05)}}}};
}

void to_json(json &j, LipschitzReport const &r)
{
  j = {{"delta", json_number(r.delta)},
       {"delta_k", number_list(r.delta_k)},
       {"eta", number_list(r.eta)},
       {"depth", r.depth},
       {"basis_norm", number_list(r.basis_norm)},
       {"slice_bound", number_list(r.slice_bound)}};
}

void to_json(json &j, LipschitzCheck const &r)
{
  j = {{"bound", r.bound}, {"pairs", r.pairs}, {"violations", r.violations}, {"max_ratio", json_number(r.max_ratio)}};
}

void write_json(std::filesystem::path const &path, json const &j) { write_file_atomic(path, j.dump(2) + "\n"); }

} // namespace reptrfd
