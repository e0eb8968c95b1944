#include "reptrfd/config.hpp"
#include "reptrfd/errors.hpp"
#include "reptrfd/io.hpp"

#include <json.hpp>

#include <set>
#include <sstream>

namespace reptrfd {

using nlohmann::json;

std::optional<TaskKind> task_kind_from_string(std::string_view s)
{
  if (s == "inpaint") { return TaskKind::Inpaint; }
  if (s == "denoise") { return TaskKind::Denoise; }
  if (s == "superres") { return TaskKind::SuperRes; }
  if (s == "pointcloud") { return TaskKind::PointCloud; }
  return std::nullopt;
}

TaskConfig TaskConfig::defaults(TaskKind task)
{
  TaskConfig c;
  c.task = task;
  ModelConfig m;
  switch (task) {
  case TaskKind::Inpaint:
    m = color_inpainting_config();
    c.reg = {5e-5, 5e-5};
    break;
  case TaskKind::Denoise:
    m = denoising_config();
    c.reg = {5e-5, 5e-5};
    break;
  case TaskKind::SuperRes:
    m = superres_config();
    c.reg = {5e-5, 0.0};
    break;
  case TaskKind::PointCloud:
    m = pointcloud_config();
    c.reg = {0.0, 0.0};
    break;
  }
  c.ranks = {m.ranks.front()};
  c.beta = m.beta;
  c.omega0 = m.omega0;
  c.hidden = m.hidden;
  c.iterations = default_iterations(task);
  return c;
}

ModelConfig TaskConfig::resolve_model(Index order, Shape const &dims) const
{
  auto fit = [&](std::vector<Index> const &v, char const *what) {
    if (v.size() == 1) { return std::vector<Index>(static_cast<std::size_t>(order), v.front()); }
    if (static_cast<Index>(v.size()) != order) {
      throw ConfigError(std::string(what) + " has " + std::to_string(v.size()) + " entries but the data has " +
                        std::to_string(order) + " modes");
    }
    return v;
  };
  ModelConfig m;
  m.dims = dims;
  m.ranks = fit(ranks, "ranks");
  if (layers.empty()) {
    m.layers.assign(static_cast<std::size_t>(order), 1);
    if (order == 3 && task != TaskKind::PointCloud) { m.layers.back() = 2; }
  } else {
    m.layers = fit(layers, "layers");
  }
  m.variant = variant;
  m.beta = beta;
  m.omega0 = omega0;
  m.hidden = hidden;
  m.basis_scheme = basis_scheme;
  m.basis_scale = basis_scale;
  m.shared_embedding = shared_embedding;
  m.basis_trainable = basis_trainable;
  m.seed = seed;
  m.validate();
  return m;
}

namespace {

class Parser {
public:
  Parser(json const &doc, std::filesystem::path base) : doc_(doc), base_(std::move(base)) {}

  std::vector<std::string> errors;

  bool has(char const *key) const { return doc_.contains(key); }

  template <typename T, typename Check> void number(char const *key, T &out, Check ok, char const *rule)
  {
    if (!has(key)) { return; }
    auto const &v = doc_.at(key);
    bool const type_ok = std::is_integral_v<T> ? v.is_number_integer() : v.is_number();
    if (!type_ok) {
      errors.push_back(std::string(key) + ": expected " + (std::is_integral_v<T> ? "an integer" : "a number"));
      return;
    }
    T const x = v.get<T>();
    if (!ok(x)) {
      errors.push_back(std::string(key) + ": " + rule);
      return;
    }
    out = x;
  }

  template <typename T, typename Check> void optional_number(char const *key, std::optional<T> &out, Check ok, char const *rule)
  {
    if (!has(key)) { return; }
    T x{};
    auto const before = errors.size();
    number(key, x, ok, rule);
    if (errors.size() == before) { out = x; }
  }

  void boolean(char const *key, bool &out)
  {
    if (!has(key)) { return; }
    if (!doc_.at(key).is_boolean()) {
      errors.push_back(std::string(key) + ": expected true or false");
      return;
    }
    out = doc_.at(key).get<bool>();
  }

  void path(char const *key, std::filesystem::path &out)
  {
    if (!has(key)) { return; }
    if (!doc_.at(key).is_string() || doc_.at(key).get<std::string>().empty()) {
      errors.push_back(std::string(key) + ": expected a non-empty path string");
      return;
    }
    std::filesystem::path p = doc_.at(key).get<std::string>();
    out = p.is_absolute() || base_.empty() ? p : base_ / p;
  }

  void optional_path(char const *key, std::optional<std::filesystem::path> &out)
  {
    if (!has(key)) { return; }
    std::filesystem::path p;
    auto const before = errors.size();
    path(key, p);
    if (errors.size() == before) { out = p; }
  }

  void index_list(char const *key, std::vector<Index> &out)
  {
    if (!has(key)) { return; }
    auto const &v = doc_.at(key);
    std::vector<Index> list;
    if (v.is_number_integer()) {
      list.push_back(v.get<Index>());
    } else if (v.is_array() && !v.empty()) {
      for (auto const &e : v) {
        if (!e.is_number_integer()) {
          errors.push_back(std::string(key) + ": expected integers");
          return;
        }
        list.push_back(e.get<Index>());
      }
    } else {
      errors.push_back(std::string(key) + ": expected an integer or a non-empty list of integers");
      return;
    }
    for (Index x : list) {
      if (x < 1) {
        errors.push_back(std::string(key) + ": entries must be >= 1");
        return;
      }
    }
    out = std::move(list);
  }

  template <typename E> void choice(char const *key, E &out, std::initializer_list<std::pair<char const *, E>> options)
  {
    if (!has(key)) { return; }
    auto const &v = doc_.at(key);
    std::string allowed;
    for (auto const &[name, value] : options) {
      if (v.is_string() && v.get<std::string>() == name) {
        out = value;
        return;
      }
      allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    }
    errors.push_back(std::string(key) + ": expected one of " + allowed);
  }

private:
  json const &doc_;
  std::filesystem::path base_;
};

std::set<std::string, std::less<>> const &known_keys()
{
  static std::set<std::string, std::less<>> const keys{
    "task",     "input",  "observation", "mask",       "ground_truth",     "sampling_ratio",  "noise_sd",
    "scale",    "ranks",  "beta",        "omega0",     "layers",           "hidden",          "lr",
    "iterations", "eval_every", "gamma1", "gamma2",    "seed",             "output_dir",      "variant",
    "basis_scheme", "basis_scale", "shared_embedding", "basis_trainable"};
  return keys;
}

} // namespace

TaskConfig parse_task_config(std::string_view json_text, std::filesystem::path const &base_dir)
{
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (json::parse_error const &e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) { throw ConfigError("config must be a JSON object"); }

  std::vector<std::string> errors;
  for (auto const &[key, _] : doc.items()) {
    if (!known_keys().contains(key)) { errors.push_back("unknown key '" + key + "'"); }
  }

  std::optional<TaskKind> kind;
  if (!doc.contains("task")) {
    errors.emplace_back("task: required (inpaint, denoise, superres or pointcloud)");
  } else if (doc["task"].is_string()) {
    kind = task_kind_from_string(doc["task"].get<std::string>());
  }
  if (doc.contains("task") && !kind) { errors.emplace_back("task: expected inpaint, denoise, superres or pointcloud"); }

  TaskConfig c = TaskConfig::defaults(kind.value_or(TaskKind::Inpaint));
  Parser p(doc, base_dir);
  auto positive = [](auto x) { return x > 0; };
  auto nonneg = [](auto x) { return x >= 0; };

  p.path("input", c.input);
  p.optional_path("observation", c.observation);
  p.optional_path("mask", c.mask);
  p.optional_path("ground_truth", c.ground_truth);
  p.optional_number("sampling_ratio", c.sampling_ratio, [](double x) { return x > 0.0 && x <= 1.0; }, "must be in (0, 1]");
  p.optional_number("noise_sd", c.noise_sd, nonneg, "must be >= 0");
  p.number("scale", c.scale, positive, "must be >= 1");
  p.index_list("ranks", c.ranks);
  p.number("beta", c.beta, positive, "must be >= 1");
  p.number("omega0", c.omega0, [](double x) { return x > 0.0 && std::isfinite(x); }, "must be positive");
  p.index_list("layers", c.layers);
  p.number("hidden", c.hidden, positive, "must be >= 1");
  p.number("lr", c.learning_rate, positive, "must be > 0");
  p.number("iterations", c.iterations, nonneg, "must be >= 0");
  p.number("eval_every", c.eval_every, positive, "must be >= 1");
  p.number("gamma1", c.reg.gamma1, nonneg, "must be >= 0");
  p.number("gamma2", c.reg.gamma2, nonneg, "must be >= 0");
  if (doc.contains("seed") && !doc["seed"].is_number_unsigned()) {
    p.errors.emplace_back("seed: expected a non-negative integer");
  } else if (doc.contains("seed")) {
    c.seed = doc["seed"].get<std::uint64_t>();
  }
  p.path("output_dir", c.output_dir);
  p.choice("variant", c.variant, {{"trfd", Variant::TRFD}, {"reptrfd", Variant::RepTRFD}});
  p.choice("basis_scheme", c.basis_scheme,
           {{"xavier", BasisScheme::Xavier}, {"kaiming", BasisScheme::Kaiming}, {"explicit", BasisScheme::Explicit}});
  p.number("basis_scale", c.basis_scale, positive, "must be > 0");
  p.boolean("shared_embedding", c.shared_embedding);
  p.boolean("basis_trainable", c.basis_trainable);
  errors.insert(errors.end(), p.errors.begin(), p.errors.end());

  if (c.basis_scheme == BasisScheme::Explicit && !doc.contains("basis_scale")) {
    errors.emplace_back("basis_scale: required when basis_scheme is explicit");
  }
  if (kind) {
    auto const only = [&](char const *key, TaskKind k) {
      if (doc.contains(key) && *kind != k) {
        errors.push_back(std::string(key) + ": only applies to the " + to_string(k) + " task");
      }
    };
    only("mask", TaskKind::Inpaint);
    only("sampling_ratio", TaskKind::Inpaint);
    only("noise_sd", TaskKind::Denoise);
    only("scale", TaskKind::SuperRes);
    if (!doc.contains("input") && !doc.contains("observation")) {
      errors.emplace_back("input: required (or give an observation)");
    }
    switch (*kind) {
    case TaskKind::Inpaint:
      if (doc.contains("observation") && !doc.contains("mask")) {
        errors.emplace_back("mask: required when an observation is given");
      } else if (!doc.contains("mask") && !doc.contains("sampling_ratio")) {
        errors.emplace_back("inpaint needs a mask path or a sampling_ratio");
      }
      break;
    case TaskKind::Denoise:
      if (!doc.contains("observation") && !doc.contains("noise_sd")) {
        errors.emplace_back("denoise needs noise_sd (or an observation)");
      }
      break;
    case TaskKind::SuperRes: break;
    case TaskKind::PointCloud:
      if (doc.contains("observation")) { errors.emplace_back("observation: pointcloud reads its samples from input"); }
      if (c.reg.gamma1 != 0.0 || c.reg.gamma2 != 0.0) { errors.emplace_back("pointcloud takes no regularizer"); }
      break;
    }
    if (*kind == TaskKind::SuperRes && c.reg.gamma2 != 0.0) {
      errors.emplace_back("gamma2: super-resolution takes no SSTV term");
    }
  }

  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid config (" << errors.size() << (errors.size() == 1 ? " problem" : " problems") << "): ";
    for (std::size_t i = 0; i < errors.size(); ++i) { os << (i ? "; " : "") << errors[i]; }
    throw ConfigError(os.str());
  }
  return c;
}

TaskConfig load_task_config(std::filesystem::path const &path)
{
  std::string text;
  try {
    text = read_file(path);
  } catch (FormatError const &e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_task_config(text, path.parent_path());
}

} // namespace reptrfd
