#include "reptrfd/trainer.hpp"
#include "reptrfd/errors.hpp"
#include "reptrfd/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace reptrfd {

AdamState::AdamState(AdamOptions options, std::vector<Shape> const &shapes) : options_(options)
{
  if (!(options_.learning_rate >= 0.0) || !(options_.eps > 0.0) || options_.beta1 < 0.0 || options_.beta1 >= 1.0 ||
      options_.beta2 < 0.0 || options_.beta2 >= 1.0) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  m_.reserve(shapes.size());
  v_.reserve(shapes.size());
  for (auto const &s : shapes) {
    m_.emplace_back(s, 0.0);
    v_.emplace_back(s, 0.0);
  }
}

void AdamState::step(std::span<ParameterRef const> params, std::span<DenseTensor const> grads)
{
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ContractError("Adam step: expected " + std::to_string(m_.size()) + " parameters, got " +
                        std::to_string(params.size()) + " and " + std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value->shape() != m_[i].shape() || grads[i].shape() != m_[i].shape()) {
      throw ShapeError("Adam step: shape mismatch for " + params[i].name);
    }
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) { throw NumericError("non-finite gradient in parameter " + params[i].name); }
    }
  }

  ++t_;
  auto const &o = options_;
  double const c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
  double const c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value->data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      double const mhat = m[j] / c1;
      double const vhat = v[j] / c2;
      theta[j] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

std::string TrainTrace::to_csv() const
{
  std::ostringstream os;
  os << std::setprecision(17);
  os << "iter,loss,psnr\n";
  for (auto const &r : rows) {
    os << r.iteration << ',' << r.loss << ',';
    if (r.psnr) {
      if (std::isinf(*r.psnr)) {
        os << "inf";
      } else {
        os << *r.psnr;
      }
    }
    os << '\n';
  }
  return os.str();
}

void TrainTrace::write_csv(std::filesystem::path const &path) const
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) { throw FormatError("cannot open " + path.string() + " for writing"); }
  out << to_csv();
  if (!out) { throw FormatError("write failed: " + path.string()); }
}

namespace {

std::vector<ParameterRef> trainable(FactorModel &model)
{
  std::vector<ParameterRef> out;
  for (auto &p : model.parameters()) {
    if (p.trainable) { out.push_back(p); }
  }
  return out;
}

} // namespace

TrainResult train(RecoveryTask const &task, FactorModel model, TraceCallback on_row)
{
  task.validate(model.order());

  auto params = trainable(model);
  std::vector<Shape> shapes;
  for (auto const &p : params) { shapes.push_back(p.value->shape()); }
  AdamState adam(AdamOptions{.learning_rate = task.learning_rate}, shapes);

  TrainResult result{model, {}, {}, false, {}};
  auto log = [&](Index it, double loss, DenseTensor const &recon) {
    TraceRow row{it, loss, std::nullopt};
    if (task.ground_truth) { row.psnr = psnr(recon, *task.ground_truth, task.psnr_peak); }
    result.trace.rows.push_back(row);
    if (on_row) { on_row(row); }
  };

  for (Index it = 0; it <= task.iterations; ++it) {
    bool const last = it == task.iterations;
    ad::Tape tape;
    ModelGraph graph(tape, model, !last);
    auto const tl = task_loss(graph, task);
    double const loss = tl.loss.value()[0];

    if (!std::isfinite(loss)) {
      result.aborted = true;
      result.diagnostic = "loss became non-finite at iteration " + std::to_string(it);
      break;
    }
    // `model` still holds the parameters that produced this finite loss.
    result.model = model;
    result.reconstruction = tl.reconstruction.value();
    if (it % task.eval_every == 0 || last) { log(it, loss, result.reconstruction); }
    if (last) { break; }

    tape.backward(tl.loss);
    std::vector<DenseTensor> grads;
    grads.reserve(params.size());
    for (auto const &leaf : graph.leaves()) { grads.push_back(leaf.grad()); }
    try {
      adam.step(params, grads);
    } catch (NumericError const &e) {
      result.aborted = true;
      result.diagnostic = std::string(e.what()) + " at iteration " + std::to_string(it);
      break;
    }
  }
  return result;
}

} // namespace reptrfd
