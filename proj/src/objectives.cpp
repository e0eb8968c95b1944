#include "reptrfd/objectives.hpp"
#include "reptrfd/errors.hpp"

#include <sstream>

namespace reptrfd {

namespace {

double eval(ad::Var (*fn)(ad::Var), DenseTensor const &x)
{
  ad::Tape tape;
  return fn(tape.constant(x)).value()[0];
}

} // namespace

void validate_mask(DenseTensor const &mask)
{
  for (Index i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) {
      throw RangeError("mask entry " + std::to_string(i) + " is " + std::to_string(mask[i]) + ", expected 0 or 1");
    }
  }
}

ad::Var masked_mse(ad::Var x, DenseTensor const &obs, DenseTensor const &mask)
{
  if (x.shape() != obs.shape() || mask.shape() != obs.shape()) {
    throw ShapeError("masked_mse: shapes " + shape_string(x.shape()) + ", " + shape_string(obs.shape()) + ", " +
                     shape_string(mask.shape()) + " must match");
  }
  validate_mask(mask);
  auto &t = *x.tape();
  auto residual = ad::mul(t.constant(mask), ad::sub(x, t.constant(obs)));
  return ad::sum(ad::square(residual));
}

ad::Var squared_error(ad::Var x, DenseTensor const &target)
{
  if (x.shape() != target.shape()) {
    throw ShapeError("squared_error: " + shape_string(x.shape()) + " vs " + shape_string(target.shape()));
  }
  return ad::sum(ad::square(ad::sub(x, x.tape()->constant(target))));
}

ad::Var tv(ad::Var x)
{
  if (x.value().order() < 2) { throw ShapeError("TV needs at least two modes, got " + shape_string(x.shape())); }
  Shape const s = x.shape();
  auto *tape = x.tape();
  // A mode of size 1 has no differences.
  ad::Var total = tape->constant(DenseTensor::scalar(0.0));
  for (Index axis = 0; axis < 2; ++axis) {
    if (s[static_cast<std::size_t>(axis)] < 2) { continue; }
    total = ad::add(total, ad::sum(ad::abs(ad::diff(x, axis))));
  }
  return total;
}

ad::Var sstv(ad::Var x)
{
  if (x.value().order() < 3) { throw ShapeError("SSTV needs at least three modes, got " + shape_string(x.shape())); }
  Shape const s = x.shape();
  auto *tape = x.tape();
  ad::Var total = tape->constant(DenseTensor::scalar(0.0));
  if (s[2] < 2) { return total; }
  auto spectral = ad::diff(x, 2);
  for (Index axis = 0; axis < 2; ++axis) {
    if (s[static_cast<std::size_t>(axis)] < 2) { continue; }
    total = ad::add(total, ad::sum(ad::abs(ad::diff(spectral, axis))));
  }
  return total;
}

double masked_mse(DenseTensor const &x, DenseTensor const &obs, DenseTensor const &mask)
{
  ad::Tape tape;
  return masked_mse(tape.constant(x), obs, mask).value()[0];
}

double tv(DenseTensor const &x) { return eval(&tv, x); }

double sstv(DenseTensor const &x) { return eval(&sstv, x); }

DenseTensor downsample(DenseTensor const &x, Index s)
{
  ad::Tape tape;
  return ad::avg_pool(tape.constant(x), s).value();
}

std::string to_string(TaskKind kind)
{
  switch (kind) {
  case TaskKind::Inpaint: return "inpaint";
  case TaskKind::Denoise: return "denoise";
  case TaskKind::SuperRes: return "superres";
  case TaskKind::PointCloud: return "pointcloud";
  }
  return "unknown";
}

Index default_iterations(TaskKind kind)
{
  switch (kind) {
  case TaskKind::Inpaint:
  case TaskKind::Denoise: return 3000;
  case TaskKind::SuperRes:
  case TaskKind::PointCloud: return 5000;
  }
  return 3000;
}

Shape RecoveryTask::reconstruction_shape() const
{
  Shape s;
  for (auto const &g : grids) { s.push_back(g.size()); }
  return s;
}

std::vector<std::string> RecoveryTask::violations(Index model_order) const
{
  std::vector<std::string> out;
  if (iterations < 0) { out.emplace_back("iterations must be >= 0"); }
  if (eval_every < 1) { out.emplace_back("eval_every must be >= 1"); }
  if (!(learning_rate >= 0.0)) { out.emplace_back("learning rate must be >= 0"); }
  if (reg.gamma1 < 0.0 || reg.gamma2 < 0.0) { out.emplace_back("regularization weights must be >= 0"); }
  if (mask.has_value() != (kind == TaskKind::Inpaint)) {
    out.emplace_back(kind == TaskKind::Inpaint ? "inpainting requires a mask" : "only inpainting takes a mask");
  }
  if (kind != TaskKind::SuperRes && scale != 1) { out.emplace_back("a scale factor only applies to super-resolution"); }

  if (kind == TaskKind::PointCloud) {
    if (model_order != 4) { out.push_back("point-cloud models take 4 coordinates, model has " + std::to_string(model_order)); }
    if (points.size() < 1) { out.emplace_back("point set is empty"); }
    if (points.coords.order() != 2 || points.coords.dim(1) != 4 || points.coords.dim(0) != points.size()) {
      out.emplace_back("point coordinates must have shape (N, 4)");
    }
    if (reg.gamma1 != 0.0 || reg.gamma2 != 0.0) { out.emplace_back("point-cloud recovery takes no regularizer"); }
    return out;
  }

  if (static_cast<Index>(grids.size()) != model_order) {
    out.push_back("need " + std::to_string(model_order) + " coordinate grids, got " + std::to_string(grids.size()));
    return out;
  }
  Index const d = model_order;
  if (observation.order() != d) {
    out.push_back("observation " + shape_string(observation.shape()) + " does not have order " + std::to_string(d));
    return out;
  }
  Shape expected = reconstruction_shape();
  if (kind == TaskKind::SuperRes) {
    if (scale < 1) { out.emplace_back("scale factor must be >= 1"); }
    if (d < 2) { out.emplace_back("super-resolution needs at least two modes"); }
    if (reg.gamma2 != 0.0) { out.emplace_back("super-resolution takes no SSTV term (gamma2 must be 0)"); }
    if (scale >= 1 && d >= 2) {
      if (expected[0] % scale != 0 || expected[1] % scale != 0) {
        out.push_back("reconstruction " + shape_string(expected) + " not divisible by scale " + std::to_string(scale));
      }
      expected[0] /= scale;
      expected[1] /= scale;
    }
  }
  if (observation.shape() != expected) {
    out.push_back("observation shape " + shape_string(observation.shape()) + " does not match expected " +
                  shape_string(expected));
  }
  if (mask && mask->shape() != observation.shape()) {
    out.push_back("mask shape " + shape_string(mask->shape()) + " does not match observation " +
                  shape_string(observation.shape()));
  }
  if (reg.gamma1 > 0.0 && d < 2) { out.emplace_back("TV requested on a tensor with fewer than two modes"); }
  if (reg.gamma2 > 0.0 && d < 3) {
    out.push_back("SSTV requested on d=" + std::to_string(d) + " (needs a third, spectral mode)");
  }
  if (ground_truth && ground_truth->shape() != reconstruction_shape()) {
    out.push_back("ground truth shape " + shape_string(ground_truth->shape()) + " does not match reconstruction " +
                  shape_string(reconstruction_shape()));
  }
  return out;
}

void RecoveryTask::validate(Index model_order) const
{
  auto const v = violations(model_order);
  if (v.empty()) { return; }
  std::ostringstream os;
  os << "invalid " << to_string(kind) << " task: ";
  for (std::size_t i = 0; i < v.size(); ++i) { os << (i ? "; " : "") << v[i]; }
  throw ConfigError(os.str());
}

TaskLoss task_loss(ModelGraph const &graph, RecoveryTask const &task)
{
  task.validate(graph.model().order());
  if (task.kind == TaskKind::PointCloud) {
    auto pred = graph.eval_points(task.points.coords);
    return {squared_error(pred, task.points.values), pred};
  }
  auto x = graph.reconstruct(task.grids);
  ad::Var loss;
  switch (task.kind) {
  case TaskKind::Inpaint: loss = masked_mse(x, task.observation, *task.mask); break;
  case TaskKind::Denoise: loss = squared_error(x, task.observation); break;
  case TaskKind::SuperRes: loss = squared_error(ad::avg_pool(x, task.scale), task.observation); break;
  case TaskKind::PointCloud: break;
  }
  if (task.reg.gamma1 > 0.0) { loss = ad::add(loss, ad::scale(tv(x), task.reg.gamma1)); }
  if (task.reg.gamma2 > 0.0) { loss = ad::add(loss, ad::scale(sstv(x), task.reg.gamma2)); }
  return {loss, x};
}

} // namespace reptrfd
