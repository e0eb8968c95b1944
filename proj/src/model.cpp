#include "reptrfd/model.hpp"
#include "reptrfd/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <type_traits>

namespace reptrfd {

namespace {

DenseTensor uniform_tensor(Shape shape, double bound, std::mt19937_64 &rng)
{
  DenseTensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto &x : t.data()) { x = dist(rng); }
  return t;
}

ConstMatrixMap as_matrix(DenseTensor const &t) { return t.matrix(t.dim(0), t.size() / t.dim(0)); }

} // namespace

std::string to_string(Variant v) { return v == Variant::TRFD ? "trfd" : "reptrfd"; }

std::string to_string(BasisScheme s)
{
  switch (s) {
  case BasisScheme::Xavier: return "xavier";
  case BasisScheme::Kaiming: return "kaiming";
  case BasisScheme::Explicit: return "explicit";
  }
  return "unknown";
}

Index ModelConfig::latent_cols(Index k) const
{
  return variant == Variant::RepTRFD ? beta * rank_next(k) : rank_next(k);
}

std::vector<std::string> ModelConfig::violations() const
{
  std::vector<std::string> out;
  if (ranks.empty()) { out.emplace_back("ranks: at least one mode is required"); }
  for (std::size_t k = 0; k < ranks.size(); ++k) {
    if (ranks[k] < 1) { out.push_back("ranks[" + std::to_string(k) + "] must be >= 1"); }
  }
  if (!dims.empty() && dims.size() != ranks.size()) {
    out.push_back("dims has " + std::to_string(dims.size()) + " entries but ranks has " + std::to_string(ranks.size()));
  }
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] < 1) { out.push_back("dims[" + std::to_string(k) + "] must be >= 1"); }
  }
  if (layers.size() != ranks.size()) {
    out.push_back("layers has " + std::to_string(layers.size()) + " entries but the model has " +
                  std::to_string(ranks.size()) + " modes");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k] < 1) { out.push_back("layers[" + std::to_string(k) + "] must be >= 1"); }
  }
  if (beta < 1) { out.emplace_back("beta must be an integer >= 1"); }
  if (!(omega0 > 0.0) || !std::isfinite(omega0)) { out.emplace_back("omega0 must be a positive finite number"); }
  if (hidden < 1) { out.emplace_back("hidden width must be >= 1"); }
  if (basis_scheme == BasisScheme::Explicit && !(basis_scale > 0.0)) {
    out.emplace_back("basis_scale must be > 0 for the explicit basis scheme");
  }
  return out;
}

void ModelConfig::validate() const
{
  auto const v = violations();
  if (v.empty()) { return; }
  std::ostringstream os;
  os << "invalid model config: ";
  for (std::size_t i = 0; i < v.size(); ++i) { os << (i ? "; " : "") << v[i]; }
  throw ConfigError(os.str());
}

ModelConfig color_inpainting_config()
{
  ModelConfig c;
  c.ranks = {20, 20, 20};
  c.beta = 10;
  c.omega0 = 90.0;
  c.layers = {1, 1, 2};
  c.hidden = 256;
  return c;
}

ModelConfig denoising_config()
{
  ModelConfig c = color_inpainting_config();
  c.ranks = {16, 16, 16};
  c.beta = 5;
  c.omega0 = 120.0;
  return c;
}

ModelConfig superres_config() { return color_inpainting_config(); }

ModelConfig pointcloud_config()
{
  ModelConfig c;
  c.ranks = {20, 20, 20, 20};
  c.beta = 3;
  c.omega0 = 240.0;
  c.layers = {1, 1, 1, 1};
  c.hidden = 256;
  return c;
}

double basis_bound(Index r_next, Index R_next, BasisScheme scheme, double explicit_scale)
{
  if (r_next < 1 || R_next < 1) { throw RangeError("basis ranks must be positive"); }
  if (R_next % r_next != 0) {
    throw RangeError("expanded rank " + std::to_string(R_next) + " is not a multiple of " + std::to_string(r_next));
  }
  switch (scheme) {
  case BasisScheme::Xavier: return std::sqrt(6.0 / static_cast<double>(r_next + R_next));
  case BasisScheme::Kaiming: return std::sqrt(6.0 / static_cast<double>(R_next));
  case BasisScheme::Explicit:
    if (!(explicit_scale > 0.0)) { throw RangeError("explicit basis scale must be positive"); }
    return explicit_scale;
  }
  throw RangeError("unknown basis scheme");
}

FixedBasis init_basis(Index r_next, Index R_next, BasisScheme scheme, std::mt19937_64 &rng, double explicit_scale)
{
  double const a = basis_bound(r_next, R_next, scheme, explicit_scale);
  FixedBasis b;
  b.matrix = uniform_tensor({r_next, R_next}, a, rng);
  b.bound = a;
  return b;
}

DenseTensor embed(SharedEmbedding const &e, double v)
{
  DenseTensor z(e.w.shape());
  for (Index i = 0; i < z.size(); ++i) { z[i] = std::sin(e.omega0 * (e.w[i] * v + e.b[i])); }
  return z;
}

FactorModel FactorModel::init(ModelConfig const &config)
{
  config.validate();
  std::mt19937_64 rng(config.seed);
  Index const d = config.order();
  Index const h = config.hidden;

  std::vector<SharedEmbedding> embeddings;
  Index const n_emb = config.shared_embedding ? 1 : d;
  for (Index e = 0; e < n_emb; ++e) {
    SharedEmbedding emb;
    emb.omega0 = config.omega0;
    emb.w = uniform_tensor({h}, 1.0, rng);
    emb.b = uniform_tensor({h}, 1.0, rng);
    embeddings.push_back(std::move(emb));
  }

  std::vector<BranchNetwork> branches;
  for (Index k = 0; k < d; ++k) {
    BranchNetwork br;
    br.out_rows = config.ranks[static_cast<std::size_t>(k)];
    br.out_cols = config.latent_cols(k);
    Index const depth = config.layers[static_cast<std::size_t>(k)];
    for (Index l = 0; l < depth; ++l) {
      Index const in = h;
      Index const out = l + 1 == depth ? br.out_rows * br.out_cols : h;
      double bound = std::sqrt(6.0 / static_cast<double>(in));
      if (l == 0) { bound /= config.omega0; }
      DenseLayer layer;
      layer.weight = uniform_tensor({out, in}, bound, rng);
      layer.bias = uniform_tensor({out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
      br.layers.push_back(std::move(layer));
    }
    branches.push_back(std::move(br));
  }

  std::vector<FixedBasis> bases;
  if (config.variant == Variant::RepTRFD) {
    for (Index k = 0; k < d; ++k) {
      auto b = init_basis(config.rank_next(k), config.latent_cols(k), config.basis_scheme, rng, config.basis_scale);
      b.trainable = config.basis_trainable;
      bases.push_back(std::move(b));
    }
  }
  return assemble_model(config, std::move(embeddings), std::move(branches), std::move(bases));
}

FactorModel assemble_model(ModelConfig config, std::vector<SharedEmbedding> embeddings,
                           std::vector<BranchNetwork> branches, std::vector<FixedBasis> bases)
{
  config.validate();
  Index const d = config.order();
  Index const expected_emb = config.shared_embedding ? 1 : d;
  if (static_cast<Index>(embeddings.size()) != expected_emb) {
    throw ShapeError("expected " + std::to_string(expected_emb) + " embeddings, got " +
                     std::to_string(embeddings.size()));
  }
  for (auto const &e : embeddings) {
    if (e.w.order() != 1 || e.w.dim(0) != config.hidden || e.b.shape() != e.w.shape()) {
      throw ShapeError("embedding parameters must both have shape (" + std::to_string(config.hidden) + ")");
    }
    if (!(e.omega0 > 0.0)) { throw ShapeError("embedding omega0 must be positive"); }
  }
  if (static_cast<Index>(branches.size()) != d) { throw ShapeError("one branch network per mode is required"); }
  for (Index k = 0; k < d; ++k) {
    auto &br = branches[static_cast<std::size_t>(k)];
    Index const rows = config.ranks[static_cast<std::size_t>(k)];
    Index const cols = config.latent_cols(k);
    if (br.out_rows != rows || br.out_cols != cols) {
      throw ShapeError("branch " + std::to_string(k) + " output reshape does not match ranks");
    }
    if (static_cast<Index>(br.layers.size()) != config.layers[static_cast<std::size_t>(k)]) {
      throw ShapeError("branch " + std::to_string(k) + " layer count does not match config");
    }
    Index in = config.hidden;
    for (std::size_t l = 0; l < br.layers.size(); ++l) {
      auto const &layer = br.layers[l];
      Index const out = l + 1 == br.layers.size() ? rows * cols : config.hidden;
      if (layer.weight.shape() != Shape{out, in} || layer.bias.shape() != Shape{out}) {
        throw ShapeError("branch " + std::to_string(k) + " layer " + std::to_string(l) + " has shape " +
                         shape_string(layer.weight.shape()) + ", expected " + shape_string({out, in}));
      }
      in = out;
    }
  }
  if (config.variant == Variant::RepTRFD) {
    if (static_cast<Index>(bases.size()) != d) { throw ShapeError("RepTRFD needs one basis per mode"); }
    for (Index k = 0; k < d; ++k) {
      auto const &b = bases[static_cast<std::size_t>(k)].matrix;
      if (b.shape() != Shape{config.rank_next(k), config.latent_cols(k)}) {
        throw ShapeError("basis " + std::to_string(k) + " has shape " + shape_string(b.shape()));
      }
    }
  } else if (!bases.empty()) {
    throw ShapeError("TRFD models carry no basis");
  }
  FactorModel m;
  m.config_ = std::move(config);
  m.embeddings_ = std::move(embeddings);
  m.branches_ = std::move(branches);
  m.bases_ = std::move(bases);
  return m;
}

SharedEmbedding const &FactorModel::embedding(Index k) const
{
  return embeddings_[config_.shared_embedding ? 0 : static_cast<std::size_t>(k)];
}

SharedEmbedding &FactorModel::embedding(Index k)
{
  return embeddings_[config_.shared_embedding ? 0 : static_cast<std::size_t>(k)];
}

template <typename Self> auto FactorModel::collect(Self &self)
{
  using Ref = std::conditional_t<std::is_const_v<Self>, ConstParameterRef, ParameterRef>;
  std::vector<Ref> out;
  for (std::size_t e = 0; e < self.embeddings_.size(); ++e) {
    out.push_back({"embedding" + std::to_string(e) + ".w", &self.embeddings_[e].w, true});
    out.push_back({"embedding" + std::to_string(e) + ".b", &self.embeddings_[e].b, true});
  }
  for (std::size_t k = 0; k < self.branches_.size(); ++k) {
    for (std::size_t l = 0; l < self.branches_[k].layers.size(); ++l) {
      auto const prefix = "branch" + std::to_string(k) + ".layer" + std::to_string(l);
      out.push_back({prefix + ".weight", &self.branches_[k].layers[l].weight, true});
      out.push_back({prefix + ".bias", &self.branches_[k].layers[l].bias, true});
    }
  }
  for (std::size_t k = 0; k < self.bases_.size(); ++k) {
    out.push_back({"basis" + std::to_string(k), &self.bases_[k].matrix, self.bases_[k].trainable});
  }
  return out;
}

std::vector<ParameterRef> FactorModel::parameters() { return collect(*this); }

std::vector<ConstParameterRef> FactorModel::parameters() const { return collect(*this); }

Matrix FactorModel::latent_slice(Index k, double v) const
{
  if (k < 0 || k >= order()) { throw RangeError("mode " + std::to_string(k) + " out of range"); }
  auto const z = embed(embedding(k), v);
  Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd const>(z.data().data(), z.size());
  auto const &br = branch(k);
  for (std::size_t l = 0; l < br.layers.size(); ++l) {
    auto const &layer = br.layers[l];
    Eigen::VectorXd y = as_matrix(layer.weight) * x +
                        Eigen::Map<Eigen::VectorXd const>(layer.bias.data().data(), layer.bias.size());
    if (l + 1 < br.layers.size()) { y = y.array().sin(); }
    x = std::move(y);
  }
  return Eigen::Map<Matrix const>(x.data(), br.out_rows, br.out_cols);
}

Matrix FactorModel::factor_slice(Index k, double v) const
{
  Matrix latent = latent_slice(k, v);
  if (config_.variant == Variant::TRFD) { return latent; }
  return latent * as_matrix(basis(k).matrix).transpose();
}

TRCores FactorModel::build_cores(std::span<DenseTensor const> grids) const
{
  if (static_cast<Index>(grids.size()) != order()) {
    throw ShapeError("need " + std::to_string(order()) + " coordinate grids, got " + std::to_string(grids.size()));
  }
  ad::Tape tape;
  ModelGraph graph(tape, *this, false);
  std::vector<DenseTensor> cores;
  for (Index k = 0; k < order(); ++k) {
    auto const &g = grids[static_cast<std::size_t>(k)];
    if (g.order() != 1) { throw ShapeError("coordinate grid " + std::to_string(k) + " must be one-dimensional"); }
    cores.push_back(graph.core(k, g).value());
  }
  return TRCores(std::move(cores));
}

double FactorModel::eval_point(std::span<double const> coords) const
{
  if (static_cast<Index>(coords.size()) != order()) {
    throw ShapeError("expected " + std::to_string(order()) + " coordinates, got " + std::to_string(coords.size()));
  }
  Matrix acc = factor_slice(0, coords[0]);
  for (Index k = 1; k < order(); ++k) { acc = acc * factor_slice(k, coords[static_cast<std::size_t>(k)]); }
  return acc.trace();
}

DenseTensor FactorModel::eval_points(DenseTensor const &coords) const
{
  ad::Tape tape;
  ModelGraph graph(tape, *this, false);
  return graph.eval_points(coords).value();
}

DenseTensor normalized_grid(Index n)
{
  if (n < 1) { throw ShapeError("grid size must be positive"); }
  DenseTensor g({n});
  if (n == 1) { return g; }
  for (Index i = 0; i < n; ++i) { g[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1); }
  return g;
}

std::vector<DenseTensor> normalized_grids(Shape const &dims)
{
  std::vector<DenseTensor> out;
  for (auto n : dims) { out.push_back(normalized_grid(n)); }
  return out;
}

ModelGraph::ModelGraph(ad::Tape &tape, FactorModel const &model, bool differentiate)
  : tape_(&tape)
  , model_(&model)
{
  auto bind = [&](ConstParameterRef const &ref) {
    if (differentiate && ref.trainable) {
      auto v = tape.leaf(*ref.value, ref.name);
      leaves_.push_back(v);
      return v;
    }
    return tape.constant(*ref.value);
  };
  auto const refs = model.parameters();
  std::size_t i = 0;
  for (Index e = 0; e < model.embedding_count(); ++e) {
    emb_w_.push_back(bind(refs[i++]));
    emb_b_.push_back(bind(refs[i++]));
  }
  for (Index k = 0; k < model.order(); ++k) {
    weights_.emplace_back();
    biases_.emplace_back();
    for (std::size_t l = 0; l < model.branch(k).layers.size(); ++l) {
      weights_.back().push_back(bind(refs[i++]));
      biases_.back().push_back(bind(refs[i++]));
    }
  }
  for (; i < refs.size(); ++i) { bases_.push_back(bind(refs[i])); }
}

ad::Var ModelGraph::latent_slices(Index k, DenseTensor const &coords) const
{
  if (k < 0 || k >= model_->order()) { throw RangeError("mode " + std::to_string(k) + " out of range"); }
  Index const n = coords.size();
  auto const e = model_->config().shared_embedding ? 0 : static_cast<std::size_t>(k);
  Index const h = model_->config().hidden;
  auto v = tape_->constant(coords.reshaped({n, 1}));
  auto x = ad::matmul(v, ad::reshape(emb_w_[e], {1, h}));
  x = ad::sin(ad::scale(ad::add_bias(x, emb_b_[e]), model_->embedding(k).omega0));
  auto const ku = static_cast<std::size_t>(k);
  for (std::size_t l = 0; l < weights_[ku].size(); ++l) {
    x = ad::add_bias(ad::matmul(x, weights_[ku][l], true), biases_[ku][l]);
    if (l + 1 < weights_[ku].size()) { x = ad::sin(x); }
  }
  auto const &br = model_->branch(k);
  return ad::reshape(x, {n, br.out_rows, br.out_cols});
}

ad::Var ModelGraph::factor_slices(Index k, DenseTensor const &coords) const
{
  auto latent = latent_slices(k, coords);
  if (model_->config().variant == Variant::TRFD) { return latent; }
  return ad::mode_product(latent, bases_[static_cast<std::size_t>(k)], 2);
}

ad::Var ModelGraph::core(Index k, DenseTensor const &coords) const
{
  return ad::permute(factor_slices(k, coords), {1, 0, 2});
}

ad::Var ModelGraph::reconstruct(std::span<DenseTensor const> grids) const
{
  if (static_cast<Index>(grids.size()) != model_->order()) {
    throw ShapeError("need " + std::to_string(model_->order()) + " coordinate grids");
  }
  std::vector<ad::Var> cores;
  for (Index k = 0; k < model_->order(); ++k) { cores.push_back(core(k, grids[static_cast<std::size_t>(k)])); }
  return ad::tr_contract(cores);
}

ad::Var ModelGraph::eval_points(DenseTensor const &coords) const
{
  Index const d = model_->order();
  if (coords.order() != 2 || coords.dim(1) != d) {
    throw ShapeError("point coordinates must have shape (N, " + std::to_string(d) + "), got " +
                     shape_string(coords.shape()));
  }
  Index const n = coords.dim(0);
  std::vector<ad::Var> slices;
  for (Index k = 0; k < d; ++k) {
    DenseTensor column({n});
    for (Index i = 0; i < n; ++i) { column[i] = coords[i * d + k]; }
    slices.push_back(factor_slices(k, column));
  }
  return ad::trace_chain(slices);
}

double spectral_norm(Eigen::Ref<Matrix const> const &m, double rel_tol, int max_iter)
{
  if (m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0) { return 0.0; }
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(m.cols());
  for (Index i = 0; i < x.size(); ++i) { x(i) = normal(rng); }
  x.normalize();
  double sigma = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd y = m * x;
    double const next = y.norm();
    Eigen::VectorXd z = m.transpose() * y;
    double const zn = z.norm();
    if (zn == 0.0) { return next; }
    x = z / zn;
    if (it > 0 && std::abs(next - sigma) <= rel_tol * next) { return std::max(next, std::sqrt(zn)); }
    sigma = next;
  }
  throw NumericError("power iteration did not converge after " + std::to_string(max_iter) + " iterations");
}

LipschitzReport assemble_lipschitz(std::vector<double> eta, std::vector<Index> depth, std::vector<double> basis_norm,
                                   std::vector<double> slice_bound, double kappa)
{
  auto const d = eta.size();
  if (depth.size() != d || basis_norm.size() != d || slice_bound.size() != d) {
    throw ShapeError("Lipschitz factors must all have one entry per mode");
  }
  LipschitzReport r;
  double sq = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double others = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (j != k) { others *= slice_bound[j]; }
    }
    double const dk = std::pow(kappa * eta[k], static_cast<double>(depth[k])) * basis_norm[k] * others;
    r.delta_k.push_back(dk);
    sq += dk * dk;
  }
  r.delta = std::sqrt(sq);
  r.eta = std::move(eta);
  r.depth = std::move(depth);
  r.basis_norm = std::move(basis_norm);
  r.slice_bound = std::move(slice_bound);
  return r;
}

LipschitzReport lipschitz_bound(FactorModel const &model, double kappa, Index samples)
{
  if (samples < 2) { throw RangeError("Lipschitz bound needs at least two coordinate samples"); }
  Index const d = model.order();
  std::vector<double> eta, basis_norm, slice_bound;
  std::vector<Index> depth;
  auto const grid = normalized_grid(samples);
  double const half_spacing = 1.0 / static_cast<double>(samples - 1);
  for (Index k = 0; k < d; ++k) {
    auto const &emb = model.embedding(k);
    // The embedding layer's effective weight is omega0 * w.
    double e = emb.omega0 * spectral_norm(emb.w.matrix(emb.w.size(), 1));
    for (auto const &layer : model.branch(k).layers) { e = std::max(e, spectral_norm(as_matrix(layer.weight))); }
    eta.push_back(e);
    depth.push_back(1 + static_cast<Index>(model.branch(k).layers.size()));
    basis_norm.push_back(model.has_bases() ? spectral_norm(as_matrix(model.basis(k).matrix)) : 1.0);

    ad::Tape tape;
    ModelGraph graph(tape, model, false);
    auto const slices = graph.factor_slices(k, grid).value();
    Index const per = slices.size() / samples;
    double c = 0.0;
    for (Index i = 0; i < samples; ++i) {
      double s = 0.0;
      for (Index j = 0; j < per; ++j) { s += slices[i * per + j] * slices[i * per + j]; }
      c = std::max(c, std::sqrt(s));
    }
    double const slice_lipschitz = std::pow(kappa * e, static_cast<double>(depth.back())) * basis_norm.back();
    slice_bound.push_back(c + slice_lipschitz * half_spacing);
  }
  return assemble_lipschitz(std::move(eta), std::move(depth), std::move(basis_norm), std::move(slice_bound), kappa);
}

} // namespace reptrfd
