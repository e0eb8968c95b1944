#pragma once

#include "reptrfd/autodiff.hpp"
#include "reptrfd/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace reptrfd {

enum class Variant { TRFD, RepTRFD };
enum class BasisScheme { Xavier, Kaiming, Explicit };

std::string to_string(Variant v);
std::string to_string(BasisScheme s);

/// Structural hyperparameters of a factor model.
struct ModelConfig {
  Shape dims;                     // n_k; only used to size grids for grid tasks
  std::vector<Index> ranks;       // r_k, ring-closed (r_{d+1} = r_1)
  Variant variant = Variant::RepTRFD;
  Index beta = 10;                // R_{k+1} = beta * r_{k+1}
  double omega0 = 90.0;
  std::vector<Index> layers;      // L_k >= 1 per mode
  Index hidden = 256;             // embedding width h, also branch hidden width
  BasisScheme basis_scheme = BasisScheme::Xavier;
  double basis_scale = 0.0;       // support bound a for BasisScheme::Explicit
  bool shared_embedding = true;
  bool basis_trainable = false;
  std::uint64_t seed = 0;

  Index order() const { return static_cast<Index>(ranks.size()); }
  Index rank_next(Index k) const { return ranks[static_cast<std::size_t>((k + 1) % order())]; }
  /// Column count of the latent slice of mode k: R_{k+1} or r_{k+1}.
  Index latent_cols(Index k) const;

  /// Every violated constraint, one per entry.
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;
};

/// Default hyperparameters per task family.
ModelConfig color_inpainting_config();
ModelConfig denoising_config();
ModelConfig superres_config();
ModelConfig pointcloud_config();

struct SharedEmbedding {
  DenseTensor w; // (h)
  DenseTensor b; // (h)
  double omega0 = 1.0;
};

struct DenseLayer {
  DenseTensor weight; // (out, in)
  DenseTensor bias;   // (out)
};

/// Per-mode MLP; sine after every layer except the last.
struct BranchNetwork {
  std::vector<DenseLayer> layers;
  Index out_rows = 0;
  Index out_cols = 0;
};

struct FixedBasis {
  DenseTensor matrix; // (r_{k+1}, R_{k+1})
  bool trainable = false;
  double bound = 0.0; // support bound a it was drawn with
};

/// Named view of one parameter array, in declaration order.
template <typename T> struct BasicParameterRef {
  std::string name;
  T *value = nullptr;
  bool trainable = true;
};
using ParameterRef = BasicParameterRef<DenseTensor>;
using ConstParameterRef = BasicParameterRef<DenseTensor const>;

/// Support bound a of U(-a, a) for the basis entries.
double basis_bound(Index r_next, Index R_next, BasisScheme scheme, double explicit_scale = 0.0);

/// Draws a (r_next x R_next) basis with i.i.d. U(-a, a) entries.
FixedBasis init_basis(Index r_next, Index R_next, BasisScheme scheme, std::mt19937_64 &rng,
                      double explicit_scale = 0.0);

/// z = sin(omega0 * (w v + b)).
DenseTensor embed(SharedEmbedding const &e, double v);

class FactorModel {
public:
  /// Deterministic initialization from config.seed.
  static FactorModel init(ModelConfig const &config);

  ModelConfig const &config() const { return config_; }
  Index order() const { return config_.order(); }

  SharedEmbedding const &embedding(Index k) const;
  SharedEmbedding &embedding(Index k);
  Index embedding_count() const { return static_cast<Index>(embeddings_.size()); }
  BranchNetwork const &branch(Index k) const { return branches_[static_cast<std::size_t>(k)]; }
  BranchNetwork &branch(Index k) { return branches_[static_cast<std::size_t>(k)]; }
  bool has_bases() const { return !bases_.empty(); }
  FixedBasis const &basis(Index k) const { return bases_.at(static_cast<std::size_t>(k)); }
  FixedBasis &basis(Index k) { return bases_.at(static_cast<std::size_t>(k)); }

  /// Every parameter array in declaration order: embeddings (w, b), then for
  /// each mode its layers (weight, bias), then the bases.
  std::vector<ParameterRef> parameters();
  std::vector<ConstParameterRef> parameters() const;

  /// C(k)[:, v, :] as (r_k x R_{k+1}) (or r_{k+1} columns for TRFD).
  Matrix latent_slice(Index k, double v) const;
  /// G(k)[:, v, :] as (r_k x r_{k+1}).
  Matrix factor_slice(Index k, double v) const;
  /// Cores sampled on the given per-mode coordinate grids.
  TRCores build_cores(std::span<DenseTensor const> grids) const;
  /// Reconstruction at an arbitrary coordinate (not necessarily on a grid).
  double eval_point(std::span<double const> coords) const;
  /// Batched eval_point: coords is (N, d); returns (N).
  DenseTensor eval_points(DenseTensor const &coords) const;

private:
  template <typename Self> static auto collect(Self &self);
  friend FactorModel assemble_model(ModelConfig, std::vector<SharedEmbedding>, std::vector<BranchNetwork>,
                                    std::vector<FixedBasis>);
  ModelConfig config_;
  std::vector<SharedEmbedding> embeddings_;
  std::vector<BranchNetwork> branches_;
  std::vector<FixedBasis> bases_;
};

/// Builds a model from explicit parts; validates shapes against the config.
FactorModel assemble_model(ModelConfig config, std::vector<SharedEmbedding> embeddings,
                           std::vector<BranchNetwork> branches, std::vector<FixedBasis> bases);

/// Evenly spaced coordinates in [-1, 1] (a single point maps to 0).
DenseTensor normalized_grid(Index n);
std::vector<DenseTensor> normalized_grids(Shape const &dims);

/// Model parameters bound to a tape. Trainable arrays become leaves when
/// `differentiate` is set, everything else is a constant.
class ModelGraph {
public:
  ModelGraph(ad::Tape &tape, FactorModel const &model, bool differentiate);

  ad::Tape &tape() const { return *tape_; }
  FactorModel const &model() const { return *model_; }
  /// Leaves in FactorModel::parameters() order (only trainable entries).
  std::vector<ad::Var> const &leaves() const { return leaves_; }

  /// (N, r_k, cols) latent slices for N coordinates.
  ad::Var latent_slices(Index k, DenseTensor const &coords) const;
  /// (N, r_k, r_{k+1}) factor slices.
  ad::Var factor_slices(Index k, DenseTensor const &coords) const;
  /// Core of shape (r_k, N, r_{k+1}).
  ad::Var core(Index k, DenseTensor const &coords) const;
  /// Full grid reconstruction.
  ad::Var reconstruct(std::span<DenseTensor const> grids) const;
  /// Reconstruction at N scattered points, coords (N, d).
  ad::Var eval_points(DenseTensor const &coords) const;

private:
  ad::Tape *tape_;
  FactorModel const *model_;
  std::vector<ad::Var> emb_w_, emb_b_;
  std::vector<std::vector<ad::Var>> weights_, biases_;
  std::vector<ad::Var> bases_;
  std::vector<ad::Var> leaves_;
};

/// Global Lipschitz bound of the coordinate-to-value map.
struct LipschitzReport {
  double delta = 0.0;
  std::vector<double> delta_k;
  std::vector<double> eta;          // max spectral norm of mode k's weights
  std::vector<Index> depth;         // weight matrices on the path v_k -> slice
  std::vector<double> basis_norm;   // ||B_k||_2 (1 for TRFD)
  std::vector<double> slice_bound;  // C_k
};

/// Largest singular value by power iteration on M^T M.
double spectral_norm(Eigen::Ref<Matrix const> const &m, double rel_tol = 1e-8, int max_iter = 10000);

/// delta_k = (kappa eta_k)^{depth_k} ||B_k|| prod_{j != k} C_j, delta = ||delta_k||_2.
LipschitzReport assemble_lipschitz(std::vector<double> eta, std::vector<Index> depth, std::vector<double> basis_norm,
                                   std::vector<double> slice_bound, double kappa = 1.0);

/// Bound for a concrete model. C_k is the largest factor-slice Frobenius norm
/// over `samples` evenly spaced points of [-1, 1], raised by the per-mode
/// Lipschitz constant times half the sample spacing so it bounds the supremum.
LipschitzReport lipschitz_bound(FactorModel const &model, double kappa = 1.0, Index samples = 1001);

} // namespace reptrfd
