#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "partex/autodiff/checkpoint.hpp"
#include "partex/autodiff/optim.hpp"
#include "partex/shape.hpp"

namespace partex::gvae {

struct GeomVAEConfig {
  int grid_n = 4;
  int part_latent = 16;
  int part_hidden = 64;
  int shape_latent = 32;
  int shape_hidden = 64;
  float kl_weight = 1e-3f;
  float warmup = 0.1f;  // fraction of iterations with a linear KL ramp

  static GeomVAEConfig desk();
  static GeomVAEConfig paper();
  nlohmann::json to_json() const;
  static GeomVAEConfig from_json(const nlohmann::json& j);
};

/// KL(N(mean, exp(logvar)) || N(0, I)) summed over latent dims, averaged over
/// rows. Inputs are [N, Z].
template <typename T>
ad::BasicTensor<T> kl_divergence(const ad::BasicTensor<T>& mean, const ad::BasicTensor<T>& logvar);

/// Fully connected VAE: 3 layers each way with leaky ReLU, the last encoder
/// layer emitting [mean | logvar].
class FcVAE {
 public:
  FcVAE() = default;
  FcVAE(int input, int hidden, int latent, uint64_t seed);

  int input_dim() const { return input_; }
  int latent_dim() const { return latent_; }
  ad::ParamStore& params() { return ps_; }
  const ad::ParamStore& params() const { return ps_; }

  /// x [N, input] -> (mean, logvar) each [N, latent].
  std::pair<ad::Tensor, ad::Tensor> encode(const ad::Tensor& x) const;
  ad::Tensor decode(const ad::Tensor& z) const;

  /// Single-vector helpers. With `rng` the sample is mean + exp(logvar/2) * eps,
  /// otherwise eps = 0.
  GeomLatent encode(std::span<const float> x, Rng* rng = nullptr) const;
  std::vector<float> decode(std::span<const float> z) const;

  void save(ad::Checkpoint& ck, const std::string& prefix) const;
  static FcVAE load(const ad::Checkpoint& ck, const std::string& prefix);

 private:
  int input_ = 0, hidden_ = 0, latent_ = 0;
  ad::ParamStore ps_;
  std::vector<ad::Linear> enc_, dec_;
};

struct VaeTrainOptions {
  int iterations = 1000;
  int batch = 16;
  double lr = 1e-3;
  float kl_weight = 1e-3f;
  float warmup = 0.1f;
  uint64_t seed = 0;
  int log_every = 0;
  std::function<void(const std::string&)> log;
};

struct VaeTrainReport {
  std::vector<double> loss, recon, kl;
};

/// Minimizes mean squared reconstruction + lambda * KL (lambda ramps linearly
/// over the warm-up fraction of iterations).
VaeTrainReport train_vae(FcVAE& vae, const std::vector<std::vector<float>>& data, const VaeTrainOptions& opt);

/// One part instance for training: its label and normalized geometry vector.
struct PartSample {
  std::string label;
  std::vector<float> geometry;  // GeometryVector.values
};

/// One shape for SP-VAE training.
struct ShapeSample {
  std::vector<PartSample> parts;
  StructureCode structure;
  Aabb bounds;
};

/// PartVAEs per label plus the shape-level SP-VAE.
class GeomModels {
 public:
  GeomModels() = default;
  explicit GeomModels(const Category& cat, const GeomVAEConfig& cfg = GeomVAEConfig::desk());

  const Category& category() const { return *cat_; }
  const GeomVAEConfig& config() const { return cfg_; }
  std::map<std::string, FcVAE> part_vaes;
  FcVAE spvae;
  bool has_spvae = false;
  Aabb mean_bounds;  // dataset mean shape box, used to realize sampled structure

  int geometry_dim() const;
  int shape_input_dim() const;

  GeomLatent partvae_encode(const std::string& label, std::span<const float> gv, Rng* rng = nullptr) const;
  std::vector<float> partvae_decode(const std::string& label, std::span<const float> z) const;

  /// Input of the SP-VAE: per-slot part latent means (zeros for absent
  /// slots) followed by the flattened structure code.
  std::vector<float> shape_input(const std::map<std::string, std::vector<float>>& part_latents,
                                 const StructureCode& structure) const;
  GeomLatent spvae_encode(const std::map<std::string, std::vector<float>>& part_latents,
                          const StructureCode& structure, Rng* rng = nullptr) const;
  struct ShapeDecode {
    std::map<std::string, std::vector<float>> part_latents;  // slots with flag >= 0.5
    StructureCode structure;                                 // flags thresholded to {0, 1}
  };
  ShapeDecode spvae_decode(std::span<const float> z) const;

  /// Samples z ~ N(0, I) from the SP-VAE and realizes present parts as boxes
  /// placed in their decoded (de-normalized) bounding boxes.
  struct SampledShape {
    ShapeSpec spec;
    std::vector<geom::DeformedBox> boxes;  // same order as spec.parts
    std::vector<float> z;
  };
  SampledShape sample_shape(Rng& rng) const;
  SampledShape realize(std::span<const float> z) const;

  void save(ad::Checkpoint& ck) const;
  static GeomModels load(const ad::Checkpoint& ck);

 private:
  const Category* cat_ = nullptr;
  GeomVAEConfig cfg_;
};

/// Stage 1: one PartVAE per label present in the data.
void train_partvaes(GeomModels& models, const std::vector<ShapeSample>& shapes, const VaeTrainOptions& opt);
/// Stage 2: SP-VAE on frozen PartVAE latent means; throws when a label present
/// in the data has no PartVAE.
VaeTrainReport train_spvae(GeomModels& models, const std::vector<ShapeSample>& shapes, const VaeTrainOptions& opt);

}  // namespace partex::gvae
