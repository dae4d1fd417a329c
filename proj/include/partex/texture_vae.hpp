#pragma once

#include <functional>
#include <string>
#include <vector>

#include "partex/atlas.hpp"
#include "partex/autodiff/checkpoint.hpp"
#include "partex/autodiff/optim.hpp"
#include "partex/shape.hpp"
#include "partex/vq.hpp"

namespace partex::tvae {

struct TextureVAEConfig {
  int patch_size = 64;
  int bottom_grid = 16;
  int top_grid = 8;
  int k = 128;
  int d = 32;
  int channels = 32;
  float beta = 0.25f;
  float alpha = 1.0f;
  float seam_weight = 4.0f;
  int seam_every = 2;
  float restart_below = 0.3f;  // EMA count under which a codebook entry is restarted (0 disables)

  static TextureVAEConfig desk();
  static TextureVAEConfig paper();
  /// Throws std::invalid_argument unless bottom = patch/4 and top = patch/8.
  void validate() const;
  nlohmann::json to_json() const;
  static TextureVAEConfig from_json(const nlohmann::json& j);
};

/// Result of the two-level encoder on a batch of N patches. Feature maps are
/// [N, D, g, g]; index vectors hold N*g*g entries, patch-major then raster.
struct Encoded {
  ad::Tensor z_e_top, z_q_top;
  ad::Tensor z_e_bottom, z_q_bottom;
  std::vector<int32_t> top_indices, bottom_indices;
  /// Continuous channels-last copies used for the EMA update.
  std::vector<float> top_vectors, bottom_vectors;
};

class TextureVAE {
 public:
  TextureVAE(const TextureVAEConfig& cfg, uint64_t seed);

  const TextureVAEConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return ps_; }
  const ad::ParamStore& params() const { return ps_; }
  vq::Codebook top_codebook, bottom_codebook;
  bool trained = false;  // set by train_texturevae, persisted in checkpoints

  /// x is [N, 4, P, P] in [0, 1]. Quantized maps carry the straight-through
  /// gradient back to the encoder.
  Encoded encode(const ad::Tensor& x) const;
  /// Quantizes [N, D, g, g] continuous maps against a codebook.
  ad::Tensor quantize_map(const ad::Tensor& z_e, const vq::Codebook& cb, std::vector<int32_t>* indices,
                          std::vector<float>* vectors) const;
  /// Bottom continuous map from a (possibly interpolated) top quantization.
  ad::Tensor encode_bottom(const ad::Tensor& x, const ad::Tensor& z_q_top) const;
  ad::Tensor encode_top(const ad::Tensor& x) const;
  /// Returns [N, 4, P, P] in (0, 1).
  ad::Tensor decode(const ad::Tensor& z_q_top, const ad::Tensor& z_q_bottom) const;
  /// Decodes index vectors of n patches.
  ad::Tensor decode_indices(std::span<const int32_t> top, std::span<const int32_t> bottom, int n) const;

  void save(ad::Checkpoint& ck) const;
  static TextureVAE load(const ad::Checkpoint& ck);

 private:
  ad::Tensor res_block(const std::string& name, const ad::Tensor& x) const;
  ad::Tensor bottom_features(const ad::Tensor& x) const;

  TextureVAEConfig cfg_;
  ad::ParamStore ps_;
  std::map<std::string, ad::Conv2d> conv_;
  std::map<std::string, ad::ConvTranspose2d> convt_;
};

/// [N, 4, P, P] tensor from RGBA patches (all the same size).
ad::Tensor patches_to_tensor(const std::vector<Image>& patches);
std::vector<Image> tensor_to_patches(const ad::Tensor& t);

/// Pair (a, b) of flat indices into a [6, 4, l, l] tensor for every seam
/// texel pair and RGBA channel.
struct SeamGather {
  std::vector<int64_t> a, b;
};
SeamGather seam_gather(const atlas::AtlasLayout& layout, int64_t patch_offset = 0);

/// Mean squared RGBA difference across seam texel pairs of a [6,4,l,l]
/// reconstruction (differentiable), or of an assembled atlas.
ad::Tensor seam_loss(const ad::Tensor& recon, const atlas::AtlasLayout& layout);
double seam_loss(const atlas::AtlasImage& atlas, const atlas::AtlasLayout& layout);

/// Split -> encode -> quantize over the 6 faces, concatenated in face order.
IndexMatrices encode_atlas(const TextureVAE& vae, const atlas::AtlasImage& img, const atlas::AtlasLayout& layout);
atlas::AtlasImage decode_atlas(const TextureVAE& vae, const IndexMatrices& im, const atlas::AtlasLayout& layout);
/// Reconstruction through quantization of one atlas.
atlas::AtlasImage reconstruct_atlas(const TextureVAE& vae, const atlas::AtlasImage& img,
                                    const atlas::AtlasLayout& layout);

/// Training patches plus the full atlases they came from (6 patch indices in
/// face order), used for the seam term.
struct PatchDataset {
  std::vector<Image> patches;
  std::vector<std::array<int, 6>> atlases;

  void add_atlas(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout);
  /// Loads every `parts/<label>/<shape_id>/face<k>.png` under root.
  static PatchDataset load(const std::filesystem::path& root);
};

struct TrainOptions {
  int iterations = 2000;
  int batch = 8;
  double lr = 2e-3;
  uint64_t seed = 0;
  bool seam = true;
  /// Stop once the moving-average L1 drops below this (0 disables).
  double stop_l1 = 0.0;
  int log_every = 0;
  std::function<void(const std::string&)> log;
};

struct TrainStep {
  int iteration = 0;
  double l1 = 0, embedding = 0, seam = -1;  // seam < 0 when not evaluated
  double perplexity_top = 0, perplexity_bottom = 0;
};

struct TrainReport {
  std::vector<TrainStep> steps;
  double final_l1 = 0;  // moving average over the last 50 iterations
};

TrainReport train_texturevae(TextureVAE& vae, const PatchDataset& data, const TrainOptions& opt);

}  // namespace partex::tvae
