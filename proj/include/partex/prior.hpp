#pragma once

#include <functional>
#include <string>
#include <vector>

#include "partex/autodiff/checkpoint.hpp"
#include "partex/autodiff/optim.hpp"
#include "partex/shape.hpp"
#include "partex/texture_vae.hpp"

namespace partex::prior {

struct PriorConfig {
  int k = 128;
  int hidden = 32;       // channels of the masked-conv stack
  int blocks = 4;        // gated blocks after the type-A input layer
  int cond_channels = 8;
  int fc_hidden = 64;    // width of the condition fusion FCs

  static PriorConfig desk();
  static PriorConfig paper();
  nlohmann::json to_json() const;
  static PriorConfig from_json(const nlohmann::json& j);
};

enum class Level { kTop, kBottom };

/// Gated masked-conv autoregressive model over an H x W index grid in raster
/// order. The top level is conditioned on a raw vector through 3 FC layers;
/// the bottom level on the top index grid, embedded, mixed by a residual 3x3
/// conv pair and nearest-upsampled.
class PriorModel {
 public:
  PriorModel() = default;
  /// `cond_dim` is the raw condition length (top) or ignored (bottom, whose
  /// condition grid is (height/2) x (width/2)).
  PriorModel(Level level, const PriorConfig& cfg, int height, int width, int cond_dim, uint64_t seed);

  Level level() const { return level_; }
  const PriorConfig& config() const { return cfg_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int cond_dim() const { return cond_dim_; }
  ad::ParamStore& params() { return ps_; }
  const ad::ParamStore& params() const { return ps_; }

  /// Fused spatial condition [N, C_cond, H, W]. `cond` holds N raw vectors
  /// (top) or N top index grids as floats (bottom).
  ad::Tensor embed_condition(std::span<const float> cond, int n) const;
  /// Teacher-forced logits [N*H*W, K] in raster order.
  ad::Tensor logits(std::span<const int32_t> indices, std::span<const float> cond, int n) const;
  /// Mean cross-entropy of the raster factorization.
  ad::Tensor loss(std::span<const int32_t> indices, std::span<const float> cond, int n) const;

  /// Ancestral sampling in raster order with logits / temperature; a
  /// temperature <= 0 decodes greedily. Each position is computed once per
  /// layer from already-sampled positions. `logits_out`, when given, receives
  /// the H*W*K logits that were sampled from.
  std::vector<int32_t> sample(std::span<const float> cond, double temperature, Rng& rng,
                              std::vector<float>* logits_out = nullptr) const;

  void save(ad::Checkpoint& ck, const std::string& prefix) const;
  static PriorModel load(const ad::Checkpoint& ck, const std::string& prefix);

 private:
  ad::Tensor trunk(const ad::Tensor& emb, const ad::Tensor& cond) const;

  Level level_ = Level::kTop;
  PriorConfig cfg_;
  int h_ = 0, w_ = 0, cond_dim_ = 0;
  uint64_t seed_ = 0;
  ad::ParamStore ps_;
  ad::Tensor embed_;                  // [K, F]
  ad::Tensor cond_embed_;             // [K, C_cond], bottom only
  std::vector<ad::Conv2d> cond_spatial_;  // bottom only, 3x3 at top resolution
  std::vector<ad::Linear> fc_;        // top only
  ad::MaskedConv2d input_;            // type A, 3x3
  std::vector<ad::MaskedConv2d> conv_a_, conv_g_;
  std::vector<ad::Conv2d> cond_a_, cond_g_, out_;
  ad::Conv2d head1_, head2_;
};

/// One training grid with its condition (raw vector, or top indices).
struct PriorSample {
  std::vector<int32_t> indices;
  std::vector<float> cond;
};

struct PriorTrainOptions {
  int iterations = 1000;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 0;
  /// Stop once the moving-average loss (50 iterations) drops below this (0 disables).
  double stop_loss = 0.0;
  int log_every = 0;
  std::function<void(const std::string&)> log;
};

struct PriorTrainReport {
  std::vector<double> loss;
};

/// Teacher-forced cross-entropy training. Throws on indices outside [0, K).
PriorTrainReport train_prior(PriorModel& model, const std::vector<PriorSample>& data, const PriorTrainOptions& opt);

/// Mean of the quantized top-level feature map over all positions of the six
/// patches: a D-vector summarizing a texture.
std::vector<float> seed_feature(const tvae::TextureVAE& vae, const IndexMatrices& im);
std::vector<float> seed_feature(const tvae::TextureVAE& vae, const atlas::AtlasImage& img,
                                const atlas::AtlasLayout& layout);

/// Raw condition of a part: z_p, followed by the seed feature for non-seed parts.
std::vector<float> raw_condition(std::span<const float> z_p, std::span<const float> seed_feature = {});

}  // namespace partex::prior
