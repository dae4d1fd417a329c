#pragma once

#include <span>
#include <string>
#include <vector>

#include "partex/autodiff/checkpoint.hpp"
#include "partex/autodiff/ops.hpp"

namespace partex::vq {

/// K x D dictionary learned by exponential moving averages.
struct Codebook {
  int k = 0;
  int d = 0;
  std::vector<float> entries;     // K x D
  std::vector<float> ema_counts;  // K
  std::vector<float> ema_sums;    // K x D
  double decay = 0.99;
  double eps = 1e-5;

  const float* entry(int i) const { return entries.data() + static_cast<size_t>(i) * d; }
};

/// Entries i.i.d. uniform in [-1/K, 1/K]; counts 1; sums equal to entries.
Codebook init_codebook(int k, int d, Rng& rng);

/// Quantized vectors (n x D, row-major) and their code indices.
struct QuantizedMap {
  int h = 0, w = 0, d = 0;
  std::vector<float> z_q;
  std::vector<int32_t> indices;
};

/// Index of the nearest entry by squared Euclidean distance; ties go to the
/// smallest index.
int32_t nearest(const float* v, const Codebook& cb);
std::vector<int32_t> nearest_all(std::span<const float> vectors, const Codebook& cb);

/// z_e is an H x W x D map (row-major, channels last).
QuantizedMap quantize(std::span<const float> z_e, int h, int w, const Codebook& cb);

/// Codebook rows for `indices`, n x D.
std::vector<float> lookup(std::span<const int32_t> indices, const Codebook& cb);

/// counts <- g*counts + (1-g)*n_k; sums <- g*sums + (1-g)*sum of assigned
/// vectors; entries <- sums / max(counts, eps). `gamma` < 0 uses cb.decay.
void ema_update(Codebook& cb, std::span<const float> z_e, std::span<const int32_t> indices, double gamma = -1.0);

/// Dead-entry restart: every entry whose EMA count is below `min_count` is
/// moved onto a randomly chosen row of `z_e` (n x D), with its count reset to
/// `min_count`. Returns the number of restarted entries.
int restart_dead(Codebook& cb, std::span<const float> z_e, double min_count, Rng& rng);

enum class Reduction { kSum, kMean };

/// ||sg[z_e] - z_q||^2 + beta * ||sg[z_q] - z_e||^2. With an EMA codebook z_q
/// carries no gradient, so only the commitment term trains the encoder.
ad::Tensor embedding_loss(const ad::Tensor& z_e, const ad::Tensor& z_q, float beta = 0.25f,
                          Reduction reduction = Reduction::kSum);

/// exp(entropy of the index histogram).
double perplexity(std::span<const int32_t> indices, int k);

/// Stored as `<name>`, `<name>.ema_counts`, `<name>.ema_sums`.
void save_codebook(ad::Checkpoint& ck, const std::string& name, const Codebook& cb);
Codebook load_codebook(const ad::Checkpoint& ck, const std::string& name);

}  // namespace partex::vq
