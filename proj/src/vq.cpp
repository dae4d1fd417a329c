#include "partex/vq.hpp"

#include <cmath>
#include <random>

namespace partex::vq {

Codebook init_codebook(int k, int d, Rng& rng) {
  if (k < 2 || d < 1) throw std::invalid_argument("init_codebook: need K >= 2 and D >= 1");
  Codebook cb;
  cb.k = k;
  cb.d = d;
  std::uniform_real_distribution<double> u(-1.0 / k, 1.0 / k);
  cb.entries.resize(static_cast<size_t>(k) * d);
  for (auto& e : cb.entries) e = static_cast<float>(u(rng));
  cb.ema_counts.assign(k, 1.0f);
  cb.ema_sums = cb.entries;
  return cb;
}

int32_t nearest(const float* v, const Codebook& cb) {
  int32_t best = 0;
  double best_d = INFINITY;
  for (int i = 0; i < cb.k; ++i) {
    const float* e = cb.entry(i);
    double dist = 0;
    for (int j = 0; j < cb.d; ++j) {
      const double t = static_cast<double>(v[j]) - e[j];
      dist += t * t;
    }
    if (dist < best_d) {
      best_d = dist;
      best = i;
    }
  }
  return best;
}

std::vector<int32_t> nearest_all(std::span<const float> vectors, const Codebook& cb) {
  if (vectors.size() % cb.d != 0) throw ad::ShapeError("quantize: data length is not a multiple of D");
  std::vector<int32_t> out(vectors.size() / cb.d);
  for (size_t i = 0; i < out.size(); ++i) out[i] = nearest(vectors.data() + i * cb.d, cb);
  return out;
}

std::vector<float> lookup(std::span<const int32_t> indices, const Codebook& cb) {
  std::vector<float> out(indices.size() * cb.d);
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= cb.k) throw Error("codebook index out of range: " + std::to_string(indices[i]));
    std::copy_n(cb.entry(indices[i]), cb.d, out.data() + i * cb.d);
  }
  return out;
}

QuantizedMap quantize(std::span<const float> z_e, int h, int w, const Codebook& cb) {
  if (z_e.size() != static_cast<size_t>(h) * w * cb.d) {
    throw ad::ShapeError("quantize: expected " + std::to_string(h * w * cb.d) + " values, got " +
                         std::to_string(z_e.size()));
  }
  QuantizedMap q;
  q.h = h;
  q.w = w;
  q.d = cb.d;
  q.indices = nearest_all(z_e, cb);
  q.z_q = lookup(q.indices, cb);
  return q;
}

void ema_update(Codebook& cb, std::span<const float> z_e, std::span<const int32_t> indices, double gamma) {
  if (gamma < 0) gamma = cb.decay;
  if (z_e.size() != indices.size() * cb.d) throw ad::ShapeError("ema_update: vectors and indices disagree");
  std::vector<double> n(cb.k, 0.0), s(static_cast<size_t>(cb.k) * cb.d, 0.0);
  for (size_t i = 0; i < indices.size(); ++i) {
    const int32_t c = indices[i];
    if (c < 0 || c >= cb.k) throw Error("ema_update: index out of range");
    n[c] += 1.0;
    for (int j = 0; j < cb.d; ++j) s[c * cb.d + j] += z_e[i * cb.d + j];
  }
  for (int c = 0; c < cb.k; ++c) {
    cb.ema_counts[c] = static_cast<float>(gamma * cb.ema_counts[c] + (1 - gamma) * n[c]);
    const double denom = std::max(static_cast<double>(cb.ema_counts[c]), cb.eps);
    for (int j = 0; j < cb.d; ++j) {
      const size_t o = static_cast<size_t>(c) * cb.d + j;
      cb.ema_sums[o] = static_cast<float>(gamma * cb.ema_sums[o] + (1 - gamma) * s[o]);
      cb.entries[o] = static_cast<float>(cb.ema_sums[o] / denom);
    }
  }
}

int restart_dead(Codebook& cb, std::span<const float> z_e, double min_count, Rng& rng) {
  if (z_e.empty() || z_e.size() % cb.d != 0) throw ad::ShapeError("restart_dead: bad vector buffer");
  const size_t n = z_e.size() / cb.d;
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  int restarted = 0;
  for (int c = 0; c < cb.k; ++c) {
    if (cb.ema_counts[c] >= min_count) continue;
    const float* v = z_e.data() + pick(rng) * cb.d;
    for (int j = 0; j < cb.d; ++j) {
      const size_t o = static_cast<size_t>(c) * cb.d + j;
      cb.entries[o] = v[j];
      cb.ema_sums[o] = static_cast<float>(v[j] * min_count);
    }
    cb.ema_counts[c] = static_cast<float>(min_count);
    ++restarted;
  }
  return restarted;
}

ad::Tensor embedding_loss(const ad::Tensor& z_e, const ad::Tensor& z_q, float beta, Reduction reduction) {
  using namespace ad;
  Tensor codebook_term = sub(stop_gradient(z_e), z_q);
  Tensor commit = sub(stop_gradient(z_q), z_e);
  Tensor total = add(sum(mul(codebook_term, codebook_term)), scale(sum(mul(commit, commit)), beta));
  if (reduction == Reduction::kMean) total = scale(total, 1.0f / static_cast<float>(z_e.numel()));
  return total;
}

double perplexity(std::span<const int32_t> indices, int k) {
  if (indices.empty()) return 0.0;
  std::vector<double> hist(k, 0.0);
  for (int32_t i : indices) hist.at(i) += 1.0;
  double h = 0;
  for (double c : hist) {
    if (c > 0) {
      const double p = c / indices.size();
      h -= p * std::log(p);
    }
  }
  return std::exp(h);
}

void save_codebook(ad::Checkpoint& ck, const std::string& name, const Codebook& cb) {
  ck.put(name, {cb.k, cb.d}, cb.entries);
  ck.put(name + ".ema_counts", {cb.k}, cb.ema_counts);
  ck.put(name + ".ema_sums", {cb.k, cb.d}, cb.ema_sums);
}

Codebook load_codebook(const ad::Checkpoint& ck, const std::string& name) {
  const auto& e = ck.at(name);
  if (e.shape.size() != 2) throw Error("codebook '" + name + "' must be 2-D");
  Codebook cb;
  cb.k = static_cast<int>(e.shape[0]);
  cb.d = static_cast<int>(e.shape[1]);
  cb.entries = e.data;
  cb.ema_counts = ck.at(name + ".ema_counts").data;
  cb.ema_sums = ck.at(name + ".ema_sums").data;
  return cb;
}

}  // namespace partex::vq
