#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partex/atlas.hpp"
#include "partex/geom_vae.hpp"
#include "partex/prior.hpp"
#include "partex/render.hpp"
#include "partex/texture_vae.hpp"

namespace partex::pipeline {

namespace fs = std::filesystem;
using Log = std::function<void(const std::string&)>;

/// Every hyperparameter of a run. Text form is one `key = value` per line;
/// `#` starts a comment. A `profile` line selects the base values (desk or
/// paper) and the remaining lines override them.
struct RunConfig {
  std::string category = "chair";
  std::string profile = "desk";
  uint64_t seed = 0;
  int l = 64;
  int grid_n = 4;
  double tau = 0.03;

  tvae::TextureVAEConfig tvae = tvae::TextureVAEConfig::desk();
  int tvae_iterations = 1500;
  int tvae_batch = 8;
  double tvae_lr = 2e-3;

  gvae::GeomVAEConfig gvae = gvae::GeomVAEConfig::desk();
  int part_iterations = 1000;
  int shape_iterations = 1500;
  int vae_batch = 16;
  double vae_lr = 2e-3;

  prior::PriorConfig prior = prior::PriorConfig::desk();
  int top_iterations = 600;
  int bottom_iterations = 300;
  int prior_batch = 8;
  double prior_lr = 2e-3;
  bool seed_conditioning = true;

  double temperature = 1.0;

  static RunConfig desk();
  static RunConfig paper();
  /// Throws Error on an unknown profile.
  static RunConfig profile_defaults(const std::string& name);

  /// Throws Error on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string to_text() const;
  static RunConfig parse(const std::string& text, const std::string& default_profile = "desk");
  static RunConfig load(const fs::path& path);
  void save(const fs::path& path) const;

  /// Consistency of derived sizes; throws std::invalid_argument.
  void validate() const;
};

/// One baked shape of a dataset.
struct DatasetShape {
  std::string id;
  std::vector<std::string> labels;       // canonical slot order
  std::vector<geom::DeformedBox> boxes;  // fitted boxes, same order
  Aabb bounds() const;
};

/// Baked dataset directory:
///   dataset.json                         category, l, grid_n, tau, shape list
///   parts/<label>/<id>/face<k>.png       six l x l patches
///   parts/<label>/<id>/atlas.png         the 4l x 3l atlas
///   parts/<label>/<id>/bake.json         tau, l, grid_n and box displacements
struct Dataset {
  fs::path root;
  std::string category;
  int l = 0, grid_n = 0;
  double tau = 0;
  std::vector<DatasetShape> shapes;

  static Dataset load(const fs::path& root);
  fs::path part_dir(const std::string& label, const std::string& id) const;
  atlas::AtlasImage atlas(const std::string& label, const std::string& id) const;
};

/// Fits and bakes every part of a manifest into the dataset at `root`
/// (created when missing; l, grid_n and tau must match an existing one).
/// Unknown part labels for the category are an error.
DatasetShape bake_shape(const fs::path& manifest, const fs::path& root, const std::string& shape_id,
                        const RunConfig& cfg);

/// The seven training steps, in order.
struct StageInfo {
  int number;
  std::string name;
  std::vector<int> after;  // direct prerequisites
  std::string output;         // relative to <run>/checkpoints
};
const std::vector<StageInfo>& stages();
std::string dry_run(const RunConfig& cfg);

/// Runs the given stages (1..7) in increasing order. Each stage checks that
/// the outputs of all stages it transitively depends on exist, and throws
/// Error naming the missing stage otherwise. Writes <run>/config.txt and
/// updates <run>/manifest.json after each stage.
void train(const RunConfig& cfg, const fs::path& data_root, const fs::path& run_dir, std::vector<int> which,
           const Log& log = {});

/// Seed label of a category: its registered seed, otherwise the label whose
/// box center is most often nearest the shape center over the dataset.
std::string choose_seed_label(const Category& cat, const std::vector<DatasetShape>& shapes);

/// Loaded checkpoints of a finished run.
struct Models {
  RunConfig cfg;
  gvae::GeomModels geom;
  std::optional<tvae::TextureVAE> tvae;
  prior::PriorModel seed_top, part_top, bottom;
  std::string seed_label;
  bool seed_conditioning = true;
  std::vector<float> feature_mean, feature_std;  // seed feature standardization, empty = none
  atlas::AtlasLayout layout;

  static Models load(const fs::path& run_dir);
};

/// Geometry latent of one part to texture.
struct PartInput {
  std::string label;
  std::vector<float> z;
};

struct TexturedParts {
  std::vector<std::string> labels;  // input order
  std::vector<IndexMatrices> codes;
  std::vector<atlas::AtlasImage> atlases;
  std::vector<float> seed_feature;
};

/// Seed part first (top prior on z_p, bottom prior on the top grid), then the
/// other parts conditioned on z_p and the standardized seed feature. Throws
/// Error when a label is not a slot of the category or the seed part is missing.
TexturedParts texture_parts(const Models& m, const std::vector<PartInput>& parts, double temperature, Rng& rng);

/// Fits boxes to a shape manifest's parts and encodes them with the PartVAEs.
struct EncodedShape {
  std::vector<std::string> labels;
  std::vector<geom::DeformedBox> boxes;
  std::vector<GeomLatent> latents;
};
EncodedShape encode_shape(const Models& m, const LoadedShape& shape);

/// Writes one OBJ per part (the deformed box with its atlas as texture), the
/// atlases, the index matrices and a manifest.json readable by load_shape.
fs::path write_textured_shape(const fs::path& dir, const std::string& category, const std::vector<std::string>& labels,
                              const std::vector<geom::DeformedBox>& boxes, const std::vector<atlas::AtlasImage>& atlases,
                              const std::vector<IndexMatrices>& codes, const atlas::AtlasLayout& layout);

struct TextureOptions {
  int num_samples = 1;
  double temperature = 1.0;
  uint64_t seed = 0;
};
/// Textures a given shape num_samples times; returns the sample manifests.
std::vector<fs::path> cmd_texture(const fs::path& run_dir, const fs::path& shape_manifest, const fs::path& out_dir,
                                  const TextureOptions& opt);

/// Samples a shape from the SP-VAE and textures it. Draws whose structure
/// lacks the seed part are rejected (Error after 100 draws).
struct Generated {
  gvae::GeomModels::SampledShape shape;
  TexturedParts textures;
};
Generated generate(const Models& m, double temperature, Rng& rng);
fs::path cmd_generate(const fs::path& run_dir, const fs::path& out_dir, uint64_t seed, double temperature);
/// Image-guided generation needs an image-to-shape network and a perceptual
/// feature extractor, neither of which is part of this toolkit; always throws.
[[noreturn]] void cmd_generate_from_image(const fs::path& image);

struct Frame {
  double t = 0;
  gvae::GeomModels::SampledShape shape;
  std::vector<atlas::AtlasImage> atlases;  // same order as shape.spec.parts
  std::vector<IndexMatrices> codes;
};
/// Per-part encodings of one shape used as an interpolation endpoint.
struct Endpoint {
  std::vector<std::string> labels;
  std::vector<float> z;                                  // SP-VAE mean
  std::vector<ad::Tensor> z_e_top, z_e_bottom;           // [6, D, g, g] per part
  std::vector<IndexMatrices> codes;
};
Endpoint make_endpoint(const Models& m, const std::vector<std::string>& labels,
                       const std::vector<geom::DeformedBox>& boxes, const std::vector<atlas::AtlasImage>& atlases);
/// Lerps SP-VAE latents and continuous texture maps. t = 0 and t = 1 use the
/// endpoints' own latents and codes, so they reproduce the endpoint decodes
/// exactly; interior frames are re-quantized. Throws Error when the part
/// slots differ or steps < 2.
std::vector<Frame> interpolate(const Models& m, const Endpoint& a, const Endpoint& b, int steps);
std::vector<fs::path> cmd_interpolate(const fs::path& run_dir, const fs::path& shape_a, const fs::path& shape_b,
                                      int steps, const fs::path& out_dir);

/// Renders a manifest from the default rig; writes view_<k>.png and returns the images.
std::vector<Image> cmd_render(const fs::path& manifest, const fs::path& out_dir, int views = 12, int size = 256);

/// JSON report: seam_consistency and compatibility over the parts' atlases
/// (manifest "atlas" entries), and multiview_ssim when a reference is given.
nlohmann::json cmd_eval(const fs::path& manifest, const std::optional<fs::path>& reference, int views = 12,
                        int size = 256);

}  // namespace partex::pipeline
