#pragma once

#include <functional>
#include <vector>

#include "partex/atlas.hpp"
#include "partex/bvh.hpp"
#include "partex/geom.hpp"

namespace partex::render {

struct Camera {
  Vec3 eye = Vec3(0, 0, 3);
  Vec3 target = Vec3::Zero();
  Vec3 up = Vec3::UnitY();
  double fov_deg = 40.0;  // vertical
  int width = 256;
  int height = 256;

  /// Throws std::invalid_argument on eye == target, up parallel to the view
  /// direction, FOV outside (0, 180) or an empty image.
  void validate() const;
  /// Unit direction through the center of pixel (x, y); y grows downward.
  Vec3 ray_dir(double x, double y) const;
};

struct RenderSettings {
  Vec3 background = Vec3(1, 1, 1);
  double alpha_threshold = 0.5;
  Vec3 light_dir = Vec3(1, 1, 1).normalized();
  double ambient = 0.2;
  int threads = 0;  // row workers; 0 = hardware concurrency, capped at 16
};

/// Deformed template box textured by an atlas of the given layout.
struct TexturedPart {
  geom::DeformedBox box;
  atlas::AtlasImage atlas;
};

/// Azimuths 0, 30, ..., 330 degrees at 20 degrees elevation, radius 2.5x the
/// box diagonal around its center, FOV 40, `size` x `size` pixels. Throws
/// Error on an empty or zero-diagonal box.
std::vector<Camera> default_viewpoints(const Aabb& bounds, int size = 256);

/// Immutable triangle scene. Each part contributes triangles plus a color
/// lookup returning RGBA at a face's barycentric point.
class Scene {
 public:
  using Lookup = std::function<Rgba(int face, const Vec3& bary)>;

  /// Atlas lookup (nearest texel, clamped to the triangle's face rectangle).
  /// Throws Error when the atlas is missing or does not match the layout.
  void add(const TexturedPart& part, const atlas::AtlasLayout& layout);
  /// Source mesh lookup through PartMesh::color_at.
  void add(const geom::PartMesh& mesh);
  /// Builds the BVH; no parts can be added afterwards.
  void build();
  bool built() const { return built_; }

  bool empty() const { return faces_.empty(); }
  Aabb bounds() const;
  const geom::TriangleBvh& bvh() const { return bvh_; }

  /// RGBA at a global face index.
  Rgba lookup(int face, const Vec3& bary) const;
  struct Hit {
    geom::RayHit ray;
    Rgba color;
    int lookups = 0;  // intersections visited, including the accepted one
  };
  /// First hit with alpha >= threshold along the ray.
  std::optional<Hit> trace(const Vec3& origin, const Vec3& dir, double alpha_threshold) const;

 private:
  struct Part {
    int first_face = 0;
    Lookup lookup;
  };
  std::vector<Vec3> vertices_;
  std::vector<geom::Triangle> faces_;
  std::vector<int> face_part_;
  std::vector<Part> parts_;
  geom::TriangleBvh bvh_;
  bool built_ = false;
};

/// Built scene of textured parts sharing one layout.
Scene make_scene(const std::vector<TexturedPart>& parts, const atlas::AtlasLayout& layout);

/// RGB image (3 channels). Per pixel the ray visits intersections in depth
/// order, skipping hits whose alpha is below the threshold; the first opaque
/// hit is shaded with two-sided Lambert plus ambient. Deterministic.
/// Throws Error when the scene was not built.
Image render(const Scene& scene, const Camera& cam, const RenderSettings& settings = {});

/// SSIM with an 11x11 Gaussian window (sigma 1.5), k1 0.01, k2 0.03, range 1,
/// over valid window positions, averaged over channels then positions.
/// Throws Error on size or channel mismatch or images smaller than the window.
double ssim(const Image& a, const Image& b);

/// Mean SSIM of the two scenes rendered from each camera.
double multiview_ssim(const Scene& a, const Scene& b, const std::vector<Camera>& cams,
                      const RenderSettings& settings = {});

/// Mean absolute RGB difference over all seam texel pairs of an atlas.
double seam_consistency(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout);

/// Mean RGB over used, opaque texels (alpha >= 0.5); nullopt when none.
std::optional<Vec3> mean_color(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout);

/// Mean pairwise L2 distance between per-part mean colors; parts without
/// opaque texels are skipped, fewer than two parts score 0.
double compatibility_score(const std::vector<atlas::AtlasImage>& parts, const atlas::AtlasLayout& layout);

}  // namespace partex::render
