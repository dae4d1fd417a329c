#include <fstream>

#include "doctest.h"
#include "partex/pipeline.hpp"
#include "partex/synth.hpp"
#include "support/fixtures.hpp"

using namespace partex;
using namespace partex::pipeline;
using nlohmann::json;

namespace {

RunConfig tiny_config() {
  RunConfig c = RunConfig::desk();
  c.set("atlas.l", "16");
  c.set("tvae.k", "16");
  c.set("tvae.d", "8");
  c.set("tvae.channels", "8");
  c.set("tvae.iterations", "30");
  c.set("gvae.part_iterations", "40");
  c.set("gvae.shape_iterations", "40");
  c.set("prior.hidden", "8");
  c.set("prior.blocks", "1");
  c.set("prior.fc_hidden", "16");
  c.set("prior.top_iterations", "20");
  c.set("prior.bottom_iterations", "10");
  return c;
}

}  // namespace

TEST_CASE("config text round-trips and validates") {
  RunConfig c = tiny_config();
  c.set("seed", "7");
  c.set("prior.seed_conditioning", "false");
  RunConfig back = RunConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.tvae.patch_size == 16);
  CHECK(back.tvae.bottom_grid == 4);
  CHECK(back.tvae.top_grid == 2);
  CHECK(back.prior.k == 16);
  CHECK_FALSE(back.seed_conditioning);

  RunConfig p = RunConfig::parse("profile = paper\n# comment\nseed = 3  # trailing\n");
  CHECK(p.profile == "paper");
  CHECK(p.l == 256);
  CHECK(p.seed == 3);
  CHECK(p.prior.k == p.tvae.k);

  CHECK_THROWS_AS(RunConfig::parse("nonsense = 1"), Error);
  CHECK_THROWS_AS(RunConfig::parse("seed = abc"), Error);
  CHECK_THROWS_AS(RunConfig::parse("seed"), Error);
  CHECK_THROWS_AS(RunConfig::parse("profile = huge"), Error);
  CHECK_THROWS_AS(RunConfig::parse("atlas.l = 20"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse("category = boat"), Error);
  for (const auto& k : RunConfig::keys()) CHECK_NOTHROW(c.get(k));
}

TEST_CASE("dry run lists seven stages in order") {
  const std::string text = dry_run(RunConfig::desk());
  size_t at = 0;
  for (int n = 1; n <= 7; ++n) {
    const auto p = text.find(std::to_string(n) + ". ", at);
    REQUIRE(p != std::string::npos);
    at = p;
  }
  CHECK(stages().size() == 7);
  for (const auto& s : stages())
    for (int r : s.after) CHECK(r < s.number);
}

TEST_CASE("toy chairs encode color only in seat thickness") {
  auto shapes = synth::toy_chairs({8, 1, 2});
  REQUIRE(shapes.size() == 8);
  for (const auto& s : shapes) {
    CHECK(s.labels.size() == (s.armrests ? 8u : 6u));
    const auto& seat = s.parts[std::find(s.labels.begin(), s.labels.end(), "seat") - s.labels.begin()];
    const double t = seat.bounds().extent().y();
    CHECK(std::abs(t - (0.05 + 0.06 * s.color_class)) < 0.0041);
    CHECK(synth::classify_color(seat.vertex_colors[0]) == s.color_class);
  }
  CHECK(synth::classify_color(Vec3(0.8, 0.2, 0.2)) == 0);
  CHECK(synth::classify_color(Vec3(0.2, 0.3, 0.9)) == 2);
}

TEST_CASE("bake, train and apply on a tiny toy set") {
  const auto root = fixtures::temp_dir("pipeline_tiny");
  const auto shapes = synth::toy_chairs({8, 2, 2});
  const auto manifests = synth::write_toy_dataset(shapes, root / "toys");
  RunConfig cfg = tiny_config();
  for (size_t i = 0; i < manifests.size(); ++i) bake_shape(manifests[i], root / "data", shapes[i].id, cfg);

  const Dataset ds = Dataset::load(root / "data");
  CHECK(ds.shapes.size() == 8);
  CHECK(ds.l == 16);
  CHECK(fs::exists(root / "data/parts/seat/toy00/face5.png"));
  CHECK(ds.atlas("seat", "toy00").pixels.width == 64);
  // Mismatched bake settings are rejected.
  RunConfig other = cfg;
  other.set("bake.tau", "0.05");
  CHECK_THROWS_AS(bake_shape(manifests[0], root / "data", "again", other), Error);

  const fs::path run = root / "run";
  // Stage order is enforced with a message naming the missing stage.
  try {
    train(cfg, root / "data", run, {5});
    FAIL("expected missing-stage error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("stage 4") != std::string::npos);
  }
  CHECK_THROWS_AS(train(cfg, root / "data", run, {8}), Error);
  CHECK_THROWS_AS(Models::load(run), Error);

  train(cfg, root / "data", run, {1, 2, 3, 4, 5, 6, 7});
  for (const auto& s : stages()) CHECK(fs::exists(run / "checkpoints" / s.output));
  CHECK(fs::exists(run / "manifest.json"));
  CHECK(RunConfig::load(run / "config.txt").to_text() == cfg.to_text());

  const Models m = Models::load(run);
  CHECK(m.seed_label == "seat");
  CHECK(m.seed_conditioning);

  SUBCASE("texturing is seeded and follows the input order") {
    const auto out = cmd_texture(run, manifests[0], root / "tex", {2, 1.0, 11});
    REQUIRE(out.size() == 2);
    const LoadedShape back = load_shape(out[0]);
    CHECK(back.spec.parts == shapes[0].labels);
    CHECK(back.parts[0].texture);
    const auto again = cmd_texture(run, manifests[0], root / "tex2", {1, 1.0, 11});
    CHECK(read_png(out[0].parent_path() / "seat.png") == read_png(again[0].parent_path() / "seat.png"));

    const auto four = cmd_texture(run, manifests[1], root / "four", {4, 1.0, 5});
    std::vector<json> sets;
    for (const auto& f : four) sets.push_back(json::parse(std::ifstream(f.parent_path() / "codes.json")));
    for (size_t i = 0; i < sets.size(); ++i)
      for (size_t j = i + 1; j < sets.size(); ++j) CHECK(sets[i] != sets[j]);
    const auto g1 = cmd_texture(run, manifests[1], root / "g1", {1, 0.0, 1});
    const auto g2 = cmd_texture(run, manifests[1], root / "g2", {1, 0.0, 2});
    CHECK(read_png(g1[0].parent_path() / "back.png") == read_png(g2[0].parent_path() / "back.png"));

    std::vector<PartInput> no_seed = {{"back", std::vector<float>(m.cfg.gvae.part_latent, 0.0f)}};
    Rng rng(1);
    CHECK_THROWS_AS(texture_parts(m, no_seed, 1.0, rng), Error);
    no_seed.push_back({"wing", {}});
    CHECK_THROWS_AS(texture_parts(m, no_seed, 1.0, rng), Error);

    const auto report = cmd_eval(out[0], manifests[0], 2, 48);
    CHECK(report.contains("seam_consistency"));
    CHECK(report.contains("compatibility"));
    CHECK(report["multiview_ssim"].get<double>() <= 1.0);
    const auto imgs = cmd_render(out[0], root / "views", 2, 32);
    CHECK(imgs.size() == 2);
    CHECK(fs::exists(root / "views/view_01.png"));
  }

  SUBCASE("generation writes a loadable shape") {
    Rng rng(4);
    const Generated g = generate(m, 1.0, rng);
    CHECK(g.textures.labels == g.shape.spec.parts);
    const fs::path p = cmd_generate(run, root / "gen", 4, 1.0);
    CHECK(load_shape(p).parts.size() == g.shape.spec.parts.size());
    CHECK_THROWS_AS(cmd_generate_from_image(root / "x.png"), Error);
  }

  SUBCASE("interpolation endpoints reproduce the endpoint decodes") {
    auto endpoint = [&](int i) {
      const LoadedShape s = load_shape(manifests[i]);
      const EncodedShape e = encode_shape(m, s);
      std::vector<atlas::AtlasImage> at;
      for (const auto& label : e.labels) at.push_back(ds.atlas(label, shapes[i].id));
      return make_endpoint(m, e.labels, e.boxes, at);
    };
    const Endpoint a = endpoint(0), b = endpoint(1);
    const auto frames = interpolate(m, a, b, 4);
    REQUIRE(frames.size() == 4);
    CHECK(frames[0].t == 0.0);
    CHECK(frames[3].t == 1.0);
    for (const auto* end : {&a, &b}) {
      const Frame& f = end == &a ? frames[0] : frames[3];
      CHECK_FALSE(f.codes.empty());
      for (size_t r = 0; r < f.codes.size(); ++r) {
        const size_t k = std::find(end->labels.begin(), end->labels.end(), f.shape.spec.parts[r]) - end->labels.begin();
        REQUIRE(k < end->labels.size());
        CHECK(f.codes[r] == end->codes[k]);
        CHECK(f.atlases[r].pixels == tvae::decode_atlas(*m.tvae, end->codes[k], m.layout).pixels);
      }
    }
    const Endpoint armed = endpoint(4);  // shape 4 has armrests
    CHECK_THROWS_AS(interpolate(m, a, armed, 3), Error);
    CHECK_THROWS_AS(interpolate(m, a, b, 1), Error);
  }
}
