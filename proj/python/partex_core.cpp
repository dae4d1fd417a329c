// Python bindings: the pipeline commands plus image metrics on numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "partex/bake.hpp"
#include "partex/pipeline.hpp"
#include "partex/synth.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace partex;
namespace pl = partex::pipeline;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Image& img) {
  py::array_t<float> out({img.height, img.width, img.channels});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Image from_numpy(const FloatArray& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected an (H, W, C) float array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

std::vector<py::array_t<float>> to_numpy(const std::vector<Image>& imgs) {
  std::vector<py::array_t<float>> out;
  for (const auto& i : imgs) out.push_back(to_numpy(i));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Part-aware textured mesh toolkit";
  py::register_exception<Error>(m, "PartexError", PyExc_RuntimeError);

  py::class_<pl::RunConfig>(m, "RunConfig")
      .def(py::init(&pl::RunConfig::desk))
      .def_static("desk", &pl::RunConfig::desk)
      .def_static("paper", &pl::RunConfig::paper)
      .def_static("parse", &pl::RunConfig::parse, "text"_a, "default_profile"_a = "desk")
      .def_static("load", &pl::RunConfig::load)
      .def_static("keys", &pl::RunConfig::keys)
      .def("get", &pl::RunConfig::get)
      .def("set", &pl::RunConfig::set)
      .def("save", &pl::RunConfig::save)
      .def("validate", &pl::RunConfig::validate)
      .def("to_text", &pl::RunConfig::to_text)
      .def("__repr__", [](const pl::RunConfig& c) { return "<RunConfig profile=" + c.profile + ">"; });

  m.def("stages", [] {
    std::vector<py::dict> out;
    for (const auto& s : pl::stages())
      out.push_back(py::dict("number"_a = s.number, "name"_a = s.name, "after"_a = s.after, "output"_a = s.output));
    return out;
  });
  m.def("dry_run", &pl::dry_run, "config"_a);

  m.def(
      "write_toy_dataset",
      [](const std::filesystem::path& dir, int count, uint64_t seed) {
        return synth::write_toy_dataset(synth::toy_chairs({count, seed, 6}), dir);
      },
      "directory"_a, "count"_a = 20, "seed"_a = 0, "Writes toy color-coded chairs; returns the manifest paths.");

  m.def(
      "bake",
      [](const std::filesystem::path& manifest, const std::filesystem::path& root, const std::string& id,
         const pl::RunConfig& cfg) { return pl::bake_shape(manifest, root, id, cfg).labels; },
      "manifest"_a, "dataset"_a, "shape_id"_a, "config"_a = pl::RunConfig::desk(),
      "Fits and bakes one shape into a dataset; returns its part labels.");

  m.def(
      "train",
      [](const pl::RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& run,
         std::vector<int> stages, bool verbose) {
        pl::Log log;
        if (verbose) log = [](const std::string& s) { py::print(s); };
        pl::train(cfg, data, run, std::move(stages), log);
      },
      "config"_a, "dataset"_a, "run"_a, "stages"_a = std::vector<int>{1, 2, 3, 4, 5, 6, 7}, "verbose"_a = false);

  m.def(
      "texture",
      [](const std::filesystem::path& run, const std::filesystem::path& shape, const std::filesystem::path& out,
         int num_samples, double temperature, uint64_t seed) {
        return pl::cmd_texture(run, shape, out, {num_samples, temperature, seed});
      },
      "run"_a, "shape"_a, "out"_a, "num_samples"_a = 1, "temperature"_a = 1.0, "seed"_a = 0);
  m.def("generate", &pl::cmd_generate, "run"_a, "out"_a, "seed"_a = 0, "temperature"_a = 1.0);
  m.def("interpolate", &pl::cmd_interpolate, "run"_a, "shape_a"_a, "shape_b"_a, "steps"_a, "out"_a);

  m.def(
      "render",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out, int views, int size) {
        return to_numpy(pl::cmd_render(manifest, out, views, size));
      },
      "manifest"_a, "out"_a, "views"_a = 12, "size"_a = 256, "Renders rig views; returns (H, W, 3) arrays.");
  m.def(
      "eval_json",
      [](const std::filesystem::path& manifest, std::optional<std::filesystem::path> reference, int views, int size) {
        return pl::cmd_eval(manifest, reference, views, size).dump();
      },
      "manifest"_a, "reference"_a = py::none(), "views"_a = 12, "size"_a = 256);

  m.def("read_png", [](const std::filesystem::path& p) { return to_numpy(read_png(p)); });
  m.def("ssim", [](const FloatArray& a, const FloatArray& b) { return render::ssim(from_numpy(a), from_numpy(b)); },
        "a"_a, "b"_a, "SSIM of two (H, W, C) arrays in [0, 1].");
  m.def(
      "seam_consistency",
      [](const FloatArray& atlas, int grid_n) {
        atlas::AtlasImage img{static_cast<int>(atlas.shape(1)) / 4, from_numpy(atlas)};
        return render::seam_consistency(img, atlas::build_layout(img.l, grid_n));
      },
      "atlas"_a, "grid_n"_a = 4, "Mean absolute RGB difference across atlas seams of a (3l, 4l, 4) array.");
}
