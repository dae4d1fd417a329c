// Command-line front end for the toolkit.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "partex/pipeline.hpp"
#include "partex/synth.hpp"

using namespace partex;
using namespace partex::pipeline;

namespace {

struct ConfigFlags {
  std::string profile = "desk";
  std::string file;
  std::vector<std::string> overrides;

  void add_to(CLI::App* app) {
    app->add_option("--profile", profile, "Base hyperparameters: desk or paper")->capture_default_str();
    app->add_option("--config", file, "key = value config file applied over the profile");
    app->add_option("--set", overrides, "key=value override, repeatable");
  }

  RunConfig resolve() const {
    std::string text;
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw Error("config not found: " + file);
      std::stringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    }
    for (const auto& o : overrides) {
      if (o.find('=') == std::string::npos) throw Error("--set expects key=value, got '" + o + "'");
      text += "\n" + o;
    }
    return RunConfig::parse(text, profile);
  }
};

// "1-7", "3", "1,2,5" or "4-".
std::vector<int> parse_stages(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto dash = tok.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoi(tok));
      } else {
        const int a = dash == 0 ? 1 : std::stoi(tok.substr(0, dash));
        const int b = dash + 1 == tok.size() ? 7 : std::stoi(tok.substr(dash + 1));
        for (int i = a; i <= b; ++i) out.push_back(i);
      }
    } catch (const std::logic_error&) {
      throw Error("bad --stages value '" + s + "'");
    }
  }
  return out;
}

void print_paths(const std::vector<fs::path>& ps) {
  for (const auto& p : ps) std::cout << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-aware textured mesh generation toolkit"};
  app.require_subcommand(1);
  const Log log = [](const std::string& s) { std::cerr << s << '\n'; };

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write the toy color-coded chair set");
  std::string synth_out;
  synth::ToyOptions toy;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--count", toy.count, "Number of shapes")->capture_default_str();
  synth_cmd->add_option("--seed", toy.seed, "Jitter seed")->capture_default_str();

  // bake
  auto* bake_cmd = app.add_subcommand("bake", "Fit boxes and bake part textures into a dataset");
  std::vector<std::string> bake_in, bake_ids;
  std::string bake_out;
  ConfigFlags bake_cfg;
  bake_cmd->add_option("manifests", bake_in, "Shape manifests")->required();
  bake_cmd->add_option("--out", bake_out, "Dataset directory")->required();
  bake_cmd->add_option("--id", bake_ids, "Shape ids (default: manifest directory names)");
  bake_cfg.add_to(bake_cmd);

  // train
  auto* train_cmd = app.add_subcommand("train", "Run training stages 1-7");
  std::string train_data, train_run, train_stages = "1-7";
  bool dry = false;
  ConfigFlags train_cfg;
  train_cmd->add_option("--data", train_data, "Baked dataset directory");
  train_cmd->add_option("--run", train_run, "Run directory");
  train_cmd->add_option("--stages", train_stages, "Stages to run, e.g. 1-7, 3, 5-7")->capture_default_str();
  train_cmd->add_flag("--dry-run", dry, "Print the stage list and exit");
  train_cfg.add_to(train_cmd);

  // texture
  auto* tex_cmd = app.add_subcommand("texture", "Texture a given shape");
  std::string tex_run, tex_shape, tex_out;
  TextureOptions tex_opt;
  tex_cmd->add_option("--run", tex_run, "Trained run directory")->required();
  tex_cmd->add_option("--shape", tex_shape, "Shape manifest")->required();
  tex_cmd->add_option("--out", tex_out, "Output directory")->required();
  tex_cmd->add_option("--num-samples", tex_opt.num_samples, "Independent draws")->capture_default_str();
  tex_cmd->add_option("--temperature", tex_opt.temperature, "Sampling temperature (0 = greedy)")->capture_default_str();
  tex_cmd->add_option("--seed", tex_opt.seed, "Sampling seed")->capture_default_str();

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Sample a textured shape from scratch");
  std::string gen_run, gen_out, gen_image;
  uint64_t gen_seed = 0;
  double gen_temp = 1.0;
  gen_cmd->add_option("--run", gen_run, "Trained run directory");
  gen_cmd->add_option("--out", gen_out, "Output directory");
  gen_cmd->add_option("--seed", gen_seed, "Sampling seed")->capture_default_str();
  gen_cmd->add_option("--temperature", gen_temp, "Sampling temperature")->capture_default_str();
  gen_cmd->add_option("--image", gen_image, "Image-guided generation (not available)");

  // interpolate
  auto* interp_cmd = app.add_subcommand("interpolate", "Interpolate geometry and texture between two shapes");
  std::string ip_run, ip_a, ip_b, ip_out;
  int ip_steps = 5;
  interp_cmd->add_option("--run", ip_run, "Trained run directory")->required();
  interp_cmd->add_option("--from", ip_a, "First shape manifest")->required();
  interp_cmd->add_option("--to", ip_b, "Second shape manifest")->required();
  interp_cmd->add_option("--steps", ip_steps, "Frames including both endpoints")->capture_default_str();
  interp_cmd->add_option("--out", ip_out, "Output directory")->required();

  // render
  auto* render_cmd = app.add_subcommand("render", "Render a shape manifest from the default camera rig");
  std::string r_manifest, r_out;
  int r_views = 12, r_size = 256;
  render_cmd->add_option("manifest", r_manifest, "Shape manifest")->required();
  render_cmd->add_option("--out", r_out, "Output directory")->required();
  render_cmd->add_option("--views", r_views, "Number of rig views (1-12)")->capture_default_str();
  render_cmd->add_option("--size", r_size, "Image size in pixels")->capture_default_str();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Print SSIM, seam and compatibility metrics as JSON");
  std::string e_manifest, e_ref;
  int e_views = 12, e_size = 256;
  eval_cmd->add_option("manifest", e_manifest, "Manifest with per-part atlases")->required();
  eval_cmd->add_option("--reference", e_ref, "Reference manifest for multi-view SSIM");
  eval_cmd->add_option("--views", e_views, "Number of rig views (1-12)")->capture_default_str();
  eval_cmd->add_option("--size", e_size, "Image size in pixels")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      print_paths(synth::write_toy_dataset(synth::toy_chairs(toy), synth_out));
    } else if (*bake_cmd) {
      if (!bake_ids.empty() && bake_ids.size() != bake_in.size()) throw Error("bake: need one --id per manifest");
      const RunConfig cfg = bake_cfg.resolve();
      for (size_t i = 0; i < bake_in.size(); ++i) {
        const fs::path m = bake_in[i];
        const std::string id = bake_ids.empty() ? fs::absolute(m).parent_path().filename().string() : bake_ids[i];
        const auto s = bake_shape(m, bake_out, id, cfg);
        std::cout << id << ": " << s.labels.size() << " parts\n";
      }
    } else if (*train_cmd) {
      const RunConfig cfg = train_cfg.resolve();
      if (dry) {
        std::cout << dry_run(cfg);
        return 0;
      }
      if (train_data.empty() || train_run.empty()) throw Error("train: --data and --run are required");
      train(cfg, train_data, train_run, parse_stages(train_stages), log);
    } else if (*tex_cmd) {
      print_paths(cmd_texture(tex_run, tex_shape, tex_out, tex_opt));
    } else if (*gen_cmd) {
      if (!gen_image.empty()) cmd_generate_from_image(gen_image);
      if (gen_run.empty() || gen_out.empty()) throw Error("generate: --run and --out are required");
      std::cout << cmd_generate(gen_run, gen_out, gen_seed, gen_temp).string() << '\n';
    } else if (*interp_cmd) {
      print_paths(cmd_interpolate(ip_run, ip_a, ip_b, ip_steps, ip_out));
    } else if (*render_cmd) {
      cmd_render(r_manifest, r_out, r_views, r_size);
    } else if (*eval_cmd) {
      std::optional<fs::path> ref;
      if (!e_ref.empty()) ref = e_ref;
      std::cout << cmd_eval(e_manifest, ref, e_views, e_size).dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
