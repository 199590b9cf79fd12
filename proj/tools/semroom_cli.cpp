#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semroom/pipeline.hpp"

namespace {

using namespace semroom;

// Shared options on every subcommand.
struct Common {
  std::string store_dir;
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;  // key=value
  int threads = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--store", c.store_dir, "artifact directory (or SEMROOM_STORE)");
  sub->add_option("--config", c.config_path, "key=value config file");
  sub->add_option("--preset", c.preset, "desk-scale or paper-scale");
  sub->add_option("--set", c.overrides, "config override key=value (repeatable)");
  sub->add_option("--threads", c.threads, "worker threads");
  sub->add_option("--seed", c.seed, "base RNG seed")->each([&](const std::string&) {
    c.seed_set = true;
  });
}

PipelineConfig resolve_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.preset.empty()) cfg = make_preset(c.preset);
  if (!c.config_path.empty()) {
    PipelineConfig file_cfg = load_config(c.config_path);
    if (!c.preset.empty())
      throw PipelineError(1, "use either --preset or --config, not both");
    cfg = file_cfg;
  }
  for (const std::string& kv : c.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw PipelineError(1, "--set expects key=value, got " + kv);
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.threads > 0) cfg.threads = c.threads;
  if (c.seed_set) cfg.seed = c.seed;
  return cfg;
}

ArtifactStore resolve_store(const Common& c) {
  std::string dir = c.store_dir;
  if (dir.empty()) {
    const char* env = std::getenv("SEMROOM_STORE");
    if (env) dir = env;
  }
  if (dir.empty()) throw PipelineError(1, "no artifact store: pass --store or set SEMROOM_STORE");
  return ArtifactStore(dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"room-scene generation pipeline"};
  app.require_subcommand(1);

  Common common;
  std::string layout_path;
  std::uint64_t sample_seed = 0;
  bool resume = false;

  auto* gen = app.add_subcommand("gen-data", "generate scenes and layout maps");
  auto* fit = app.add_subcommand("fit", "fit tri-planes and the shared decoder");
  auto* tvae = app.add_subcommand("train-vae", "train the tri-plane VAE");
  auto* tdiff = app.add_subcommand("train-diff", "train the latent diffusion model");
  auto* sample = app.add_subcommand("sample", "sample a scene for a layout map");
  auto* mesh = app.add_subcommand("mesh", "mesh fitted tri-planes");
  auto* eval = app.add_subcommand("eval", "evaluate exported meshes");
  auto* ablate = app.add_subcommand("ablate", "run the fitting ablation table");

  for (CLI::App* sub : {gen, fit, tvae, tdiff, sample, mesh, eval, ablate}) add_common(sub, common);
  tvae->add_flag("--resume", resume, "resume from the latest checkpoint");
  tdiff->add_flag("--resume", resume, "resume from the latest checkpoint");
  sample->add_option("--layout", layout_path, "layout map file")->required();
  sample->add_option("--sample-seed", sample_seed, "seed for this sample");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    PipelineConfig cfg = resolve_config(common);
    ArtifactStore store = resolve_store(common);
    std::ostream& log = std::cout;
    if (gen->parsed()) cmd_gen_data(cfg, store, log);
    if (fit->parsed()) cmd_fit(cfg, store, log);
    if (tvae->parsed()) cmd_train_vae(cfg, store, log, resume);
    if (tdiff->parsed()) cmd_train_diff(cfg, store, log, resume);
    if (sample->parsed()) cmd_sample(cfg, store, layout_path, sample_seed, log);
    if (mesh->parsed()) cmd_mesh(cfg, store, log);
    if (eval->parsed()) cmd_eval(cfg, store, log);
    if (ablate->parsed()) cmd_ablate(cfg, store, log);
  } catch (const PipelineError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
