// glta: three-stage graph-language token alignment pipeline.
//
//   glta pretrain     -- stage 1, graph embeddings via LightGCN + BPR
//   glta align-items  -- stage 2, item-text alignment
//   glta align-users  -- stage 3, user-item alignment
//   glta gen-profiles -- profile/prediction text generation (offline or HTTP)
//   glta evaluate     -- ranking metrics for a stage-3 checkpoint
//   glta ablate       -- 5 variants x 3 inference modes on one dataset
//
// Every config key is settable from a --section.key flag or a key=value file
// passed with --config; flags win.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "glta/commands.hpp"
#include "glta/config.hpp"

namespace {

std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  glta::RunConfig cfg;
  try {
    const std::string config_path = find_config_arg(argc, argv);
    if (!config_path.empty()) cfg = glta::RunConfig::from_file(config_path);
  } catch (const glta::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"graph-language token alignment pipeline"};
  app.require_subcommand(1);
  std::string config_path_opt;
  app.add_option("--config", config_path_opt, "key=value config file");
  glta::RunConfig::for_each_field(cfg, [&](const std::string& section, const std::string& key,
                                           auto& ref) {
    app.add_option("--" + section + "." + key, ref)->group("config (" + section + ")");
  });
  app.add_flag_callback(
      "--force", [&] { cfg.force = true; }, "overwrite existing checkpoints");
  app.add_flag_callback(
      "--resume", [&] { cfg.resume = true; }, "continue training from an existing checkpoint");
  app.add_flag_callback(
      "--no-item-align", [&] { cfg.no_item_align = true; },
      "skip item-text alignment (w/o IA ablation)");
  app.add_flag_callback(
      "--all-modes", [&] { cfg.eval_mode = "all"; },
      "evaluate firstk, fl, ar and the dot-product baseline");

  auto* cmd_pre = app.add_subcommand("pretrain", "stage 1: graph pretraining");
  auto* cmd_items = app.add_subcommand("align-items", "stage 2: item-text alignment");
  auto* cmd_users = app.add_subcommand("align-users", "stage 3: user-item alignment");
  auto* cmd_gen = app.add_subcommand("gen-profiles", "generate profile/prediction texts");
  auto* cmd_eval = app.add_subcommand("evaluate", "metrics for a stage-3 checkpoint");
  auto* cmd_abl = app.add_subcommand("ablate", "ablation table across variants and modes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_pre->parsed()) {
      const auto path = glta::cmd_pretrain(cfg);
      std::cerr << "stage-1 checkpoint: " << path.string() << "\n";
    } else if (cmd_items->parsed()) {
      const auto path = glta::cmd_align_items(cfg);
      std::cerr << "stage-2 checkpoint: " << path.string() << "\n";
    } else if (cmd_users->parsed()) {
      const auto path = glta::cmd_align_users(cfg);
      std::cerr << "stage-3 checkpoint: " << path.string() << "\n";
    } else if (cmd_gen->parsed()) {
      const int64_t n = glta::cmd_gen_profiles(cfg);
      std::cerr << "generated texts for " << n << " users -> " << cfg.cache_path() << "\n";
    } else if (cmd_eval->parsed()) {
      std::string json;
      glta::cmd_evaluate(cfg, &json);
      std::cout << json << "\n";
    } else if (cmd_abl->parsed()) {
      const glta::AblateTable table = glta::cmd_ablate(cfg);
      std::cout << table.to_text();
      std::cerr << "ablation table: " << cfg.out_dir << "/ablation.json\n";
    }
  } catch (const glta::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
