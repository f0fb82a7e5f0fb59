// kfwc: config-driven experiment runner for the two-stage bi-modal
// classification pipeline. Thin shell over the libkfwc C API.

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "kfwc/kfwc.h"

namespace {

int finish(int status) {
  if (status != KFWC_OK) std::fprintf(stderr, "error: %s\n", kfwc_last_error());
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kfwc - knowledge-driven fine-grained wet-AMD classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kfwc_version()));

  std::string config, out, branch, ckpt, ckpt_f, ckpt_o, ids;
  long long seed = -1;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* cmd, bool config_required = true) {
    auto* c = cmd->add_option("--config", config, "run config JSON file");
    if (config_required) c->required();
    cmd->add_option("--out", out, "output directory (overrides config out_dir)");
    cmd->add_option("--seed", seed, "seed override");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic bi-modal dataset");
  add_common(gen);

  auto* pre = app.add_subcommand("pretrain", "stage-1 lesion-sign pre-training for one branch");
  add_common(pre);
  pre->add_option("--branch", branch, "branch: F (fundus) or O (OCT)")->required();

  auto* tr = app.add_subcommand("train", "stage-2 diagnosis fine-tuning from two checkpoints");
  add_common(tr);
  tr->add_option("--ckpt-f", ckpt_f, "stage-1 fundus checkpoint")->required();
  tr->add_option("--ckpt-o", ckpt_o, "stage-1 OCT checkpoint")->required();

  auto* ab = app.add_subcommand("ablate", "knowledge vs w/o-knowledge comparison run");
  add_common(ab);

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  add_common(ev);
  ev->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();

  auto* ex = app.add_subcommand("explain", "Grad-CAM overlays + localization scores");
  add_common(ex);
  ex->add_option("--ckpt", ckpt, "diagnosis checkpoint")->required();
  ex->add_option("--ids", ids, "comma-separated group ids (default: whole test split)");

  auto* rp = app.add_subcommand("report", "merge run reports into one comparison table");
  rp->add_option("runs", run_dirs, "run directories with report.json")->required();
  rp->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  const char* out_p = out.empty() ? nullptr : out.c_str();
  if (gen->parsed()) return finish(kfwc_gen_data(config.c_str(), out_p, seed));
  if (pre->parsed()) return finish(kfwc_pretrain(config.c_str(), branch.c_str(), out_p, seed));
  if (tr->parsed())
    return finish(kfwc_train(config.c_str(), ckpt_f.c_str(), ckpt_o.c_str(), out_p, seed));
  if (ab->parsed()) return finish(kfwc_ablate(config.c_str(), out_p, seed));
  if (ev->parsed()) return finish(kfwc_evaluate(config.c_str(), ckpt.c_str(), out_p, seed));
  if (ex->parsed())
    return finish(kfwc_explain(config.c_str(), ckpt.c_str(), ids.c_str(), out_p, seed));
  if (rp->parsed()) {
    std::vector<const char*> dirs;
    for (const auto& d : run_dirs) dirs.push_back(d.c_str());
    return finish(kfwc_report(dirs.data(), dirs.size(), out.c_str()));
  }
  return KFWC_ERROR;
}
