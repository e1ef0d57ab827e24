#include <CLI11.hpp>

#include "resprop/commands.hpp"
#include "resprop/config.hpp"

namespace {

// Shared and per-command flags all write into a RunConfig overlay; values
// from --config are applied first, then flags given on the command line.
void add_options(CLI::App* cmd, resprop::RunConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON run configuration");
  cmd->add_option("--seed", cfg.seed, "base seed");
  cmd->add_option("--precision", cfg.precision, "f32 | f64");
  cmd->add_option("--out", cfg.out, "output directory");

  cmd->add_option("--family", cfg.family, "fc-linear | fc-relu | conv-relu");
  cmd->add_option("--variant", cfg.variant, "bn | skipinit[:a] | divide-sqrt2 | bn-skip | nonorm | fixup");
  cmd->add_option("--normalized", cfg.normalized, "fc-linear shorthand for bn/nonorm");
  cmd->add_option("--alpha", cfg.alpha, "skipinit multiplier");
  cmd->add_option("--width", cfg.width, "layer width / conv channels");
  cmd->add_option("--depth", cfg.depth, "residual block count");
  cmd->add_option("--classes", cfg.classes, "class count");
  cmd->add_option("--branch-layers", cfg.branch_layers, "weighted layers per branch (1 or 2)");
  cmd->add_option("--use-biases", cfg.use_biases, "biases on linear/conv layers");
  cmd->add_option("--final-bn-only", cfg.final_bn_only, "single norm before the readout");
  cmd->add_option("--dropout", cfg.dropout, "drop probability before the readout");

  cmd->add_option("--dataset", cfg.dataset,
                  "gaussian-blobs | spirals | random-labels | idx | cifar-binary");
  cmd->add_option("--dataset-size", cfg.dataset_size, "synthetic dataset size");
  cmd->add_option("--dataset-dim", cfg.dataset_dim, "synthetic feature dimension");
  cmd->add_option("--separation", cfg.separation, "blob separation");
  cmd->add_option("--eval-fraction", cfg.eval_fraction, "eval split fraction");
  cmd->add_option("--images-path", cfg.images_path, "idx images file");
  cmd->add_option("--labels-path", cfg.labels_path, "idx labels file");
  cmd->add_option("--data-path", cfg.data_path, "cifar binary file");

  cmd->add_option("--lr", cfg.lr, "learning rate");
  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--batch", cfg.batch, "batch size");
  cmd->add_option("--ghost", cfg.ghost, "normalization sub-batch (0 = full batch)");
  cmd->add_option("--ghost-policy", cfg.ghost_policy, "fixed | full-batch (sweep-batch)");
  cmd->add_option("--momentum", cfg.momentum, "heavy-ball momentum");
  cmd->add_option("--l2", cfg.l2, "L2 coefficient");
  cmd->add_option("--constant-epochs", cfg.constant_epochs, "epochs before the first decay");
  cmd->add_option("--decay-interval", cfg.decay_interval, "epochs between decays (<=0: never)");
  cmd->add_option("--decay-factor", cfg.decay_factor, "decay divisor");

  cmd->add_option("--lr-exp-lo", cfg.lr_exp_lo, "grid start exponent (2^lo)");
  cmd->add_option("--lr-exp-hi", cfg.lr_exp_hi, "grid end exponent (2^hi)");
  cmd->add_option("--runs", cfg.runs, "runs per learning rate");
  cmd->add_option("--keep", cfg.keep, "best runs kept per learning rate");
  cmd->add_option("--metric", cfg.metric, "loss | accuracy");
  cmd->add_option("--depths", cfg.depths, "depth list for sweep-depth")->delimiter(',');
  cmd->add_option("--batch-sizes", cfg.batch_sizes, "batch list for sweep-batch")->delimiter(',');
  cmd->add_option("--variants", cfg.variants, "variant list for sweeps")->delimiter(',');

  cmd->add_option("--seeds", cfg.seeds, "statistics seeds (analyze)");
  cmd->add_option("--image-hw", cfg.image_hw, "probe image size (conv analyze)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"residual network signal propagation and trainability lab"};
  app.require_subcommand(1);

  const std::vector<std::string> commands = {"analyze", "train", "sweep-depth", "sweep-batch",
                                             "gradcheck"};
  const std::vector<std::string> descriptions = {
      "initialization statistics per residual block, with closed-form predictions",
      "one seeded training run", "learning-rate grids across depths x variants",
      "learning-rate grids across batch sizes x variants",
      "finite-difference checks of every layer backward"};
  std::vector<resprop::RunConfig> overlays(commands.size());
  std::vector<std::string> config_paths(commands.size());
  for (std::size_t i = 0; i < commands.size(); ++i) {
    CLI::App* sub = app.add_subcommand(commands[i], descriptions[i]);
    add_options(sub, overlays[i], config_paths[i]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!app.get_subcommand(commands[i])->parsed()) continue;
    resprop::RunConfig cfg;
    try {
      if (!config_paths[i].empty()) cfg = resprop::RunConfig::from_file(config_paths[i]);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
    cfg.merge_from(overlays[i]);
    cfg.command = commands[i];
    return resprop::run_command(cfg);
  }
  return 1;
}
