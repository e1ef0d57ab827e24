#include "resprop/trainer.hpp"

#include "resprop/csv.hpp"

namespace resprop {

double schedule_lr(const Schedule& schedule, int epoch) {
  if (epoch < 0) throw std::invalid_argument("schedule_lr: negative epoch");
  if (schedule.decay_interval <= 0 || epoch < schedule.constant_epochs) return schedule.base_lr;
  const int drops = (epoch - schedule.constant_epochs) / schedule.decay_interval + 1;
  return schedule.base_lr * std::pow(schedule.decay_factor, -drops);
}

void configure_spec_for_dataset(NetworkSpec& spec, const Dataset& data) {
  if (spec.family == Family::ConvRelu) {
    if (data.feature_shape.size() != 3)
      throw std::invalid_argument("conv network needs H x W x C features, dataset has " +
                                  shape_str(data.feature_shape));
    spec.in_features = data.feature_shape[2];
  } else {
    spec.in_features = shape_numel(data.feature_shape);
  }
  if (spec.classes > 0 && spec.classes != data.classes)
    throw std::invalid_argument("network classes " + std::to_string(spec.classes) +
                                " != dataset classes " + std::to_string(data.classes));
  if (spec.classes == 0) spec.classes = data.classes;
}

std::string run_result_csv(const RunResult& run) {
  CsvBuilder csv({"epoch", "lr", "train_loss", "eval_accuracy", "diverged"});
  for (std::size_t e = 0; e < run.train_loss.size(); ++e)
    csv.add_row({std::to_string(e), format_double(run.lr), format_double(run.train_loss[e]),
                 format_double(run.eval_accuracy[e]), "0"});
  if (run.diverged)
    csv.add_row({std::to_string(run.train_loss.size()), format_double(run.lr), "inf", "nan", "1"});
  return csv.str();
}

std::string sweep_runs_csv(const std::vector<SweepCell>& cells) {
  CsvBuilder csv({"variant", "depth", "batch_size", "lr", "seed", "final_loss", "final_accuracy",
                  "diverged"});
  for (const SweepCell& cell : cells)
    for (const RunResult& run : cell.grid.runs)
      csv.add_row({cell.variant, std::to_string(cell.depth), std::to_string(cell.batch),
                   format_double(run.lr), std::to_string(run.seed), format_double(run.final_loss()),
                   format_double(run.final_accuracy()), run.diverged ? "1" : "0"});
  return csv.str();
}

std::string sweep_grid_csv(const std::vector<SweepCell>& cells) {
  CsvBuilder csv({"variant", "depth", "batch_size", "lr", "finite_runs", "kept", "mean_loss",
                  "std_loss", "mean_accuracy", "std_accuracy", "failed"});
  for (const SweepCell& cell : cells)
    for (const LrCell& c : cell.grid.cells)
      csv.add_row({cell.variant, std::to_string(cell.depth), std::to_string(cell.batch),
                   format_double(c.lr), std::to_string(c.finite_runs), std::to_string(c.kept),
                   format_double(c.mean_loss), format_double(c.std_loss),
                   format_double(c.mean_accuracy), format_double(c.std_accuracy),
                   c.failed ? "1" : "0"});
  return csv.str();
}

std::string sweep_best_csv(const std::vector<SweepCell>& cells) {
  CsvBuilder csv({"variant", "depth", "batch_size", "metric", "best_lr", "best_mean_loss",
                  "best_mean_accuracy", "boundary", "failed", "note"});
  for (const SweepCell& cell : cells) {
    const GridResult& g = cell.grid;
    csv.add_row({cell.variant, std::to_string(cell.depth), std::to_string(cell.batch),
                 metric_name(g.metric), format_double(g.best_lr()), format_double(g.best_loss()),
                 format_double(g.best_accuracy()), g.boundary ? "1" : "0", g.failed ? "1" : "0",
                 cell.note});
  }
  return csv.str();
}

}  // namespace resprop
