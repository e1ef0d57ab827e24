#include "resprop/signalprop.hpp"

namespace resprop {

StatReport average_reports(const std::vector<StatReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: no reports");
  StatReport out = reports.front();
  std::size_t depth = reports.front().blocks.size();
  for (const StatReport& r : reports) {
    depth = std::min(depth, r.blocks.size());
    out.diverged = out.diverged || r.diverged;
  }
  out.blocks.assign(depth, BlockStats{});
  const double n = static_cast<double>(reports.size());
  for (std::size_t b = 0; b < depth; ++b) {
    double skip = 0.0, branch = 0.0, bn_var = 0.0, bn_mean_sq = 0.0;
    bool has_bn = true;
    for (const StatReport& r : reports) {
      skip += r.blocks[b].skip_var;
      branch += r.blocks[b].branch_var;
      bn_var += r.blocks[b].bn_moving_var;
      bn_mean_sq += r.blocks[b].bn_moving_mean_sq;
      has_bn = has_bn && r.blocks[b].has_bn;
    }
    out.blocks[b].skip_var = skip / n;
    out.blocks[b].branch_var = branch / n;
    out.blocks[b].bn_moving_var = bn_var / n;
    out.blocks[b].bn_moving_mean_sq = bn_mean_sq / n;
    out.blocks[b].has_bn = has_bn;
  }
  return out;
}

StatReport measure_mean(const NetworkSpec& spec, std::size_t batch, std::size_t num_seeds,
                        std::uint64_t base_seed, std::size_t image_hw) {
  if (num_seeds == 0) throw std::invalid_argument("measure_mean: num_seeds must be positive");
  std::vector<StatReport> reports;
  reports.reserve(num_seeds);
  for (std::size_t i = 0; i < num_seeds; ++i)
    reports.push_back(measure_init_stats<double>(spec, batch, base_seed + i, image_hw));
  StatReport mean = average_reports(reports);
  mean.seed = base_seed;
  return mean;
}

TheoryPrediction predict(const BlockVariant& variant, Family family, std::size_t depth) {
  const bool nonorm_linear = variant.kind == VariantKind::NoNorm && family == Family::FcLinear;
  const bool bn_linear = variant.kind == VariantKind::BnBranch && family == Family::FcLinear;
  const bool bn_relu = variant.kind == VariantKind::BnBranch && family == Family::FcRelu;
  if (!nonorm_linear && !bn_linear && !bn_relu)
    throw std::invalid_argument("predict: no closed form for " + variant_name(variant) + " " +
                                family_name(family));
  TheoryPrediction pred;
  pred.blocks.resize(depth);
  for (std::size_t b = 0; b < depth; ++b) {
    const double l = static_cast<double>(b + 1);
    BlockStats& s = pred.blocks[b];
    if (nonorm_linear) {
      // doubling per block from unit input variance
      s.skip_var = std::pow(2.0, l - 1.0);
      s.branch_var = s.skip_var;
    } else if (bn_linear) {
      s.skip_var = l;
      s.branch_var = 1.0;
      s.bn_moving_var = l;
      s.bn_moving_mean_sq = 0.0;
      s.has_bn = true;
    } else {
      s.skip_var = l;
      s.branch_var = 1.0;
      s.bn_moving_var = l * (1.0 - 1.0 / std::numbers::pi);
      s.bn_moving_mean_sq = l / std::numbers::pi;
      s.has_bn = true;
    }
  }
  return pred;
}

std::vector<double> branch_fraction(const StatReport& report) {
  std::vector<double> out;
  out.reserve(report.blocks.size());
  for (const BlockStats& s : report.blocks) {
    const double denom = s.branch_var + s.skip_var;
    out.push_back(denom == 0.0 ? 0.0 : s.branch_var / denom);
  }
  return out;
}

std::string stat_report_csv(const StatReport& report, const TheoryPrediction* prediction) {
  CsvBuilder csv({"block", "skip_var", "branch_var", "bn_moving_var", "bn_moving_mean_sq",
                  "predicted_skip_var", "predicted_branch_var", "predicted_bn_moving_var",
                  "predicted_bn_moving_mean_sq"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t b = 0; b < report.blocks.size(); ++b) {
    const BlockStats& s = report.blocks[b];
    const BlockStats* p =
        prediction && b < prediction->blocks.size() ? &prediction->blocks[b] : nullptr;
    csv.add_row({std::to_string(b + 1), format_double(s.skip_var), format_double(s.branch_var),
                 format_double(s.bn_moving_var), format_double(s.bn_moving_mean_sq),
                 format_double(p ? p->skip_var : nan), format_double(p ? p->branch_var : nan),
                 format_double(p ? p->bn_moving_var : nan),
                 format_double(p ? p->bn_moving_mean_sq : nan)});
  }
  return csv.str();
}

}  // namespace resprop
