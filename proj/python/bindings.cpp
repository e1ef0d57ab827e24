#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "resprop/commands.hpp"
#include "resprop/dataset.hpp"
#include "resprop/gradcheck.hpp"
#include "resprop/signalprop.hpp"
#include "resprop/trainer.hpp"

namespace py = pybind11;
using namespace resprop;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const DoubleArray& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape.push_back(static_cast<std::size_t>(a.shape(i)));
  Tensor<double> t(shape);
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

py::array_t<double> to_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape;
  for (std::size_t e : t.shape()) shape.push_back(static_cast<py::ssize_t>(e));
  py::array_t<double> a(shape);
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

Padding parse_padding(const std::string& name) {
  if (name == "same" || name == "SAME") return Padding::Same;
  if (name == "valid" || name == "VALID") return Padding::Valid;
  throw std::invalid_argument("padding must be 'same' or 'valid'");
}

py::dict report_dict(const StatReport& report) {
  std::vector<double> skip, branch, bn_var, bn_mean_sq;
  for (const BlockStats& s : report.blocks) {
    skip.push_back(s.skip_var);
    branch.push_back(s.branch_var);
    bn_var.push_back(s.bn_moving_var);
    bn_mean_sq.push_back(s.bn_moving_mean_sq);
  }
  py::dict d;
  d["skip_var"] = skip;
  d["branch_var"] = branch;
  d["bn_moving_var"] = bn_var;
  d["bn_moving_mean_sq"] = bn_mean_sq;
  d["branch_fraction"] = branch_fraction(report);
  d["diverged"] = report.diverged;
  return d;
}

NetworkSpec make_spec(const std::string& family, const std::string& variant, std::size_t width,
                      std::size_t depth, std::size_t in_features) {
  NetworkSpec spec;
  spec.family = parse_family(family);
  spec.variant = parse_variant(variant);
  spec.width = width;
  spec.depth = depth;
  spec.in_features = in_features;
  return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "residual network signal propagation lab: numeric kernels, "
            "initialization statistics and training runs";

  m.def(
      "gaussian",
      [](const std::vector<std::size_t>& shape, double mean, double std, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(gaussian<double>(Shape(shape.begin(), shape.end()), mean, std, rng));
      },
      py::arg("shape"), py::arg("mean") = 0.0, py::arg("std") = 1.0, py::arg("seed") = 0,
      "Seed-deterministic i.i.d. Gaussian tensor");

  m.def(
      "matmul",
      [](const DoubleArray& a, const DoubleArray& b) {
        return to_array(matmul(to_tensor(a), to_tensor(b)));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "conv2d",
      [](const DoubleArray& x, const DoubleArray& kernel, std::size_t stride,
         const std::string& padding) {
        return to_array(conv2d(to_tensor(x), to_tensor(kernel), stride, parse_padding(padding)));
      },
      py::arg("input"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = "same",
      "Strided 2-D cross-correlation over an NHWC tensor");

  m.def(
      "relu", [](const DoubleArray& x) { return to_array(relu(to_tensor(x))); }, py::arg("x"));

  m.def(
      "channel_moments",
      [](const DoubleArray& x) {
        auto mo = channel_moments(to_tensor(x));
        return py::make_tuple(to_array(mo.mean), to_array(mo.var));
      },
      py::arg("x"), "Per-channel mean and biased variance over all other axes");

  m.def(
      "softmax_xent",
      [](const DoubleArray& logits, const std::vector<int>& labels) {
        auto res = softmax_xent(to_tensor(logits), std::span<const int>(labels));
        return py::make_tuple(res.loss, to_array(res.grad_logits));
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "schedule_lr",
      [](double base_lr, int constant_epochs, int decay_interval, double decay_factor, int epoch) {
        return schedule_lr({base_lr, constant_epochs, decay_interval, decay_factor}, epoch);
      },
      py::arg("base_lr"), py::arg("constant_epochs"), py::arg("decay_interval"),
      py::arg("decay_factor"), py::arg("epoch"));

  m.def(
      "predict",
      [](const std::string& variant, const std::string& family, std::size_t depth) {
        StatReport rows;
        rows.blocks = predict(parse_variant(variant), parse_family(family), depth).blocks;
        return report_dict(rows);
      },
      py::arg("variant"), py::arg("family"), py::arg("depth"),
      "Closed-form per-block initialization predictions");

  m.def(
      "analyze",
      [](const std::string& family, const std::string& variant, std::size_t width,
         std::size_t depth, std::size_t batch, std::size_t seeds, std::uint64_t seed,
         std::size_t in_features, std::size_t image_hw) {
        NetworkSpec spec = make_spec(family, variant, width, depth, in_features);
        return report_dict(measure_mean(spec, batch, seeds, seed, image_hw));
      },
      py::arg("family"), py::arg("variant"), py::arg("width"), py::arg("depth"),
      py::arg("batch") = 256, py::arg("seeds") = 1, py::arg("seed") = 0,
      py::arg("in_features") = 100, py::arg("image_hw") = 32,
      "Measured per-block initialization statistics, averaged over seeds");

  m.def(
      "train",
      [](const std::string& family, const std::string& variant, std::size_t width,
         std::size_t depth, double lr, int epochs, std::size_t batch, std::uint64_t seed,
         int classes, std::size_t dataset_size, std::size_t dataset_dim, double l2,
         double momentum, std::size_t ghost) {
        DatasetSpec ds;
        ds.kind = "gaussian-blobs";
        ds.classes = classes;
        ds.size = dataset_size;
        ds.dim = dataset_dim;
        ds.seed = seed ^ 0x5eedda7aull;
        Dataset data = make_dataset(ds);
        NetworkSpec spec = make_spec(family, variant, width, depth, dataset_dim);
        TrainProtocol protocol;
        protocol.epochs = epochs;
        protocol.batch = batch;
        protocol.ghost = ghost;
        protocol.schedule.constant_epochs = epochs;
        protocol.opt.l2 = l2;
        protocol.opt.momentum = momentum;
        RunResult run = run_training<float>(spec, data, lr, seed, protocol);
        py::dict d;
        d["train_loss"] = run.train_loss;
        d["eval_accuracy"] = run.eval_accuracy;
        d["diverged"] = run.diverged;
        return d;
      },
      py::arg("family") = "fc-relu", py::arg("variant") = "skipinit:0", py::arg("width") = 32,
      py::arg("depth") = 4, py::arg("lr") = 0.125, py::arg("epochs") = 5, py::arg("batch") = 64,
      py::arg("seed") = 0, py::arg("classes") = 4, py::arg("dataset_size") = 512,
      py::arg("dataset_dim") = 8, py::arg("l2") = 5e-4, py::arg("momentum") = 0.9,
      py::arg("ghost") = 0,
      "One seeded training run on a synthetic blob task (32-bit)");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list out;
        for (const GradCheckResult& r : run_gradcheck_suite(seed)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_err"] = r.max_rel_err;
          d["pass"] = r.pass;
          d["skipped"] = r.skipped;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, "Finite-difference checks for every layer backward");
}
