#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <sstream>

#include "blindspot/adversary.hpp"
#include "blindspot/cli.hpp"
#include "blindspot/dataio.hpp"
#include "blindspot/error.hpp"
#include "blindspot/model_io.hpp"
#include "blindspot/network.hpp"
#include "blindspot/spectral.hpp"
#include "blindspot/trainer.hpp"

namespace py = pybind11;
using namespace blindspot;

namespace {

Image as_image(const Network& net, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
    throw InvalidInput("expected " + std::to_string(net.input_dim()) + " pixels, got " +
                       std::to_string(x.size()));
  }
  Image img;
  img.width = static_cast<std::size_t>(x.size());
  img.height = 1;
  img.pixels = x;
  return img;
}

// Columns of pixels are examples, as in the C++ API.
LabeledDataset as_dataset(const Matrix& pixels, const std::vector<Label>& labels,
                          std::size_t width, std::size_t height) {
  int classes = 2;
  for (Label l : labels) classes = std::max(classes, static_cast<int>(l) + 1);
  return LabeledDataset("python", width, height, pixels, labels, classes);
}

}  // namespace

PYBIND11_MODULE(_blindspot, m) {
  m.doc() = "Adversarial examples and Lipschitz bounds for small fully connected networks";

  // Translators run newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::enum_<LayerKind>(m, "LayerKind")
      .value("linear", LayerKind::linear)
      .value("sigmoid", LayerKind::sigmoid)
      .value("relu", LayerKind::relu)
      .value("softmax", LayerKind::softmax);

  py::class_<LayerSpec>(m, "Layer")
      .def_readonly("kind", &LayerSpec::kind)
      .def_readonly("weights", &LayerSpec::weights)
      .def_readonly("biases", &LayerSpec::biases)
      .def_readonly("decay", &LayerSpec::lambda)
      .def_readonly("frozen", &LayerSpec::frozen);

  py::class_<Network>(m, "Network")
      .def_readwrite("name", &Network::name)
      .def_readonly("layers", &Network::layers)
      .def_readonly("training_meta", &Network::training_meta)
      .def_property_readonly("input_dim", &Network::input_dim)
      .def_property_readonly("output_dim", &Network::output_dim)
      .def("forward", [](const Network& n, const Vector& x) { return forward(n, x).output(); },
           py::arg("x"))
      .def("forward_batch", [](const Network& n, const Matrix& x) { return forward_batch(n, x); },
           "Columns are examples.", py::arg("x"))
      .def("predict", [](const Network& n, const Vector& x) { return predict(n, x); }, py::arg("x"))
      .def("__repr__", [](const Network& n) { return "<Network " + n.name + ">"; });

  m.def("load_model", [](const std::filesystem::path& p) { return load_model(p); }, py::arg("path"));
  m.def("save_model", [](const Network& n, const std::filesystem::path& p) { save_model(n, p); },
        py::arg("net"), py::arg("path"));

  m.def(
      "train",
      [](const std::string& spec, const Matrix& pixels, const std::vector<Label>& labels,
         std::size_t width, std::size_t height, int max_iterations, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.max_lbfgs_iterations = max_iterations;
        cfg.seed = seed;
        py::gil_scoped_release release;
        return train(parse_arch(spec), as_dataset(pixels, labels, width, height), cfg);
      },
      "Full-batch L-BFGS training; pixels has one column per example.", py::arg("spec"),
      py::arg("pixels"), py::arg("labels"), py::arg("width"), py::arg("height"),
      py::arg("max_iterations") = 2000, py::arg("seed") = 0);

  m.def(
      "synthetic_blobs",
      [](std::size_t count, std::uint64_t seed) {
        const auto d = make_synthetic_blobs(count, seed);
        return py::make_tuple(Matrix(d.pixels()), std::vector<Label>(d.labels().begin(), d.labels().end()));
      },
      "Two-class 8x8 blob images: (pixels, labels).", py::arg("count"), py::arg("seed") = 0);

  py::class_<AdversarialResult>(m, "AdversarialResult")
      .def_property_readonly("perturbed", [](const AdversarialResult& r) { return r.perturbed.pixels; })
      .def_readonly("r", &AdversarialResult::r)
      .def_readonly("target", &AdversarialResult::target)
      .def_readonly("achieved", &AdversarialResult::achieved)
      .def_readonly("c_final", &AdversarialResult::c_final)
      .def_readonly("distortion", &AdversarialResult::distortion);

  m.def(
      "minimal_perturbation",
      [](const Network& n, const Vector& x, Label target, int bisection_steps, int inner_iterations) {
        AttackConfig cfg;
        cfg.bisection_steps = bisection_steps;
        cfg.inner_iterations = inner_iterations;
        const Image img = as_image(n, x);
        py::gil_scoped_release release;
        return minimal_perturbation(n, img, target, cfg);
      },
      "Smallest found r with x + r in [0, 1] classified as target.", py::arg("net"), py::arg("x"),
      py::arg("target"), py::arg("bisection_steps") = 20, py::arg("inner_iterations") = 500);

  m.def("distortion", py::overload_cast<const Vector&, const Vector&>(&distortion), py::arg("x"),
        py::arg("x2"));

  m.def(
      "network_bound",
      [](const Network& n, bool tightened) {
        const auto report = network_bound(n, tightened ? SigmoidBoundMode::tightened : SigmoidBoundMode::plain);
        std::vector<double> layers;
        for (const auto& e : report.entries) layers.push_back(e.bound);
        return py::make_tuple(report.product, layers);
      },
      "(product, per-layer bounds)", py::arg("net"), py::arg("tightened") = true);

  m.def(
      "conv_bound",
      [](const std::vector<Matrix>& kernels, std::size_t in_features, std::size_t out_features,
         std::size_t stride, std::size_t grid_points) {
        ConvLayerSpec conv;
        conv.in_features = in_features;
        conv.out_features = out_features;
        conv.kernel_size = kernels.empty() ? 0 : static_cast<std::size_t>(kernels.front().rows());
        conv.stride = stride;
        conv.kernels = kernels;
        return conv_bound(conv, grid_points).bound;
      },
      "kernels[c * out_features + d] are square N x N arrays.", py::arg("kernels"),
      py::arg("in_features"), py::arg("out_features"), py::arg("stride") = 1, py::arg("grid_points") = 64);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs the command line; returns (exit code, stdout, stderr).", py::arg("args"));
}
