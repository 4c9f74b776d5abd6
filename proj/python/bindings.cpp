#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "pcgan/checkpoint.hpp"
#include "pcgan/classifier.hpp"
#include "pcgan/data.hpp"
#include "pcgan/error.hpp"
#include "pcgan/eval.hpp"
#include "pcgan/models.hpp"
#include "pcgan/noise.hpp"
#include "pcgan/selfcheck.hpp"
#include "pcgan/synthetic.hpp"

namespace py = pybind11;
using namespace pcgan;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.ptr(), t.ptr() + t.numel(), out.mutable_data());
  return out;
}

std::vector<int> to_ints(const IntArray& a) { return {a.data(), a.data() + a.size()}; }

IntArray to_array(const std::vector<int>& v) {
  IntArray out(py::ssize_t(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

NoiseSpec make_spec(const std::string& kind, std::optional<float> sigma, std::optional<float> factor,
                    std::optional<int> length, std::optional<float> angle) {
  NoiseSpec spec = NoiseSpec::preset(parse_noise_kind(kind));
  if (sigma) spec.sigma = *sigma;
  if (factor) spec.contrast_factor = *factor;
  if (length) spec.motion_length = *length;
  if (angle) spec.motion_angle = *angle;
  spec.validate();
  return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Progressive conditional GAN pretraining for noisy image classification";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def(
      "make_glyph_dataset",
      [](int count, int num_classes, std::uint64_t seed) {
        Dataset ds = make_glyph_dataset(count, num_classes, seed);
        return py::make_tuple(to_array(ds.images), to_array(ds.labels));
      },
      py::arg("count"), py::arg("num_classes") = 10, py::arg("seed") = 1,
      "Returns (images [N,1,28,28] in [-1,1], labels [N]).");

  m.def(
      "apply_noise",
      [](const FloatArray& images, const std::string& kind, std::optional<float> sigma, std::optional<float> factor,
         std::optional<int> length, std::optional<float> angle, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(apply_noise(to_tensor(images), make_spec(kind, sigma, factor, length, angle), rng));
      },
      py::arg("images"), py::arg("kind") = "awgn", py::arg("sigma") = py::none(), py::arg("factor") = py::none(),
      py::arg("length") = py::none(), py::arg("angle") = py::none(), py::arg("seed") = 0);

  m.def(
      "motion_kernel", [](int length, float angle) { return to_array(motion_kernel(length, angle)); },
      py::arg("length"), py::arg("angle"));

  m.def(
      "read_idx",
      [](const std::string& images, const std::string& labels) {
        Dataset ds = load_idx(images, labels, 0);
        return py::make_tuple(to_array(ds.images), to_array(ds.labels));
      },
      py::arg("images"), py::arg("labels"));

  m.def(
      "write_idx",
      [](const FloatArray& images, const IntArray& labels, const std::string& image_path,
         const std::string& label_path) {
        Dataset ds;
        ds.images = to_tensor(images);
        ds.labels = to_ints(labels);
        for (int l : ds.labels) ds.num_classes = std::max(ds.num_classes, l + 1);
        write_dataset_idx(ds, image_path, label_path);
      },
      py::arg("images"), py::arg("labels"), py::arg("image_path"), py::arg("label_path"));

  m.def(
      "loss_discern",
      [](const FloatArray& realness, bool real) {
        return loss_discern(to_tensor(realness), real ? Target::real : Target::fake);
      },
      py::arg("realness"), py::arg("real"));

  m.def(
      "loss_class",
      [](const FloatArray& probs, const IntArray& labels) {
        const auto l = to_ints(labels);
        return loss_class(to_tensor(probs), l);
      },
      py::arg("probs"), py::arg("labels"));

  m.def("erf", &erf_series, py::arg("x"));
  m.def("chi2_sf_df1", &chi2_sf_df1, py::arg("x"));

  m.def(
      "mcnemar",
      [](const IntArray& a, const IntArray& b, const IntArray& truth) {
        const auto va = to_ints(a), vb = to_ints(b), vt = to_ints(truth);
        const McNemarResult r = mcnemar(va, vb, vt);
        py::dict d;
        d["chi2"] = r.chi2;
        d["p"] = r.p;
        d["n00"] = r.table.n00;
        d["n01"] = r.table.n01;
        d["n10"] = r.table.n10;
        d["n11"] = r.table.n11;
        return d;
      },
      py::arg("preds_a"), py::arg("preds_b"), py::arg("truth"));

  m.def(
      "predict",
      [](const std::string& checkpoint, const FloatArray& images) {
        const Classifier clf = classifier_from_checkpoint(load_checkpoint(checkpoint));
        const Prediction p = predict(clf, to_tensor(images));
        return py::make_tuple(to_array(p.labels), to_array(p.probs));
      },
      py::arg("checkpoint"), py::arg("images"), "Returns (labels [N], probs [N,K]) of a classifier checkpoint.");

  m.def(
      "selfcheck",
      [](int instances, int geometries, std::uint64_t seed) {
        SelfCheckOptions o;
        o.gradient_instances = instances;
        o.adjoint_geometries = geometries;
        o.seed = seed;
        o.stop_at_first_failure = false;
        py::gil_scoped_release release;
        const SelfCheckReport r = run_selfcheck(o);
        py::gil_scoped_acquire acquire;
        py::dict props;
        for (const auto& p : r.properties) props[py::str(p.name)] = py::make_tuple(p.passed, p.worst, p.instances);
        py::dict d;
        d["passed"] = r.passed;
        d["seconds"] = r.seconds;
        d["properties"] = props;
        return d;
      },
      py::arg("instances") = 20, py::arg("geometries") = 100, py::arg("seed") = SelfCheckOptions{}.seed);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a pcgan subcommand; returns (exit_code, stdout, stderr).");
}
