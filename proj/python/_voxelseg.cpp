#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "voxelseg/error.hpp"
#include "voxelseg/geometry.hpp"
#include "voxelseg/nifti_io.hpp"
#include "voxelseg/normalize.hpp"
#include "voxelseg/overlap.hpp"
#include "voxelseg/patching.hpp"
#include "voxelseg/phantom.hpp"
#include "voxelseg/trainer.hpp"
#include "voxelseg/vnet.hpp"

namespace py = pybind11;
using namespace voxelseg;

namespace {

using FArray = py::array_t<double, py::array::f_style | py::array::forcecast>;

// Volumes cross the boundary as (e0, e1, e2) arrays indexed [i, j, k]; the
// Fortran layout matches the voxel order in memory.
FArray to_array(const Extents& e, const std::vector<double>& data) {
  FArray out({e[0], e[1], e[2]});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Extents extents_of(const FArray& a) {
  if (a.ndim() != 3) fail(ErrorCode::ShapeMismatch, "expected a 3-D array");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          static_cast<std::size_t>(a.shape(2))};
}

Volume volume_from(const FArray& a) {
  Volume v(extents_of(a));
  std::copy(a.data(), a.data() + a.size(), v.data.begin());
  return v;
}

std::vector<double> flat(const FArray& a) { return {a.data(), a.data() + a.size()}; }

nifti::Datatype datatype_from(const std::string& name) {
  if (name == "uint8") return nifti::Datatype::UInt8;
  if (name == "int16") return nifti::Datatype::Int16;
  if (name == "float32") return nifti::Datatype::Float32;
  if (name == "float64") return nifti::Datatype::Float64;
  fail(ErrorCode::UnsupportedDatatype, "unknown datatype name '" + name + "'");
}

overlap::LossKind loss_from(const std::string& name) {
  if (name == "jaccard") return overlap::LossKind::Jaccard;
  if (name == "dice") return overlap::LossKind::Dice;
  if (name == "tversky") return overlap::LossKind::Tversky;
  fail(ErrorCode::InvalidParams, "unknown loss '" + name + "'");
}

patching::Window window_from(const std::string& name) {
  if (name == "hann") return patching::Window::Hann;
  if (name == "uniform") return patching::Window::Uniform;
  fail(ErrorCode::InvalidWindow, "unknown window '" + name + "'");
}

ad::Tensor tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return ad::Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> tensor_to_array(const ad::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<trainer::LabeledVolume> pairs_from(const std::vector<std::pair<Volume, Volume>>& in) {
  std::vector<trainer::LabeledVolume> out;
  for (const auto& [image, label] : in) out.push_back({image, label});
  return out;
}

}  // namespace

PYBIND11_MODULE(_voxelseg, m) {
  m.doc() = "Volumetric segmentation toolkit (native core).";

  static py::exception<Error> error_type(m, "VoxelsegError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      exc.attr("code") = std::string(error_name(e.code()));
      exc.attr("exit_code") = exit_code(e.code());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<Volume>(m, "Volume")
      .def(py::init([](const FArray& data) { return volume_from(data); }), py::arg("data"))
      .def_property(
          "data", [](const Volume& v) { return to_array(v.extents, v.data); },
          [](Volume& v, const FArray& a) {
            if (extents_of(a) != v.extents) fail(ErrorCode::ShapeMismatch, "data shape differs from the volume");
            v.data = flat(a);
          })
      .def_property_readonly("extents", [](const Volume& v) { return v.extents; })
      .def_property(
          "affine", [](const Volume& v) { return v.affine; },
          [](Volume& v, const Affine& a) {
            v.affine = a;
            v.orientation = geometry::orientation_of(a);
          })
      .def_property_readonly("orientation", [](const Volume& v) { return v.orientation.str(); })
      .def_property_readonly("spacing", &Volume::spacing)
      .def_readonly("affine_from_pixdim", &Volume::affine_from_pixdim);

  m.def("load", [](const std::string& path) { return nifti::load(path); }, py::arg("path"));
  m.def(
      "save",
      [](const Volume& v, const std::string& path, const std::string& dtype) {
        nifti::save(v, path, datatype_from(dtype));
      },
      py::arg("volume"), py::arg("path"), py::arg("datatype") = "float32");
  m.def("read_nifti", [](const py::bytes& b) {
    const std::string s = b;
    return nifti::read_nifti(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  });
  m.def(
      "write_nifti",
      [](const Volume& v, const std::string& dtype) {
        const auto bytes = nifti::write_nifti(v, datatype_from(dtype));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("volume"), py::arg("datatype") = "float32");

  m.def("orientation_of", [](const Affine& a) { return geometry::orientation_of(a).str(); });
  m.def(
      "reorient", [](const Volume& v, const std::string& code) { return geometry::reorient(v, OrientationCode(code)); },
      py::arg("volume"), py::arg("target") = "RAS");

  m.def("zscore", &normalize::zscore);
  m.def(
      "clip_rescale",
      [](const Volume& v, std::optional<double> lo, std::optional<double> hi, double out_lo, double out_hi) {
        normalize::NormalizationSpec s;
        s.clip_lo = lo;
        s.clip_hi = hi;
        s.out_lo = out_lo;
        s.out_hi = out_hi;
        return normalize::clip_rescale(v, s);
      },
      py::arg("volume"), py::arg("clip_lo") = py::none(), py::arg("clip_hi") = py::none(), py::arg("out_lo") = -1.0,
      py::arg("out_hi") = 1.0);
  m.def("normalize_label", &normalize::normalize_label);

  m.def("counts", [](const FArray& pred, const FArray& truth) {
    const auto c = overlap::counts(flat(pred), flat(truth));
    return py::make_tuple(c.tp, c.fp, c.fn);
  });
  m.def(
      "scores",
      [](const FArray& pred, const FArray& truth, double alpha) {
        const auto c = overlap::counts(flat(pred), flat(truth));
        py::dict d;
        d["jaccard"] = overlap::jaccard(c);
        d["dice"] = overlap::dice(c);
        d["tversky"] = overlap::tversky(c, overlap::TverskyParams::from_alpha(alpha));
        return d;
      },
      py::arg("prediction"), py::arg("truth"), py::arg("alpha") = 0.3);
  m.def(
      "soft_loss",
      [](const FArray& pred, const FArray& truth, const std::string& kind, double alpha, bool with_grad) -> py::object {
        const auto p = overlap::TverskyParams::from_alpha(alpha);
        if (!with_grad) return py::float_(overlap::soft_loss(flat(pred), flat(truth), loss_from(kind), p));
        auto lg = overlap::soft_loss_grad(flat(pred), flat(truth), loss_from(kind), p);
        FArray g(std::vector<py::ssize_t>(pred.shape(), pred.shape() + pred.ndim()));
        std::copy(lg.grad.begin(), lg.grad.end(), g.mutable_data());
        return py::make_tuple(lg.loss, g);
      },
      py::arg("prediction"), py::arg("truth"), py::arg("kind") = "dice", py::arg("alpha") = 0.5,
      py::arg("with_grad") = false);

  m.def(
      "sample_patches",
      [](const Volume& image, const Volume& label, const Extents& size, std::size_t n, std::uint64_t seed,
         double fg_fraction) {
        RngStream rng(seed);
        patching::PatchSpec params;
        params.size = size;
        params.fg_fraction = fg_fraction;
        py::list out;
        for (auto& p : patching::sample_training_patches(image, label, params, n, rng)) {
          py::dict d;
          d["image"] = p.image;
          d["label"] = p.label;
          d["center"] = p.center;
          d["origin"] = p.origin;
          d["foreground_centered"] = p.foreground_centered;
          out.append(d);
        }
        return out;
      },
      py::arg("image"), py::arg("label"), py::arg("size"), py::arg("n"), py::arg("seed") = 0,
      py::arg("fg_fraction") = 0.5);
  m.def(
      "grid_tiles",
      [](const Extents& e, const Extents& p, const Extents& ov) { return patching::grid_tiles(e, p, ov).origins; },
      py::arg("extents"), py::arg("patch_size"), py::arg("overlap"));
  m.def(
      "stitch",
      [](const Extents& e, const Extents& p, const Extents& ov, const std::vector<FArray>& tiles,
         const std::string& window) {
        const auto layout = patching::grid_tiles(e, p, ov, window_from(window));
        std::vector<Grid> grids;
        for (const auto& t : tiles) {
          Grid g(extents_of(t));
          g.values = flat(t);
          grids.push_back(std::move(g));
        }
        const Grid out = patching::stitch(layout, grids);
        return to_array(out.extents, out.values);
      },
      py::arg("extents"), py::arg("patch_size"), py::arg("overlap"), py::arg("tiles"), py::arg("window") = "hann");

  m.def(
      "phantom",
      [](const Extents& extents, std::size_t n_blobs, std::pair<double, double> radius, double fg, double bg,
         double noise, std::uint64_t seed) {
        phantom::PhantomConfig c;
        c.extents = extents;
        c.n_blobs = n_blobs;
        c.radius_lo = radius.first;
        c.radius_hi = radius.second;
        c.fg_intensity = fg;
        c.bg_intensity = bg;
        c.noise_sigma = noise;
        c.seed = seed;
        auto p = phantom::generate(c);
        return py::make_tuple(std::move(p.image), std::move(p.mask));
      },
      py::arg("extents") = Extents{64, 64, 64}, py::arg("n_blobs") = 5,
      py::arg("radius_range") = std::pair<double, double>{4.0, 8.0}, py::arg("fg_intensity") = 1.0,
      py::arg("bg_intensity") = 0.0, py::arg("noise_sigma") = 1.0, py::arg("seed") = 0);

  py::class_<vnet::Model>(m, "Model")
      .def_static(
          "build",
          [](const std::string& config_json, std::uint64_t seed) {
            RngStream rng = RngStream(seed).split(0);
            return vnet::Model::build(vnet::config_from_json(config_json), rng);
          },
          py::arg("config_json") = "{}", py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return vnet::load_file(path); })
      .def("save", [](const vnet::Model& model, const std::string& path) { vnet::save_file(model, path); })
      .def_property_readonly("config_json", [](const vnet::Model& model) { return vnet::config_to_json(model.config()); })
      .def_property_readonly("parameter_count", &vnet::Model::parameter_count)
      .def("parameter_names",
           [](const vnet::Model& model) {
             std::vector<std::string> names;
             for (const auto& p : model.parameters()) names.push_back(p.name);
             return names;
           })
      .def("forward", [](const vnet::Model& model, const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
        ad::NoGradGuard guard;
        return tensor_to_array(model.forward(tensor_from(x)));
      });

  m.def(
      "train",
      [](vnet::Model& model, const std::vector<std::pair<Volume, Volume>>& train_set,
         const std::vector<std::pair<Volume, Volume>>& eval_set, std::size_t steps, const Extents& patch_size,
         const std::string& loss, double alpha, double learning_rate, double momentum, std::size_t batch_size,
         std::uint64_t seed, std::size_t eval_every) {
        trainer::TrainConfig c;
        c.steps = steps;
        c.patch.size = patch_size;
        c.overlap = patching::default_overlap(patch_size);
        c.loss = loss_from(loss);
        c.tversky = overlap::TverskyParams::from_alpha(alpha);
        c.learning_rate = learning_rate;
        c.momentum = momentum;
        c.batch_size = batch_size;
        c.seed = seed;
        c.eval_every = eval_every;
        c.threads = trainer::thread_cap_from_env();
        const auto train_pairs = pairs_from(train_set);
        const auto eval_pairs = pairs_from(eval_set);
        py::gil_scoped_release release;
        return trainer::train(model, train_pairs, eval_pairs, c).lines;
      },
      py::arg("model"), py::arg("train_set"), py::arg("eval_set") = std::vector<std::pair<Volume, Volume>>{},
      py::arg("steps") = 600, py::arg("patch_size") = Extents{32, 32, 32}, py::arg("loss") = "dice",
      py::arg("alpha") = 0.3, py::arg("learning_rate") = 0.05, py::arg("momentum") = 0.9, py::arg("batch_size") = 2,
      py::arg("seed") = 0, py::arg("eval_every") = 0);

  m.def(
      "predict",
      [](const vnet::Model& model, const Volume& image, const Extents& patch_size, std::optional<Extents> overlap,
         const std::string& window, std::optional<std::size_t> threads) {
        const Extents ov = overlap.value_or(patching::default_overlap(patch_size));
        const std::size_t n = threads.value_or(trainer::thread_cap_from_env());
        Grid prob;
        {
          py::gil_scoped_release release;
          prob = trainer::predict_volume(model, image, patch_size, ov, window_from(window), n);
        }
        return to_array(prob.extents, prob.values);
      },
      py::arg("model"), py::arg("image"), py::arg("patch_size") = Extents{32, 32, 32}, py::arg("overlap") = py::none(),
      py::arg("window") = "hann", py::arg("threads") = py::none());

  m.def("exit_codes", [] {
    py::dict d;
    for (int i = 0; i < kErrorCodeCount; ++i) {
      const auto c = static_cast<ErrorCode>(i);
      d[py::str(std::string(error_name(c)))] = exit_code(c);
    }
    return d;
  });
}
