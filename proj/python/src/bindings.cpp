#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "segkit/io.hpp"
#include "segkit/verify.hpp"

namespace py = pybind11;
using namespace segkit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected an H x W x C array");
  Tensor<float> t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), t.raw().begin());
  return t;
}

FloatArray to_array(const Tensor<float>& t) {
  const Shape s = t.shape();
  if (s.n != 1) throw std::invalid_argument("cannot convert a batched tensor");
  FloatArray a({s.h, s.w, s.c});
  std::copy(t.raw().begin(), t.raw().end(), a.mutable_data());
  return a;
}

LabelMap to_labels(const IntArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected an H x W label array");
  LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

IntArray to_array(const LabelMap& m) {
  IntArray a({m.height, m.width});
  std::copy(m.labels.begin(), m.labels.end(), a.mutable_data());
  return a;
}

std::vector<Tensor<float>> to_tensors(const std::vector<FloatArray>& arrays) {
  std::vector<Tensor<float>> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

py::dict wilcoxon(const std::vector<double>& a, const std::vector<double>& b) {
  const auto r = wilcoxon_signed_rank(a, b);
  py::dict d;
  d["statistic"] = r.statistic;
  d["p_value"] = r.p_value;
  d["n"] = r.n;
  d["exact"] = r.exact;
  return d;
}

}  // namespace

PYBIND11_MODULE(_segkit, m) {
  m.doc() = "U-Net variants, labelling criteria and ensembles for lumbar spine MRI segmentation";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("zscore_normalize", [](const FloatArray& img) { return to_array(zscore_normalize(to_tensor(img))); });
  m.def("plan_grid", [](int h, int w, int size, int stride) { return plan_grid(h, w, size, stride).anchors; },
        py::arg("height"), py::arg("width"), py::arg("size") = 256, py::arg("stride") = 192);
  m.def(
      "extract_patches",
      [](const FloatArray& img, int size, int stride) {
        const auto t = to_tensor(img);
        std::vector<FloatArray> out;
        for (const auto& p : extract_patches(t, plan_grid(t.shape().h, t.shape().w, size, stride)))
          out.push_back(to_array(p));
        return out;
      },
      py::arg("image"), py::arg("size") = 256, py::arg("stride") = 192);
  m.def(
      "reconstruct",
      [](const std::vector<FloatArray>& patches, int h, int w, int size, int stride) {
        return to_array(reconstruct(to_tensors(patches), plan_grid(h, w, size, stride)));
      },
      py::arg("patches"), py::arg("height"), py::arg("width"), py::arg("size") = 256, py::arg("stride") = 192);

  m.def("label_map_map", [](const FloatArray& s) { return to_array(label_map_map(to_tensor(s))); });
  m.def("label_map_th", [](const FloatArray& s, const std::vector<double>& thresholds) {
    return to_array(label_map_th(to_tensor(s), ClassThresholds{thresholds}));
  });
  m.def("iou_per_class", [](const IntArray& pred, const IntArray& truth, int classes) {
    return iou_per_class(confusion(to_labels(pred), to_labels(truth), classes));
  });
  m.def("iou_mean", &iou_mean, py::arg("per_class"), py::arg("include_background"));
  m.def("tune_thresholds", [](const std::vector<FloatArray>& scores, const std::vector<IntArray>& truths) {
    std::vector<LabelMap> labels;
    for (const auto& t : truths) labels.push_back(to_labels(t));
    return tune_thresholds(to_tensors(scores), labels).values;
  });
  m.def("wilcoxon_signed_rank", &wilcoxon);

  m.def("average_arith", [](const std::vector<FloatArray>& ms) { return to_array(average_arith(to_tensors(ms))); });
  m.def(
      "average_geo",
      [](const std::vector<FloatArray>& ms, bool renormalize) {
        return to_array(average_geo(to_tensors(ms), renormalize));
      },
      py::arg("members"), py::arg("renormalize") = true);

  m.def("named_topology_ids", &named_topology_ids);
  m.def("named_ensemble_ids", &named_ensemble_ids);
  m.def("ensemble_roster", &ensemble_roster);
  m.def("topology_json", [](const std::string& id, int m_width, int classes) {
    return topology_to_json(named_topology(id, m_width, classes));
  });

  py::class_<Network<float>>(m, "Network")
      .def(py::init([](const std::string& id, int m_width, int classes, std::uint64_t seed) {
             return Network<float>(named_topology(id, m_width, classes), seed);
           }),
           py::arg("topology"), py::arg("m") = 8, py::arg("num_classes") = 12, py::arg("seed") = 0)
      .def_static("load", &load_network)
      .def("save", [](Network<float>& n, const fs::path& p) { save_network(n, p); })
      .def_property_readonly("id", [](const Network<float>& n) { return n.spec().id; })
      .def_property_readonly("num_classes", [](const Network<float>& n) { return n.spec().num_classes; })
      .def("parameter_count", &Network<float>::parameter_count)
      .def(
          "predict",
          [](Network<float>& n, const FloatArray& img, int patch, int stride) {
            return to_array(predict_scores(n, to_tensor(img), patch, stride));
          },
          py::arg("image"), py::arg("patch") = 256, py::arg("stride") = 192,
          "Per-pixel class scores of a raw H x W x 2 image");

  m.def(
      "train",
      [](const std::string& id, int m_width, const std::vector<FloatArray>& images, const std::vector<IntArray>& masks,
         int epochs, int batch_size, std::uint64_t seed, bool augmentation) {
        if (images.size() != masks.size()) throw std::invalid_argument("images and masks differ in count");
        int classes = 2;
        Dataset ds;
        for (const auto& mk : masks)
          for (int v : to_labels(mk).labels) classes = std::max(classes, v + 1);
        for (std::size_t i = 0; i < images.size(); ++i)
          ds.samples.push_back({std::to_string(i), 0, to_tensor(images[i]), one_hot_from_labels(to_labels(masks[i]), classes)});
        std::vector<const Sample*> train;
        for (const auto& s : ds.samples) train.push_back(&s);
        TrainConfig cfg = table_config(id);
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        cfg.augmentation = augmentation;
        py::gil_scoped_release release;
        auto r = train_model(named_topology(id, m_width, classes), train, {}, cfg);
        return std::move(r.network);
      },
      py::arg("topology"), py::arg("m"), py::arg("images"), py::arg("masks"), py::arg("epochs") = 200,
      py::arg("batch_size") = 4, py::arg("seed") = 0, py::arg("augmentation") = false,
      "Trains on all given images with the topology's optimizer settings");

  m.def(
      "synthetic_dataset",
      [](int n, int h, int w, int classes, std::uint64_t seed) {
        const auto ds = generate_synthetic_dataset(n, h, w, classes, seed);
        py::list out;
        for (const auto& s : ds.samples)
          out.append(py::make_tuple(to_array(s.image), to_array(labels_from_one_hot(s.mask)), s.patient_id));
        return out;
      },
      py::arg("num_images"), py::arg("height"), py::arg("width"), py::arg("num_classes"), py::arg("seed") = 0);

  m.def("tsr_read", [](const fs::path& p) { return to_array(tsr_read(p)); });
  m.def("tsr_write", [](const FloatArray& a, const fs::path& p) { tsr_write(to_tensor(a), p); });
  m.def("pgm_read", [](const fs::path& p, int classes) { return to_array(pgm_read(p, classes)); }, py::arg("path"),
        py::arg("num_classes") = 256);
  m.def("pgm_write", [](const IntArray& a, const fs::path& p, int classes) { pgm_write(to_labels(a), p, classes); },
        py::arg("labels"), py::arg("path"), py::arg("num_classes") = 256);

  m.def("gradient_suite", [](std::uint64_t seed) {
    const auto r = run_gradient_suite(seed);
    py::dict d;
    d["passed"] = r.passed;
    d["checked"] = r.checked;
    d["fraction_within"] = r.fraction_within();
    d["max_rel_error"] = r.max_rel_error;
    py::dict blocks;
    for (const auto& b : r.blocks) blocks[py::str(b.block)] = b.report.max_rel_error;
    d["blocks"] = blocks;
    return d;
  }, py::arg("seed") = 0);
  m.def(
      "shape_suite",
      [](int size, int m_width, int classes) {
        const auto r = run_shape_suite(named_topology_ids(), size, m_width, classes);
        py::dict d;
        for (const auto& t : r.topologies) d[py::str(t.id)] = py::make_tuple(t.passed, t.max_sum_error, t.error);
        return d;
      },
      py::arg("size") = 64, py::arg("m") = 8, py::arg("num_classes") = 12);
}
