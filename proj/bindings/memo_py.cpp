// Python bindings for the core operations: scene generation, the network
// (training, prediction, iterative inference, adapters), checkpoints, and the
// benchmark evaluator. Arrays cross the boundary as numpy: images are
// float32 [3,H,W] in [0,1], edge maps uint8 [H,W], tri-state maps uint8 [H,W]
// with 0=background 1=edge 2=masked, probability maps float32 [H,W].

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "memo/checkpoint.hpp"
#include "memo/evaluation.hpp"
#include "memo/image_io.hpp"
#include "memo/inference.hpp"
#include "memo/lora.hpp"
#include "memo/network.hpp"
#include "memo/rng.hpp"
#include "memo/synthdata.hpp"
#include "memo/training.hpp"

namespace py = pybind11;
using namespace memo;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

Tensor image_from_array(const FloatArray& arr) {
  const auto buf = arr.request();
  if (buf.ndim != 3 || buf.shape[0] != 3)
    throw std::invalid_argument("image must be float32 [3,H,W]");
  Tensor t({3, static_cast<int>(buf.shape[1]), static_cast<int>(buf.shape[2])});
  std::memcpy(t.data(), buf.ptr, static_cast<size_t>(t.numel()) * sizeof(float));
  return t;
}

py::array image_to_array(const Tensor& t) {
  py::array_t<float> out({t.dim(0), t.dim(1), t.dim(2)});
  std::memcpy(out.mutable_data(), t.data(),
              static_cast<size_t>(t.numel()) * sizeof(float));
  return out;
}

TriStateEdgeMap tristate_from_array(const ByteArray& arr) {
  const auto buf = arr.request();
  if (buf.ndim != 2) throw std::invalid_argument("edge state map must be uint8 [H,W]");
  TriStateEdgeMap m(static_cast<int>(buf.shape[0]), static_cast<int>(buf.shape[1]));
  const uint8_t* p = static_cast<const uint8_t*>(buf.ptr);
  for (size_t i = 0; i < m.size(); ++i) {
    if (p[i] > 2)
      throw std::invalid_argument("edge states are 0=background, 1=edge, 2=masked");
    m.set_flat(i, static_cast<PixelState>(p[i]));
  }
  return m;
}

BinaryMap binary_from_array(const ByteArray& arr) {
  const auto buf = arr.request();
  if (buf.ndim != 2) throw std::invalid_argument("edge map must be uint8 [H,W]");
  BinaryMap m(static_cast<int>(buf.shape[0]), static_cast<int>(buf.shape[1]));
  const uint8_t* p = static_cast<const uint8_t*>(buf.ptr);
  for (size_t i = 0; i < m.size(); ++i) m.values[i] = p[i] ? 1 : 0;
  return m;
}

py::array binary_to_array(const BinaryMap& m) {
  py::array_t<uint8_t> out({m.height, m.width});
  std::memcpy(out.mutable_data(), m.values.data(), m.values.size());
  return out;
}

ProbabilityMap prob_from_array(const FloatArray& arr) {
  const auto buf = arr.request();
  if (buf.ndim != 2)
    throw std::invalid_argument("probability map must be float32 [H,W]");
  ProbabilityMap m(static_cast<int>(buf.shape[0]), static_cast<int>(buf.shape[1]));
  std::memcpy(m.values.data(), buf.ptr, m.values.size() * sizeof(float));
  return m;
}

py::array prob_to_array(const ProbabilityMap& m) {
  py::array_t<float> out({m.height, m.width});
  std::memcpy(out.mutable_data(), m.values.data(), m.values.size() * sizeof(float));
  return out;
}

UnmaskStrategy parse_strategy(const std::string& s) {
  if (s == "locmax") return UnmaskStrategy::LocMax;
  if (s == "random") return UnmaskStrategy::Random;
  if (s == "topk") return UnmaskStrategy::TopK;
  throw std::invalid_argument("strategy must be locmax, random, or topk");
}

EvalProtocol parse_protocol(const std::string& s) {
  if (s == "seval") return EvalProtocol::Standard;
  if (s == "ceval") return EvalProtocol::Crispness;
  throw std::invalid_argument("protocol must be seval or ceval");
}

SceneConfig scene_config(int width, int height, int min_shapes, int max_shapes,
                         float min_radius, float max_radius, float noise_sigma,
                         float blur_sigma, bool gradient_background, bool invert,
                         uint64_t seed) {
  SceneConfig cfg;
  cfg.width = width;
  cfg.height = height;
  cfg.min_shapes = min_shapes;
  cfg.max_shapes = max_shapes;
  cfg.min_radius = min_radius;
  cfg.max_radius = max_radius;
  cfg.noise_sigma = noise_sigma;
  cfg.blur_sigma = blur_sigma;
  cfg.gradient_background = gradient_background;
  cfg.invert_colors = invert;
  cfg.seed = seed;
  return cfg;
}

std::vector<TrainSample> samples_from_list(const py::list& pairs) {
  std::vector<TrainSample> out;
  out.reserve(pairs.size());
  for (const auto& item : pairs) {
    const auto pair = item.cast<py::tuple>();
    if (pair.size() != 2)
      throw std::invalid_argument("expected (image, edges) pairs");
    out.push_back({image_from_array(pair[0].cast<FloatArray>()),
                   binary_from_array(pair[1].cast<ByteArray>())});
  }
  return out;
}

class PyNetwork {
 public:
  PyNetwork(std::vector<int> channels, int norm_groups, int pe_dim, uint64_t seed) {
    ModelConfig cfg;
    cfg.channels = std::move(channels);
    cfg.norm_groups = norm_groups;
    cfg.pe_dim = pe_dim;
    net_ = std::make_unique<MEMONetwork>(cfg, seed);
  }

  int64_t parameter_count() const { return net_->params().parameter_count(); }
  int64_t trainable_parameter_count() const {
    return net_->params().trainable_parameter_count();
  }
  int downsample_factor() const { return net_->downsample_factor(); }

  py::array predict(const FloatArray& image, py::object edges, float ratio) const {
    const Tensor img = image_from_array(image);
    const TriStateEdgeMap m = edges.is_none()
                                  ? TriStateEdgeMap::all_masked(img.dim(1), img.dim(2))
                                  : tristate_from_array(edges.cast<ByteArray>());
    ProbabilityMap out;
    {
      py::gil_scoped_release release;
      out = net_->predict(img, m, ratio);
    }
    return prob_to_array(out);
  }

  py::array predict_guided(const FloatArray& image, py::object edges, float ratio,
                           float scale) const {
    const Tensor img = image_from_array(image);
    const TriStateEdgeMap m = edges.is_none()
                                  ? TriStateEdgeMap::all_masked(img.dim(1), img.dim(2))
                                  : tristate_from_array(edges.cast<ByteArray>());
    ProbabilityMap out;
    {
      py::gil_scoped_release release;
      out = net_->predict_guided(img, m, ratio, scale);
    }
    return prob_to_array(out);
  }

  py::dict infer(const FloatArray& image, int steps, const std::string& strategy,
                 float scale, float fraction, float threshold, uint64_t seed) const {
    const Tensor img = image_from_array(image);
    InferenceConfig cfg;
    cfg.steps = steps;
    cfg.strategy = parse_strategy(strategy);
    cfg.scale = scale;
    cfg.fraction = fraction;
    cfg.threshold = threshold;
    cfg.seed = seed;
    InferenceResult res;
    {
      py::gil_scoped_release release;
      res = run_inference(*net_, img, cfg);
    }
    py::dict out;
    out["edges"] = binary_to_array(res.edges);
    out["probabilities"] = prob_to_array(res.probabilities);
    out["masked_per_step"] = py::cast(res.trace.masked_per_step);
    out["forward_passes"] = res.trace.forward_passes;
    return out;
  }

  py::dict train(const py::list& pairs, int epochs, int batch_size, float lr,
                 float weight_decay, py::object mask_ratio, float condition_drop,
                 const std::string& normalization, uint64_t seed, int threads,
                 bool augment) {
    const std::vector<TrainSample> data = samples_from_list(pairs);
    TrainingConfig cfg;
    cfg.batch_size = batch_size;
    cfg.learning_rate = lr;
    cfg.epochs = epochs;
    cfg.weight_decay = weight_decay;
    if (!mask_ratio.is_none()) {
      cfg.mask_ratio.kind = MaskRatioDistribution::Kind::Fixed;
      cfg.mask_ratio.fixed_value = mask_ratio.cast<float>();
    }
    cfg.condition_drop_prob = condition_drop;
    if (normalization == "ratio_only")
      cfg.loss_normalization = LossNormalization::RatioOnly;
    else if (normalization != "per_pixel")
      throw std::invalid_argument("normalization must be per_pixel or ratio_only");
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.augment = augment;
    AdamW opt{AdamWConfig{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                          cfg.adam_eps, cfg.weight_decay}};
    TrainReport report;
    {
      py::gil_scoped_release release;
      report = memo::train(*net_, data, cfg, opt);
    }
    py::dict out;
    out["epoch_mean_losses"] = py::cast(report.epoch_mean_losses);
    out["total_steps"] = report.total_steps;
    out["final_loss"] = report.final_loss;
    return out;
  }

  void save(const std::string& path) const { save_checkpoint(net_->params(), path); }
  void load(const std::string& path) { load_network(*net_, path); }

  void lora_inject(int rank, float alpha) { memo::lora_inject(*net_, rank, alpha); }
  bool has_lora() const { return memo::has_lora(*net_); }
  int64_t lora_parameter_count() const { return memo::lora_parameter_count(*net_); }

 private:
  std::unique_ptr<MEMONetwork> net_;
};

}  // namespace

PYBIND11_MODULE(_memo, m) {
  m.doc() = "masked-edge prediction core";

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<std::vector<int>, int, int, uint64_t>(),
           py::arg("channels") = std::vector<int>{32, 64, 128, 192},
           py::arg("norm_groups") = 8, py::arg("pe_dim") = 64,
           py::arg("seed") = 0x3ede5)
      .def_property_readonly("parameter_count", &PyNetwork::parameter_count)
      .def_property_readonly("trainable_parameter_count",
                             &PyNetwork::trainable_parameter_count)
      .def_property_readonly("downsample_factor", &PyNetwork::downsample_factor)
      .def("predict", &PyNetwork::predict, py::arg("image"),
           py::arg("edges") = py::none(), py::arg("ratio") = 1.f)
      .def("predict_guided", &PyNetwork::predict_guided, py::arg("image"),
           py::arg("edges") = py::none(), py::arg("ratio") = 1.f,
           py::arg("scale") = 1.f)
      .def("infer", &PyNetwork::infer, py::arg("image"), py::arg("steps") = 10,
           py::arg("strategy") = "locmax", py::arg("scale") = 1.f,
           py::arg("fraction") = 0.f, py::arg("threshold") = 0.5f,
           py::arg("seed") = 0)
      .def("train", &PyNetwork::train, py::arg("samples"), py::arg("epochs") = 1,
           py::arg("batch_size") = 16, py::arg("lr") = 5e-5f,
           py::arg("weight_decay") = 0.01f, py::arg("mask_ratio") = py::none(),
           py::arg("condition_drop") = 0.1f, py::arg("normalization") = "per_pixel",
           py::arg("seed") = 0, py::arg("threads") = 1, py::arg("augment") = true)
      .def("save", &PyNetwork::save, py::arg("path"))
      .def("load", &PyNetwork::load, py::arg("path"))
      .def("lora_inject", &PyNetwork::lora_inject, py::arg("rank"), py::arg("alpha"))
      .def("has_lora", &PyNetwork::has_lora)
      .def("lora_parameter_count", &PyNetwork::lora_parameter_count);

  m.def(
      "generate_scene",
      [](uint64_t seed, int width, int height, int min_shapes, int max_shapes,
         float min_radius, float max_radius, float noise_sigma, float blur_sigma,
         bool gradient_background, bool invert) {
        const SceneConfig cfg =
            scene_config(width, height, min_shapes, max_shapes, min_radius,
                         max_radius, noise_sigma, blur_sigma, gradient_background,
                         invert, seed);
        Rng rng(seed);
        const Scene scene = generate_scene(cfg, rng);
        return py::make_tuple(image_to_array(scene.image),
                              binary_to_array(scene_edges(scene)));
      },
      py::arg("seed"), py::arg("width") = 64, py::arg("height") = 64,
      py::arg("min_shapes") = 3, py::arg("max_shapes") = 7,
      py::arg("min_radius") = 5.f, py::arg("max_radius") = 20.f,
      py::arg("noise_sigma") = 0.02f, py::arg("blur_sigma") = 0.8f,
      py::arg("gradient_background") = true, py::arg("invert") = false,
      "Render one synthetic scene; returns (image, edges).");

  m.def(
      "build_dataset",
      [](int n, const std::string& out_dir, uint64_t seed, int threads, int width,
         int height, bool invert) {
        SceneConfig cfg = scene_config(width, height, 3, 7, 5.f, 20.f, 0.02f, 0.8f,
                                       true, invert, seed);
        py::gil_scoped_release release;
        const DatasetManifest manifest = memo::build_dataset(n, cfg, out_dir, threads);
        return manifest.entries.size();
      },
      py::arg("n"), py::arg("out_dir"), py::arg("seed") = 0, py::arg("threads") = 1,
      py::arg("width") = 64, py::arg("height") = 64, py::arg("invert") = false,
      "Write images/, edges/, and manifest.txt under out_dir; returns the count.");

  m.def(
      "load_dataset",
      [](const std::string& dir) {
        const DatasetManifest manifest = read_manifest(dir + "/manifest.txt");
        py::list out;
        for (const ManifestEntry& e : manifest.entries) {
          const Tensor img = read_image_tensor(dir + "/" + e.image_path);
          const BinaryMap edges = read_binary_map(dir + "/" + e.edge_path);
          out.append(py::make_tuple(image_to_array(img), binary_to_array(edges)));
        }
        return out;
      },
      py::arg("dir"), "Read a generated dataset back as (image, edges) pairs.");

  m.def(
      "ods_ois",
      [](const py::list& preds, const py::list& gts, const std::string& protocol,
         double tolerance_fraction, int jobs) {
        std::vector<ProbabilityMap> p;
        std::vector<BinaryMap> g;
        for (const auto& item : preds) p.push_back(prob_from_array(item.cast<FloatArray>()));
        for (const auto& item : gts) g.push_back(binary_from_array(item.cast<ByteArray>()));
        EvalReport rep;
        {
          py::gil_scoped_release release;
          rep = memo::ods_ois(p, g, default_thresholds(), parse_protocol(protocol),
                              tolerance_fraction, jobs);
        }
        py::dict out;
        out["ods"] = rep.ods;
        out["ods_threshold"] = rep.ods_threshold;
        out["ois"] = rep.ois;
        out["crispness"] = rep.crispness;
        return out;
      },
      py::arg("preds"), py::arg("gts"), py::arg("protocol") = "seval",
      py::arg("tolerance_fraction") = 0.0075, py::arg("jobs") = 1,
      "Benchmark a set of probability maps against binary ground truth.");

  m.def(
      "match_edges",
      [](const ByteArray& pred, const ByteArray& gt, double tol_px) {
        const MatchCounts c =
            memo::match_edges(binary_from_array(pred), binary_from_array(gt), tol_px);
        return py::make_tuple(c.true_positives, c.false_positives, c.false_negatives);
      },
      py::arg("pred"), py::arg("gt"), py::arg("tol_px"),
      "One-to-one pixel matching; returns (tp, fp, fn).");

  m.def(
      "average_crispness",
      [](const FloatArray& p, float threshold) {
        return memo::average_crispness(prob_from_array(p), threshold);
      },
      py::arg("probabilities"), py::arg("threshold") = 0.5f);

  m.def(
      "nms_thin",
      [](const FloatArray& p) { return prob_to_array(memo::nms_thin(prob_from_array(p))); },
      py::arg("probabilities"));

  m.def("edge_tolerance_px", &edge_tolerance_px, py::arg("height"), py::arg("width"),
        py::arg("fraction") = 0.0075);
}
