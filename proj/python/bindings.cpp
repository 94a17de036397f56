#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tdseg/anchors.hpp"
#include "tdseg/commands.hpp"
#include "tdseg/data.hpp"
#include "tdseg/metrics.hpp"
#include "tdseg/model.hpp"
#include "tdseg/train.hpp"

namespace py = pybind11;
using namespace tdseg;

namespace {

Tensor tensor_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 4) throw std::invalid_argument("expected a 4-d array (n, c, h, w)");
  Shape s{(int)a.shape(0), (int)a.shape(1), (int)a.shape(2), (int)a.shape(3)};
  std::vector<double> data(a.data(), a.data() + s.numel());
  return Tensor::from_data(s, std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  const Shape s = t.shape();
  py::array_t<double> a({s.n, s.c, s.h, s.w});
  std::copy(t.value().begin(), t.value().end(), a.mutable_data());
  return a;
}

}  // namespace

PYBIND11_MODULE(_tdseg, m) {
  m.doc() = "native core: gated two-pass segmentation operations";

  m.def(
      "conv2d",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
         py::array_t<double, py::array::c_style | py::array::forcecast> w, int stride, int pad,
         int dil) {
        Tensor xt = tensor_from_array(x);
        Tensor wt = tensor_from_array(w);
        return array_from_tensor(conv2d(xt, wt, Tensor(), stride, pad, dil));
      },
      py::arg("x"), py::arg("w"), py::arg("stride") = 1, py::arg("pad") = 0, py::arg("dil") = 1,
      "dense 2-d convolution, kernel layout (out, in, kh, kw)");

  m.def("maxpool2d",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x, int k, int stride) {
          auto r = maxpool2d(tensor_from_array(x), k, stride);
          return py::make_tuple(array_from_tensor(r.out), *r.argmax);
        });

  m.def("relu", [](py::array_t<double, py::array::c_style | py::array::forcecast> x) {
    return array_from_tensor(relu(tensor_from_array(x)));
  });

  m.def("softmax_channel", [](py::array_t<double, py::array::c_style | py::array::forcecast> x) {
    return array_from_tensor(softmax_channel(tensor_from_array(x)));
  });

  m.def("upsample2x", [](py::array_t<double, py::array::c_style | py::array::forcecast> x) {
    return array_from_tensor(upsample2x(tensor_from_array(x)));
  });

  m.def(
      "iou",
      [](double ax0, double ay0, double ax1, double ay1, double bx0, double by0, double bx1,
         double by1) { return iou(Box{ax0, ay0, ax1, ay1}, Box{bx0, by0, bx1, by1}); },
      "intersection over union of two half-open boxes");

  m.def(
      "assign_targets",
      [](const std::vector<std::array<double, 4>>& anchors,
         const std::vector<std::array<double, 4>>& gt_boxes, const std::vector<int>& gt_classes,
         double theta_pos, double theta_neg) {
        std::vector<Box> a;
        for (const auto& b : anchors) a.push_back({b[0], b[1], b[2], b[3]});
        std::vector<GtBox> g;
        for (size_t i = 0; i < gt_boxes.size(); ++i)
          g.push_back({{gt_boxes[i][0], gt_boxes[i][1], gt_boxes[i][2], gt_boxes[i][3]},
                       gt_classes[i]});
        LossConfig cfg;
        cfg.theta_pos = theta_pos;
        cfg.theta_neg = theta_neg;
        return assign_targets(a, g, cfg);
      },
      py::arg("anchors"), py::arg("gt_boxes"), py::arg("gt_classes"), py::arg("theta_pos") = 0.5,
      py::arg("theta_neg") = 0.3);

  m.def("mean_iou", [](const std::vector<int>& pred, const std::vector<int>& gt, int classes) {
    std::vector<uint8_t> g(gt.begin(), gt.end());
    return mean_iou(pred, g, classes);
  });
  m.def("mean_pixel_accuracy",
        [](const std::vector<int>& pred, const std::vector<int>& gt, int classes) {
          std::vector<uint8_t> g(gt.begin(), gt.end());
          return mean_pixel_accuracy(pred, g, classes);
        });

  m.def(
      "receptive_field",
      [](const std::string& config_text, const std::string& layer) {
        NetworkSpec spec = parse_network_config(config_text);
        RfGeometry rf = receptive_field(spec, layer);
        return py::make_tuple(rf.size, rf.jump, rf.offset);
      },
      "(size, jump, offset) of a named layer in an architecture config");

  m.def(
      "synth_dataset",
      [](const std::string& out_dir, uint64_t seed, int n, int n_val, int canvas, int classes) {
        RunConfig cfg;
        cfg.command = "synth";
        cfg.out_dir = out_dir;
        cfg.seed = seed;
        cfg.n_train = n;
        cfg.n_val = n_val;
        cfg.canvas = canvas;
        cfg.classes = classes;
        cmd_synth(cfg);
      },
      py::arg("out_dir"), py::arg("seed") = 7, py::arg("n") = 50, py::arg("n_val") = 10,
      py::arg("canvas") = 64, py::arg("classes") = 4);

  // one forward pass of an untrained (or checkpointed) model; returns the
  // predicted mask for a synthetic sample, mainly a smoke-test surface
  m.def(
      "forward_predict",
      [](const std::string& arch_path, const std::string& data_dir, int sample_index,
         const std::string& ckpt_path, uint64_t seed) {
        Model model;
        model.spec = load_network_config(arch_path);
        model.cfg.classes = 4;
        model.init_params(seed, true);
        if (!ckpt_path.empty()) restore_params(load_checkpoint(ckpt_path), model.params);
        TrainDataset data = load_dataset(data_dir);
        Sample s = eval_transform(data.val.at(sample_index), data.target, data.mean);
        std::vector<const Sample*> ptrs = {&s};
        auto full = model.forward_full(to_input_tensor(ptrs, data.mean));
        auto mask = predict_mask(full.seg_logits);
        py::array_t<int> out({data.target, data.target});
        std::copy(mask.begin(), mask.end(), out.mutable_data());
        return out;
      },
      py::arg("arch_path"), py::arg("data_dir"), py::arg("sample_index") = 0,
      py::arg("ckpt_path") = "", py::arg("seed") = 7);
}
