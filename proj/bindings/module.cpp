#include "edpose/data.hpp"
#include "edpose/errors.hpp"
#include "edpose/geometry.hpp"
#include "edpose/hk_decoder.hpp"
#include "edpose/matching_losses.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

namespace py = pybind11;
using namespace edpose;

namespace {

Mat to_mat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const char* what) {
    if (a.ndim() != 2) throw ShapeError(std::string(what) + " must be 2-d");
    Mat m(a.shape(0), a.shape(1));
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = r(i, j);
    return m;
}

py::array_t<double> from_mat(const Mat& m) {
    py::array_t<double> a({m.rows(), m.cols()});
    auto w = a.mutable_unchecked<2>();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) w(i, j) = m(i, j);
    return a;
}

BoxXYWH to_box(const std::vector<double>& v, const char* what) {
    if (v.size() != 4) throw ShapeError(std::string(what) + " must have 4 entries");
    return {v[0], v[1], v[2], v[3]};
}

}  // namespace

PYBIND11_MODULE(_edpose, m) {
    m.doc() = "Explicit box-detection pose estimation core";

    m.def(
        "box_iou",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            return box_iou(box_to_corners(to_box(a, "box a")),
                           box_to_corners(to_box(b, "box b")));
        },
        py::arg("a"), py::arg("b"),
        "Intersection over union of two (cx, cy, w, h) boxes.");

    m.def(
        "giou",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            return giou(box_to_corners(to_box(a, "box a")),
                        box_to_corners(to_box(b, "box b")));
        },
        py::arg("a"), py::arg("b"),
        "Generalized IoU of two (cx, cy, w, h) boxes, in [-1, 1].");

    m.def(
        "eval_oks",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> pred,
           py::array_t<double, py::array::c_style | py::array::forcecast> gt,
           const std::vector<int>& visibility, const std::vector<double>& constants,
           double scale_sq) {
            KeypointSet p, g;
            p.points = to_mat(pred, "pred keypoints");
            g.points = to_mat(gt, "gt keypoints");
            p.visibility.assign(static_cast<std::size_t>(p.points.rows()), 2);
            g.visibility = visibility;
            OksParams params;
            params.per_keypoint_constants = constants;
            params.scale_sq = scale_sq;
            return eval_oks(p, g, params);
        },
        py::arg("pred"), py::arg("gt"), py::arg("visibility"), py::arg("constants"),
        py::arg("scale_sq"),
        "Object keypoint similarity with squared-distance falloff, masked by gt visibility.");

    m.def(
        "hungarian",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> cost) {
            MatchResult r = hungarian_match(to_mat(cost, "cost"));
            return py::make_tuple(r.pairs, r.unmatched_predictions, r.total_cost);
        },
        py::arg("cost"),
        "Exact minimum-cost assignment of a P x G matrix (P >= G); returns "
        "(pairs, unmatched_predictions, total_cost).");

    m.def("focal", &focal_loss, py::arg("logit"), py::arg("is_positive"),
          "Focal classification loss of one logit.");

    m.def(
        "interaction_mask",
        [](int m_count, int k, const std::string& strategy) {
            MaskStrategy s;
            if (strategy == "ours")
                s = MaskStrategy::Ours;
            else if (strategy == "full")
                s = MaskStrategy::Full;
            else if (strategy == "no_hk")
                s = MaskStrategy::NoHK;
            else if (strategy == "no_hh")
                s = MaskStrategy::NoHH;
            else
                throw ConfigError("unknown mask strategy " + strategy);
            InteractionMask mask = build_interaction_mask(m_count, k, s);
            return py::make_tuple(from_mat(mask.additive), mask.count_allowed());
        },
        py::arg("m"), py::arg("k"), py::arg("strategy"),
        "Additive self-attention mask over m humans with k keypoints each; "
        "returns (matrix, allowed_count).");

    m.def(
        "synth_scene",
        [](std::uint64_t seed, int n_people, int k, int image_size) {
            Rng rng(seed);
            ImageSample s = synth_scene(rng, n_people, k, image_size);

            py::array_t<double> image({s.height, s.width, 3});
            auto w = image.mutable_unchecked<3>();
            for (int y = 0; y < s.height; ++y)
                for (int x = 0; x < s.width; ++x)
                    for (int c = 0; c < 3; ++c) w(y, x, c) = s.image(y * s.width + x, c);

            py::list instances;
            for (const auto& inst : s.instances) {
                py::dict d;
                d["box"] = std::vector<double>{inst.box.cx, inst.box.cy, inst.box.w, inst.box.h};
                d["keypoints"] = from_mat(inst.keypoints.points);
                d["visibility"] = inst.keypoints.visibility;
                instances.append(std::move(d));
            }
            py::dict out;
            out["image"] = std::move(image);
            out["instances"] = std::move(instances);
            return out;
        },
        py::arg("seed"), py::arg("n_people"), py::arg("k") = 17, py::arg("image_size") = 128,
        "Deterministic stick-figure scene: image (h, w, 3) in [0, 1] plus instances "
        "with normalized boxes and keypoints.");

    py::register_exception<Error>(m, "EdPoseError");
}
