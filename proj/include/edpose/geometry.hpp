#pragma once

#include "edpose/tensor.hpp"

#include <vector>

namespace edpose {

/// Center-parameterized box in normalized image fractions. The one
/// representation used for humans and for keypoints alike.
struct BoxXYWH {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
};

struct Corners {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;
};

/// K ordered keypoints for one person. Visibility follows the COCO
/// convention: 0 unlabeled, 1 labeled but occluded, 2 labeled and visible.
struct KeypointSet {
    Mat points;  // K x 2, normalized (x, y)
    std::vector<int> visibility;
    int size() const { return static_cast<int>(points.rows()); }
};

struct OksParams {
    std::vector<double> per_keypoint_constants;  // k_i > 0
    double scale_sq = 0.0;                       // object area in normalized units
};

/// One annotated person: box plus keypoints, all in normalized coordinates.
struct GtInstance {
    BoxXYWH box;
    KeypointSet keypoints;
    int visible_count() const;
};

Corners box_to_corners(const BoxXYWH& b);
BoxXYWH corners_to_box(const Corners& c);

double box_iou(const Corners& a, const Corners& b);
double giou(const Corners& a, const Corners& b);

/// Similarity used inside the keypoint loss: L1 distance in the exponent.
double oks_similarity(const KeypointSet& pred, const KeypointSet& gt, const OksParams& p);

/// Similarity used by the evaluator: squared Euclidean distance in the exponent.
double eval_oks(const KeypointSet& pred, const KeypointSet& gt, const OksParams& p);

/// Falloff constants (2 sigma) for the 17 COCO keypoints.
std::vector<double> coco_oks_constants();
std::vector<double> uniform_oks_constants(int num_keypoints, double value = 0.1);

namespace ad {

/// N x 4 (cx, cy, w, h) -> N x 4 (x1, y1, x2, y2).
Var boxes_to_corners(Tape& t, Var boxes);

/// Per-row GIoU of two N x 4 corner-box stacks -> N x 1.
Var giou_rowwise(Tape& t, Var a, Var b);

/// Per-row L1 distance of two N x C stacks -> N x 1.
Var l1_rowwise(Tape& t, Var a, Var b);

/// Differentiable counterpart of oks_similarity for one instance.
/// pred is K x 2 on the tape; gt and visibility come from ground truth.
Var oks_similarity(Tape& t, Var pred, const KeypointSet& gt, const OksParams& p);

}  // namespace ad
}  // namespace edpose
