#pragma once

#include "edpose/geometry.hpp"

#include <string>
#include <utility>
#include <vector>

namespace edpose {

/// One predicted person with its detection confidence, in normalized
/// coordinates of the image it was predicted on.
struct ScoredInstance {
    double score = 0.0;
    BoxXYWH box;
    KeypointSet keypoints;
};

/// Predictions and ground truth for one image. Pixel dimensions feed the
/// area-range splits (areas are box areas in pixels).
struct EvalImage {
    std::vector<ScoredInstance> predictions;
    std::vector<GtInstance> gt;
    int height = 0;
    int width = 0;
};

struct EvalConfig {
    std::vector<double> oks_thresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                       0.75, 0.80, 0.85, 0.90, 0.95};
    int max_detections = 20;
    double medium_min = 32.0 * 32.0;  // [min, max) pixel box area
    double medium_max = 96.0 * 96.0;
    double large_min = 96.0 * 96.0;
    double large_max = 1e10;
    std::vector<double> oks_constants;  // per keypoint; empty: uniform 0.1
};

struct EvalResult {
    double ap = 0.0;
    double ap50 = 0.0;
    double ap75 = 0.0;
    double ap_medium = 0.0;
    double ap_large = 0.0;
};

/// Average precision over OKS thresholds with greedy per-image matching in
/// descending score order, global score ranking, a monotone precision
/// envelope, and 101-point interpolation. Splits restrict both ground truth
/// and detections to an area range; a split with no ground truth scores 0.
EvalResult evaluate(const std::vector<EvalImage>& images, const EvalConfig& cfg = {});

/// Envelope precision-recall points at one threshold, one per counted
/// detection in global rank order.
std::vector<std::pair<double, double>> pr_curve(const std::vector<EvalImage>& images,
                                                double threshold,
                                                const EvalConfig& cfg = {});

/// Flat {ap, ap50, ap75, ap_m, ap_l} document.
std::string eval_result_json(const EvalResult& r);

}  // namespace edpose
