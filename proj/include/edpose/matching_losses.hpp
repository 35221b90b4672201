#pragma once

#include "edpose/geometry.hpp"
#include "edpose/hk_decoder.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace edpose {

/// Optimal assignment of predictions to ground-truth instances.
struct MatchResult {
    std::vector<std::pair<int, int>> pairs;  // (prediction, gt), ascending gt
    std::vector<int> unmatched_predictions;  // ascending
    double total_cost = 0.0;
};

struct LossWeights {
    double mu = 5.0;      // box L1
    double beta = 2.0;    // box GIoU
    double lambda = 2.0;  // classification
    double omega = 10.0;  // keypoint L1
    double theta = 4.0;   // keypoint OKS
};

/// Total plus the unweighted per-layer terms it was assembled from. Keys are
/// "<layer>.<term>" with layers h0.. and hk0.. and terms l_h_l1, l_h_giou,
/// l_c, l_k_l1, l_k_oks.
struct LossReport {
    ad::Var total;  // 1 x 1 on the tape
    double value = 0.0;
    std::map<std::string, double> terms;
};

/// Exact minimum-cost assignment of all G columns of a P x G matrix (P >= G).
MatchResult hungarian_match(const Mat& cost);

/// Focal loss of a single logit, alpha 0.25 for positives and 0.75 for
/// negatives, gamma 2.
double focal_loss(double logit, bool is_positive);

/// Per-instance keypoint terms: mean L1 over visible keypoints and
/// 1 - similarity. Ground-truth visibility masks both.
std::pair<double, double> keypoint_loss(const KeypointSet& pred, const KeypointSet& gt,
                                        const OksParams& params);

/// Assignment cost between every prediction row and every ground-truth
/// instance, composed from the class, box, and (when keypoints are given)
/// keypoint terms. keypoints, if present, is (P*K) x 2 instance-major.
Mat matching_cost(const Mat& logits, const Mat& boxes, const Mat* keypoints, int n_keypoints,
                  const std::vector<GtInstance>& gt, const LossWeights& w,
                  const std::vector<double>& oks_constants);

/// Deep-supervision loss over both decoder stacks: each layer is matched
/// against the ground truth with its own predictions; human layers contribute
/// class and box terms, joint layers add the keypoint terms; unmatched
/// predictions count as negatives.
LossReport total_loss(ad::Tape& t, const HumanDetections& human_layers,
                      const HKDetections& hk_layers, int n_keypoints,
                      const std::vector<GtInstance>& gt, const LossWeights& w,
                      const std::vector<double>& oks_constants);

namespace ad {

/// Elementwise focal losses of a column of logits.
Var focal_positive(Tape& t, Var logits);
Var focal_negative(Tape& t, Var logits);

}  // namespace ad
}  // namespace edpose
