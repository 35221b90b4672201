#include "edpose/matching_losses.hpp"

#include "edpose/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace edpose {

MatchResult hungarian_match(const Mat& cost) {
    const int P = static_cast<int>(cost.rows());
    const int G = static_cast<int>(cost.cols());
    if (P < G) throw ShapeError("hungarian_match: fewer predictions than ground truth");
    if (!cost.allFinite()) throw DomainError("hungarian_match: non-finite cost entry");

    MatchResult res;
    if (G == 0) {
        for (int j = 0; j < P; ++j) res.unmatched_predictions.push_back(j);
        return res;
    }

    // Shortest augmenting path with dual potentials; rows of the internal
    // problem are ground-truth instances, columns are predictions.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(G) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(P) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(P) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(P) + 1, 0);
    for (int i = 1; i <= G; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(P) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(P) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = match[static_cast<std::size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= P; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(j - 1, i0 - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= P; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> pred_of_gt(static_cast<std::size_t>(G), -1);
    for (int j = 1; j <= P; ++j)
        if (match[static_cast<std::size_t>(j)] != 0)
            pred_of_gt[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
    std::vector<char> taken(static_cast<std::size_t>(P), 0);
    for (int g = 0; g < G; ++g) {
        const int p = pred_of_gt[static_cast<std::size_t>(g)];
        res.pairs.emplace_back(p, g);
        res.total_cost += cost(p, g);
        taken[static_cast<std::size_t>(p)] = 1;
    }
    for (int j = 0; j < P; ++j)
        if (!taken[static_cast<std::size_t>(j)]) res.unmatched_predictions.push_back(j);
    return res;
}

double focal_loss(double logit, bool is_positive) {
    if (!std::isfinite(logit)) throw DomainError("focal_loss: non-finite logit");
    const double p = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                                  : std::exp(logit) / (1.0 + std::exp(logit));
    const double pt = is_positive ? p : 1.0 - p;
    const double alpha = is_positive ? 0.25 : 0.75;
    return -alpha * (1.0 - pt) * (1.0 - pt) * std::log(std::max(pt, 1e-12));
}

std::pair<double, double> keypoint_loss(const KeypointSet& pred, const KeypointSet& gt,
                                        const OksParams& params) {
    const double sim = oks_similarity(pred, gt, params);
    double l1 = 0.0;
    int nv = 0;
    for (int i = 0; i < gt.size(); ++i) {
        if (gt.visibility[static_cast<std::size_t>(i)] <= 0) continue;
        l1 += std::fabs(pred.points(i, 0) - gt.points(i, 0)) +
              std::fabs(pred.points(i, 1) - gt.points(i, 1));
        ++nv;
    }
    return {l1 / nv, 1.0 - sim};
}

Mat matching_cost(const Mat& logits, const Mat& boxes, const Mat* keypoints, int n_keypoints,
                  const std::vector<GtInstance>& gt, const LossWeights& w,
                  const std::vector<double>& oks_constants) {
    if (gt.empty()) throw DomainError("matching_cost: no ground truth");
    const int P = static_cast<int>(logits.rows());
    const int G = static_cast<int>(gt.size());
    if (boxes.rows() != P) throw ShapeError("matching_cost: logits/boxes row mismatch");
    if (keypoints && keypoints->rows() != static_cast<Eigen::Index>(P) * n_keypoints)
        throw ShapeError("matching_cost: keypoint rows must be P*K");

    Mat cost(P, G);
    for (int p = 0; p < P; ++p) {
        const double cls = focal_loss(logits(p, 0), true) - focal_loss(logits(p, 0), false);
        const BoxXYWH pb{boxes(p, 0), boxes(p, 1), boxes(p, 2), boxes(p, 3)};
        const Corners pc = box_to_corners(pb);
        KeypointSet pk;
        if (keypoints) {
            pk.points = keypoints->block(static_cast<Eigen::Index>(p) * n_keypoints, 0,
                                         n_keypoints, 2);
            pk.visibility.assign(static_cast<std::size_t>(n_keypoints), 2);
        }
        for (int g = 0; g < G; ++g) {
            const GtInstance& inst = gt[static_cast<std::size_t>(g)];
            const double l1 = std::fabs(pb.cx - inst.box.cx) + std::fabs(pb.cy - inst.box.cy) +
                              std::fabs(pb.w - inst.box.w) + std::fabs(pb.h - inst.box.h);
            const double g1 = 1.0 - giou(pc, box_to_corners(inst.box));
            double c = w.lambda * cls + w.mu * l1 + w.beta * g1;
            if (keypoints && inst.visible_count() > 0) {
                const OksParams params{oks_constants, inst.box.w * inst.box.h};
                const auto [kl1, koks] = keypoint_loss(pk, inst.keypoints, params);
                c += w.omega * kl1 + w.theta * koks;
            }
            cost(p, g) = c;
        }
    }
    return cost;
}

namespace ad {

Var focal_positive(Tape& t, Var logits) {
    Var nx = t.neg(logits);
    return t.scale(t.mul(t.square(t.sigmoid(nx)), t.softplus(nx)), 0.25);
}

Var focal_negative(Tape& t, Var logits) {
    return t.scale(t.mul(t.square(t.sigmoid(logits)), t.softplus(logits)), 0.75);
}

}  // namespace ad

namespace {

struct LayerAccum {
    ad::Tape& t;
    LossReport& rep;
    ad::Var total;

    void add(const std::string& key, ad::Var term, double weight) {
        rep.terms[key] = t.val(term)(0, 0);
        total = t.add(total, t.scale(term, weight));
    }
};

void layer_loss(LayerAccum& acc, const std::string& prefix, ad::Var logits, ad::Var boxes,
                const ad::Var* kp_boxes, int n_keypoints, const std::vector<GtInstance>& gt,
                const LossWeights& w, const std::vector<double>& oks_constants) {
    ad::Tape& t = acc.t;
    const int G = static_cast<int>(gt.size());
    const int P = static_cast<int>(t.val(logits).rows());
    const ad::Var zero = t.constant(Mat::Zero(1, 1));

    MatchResult match;
    if (G > 0) {
        Mat kp_centers;
        const Mat* kp_ptr = nullptr;
        if (kp_boxes) {
            kp_centers = t.val(*kp_boxes).leftCols(2);
            kp_ptr = &kp_centers;
        }
        match = hungarian_match(
            matching_cost(t.val(logits), t.val(boxes), kp_ptr, n_keypoints, gt, w, oks_constants));
    } else {
        for (int p = 0; p < P; ++p) match.unmatched_predictions.push_back(p);
    }
    const double denom = static_cast<double>(std::max(1, G));

    std::vector<int> matched;
    matched.reserve(match.pairs.size());
    for (const auto& pr : match.pairs) matched.push_back(pr.first);

    ad::Var lc = zero;
    if (!matched.empty())
        lc = t.add(lc, t.sum_all(ad::focal_positive(t, t.gather_rows(logits, matched))));
    if (!match.unmatched_predictions.empty())
        lc = t.add(lc, t.sum_all(ad::focal_negative(
                           t, t.gather_rows(logits, match.unmatched_predictions))));
    acc.add(prefix + ".l_c", t.scale(lc, 1.0 / denom), w.lambda);

    if (!matched.empty()) {
        Mat gt_boxes(static_cast<Eigen::Index>(match.pairs.size()), 4);
        for (std::size_t i = 0; i < match.pairs.size(); ++i) {
            const BoxXYWH& b = gt[static_cast<std::size_t>(match.pairs[i].second)].box;
            gt_boxes.row(static_cast<Eigen::Index>(i)) << b.cx, b.cy, b.w, b.h;
        }
        ad::Var pb = t.gather_rows(boxes, matched);
        ad::Var gb = t.constant(gt_boxes);
        acc.add(prefix + ".l_h_l1", t.scale(t.sum_all(t.abs(t.sub(pb, gb))), 1.0 / denom), w.mu);
        ad::Var gv = ad::giou_rowwise(t, ad::boxes_to_corners(t, pb), ad::boxes_to_corners(t, gb));
        acc.add(prefix + ".l_h_giou",
                t.scale(t.sum_all(t.affine(gv, -1.0, 1.0)), 1.0 / denom), w.beta);
    } else {
        acc.add(prefix + ".l_h_l1", zero, w.mu);
        acc.add(prefix + ".l_h_giou", zero, w.beta);
    }

    if (kp_boxes) {
        ad::Var l1_sum = zero;
        ad::Var oks_sum = zero;
        int counted = 0;
        if (!matched.empty()) {
            ad::Var centers = t.slice_cols(*kp_boxes, 0, 2);
            for (const auto& [p, g] : match.pairs) {
                const GtInstance& inst = gt[static_cast<std::size_t>(g)];
                const int nv = inst.visible_count();
                if (nv == 0) continue;
                ad::Var pk = t.slice_rows(centers, p * n_keypoints, n_keypoints);
                Mat vw(n_keypoints, 1);
                for (int i = 0; i < n_keypoints; ++i)
                    vw(i, 0) = inst.keypoints.visibility[static_cast<std::size_t>(i)] > 0
                                   ? 1.0 / nv
                                   : 0.0;
                ad::Var diff = t.row_sums(t.abs(t.sub(pk, t.constant(inst.keypoints.points))));
                l1_sum = t.add(l1_sum, t.sum_all(t.rows_scale(diff, t.constant(vw))));
                const OksParams params{oks_constants, inst.box.w * inst.box.h};
                ad::Var sim = ad::oks_similarity(t, pk, inst.keypoints, params);
                oks_sum = t.add(oks_sum, t.affine(sim, -1.0, 1.0));
                ++counted;
            }
        }
        const double kd = static_cast<double>(std::max(1, counted));
        acc.add(prefix + ".l_k_l1", t.scale(l1_sum, 1.0 / kd), w.omega);
        acc.add(prefix + ".l_k_oks", t.scale(oks_sum, 1.0 / kd), w.theta);
    }
}

}  // namespace

LossReport total_loss(ad::Tape& t, const HumanDetections& human_layers,
                      const HKDetections& hk_layers, int n_keypoints,
                      const std::vector<GtInstance>& gt, const LossWeights& w,
                      const std::vector<double>& oks_constants) {
    LossReport rep;
    LayerAccum acc{t, rep, t.constant(Mat::Zero(1, 1))};
    for (std::size_t l = 0; l < human_layers.logits.size(); ++l)
        layer_loss(acc, "h" + std::to_string(l), human_layers.logits[l], human_layers.boxes[l],
                   nullptr, n_keypoints, gt, w, oks_constants);
    for (std::size_t l = 0; l < hk_layers.logits.size(); ++l)
        layer_loss(acc, "hk" + std::to_string(l), hk_layers.logits[l], hk_layers.human_boxes[l],
                   &hk_layers.keypoint_boxes[l], n_keypoints, gt, w, oks_constants);
    rep.total = acc.total;
    rep.value = t.val(acc.total)(0, 0);
    return rep;
}

}  // namespace edpose
