#include "edpose/geometry.hpp"

#include "edpose/errors.hpp"

#include <algorithm>
#include <cmath>

namespace edpose {

namespace {

double checked_area(const Corners& c, const char* who) {
    const double a = (c.x2 - c.x1) * (c.y2 - c.y1);
    if (!(a > 0.0)) throw DomainError(std::string(who) + ": box has non-positive area");
    return a;
}

struct OverlapTerms {
    double inter;
    double uni;
    double enclose;
};

OverlapTerms overlap_terms(const Corners& a, const Corners& b, const char* who) {
    const double area_a = checked_area(a, who);
    const double area_b = checked_area(b, who);
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = area_a + area_b - inter;
    const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    return {inter, uni, cw * ch};
}

void check_oks_inputs(const KeypointSet& pred, const KeypointSet& gt, const OksParams& p,
                      const char* who) {
    const int k = gt.size();
    if (pred.size() != k || static_cast<int>(gt.visibility.size()) != k)
        throw ShapeError(std::string(who) + ": keypoint count mismatch");
    if (static_cast<int>(p.per_keypoint_constants.size()) != k)
        throw ShapeError(std::string(who) + ": falloff constant count mismatch");
    if (!(p.scale_sq > 0.0)) throw DomainError(std::string(who) + ": scale must be positive");
    for (double ki : p.per_keypoint_constants)
        if (!(ki > 0.0)) throw DomainError(std::string(who) + ": falloff constants must be positive");
    bool any = false;
    for (int v : gt.visibility) any = any || v > 0;
    if (!any) throw DomainError(std::string(who) + ": no visible keypoints");
}

}  // namespace

int GtInstance::visible_count() const {
    int n = 0;
    for (int v : keypoints.visibility)
        if (v > 0) ++n;
    return n;
}

Corners box_to_corners(const BoxXYWH& b) {
    return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

BoxXYWH corners_to_box(const Corners& c) {
    return {(c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1};
}

double box_iou(const Corners& a, const Corners& b) {
    const auto t = overlap_terms(a, b, "box_iou");
    return t.inter / t.uni;
}

double giou(const Corners& a, const Corners& b) {
    const auto t = overlap_terms(a, b, "giou");
    return t.inter / t.uni - (t.enclose - t.uni) / t.enclose;
}

namespace {

double oks_impl(const KeypointSet& pred, const KeypointSet& gt, const OksParams& p,
                bool squared, const char* who) {
    check_oks_inputs(pred, gt, p, who);
    double acc = 0.0;
    int visible = 0;
    for (int i = 0; i < gt.size(); ++i) {
        if (gt.visibility[static_cast<std::size_t>(i)] <= 0) continue;
        ++visible;
        const double dx = pred.points(i, 0) - gt.points(i, 0);
        const double dy = pred.points(i, 1) - gt.points(i, 1);
        const double d = squared ? dx * dx + dy * dy : std::fabs(dx) + std::fabs(dy);
        const double ki = p.per_keypoint_constants[static_cast<std::size_t>(i)];
        acc += std::exp(-d / (2.0 * p.scale_sq * ki * ki));
    }
    return acc / visible;
}

}  // namespace

double oks_similarity(const KeypointSet& pred, const KeypointSet& gt, const OksParams& p) {
    return oks_impl(pred, gt, p, false, "oks_similarity");
}

double eval_oks(const KeypointSet& pred, const KeypointSet& gt, const OksParams& p) {
    return oks_impl(pred, gt, p, true, "eval_oks");
}

std::vector<double> coco_oks_constants() {
    const double sigmas[17] = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
                               0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};
    std::vector<double> k(17);
    for (int i = 0; i < 17; ++i) k[static_cast<std::size_t>(i)] = 2.0 * sigmas[i];
    return k;
}

std::vector<double> uniform_oks_constants(int num_keypoints, double value) {
    if (num_keypoints <= 0) throw DomainError("uniform_oks_constants: need at least one keypoint");
    if (!(value > 0.0)) throw DomainError("uniform_oks_constants: constant must be positive");
    return std::vector<double>(static_cast<std::size_t>(num_keypoints), value);
}

namespace ad {

namespace {

Var vmax(Tape& t, Var p, Var q) { return t.add(q, t.relu(t.sub(p, q))); }
Var vmin(Tape& t, Var p, Var q) { return t.sub(p, t.relu(t.sub(p, q))); }

}  // namespace

Var boxes_to_corners(Tape& t, Var boxes) {
    Var cx = t.slice_cols(boxes, 0, 1);
    Var cy = t.slice_cols(boxes, 1, 1);
    Var hw = t.scale(t.slice_cols(boxes, 2, 1), 0.5);
    Var hh = t.scale(t.slice_cols(boxes, 3, 1), 0.5);
    Var tl = t.concat_cols(t.sub(cx, hw), t.sub(cy, hh));
    Var br = t.concat_cols(t.add(cx, hw), t.add(cy, hh));
    return t.concat_cols(tl, br);
}

Var giou_rowwise(Tape& t, Var a, Var b) {
    Var ax1 = t.slice_cols(a, 0, 1), ay1 = t.slice_cols(a, 1, 1);
    Var ax2 = t.slice_cols(a, 2, 1), ay2 = t.slice_cols(a, 3, 1);
    Var bx1 = t.slice_cols(b, 0, 1), by1 = t.slice_cols(b, 1, 1);
    Var bx2 = t.slice_cols(b, 2, 1), by2 = t.slice_cols(b, 3, 1);

    Var iw = t.relu(t.sub(vmin(t, ax2, bx2), vmax(t, ax1, bx1)));
    Var ih = t.relu(t.sub(vmin(t, ay2, by2), vmax(t, ay1, by1)));
    Var inter = t.mul(iw, ih);

    Var area_a = t.mul(t.sub(ax2, ax1), t.sub(ay2, ay1));
    Var area_b = t.mul(t.sub(bx2, bx1), t.sub(by2, by1));
    Var uni = t.sub(t.add(area_a, area_b), inter);

    Var cw = t.sub(vmax(t, ax2, bx2), vmin(t, ax1, bx1));
    Var ch = t.sub(vmax(t, ay2, by2), vmin(t, ay1, by1));
    Var enclose = t.mul(cw, ch);

    Var iou = t.div(inter, uni);
    return t.sub(iou, t.div(t.sub(enclose, uni), enclose));
}

Var l1_rowwise(Tape& t, Var a, Var b) { return t.row_sums(t.abs(t.sub(a, b))); }

Var oks_similarity(Tape& t, Var pred, const KeypointSet& gt, const OksParams& p) {
    check_oks_inputs({t.val(pred), gt.visibility}, gt, p, "oks_similarity");
    const int k = gt.size();
    Mat inv_falloff(k, 1);
    Mat vis_weight = Mat::Zero(k, 1);
    int visible = 0;
    for (int i = 0; i < k; ++i)
        if (gt.visibility[static_cast<std::size_t>(i)] > 0) ++visible;
    for (int i = 0; i < k; ++i) {
        const double ki = p.per_keypoint_constants[static_cast<std::size_t>(i)];
        inv_falloff(i, 0) = 1.0 / (2.0 * p.scale_sq * ki * ki);
        if (gt.visibility[static_cast<std::size_t>(i)] > 0) vis_weight(i, 0) = 1.0 / visible;
    }
    Var d = l1_rowwise(t, pred, t.constant(gt.points));
    Var sim = t.exp(t.neg(t.rows_scale(d, t.constant(inv_falloff))));
    return t.sum_all(t.rows_scale(sim, t.constant(vis_weight)));
}

}  // namespace ad
}  // namespace edpose
