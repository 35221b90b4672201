#include "edpose/eval.hpp"

#include "edpose/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace edpose {

namespace {

void check_config(const EvalConfig& cfg) {
    if (cfg.oks_thresholds.empty()) throw ConfigError("eval: need at least one threshold");
    double prev = 0.0;
    for (double t : cfg.oks_thresholds) {
        if (!(t > 0.0) || !(t < 1.0))
            throw ConfigError("eval: thresholds must lie strictly inside (0, 1)");
        if (t <= prev && prev != 0.0)
            throw ConfigError("eval: thresholds must be strictly increasing");
        prev = t;
    }
    if (cfg.max_detections < 1) throw ConfigError("eval: max_detections must be positive");
}

struct Detection {
    double score = 0.0;
    bool tp = false;
};

double box_pixel_area(const BoxXYWH& b, const EvalImage& im) {
    return b.w * b.h * im.width * im.height;
}

/// Greedy matching for one image at one threshold and area range. Ground
/// truth outside the range is matchable but ignored: a detection claimed by
/// it disappears from the tally, as does an unmatched detection whose own
/// area is out of range. In-range ground truth takes priority even when an
/// out-of-range one overlaps better.
void match_image(const EvalImage& im, double threshold, double area_lo, double area_hi,
                 const EvalConfig& cfg, std::vector<Detection>& tally, int& n_gt) {
    const std::size_t n = im.gt.size();
    std::vector<char> valid(n, 0), counted(n, 0), matched(n, 0);
    for (std::size_t g = 0; g < n; ++g) {
        const GtInstance& gt = im.gt[g];
        valid[g] = gt.visible_count() > 0 && gt.box.w * gt.box.h > 0.0;
        if (!valid[g]) continue;
        const double area = box_pixel_area(gt.box, im);
        counted[g] = area >= area_lo && area < area_hi;
        n_gt += counted[g];
    }

    std::vector<int> order(im.predictions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return im.predictions[static_cast<std::size_t>(a)].score >
               im.predictions[static_cast<std::size_t>(b)].score;
    });
    if (static_cast<int>(order.size()) > cfg.max_detections)
        order.resize(static_cast<std::size_t>(cfg.max_detections));

    for (int d : order) {
        const ScoredInstance& det = im.predictions[static_cast<std::size_t>(d)];
        if (!std::isfinite(det.score)) throw DomainError("eval: prediction score must be finite");
        auto best_among = [&](bool want_counted) {
            int best = -1;
            double best_oks = threshold;
            for (std::size_t g = 0; g < n; ++g) {
                if (!valid[g] || matched[g] || counted[g] != want_counted) continue;
                const GtInstance& gt = im.gt[g];
                const std::vector<double> ks = cfg.oks_constants.empty()
                                                   ? uniform_oks_constants(gt.keypoints.size())
                                                   : cfg.oks_constants;
                const double oks =
                    eval_oks(det.keypoints, gt.keypoints, {ks, gt.box.w * gt.box.h});
                if (oks >= best_oks) {
                    best_oks = oks;
                    best = static_cast<int>(g);
                }
            }
            return best;
        };
        const int hit = best_among(true);
        if (hit >= 0) {
            matched[static_cast<std::size_t>(hit)] = 1;
            tally.push_back({det.score, true});
            continue;
        }
        const int absorbed = best_among(false);
        if (absorbed >= 0) {
            matched[static_cast<std::size_t>(absorbed)] = 1;
            continue;  // ignored match: detection drops out entirely
        }
        const double det_area = box_pixel_area(det.box, im);
        if (det_area >= area_lo && det_area < area_hi) tally.push_back({det.score, false});
    }
}

struct Curve {
    std::vector<double> recall;     // nondecreasing
    std::vector<double> precision;  // envelope applied
};

Curve curve_at(const std::vector<EvalImage>& images, double threshold, double area_lo,
               double area_hi, const EvalConfig& cfg) {
    std::vector<Detection> tally;
    int n_gt = 0;
    for (const EvalImage& im : images) match_image(im, threshold, area_lo, area_hi, cfg, tally, n_gt);
    std::stable_sort(tally.begin(), tally.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    Curve c;
    if (n_gt == 0) return c;
    int tp = 0, fp = 0;
    for (const Detection& d : tally) {
        (d.tp ? tp : fp) += 1;
        c.recall.push_back(static_cast<double>(tp) / n_gt);
        c.precision.push_back(static_cast<double>(tp) / (tp + fp));
    }
    for (std::size_t i = c.precision.size(); i-- > 1;)
        c.precision[i - 1] = std::max(c.precision[i - 1], c.precision[i]);
    return c;
}

double interpolated_ap(const Curve& c) {
    if (c.recall.empty()) return 0.0;
    double acc = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        const auto it = std::lower_bound(c.recall.begin(), c.recall.end(), r);
        if (it != c.recall.end())
            acc += c.precision[static_cast<std::size_t>(it - c.recall.begin())];
    }
    return acc / 101.0;
}

double mean_ap(const std::vector<EvalImage>& images, double area_lo, double area_hi,
               const EvalConfig& cfg, double* at50, double* at75) {
    double acc = 0.0;
    for (double t : cfg.oks_thresholds) {
        const double ap = interpolated_ap(curve_at(images, t, area_lo, area_hi, cfg));
        acc += ap;
        if (at50 && std::fabs(t - 0.50) < 1e-9) *at50 = ap;
        if (at75 && std::fabs(t - 0.75) < 1e-9) *at75 = ap;
    }
    return acc / static_cast<double>(cfg.oks_thresholds.size());
}

}  // namespace

EvalResult evaluate(const std::vector<EvalImage>& images, const EvalConfig& cfg) {
    check_config(cfg);
    std::size_t total_gt = 0;
    for (const EvalImage& im : images) total_gt += im.gt.size();
    if (total_gt == 0) throw DomainError("eval: no ground truth anywhere; metric undefined");

    EvalResult r;
    const double all_lo = 0.0, all_hi = std::numeric_limits<double>::infinity();
    r.ap = mean_ap(images, all_lo, all_hi, cfg, &r.ap50, &r.ap75);
    r.ap_medium = mean_ap(images, cfg.medium_min, cfg.medium_max, cfg, nullptr, nullptr);
    r.ap_large = mean_ap(images, cfg.large_min, cfg.large_max, cfg, nullptr, nullptr);
    return r;
}

std::vector<std::pair<double, double>> pr_curve(const std::vector<EvalImage>& images,
                                                double threshold, const EvalConfig& cfg) {
    check_config(cfg);
    if (!(threshold > 0.0) || !(threshold < 1.0))
        throw ConfigError("eval: threshold must lie strictly inside (0, 1)");
    std::size_t total_gt = 0;
    for (const EvalImage& im : images) total_gt += im.gt.size();
    if (total_gt == 0) throw DomainError("eval: no ground truth anywhere; metric undefined");

    const Curve c =
        curve_at(images, threshold, 0.0, std::numeric_limits<double>::infinity(), cfg);
    std::vector<std::pair<double, double>> out;
    out.reserve(c.recall.size());
    for (std::size_t i = 0; i < c.recall.size(); ++i)
        out.emplace_back(c.recall[i], c.precision[i]);
    return out;
}

std::string eval_result_json(const EvalResult& r) {
    nlohmann::ordered_json j;
    j["ap"] = r.ap;
    j["ap50"] = r.ap50;
    j["ap75"] = r.ap75;
    j["ap_m"] = r.ap_medium;
    j["ap_l"] = r.ap_large;
    return j.dump(2);
}

}  // namespace edpose
