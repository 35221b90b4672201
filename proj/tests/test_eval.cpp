#include "doctest.h"

#include "edpose/errors.hpp"
#include "edpose/eval.hpp"

#include "json.hpp"

#include <cmath>
#include <set>
#include <string>
#include <vector>

using namespace edpose;

namespace {

GtInstance one_kp(double cx, double cy, double w, double h) {
    GtInstance g;
    g.box = {cx, cy, w, h};
    g.keypoints.points = Mat(1, 2);
    g.keypoints.points << cx, cy;
    g.keypoints.visibility = {2};
    return g;
}

ScoredInstance det_of(const GtInstance& g, double score, double dx = 0.0) {
    ScoredInstance d;
    d.score = score;
    d.box = g.box;
    d.keypoints = g.keypoints;
    d.keypoints.points(0, 0) += dx;
    return d;
}

/// Offset along x that lands eval_oks exactly at the requested value for a
/// single keypoint with the default 0.1 falloff constant.
double offset_for_oks(const GtInstance& g, double oks) {
    const double s2 = g.box.w * g.box.h;
    return std::sqrt(-2.0 * s2 * 0.01 * std::log(oks));
}

EvalConfig at_thresholds(std::vector<double> ts) {
    EvalConfig cfg;
    cfg.oks_thresholds = std::move(ts);
    return cfg;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("configuration is validated") {
    EvalImage im;
    im.height = im.width = 100;
    im.gt.push_back(one_kp(0.5, 0.5, 0.5, 0.5));
    CHECK_THROWS_AS((void)evaluate({im}, at_thresholds({})), ConfigError);
    CHECK_THROWS_AS((void)evaluate({im}, at_thresholds({0.5, 0.5})), ConfigError);
    CHECK_THROWS_AS((void)evaluate({im}, at_thresholds({0.7, 0.6})), ConfigError);
    CHECK_THROWS_AS((void)evaluate({im}, at_thresholds({0.5, 1.0})), ConfigError);
    EvalConfig bad;
    bad.max_detections = 0;
    CHECK_THROWS_AS((void)evaluate({im}, bad), ConfigError);
    CHECK_THROWS_AS((void)pr_curve({im}, 1.0), ConfigError);
}

TEST_CASE("a single detection scores one or zero depending on its overlap") {
    const GtInstance gt = one_kp(0.5, 0.5, 0.5, 0.5);
    EvalImage im;
    im.height = im.width = 100;
    im.gt = {gt};

    im.predictions = {det_of(gt, 0.9, offset_for_oks(gt, 0.9))};
    EvalResult hit = evaluate({im}, at_thresholds({0.5}));
    CHECK(hit.ap == 1.0);
    CHECK(hit.ap50 == 1.0);
    CHECK(hit.ap75 == 0.0);  // no 0.75 threshold in this run

    im.predictions = {det_of(gt, 0.9, offset_for_oks(gt, 0.3))};
    EvalResult miss = evaluate({im}, at_thresholds({0.5}));
    CHECK(miss.ap == 0.0);
}

TEST_CASE("a duplicate perfect detection cannot dent the interpolated ap") {
    const GtInstance gt = one_kp(0.5, 0.5, 0.5, 0.5);
    EvalImage im;
    im.height = im.width = 100;
    im.gt = {gt};
    im.predictions = {det_of(gt, 0.9), det_of(gt, 0.8)};
    CHECK(evaluate({im}, at_thresholds({0.5})).ap == 1.0);
    CHECK(evaluate({im}).ap == 1.0);

    auto curve = pr_curve({im}, 0.5);
    REQUIRE(curve.size() == 2);
    CHECK(curve[0] == std::make_pair(1.0, 1.0));
    CHECK(curve[1] == std::make_pair(1.0, 0.5));
}

TEST_CASE("interleaved hits and misses reproduce the hand-traced curve") {
    const GtInstance a = one_kp(0.25, 0.25, 0.3, 0.3);
    const GtInstance b = one_kp(0.75, 0.75, 0.3, 0.3);
    EvalImage im;
    im.height = im.width = 100;
    im.gt = {a, b};
    ScoredInstance far1 = det_of(a, 0.8);
    far1.box.cy = 0.75;
    far1.keypoints.points << 0.25, 0.75;
    ScoredInstance far2 = far1;
    far2.score = 0.6;
    far2.keypoints.points << 0.75, 0.25;
    im.predictions = {det_of(a, 0.9), far1, det_of(b, 0.7), far2};

    auto curve = pr_curve({im}, 0.5);
    REQUIRE(curve.size() == 4);
    CHECK(curve[0].first == 0.5);
    CHECK(curve[0].second == 1.0);
    CHECK(curve[1].first == 0.5);
    CHECK(curve[1].second == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(curve[2].first == 1.0);
    CHECK(curve[2].second == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(curve[3].first == 1.0);
    CHECK(curve[3].second == 0.5);

    EvalResult r = evaluate({im}, at_thresholds({0.5}));
    CHECK(r.ap == doctest::Approx(253.0 / 303.0).epsilon(1e-12));
}

TEST_CASE("echoing the ground truth back scores exactly one") {
    std::vector<EvalImage> images(3);
    double score = 0.99;
    for (int i = 0; i < 3; ++i) {
        EvalImage& im = images[static_cast<std::size_t>(i)];
        im.height = 480;
        im.width = 640;
        im.gt.push_back(one_kp(0.3, 0.3 + 0.05 * i, 0.1, 0.15));
        im.gt.push_back(one_kp(0.7, 0.6 - 0.05 * i, 0.12, 0.1));
        for (const GtInstance& g : im.gt) im.predictions.push_back(det_of(g, score -= 0.01));
    }
    EvalResult r = evaluate(images);
    CHECK(r.ap == 1.0);
    CHECK(r.ap50 == 1.0);
    CHECK(r.ap75 == 1.0);
    // Every box here is medium-sized; the large split is empty and scores 0.
    CHECK(r.ap_medium == 1.0);
    CHECK(r.ap_large == 0.0);
}

TEST_CASE("a trailing low-score false positive changes nothing") {
    std::vector<EvalImage> images(2);
    for (int i = 0; i < 2; ++i) {
        EvalImage& im = images[static_cast<std::size_t>(i)];
        im.height = im.width = 100;
        im.gt.push_back(one_kp(0.3, 0.4, 0.3, 0.3));
        im.predictions.push_back(det_of(im.gt[0], 0.9 - 0.1 * i));
    }
    const EvalResult before = evaluate(images);

    ScoredInstance junk = det_of(images[0].gt[0], 1e-4);
    junk.box.cx = 0.8;
    junk.keypoints.points << 0.8, 0.9;
    images[1].predictions.push_back(junk);
    const EvalResult after = evaluate(images);
    CHECK(after.ap == before.ap);
    CHECK(after.ap50 == before.ap50);
    CHECK(after.ap75 == before.ap75);
    CHECK(after.ap_medium == before.ap_medium);
    CHECK(after.ap_large == before.ap_large);
}

TEST_CASE("per-threshold ap never increases with the threshold") {
    EvalImage im;
    im.height = im.width = 100;
    const double xs[4] = {0.2, 0.4, 0.6, 0.8};
    const double target[4] = {0.96, 0.86, 0.72, 0.55};
    for (int i = 0; i < 4; ++i) {
        GtInstance g = one_kp(xs[i], 0.5, 0.18, 0.18);
        im.gt.push_back(g);
        im.predictions.push_back(det_of(g, 0.9 - 0.1 * i, offset_for_oks(g, target[i])));
    }
    double prev = 2.0;
    for (double t : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95}) {
        const double ap = evaluate({im}, at_thresholds({t})).ap;
        CHECK(ap <= prev + 1e-12);
        prev = ap;
    }
    CHECK(evaluate({im}, at_thresholds({0.5})).ap == 1.0);
    CHECK(evaluate({im}, at_thresholds({0.95})).ap < 0.5);
}

TEST_CASE("area splits restrict both ground truth and detections") {
    EvalImage im;
    im.height = 480;
    im.width = 640;
    const GtInstance medium = one_kp(0.25, 0.25, 0.05, 0.1);  // 1536 px^2
    const GtInstance large = one_kp(0.7, 0.7, 0.3, 0.3);      // 27648 px^2
    im.gt = {medium, large};
    im.predictions = {det_of(medium, 0.9), det_of(large, 0.8)};
    EvalResult both = evaluate({im}, at_thresholds({0.5}));
    CHECK(both.ap == 1.0);
    CHECK(both.ap_medium == 1.0);
    CHECK(both.ap_large == 1.0);

    im.predictions = {det_of(medium, 0.9)};
    EvalResult half = evaluate({im}, at_thresholds({0.5}));
    CHECK(half.ap_medium == 1.0);  // large gt is invisible to the medium split
    CHECK(half.ap_large == 0.0);
}

TEST_CASE("low detection budgets drop detections by score, not position") {
    const GtInstance gt = one_kp(0.5, 0.5, 0.5, 0.5);
    EvalImage im;
    im.height = im.width = 100;
    im.gt = {gt};
    ScoredInstance junk = det_of(gt, 0.9);
    junk.keypoints.points << 0.05, 0.95;
    im.predictions = {junk, det_of(gt, 0.1)};

    EvalConfig one = at_thresholds({0.5});
    one.max_detections = 1;
    CHECK(evaluate({im}, one).ap == 0.0);
    EvalConfig two = at_thresholds({0.5});
    two.max_detections = 2;
    CHECK(evaluate({im}, two).ap == 0.5);
}

TEST_CASE("degenerate inputs raise domain errors") {
    CHECK_THROWS_AS((void)evaluate({}), DomainError);
    EvalImage empty;
    empty.height = empty.width = 100;
    empty.predictions.push_back(det_of(one_kp(0.5, 0.5, 0.3, 0.3), 0.9));
    CHECK_THROWS_AS((void)evaluate({empty}), DomainError);
    CHECK_THROWS_AS((void)pr_curve({empty}, 0.5), DomainError);

    EvalImage im;
    im.height = im.width = 100;
    im.gt.push_back(one_kp(0.5, 0.5, 0.3, 0.3));
    im.predictions.push_back(det_of(im.gt[0], std::nan("")));
    CHECK_THROWS_AS((void)evaluate({im}), DomainError);

    // An annotation-free image is fine as long as some image has ground truth.
    EvalImage with_gt;
    with_gt.height = with_gt.width = 100;
    with_gt.gt.push_back(one_kp(0.4, 0.4, 0.3, 0.3));
    with_gt.predictions.push_back(det_of(with_gt.gt[0], 0.95));
    CHECK(evaluate({empty, with_gt}, at_thresholds({0.5})).ap == 1.0);
}

TEST_CASE("pr curves pin the degenerate cases") {
    EvalImage im;
    im.height = im.width = 100;
    im.gt = {one_kp(0.3, 0.3, 0.3, 0.3), one_kp(0.7, 0.7, 0.3, 0.3)};
    im.predictions = {det_of(im.gt[0], 0.9), det_of(im.gt[1], 0.8)};
    for (auto [r, p] : pr_curve({im}, 0.5)) CHECK(p == 1.0);

    im.predictions.clear();
    ScoredInstance junk = det_of(im.gt[0], 0.9);
    junk.keypoints.points << 0.05, 0.95;
    im.predictions = {junk};
    auto curve = pr_curve({im}, 0.5);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0].first == 0.0);
    CHECK(curve[0].second == 0.0);

    double prev = -1.0;
    im.predictions = {det_of(im.gt[0], 0.9), junk, det_of(im.gt[1], 0.5)};
    for (auto [r, p] : pr_curve({im}, 0.5)) {
        CHECK(r >= prev);
        prev = r;
    }
}

TEST_CASE("the result document carries exactly five keys") {
    EvalResult r;
    r.ap = 0.5;
    r.ap50 = 0.75;
    r.ap75 = 0.25;
    r.ap_medium = 0.125;
    r.ap_large = 1.0;
    const auto j = nlohmann::json::parse(eval_result_json(r));
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    CHECK(keys == std::set<std::string>{"ap", "ap50", "ap75", "ap_m", "ap_l"});
    CHECK(j.at("ap").get<double>() == 0.5);
    CHECK(j.at("ap50").get<double>() == 0.75);
    CHECK(j.at("ap75").get<double>() == 0.25);
    CHECK(j.at("ap_m").get<double>() == 0.125);
    CHECK(j.at("ap_l").get<double>() == 1.0);
}

}  // TEST_SUITE
