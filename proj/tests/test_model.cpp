#include "edpose/data.hpp"
#include "edpose/errors.hpp"
#include "edpose/model.hpp"

#include "doctest.h"

#include <cmath>
#include <set>
#include <string>
#include <vector>

using namespace edpose;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.dim = 16;
    c.n_keypoints = 5;
    c.n_coarse = 40;
    c.n_fine = 6;
    c.encoder_layers = 1;
    c.human_layers = 2;
    c.hk_layers = 2;
    c.n_heads = 4;
    c.n_points = 2;
    c.n_levels = 3;
    c.ffn_dim = 32;
    c.base_channels = 2;
    return c;
}

Mat test_image(int h, int w, unsigned seed) {
    Rng rng(seed);
    Mat img(h * w, 3);
    for (int i = 0; i < img.rows(); ++i)
        for (int j = 0; j < 3; ++j) img(i, j) = rng.uniform();
    return img;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("forward produces per-layer detections with the configured shapes") {
    ModelConfig cfg = tiny_config();
    Rng rng(3);
    PoseModel model(cfg, rng);

    ad::Tape t;
    Mat img = test_image(64, 64, 11);
    ModelOutputs out = model.forward(t, img, 64, 64);

    REQUIRE(out.human_layers.logits.size() == 2);
    REQUIRE(out.human_layers.boxes.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(t.val(out.human_layers.logits[l]).rows() == cfg.n_coarse);
        CHECK(t.val(out.human_layers.logits[l]).cols() == 1);
        CHECK(t.val(out.human_layers.boxes[l]).rows() == cfg.n_coarse);
        CHECK(t.val(out.human_layers.boxes[l]).cols() == 4);
    }

    REQUIRE(out.hk_layers.logits.size() == 2);
    REQUIRE(out.hk_layers.human_boxes.size() == 2);
    REQUIRE(out.hk_layers.keypoint_boxes.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(t.val(out.hk_layers.logits[l]).rows() == cfg.n_fine);
        CHECK(t.val(out.hk_layers.human_boxes[l]).rows() == cfg.n_fine);
        CHECK(t.val(out.hk_layers.keypoint_boxes[l]).rows() == cfg.n_fine * cfg.n_keypoints);
        CHECK(t.val(out.hk_layers.keypoint_boxes[l]).cols() == 4);
    }

    CHECK(out.pose.m == cfg.n_fine);
    CHECK(out.pose.k == cfg.n_keypoints);
    CHECK(t.val(out.pose.scores).rows() == cfg.n_fine);
    CHECK(t.val(out.pose.human_boxes).rows() == cfg.n_fine);
    CHECK(t.val(out.pose.keypoints).rows() == cfg.n_fine * cfg.n_keypoints);
    CHECK(t.val(out.pose.keypoints).cols() == 2);
    CHECK(t.val(out.pose.keypoint_boxes).rows() == cfg.n_fine * cfg.n_keypoints);

    CHECK(t.val(out.pose.keypoints).allFinite());
    CHECK(t.val(out.pose.scores).allFinite());
    // Keypoints are centers of their boxes.
    const Mat& kp = t.val(out.pose.keypoints);
    const Mat& kb = t.val(out.pose.keypoint_boxes);
    for (int r = 0; r < kp.rows(); ++r) {
        CHECK(kp(r, 0) == doctest::Approx(kb(r, 0)).epsilon(1e-12));
        CHECK(kp(r, 1) == doctest::Approx(kb(r, 1)).epsilon(1e-12));
    }
}

TEST_CASE("identical seeds build identical models") {
    ModelConfig cfg = tiny_config();
    Rng r1(7), r2(7);
    PoseModel m1(cfg, r1), m2(cfg, r2);

    Mat img = test_image(64, 64, 5);
    ad::Tape t1, t2;
    ModelOutputs o1 = m1.forward(t1, img, 64, 64);
    ModelOutputs o2 = m2.forward(t2, img, 64, 64);

    CHECK(t1.val(o1.pose.scores) == t2.val(o2.pose.scores));
    CHECK(t1.val(o1.pose.keypoints) == t2.val(o2.pose.keypoints));
    CHECK(t1.val(o1.human_layers.boxes[0]) == t2.val(o2.human_layers.boxes[0]));

    Rng r3(8);
    PoseModel m3(cfg, r3);
    ad::Tape t3;
    ModelOutputs o3 = m3.forward(t3, img, 64, 64);
    CHECK(t1.val(o1.pose.scores) != t3.val(o3.pose.scores));
}

TEST_CASE("parameter names are unique and cover every module") {
    ModelConfig cfg = tiny_config();
    Rng rng(1);
    PoseModel model(cfg, rng);

    auto params = model.parameters();
    REQUIRE(!params.empty());
    std::set<std::string> names;
    for (auto* p : params) {
        REQUIRE(p != nullptr);
        CHECK(!p->name().empty());
        CHECK(p->value().size() > 0);
        names.insert(p->name());
    }
    CHECK(names.size() == params.size());

    auto has_prefix = [&](const std::string& prefix) {
        for (const auto& n : names)
            if (n.rfind(prefix, 0) == 0) return true;
        return false;
    };
    CHECK(has_prefix("encoder."));
    CHECK(has_prefix("class_head."));
    CHECK(has_prefix("human."));
    CHECK(has_prefix("hk."));
}

TEST_CASE("config validation rejects inconsistent query counts") {
    ModelConfig bad = tiny_config();
    bad.n_fine = bad.n_coarse + 1;
    Rng rng(2);
    CHECK_THROWS_AS(PoseModel(bad, rng), ConfigError);

    ModelConfig wide = tiny_config();
    wide.n_coarse = 200;  // a 64x64 image yields only 84 tokens
    Rng rng2(2);
    PoseModel model(wide, rng2);
    ad::Tape t;
    Mat img = test_image(64, 64, 3);
    CHECK_THROWS_AS(model.forward(t, img, 64, 64), ConfigError);
}

TEST_CASE("loss gradients reach the backbone, class head, and expansion table") {
    ModelConfig cfg = tiny_config();
    Rng rng(4);
    PoseModel model(cfg, rng);

    std::vector<GtInstance> gt(1);
    gt[0].box = {0.5, 0.5, 0.4, 0.5};
    gt[0].keypoints.points = Mat(cfg.n_keypoints, 2);
    for (int ki = 0; ki < cfg.n_keypoints; ++ki) {
        gt[0].keypoints.points(ki, 0) = 0.35 + 0.07 * ki;
        gt[0].keypoints.points(ki, 1) = 0.3 + 0.09 * ki;
    }
    gt[0].keypoints.visibility.assign(static_cast<std::size_t>(cfg.n_keypoints), 2);

    ad::Tape t;
    Mat img = test_image(64, 64, 9);
    ModelOutputs out = model.forward(t, img, 64, 64);
    LossReport report = total_loss(t, out.human_layers, out.hk_layers, cfg.n_keypoints, gt,
                                   LossWeights{}, uniform_oks_constants(cfg.n_keypoints));
    CHECK(std::isfinite(report.value));
    t.backward(report.total);

    double class_norm = 0.0, table_norm = 0.0, conv_norm = 0.0;
    for (auto* p : model.parameters()) {
        double g = p->grad_on(t).norm();
        if (p->name() == "class_head.weight") class_norm = g;
        if (p->name() == "hk.expand.table") table_norm = g;
        if (p->name().rfind("encoder.backbone", 0) == 0) conv_norm += g;
    }
    CHECK(class_norm > 0.0);
    CHECK(table_norm > 0.0);
    CHECK(conv_norm > 0.0);
}

TEST_CASE("dropping human-layer supervision leaves only joint-decoder terms") {
    ModelConfig cfg = tiny_config();
    Rng rng(4);
    PoseModel model(cfg, rng);

    std::vector<GtInstance> gt(1);
    gt[0].box = {0.5, 0.5, 0.4, 0.5};
    gt[0].keypoints.points = Mat::Constant(cfg.n_keypoints, 2, 0.5);
    gt[0].keypoints.visibility.assign(static_cast<std::size_t>(cfg.n_keypoints), 2);

    ad::Tape t;
    Mat img = test_image(64, 64, 9);
    ModelOutputs out = model.forward(t, img, 64, 64);
    LossReport full = total_loss(t, out.human_layers, out.hk_layers, cfg.n_keypoints, gt,
                                 LossWeights{}, uniform_oks_constants(cfg.n_keypoints));
    LossReport no_human = total_loss(t, HumanDetections{}, out.hk_layers, cfg.n_keypoints, gt,
                                     LossWeights{}, uniform_oks_constants(cfg.n_keypoints));

    for (const auto& [key, v] : full.terms) CHECK(std::isfinite(v));
    bool any_h = false;
    for (const auto& [key, v] : no_human.terms) {
        CHECK(key.rfind("hk", 0) == 0);
        any_h = any_h || key.rfind("h0", 0) == 0;
    }
    CHECK(!any_h);
    CHECK(no_human.value < full.value);
    CHECK(full.terms.count("h0.l_c") == 1);
    CHECK(full.terms.count("h1.l_h_giou") == 1);
}

TEST_CASE("read_predictions applies the score threshold in prediction order") {
    ModelConfig cfg = tiny_config();
    Rng rng(6);
    PoseModel model(cfg, rng);

    ad::Tape t;
    Mat img = test_image(64, 64, 21);
    ModelOutputs out = model.forward(t, img, 64, 64);

    auto all = read_predictions(t, out.pose, 0.0);
    REQUIRE(static_cast<int>(all.size()) == cfg.n_fine);
    const Mat& logits = t.val(out.pose.scores);
    for (int mi = 0; mi < cfg.n_fine; ++mi) {
        double expect = 1.0 / (1.0 + std::exp(-logits(mi, 0)));
        CHECK(all[static_cast<std::size_t>(mi)].score == doctest::Approx(expect).epsilon(1e-12));
        CHECK(all[static_cast<std::size_t>(mi)].keypoints.size() == cfg.n_keypoints);
        CHECK(all[static_cast<std::size_t>(mi)].keypoint_boxes.size() ==
              static_cast<std::size_t>(cfg.n_keypoints));
    }

    CHECK(read_predictions(t, out.pose, 1.1).empty());

    double median = all[all.size() / 2].score;
    auto some = read_predictions(t, out.pose, median);
    CHECK(!some.empty());
    CHECK(some.size() < all.size());
    for (const auto& inst : some) CHECK(inst.score >= median);
}

}  // TEST_SUITE
