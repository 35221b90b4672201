#include "doctest.h"

#include "edpose/encoder.hpp"
#include "edpose/errors.hpp"
#include "edpose/rng.hpp"

#include <cmath>
#include <set>

using namespace edpose;

namespace {

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.dim = 32;
    cfg.base_channels = 4;
    cfg.n_levels = 3;
    cfg.n_heads = 2;
    cfg.n_points = 2;
    cfg.layers = 2;
    cfg.ffn_dim = 64;
    return cfg;
}

Mat random_image(Rng& rng, int h, int w) {
    Mat img(h * w, 3);
    for (int i = 0; i < h * w; ++i)
        for (int c = 0; c < 3; ++c) img(i, c) = rng.uniform(0.0, 1.0);
    return img;
}

/// Token field with three uniform levels for deformable-attention tests.
EncodedTokens uniform_field(ad::Tape& t, int dim, const std::vector<Mat>& level_values) {
    EncodedTokens mem;
    int start = 0;
    for (const Mat& v : level_values) {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(v.rows()))));
        mem.levels.push_back({side, side});
        mem.level_start.push_back(start);
        start += side * side;
        mem.tokens = mem.tokens.valid() ? t.concat_rows(mem.tokens, t.constant(v))
                                        : t.constant(v);
    }
    mem.positions = Encoder::token_positions(mem.levels);
    mem.pos_embed = t.constant(Mat::Zero(start, dim));
    return mem;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("backbone produces the declared pyramid") {
    Rng rng(51);
    EncoderConfig cfg = small_config();
    ConvBackbone bb("bb", cfg, rng);
    CHECK(bb.total_stride() == 32);
    ad::Tape t;
    auto levels = bb.forward(t, random_image(rng, 64, 64), 64, 64);
    REQUIRE(levels.size() == 3);
    CHECK(levels[0].shape.h == 8);
    CHECK(levels[0].shape.w == 8);
    CHECK(levels[1].shape.h == 4);
    CHECK(levels[2].shape.h == 2);
    int total = 0;
    for (const auto& l : levels) {
        CHECK(t.val(l.tokens).rows() == l.shape.h * l.shape.w);
        CHECK(t.val(l.tokens).cols() == cfg.dim);
        total += l.shape.h * l.shape.w;
    }
    CHECK(total == 84);
}

TEST_CASE("backbone rejects undersized or indivisible images") {
    Rng rng(52);
    ConvBackbone bb("bb", small_config(), rng);
    ad::Tape t;
    CHECK_THROWS_AS((void)bb.forward(t, Mat::Zero(16 * 16, 3), 16, 16), ShapeError);
    CHECK_THROWS_AS((void)bb.forward(t, Mat::Zero(48 * 48, 3), 48, 48), ShapeError);
    CHECK_THROWS_AS((void)bb.forward(t, Mat::Zero(10, 3), 64, 64), ShapeError);
}

TEST_CASE("backbone stays finite on degenerate images") {
    Rng rng(53);
    ConvBackbone bb("bb", small_config(), rng);
    ad::Tape t;
    for (const double fill : {0.0, 1.0}) {
        auto levels = bb.forward(t, Mat::Constant(64 * 64, 3, fill), 64, 64);
        for (const auto& l : levels) CHECK(t.val(l.tokens).allFinite());
    }
}

TEST_CASE("token positions tile each level with scaled sizes") {
    const std::vector<LevelShape> levels{{4, 4}, {2, 2}};
    Mat pos = Encoder::token_positions(levels);
    REQUIRE(pos.rows() == 20);
    CHECK(pos(0, 0) == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(pos(0, 1) == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(pos(0, 2) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(pos(16, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(pos(16, 2) == doctest::Approx(0.10).epsilon(1e-12));
    for (int i = 0; i < pos.rows(); ++i) {
        CHECK(pos(i, 0) > 0.0);
        CHECK(pos(i, 0) < 1.0);
        CHECK(pos(i, 1) > 0.0);
        CHECK(pos(i, 1) < 1.0);
    }
}

TEST_CASE("positional embeddings are deterministic, bounded, and collision-free") {
    Rng rng(54);
    Mat pos(1000, 4);
    for (int i = 0; i < 1000; ++i)
        pos.row(i) << rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.01, 0.5),
            rng.uniform(0.01, 0.5);
    const int dpp = 8;
    Mat a = ad::sine_embed_values(pos, dpp);
    Mat b = ad::sine_embed_values(pos, dpp);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.maxCoeff() <= 1.0);
    CHECK(a.minCoeff() >= -1.0);
    const double norm0 = a.row(0).squaredNorm();
    for (int i = 1; i < 1000; ++i) CHECK(std::fabs(a.row(i).squaredNorm() - norm0) < 1e-6);
    // Distinct positions map to distinct embeddings.
    for (int i = 1; i < 1000; ++i)
        CHECK((a.row(i) - a.row(i - 1)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("deformable attention on a uniform field returns the projected value") {
    Rng rng(55);
    const int dim = 16;
    DeformableAttnConfig dc{2, 3, 2};
    DeformableAttention attn("da", dim, dc, rng);
    ad::Tape t;
    Mat u = Mat::Zero(1, dim);
    for (int j = 0; j < dim; ++j) u(0, j) = rng.uniform(-1.0, 1.0);
    std::vector<Mat> fields{u.replicate(64, 1), u.replicate(16, 1)};
    EncodedTokens mem = uniform_field(t, dim, fields);

    Mat queries(5, dim);
    Mat refs(5, 4);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < dim; ++j) queries(i, j) = rng.uniform(-1.0, 1.0);
        refs.row(i) << rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), 0.2, 0.2;
    }
    Mat got = t.val(attn.forward(t, t.leaf(queries), t.constant(refs), mem));

    ad::Tape t2;
    Mat want = t2.val(attn.value_projection().forward(t2, t2.constant(u)));
    for (int i = 0; i < 5; ++i) CHECK((got.row(i) - want.row(0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("equal weight logits average uniformly across levels") {
    Rng rng(56);
    const int dim = 8;
    DeformableAttnConfig dc{2, 2, 3};
    DeformableAttention attn("da", dim, dc, rng);
    attn.weight_head().weight().value().setZero();
    attn.weight_head().bias().value().setZero();
    attn.offset_head().weight().value().setZero();
    attn.offset_head().bias().value().setZero();
    // Identity value projection isolates the raw field.
    attn.value_projection().weight().value() = Mat::Identity(dim, dim);
    attn.value_projection().bias().value().setZero();

    ad::Tape t;
    Mat u1 = Mat::Constant(1, dim, 1.0), u2 = Mat::Constant(1, dim, 2.0),
        u3 = Mat::Constant(1, dim, 7.0);
    std::vector<Mat> fields{u1.replicate(16, 1), u2.replicate(4, 1), u3.replicate(4, 1)};
    EncodedTokens mem = uniform_field(t, dim, fields);

    Mat queries = Mat::Zero(3, dim);
    Mat refs(3, 4);
    for (int i = 0; i < 3; ++i) refs.row(i) << 0.5, 0.5, 0.3, 0.3;
    Mat got = t.val(attn.forward(t, t.leaf(queries), t.constant(refs), mem));
    // Joint softmax over heads*levels*points with equal logits weights every
    // sample 1/(2*2*3); each level contributes 4/12 of its field value.
    const double want = (1.0 + 2.0 + 7.0) / 3.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < dim; ++j) CHECK(got(i, j) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("deformable attention is permutation-equivariant in queries") {
    Rng rng(57);
    const int dim = 16;
    DeformableAttnConfig dc{2, 2, 2};
    DeformableAttention attn("da", dim, dc, rng);
    ad::Tape t;
    Rng frng(58);
    std::vector<Mat> fields{Mat::Zero(64, dim), Mat::Zero(16, dim)};
    for (Mat& f : fields)
        for (int i = 0; i < f.rows(); ++i)
            for (int j = 0; j < dim; ++j) f(i, j) = frng.uniform(-1.0, 1.0);
    EncodedTokens mem = uniform_field(t, dim, fields);

    const int L = 6;
    Mat q(L, dim), refs(L, 4);
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < dim; ++j) q(i, j) = frng.uniform(-1.0, 1.0);
        refs.row(i) << frng.uniform(0.2, 0.8), frng.uniform(0.2, 0.8), frng.uniform(0.1, 0.4),
            frng.uniform(0.1, 0.4);
    }
    Mat out1 = t.val(attn.forward(t, t.constant(q), t.constant(refs), mem));

    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Mat qp(L, dim), rp(L, 4);
    for (int i = 0; i < L; ++i) {
        qp.row(i) = q.row(perm[static_cast<std::size_t>(i)]);
        rp.row(i) = refs.row(perm[static_cast<std::size_t>(i)]);
    }
    Mat out2 = t.val(attn.forward(t, t.constant(qp), t.constant(rp), mem));
    for (int i = 0; i < L; ++i)
        CHECK((out2.row(i) - out1.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
              1e-12);
}

TEST_CASE("sampling offset gradients match finite differences") {
    Rng rng(59);
    const int dim = 8;
    DeformableAttnConfig dc{2, 2, 2};
    DeformableAttention attn("da", dim, dc, rng);
    Rng frng(60);
    std::vector<Mat> fields{Mat::Zero(64, dim), Mat::Zero(16, dim)};
    for (Mat& f : fields)
        for (int i = 0; i < f.rows(); ++i)
            for (int j = 0; j < dim; ++j) f(i, j) = frng.uniform(-1.0, 1.0);

    Mat q(3, dim), refs(3, 4);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < dim; ++j) q(i, j) = frng.uniform(-1.0, 1.0);
        refs.row(i) << frng.uniform(0.3, 0.7), frng.uniform(0.3, 0.7), 0.25, 0.25;
    }

    auto loss_value = [&]() {
        ad::Tape t;
        EncodedTokens mem = uniform_field(t, dim, fields);
        return t.val(
            t.sum_all(t.square(attn.forward(t, t.constant(q), t.constant(refs), mem))))(0, 0);
    };

    ad::Tape t;
    EncodedTokens mem = uniform_field(t, dim, fields);
    ad::Var loss = t.sum_all(t.square(attn.forward(t, t.constant(q), t.constant(refs), mem)));
    t.backward(loss);
    Mat gbias = attn.offset_head().bias().grad_on(t);

    Mat& bias = attn.offset_head().bias().value();
    const double h = 1e-6;
    double max_rel = 0.0;
    for (int j = 0; j < bias.cols(); ++j) {
        const double keep = bias(0, j);
        bias(0, j) = keep + h;
        const double fp = loss_value();
        bias(0, j) = keep - h;
        const double fm = loss_value();
        bias(0, j) = keep;
        const double num = (fp - fm) / (2 * h);
        const double denom = std::max(std::fabs(gbias(0, j)) + std::fabs(num), 1e-8);
        max_rel = std::max(max_rel, std::fabs(gbias(0, j) - num) / denom);
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("encode preserves shape and bookkeeping") {
    Rng rng(61);
    EncoderConfig cfg = small_config();
    Encoder enc("enc", cfg, rng);
    ad::Tape t;
    EncodedTokens mem = enc.encode(t, random_image(rng, 64, 64), 64, 64);
    CHECK(mem.total() == 84);
    CHECK(t.val(mem.tokens).rows() == 84);
    CHECK(t.val(mem.tokens).cols() == cfg.dim);
    CHECK(mem.level_start.size() == 3);
    CHECK(mem.level_start[0] == 0);
    CHECK(mem.level_start[1] == 64);
    CHECK(mem.level_start[2] == 80);
    int total = 0;
    for (const auto& s : mem.levels) total += s.h * s.w;
    CHECK(total == 84);
    CHECK(t.val(mem.tokens).allFinite());
}

TEST_CASE("zero encoder layers leave backbone tokens untouched") {
    Rng rng(62);
    EncoderConfig cfg = small_config();
    cfg.layers = 0;
    Encoder enc("enc", cfg, rng);
    EncoderConfig cfg2 = small_config();
    cfg2.layers = 0;
    ad::Tape t;
    Mat img = random_image(rng, 64, 64);
    EncodedTokens mem = enc.encode(t, img, 64, 64);
    Rng rng2(62);
    Encoder enc2("enc", cfg2, rng2);
    ad::Tape t2;
    EncodedTokens mem2 = enc2.encode(t2, img, 64, 64);
    CHECK((t.val(mem.tokens) - t2.val(mem2.tokens)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder output is finite over random trials") {
    Rng rng(63);
    EncoderConfig cfg = small_config();
    cfg.layers = 1;
    Encoder enc("enc", cfg, rng);
    for (int trial = 0; trial < 10; ++trial) {
        ad::Tape t;
        EncodedTokens mem = enc.encode(t, random_image(rng, 32, 32), 32, 32);
        CHECK(t.val(mem.tokens).allFinite());
    }
}

TEST_CASE("every encoder parameter gets gradient from a regression objective") {
    Rng rng(64);
    EncoderConfig cfg = small_config();
    Encoder enc("enc", cfg, rng);
    std::vector<nn::Parameter*> params;
    enc.collect(params);
    std::set<std::string> names;
    for (auto* p : params) names.insert(p->name());
    CHECK(names.size() == params.size());  // unique parameter names

    ad::Tape t;
    EncodedTokens mem = enc.encode(t, random_image(rng, 64, 64), 64, 64);
    Rng trng(65);
    Mat target(84, cfg.dim);
    for (int i = 0; i < target.rows(); ++i)
        for (int j = 0; j < target.cols(); ++j) target(i, j) = trng.uniform(-1.0, 1.0);
    ad::Var loss = t.mean_all(t.square(t.sub(mem.tokens, t.constant(target))));
    t.backward(loss);
    for (auto* p : params) {
        CAPTURE(p->name());
        CHECK(p->grad_on(t).cwiseAbs().maxCoeff() > 0.0);
    }
}

}  // TEST_SUITE
