#include "edpose/data.hpp"

#include "edpose/errors.hpp"

#include "json.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <utility>

namespace edpose {

namespace {

using nlohmann::json;

std::vector<int> permutation_from_pairs(int k, const std::vector<std::pair<int, int>>& pairs,
                                        const char* who) {
    std::vector<int> perm(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::vector<char> seen(static_cast<std::size_t>(k), 0);
    for (const auto& [l, r] : pairs) {
        if (l < 0 || r < 0 || l >= k || r >= k)
            throw SchemaError(std::string(who) + ": pair index out of range");
        if (l == r || seen[static_cast<std::size_t>(l)] || seen[static_cast<std::size_t>(r)])
            throw SchemaError(std::string(who) + ": indices must pair off distinctly");
        seen[static_cast<std::size_t>(l)] = seen[static_cast<std::size_t>(r)] = 1;
        perm[static_cast<std::size_t>(l)] = r;
        perm[static_cast<std::size_t>(r)] = l;
    }
    return perm;
}

const json& need(const json& j, const char* key, const char* where) {
    if (!j.contains(key))
        throw ParseError(std::string("coco ") + where + ": missing key '" + key + "'");
    return j.at(key);
}

Mat load_pixels(const std::filesystem::path& file, int h, int w) {
    cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw IoError("coco image: cannot read " + file.string());
    if (img.rows != h || img.cols != w)
        throw SchemaError("coco image: size of " + file.string() +
                          " does not match the declared height/width");
    Mat out(static_cast<Eigen::Index>(h) * w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const cv::Vec3b px = img.at<cv::Vec3b>(y, x);  // BGR
            const Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
            out(r, 0) = px[2] / 255.0;
            out(r, 1) = px[1] / 255.0;
            out(r, 2) = px[0] / 255.0;
        }
    return out;
}

int snap32(double v) {
    const int snapped = static_cast<int>(std::llround(v / 32.0)) * 32;
    return std::max(32, snapped);
}

struct Hsv {
    double h, s, v;
};

std::array<double, 3> hsv_to_rgb(const Hsv& c) {
    const double h6 = c.h * 6.0;
    const int i = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = c.v * (1 - c.s);
    const double q = c.v * (1 - c.s * f);
    const double t = c.v * (1 - c.s * (1 - f));
    switch (i) {
        case 0: return {c.v, t, p};
        case 1: return {q, c.v, p};
        case 2: return {p, c.v, t};
        case 3: return {p, q, c.v};
        case 4: return {t, p, c.v};
        default: return {c.v, p, q};
    }
}

std::array<double, 3> limb_color(int index) {
    const double hue = std::fmod(0.61803398875 * index, 1.0);
    const double value = 0.55 + 0.45 * (index % 3) / 2.0;
    return hsv_to_rgb({hue, 0.85, value});
}

struct Skeleton {
    std::vector<std::array<double, 2>> joints;          // canonical frame, y down
    std::vector<std::array<int, 2>> edges;
    std::vector<std::array<int, 3>> chains;             // pivot, middle, tip
};

const Skeleton& skeleton_for(int k) {
    static const Skeleton coco17{
        {{0.50, 0.05}, {0.46, 0.03}, {0.54, 0.03}, {0.41, 0.06}, {0.59, 0.06},
         {0.40, 0.20}, {0.60, 0.20}, {0.36, 0.37}, {0.64, 0.37}, {0.33, 0.53},
         {0.67, 0.53}, {0.44, 0.52}, {0.56, 0.52}, {0.43, 0.74}, {0.57, 0.74},
         {0.42, 0.95}, {0.58, 0.95}},
        {{15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12},
         {5, 6},   {5, 7},   {7, 9},   {6, 8},   {8, 10},  {1, 2},  {0, 1},
         {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6}},
        {{5, 7, 9}, {6, 8, 10}, {11, 13, 15}, {12, 14, 16}},
    };
    static const Skeleton crowd14{
        {{0.40, 0.20}, {0.60, 0.20}, {0.36, 0.37}, {0.64, 0.37}, {0.33, 0.53},
         {0.67, 0.53}, {0.44, 0.52}, {0.56, 0.52}, {0.43, 0.74}, {0.57, 0.74},
         {0.42, 0.95}, {0.58, 0.95}, {0.50, 0.02}, {0.50, 0.17}},
        {{12, 13}, {13, 0}, {13, 1}, {0, 2}, {2, 4}, {1, 3}, {3, 5}, {0, 6},
         {1, 7},   {6, 7},  {6, 8},  {8, 10}, {7, 9}, {9, 11}},
        {{0, 2, 4}, {1, 3, 5}, {6, 8, 10}, {7, 9, 11}},
    };
    if (k == 17) return coco17;
    if (k == 14) return crowd14;
    throw ConfigError("synth_scene: keypoint layout must be 14 or 17");
}

void rotate_about(Mat& pts, const std::vector<int>& which, double cx, double cy, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    for (int i : which) {
        const double dx = pts(i, 0) - cx, dy = pts(i, 1) - cy;
        pts(i, 0) = cx + c * dx - s * dy;
        pts(i, 1) = cy + s * dx + c * dy;
    }
}

void draw_segment(Mat& image, int size, double x1, double y1, double x2, double y2,
                  double half_width, const std::array<double, 3>& color) {
    const int lo_x = std::max(0, static_cast<int>(std::floor(std::min(x1, x2) - half_width)));
    const int hi_x = std::min(size - 1, static_cast<int>(std::ceil(std::max(x1, x2) + half_width)));
    const int lo_y = std::max(0, static_cast<int>(std::floor(std::min(y1, y2) - half_width)));
    const int hi_y = std::min(size - 1, static_cast<int>(std::ceil(std::max(y1, y2) + half_width)));
    const double vx = x2 - x1, vy = y2 - y1;
    const double len_sq = vx * vx + vy * vy;
    for (int y = lo_y; y <= hi_y; ++y)
        for (int x = lo_x; x <= hi_x; ++x) {
            const double px = x - x1, py = y - y1;
            double u = len_sq > 0.0 ? (px * vx + py * vy) / len_sq : 0.0;
            u = std::clamp(u, 0.0, 1.0);
            const double dx = px - u * vx, dy = py - u * vy;
            if (dx * dx + dy * dy > half_width * half_width) continue;
            const Eigen::Index r = static_cast<Eigen::Index>(y) * size + x;
            for (int c = 0; c < 3; ++c) image(r, c) = std::max(image(r, c), color[c]);
        }
}

}  // namespace

std::vector<int> builtin_flip_permutation(int k) {
    if (k == 17)
        return permutation_from_pairs(
            17, {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}},
            "builtin_flip_permutation");
    if (k == 14)
        return permutation_from_pairs(
            14, {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}, {10, 11}},
            "builtin_flip_permutation");
    throw ConfigError("builtin_flip_permutation: no table for this keypoint count");
}

std::vector<int> load_flip_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("flip table: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("flip table: ") + e.what());
    }
    if (!j.contains("k")) throw ParseError("flip table: missing key 'k'");
    if (!j.contains("pairs")) throw ParseError("flip table: missing key 'pairs'");
    const int k = j.at("k").get<int>();
    if (k < 1) throw SchemaError("flip table: k must be positive");
    std::vector<std::pair<int, int>> pairs;
    for (const auto& p : j.at("pairs")) {
        if (!p.is_array() || p.size() != 2)
            throw SchemaError("flip table: each pair must be [left, right]");
        pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
    return permutation_from_pairs(k, pairs, "flip table");
}

std::vector<ImageSample> load_coco_keypoints(const std::string& json_path, int expected_k) {
    std::ifstream in(json_path);
    if (!in) throw IoError("coco: cannot open " + json_path);
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw ParseError(std::string("coco: ") + e.what());
    }
    const json& images = need(root, "images", "root");
    const json& annotations = need(root, "annotations", "root");
    const json& categories = need(root, "categories", "root");

    int k = expected_k;
    if (!categories.empty() && categories.front().contains("keypoints")) {
        const int cat_k = static_cast<int>(categories.front().at("keypoints").size());
        if (expected_k > 0 && cat_k != expected_k)
            throw SchemaError("coco: category keypoint count does not match the dataset spec");
        k = cat_k;
    }

    std::vector<ImageSample> out;
    std::map<std::string, std::size_t> by_id;
    const std::filesystem::path dir = std::filesystem::path(json_path).parent_path();
    for (const json& im : images) {
        const std::string id = need(im, "id", "image").dump();
        const int h = need(im, "height", "image").get<int>();
        const int w = need(im, "width", "image").get<int>();
        if (h < 1 || w < 1) throw SchemaError("coco: image sides must be positive");
        ImageSample s;
        s.height = h;
        s.width = w;
        s.image_id = id;
        if (im.contains("file_name")) {
            const auto file = dir / im.at("file_name").get<std::string>();
            if (std::filesystem::exists(file)) s.image = load_pixels(file, h, w);
        }
        if (s.image.size() == 0) s.image = Mat::Zero(static_cast<Eigen::Index>(h) * w, 3);
        by_id[id] = out.size();
        out.push_back(std::move(s));
    }

    for (const json& an : annotations) {
        if (need(an, "iscrowd", "annotation").get<int>() != 0) continue;
        const std::string image_id = need(an, "image_id", "annotation").dump();
        const auto slot = by_id.find(image_id);
        if (slot == by_id.end())
            throw SchemaError("coco: annotation references unknown image " + image_id);
        (void)need(an, "area", "annotation");
        (void)need(an, "category_id", "annotation");
        const json& kp = need(an, "keypoints", "annotation");
        if (kp.size() % 3 != 0) throw SchemaError("coco: keypoints must be [x,y,v] triples");
        const int this_k = static_cast<int>(kp.size()) / 3;
        if (k <= 0) k = this_k;
        if (this_k != k) throw SchemaError("coco: keypoint count mismatch across annotations");
        const json& bb = need(an, "bbox", "annotation");
        if (!bb.is_array() || bb.size() != 4)
            throw SchemaError("coco: bbox must be [x, y, w, h]");

        ImageSample& s = out[slot->second];
        GtInstance inst;
        inst.keypoints.points = Mat(k, 2);
        inst.keypoints.visibility.resize(static_cast<std::size_t>(k));
        int visible = 0;
        for (int i = 0; i < k; ++i) {
            inst.keypoints.points(i, 0) = kp[3 * i].get<double>() / s.width;
            inst.keypoints.points(i, 1) = kp[3 * i + 1].get<double>() / s.height;
            const int v = kp[3 * i + 2].get<int>();
            inst.keypoints.visibility[static_cast<std::size_t>(i)] = v;
            if (v > 0) ++visible;
        }
        if (visible == 0) continue;
        const double bx = bb[0].get<double>(), by = bb[1].get<double>();
        const double bw = bb[2].get<double>(), bh = bb[3].get<double>();
        inst.box = {(bx + bw / 2.0) / s.width, (by + bh / 2.0) / s.height, bw / s.width,
                    bh / s.height};
        s.instances.push_back(std::move(inst));
    }
    return out;
}

ImageSample flip_horizontal(const ImageSample& s, const std::vector<int>& permutation) {
    ImageSample out = s;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            out.image.row(static_cast<Eigen::Index>(y) * s.width + x) =
                s.image.row(static_cast<Eigen::Index>(y) * s.width + (s.width - 1 - x));
    for (std::size_t n = 0; n < s.instances.size(); ++n) {
        const GtInstance& src = s.instances[n];
        GtInstance& dst = out.instances[n];
        const int k = src.keypoints.size();
        if (static_cast<int>(permutation.size()) != k)
            throw ShapeError("flip_horizontal: symmetry table size mismatch");
        dst.box.cx = 1.0 - src.box.cx;
        for (int i = 0; i < k; ++i) {
            const int j = permutation[static_cast<std::size_t>(i)];
            dst.keypoints.points(i, 0) = 1.0 - src.keypoints.points(j, 0);
            dst.keypoints.points(i, 1) = src.keypoints.points(j, 1);
            dst.keypoints.visibility[static_cast<std::size_t>(i)] =
                src.keypoints.visibility[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

ImageSample crop_window(const ImageSample& s, double x0, double y0, double cw, double ch) {
    if (!(cw > 0.0) || !(ch > 0.0) || x0 < 0.0 || y0 < 0.0 || x0 + cw > 1.0 + 1e-12 ||
        y0 + ch > 1.0 + 1e-12)
        throw DomainError("crop_window: window must sit inside the unit square");
    // Snap to the pixel grid so annotation remapping matches the pixels.
    const int px0 = std::clamp(static_cast<int>(std::lround(x0 * s.width)), 0, s.width - 1);
    const int py0 = std::clamp(static_cast<int>(std::lround(y0 * s.height)), 0, s.height - 1);
    const int pw = std::clamp(static_cast<int>(std::lround(cw * s.width)), 1, s.width - px0);
    const int ph = std::clamp(static_cast<int>(std::lround(ch * s.height)), 1, s.height - py0);
    const double nx0 = static_cast<double>(px0) / s.width;
    const double ny0 = static_cast<double>(py0) / s.height;
    const double ncw = static_cast<double>(pw) / s.width;
    const double nch = static_cast<double>(ph) / s.height;

    ImageSample out;
    out.image_id = s.image_id;
    out.height = ph;
    out.width = pw;
    out.image = Mat(static_cast<Eigen::Index>(ph) * pw, 3);
    for (int y = 0; y < ph; ++y)
        out.image.block(static_cast<Eigen::Index>(y) * pw, 0, pw, 3) =
            s.image.block((static_cast<Eigen::Index>(y) + py0) * s.width + px0, 0, pw, 3);

    for (const GtInstance& src : s.instances) {
        if (src.box.cx < nx0 || src.box.cx > nx0 + ncw || src.box.cy < ny0 ||
            src.box.cy > ny0 + nch)
            continue;
        GtInstance dst = src;
        int visible = 0;
        for (int i = 0; i < src.keypoints.size(); ++i) {
            const double x = (src.keypoints.points(i, 0) - nx0) / ncw;
            const double y = (src.keypoints.points(i, 1) - ny0) / nch;
            dst.keypoints.points(i, 0) = x;
            dst.keypoints.points(i, 1) = y;
            int v = src.keypoints.visibility[static_cast<std::size_t>(i)];
            if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) v = 0;
            dst.keypoints.visibility[static_cast<std::size_t>(i)] = v;
            if (v > 0) ++visible;
        }
        if (visible == 0) continue;
        const Corners c = box_to_corners(src.box);
        const Corners clipped{std::clamp(c.x1, nx0, nx0 + ncw), std::clamp(c.y1, ny0, ny0 + nch),
                              std::clamp(c.x2, nx0, nx0 + ncw), std::clamp(c.y2, ny0, ny0 + nch)};
        const BoxXYWH local = corners_to_box(clipped);
        dst.box = {(local.cx - nx0) / ncw, (local.cy - ny0) / nch, local.w / ncw, local.h / nch};
        out.instances.push_back(std::move(dst));
    }
    return out;
}

ImageSample resize_image(const ImageSample& s, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_image: output sides must be positive");
    cv::Mat src(s.height, s.width, CV_64FC3);
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            const Eigen::Index r = static_cast<Eigen::Index>(y) * s.width + x;
            src.at<cv::Vec3d>(y, x) = {s.image(r, 0), s.image(r, 1), s.image(r, 2)};
        }
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(out_w, out_h), 0, 0, cv::INTER_LINEAR);

    ImageSample out = s;
    out.height = out_h;
    out.width = out_w;
    out.image = Mat(static_cast<Eigen::Index>(out_h) * out_w, 3);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const cv::Vec3d px = dst.at<cv::Vec3d>(y, x);
            const Eigen::Index r = static_cast<Eigen::Index>(y) * out_w + x;
            out.image(r, 0) = px[0];
            out.image(r, 1) = px[1];
            out.image(r, 2) = px[2];
        }
    return out;
}

ImageSample augment(const ImageSample& s, Rng& rng, const AugmentConfig& cfg) {
    ImageSample out = s;
    if (rng.bernoulli(cfg.flip_prob)) {
        std::vector<int> perm = cfg.flip_permutation;
        if (perm.empty() && !out.instances.empty()) {
            const int k = out.instances.front().keypoints.size();
            if (k == 14 || k == 17) perm = builtin_flip_permutation(k);
            else {
                perm.resize(static_cast<std::size_t>(k));
                for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
            }
        }
        out = flip_horizontal(out, perm);
    }
    if (rng.bernoulli(cfg.crop_prob)) {
        const double cw = rng.uniform(cfg.crop_min, 1.0);
        const double ch = rng.uniform(cfg.crop_min, 1.0);
        const double x0 = rng.uniform(0.0, 1.0 - cw);
        const double y0 = rng.uniform(0.0, 1.0 - ch);
        out = crop_window(out, x0, y0, cw, ch);
    }
    const int target = rng.uniform_int(cfg.resize_min, cfg.resize_max);
    const double scale = static_cast<double>(target) / std::min(out.height, out.width);
    return resize_image(out, snap32(out.height * scale), snap32(out.width * scale));
}

ImageSample synth_scene(Rng& rng, int n_people, int k, int image_size) {
    if (n_people < 1) throw ConfigError("synth_scene: need at least one person");
    if (image_size < 32) throw ConfigError("synth_scene: image size must be at least 32");
    const Skeleton& skel = skeleton_for(k);

    ImageSample out;
    out.height = image_size;
    out.width = image_size;
    out.image = Mat::Zero(static_cast<Eigen::Index>(image_size) * image_size, 3);
    out.image_id = "synth";

    for (int person = 0; person < n_people; ++person) {
        Mat pts(k, 2);
        for (int i = 0; i < k; ++i) {
            pts(i, 0) = skel.joints[static_cast<std::size_t>(i)][0];
            pts(i, 1) = skel.joints[static_cast<std::size_t>(i)][1];
        }
        const double body = rng.uniform(0.35, 0.6) * image_size;
        const double tilt = rng.uniform(-0.25, 0.25);
        for (std::size_t c = 0; c < skel.chains.size(); ++c) {
            const auto [pivot, mid, tip] = skel.chains[c];
            const bool is_arm = c < 2;
            const double upper = rng.uniform(is_arm ? -0.9 : -0.35, is_arm ? 0.9 : 0.35);
            const double lower = rng.uniform(is_arm ? -0.7 : -0.45, is_arm ? 0.7 : 0.45);
            rotate_about(pts, {mid, tip}, pts(pivot, 0), pts(pivot, 1), upper);
            rotate_about(pts, {tip}, pts(mid, 0), pts(mid, 1), lower);
        }
        std::vector<int> all(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) all[static_cast<std::size_t>(i)] = i;
        rotate_about(pts, all, pts.col(0).mean(), pts.col(1).mean(), tilt);

        // Canonical frame to pixels, then place the whole hull inside.
        pts *= body / 0.93;
        const double margin = 0.06 * body + 2.0;
        const double min_x = pts.col(0).minCoeff(), max_x = pts.col(0).maxCoeff();
        const double min_y = pts.col(1).minCoeff(), max_y = pts.col(1).maxCoeff();
        const double lo_x = margin + 1.0 - min_x;
        const double hi_x = image_size - 1.0 - margin - max_x;
        const double lo_y = margin + 1.0 - min_y;
        const double hi_y = image_size - 1.0 - margin - max_y;
        const double sx = lo_x <= hi_x ? rng.uniform(lo_x, hi_x) : 0.5 * (lo_x + hi_x);
        const double sy = lo_y <= hi_y ? rng.uniform(lo_y, hi_y) : 0.5 * (lo_y + hi_y);
        pts.col(0).array() += sx;
        pts.col(1).array() += sy;

        const double half_width = std::max(1.3, 0.025 * body);
        for (std::size_t e = 0; e < skel.edges.size(); ++e) {
            const auto [a, b] = skel.edges[e];
            draw_segment(out.image, image_size, pts(a, 0), pts(a, 1), pts(b, 0), pts(b, 1),
                         half_width, limb_color(static_cast<int>(e)));
        }
        for (int i = 0; i < k; ++i)
            draw_segment(out.image, image_size, pts(i, 0), pts(i, 1), pts(i, 0), pts(i, 1),
                         half_width * 1.2, {0.95, 0.95, 0.95});

        GtInstance inst;
        inst.keypoints.points = pts / image_size;
        inst.keypoints.visibility.assign(static_cast<std::size_t>(k), 2);
        const double bx1 = (pts.col(0).minCoeff() - margin) / image_size;
        const double bx2 = (pts.col(0).maxCoeff() + margin) / image_size;
        const double by1 = (pts.col(1).minCoeff() - margin) / image_size;
        const double by2 = (pts.col(1).maxCoeff() + margin) / image_size;
        inst.box = corners_to_box({std::clamp(bx1, 0.0, 1.0), std::clamp(by1, 0.0, 1.0),
                                   std::clamp(bx2, 0.0, 1.0), std::clamp(by2, 0.0, 1.0)});
        out.instances.push_back(std::move(inst));
    }
    return out;
}

std::vector<ImageSample> synth_dataset(const DatasetSpec& spec) {
    if (spec.n_images < 1) throw ConfigError("synth_dataset: n_images must be positive");
    if (spec.people_min < 1 || spec.people_max < spec.people_min)
        throw ConfigError("synth_dataset: bad people range");
    const bool val = spec.split == DatasetSpec::Split::val;
    Rng rng(spec.seed + (val ? 0x9E3779B97F4A7C15ull : 0ull));
    std::vector<ImageSample> out;
    out.reserve(static_cast<std::size_t>(spec.n_images));
    for (int i = 0; i < spec.n_images; ++i) {
        const int people = rng.uniform_int(spec.people_min, spec.people_max);
        ImageSample s = synth_scene(rng, people, spec.k, spec.image_size);
        s.image_id = std::string(val ? "val_" : "train_") + std::to_string(i);
        out.push_back(std::move(s));
    }
    return out;
}

Batcher::Batcher(std::vector<ImageSample> samples, int batch_size, std::uint64_t shuffle_seed,
                 bool shuffle)
    : samples_(std::move(samples)),
      batch_size_(batch_size),
      seed_(shuffle_seed),
      shuffle_(shuffle) {
    if (samples_.empty()) throw ConfigError("batcher: need at least one sample");
    if (batch_size_ < 1) throw ConfigError("batcher: batch size must be positive");
    reset(0);
}

void Batcher::reset(std::uint64_t epoch) {
    cursor_ = 0;
    order_.resize(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) order_[i] = static_cast<int>(i);
    if (!shuffle_) return;
    Rng rng(seed_ + epoch);
    for (std::size_t i = samples_.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(order_[i - 1], order_[j]);
    }
}

int Batcher::n_batches() const {
    return static_cast<int>((samples_.size() + static_cast<std::size_t>(batch_size_) - 1) /
                            static_cast<std::size_t>(batch_size_));
}

std::optional<Batch> Batcher::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(cursor_ + static_cast<std::size_t>(batch_size_),
                                     order_.size());
    Batch batch;
    for (std::size_t i = cursor_; i < end; ++i) {
        const ImageSample& s = samples_[static_cast<std::size_t>(order_[i])];
        batch.height = std::max(batch.height, s.height);
        batch.width = std::max(batch.width, s.width);
    }
    for (std::size_t i = cursor_; i < end; ++i) {
        const ImageSample& s = samples_[static_cast<std::size_t>(order_[i])];
        ImageSample padded = s;
        padded.height = batch.height;
        padded.width = batch.width;
        padded.image = Mat::Zero(static_cast<Eigen::Index>(batch.height) * batch.width, 3);
        Mat mask = Mat::Zero(static_cast<Eigen::Index>(batch.height) * batch.width, 1);
        for (int y = 0; y < s.height; ++y) {
            padded.image.block(static_cast<Eigen::Index>(y) * batch.width, 0, s.width, 3) =
                s.image.block(static_cast<Eigen::Index>(y) * s.width, 0, s.width, 3);
            mask.block(static_cast<Eigen::Index>(y) * batch.width, 0, s.width, 1).setOnes();
        }
        const double fx = static_cast<double>(s.width) / batch.width;
        const double fy = static_cast<double>(s.height) / batch.height;
        for (GtInstance& inst : padded.instances) {
            inst.box.cx *= fx;
            inst.box.w *= fx;
            inst.box.cy *= fy;
            inst.box.h *= fy;
            inst.keypoints.points.col(0) *= fx;
            inst.keypoints.points.col(1) *= fy;
        }
        batch.samples.push_back(std::move(padded));
        batch.masks.push_back(std::move(mask));
    }
    cursor_ = end;
    return batch;
}

}  // namespace edpose
