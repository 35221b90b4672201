#include "edpose/runner.hpp"

#include "edpose/errors.hpp"

#include "json.hpp"
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace edpose {
namespace {

int snap32(int v) {
    int snapped = ((v + 16) / 32) * 32;
    return std::max(snapped, 32);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_mat(std::ostream& out, const Mat& m) {
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

Mat read_mat(std::istream& in) {
    auto rows = read_u64(in);
    auto cols = read_u64(in);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    return m;
}

constexpr char kCacheMagic[8] = {'E', 'D', 'P', 'O', 'S', 'E', 'D', 'S'};

bool read_sample_cache(const std::string& path, std::vector<ImageSample>& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, 8) != std::string(kCacheMagic, 8)) return false;

    auto n = read_u64(in);
    std::vector<ImageSample> samples(n);
    for (auto& s : samples) {
        s.height = static_cast<int>(read_u64(in));
        s.width = static_cast<int>(read_u64(in));
        s.image = read_mat(in);
        auto id_len = read_u64(in);
        if (!in) return false;
        s.image_id.resize(id_len);
        in.read(s.image_id.data(), static_cast<std::streamsize>(id_len));
        auto n_inst = read_u64(in);
        if (!in) return false;
        s.instances.resize(n_inst);
        for (auto& inst : s.instances) {
            Mat box = read_mat(in);
            if (box.rows() != 1 || box.cols() != 4) return false;
            inst.box = {box(0, 0), box(0, 1), box(0, 2), box(0, 3)};
            inst.keypoints.points = read_mat(in);
            auto k = read_u64(in);
            inst.keypoints.visibility.resize(k);
            for (auto& v : inst.keypoints.visibility) v = static_cast<int>(read_u64(in));
        }
    }
    if (!in) return false;
    out = std::move(samples);
    return true;
}

void write_sample_cache(const std::string& path, const std::vector<ImageSample>& samples) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) return;  // caching is best-effort
    out.write(kCacheMagic, sizeof(kCacheMagic));
    write_u64(out, samples.size());
    for (const auto& s : samples) {
        write_u64(out, static_cast<std::uint64_t>(s.height));
        write_u64(out, static_cast<std::uint64_t>(s.width));
        write_mat(out, s.image);
        write_u64(out, s.image_id.size());
        out.write(s.image_id.data(), static_cast<std::streamsize>(s.image_id.size()));
        write_u64(out, s.instances.size());
        for (const auto& inst : s.instances) {
            Mat box(1, 4);
            box << inst.box.cx, inst.box.cy, inst.box.w, inst.box.h;
            write_mat(out, box);
            write_mat(out, inst.keypoints.points);
            write_u64(out, inst.keypoints.visibility.size());
            for (int v : inst.keypoints.visibility)
                write_u64(out, static_cast<std::uint64_t>(v));
        }
    }
}

LossReport image_loss(ad::Tape& t, PoseModel& model, const ImageSample& s, const RunConfig& cfg,
                      const std::vector<double>& constants) {
    ModelOutputs out = model.forward(t, s.image, s.height, s.width);
    static const HumanDetections no_human_supervision{};
    const HumanDetections& human =
        cfg.loss.human_det_supervision ? out.human_layers : no_human_supervision;
    return total_loss(t, human, out.hk_layers, cfg.model.n_keypoints, s.instances,
                      cfg.loss.weights, constants);
}

void write_loss_curve(const std::string& path, const std::vector<double>& losses) {
    const int width = 720, height = 400, pad = 45;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write loss curve " + path);

    double lo = losses.empty() ? 0.0 : *std::min_element(losses.begin(), losses.end());
    double hi = losses.empty() ? 1.0 : *std::max_element(losses.begin(), losses.end());
    if (hi <= lo) hi = lo + 1.0;

    auto sx = [&](std::size_t i) {
        double frac = losses.size() > 1 ? static_cast<double>(i) / (losses.size() - 1) : 0.0;
        return pad + frac * (width - 2 * pad);
    };
    auto sy = [&](double v) { return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad); };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad
        << "\" y2=\"" << height - pad << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\""
        << height - pad << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << pad << "\" y=\"" << pad - 10 << "\" font-size=\"12\">loss, max "
        << hi << "</text>\n";
    out << "<text x=\"" << pad << "\" y=\"" << height - pad + 30 << "\" font-size=\"12\">step 1.."
        << losses.size() << ", min " << lo << "</text>\n";
    out << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < losses.size(); ++i)
        out << sx(i) << "," << sy(losses[i]) << " ";
    out << "\"/>\n</svg>\n";
}

Checkpoint make_checkpoint(const RunConfig& cfg, PoseModel& model, const nn::AdamW& opt,
                           std::int64_t epoch, std::int64_t step, const Rng& aug_rng) {
    Checkpoint ck;
    ck.config = cfg;
    ck.epoch = epoch;
    ck.step = step;
    ck.optimizer_steps = opt.steps_taken;
    ck.rng_state = aug_rng.serialize_state();
    capture_parameters(ck, model.parameters());
    return ck;
}

/// Model rebuilt from a checkpoint: constructed from its config snapshot,
/// parameters overwritten with the stored blobs.
PoseModel model_from(const Checkpoint& ck) {
    Rng rng(ck.config.optimization.seed);
    PoseModel model(ck.config.model, rng);
    restore_parameters(ck, model.parameters());
    return model;
}

cv::Mat to_bgr8(const Mat& image, int h, int w) {
    cv::Mat bgr(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int row = y * w + x;
            auto clamp8 = [](double v) {
                return static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
            };
            bgr.at<cv::Vec3b>(y, x) =
                cv::Vec3b(clamp8(image(row, 2)), clamp8(image(row, 1)), clamp8(image(row, 0)));
        }
    return bgr;
}

cv::Rect box_to_rect(const BoxXYWH& b, int h, int w) {
    int x0 = static_cast<int>(std::lround((b.cx - b.w / 2) * w));
    int y0 = static_cast<int>(std::lround((b.cy - b.h / 2) * h));
    int x1 = static_cast<int>(std::lround((b.cx + b.w / 2) * w));
    int y1 = static_cast<int>(std::lround((b.cy + b.h / 2) * h));
    return {x0, y0, std::max(x1 - x0, 1), std::max(y1 - y0, 1)};
}

nlohmann::json box_json(const BoxXYWH& b) {
    return nlohmann::json::array({b.cx, b.cy, b.w, b.h});
}

}  // namespace

std::vector<double> eval_constants(const RunConfig& cfg) {
    if (cfg.data.source == "coco_json" && cfg.model.n_keypoints == 17)
        return coco_oks_constants();
    return uniform_oks_constants(cfg.model.n_keypoints);
}

std::vector<ImageSample> build_dataset(const RunConfig& cfg, DatasetSpec::Split split) {
    const bool train = split == DatasetSpec::Split::train;
    if (cfg.data.source == "coco_json") {
        const std::string& path = train ? cfg.data.path : cfg.data.val_path;
        if (path.empty()) {
            if (train) throw ConfigError("data.path is required when data.source = coco_json");
            return {};
        }
        auto samples = load_coco_keypoints(path, cfg.model.n_keypoints);
        int limit = train ? cfg.data.n_images : cfg.data.n_val;
        if (limit > 0 && static_cast<int>(samples.size()) > limit)
            samples.resize(static_cast<std::size_t>(limit));
        return samples;
    }

    DatasetSpec spec;
    spec.source = DatasetSpec::Source::synthetic;
    spec.split = split;
    spec.k = cfg.model.n_keypoints;
    spec.seed = cfg.data.seed;
    spec.n_images = train ? cfg.data.n_images : cfg.data.n_val;
    spec.people_min = cfg.data.people_min;
    spec.people_max = cfg.data.people_max;
    spec.image_size = cfg.data.image_size;
    if (spec.n_images <= 0) return {};

    const char* cache_dir = std::getenv("EDPOSE_CACHE_DIR");
    std::string cache_path;
    if (cache_dir != nullptr && *cache_dir != '\0') {
        std::ostringstream key;
        key << "synth:" << (train ? "train" : "val") << ":" << spec.k << ":" << spec.seed << ":"
            << spec.n_images << ":" << spec.people_min << ":" << spec.people_max << ":"
            << spec.image_size;
        std::ostringstream name;
        name << "edpose_" << std::hex << fnv1a(key.str()) << ".bin";
        fs::create_directories(cache_dir);
        cache_path = (fs::path(cache_dir) / name.str()).string();
        std::vector<ImageSample> cached;
        if (read_sample_cache(cache_path, cached)) return cached;
    }

    auto samples = synth_dataset(spec);
    if (!cache_path.empty()) write_sample_cache(cache_path, samples);
    return samples;
}

EvalResult evaluate_model(PoseModel& model, const std::vector<ImageSample>& samples,
                          const std::vector<double>& oks_constants) {
    std::vector<EvalImage> images;
    images.reserve(samples.size());
    for (const auto& s : samples) {
        ad::Tape t;
        ModelOutputs out = model.forward(t, s.image, s.height, s.width);
        auto preds = read_predictions(t, out.pose, 0.0);

        EvalImage img;
        img.height = s.height;
        img.width = s.width;
        img.gt = s.instances;
        img.predictions.reserve(preds.size());
        for (auto& p : preds)
            img.predictions.push_back({p.score, p.box, std::move(p.keypoints)});
        images.push_back(std::move(img));
    }
    EvalConfig cfg;
    cfg.oks_constants = oks_constants;
    return evaluate(images, cfg);
}

TrainArtifacts train_run(const RunConfig& cfg, const std::string& out_dir,
                         const TrainOptions& opts) {
    if (cfg.optimization.batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (cfg.optimization.epochs <= 0 && cfg.optimization.max_steps < 0)
        throw ConfigError("either epochs or max_steps must bound the run");
    if (opts.deterministic) cv::setNumThreads(0);

    fs::create_directories(out_dir);
    TrainArtifacts art;
    art.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    art.val_metrics_path = (fs::path(out_dir) / "val_metrics.jsonl").string();
    art.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
    art.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
    art.curve_path = (fs::path(out_dir) / "loss_curve.svg").string();

    auto train_samples = build_dataset(cfg, DatasetSpec::Split::train);
    if (train_samples.empty()) throw ConfigError("training split is empty");
    auto val_samples = build_dataset(cfg, DatasetSpec::Split::val);
    const auto constants = eval_constants(cfg);

    Rng model_rng(cfg.optimization.seed);
    PoseModel model(cfg.model, model_rng);
    auto params = model.parameters();

    nn::AdamW opt;
    opt.lr = cfg.optimization.lr;
    opt.weight_decay = cfg.optimization.weight_decay;
    opt.clip_norm = cfg.optimization.clip_norm;

    Rng aug_rng(cfg.data.seed ^ 0x5851f42d4c957f2dull);

    std::ofstream metrics(art.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics " + art.metrics_path);
    std::ofstream val_metrics(art.val_metrics_path, std::ios::trunc);

    std::vector<double> losses;
    std::int64_t step = 0;
    std::int64_t last_val_step = -1;
    bool done = false;
    bool best_saved = false;

    auto run_validation = [&](int at_epoch) {
        if (val_samples.empty()) return;
        last_val_step = step;
        EvalResult r = evaluate_model(model, val_samples, constants);
        nlohmann::json line = {{"step", step},   {"epoch", at_epoch},
                               {"ap", r.ap},     {"ap50", r.ap50},
                               {"ap75", r.ap75}, {"ap_m", r.ap_medium},
                               {"ap_l", r.ap_large}};
        val_metrics << line.dump() << "\n" << std::flush;
        if (r.ap >= art.best_ap) {
            art.best_ap = r.ap;
            save_checkpoint(art.best_checkpoint,
                            make_checkpoint(cfg, model, opt, at_epoch, step, aug_rng));
            best_saved = true;
        }
    };

    const int max_epochs = cfg.optimization.epochs > 0
                               ? cfg.optimization.epochs
                               : std::numeric_limits<int>::max();
    int epoch = 0;
    for (epoch = 1; epoch <= max_epochs && !done; ++epoch) {
        if (epoch == cfg.optimization.decay_epoch) opt.lr *= cfg.optimization.decay_factor;

        std::vector<ImageSample> epoch_samples;
        epoch_samples.reserve(train_samples.size());
        for (const auto& s : train_samples)
            epoch_samples.push_back(cfg.data.augment ? augment(s, aug_rng) : s);

        Batcher batcher(std::move(epoch_samples), cfg.optimization.batch_size,
                        cfg.optimization.seed);
        batcher.reset(static_cast<std::uint64_t>(epoch));

        int batch_index = 0;
        while (auto batch = batcher.next()) {
            ++batch_index;
            const std::string batch_id =
                "epoch" + std::to_string(epoch) + "/batch" + std::to_string(batch_index);

            ad::Tape t;
            ad::Var total;
            double batch_loss = 0.0;
            std::map<std::string, double> terms;
            try {
                for (std::size_t i = 0; i < batch->samples.size(); ++i) {
                    LossReport report = image_loss(t, model, batch->samples[i], cfg, constants);
                    batch_loss += report.value;
                    for (const auto& [key, v] : report.terms) terms[key] += v;
                    total = i == 0 ? report.total : t.add(total, report.total);
                }
            } catch (const DomainError& e) {
                // A diverged model emits non-finite boxes, which the matcher
                // rejects before any loss value exists.
                throw NonFiniteLossError("non-finite model state in " + batch_id + ": " +
                                         e.what());
            }
            const double scale = 1.0 / static_cast<double>(batch->samples.size());
            batch_loss *= scale;
            for (auto& [key, v] : terms) v *= scale;

            if (!std::isfinite(batch_loss))
                throw NonFiniteLossError("non-finite loss in " + batch_id);

            t.backward(t.scale(total, scale));
            const double grad_norm = opt.step(params, t);
            if (!std::isfinite(grad_norm))
                throw NonFiniteLossError("non-finite gradients in " + batch_id);
            ++step;

            nlohmann::json line = {{"step", step},
                                   {"epoch", epoch},
                                   {"batch", batch_id},
                                   {"loss", batch_loss},
                                   {"grad_norm", grad_norm},
                                   {"lr", opt.lr},
                                   {"terms", terms}};
            metrics << line.dump() << "\n" << std::flush;
            losses.push_back(batch_loss);

            if (cfg.optimization.eval_period > 0 && step % cfg.optimization.eval_period == 0)
                run_validation(epoch);
            if (cfg.optimization.max_steps >= 0 && step >= cfg.optimization.max_steps) {
                done = true;
                break;
            }
        }
        if (cfg.optimization.eval_period == 0 && !done) run_validation(epoch);
    }
    if (!val_samples.empty() && last_val_step != step)
        run_validation(std::min(epoch, max_epochs));

    art.steps = step;
    save_checkpoint(art.last_checkpoint,
                    make_checkpoint(cfg, model, opt, std::min(epoch, max_epochs), step, aug_rng));
    if (!best_saved) fs::copy_file(art.last_checkpoint, art.best_checkpoint,
                                   fs::copy_options::overwrite_existing);
    write_loss_curve(art.curve_path, losses);
    return art;
}

EvalResult eval_run(const std::string& checkpoint_path, const std::string& out_dir,
                    DatasetSpec::Split split, const RunConfig* data_override) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    const RunConfig& data_cfg = data_override != nullptr ? *data_override : ck.config;
    if (data_cfg.model.n_keypoints != ck.config.model.n_keypoints)
        throw SchemaError("dataset has " + std::to_string(data_cfg.model.n_keypoints) +
                          " keypoints, checkpoint model expects " +
                          std::to_string(ck.config.model.n_keypoints));

    PoseModel model = model_from(ck);
    auto samples = build_dataset(data_cfg, split);
    if (samples.empty()) throw ConfigError("evaluation split is empty");

    EvalResult r = evaluate_model(model, samples, eval_constants(data_cfg));
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "eval.json").string();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << eval_result_json(r) << "\n";
    return r;
}

InferArtifacts infer_run(const std::string& checkpoint_path, const std::string& image_path,
                         const std::string& out_dir, double score_threshold, bool render) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    PoseModel model = model_from(ck);

    cv::Mat bgr = cv::imread(image_path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot read image " + image_path);

    ImageSample s;
    s.height = bgr.rows;
    s.width = bgr.cols;
    s.image_id = fs::path(image_path).stem().string();
    s.image = Mat(bgr.rows * bgr.cols, 3);
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const auto& px = bgr.at<cv::Vec3b>(y, x);
            const int row = y * bgr.cols + x;
            s.image(row, 0) = px[2] / 255.0;
            s.image(row, 1) = px[1] / 255.0;
            s.image(row, 2) = px[0] / 255.0;
        }

    const double target = ck.config.data.image_size;
    const double scale = target / std::min(s.height, s.width);
    const int net_h = snap32(static_cast<int>(std::lround(s.height * scale)));
    const int net_w = snap32(static_cast<int>(std::lround(s.width * scale)));
    ImageSample net = resize_image(s, net_h, net_w);

    ad::Tape t;
    ModelOutputs out = model.forward(t, net.image, net.height, net.width);
    auto preds = read_predictions(t, out.pose, score_threshold);

    fs::create_directories(out_dir);
    InferArtifacts art;
    art.n_instances = static_cast<int>(preds.size());
    art.json_path = (fs::path(out_dir) / "predictions.json").string();

    nlohmann::json doc;
    doc["image"] = image_path;
    doc["height"] = net.height;
    doc["width"] = net.width;
    doc["instances"] = nlohmann::json::array();
    for (const auto& p : preds) {
        nlohmann::json inst;
        inst["score"] = p.score;
        inst["box"] = box_json(p.box);
        inst["keypoints"] = nlohmann::json::array();
        for (int ki = 0; ki < p.keypoints.size(); ++ki)
            inst["keypoints"].push_back(
                {p.keypoints.points(ki, 0), p.keypoints.points(ki, 1)});
        inst["keypoint_boxes"] = nlohmann::json::array();
        for (const auto& kb : p.keypoint_boxes) inst["keypoint_boxes"].push_back(box_json(kb));
        doc["instances"].push_back(std::move(inst));
    }
    std::ofstream jout(art.json_path, std::ios::trunc);
    if (!jout) throw IoError("cannot write " + art.json_path);
    jout << doc.dump(2) << "\n";

    if (render) {
        cv::Mat canvas = to_bgr8(net.image, net.height, net.width);
        for (const auto& p : preds) {
            cv::rectangle(canvas, box_to_rect(p.box, net.height, net.width),
                          cv::Scalar(60, 60, 230), 2);
            for (const auto& kb : p.keypoint_boxes)
                cv::rectangle(canvas, box_to_rect(kb, net.height, net.width),
                              cv::Scalar(230, 160, 60), 1);
            for (int ki = 0; ki < p.keypoints.size(); ++ki) {
                cv::Point center(
                    static_cast<int>(std::lround(p.keypoints.points(ki, 0) * net.width)),
                    static_cast<int>(std::lround(p.keypoints.points(ki, 1) * net.height)));
                cv::circle(canvas, center, 2, cv::Scalar(80, 220, 80), cv::FILLED);
            }
        }
        art.overlay_path = (fs::path(out_dir) / "overlay.png").string();
        if (!cv::imwrite(art.overlay_path, canvas))
            throw IoError("cannot write " + art.overlay_path);
    }
    return art;
}

std::string ablate_run(const RunConfig& base, const std::string& out_dir,
                       const TrainOptions& opts) {
    struct Variant {
        std::string name;
        RunConfig cfg;
    };
    std::vector<Variant> variants;
    for (MaskStrategy m :
         {MaskStrategy::Ours, MaskStrategy::Full, MaskStrategy::NoHK, MaskStrategy::NoHH}) {
        Variant v{std::string("mask_") + to_string(m), base};
        v.cfg.model.mask = m;
        variants.push_back(std::move(v));
    }
    for (SizeInit s :
         {SizeInit::None, SizeInit::Min, SizeInit::Max, SizeInit::Ffn, SizeInit::Learned}) {
        Variant v{std::string("size_") + to_string(s), base};
        v.cfg.model.size_init = s;
        variants.push_back(std::move(v));
    }
    for (int m : {50, 100, 200}) {
        Variant v{"m_" + std::to_string(m), base};
        v.cfg.model.n_fine = m;
        v.cfg.model.n_coarse = std::max(base.model.n_coarse, m);
        variants.push_back(std::move(v));
    }

    fs::create_directories(out_dir);
    nlohmann::json doc;
    doc["variants"] = nlohmann::json::array();
    for (const auto& v : variants) {
        const std::string run_dir = (fs::path(out_dir) / v.name).string();
        TrainArtifacts art = train_run(v.cfg, run_dir, opts);

        std::ifstream metrics(art.metrics_path);
        std::vector<double> losses;
        std::string line;
        while (std::getline(metrics, line)) {
            if (line.empty()) continue;
            losses.push_back(nlohmann::json::parse(line).at("loss").get<double>());
        }

        nlohmann::json entry;
        entry["name"] = v.name;
        entry["mask"] = to_string(v.cfg.model.mask);
        entry["size_init"] = to_string(v.cfg.model.size_init);
        entry["n_fine"] = v.cfg.model.n_fine;
        entry["steps"] = art.steps;
        entry["final_loss"] = losses.empty() ? 0.0 : losses.back();
        entry["loss"] = losses;
        if (art.best_ap >= 0.0) entry["val_ap"] = art.best_ap;
        doc["variants"].push_back(std::move(entry));
    }

    const std::string path = (fs::path(out_dir) / "ablation.json").string();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << doc.dump(2) << "\n";
    return path;
}

}  // namespace edpose
