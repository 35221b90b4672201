#include "edpose/checkpoint.hpp"
#include "edpose/config.hpp"
#include "edpose/errors.hpp"
#include "edpose/runner.hpp"

#include "doctest.h"
#include "json.hpp"
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace edpose;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("edpose_cli_" + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

/// Small model on small synthetic images; fast enough to train in-process.
RunConfig tiny_cfg() {
    RunConfig c;
    c.model.dim = 16;
    c.model.n_keypoints = 14;
    c.model.n_coarse = 12;
    c.model.n_fine = 4;
    c.model.encoder_layers = 1;
    c.model.human_layers = 2;
    c.model.hk_layers = 2;
    c.model.n_heads = 4;
    c.model.n_points = 2;
    c.model.n_levels = 3;
    c.model.ffn_dim = 32;
    c.model.base_channels = 2;
    c.optimization.lr = 1e-3;
    c.optimization.batch_size = 1;
    c.optimization.epochs = 1000;
    c.optimization.seed = 5;
    c.optimization.decay_epoch = 100000;
    c.data.source = "synthetic";
    c.data.seed = 3;
    c.data.n_images = 2;
    c.data.n_val = 0;
    c.data.people_min = 1;
    c.data.people_max = 1;
    c.data.image_size = 32;
    c.data.augment = false;
    return c;
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<nlohmann::json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        lines.push_back(nlohmann::json::parse(line));
    }
    return lines;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    REQUIRE(out.good());
    out << content;
}

int run_binary(const std::string& args, const TempDir& dir, std::string& out, std::string& err) {
    const std::string out_path = dir.sub("cmd_stdout.txt");
    const std::string err_path = dir.sub("cmd_stderr.txt");
    const std::string cmd = std::string(EDPOSE_BIN_DIR) + "/edpose " + args + " > " + out_path +
                            " 2> " + err_path;
    int rc = std::system(cmd.c_str());
    out = read_file(out_path);
    err = read_file(err_path);
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

void write_png(const std::string& path, const ImageSample& s) {
    cv::Mat bgr(s.height, s.width, CV_8UC3);
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            const int row = y * s.width + x;
            auto c8 = [&](int ch) {
                return static_cast<unsigned char>(std::clamp(s.image(row, ch), 0.0, 1.0) * 255.0);
            };
            bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(c8(2), c8(1), c8(0));
        }
    REQUIRE(cv::imwrite(path, bgr));
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("training writes one metrics record per step plus both checkpoints") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 7;

    TrainArtifacts art = train_run(cfg, dir.sub("run"));
    CHECK(art.steps == 7);

    auto lines = read_jsonl(art.metrics_path);
    REQUIRE(lines.size() == 7);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& line = lines[i];
        CHECK(line.at("step").get<int>() == static_cast<int>(i) + 1);
        CHECK(line.at("epoch").get<int>() >= 1);
        CHECK(line.at("batch").is_string());
        CHECK(std::isfinite(line.at("loss").get<double>()));
        CHECK(std::isfinite(line.at("grad_norm").get<double>()));
        CHECK(line.at("lr").get<double>() == cfg.optimization.lr);
        CHECK(line.at("terms").is_object());
    }

    CHECK(fs::exists(art.last_checkpoint));
    CHECK(fs::exists(art.best_checkpoint));
    CHECK(fs::exists(art.curve_path));
    CHECK(fs::file_size(art.curve_path) > 100);
    CHECK(read_file(art.curve_path).find("<svg") != std::string::npos);
    // no validation split: best falls back to a copy of last
    CHECK(art.best_ap == -1.0);
    CHECK(read_file(art.best_checkpoint) == read_file(art.last_checkpoint));
}

TEST_CASE("fifty steps yield exactly fifty records") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 50;

    TrainArtifacts art = train_run(cfg, dir.sub("run"));
    CHECK(art.steps == 50);
    CHECK(read_jsonl(art.metrics_path).size() == 50);
}

TEST_CASE("the same seed reproduces metrics and checkpoint bits") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 6;

    TrainArtifacts a = train_run(cfg, dir.sub("a"), {true});
    TrainArtifacts b = train_run(cfg, dir.sub("b"), {true});

    auto la = read_jsonl(a.metrics_path);
    auto lb = read_jsonl(b.metrics_path);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) {
        CHECK(la[i].at("loss").get<double>() ==
              doctest::Approx(lb[i].at("loss").get<double>()).epsilon(1e-6));
        CHECK(la[i].at("grad_norm").get<double>() ==
              doctest::Approx(lb[i].at("grad_norm").get<double>()).epsilon(1e-6));
    }
    CHECK(read_file(a.last_checkpoint) == read_file(b.last_checkpoint));

    RunConfig other = cfg;
    other.optimization.seed = 77;
    TrainArtifacts c = train_run(other, dir.sub("c"), {true});
    auto lc = read_jsonl(c.metrics_path);
    CHECK(lc[0].at("loss").get<double>() != la[0].at("loss").get<double>());
}

TEST_CASE("turning off human box supervision drops those loss terms") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 2;

    TrainArtifacts on = train_run(cfg, dir.sub("on"));
    auto on_terms = read_jsonl(on.metrics_path)[0].at("terms");
    CHECK(on_terms.count("h0.l_c") == 1);
    CHECK(on_terms.count("h1.l_h_l1") == 1);
    CHECK(on_terms.count("hk0.l_k_oks") == 1);

    cfg.loss.human_det_supervision = false;
    TrainArtifacts off = train_run(cfg, dir.sub("off"));
    auto off_terms = read_jsonl(off.metrics_path)[0].at("terms");
    for (const auto& [key, value] : off_terms.items()) {
        CHECK(key.rfind("hk", 0) == 0);
    }
    CHECK(off_terms.count("hk0.l_c") == 1);
    CHECK(off_terms.count("hk1.l_k_l1") == 1);
}

TEST_CASE("learning rate decays once at the configured epoch") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.epochs = 3;
    cfg.optimization.max_steps = -1;
    cfg.optimization.decay_epoch = 2;
    cfg.optimization.decay_factor = 0.5;

    TrainArtifacts art = train_run(cfg, dir.sub("run"));
    auto lines = read_jsonl(art.metrics_path);
    REQUIRE(lines.size() == 6);  // 2 images, batch 1, 3 epochs
    for (const auto& line : lines) {
        double expect = line.at("epoch").get<int>() >= 2 ? cfg.optimization.lr * 0.5
                                                         : cfg.optimization.lr;
        CHECK(line.at("lr").get<double>() == expect);
    }
}

TEST_CASE("a checkpoint restores to a bit-identical model") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 3;
    TrainArtifacts art = train_run(cfg, dir.sub("run"));

    Checkpoint ck = load_checkpoint(art.last_checkpoint);
    CHECK(ck.step == 3);
    CHECK(ck.optimizer_steps == 3);
    CHECK(serialize_run_config(ck.config) == serialize_run_config(cfg));
    CHECK(!ck.rng_state.empty());

    // optimizer moments were captured, not just values
    double moment_norm = 0.0;
    for (const auto& [name, blob] : ck.params)
        if (blob.moment1.size() > 0) moment_norm += blob.moment1.norm();
    CHECK(moment_norm > 0.0);

    // two restores agree bit for bit on a forward pass
    Rng r1(ck.config.optimization.seed), r2(ck.config.optimization.seed);
    PoseModel m1(ck.config.model, r1), m2(ck.config.model, r2);
    restore_parameters(ck, m1.parameters());
    restore_parameters(ck, m2.parameters());
    auto sample = build_dataset(cfg, DatasetSpec::Split::train).front();
    ad::Tape t1, t2;
    ModelOutputs o1 = m1.forward(t1, sample.image, sample.height, sample.width);
    ModelOutputs o2 = m2.forward(t2, sample.image, sample.height, sample.width);
    CHECK(t1.val(o1.pose.scores) == t2.val(o2.pose.scores));
    CHECK(t1.val(o1.pose.keypoints) == t2.val(o2.pose.keypoints));

    // saving the loaded state reproduces the file exactly
    save_checkpoint(dir.sub("resaved.ckpt"), ck);
    CHECK(read_file(dir.sub("resaved.ckpt")) == read_file(art.last_checkpoint));
}

TEST_CASE("restore rejects renamed and reshaped parameters") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 1;
    TrainArtifacts art = train_run(cfg, dir.sub("run"));
    Checkpoint ck = load_checkpoint(art.last_checkpoint);

    Rng rng(1);
    PoseModel model(cfg.model, rng);

    Checkpoint renamed = ck;
    auto node = renamed.params.extract(renamed.params.begin());
    node.key() = "no_such.parameter";
    renamed.params.insert(std::move(node));
    CHECK_THROWS_AS(restore_parameters(renamed, model.parameters()), SchemaError);

    Checkpoint reshaped = ck;
    reshaped.params.at("class_head.weight").value = Mat::Zero(2, 2);
    CHECK_THROWS_AS(restore_parameters(reshaped, model.parameters()), SchemaError);

    Checkpoint short_one = ck;
    short_one.params.erase(short_one.params.begin());
    CHECK_THROWS_AS(restore_parameters(short_one, model.parameters()), SchemaError);

    CHECK_THROWS_AS(load_checkpoint(dir.sub("missing.ckpt")), IoError);
    write_file(dir.sub("junk.ckpt"), "not a checkpoint at all");
    CHECK_THROWS_AS(load_checkpoint(dir.sub("junk.ckpt")), ParseError);
}

TEST_CASE("evaluation writes the five-field report") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 2;
    cfg.data.n_val = 2;
    TrainArtifacts art = train_run(cfg, dir.sub("run"));
    CHECK(art.best_ap >= 0.0);  // validation ran
    CHECK(read_jsonl(art.val_metrics_path).size() >= 1);

    EvalResult r = eval_run(art.last_checkpoint, dir.sub("eval"), DatasetSpec::Split::val);
    auto doc = nlohmann::json::parse(read_file(dir.sub("eval") + "/eval.json"));
    REQUIRE(doc.is_object());
    CHECK(doc.size() == 5);
    for (const char* key : {"ap", "ap50", "ap75", "ap_m", "ap_l"}) {
        REQUIRE(doc.count(key) == 1);
        double v = doc.at(key).get<double>();
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(doc.at("ap").get<double>() == r.ap);

    // same checkpoint, train split
    CHECK_NOTHROW(eval_run(art.last_checkpoint, dir.sub("eval_train"),
                           DatasetSpec::Split::train));

    // dataset with a different keypoint count is rejected
    RunConfig mismatched = cfg;
    mismatched.model.n_keypoints = 17;
    CHECK_THROWS_AS(eval_run(art.last_checkpoint, dir.sub("eval_bad"),
                             DatasetSpec::Split::val, &mismatched),
                    SchemaError);
}

TEST_CASE("inference filters by score and renders on demand") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 2;
    TrainArtifacts art = train_run(cfg, dir.sub("run"));

    Rng rng(9);
    ImageSample scene = synth_scene(rng, 1, 14, 64);
    const std::string png = dir.sub("scene.png");
    write_png(png, scene);

    InferArtifacts all = infer_run(art.last_checkpoint, png, dir.sub("all"), 0.0, false);
    CHECK(all.n_instances > 0);
    CHECK(all.n_instances <= cfg.model.n_fine);
    CHECK(all.overlay_path.empty());

    auto doc = nlohmann::json::parse(read_file(all.json_path));
    CHECK(doc.at("width").get<int>() % 32 == 0);
    CHECK(doc.at("height").get<int>() % 32 == 0);
    REQUIRE(doc.at("instances").size() == static_cast<std::size_t>(all.n_instances));
    for (const auto& inst : doc.at("instances")) {
        CHECK(inst.at("score").get<double>() >= 0.0);
        CHECK(inst.at("box").size() == 4);
        CHECK(inst.at("keypoints").size() == 14);
        CHECK(inst.at("keypoints")[0].size() == 2);
        CHECK(inst.at("keypoint_boxes").size() == 14);
        CHECK(inst.at("keypoint_boxes")[3].size() == 4);
    }

    InferArtifacts none = infer_run(art.last_checkpoint, png, dir.sub("none"), 1.1, false);
    CHECK(none.n_instances == 0);
    CHECK(nlohmann::json::parse(read_file(none.json_path)).at("instances").empty());

    InferArtifacts drawn = infer_run(art.last_checkpoint, png, dir.sub("drawn"), 0.0, true);
    REQUIRE(!drawn.overlay_path.empty());
    cv::Mat overlay = cv::imread(drawn.overlay_path);
    REQUIRE(!overlay.empty());
    CHECK(overlay.rows % 32 == 0);
    CHECK(overlay.cols % 32 == 0);

    CHECK_THROWS_AS(infer_run(art.last_checkpoint, dir.sub("no_image.png"), dir.sub("x"), 0.5,
                              false),
                    IoError);
}

TEST_CASE("diverged training aborts naming the batch") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.lr = 1e150;
    cfg.optimization.max_steps = 10;
    CHECK_THROWS_WITH_AS(train_run(cfg, dir.sub("run")), doctest::Contains("batch"),
                         NonFiniteLossError);
}

TEST_CASE("synthetic datasets round trip through the cache directory") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();

    setenv("EDPOSE_CACHE_DIR", dir.sub("cache").c_str(), 1);
    auto first = build_dataset(cfg, DatasetSpec::Split::train);
    bool cache_file_exists = false;
    for (const auto& entry : fs::directory_iterator(dir.sub("cache")))
        cache_file_exists |= entry.path().extension() == ".bin";
    CHECK(cache_file_exists);

    auto second = build_dataset(cfg, DatasetSpec::Split::train);
    unsetenv("EDPOSE_CACHE_DIR");
    auto uncached = build_dataset(cfg, DatasetSpec::Split::train);

    REQUIRE(first.size() == second.size());
    REQUIRE(first.size() == uncached.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].image == second[i].image);
        CHECK(first[i].image == uncached[i].image);
        CHECK(first[i].image_id == second[i].image_id);
        REQUIRE(first[i].instances.size() == second[i].instances.size());
        for (std::size_t j = 0; j < first[i].instances.size(); ++j) {
            CHECK(first[i].instances[j].keypoints.points ==
                  second[i].instances[j].keypoints.points);
            CHECK(first[i].instances[j].keypoints.visibility ==
                  second[i].instances[j].keypoints.visibility);
            CHECK(first[i].instances[j].box.cx == second[i].instances[j].box.cx);
        }
    }
}

TEST_CASE("ablation compares every mask, size, and query-count variant") {
    TempDir dir;

    // one 128x128 three-keypoint image; big enough for the 200-query variant
    nlohmann::json image;
    image["id"] = 1;
    image["width"] = 128;
    image["height"] = 128;
    nlohmann::json ann;
    ann["id"] = 1;
    ann["image_id"] = 1;
    ann["category_id"] = 1;
    ann["iscrowd"] = 0;
    ann["area"] = 1024.0;
    ann["bbox"] = nlohmann::json::array({32.0, 32.0, 64.0, 64.0});
    ann["keypoints"] =
        nlohmann::json::array({40.0, 40.0, 2.0, 64.0, 64.0, 2.0, 80.0, 88.0, 2.0});
    nlohmann::json cat;
    cat["id"] = 1;
    cat["name"] = "person";
    cat["keypoints"] = nlohmann::json::array({"a", "b", "c"});
    nlohmann::json coco;
    coco["images"] = nlohmann::json::array({image});
    coco["annotations"] = nlohmann::json::array({ann});
    coco["categories"] = nlohmann::json::array({cat});
    write_file(dir.sub("tiny_coco.json"), coco.dump());

    RunConfig base = tiny_cfg();
    base.model.n_keypoints = 3;
    base.model.n_coarse = 210;
    base.model.n_fine = 4;
    base.optimization.max_steps = 2;
    base.data.source = "coco_json";
    base.data.path = dir.sub("tiny_coco.json");
    base.data.n_images = 1;
    base.data.image_size = 128;

    std::string path = ablate_run(base, dir.sub("ablate"));
    auto doc = nlohmann::json::parse(read_file(path));
    REQUIRE(doc.at("variants").size() == 12);

    std::set<std::string> names;
    for (const auto& v : doc.at("variants")) {
        names.insert(v.at("name").get<std::string>());
        CHECK(v.at("loss").size() == 2);
        CHECK(v.at("steps").get<int>() == 2);
        CHECK(std::isfinite(v.at("final_loss").get<double>()));
    }
    const std::set<std::string> expected = {
        "mask_ours", "mask_full", "mask_no_hk", "mask_no_hh", "size_none", "size_min",
        "size_max",  "size_ffn",  "size_learned", "m_50",     "m_100",    "m_200"};
    CHECK(names == expected);

    for (const auto& v : doc.at("variants")) {
        if (v.at("name") == "m_200") CHECK(v.at("n_fine").get<int>() == 200);
        if (v.at("name") == "mask_full") CHECK(v.at("mask") == "full");
        if (v.at("name") == "size_learned") CHECK(v.at("size_init") == "learned");
    }
}

TEST_CASE("the binary reports taxonomy-coded single-line errors") {
    TempDir dir;
    std::string out, err;

    int rc = run_binary("train --config " + dir.sub("missing.cfg"), dir, out, err);
    CHECK(rc != 0);
    CHECK(err.rfind("error[E_IO]:", 0) == 0);
    CHECK(err.find('\n') == err.size() - 1);  // single line

    write_file(dir.sub("bad.cfg"), "[model]\nwobble = 3\n");
    rc = run_binary("train --config " + dir.sub("bad.cfg"), dir, out, err);
    CHECK(rc != 0);
    CHECK(err.rfind("error[E_CONFIG]:", 0) == 0);
    CHECK(err.find("wobble") != std::string::npos);

    rc = run_binary("", dir, out, err);
    CHECK(rc != 0);
    CHECK(err.rfind("error[E_CLI]:", 0) == 0);

    rc = run_binary("eval --checkpoint " + dir.sub("none.ckpt"), dir, out, err);
    CHECK(rc != 0);
    CHECK(err.rfind("error[E_IO]:", 0) == 0);
}

TEST_CASE("a full train, eval, infer cycle through the binary") {
    TempDir dir;
    RunConfig cfg = tiny_cfg();
    cfg.optimization.max_steps = 3;
    cfg.data.n_val = 1;
    write_file(dir.sub("run.cfg"), serialize_run_config(cfg));

    std::string out, err;
    int rc = run_binary("train --config " + dir.sub("run.cfg") + " --out " + dir.sub("run") +
                            " --deterministic",
                        dir, out, err);
    CHECK(rc == 0);
    CHECK(err.empty());
    CHECK(out.find("trained 3 steps") != std::string::npos);
    REQUIRE(fs::exists(dir.sub("run") + "/last.ckpt"));

    rc = run_binary("eval --checkpoint " + dir.sub("run") + "/last.ckpt --split val --out " +
                        dir.sub("eval"),
                    dir, out, err);
    CHECK(rc == 0);
    auto doc = nlohmann::json::parse(out);
    CHECK(doc.size() == 5);
    CHECK(fs::exists(dir.sub("eval") + "/eval.json"));

    Rng rng(4);
    write_png(dir.sub("scene.png"), synth_scene(rng, 1, 14, 64));
    rc = run_binary("infer --checkpoint " + dir.sub("run") + "/last.ckpt --image " +
                        dir.sub("scene.png") + " --out " + dir.sub("infer") +
                        " --score-threshold 0.0 --render",
                    dir, out, err);
    CHECK(rc == 0);
    CHECK(fs::exists(dir.sub("infer") + "/predictions.json"));
    CHECK(fs::exists(dir.sub("infer") + "/overlay.png"));

    // a seed override changes the trained weights
    rc = run_binary("train --config " + dir.sub("run.cfg") + " --out " + dir.sub("run2") +
                        " --seed 99",
                    dir, out, err);
    CHECK(rc == 0);
    CHECK(read_file(dir.sub("run2") + "/last.ckpt") != read_file(dir.sub("run") + "/last.ckpt"));
}

}  // TEST_SUITE
