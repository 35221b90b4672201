#include "edpose/config.hpp"
#include "edpose/errors.hpp"
#include "edpose/eval.hpp"
#include "edpose/runner.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <string>

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "runs/out";
    long long seed = -1;  // >= 0 overrides the config seed
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
    auto* config = cmd->add_option("--config", args.config_path, "run config file");
    if (config_required) config->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_flag("--deterministic", args.deterministic, "force fully serial execution");
}

edpose::RunConfig load_config(const CommonArgs& args) {
    edpose::RunConfig cfg = edpose::load_run_config(args.config_path);
    if (args.seed >= 0) cfg.optimization.seed = static_cast<std::uint64_t>(args.seed);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"end-to-end multi-person pose estimator"};
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, infer_args, ablate_args;
    std::string eval_checkpoint, eval_split = "val";
    std::string infer_checkpoint, infer_image;
    double score_threshold = 0.5;
    bool render = false;

    CLI::App* train = app.add_subcommand("train", "train a model from a config");
    add_common(train, train_args, true);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval->add_option("--split", eval_split, "train or val")
        ->check(CLI::IsMember({"train", "val"}));
    add_common(eval, eval_args, false);

    CLI::App* infer = app.add_subcommand("infer", "run a checkpoint on one image");
    infer->add_option("--checkpoint", infer_checkpoint, "checkpoint file")->required();
    infer->add_option("--image", infer_image, "input image file")->required();
    infer->add_option("--score-threshold", score_threshold, "keep instances scoring at least this");
    infer->add_flag("--render", render, "also write an overlay image");
    add_common(infer, infer_args, false);

    CLI::App* ablate = app.add_subcommand("ablate", "train and compare ablation variants");
    add_common(ablate, ablate_args, true);

    try {
        app.parse(argc, argv);

        if (train->parsed()) {
            edpose::RunConfig cfg = load_config(train_args);
            edpose::TrainArtifacts art = edpose::train_run(
                cfg, train_args.out_dir, {train_args.deterministic});
            std::cout << "trained " << art.steps << " steps\n"
                      << "metrics: " << art.metrics_path << "\n"
                      << "last checkpoint: " << art.last_checkpoint << "\n"
                      << "best checkpoint: " << art.best_checkpoint << "\n";
            if (art.best_ap >= 0.0) std::cout << "best val ap: " << art.best_ap << "\n";
        } else if (eval->parsed()) {
            edpose::RunConfig override_cfg;
            const edpose::RunConfig* override_ptr = nullptr;
            if (!eval_args.config_path.empty()) {
                override_cfg = load_config(eval_args);
                override_ptr = &override_cfg;
            }
            auto split = eval_split == "train" ? edpose::DatasetSpec::Split::train
                                               : edpose::DatasetSpec::Split::val;
            edpose::EvalResult r =
                edpose::eval_run(eval_checkpoint, eval_args.out_dir, split, override_ptr);
            std::cout << edpose::eval_result_json(r) << "\n";
        } else if (infer->parsed()) {
            edpose::InferArtifacts art = edpose::infer_run(
                infer_checkpoint, infer_image, infer_args.out_dir, score_threshold, render);
            std::cout << art.n_instances << " instances\n"
                      << "predictions: " << art.json_path << "\n";
            if (!art.overlay_path.empty()) std::cout << "overlay: " << art.overlay_path << "\n";
        } else if (ablate->parsed()) {
            edpose::RunConfig cfg = load_config(ablate_args);
            std::string path = edpose::ablate_run(cfg, ablate_args.out_dir,
                                                  {ablate_args.deterministic});
            std::cout << "comparison: " << path << "\n";
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error[E_CLI]: " << e.what() << "\n";
        return 2;
    } catch (const edpose::Error& e) {
        std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[E_INTERNAL]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
