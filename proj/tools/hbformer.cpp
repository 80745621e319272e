// hbformer <train|eval|gradcheck|synth> --config PATH [--checkpoint PATH]
//                                        [--print-config]
//
// Exit codes: 0 ok, 1 bad config/usage, 2 I/O failure, 3 numerical failure
// (NaN loss; the last saved checkpoint is kept), 4 checkpoint corruption,
// 5 tensor shape mismatch, 6 gradient check failure.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "hbformer/hbformer.hpp"

namespace fs = std::filesystem;
using Scalar = float;

namespace {

std::string idx4(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", i);
    return buf;
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::vector<hbf::SegmentationSample> load_dataset(const hbf::RunConfig& rc) {
    if (rc.data_dir.empty())
        throw hbf::IoError("data_dir not set; nothing to read (generate one with the synth command)");
    if (!fs::is_directory(rc.data_dir))
        throw hbf::IoError("data_dir does not exist: " + rc.data_dir);
    std::vector<hbf::SegmentationSample> out;
    for (int i = 0;; ++i) {
        const std::string img = join_path(rc.data_dir, "img_" + idx4(i) + ".ppm");
        const std::string msk = join_path(rc.data_dir, "mask_" + idx4(i) + ".pgm");
        if (!fs::exists(img)) break;
        hbf::SegmentationSample s;
        s.h = s.w = rc.img_size;
        s.image = hbf::image_read(img, rc.img_size);
        s.mask = hbf::mask_read(msk, rc.img_size);
        s.source_id = i;
        for (int lab : s.mask)
            if (lab >= rc.num_classes)
                throw hbf::ConfigError("mask " + msk + " holds label " + std::to_string(lab) +
                                       " but num_classes = " + std::to_string(rc.num_classes));
        out.push_back(std::move(s));
    }
    if (out.empty())
        throw hbf::IoError("no samples (img_0000.ppm, mask_0000.pgm, ...) in " + rc.data_dir);
    return out;
}

std::string checkpoint_path(const hbf::RunConfig& rc, std::uint64_t seed) {
    return join_path(rc.out_dir, "ckpt_seed" + std::to_string(seed) + ".hbf");
}

int cmd_train(const hbf::RunConfig& rc) {
    const auto data = load_dataset(rc);
    fs::create_directories(rc.out_dir);
    hbf::ModelConfig cfg = rc.to_model_config();
    hbf::TrainOptions opt = rc.to_train_options();
    opt.checkpoint_every = 100;

    std::vector<hbf::MetricsReport> reports;
    for (std::uint64_t seed : rc.seeds) {
        const std::string ckpt = checkpoint_path(rc, seed);
        auto run = hbf::train_one<Scalar>(
            cfg, data, seed, opt,
            [&](hbf::HBFormer<Scalar>& m, long) { hbf::save_checkpoint(ckpt, m.named()); });
        run.report.seed = seed;
        std::printf("seed %llu  final_loss %.10f  mean_dsc %.6f  mean_iou %.6f\n",
                    static_cast<unsigned long long>(seed), run.final_loss, run.report.mean_dsc,
                    run.report.mean_iou);
        reports.push_back(run.report);
    }
    const std::string csv = join_path(rc.out_dir, "metrics.csv");
    hbf::write_metrics_csv(csv, reports);
    std::printf("wrote %s and %zu checkpoint(s) to %s\n", csv.c_str(), rc.seeds.size(),
                rc.out_dir.c_str());
    return 0;
}

int cmd_eval(const hbf::RunConfig& rc, const std::string& ckpt) {
    if (ckpt.empty()) throw hbf::ConfigError("eval requires --checkpoint PATH");
    const auto data = load_dataset(rc);
    fs::create_directories(rc.out_dir);
    hbf::HBFormer<Scalar> model(rc.to_model_config(), rc.seeds[0]);
    hbf::load_checkpoint(ckpt, model.named());

    std::vector<std::vector<int>> preds;
    const hbf::MetricsReport report = hbf::evaluate(model, data, &preds);
    for (size_t i = 0; i < preds.size(); ++i)
        hbf::mask_write(join_path(rc.out_dir, "pred_" + idx4(static_cast<int>(i)) + ".pgm"),
                        rc.img_size, preds[i]);
    const std::string csv = join_path(rc.out_dir, "metrics.csv");
    hbf::write_metrics_csv(csv, {report});
    std::printf("evaluated %d sample(s): mean_dsc %.6f  mean_iou %.6f\n", report.samples,
                report.mean_dsc, report.mean_iou);
    std::printf("wrote %s and predicted masks to %s\n", csv.c_str(), rc.out_dir.c_str());
    return 0;
}

int cmd_gradcheck(bool inject_fault) {
    hbf::GradcheckSuite suite;
    if (inject_fault) suite.inject_fault();
    const auto results = suite.run();
    std::string first_bad;
    for (const auto& r : results) {
        std::printf("%-24s max_rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.tol, r.pass ? "ok" : "FAIL");
        if (!r.pass && first_bad.empty()) first_bad = r.name;
    }
    if (!first_bad.empty())
        throw hbf::GradcheckError("gradient check failed at op " + first_bad);
    std::printf("all %zu ops within tolerance\n", results.size());
    return 0;
}

int cmd_synth(const hbf::RunConfig& rc) {
    fs::create_directories(rc.out_dir);
    const auto data = hbf::synth_dataset(rc.to_synth_params(rc.seeds[0]));
    for (size_t i = 0; i < data.size(); ++i) {
        const int id = static_cast<int>(i);
        hbf::image_write(join_path(rc.out_dir, "img_" + idx4(id) + ".ppm"), rc.img_size,
                         data[i].image);
        hbf::mask_write(join_path(rc.out_dir, "mask_" + idx4(id) + ".pgm"), rc.img_size,
                        data[i].mask);
    }
    std::printf("wrote %zu sample(s) to %s\n", data.size(), rc.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hbformer: hybrid windowed-transformer medical image segmentation"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path;
    bool print_config = false, inject_fault = false;

    CLI::App* train = app.add_subcommand("train", "train per config, write checkpoints + CSV");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint, write CSV + masks");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic organ dataset");
    for (CLI::App* sub : {train, eval, gradcheck, synth}) {
        sub->add_option("--config", config_path, "run configuration file")->required();
        sub->add_flag("--print-config", print_config, "echo the effective config and exit");
    }
    eval->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate");
    gradcheck->add_flag("--inject-fault", inject_fault)->group("");  // test hook, hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        hbf::RunConfig rc = hbf::parse_run_config(config_path);
        const std::string task = app.get_subcommands().front()->get_name();
        if (rc.task.empty()) rc.task = task;
        if (rc.task != task)
            throw hbf::ConfigError("config sets task = " + rc.task + " but the " + task +
                                   " command was invoked");
        if (print_config) {
            std::cout << hbf::print_run_config(rc);
            return 0;
        }
        if (task == "train") return cmd_train(rc);
        if (task == "eval") return cmd_eval(rc, ckpt_path);
        if (task == "gradcheck") return cmd_gradcheck(inject_fault);
        return cmd_synth(rc);
    } catch (const hbf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const hbf::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const hbf::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const hbf::CrcError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const hbf::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 5;
    } catch (const hbf::GradcheckError& e) {
        std::cerr << "gradcheck error: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
