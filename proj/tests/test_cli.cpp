// End-to-end checks of the command-line binary: exit codes, file outputs,
// and run-to-run determinism. The binary path arrives via HBFORMER_CLI_PATH.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

fs::path base() {
    const auto dir = fs::temp_directory_path() / "hbf_cli_tests";
    fs::create_directories(dir);
    return dir;
}

struct RunResult {
    int code = -1;
    std::string output;  // stdout + stderr interleaved
};

RunResult run_cli(const std::string& args) {
    static int serial = 0;
    const auto out = base() / ("out_" + std::to_string(serial++) + ".txt");
    const std::string cmd =
        std::string(HBFORMER_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.code = raw == -1 ? 127 : (WIFEXITED(raw) ? WEXITSTATUS(raw) : 128);
    std::ifstream f(out);
    r.output.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return r;
}

fs::path write_cfg(const std::string& name, const std::string& text) {
    const auto p = base() / name;
    std::ofstream f(p);
    f << text;
    return p;
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    EXPECT_TRUE(f.good()) << p;
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
}

// Micro model: every stage two blocks, 32x32 inputs, three classes.
std::string micro_model_lines() {
    return "img_size = 32\n"
           "patch_size = 4\n"
           "widths = 16,32,64,128\n"
           "depths = 2,2,2,2\n"
           "heads = 2,4,8,8\n"
           "window_size = 4\n"
           "effn_ratio = 2\n"
           "num_classes = 3\n"
           "seeds = 3407\n"
           "batch_size = 2\n"
           "total_steps = 6\n";
}

std::string data_dir() { return (base() / "data").string(); }
std::string train_dir() { return (base() / "run").string(); }

// Generates the shared 6-sample dataset once per binary run.
void ensure_dataset() {
    static bool done = false;
    if (done) return;
    const auto cfg = write_cfg("synth.cfg",
                               "task = synth\n"
                               "img_size = 32\n"
                               "num_classes = 3\n"
                               "synth_count = 6\n"
                               "synth_min_tumors = 1\n"
                               "seeds = 3407\n"
                               "out_dir = " + data_dir() + "\n");
    const auto r = run_cli("synth --config " + cfg.string());
    ASSERT_EQ(r.code, 0) << r.output;
    done = true;
}

// Trains the micro model once; later tests reuse the checkpoint and CSV.
void ensure_checkpoint() {
    ensure_dataset();
    static bool done = false;
    if (done) return;
    const auto cfg = write_cfg("train.cfg", "task = train\n" + micro_model_lines() +
                                                "data_dir = " + data_dir() + "\n" +
                                                "out_dir = " + train_dir() + "\n");
    const auto r = run_cli("train --config " + cfg.string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("seed 3407"), std::string::npos);
    EXPECT_NE(r.output.find("final_loss"), std::string::npos);
    done = true;
}

std::string ckpt_path() { return train_dir() + "/ckpt_seed3407.hbf"; }

TEST(CliUsage, BadInvocationsExitOne) {
    EXPECT_EQ(run_cli("").code, 1);                       // missing subcommand
    EXPECT_EQ(run_cli("dance").code, 1);                  // unknown subcommand
    EXPECT_EQ(run_cli("train").code, 1);                  // missing --config
    EXPECT_EQ(run_cli("train --config /nonexistent.cfg").code, 2);

    const auto help = run_cli("--help");
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.output.find("train"), std::string::npos);
    EXPECT_NE(help.output.find("gradcheck"), std::string::npos);
}

TEST(CliConfig, ParseErrorsNameTheLineAndExitOne) {
    const auto bad = write_cfg("bad_key.cfg", "task = train\nbogus = 3\n");
    const auto r = run_cli("train --config " + bad.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find(":2:"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("unknown key 'bogus'"), std::string::npos) << r.output;
}

TEST(CliConfig, TaskCommandMismatchExitsOne) {
    const auto cfg = write_cfg("mismatch.cfg", "task = eval\n" + micro_model_lines());
    const auto r = run_cli("train --config " + cfg.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("task = eval"), std::string::npos) << r.output;
}

TEST(CliConfig, PrintConfigEchoesWithoutRunning) {
    const auto out_dir = (base() / "never_created").string();
    const auto cfg = write_cfg("print.cfg", "task = synth\nimg_size = 32\nsynth_count = 2\n"
                                            "out_dir = " + out_dir + "\n");
    const auto r = run_cli("synth --config " + cfg.string() + " --print-config");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.output.find("task = synth\n"), std::string::npos);
    EXPECT_NE(r.output.find("img_size = 32\n"), std::string::npos);
    EXPECT_NE(r.output.find("lr = 0.01\n"), std::string::npos);
    EXPECT_NE(r.output.find("lr_min = 6e-6\n"), std::string::npos);
    EXPECT_NE(r.output.find("momentum = 0.98\n"), std::string::npos);
    EXPECT_FALSE(fs::exists(out_dir));  // echo only, no side effects
}

TEST(CliIo, MissingDataExitsTwo) {
    const auto no_dir = write_cfg("no_dir.cfg", "task = train\n" + micro_model_lines() +
                                                    "data_dir = " + (base() / "nowhere").string() +
                                                    "\n");
    const auto r1 = run_cli("train --config " + no_dir.string());
    EXPECT_EQ(r1.code, 2);
    EXPECT_NE(r1.output.find("does not exist"), std::string::npos) << r1.output;

    const auto unset = write_cfg("unset_dir.cfg", "task = train\n" + micro_model_lines());
    const auto r2 = run_cli("train --config " + unset.string());
    EXPECT_EQ(r2.code, 2);
    EXPECT_NE(r2.output.find("data_dir not set"), std::string::npos) << r2.output;
}

TEST(CliSynth, WritesWellFormedDataset) {
    ensure_dataset();
    for (int i = 0; i < 6; ++i) {
        char img[16], msk[16];
        std::snprintf(img, sizeof img, "img_%04d.ppm", i);
        std::snprintf(msk, sizeof msk, "mask_%04d.pgm", i);
        EXPECT_TRUE(fs::exists(fs::path(data_dir()) / img)) << img;
        EXPECT_TRUE(fs::exists(fs::path(data_dir()) / msk)) << msk;
    }
    EXPECT_FALSE(fs::exists(fs::path(data_dir()) / "img_0006.ppm"));

    const auto ppm = slurp(fs::path(data_dir()) / "img_0000.ppm");
    const std::string p6 = "P6\n32 32\n255\n";
    ASSERT_EQ(ppm.size(), p6.size() + 3 * 32 * 32);
    EXPECT_TRUE(std::equal(p6.begin(), p6.end(), ppm.begin()));

    const auto pgm = slurp(fs::path(data_dir()) / "mask_0000.pgm");
    const std::string p5 = "P5\n32 32\n255\n";
    ASSERT_EQ(pgm.size(), p5.size() + 32 * 32);
    EXPECT_TRUE(std::equal(p5.begin(), p5.end(), pgm.begin()));

    // Labels stay inside {0,1,2}; the organ is present, and with
    // min_tumors = 1 so is the tumor class.
    bool saw1 = false, saw2 = false;
    for (size_t i = p5.size(); i < pgm.size(); ++i) {
        ASSERT_LE(pgm[i], 2);
        saw1 |= pgm[i] == 1;
        saw2 |= pgm[i] == 2;
    }
    EXPECT_TRUE(saw1);
    EXPECT_TRUE(saw2);
}

TEST(CliTrain, WritesCheckpointAndMetricsCsv) {
    ensure_checkpoint();

    const auto ckpt = slurp(ckpt_path());
    ASSERT_GE(ckpt.size(), 16u);
    EXPECT_EQ(ckpt[0], 'H');
    EXPECT_EQ(ckpt[1], 'B');
    EXPECT_EQ(ckpt[2], 'F');
    EXPECT_EQ(ckpt[3], '1');

    const auto csv = slurp(fs::path(train_dir()) / "metrics.csv");
    const std::string text(csv.begin(), csv.end());
    EXPECT_EQ(text.rfind("class,dsc,iou\r\n", 0), 0u) << text;
    EXPECT_NE(text.find("\r\n1,"), std::string::npos);
    EXPECT_NE(text.find("\r\n2,"), std::string::npos);
    EXPECT_NE(text.find("\r\nmean,"), std::string::npos);
    EXPECT_NE(text.find("\r\nstd,0.000000,0.000000\r\n"), std::string::npos);  // one run
}

TEST(CliEval, WritesPredictionsAndIsDeterministic) {
    ensure_checkpoint();
    const std::string out1 = (base() / "evalrun1").string();
    const std::string out2 = (base() / "evalrun2").string();
    auto eval_cfg = [&](const std::string& name, const std::string& out) {
        return write_cfg(name, "task = eval\n" + micro_model_lines() +
                                   "data_dir = " + data_dir() + "\n" + "out_dir = " + out + "\n");
    };

    const auto r0 = run_cli("eval --config " +
                            eval_cfg("eval_nockpt.cfg", out1).string());
    EXPECT_EQ(r0.code, 1);  // --checkpoint is mandatory
    EXPECT_NE(r0.output.find("--checkpoint"), std::string::npos) << r0.output;

    const auto r1 = run_cli("eval --config " + eval_cfg("eval1.cfg", out1).string() +
                            " --checkpoint " + ckpt_path());
    ASSERT_EQ(r1.code, 0) << r1.output;
    EXPECT_NE(r1.output.find("evaluated 6 sample(s)"), std::string::npos) << r1.output;

    for (int i = 0; i < 6; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "pred_%04d.pgm", i);
        const auto p = fs::path(out1) / name;
        ASSERT_TRUE(fs::exists(p)) << name;
        const auto pgm = slurp(p);
        const std::string p5 = "P5\n32 32\n255\n";
        ASSERT_EQ(pgm.size(), p5.size() + 32 * 32);
        for (size_t k = p5.size(); k < pgm.size(); ++k) ASSERT_LE(pgm[k], 2);
    }

    const auto r2 = run_cli("eval --config " + eval_cfg("eval2.cfg", out2).string() +
                            " --checkpoint " + ckpt_path());
    ASSERT_EQ(r2.code, 0) << r2.output;
    EXPECT_TRUE(slurp(fs::path(out1) / "metrics.csv") == slurp(fs::path(out2) / "metrics.csv"));
    EXPECT_TRUE(slurp(fs::path(out1) / "pred_0000.pgm") == slurp(fs::path(out2) / "pred_0000.pgm"));
}

TEST(CliTrain, NonFiniteLossExitsThree) {
    ensure_dataset();
    const auto cfg = write_cfg("nan.cfg", "task = train\n" + micro_model_lines() +
                                              "lr = 1e14\nlr_min = 1e13\n"
                                              "data_dir = " + data_dir() + "\n" +
                                              "out_dir = " + (base() / "nanrun").string() + "\n");
    const auto r = run_cli("train --config " + cfg.string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find("non-finite"), std::string::npos) << r.output;
}

TEST(CliEval, CorruptCheckpointExitsFour) {
    ensure_checkpoint();
    auto bytes = slurp(ckpt_path());
    ASSERT_GE(bytes.size(), 32u);

    const auto trunc = base() / "trunc.hbf";
    {
        std::ofstream f(trunc, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size() - 1));
    }
    const auto flipped = base() / "flipped.hbf";
    {
        auto bad = bytes;
        bad[bad.size() / 2] ^= 0x20;
        std::ofstream f(flipped, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bad.data()),
                static_cast<std::streamsize>(bad.size()));
    }

    const auto cfg = write_cfg("eval_bad.cfg", "task = eval\n" + micro_model_lines() +
                                                   "data_dir = " + data_dir() + "\n" +
                                                   "out_dir = " + (base() / "badrun").string() +
                                                   "\n");
    for (const auto& p : {trunc, flipped}) {
        const auto r = run_cli("eval --config " + cfg.string() + " --checkpoint " + p.string());
        EXPECT_EQ(r.code, 4) << r.output;
        EXPECT_NE(r.output.find("checkpoint error"), std::string::npos) << r.output;
    }
}

TEST(CliEval, ShapeMismatchExitsFive) {
    ensure_checkpoint();
    // Same architecture and tensor names, halved widths: the loader must name
    // the first clashing tensor rather than crash.
    const auto cfg = write_cfg("eval_small.cfg",
                               "task = eval\n"
                               "img_size = 32\n"
                               "patch_size = 4\n"
                               "widths = 8,16,32,64\n"
                               "depths = 2,2,2,2\n"
                               "heads = 1,2,4,8\n"
                               "window_size = 4\n"
                               "effn_ratio = 2\n"
                               "num_classes = 3\n"
                               "seeds = 3407\n"
                               "data_dir = " + data_dir() + "\n" +
                               "out_dir = " + (base() / "shaperun").string() + "\n");
    const auto r = run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt_path());
    EXPECT_EQ(r.code, 5);
    EXPECT_NE(r.output.find("shape mismatch for"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("enc."), std::string::npos) << r.output;
}

TEST(CliConfig, LabelOutsideClassRangeExitsOne) {
    ensure_checkpoint();
    // The dataset holds tumor labels (2); claiming two classes must be caught
    // while loading, before any shape comparison.
    const auto cfg = write_cfg("eval_2class.cfg",
                               "task = eval\n"
                               "img_size = 32\n"
                               "patch_size = 4\n"
                               "widths = 16,32,64,128\n"
                               "depths = 2,2,2,2\n"
                               "heads = 2,4,8,8\n"
                               "window_size = 4\n"
                               "effn_ratio = 2\n"
                               "num_classes = 2\n"
                               "seeds = 3407\n"
                               "data_dir = " + data_dir() + "\n" +
                               "out_dir = " + (base() / "tworun").string() + "\n");
    const auto r = run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt_path());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("holds label 2"), std::string::npos) << r.output;
}

TEST(CliGradcheck, PassesCleanAndFailsInjectedFault) {
    const auto cfg = write_cfg("gc.cfg", "task = gradcheck\n");
    const auto ok = run_cli("gradcheck --config " + cfg.string());
    EXPECT_EQ(ok.code, 0) << ok.output;
    EXPECT_NE(ok.output.find("ops within tolerance"), std::string::npos) << ok.output;
    EXPECT_EQ(ok.output.find("FAIL"), std::string::npos) << ok.output;

    const auto bad = run_cli("gradcheck --config " + cfg.string() + " --inject-fault");
    EXPECT_EQ(bad.code, 6) << bad.output;
    EXPECT_NE(bad.output.find("fault_injection"), std::string::npos) << bad.output;
}

}  // namespace
