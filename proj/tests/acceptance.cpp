// Acceptance harness: ten numbered hard gates, one verdict line each.
// Exit code is the number of failed gates, so 0 means fully accepted.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hbformer/hbformer.hpp"

namespace {

using clk = std::chrono::steady_clock;
using hbf::Rng;
using hbf::Tensor;
using Tf = Tensor<float>;
using Td = Tensor<double>;

int g_failed = 0;

double secs(clk::time_point a) { return std::chrono::duration<double>(clk::now() - a).count(); }

void verdict(int idx, const char* name, bool pass, const std::string& note) {
    std::printf("criterion %2d  %-24s %s  (%s)\n", idx, name, pass ? "PASS" : "FAIL",
                note.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failed;
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// --- 1: finite-difference gradcheck, per-op and end-to-end ------------------

void criterion1() {
    const auto t0 = clk::now();
    hbf::GradcheckSuite suite;
    const auto results = suite.run();
    double worst_op = 0.0, e2e = 0.0;
    bool pass = true;
    for (const auto& r : results) {
        if (r.name == "end_to_end_micro") {
            e2e = r.max_rel_err;
            pass &= r.max_rel_err < 1e-3;
        } else {
            worst_op = std::max(worst_op, r.max_rel_err);
            pass &= r.max_rel_err < 1e-4;
        }
    }
    const double dt = secs(t0);
    pass &= dt < 300.0;
    verdict(1, "gradcheck", pass,
            fmt("%zu checks, worst op rel err %.2e, end-to-end %.2e, %.1fs", results.size(),
                worst_op, e2e, dt));
}

// --- 2: structural equivalences ---------------------------------------------

double max_abs_diff(const Td& a, const Td& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// (a) zero-offset deformable conv reduces to the matching dilated conv
double deformable_vs_dilated() {
    Rng rng(21);
    Td x({2, 3, 9, 9});
    for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal(0.0, 1.0);
    hbf::Conv2dLayer<double> conv(3, 4, 3, rng, 1, 2, 2, 1);
    const Td offsets({2, 18, 9, 9});  // zeros
    const Td via_deform = hbf::deformable_conv2d(x, conv.params(), offsets);
    const Td via_dilated = hbf::conv2d(x, conv.params());
    return max_abs_diff(via_deform, via_dilated);
}

// (b) freshly initialised Med-DSPP equals a plain dilated-pyramid oracle
double dspp_vs_pyramid() {
    Rng rng(22);
    hbf::MedDspp<double> dspp(4, {1, 6, 12, 18}, rng);
    Td x({2, 4, 40, 40});
    for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal(0.0, 1.0);
    const Td got = dspp.forward(x, false);

    std::vector<Td> branches;
    for (int i = 0; i < dspp.num_branches(); ++i) {
        Td y = hbf::conv2d(x, dspp.branch_deform(i).params());
        y = hbf::conv2d(y, dspp.branch_dilated(i).params());
        const auto& st = dspp.branch_bn(i).state();
        const int C = y.dim(1), HW = y.dim(2) * y.dim(3);
        for (int b = 0; b < y.dim(0); ++b)
            for (int c = 0; c < C; ++c) {
                const double inv = 1.0 / std::sqrt(st.running_var.data()[c] + st.eps);
                double* p = y.data() + (static_cast<size_t>(b) * C + c) * HW;
                for (int k = 0; k < HW; ++k)
                    p[k] = st.gamma.data()[c] * (p[k] - st.running_mean.data()[c]) * inv +
                           st.beta.data()[c];
            }
        branches.push_back(hbf::leaky_relu(y));
    }
    const Td cat = hbf::concat(branches, 1);
    const Td want = hbf::add(x, hbf::conv2d(cat, dspp.fuse().params()));
    return max_abs_diff(got, want);
}

// (c) window_reverse ∘ window_partition == identity, exhaustively
bool window_roundtrip_exhaustive(long* cases) {
    Rng rng(23);
    *cases = 0;
    for (int m : {2, 4})
        for (int h = 1; h <= 16; ++h)
            for (int w = 1; w <= 16; ++w) {
                const hbf::WindowLayout lay(h, w, m, 0);
                Td x({2, h, w, 3});
                for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal(0.0, 1.0);
                const Td back = hbf::window_reverse(hbf::window_partition(x, lay), lay);
                if (back.shape() != x.shape()) return false;
                for (size_t i = 0; i < x.numel(); ++i)
                    if (back.data()[i] != x.data()[i]) return false;
                ++*cases;
            }
    return true;
}

// (d) SW-MSA mask suppresses every cross-region pair on the 8x8 / M=4 grid
bool swmsa_mask_suppresses(double* worst_cross, long* cross_pairs) {
    const int H = 8, M = 4, S = 2, heads = 2, L = M * M;
    const hbf::WindowLayout lay(H, H, M, S);
    const Td mask = hbf::build_attention_mask<double>(lay);

    Rng rng(24);
    Td scores({4, heads, L, L});
    for (size_t i = 0; i < scores.numel(); ++i) scores.data()[i] = rng.normal(0.0, 1.0);
    const Td weights = hbf::softmax(hbf::add_window_mask(scores, mask), 3);

    // Region labels from first principles: the shifted image is continuous on
    // the y/x bands [0,H-M), [H-M,H-S), [H-S,H); tokens may attend only
    // within one band pair.
    auto band = [&](int v) { return v < H - M ? 0 : (v < H - S ? 1 : 2); };
    *worst_cross = 0.0;
    *cross_pairs = 0;
    for (int win = 0; win < 4; ++win) {
        const int wy = win / 2, wx = win % 2;
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < L; ++j) {
                    const int yi = wy * M + i / M, xi = wx * M + i % M;
                    const int yj = wy * M + j / M, xj = wx * M + j % M;
                    const bool cross =
                        band(yi) != band(yj) || band(xi) != band(xj);
                    if (!cross) continue;
                    ++*cross_pairs;
                    const double p =
                        weights.data()[((static_cast<size_t>(win) * heads + h) * L + i) * L + j];
                    *worst_cross = std::max(*worst_cross, p);
                }
    }
    return *cross_pairs > 0 && *worst_cross < 1e-8;
}

void criterion2() {
    const double da = deformable_vs_dilated();
    const double db = dspp_vs_pyramid();
    long rt_cases = 0;
    const bool rc = window_roundtrip_exhaustive(&rt_cases);
    double worst_cross = 0.0;
    long cross_pairs = 0;
    const bool rd = swmsa_mask_suppresses(&worst_cross, &cross_pairs);
    const bool pass = da < 1e-6 && db < 1e-6 && rc && rt_cases == 512 && rd;
    verdict(2, "structural equivalences", pass,
            fmt("deform|dilated %.2e, dspp|pyramid %.2e, roundtrip %ld cases %s, "
                "mask worst cross %.2e over %ld pairs",
                da, db, rt_cases, rc ? "exact" : "BROKEN", worst_cross, cross_pairs));
}

// --- 3: residual identity with zeroed sublayer output projections -----------

void criterion3() {
    Rng rng(31);
    hbf::MwaBlockPair<double> pair(8, 8, 8, 4, 2, 2, true, rng);
    for (auto* blk : {&pair.w(), &pair.sw()}) {
        for (Td* t : {&blk->attn().proj().weight(), &blk->attn().proj().bias(),
                      &blk->effn().contract().weight(), &blk->effn().contract().bias()})
            for (size_t i = 0; i < t->numel(); ++i) t->data()[i] = 0.0;
    }
    Td x({2, 64, 8});
    for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal(0.0, 1.0);
    const Td y = pair.forward(x);
    bool pass = y.shape() == x.shape();
    double worst = 0.0;
    for (size_t i = 0; pass && i < x.numel(); ++i) {
        if (y.data()[i] != x.data()[i]) pass = false;
        worst = std::max(worst, std::abs(y.data()[i] - x.data()[i]));
    }
    verdict(3, "residual identity", pass,
            pass ? "mwa_block_pair(x) == x bitwise" : fmt("max drift %.2e", worst));
}

// --- 4: metric oracles vs integer pixel counting -----------------------------

void criterion4() {
    Rng rng(41);
    bool exact = true;
    double worst_identity = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> a(16 * 16), b(16 * 16);
        for (auto& v : a) v = rng.uniform_int(0, 2);
        for (auto& v : b) v = rng.uniform_int(0, 2);
        for (int c = 1; c <= 2; ++c) {
            long np = 0, ng = 0, ni = 0;
            for (size_t i = 0; i < a.size(); ++i) {
                np += a[i] == c;
                ng += b[i] == c;
                ni += a[i] == c && b[i] == c;
            }
            const double want_dsc =
                np + ng == 0 ? 1.0 : 2.0 * ni / static_cast<double>(np + ng);
            const double want_iou =
                np + ng - ni == 0 ? 1.0 : ni / static_cast<double>(np + ng - ni);
            const double got_dsc = hbf::dsc(a, b, c);
            const double got_iou = hbf::iou(a, b, c);
            exact &= got_dsc == want_dsc && got_iou == want_iou;
            worst_identity =
                std::max(worst_identity, std::abs(got_dsc - 2.0 * got_iou / (1.0 + got_iou)));
        }
    }
    verdict(4, "metric oracles", exact && worst_identity < 1e-12,
            fmt("50 mask pairs %s, dsc/iou identity worst %.2e", exact ? "exact" : "MISMATCH",
                worst_identity));
}

// --- 5: loss anchors ---------------------------------------------------------

void criterion5() {
    Rng rng(51);
    Td zero_logits({2, 2, 4, 4});
    Td target({2, 2, 4, 4});
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 16; ++i) {
            const int cls = rng.uniform_int(0, 1);
            target.data()[(b * 2 + cls) * 16 + i] = 1.0;
        }
    const double at_zero = hbf::bce_loss(zero_logits, target).item();
    const bool a = std::abs(at_zero - std::log(2.0)) < 1e-6;

    Td logits({2, 2, 4, 4});
    for (size_t i = 0; i < logits.numel(); ++i) logits.data()[i] = rng.normal(0.0, 3.0);
    const double bce = hbf::bce_loss(logits, target).item();
    const double dice = hbf::dice_loss(logits, target).item();
    const double both = hbf::bce_dice_loss(logits, target).item();
    const double sum_gap = std::abs(both - (bce + dice));
    const bool b = sum_gap <= 1e-15;

    Td sat({1, 2, 4, 4});
    for (int i = 0; i < 16; ++i) {
        const int cls = static_cast<int>(target.data()[i]);  // reuse batch-0 one-hot
        sat.data()[0 * 16 + i] = cls == 0 ? 40.0 : -40.0;
        sat.data()[1 * 16 + i] = cls == 0 ? -40.0 : 40.0;
    }
    Td sat_target({1, 2, 4, 4});
    for (int i = 0; i < 32; ++i) sat_target.data()[i] = target.data()[i];
    const double saturated = hbf::bce_dice_loss(sat, sat_target).item();
    const bool c = saturated < 1e-3;

    verdict(5, "loss anchors", a && b && c,
            fmt("bce(0)-ln2 %.2e, |bce_dice-(bce+dice)| %.2e, saturated %.2e",
                at_zero - std::log(2.0), sum_gap, saturated));
}

// --- 6: schedule and momentum anchors ----------------------------------------

void criterion6() {
    const hbf::LrSchedule sched{1e-2, 6e-6, 100};
    const double lr0 = hbf::cosine_lr(0, sched);
    const double lrT = hbf::cosine_lr(100, sched);
    const bool anchors = std::abs(lr0 - 1e-2) < 1e-12 && std::abs(lrT - 6e-6) < 1e-12;

    // Two SGD steps vs the recurrence v <- mu v + g + wd p, p <- p - lr v.
    const double mu = 0.98, wd = 1e-6, lr = 0.1, g1 = 0.5, g2 = -0.25;
    Td p = Td::full({1}, 1.0);
    p.set_requires_grad(true);
    std::vector<std::pair<std::string, Td>> params{{"p", p}};
    hbf::SgdOptimizer<double> sgd(params, mu, wd);
    p.grad()[0] = g1;
    sgd.step(lr);
    double hp = 1.0, hv = 0.0;
    hv = mu * hv + g1 + wd * hp;
    hp -= lr * hv;
    const double gap1 = std::abs(p.data()[0] - hp);
    p.grad()[0] = g2;
    sgd.step(lr);
    hv = mu * hv + g2 + wd * hp;
    hp -= lr * hv;
    const double gap2 = std::abs(p.data()[0] - hp);
    const bool momentum = gap1 < 1e-12 && gap2 < 1e-12;

    verdict(6, "schedule/optimizer", anchors && momentum,
            fmt("lr(0) %.10f, lr(T) %.2e, momentum unroll gaps %.1e / %.1e", lr0, lrT, gap1,
                gap2));
}

// --- 7: overfit experiment ----------------------------------------------------

void criterion7() {
    const auto t0 = clk::now();
    hbf::ModelConfig cfg;
    cfg.img_size = 64;
    cfg.stage_widths = {24, 48, 96, 192};
    cfg.stage_depths = {2, 2, 6, 2};
    cfg.heads_per_stage = {3, 6, 12, 24};
    cfg.num_classes = 3;
    cfg.use_effn = true;
    cfg.use_mff_decoder = true;
    cfg.validate();

    hbf::SynthParams sp;
    sp.count = 8;
    sp.size = 64;
    sp.seed = 3407;
    sp.min_tumors = 1;  // every sample carries 2-5 px microtumors
    const auto data = hbf::synth_dataset(sp);

    const long max_steps = 500;
    const int batch = 8;  // full batch: a pure memorisation objective
    hbf::HBFormer<float> model(cfg, 3407);
    hbf::SgdOptimizer<float> sgd(model.named().params, 0.98f, 1e-6f);
    const hbf::LrSchedule sched{1e-2, 6e-6, max_steps};
    Rng order_rng(3407 * 0x9E3779B97F4A7C15ull + 1);
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();

    double best_mean = 0.0, best_tumor = 0.0;
    long hit_step = -1;
    for (long step = 0; step < max_steps; ++step) {
        std::vector<const hbf::SegmentationSample*> batch_ptrs;
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng.engine());
                cursor = 0;
            }
            batch_ptrs.push_back(&data[order[cursor++]]);
        }
        hbf::GradTape<float> tape;
        const Tf img = hbf::batch_images<float>(batch_ptrs);
        const Tf tgt = hbf::batch_targets<float>(batch_ptrs, cfg.num_classes);
        Tf loss = hbf::bce_dice_loss(model.forward(img, true), tgt);
        hbf::backward(loss);
        sgd.step(static_cast<float>(hbf::cosine_lr(step, sched)));
        model.zero_grad();

        if ((step + 1) % 25 == 0 || step + 1 == max_steps) {
            const hbf::MetricsReport r = hbf::evaluate(model, data);
            if (r.mean_dsc > best_mean) best_mean = r.mean_dsc;
            if (r.class_dsc[1] > best_tumor) best_tumor = r.class_dsc[1];
            if (r.mean_dsc >= 0.95 && r.class_dsc[1] >= 0.90) {
                hit_step = step + 1;
                break;
            }
        }
    }
    const double dt = secs(t0);
    const bool pass = hit_step >= 0 && dt < 1800.0;
    verdict(7, "overfit experiment", pass,
            hit_step >= 0
                ? fmt("targets met at step %ld, %.0fs", hit_step, dt)
                : fmt("best mean_dsc %.4f tumor_dsc %.4f after %ld steps, %.0fs", best_mean,
                      best_tumor, max_steps, dt));
}

// --- 8: ablation ordering -----------------------------------------------------

void criterion8() {
    const auto t0 = clk::now();
    hbf::SynthParams sp;
    sp.count = 200;
    sp.size = 32;
    sp.seed = 99;
    sp.min_tumors = 1;
    const auto data = hbf::synth_dataset(sp);

    const long steps = 150;
    struct Variant {
        const char* name;
        bool effn, mff;
        double mean = 0.0, stdev = 0.0;
    };
    Variant variants[4] = {{"full", true, true},
                           {"mff+ffn", false, true},
                           {"plain+effn", true, false},
                           {"baseline", false, false}};
    for (auto& v : variants) {
        hbf::ModelConfig cfg;
        cfg.img_size = 32;
        cfg.stage_widths = {16, 32, 64, 128};
        cfg.stage_depths = {2, 2, 2, 2};
        cfg.heads_per_stage = {2, 4, 8, 16};
        cfg.effn_ratio = 2;
        cfg.num_classes = 3;
        cfg.use_effn = v.effn;
        cfg.use_mff_decoder = v.mff;
        cfg.validate();
        hbf::TrainOptions opt;
        opt.total_steps = steps;
        opt.sched = {1e-2, 6e-6, steps};
        double sum = 0.0, sum2 = 0.0;
        for (const std::uint64_t seed : hbf::default_seeds()) {
            const auto run = hbf::train_one<float>(cfg, data, seed, opt);
            sum += run.report.mean_dsc;
            sum2 += run.report.mean_dsc * run.report.mean_dsc;
        }
        v.mean = sum / 3.0;
        v.stdev = std::sqrt(std::max(0.0, sum2 / 3.0 - v.mean * v.mean));
    }
    const double gap = variants[0].mean - variants[3].mean;
    const double combined =
        std::sqrt(variants[0].stdev * variants[0].stdev + variants[3].stdev * variants[3].stdev);
    const bool ordered = variants[0].mean >= variants[1].mean &&
                         variants[0].mean >= variants[2].mean &&
                         variants[1].mean >= variants[3].mean &&
                         variants[2].mean >= variants[3].mean;
    const bool pass = ordered && gap > combined;
    verdict(8, "ablation ordering", pass,
            fmt("full %.4f, mff+ffn %.4f, plain+effn %.4f, baseline %.4f, "
                "gap %.4f vs combined std %.4f, %.0fs",
                variants[0].mean, variants[1].mean, variants[2].mean, variants[3].mean, gap,
                combined, secs(t0)));
}

// --- 9: persistence ------------------------------------------------------------

void criterion9() {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "hbf_acceptance";
    fs::create_directories(dir);

    hbf::ModelConfig cfg;
    cfg.img_size = 32;
    cfg.stage_widths = {8, 16, 32, 64};
    cfg.stage_depths = {2, 2, 2, 2};
    cfg.heads_per_stage = {2, 4, 8, 16};
    cfg.effn_ratio = 2;
    cfg.num_classes = 3;
    cfg.validate();

    hbf::SynthParams sp;
    sp.count = 4;
    sp.size = 32;
    sp.seed = 5;
    sp.min_tumors = 1;
    const auto data = hbf::synth_dataset(sp);

    hbf::TrainOptions opt;
    opt.batch_size = 2;
    opt.total_steps = 5;
    opt.sched = {1e-2, 6e-6, 5};
    const std::string p1 = (dir / "round1.hbf").string();
    const std::string p2 = (dir / "round2.hbf").string();
    const auto run = hbf::train_one<float>(
        cfg, data, 3407, opt,
        [&](hbf::HBFormer<float>& m, long) { hbf::save_checkpoint(p1, m.named()); });

    hbf::HBFormer<float> reloaded(cfg, 999);
    auto named = reloaded.named();
    hbf::load_checkpoint(p1, named);
    hbf::save_checkpoint(p2, named);

    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                          std::istreambuf_iterator<char>());
    };
    const auto b1 = slurp(p1);
    const bool bytes_equal = !b1.empty() && b1 == slurp(p2);

    const hbf::MetricsReport replay = hbf::evaluate(reloaded, data);
    const bool metrics_equal = replay.mean_dsc == run.report.mean_dsc &&
                               replay.mean_iou == run.report.mean_iou &&
                               replay.class_dsc == run.report.class_dsc &&
                               replay.class_iou == run.report.class_iou;

    const auto golden = dir / "golden.pgm";
    hbf::mask_write(golden.string(), 2, {0, 1, 2, 1});
    const std::string want = std::string("P5\n2 2\n255\n") + '\0' + '\x01' + '\x02' + '\x01';
    const auto gb = slurp(golden.string());
    const bool pgm_exact =
        gb.size() == want.size() && std::equal(want.begin(), want.end(), gb.begin());

    verdict(9, "persistence", bytes_equal && metrics_equal && pgm_exact,
            fmt("save/load/save %s, eval-after-load %s, pgm golden %s",
                bytes_equal ? "byte-identical" : "DIFFERS",
                metrics_equal ? "exact" : "DRIFTED", pgm_exact ? "byte-exact" : "DIFFERS"));
}

// --- 10: determinism ------------------------------------------------------------

void criterion10() {
    hbf::ModelConfig cfg;
    cfg.img_size = 32;
    cfg.stage_widths = {8, 16, 32, 64};
    cfg.stage_depths = {2, 2, 2, 2};
    cfg.heads_per_stage = {2, 4, 8, 16};
    cfg.effn_ratio = 2;
    cfg.num_classes = 3;
    cfg.validate();

    hbf::SynthParams sp;
    sp.count = 4;
    sp.size = 32;
    sp.seed = 6;
    sp.min_tumors = 1;
    const auto data = hbf::synth_dataset(sp);

    hbf::TrainOptions opt;
    opt.batch_size = 2;
    opt.total_steps = 6;
    opt.sched = {1e-2, 6e-6, 6};
    const auto r1 = hbf::train_one<float>(cfg, data, 3407, opt);
    const auto r2 = hbf::train_one<float>(cfg, data, 3407, opt);
    const double gap = std::abs(r1.final_loss - r2.final_loss);
    verdict(10, "determinism", gap <= 1e-7,
            fmt("final losses %.10f / %.10f, |gap| %.1e", r1.final_loss, r2.final_loss, gap));
}

}  // namespace

int main() {
    std::printf("acceptance run\n");
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9();
    criterion10();
    std::printf("%d of 10 criteria passed\n", 10 - g_failed);
    return g_failed;
}
