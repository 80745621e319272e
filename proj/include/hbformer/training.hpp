#pragma once

// Training machinery: BCE-Dice objective, hard DSC/mIoU metrics, SGD with
// momentum under a cosine schedule, flip/rot90 augmentation, the synthetic
// organ/microtumor dataset, and the multi-seed training loop.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <thread>

#include "hbformer/errors.hpp"
#include "hbformer/model.hpp"

namespace hbf {

// ---------------------------------------------------------------------------
// losses

// Stable logit-form binary cross-entropy over every one-hot channel:
// mean(softplus(z) - z * t), identical to -[t log s(z) + (1-t) log(1-s(z))].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target) {
    detail::check_same_shape("bce_loss", logits, target);
    return mean(sub(softplus(logits), mul(logits, target)));
}

// Soft dice over the foreground channels: 1 - mean_k of
// (2*sum(p*t) + eps) / (sum p + sum t + eps), p = sigmoid(logits).
// Sums run over batch and space per class; eps rescues empty/empty.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T eps = T(1)) {
    detail::check_same_shape("dice_loss", logits, target);
    if (logits.ndim() != 4 || logits.dim(1) < 2)
        throw std::invalid_argument("dice_loss: want [B,K,H,W] with K >= 2, got " +
                                    shape_str(logits.shape()));
    const int k = logits.dim(1);
    Tensor<T> p = sigmoid(logits);
    Tensor<T> total;
    for (int c = 1; c < k; ++c) {
        Tensor<T> pc = slice(p, 1, c, 1);
        Tensor<T> tc = slice(target, 1, c, 1);
        Tensor<T> inter = sum(mul(pc, tc));
        Tensor<T> denom = add(sum(pc), sum(tc));
        Tensor<T> dice =
            div(add_scalar(scale(inter, T(2)), eps), add_scalar(denom, eps));
        total = total.defined() ? add(total, dice) : dice;
    }
    return add_scalar(scale(total, T(-1) / static_cast<T>(k - 1)), T(1));
}

template <typename T>
Tensor<T> bce_dice_loss(const Tensor<T>& logits, const Tensor<T>& target) {
    return add(bce_loss(logits, target), dice_loss(logits, target));
}

// Label map -> one-hot planes over all K channels (background included).
template <typename T>
Tensor<T> to_one_hot(const std::vector<int>& labels, int num_classes, int h, int w) {
    if (labels.size() != static_cast<size_t>(h) * w)
        throw std::invalid_argument("to_one_hot: label count " + std::to_string(labels.size()) +
                                    " does not match " + std::to_string(h) + "x" +
                                    std::to_string(w));
    Tensor<T> out({num_classes, h, w});
    T* po = out.data();
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t i = 0; i < plane; ++i) {
        const int lab = labels[i];
        if (lab < 0 || lab >= num_classes)
            throw std::invalid_argument("to_one_hot: label " + std::to_string(lab) +
                                        " out of range for " + std::to_string(num_classes) +
                                        " classes");
        po[static_cast<size_t>(lab) * plane + i] = T(1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// hard metrics (integer pixel counting)

inline double dsc(const std::vector<int>& pred, const std::vector<int>& target, int class_id) {
    if (pred.size() != target.size())
        throw std::invalid_argument("dsc: mask sizes differ");
    if (class_id < 0) throw std::invalid_argument("dsc: bad class id");
    long long np = 0, ng = 0, inter = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == class_id, g = target[i] == class_id;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return 1.0;  // reward correct absence
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

inline double iou(const std::vector<int>& pred, const std::vector<int>& target, int class_id) {
    long long np = 0, ng = 0, inter = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == class_id, g = target[i] == class_id;
        np += p;
        ng += g;
        inter += p && g;
    }
    const long long uni = np + ng - inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Mean IoU over the foreground classes; classes absent from both masks are
// skipped, and a pair with no foreground at all on either side scores 1.0.
inline double miou(const std::vector<int>& pred, const std::vector<int>& target,
                   int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("miou: need at least 2 classes");
    double acc = 0;
    int counted = 0;
    for (int c = 1; c < num_classes; ++c) {
        long long present = 0;
        for (size_t i = 0; i < pred.size() && present == 0; ++i)
            present = (pred[i] == c) + (target[i] == c);
        if (present == 0) continue;
        acc += iou(pred, target, c);
        ++counted;
    }
    return counted == 0 ? 1.0 : acc / counted;
}

struct MetricsReport {
    std::vector<double> class_dsc;  // entry i is foreground class i+1
    std::vector<double> class_iou;
    double mean_dsc = 0;
    double mean_iou = 0;
    int samples = 0;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// optimizer and schedule

template <typename T>
class SgdOptimizer {
  public:
    SgdOptimizer(std::vector<std::pair<std::string, Tensor<T>>>& params, T momentum, T wd)
        : params_(&params), momentum_(momentum), wd_(wd) {
        velocity_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            velocity_[i].assign(params[i].second.numel(), T(0));
    }

    // v <- mu*v + g + wd*p; p <- p - lr*v
    void step(T lr) {
        for (size_t i = 0; i < params_->size(); ++i) {
            Tensor<T>& p = (*params_)[i].second;
            if (!p.has_grad())
                throw std::invalid_argument("sgd: parameter " + (*params_)[i].first +
                                            " has no gradient buffer");
            T* pd = p.data();
            const T* g = p.grad();
            T* v = velocity_[i].data();
            const size_t n = p.numel();
            for (size_t j = 0; j < n; ++j) {
                v[j] = momentum_ * v[j] + g[j] + wd_ * pd[j];
                pd[j] -= lr * v[j];
            }
        }
    }

  private:
    std::vector<std::pair<std::string, Tensor<T>>>* params_;
    std::vector<std::vector<T>> velocity_;
    T momentum_;
    T wd_;
};

struct LrSchedule {
    double lr_init = 1e-2;
    double lr_min = 6e-6;
    long total_steps = 1;
};

inline double cosine_lr(long step, const LrSchedule& s) {
    if (step < 0 || step > s.total_steps)
        throw std::invalid_argument("cosine_lr: step " + std::to_string(step) +
                                    " outside [0, " + std::to_string(s.total_steps) + "]");
    const double t = static_cast<double>(step) / static_cast<double>(s.total_steps);
    return s.lr_min + 0.5 * (s.lr_init - s.lr_min) * (1.0 + std::cos(M_PI * t));
}

// ---------------------------------------------------------------------------
// samples and augmentation

struct SegmentationSample {
    int h = 0, w = 0;
    std::vector<double> image;  // 3 planes, values in [0,1]
    std::vector<int> mask;      // labels in [0, num_classes)
    int source_id = 0;
    std::string aug;  // augmentation record
};

// Horizontal flip with probability 1/2, then rotation by a uniform multiple
// of 90 degrees (counter-clockwise); same transform on image and mask.
inline SegmentationSample augment(const SegmentationSample& in, Rng& rng) {
    SegmentationSample out = in;
    const bool flip = rng.bernoulli(0.5);
    const int quarter = rng.uniform_int(0, 3);
    const int h = in.h, w = in.w;
    auto apply = [&](auto& dst, const auto& src, size_t plane_off) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int sy = y, sx = flip ? w - 1 - x : x;
                for (int q = 0; q < quarter; ++q) {  // ccw: (y,x) <- (x, H-1-y) inverted
                    const int ty = sx, tx = h - 1 - sy;
                    sy = ty;
                    sx = tx;
                }
                dst[plane_off + static_cast<size_t>(y) * w + x] =
                    src[plane_off + static_cast<size_t>(sy) * w + sx];
            }
    };
    // rot90 assumes square images; everything in this project is square.
    if (h != w && quarter != 0)
        throw std::invalid_argument("augment: 90-degree rotation needs square images");
    for (int p = 0; p < 3; ++p)
        apply(out.image, in.image, static_cast<size_t>(p) * h * w);
    apply(out.mask, in.mask, 0);
    out.aug = std::string("flip=") + (flip ? "1" : "0") + " rot=" + std::to_string(90 * quarter);
    return out;
}

// ---------------------------------------------------------------------------
// synthetic organ/microtumor dataset

struct SynthParams {
    int count = 100;
    int size = 64;
    std::uint64_t seed = 0;
    int num_classes = 3;
    int min_tumors = 0;
    int max_tumors = 3;

    // Geometry constants; the frequency targets below derive from them.
    double axis_lo = 0.22, axis_hi = 0.34;    // organ semi-axes, fraction of size
    double tumor_r_lo = 2.0, tumor_r_hi = 5.0;  // tumor radius, pixels

    double organ_fraction_target() const {
        const double mean_axis = 0.5 * (axis_lo + axis_hi);
        return M_PI * mean_axis * mean_axis;
    }
    double tumor_fraction_target() const {
        const double mean_count = 0.5 * (min_tumors + max_tumors);
        // E[r^2] of uniform [lo, hi] = (hi^3 - lo^3) / (3 (hi - lo))
        const double er2 = (std::pow(tumor_r_hi, 3) - std::pow(tumor_r_lo, 3)) /
                           (3.0 * (tumor_r_hi - tumor_r_lo));
        return mean_count * M_PI * er2 / (static_cast<double>(size) * size);
    }
};

inline std::vector<SegmentationSample> synth_dataset(const SynthParams& sp) {
    if (sp.size < 16)
        throw std::invalid_argument("synth_dataset: size " + std::to_string(sp.size) +
                                    " too small for the organ (min 16)");
    if (sp.num_classes != 2 && sp.num_classes != 3)
        throw std::invalid_argument("synth_dataset: num_classes must be 2 or 3");
    std::vector<SegmentationSample> out;
    out.reserve(sp.count);
    const int n = sp.size;
    for (int id = 0; id < sp.count; ++id) {
        Rng rng(sp.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(id + 1)));
        SegmentationSample s;
        s.h = s.w = n;
        s.source_id = id;
        s.image.assign(static_cast<size_t>(3) * n * n, 0.0);
        s.mask.assign(static_cast<size_t>(n) * n, 0);

        const double base = rng.uniform(0.10, 0.30);
        const double cx = rng.uniform(0.40, 0.60) * n;
        const double cy = rng.uniform(0.40, 0.60) * n;
        const double ax = rng.uniform(sp.axis_lo, sp.axis_hi) * n;
        const double ay = rng.uniform(sp.axis_lo, sp.axis_hi) * n;
        const double organ_level = rng.uniform(0.45, 0.70);
        const double edge = 2.0;  // soft-edge width in pixels

        struct Tumor {
            double x, y, r, level;
        };
        std::vector<Tumor> tumors;
        const int want = rng.uniform_int(sp.min_tumors, sp.max_tumors);
        for (int t = 0; t < want; ++t) {
            for (int attempt = 0; attempt < 64; ++attempt) {
                const double r = rng.uniform(sp.tumor_r_lo, sp.tumor_r_hi);
                const double tx = rng.uniform(cx - ax, cx + ax);
                const double ty = rng.uniform(cy - ay, cy + ay);
                // whole disc inside the organ: shrink both axes by r
                const double rx = (tx - cx) / std::max(ax - r, 1e-6);
                const double ry = (ty - cy) / std::max(ay - r, 1e-6);
                if (rx * rx + ry * ry <= 1.0) {
                    const double contrast = rng.bernoulli(0.5) ? 0.25 : -0.25;
                    tumors.push_back({tx, ty, r, organ_level + contrast});
                    break;
                }
            }
        }

        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const size_t i = static_cast<size_t>(y) * n + x;
                const double dx = (x - cx) / ax, dy = (y - cy) / ay;
                const double rr = std::sqrt(dx * dx + dy * dy);
                double v = base;
                if (rr <= 1.0) {
                    s.mask[i] = 1;
                    // soft edge: fade organ level in over `edge` pixels
                    const double dist_px = (1.0 - rr) * std::min(ax, ay);
                    const double alpha = std::min(1.0, dist_px / edge);
                    v = base + alpha * (organ_level - base);
                    for (const auto& t : tumors) {
                        const double td =
                            std::sqrt((x - t.x) * (x - t.x) + (y - t.y) * (y - t.y));
                        if (td <= t.r) {
                            v = t.level;
                            if (sp.num_classes == 3) s.mask[i] = 2;
                        }
                    }
                }
                const double noise = rng.normal(0.0, 0.02);
                for (int p = 0; p < 3; ++p) {
                    const double chan = v * (p == 0 ? 1.0 : (p == 1 ? 0.92 : 0.85));
                    s.image[static_cast<size_t>(p) * n * n + i] =
                        std::clamp(chan + noise, 0.0, 1.0);
                }
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// batching, prediction, evaluation

template <typename T>
Tensor<T> batch_images(const std::vector<const SegmentationSample*>& batch) {
    const int B = static_cast<int>(batch.size());
    const int h = batch[0]->h, w = batch[0]->w;
    Tensor<T> out({B, 3, h, w});
    T* po = out.data();
    const size_t per = static_cast<size_t>(3) * h * w;
    for (int b = 0; b < B; ++b)
        for (size_t i = 0; i < per; ++i)
            po[static_cast<size_t>(b) * per + i] = static_cast<T>(batch[b]->image[i]);
    return out;
}

template <typename T>
Tensor<T> batch_targets(const std::vector<const SegmentationSample*>& batch, int num_classes) {
    const int B = static_cast<int>(batch.size());
    const int h = batch[0]->h, w = batch[0]->w;
    Tensor<T> out({B, num_classes, h, w});
    T* po = out.data();
    const size_t per = static_cast<size_t>(num_classes) * h * w;
    const size_t plane = static_cast<size_t>(h) * w;
    for (int b = 0; b < B; ++b) {
        for (size_t i = 0; i < plane; ++i) {
            const int lab = batch[b]->mask[i];
            if (lab < 0 || lab >= num_classes)
                throw std::invalid_argument("batch_targets: label " + std::to_string(lab) +
                                            " out of range");
            po[static_cast<size_t>(b) * per + static_cast<size_t>(lab) * plane + i] = T(1);
        }
    }
    return out;
}

template <typename T>
std::vector<int> argmax_mask(const Tensor<T>& logits, int batch_index) {
    const int K = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    const T* p = logits.data() + static_cast<size_t>(batch_index) * K * plane;
    std::vector<int> mask(plane);
    for (size_t i = 0; i < plane; ++i) {
        int best = 0;
        T bv = p[i];
        for (int c = 1; c < K; ++c) {
            const T v = p[static_cast<size_t>(c) * plane + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        mask[i] = best;
    }
    return mask;
}

inline int eval_thread_budget() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* cap = std::getenv("HBFORMER_THREADS")) {
        const long v = std::strtol(cap, nullptr, 10);
        if (v >= 1 && static_cast<unsigned>(v) < n) n = static_cast<unsigned>(v);
    }
    return static_cast<int>(n);
}

template <typename T>
std::vector<int> predict_mask(HBFormer<T>& model, const SegmentationSample& s) {
    std::vector<const SegmentationSample*> one{&s};
    Tensor<T> img = batch_images<T>(one);
    Tensor<T> logits = model.forward(img, /*training=*/false);
    return argmax_mask(logits, 0);
}

// Per-sample, per-foreground-class DSC/IoU averaged over the dataset; a class
// absent from both masks of a sample counts as a correct 1.0. Pass preds_out
// to keep the predicted masks.
template <typename T>
MetricsReport evaluate(HBFormer<T>& model, const std::vector<SegmentationSample>& data,
                       std::vector<std::vector<int>>* preds_out = nullptr) {
    if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const int K = model.config().num_classes;
    const int fg = K - 1;
    std::vector<double> dsc_acc(fg, 0.0), iou_acc(fg, 0.0);
    const int threads = std::min<int>(eval_thread_budget(), static_cast<int>(data.size()));

    std::vector<std::vector<int>> preds(data.size());
    if (threads <= 1) {
        for (size_t i = 0; i < data.size(); ++i) preds[i] = predict_mask(model, data[i]);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&]() {
                for (size_t i = next.fetch_add(1); i < data.size(); i = next.fetch_add(1))
                    preds[i] = predict_mask(model, data[i]);
            });
        for (auto& th : pool) th.join();
    }

    for (size_t i = 0; i < data.size(); ++i) {
        for (int c = 1; c < K; ++c) {
            dsc_acc[c - 1] += dsc(preds[i], data[i].mask, c);
            iou_acc[c - 1] += iou(preds[i], data[i].mask, c);
        }
    }
    MetricsReport r;
    r.samples = static_cast<int>(data.size());
    r.class_dsc.resize(fg);
    r.class_iou.resize(fg);
    for (int c = 0; c < fg; ++c) {
        r.class_dsc[c] = dsc_acc[c] / data.size();
        r.class_iou[c] = iou_acc[c] / data.size();
        r.mean_dsc += r.class_dsc[c];
        r.mean_iou += r.class_iou[c];
    }
    r.mean_dsc /= fg;
    r.mean_iou /= fg;
    if (preds_out) *preds_out = std::move(preds);
    return r;
}

// ---------------------------------------------------------------------------
// training loop

struct TrainOptions {
    int batch_size = 4;
    long total_steps = 100;
    LrSchedule sched;
    double momentum = 0.98;
    double weight_decay = 1e-6;
    bool augment = true;
    long checkpoint_every = 0;  // 0: only on completion
};

template <typename T>
struct TrainRun {
    std::uint64_t seed = 0;
    double final_loss = 0;
    std::vector<double> losses;
    MetricsReport report;
    std::unique_ptr<HBFormer<T>> model;
};

// Trains one model from one seed. `on_checkpoint(model, step)` fires every
// checkpoint_every steps and once on completion, before the final eval.
template <typename T>
TrainRun<T> train_one(const ModelConfig& cfg, const std::vector<SegmentationSample>& data,
                      std::uint64_t seed, const TrainOptions& opt,
                      const std::function<void(HBFormer<T>&, long)>& on_checkpoint = {}) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    if (opt.batch_size < 1 || opt.total_steps < 1)
        throw std::invalid_argument("train: batch_size and total_steps must be positive");

    TrainRun<T> run;
    run.seed = seed;
    run.model = std::make_unique<HBFormer<T>>(cfg, seed);
    HBFormer<T>& model = *run.model;
    SgdOptimizer<T> sgd(model.named().params, static_cast<T>(opt.momentum),
                        static_cast<T>(opt.weight_decay));
    LrSchedule sched = opt.sched;
    sched.total_steps = opt.total_steps;

    Rng order_rng(seed * 0x9E3779B97F4A7C15ull + 1);
    Rng aug_rng(seed * 0xC2B2AE3D27D4EB4Full + 2);
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();  // forces shuffle on first use

    for (long step = 0; step < opt.total_steps; ++step) {
        std::vector<SegmentationSample> staged;
        std::vector<const SegmentationSample*> batch;
        staged.reserve(opt.batch_size);
        for (int b = 0; b < opt.batch_size; ++b) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng.engine());
                cursor = 0;
            }
            const SegmentationSample& s = data[order[cursor++]];
            staged.push_back(opt.augment ? augment(s, aug_rng) : s);
        }
        for (const auto& s : staged) batch.push_back(&s);

        GradTape<T> tape;
        Tensor<T> img = batch_images<T>(batch);
        Tensor<T> tgt = batch_targets<T>(batch, cfg.num_classes);
        Tensor<T> logits = model.forward(img, /*training=*/true);
        Tensor<T> loss = bce_dice_loss(logits, tgt);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
            throw NumericalError("train: loss became non-finite at step " +
                                 std::to_string(step));
        run.losses.push_back(lv);
        backward(loss);
        sgd.step(static_cast<T>(cosine_lr(step, sched)));
        model.zero_grad();

        if (on_checkpoint && opt.checkpoint_every > 0 &&
            (step + 1) % opt.checkpoint_every == 0 && step + 1 < opt.total_steps)
            on_checkpoint(model, step + 1);
    }
    run.final_loss = run.losses.back();
    if (on_checkpoint) on_checkpoint(model, opt.total_steps);
    run.report = evaluate(model, data);
    run.report.seed = seed;
    return run;
}

inline std::vector<std::uint64_t> default_seeds() { return {3407, 8261, 10993}; }

// ---------------------------------------------------------------------------
// CSV report (RFC 4180: CRLF rows, plain unquoted numeric fields)

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& runs) {
    if (runs.empty()) throw std::invalid_argument("write_metrics_csv: no reports");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write report: " + path);
    const size_t fg = runs[0].class_dsc.size();
    f << "class,dsc,iou\r\n";
    std::vector<double> overall_dsc, overall_iou;
    for (const auto& r : runs) {
        overall_dsc.push_back(r.mean_dsc);
        overall_iou.push_back(r.mean_iou);
    }
    auto mean_of = [](const std::vector<double>& v) {
        double a = 0;
        for (double x : v) a += x;
        return a / v.size();
    };
    auto std_of = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean_of(v);
        double a = 0;
        for (double x : v) a += (x - m) * (x - m);
        return std::sqrt(a / v.size());
    };
    f.precision(6);
    f << std::fixed;
    for (size_t c = 0; c < fg; ++c) {
        double d = 0, i = 0;
        for (const auto& r : runs) {
            d += r.class_dsc[c];
            i += r.class_iou[c];
        }
        f << (c + 1) << ',' << d / runs.size() << ',' << i / runs.size() << "\r\n";
    }
    f << "mean," << mean_of(overall_dsc) << ',' << mean_of(overall_iou) << "\r\n";
    f << "std," << std_of(overall_dsc) << ',' << std_of(overall_iou) << "\r\n";
    if (!f) throw IoError("failed writing report: " + path);
}

}  // namespace hbf
