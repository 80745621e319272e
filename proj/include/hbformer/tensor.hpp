#pragma once

// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
// Storage is float for the model path; every routine is templated on the
// scalar type so tests can re-run the exact same graph at double precision.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbf {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

namespace detail {

template <typename T>
struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until requires_grad is set
    bool requires_grad = false;
};

}  // namespace detail

template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false) {
        validate_shape(shape);
        st_ = std::make_shared<detail::Storage<T>>();
        st_->shape = std::move(shape);
        st_->data.assign(shape_numel(st_->shape), T(0));
        if (requires_grad) set_requires_grad(true);
    }

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
        validate_shape(shape);
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        st_ = std::make_shared<detail::Storage<T>>();
        st_->shape = std::move(shape);
        st_->data = std::move(data);
        if (requires_grad) set_requires_grad(true);
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.st_->data.begin(), t.st_->data.end(), v);
        return t;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return st_->shape; }
    int ndim() const { return static_cast<int>(st_->shape.size()); }
    int dim(int i) const { return st_->shape.at(static_cast<size_t>(i)); }
    size_t numel() const { return st_->data.size(); }

    T* data() { return st_->data.data(); }
    const T* data() const { return st_->data.data(); }
    std::vector<T>& values() { return st_->data; }
    const std::vector<T>& values() const { return st_->data; }

    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not scalar");
        return st_->data[0];
    }

    bool requires_grad() const { return st_ && st_->requires_grad; }

    void set_requires_grad(bool on) {
        st_->requires_grad = on;
        if (on && st_->grad.size() != st_->data.size())
            st_->grad.assign(st_->data.size(), T(0));
        if (!on) st_->grad.clear();
    }

    bool has_grad() const { return st_ && !st_->grad.empty(); }

    T* grad() { return st_->grad.data(); }
    const T* grad() const { return st_->grad.data(); }
    std::vector<T>& grad_vec() { return st_->grad; }

    void zero_grad() {
        if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
    }

    // Identity of the underlying buffer; two handles alias iff equal.
    const void* id() const { return st_.get(); }

  private:
    static void validate_shape(const Shape& s) {
        if (s.empty()) throw std::invalid_argument("tensor: rank-0 shapes are not supported");
        for (int d : s)
            if (d < 1)
                throw std::invalid_argument("tensor: shape " + shape_str(s) +
                                            " has a dimension < 1");
    }

    std::shared_ptr<detail::Storage<T>> st_;
};

// Tape of executed operations. Ops record a backward closure onto the active
// tape (if any); backward() replays them in exact reverse execution order and
// then frees the recording. No tape active means pure inference: nothing is
// recorded and outputs do not require grad.
template <typename T>
class GradTape {
  public:
    GradTape() : prev_(active_ref()) { active_ref() = this; }
    ~GradTape() { active_ref() = prev_; }

    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active() { return active_ref(); }

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    size_t size() const { return nodes_.size(); }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw std::invalid_argument("backward: loss does not require grad (was the graph recorded?)");
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
    }

  private:
    static GradTape*& active_ref() {
        thread_local GradTape* active = nullptr;
        return active;
    }

    std::vector<std::function<void()>> nodes_;
    GradTape* prev_;
};

template <typename T>
void backward(Tensor<T>& loss) {
    auto* tape = GradTape<T>::active();
    if (!tape) throw std::invalid_argument("backward: no active tape");
    tape->backward(loss);
}

// Marks `out` as requiring grad and records `bw` if a tape is active and any
// input requires grad. Returns true when recorded (ops may skip building the
// closure context otherwise).
template <typename T>
bool record_if_needed(bool any_input_grad, Tensor<T>& out, std::function<void()> bw) {
    auto* tape = GradTape<T>::active();
    if (!tape || !any_input_grad) return false;
    out.set_requires_grad(true);
    tape->record(std::move(bw));
    return true;
}

// Deterministic RNG wrapper; one instance per seed/stream.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double std = 1.0) {
        return std::normal_distribution<double>(mean, std)(gen_);
    }
    int uniform_int(int lo, int hi) {  // inclusive
        return std::uniform_int_distribution<int>(lo, hi)(gen_);
    }
    bool bernoulli(double p) { return uniform() < p; }
    uint64_t next() { return gen_(); }

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
};

// Truncated normal init: resample outside two standard deviations.
template <typename T>
void trunc_normal_(Tensor<T>& t, Rng& rng, double std_dev = 0.02) {
    for (auto& v : t.values()) {
        double x;
        do {
            x = rng.normal(0.0, std_dev);
        } while (x < -2.0 * std_dev || x > 2.0 * std_dev);
        v = static_cast<T>(x);
    }
}

template <typename T>
void fill_uniform_(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace hbf
