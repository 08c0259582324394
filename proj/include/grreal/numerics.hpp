#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "grreal/errors.hpp"
#include "grreal/rng.hpp"

namespace grreal {

inline void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw numerical_error(std::string("non-finite value in ") + what);
}

inline void check_finite(std::span<const double> v, const char* what) {
    for (double x : v) check_finite(x, what);
}

/// Dense row-major matrix of doubles. Vectors are (n x 1) matrices.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int r) const { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }

    std::size_t size() const { return data.size(); }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// out[r] += sum_j W(r,j) * x[j], accumulated left to right.
///
/// The accumulation order (bias first, then one matrix-vector product at a
/// time, columns left to right) is part of the recurrent cell's contract:
/// reduced configurations must be bit-reproducible against reference code
/// that follows the same order.
inline void add_matvec(std::span<double> out, const Matrix& w, std::span<const double> x) {
    if (static_cast<int>(out.size()) != w.rows || static_cast<int>(x.size()) != w.cols)
        throw dimension_error("add_matvec: got " + std::to_string(out.size()) + "x" +
                              std::to_string(x.size()) + " against matrix " +
                              std::to_string(w.rows) + "x" + std::to_string(w.cols));
    const double* wp = w.data.data();
    for (int r = 0; r < w.rows; ++r) {
        double acc = out[r];
        for (int c = 0; c < w.cols; ++c) acc += wp[static_cast<std::size_t>(r) * w.cols + c] * x[c];
        out[r] = acc;
    }
}

/// W x + b.
inline std::vector<double> affine(const Matrix& w, std::span<const double> x, std::span<const double> b) {
    if (static_cast<int>(b.size()) != w.rows)
        throw dimension_error("affine: bias length " + std::to_string(b.size()) +
                              " != rows " + std::to_string(w.rows));
    std::vector<double> out(b.begin(), b.end());
    add_matvec(out, w, x);
    return out;
}

/// out[r] += a[r] * x (rank-1 accumulation into a matrix row block).
inline void add_outer(Matrix& w, std::span<const double> a, std::span<const double> x) {
    if (static_cast<int>(a.size()) != w.rows || static_cast<int>(x.size()) != w.cols)
        throw dimension_error("add_outer: shape mismatch");
    for (int r = 0; r < w.rows; ++r) {
        const double ar = a[r];
        double* wr = w.data.data() + static_cast<std::size_t>(r) * w.cols;
        for (int c = 0; c < w.cols; ++c) wr[c] += ar * x[c];
    }
}

/// out[c] += sum_r W(r,c) * a[r]  (transposed matrix-vector accumulate).
inline void add_matvec_t(std::span<double> out, const Matrix& w, std::span<const double> a) {
    if (static_cast<int>(out.size()) != w.cols || static_cast<int>(a.size()) != w.rows)
        throw dimension_error("add_matvec_t: shape mismatch");
    for (int r = 0; r < w.rows; ++r) {
        const double ar = a[r];
        const double* wr = w.data.data() + static_cast<std::size_t>(r) * w.cols;
        for (int c = 0; c < w.cols; ++c) out[c] += wr[c] * ar;
    }
}

inline std::vector<double> tanh_vec(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

inline void tanh_inplace(std::span<double> x) {
    for (double& v : x) v = std::tanh(v);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void sigmoid_inplace(std::span<double> x) {
    for (double& v : x) v = sigmoid(v);
}

inline std::vector<double> sigmoid_vec(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
    return y;
}

/// Derivative of tanh expressed through the activation output: 1 - y^2.
inline double dtanh_from_output(double y) { return 1.0 - y * y; }
/// Derivative of the logistic sigmoid through its output: y (1 - y).
inline double dsigmoid_from_output(double y) { return y * (1.0 - y); }

inline std::vector<double> tanh_deriv_vec(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = std::tanh(x[i]);
        y[i] = 1.0 - t * t;
    }
    return y;
}

inline std::vector<double> sigmoid_deriv_vec(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = sigmoid(x[i]);
        y[i] = s * (1.0 - s);
    }
    return y;
}

/// Named parameter matrices with parallel gradient buffers of identical shape.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Matrix value;
        Matrix grad;
    };

    /// Register a zero-initialized parameter. Names must be unique.
    Matrix& add(const std::string& name, int rows, int cols) {
        if (index_.count(name)) throw config_error("duplicate parameter: " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, Matrix(rows, cols), Matrix(rows, cols)});
        return entries_.back().value;
    }

    Matrix& param(const std::string& name) { return entries_[at(name)].value; }
    const Matrix& param(const std::string& name) const { return entries_[at(name)].value; }
    Matrix& grad(const std::string& name) { return entries_[at(name)].grad; }
    const Matrix& grad(const std::string& name) const { return entries_[at(name)].grad; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t count() const { return entries_.size(); }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(0.0);
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& e : entries_)
            for (double g : e.grad.data) s += g * g;
        return std::sqrt(s);
    }

    /// Scale all gradients so the global L2 norm is at most max_norm.
    void clip_grads(double max_norm) {
        const double n = grad_norm();
        check_finite(n, "gradient norm");
        if (n <= max_norm || n == 0.0) return;
        const double scale = max_norm / n;
        for (auto& e : entries_)
            for (double& g : e.grad.data) g *= scale;
    }

    bool same_shapes(const ParamStore& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name != o.entries_[i].name ||
                !entries_[i].value.same_shape(o.entries_[i].value))
                return false;
        return true;
    }

    /// Copy parameter values from another store with identical layout.
    void copy_values_from(const ParamStore& o) {
        if (!same_shapes(o)) throw dimension_error("ParamStore layout mismatch");
        for (std::size_t i = 0; i < entries_.size(); ++i)
            entries_[i].value.data = o.entries_[i].value.data;
    }

private:
    std::size_t at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw config_error("unknown parameter: " + name);
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform(-r, r) with r = 1/sqrt(fan_in) over every element of `m`.
inline void init_uniform_fanin(Matrix& m, int fan_in, Rng& rng) {
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    for (double& v : m.data) v = rng.uniform(-r, r);
}

/// Adam with bias correction. Moment buffers are keyed by entry order, so the
/// optimizer must be constructed against the store it updates.
class Adam {
public:
    Adam() = default;
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    void step(ParamStore& store) {
        if (m_.size() != store.count()) {
            m_.assign(store.count(), {});
            v_.assign(store.count(), {});
            for (std::size_t i = 0; i < store.count(); ++i) {
                m_[i].assign(store.entries()[i].value.size(), 0.0);
                v_[i].assign(store.entries()[i].value.size(), 0.0);
            }
            t_ = 0;
        }
        if (lr_ == 0.0) return;  // explicit no-op: parameters must stay bit-identical
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < store.count(); ++i) {
            auto& e = store.entries()[i];
            for (std::size_t k = 0; k < e.value.size(); ++k) {
                const double g = e.grad.data[k];
                m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
                v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
                const double mhat = m_[i][k] / bc1;
                const double vhat = v_[i][k] / bc2;
                e.value.data[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                check_finite(e.value.data[k], "Adam update");
            }
        }
    }

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

private:
    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Per-unit keep/drop mask with inverse-keep scaling.
struct DropoutMask {
    double keep_prob = 1.0;
    std::vector<double> scaled;  // entries are 0 or 1/keep_prob

    bool active() const { return !scaled.empty(); }

    void apply(std::span<const double> x, std::span<double> out) const {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * scaled[i];
    }
};

inline DropoutMask sample_dropout_mask(double keep_prob, int size, Rng& rng) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
        throw config_error("dropout keep probability must be in (0,1]");
    DropoutMask m;
    m.keep_prob = keep_prob;
    m.scaled.assign(size, 0.0);
    if (keep_prob == 1.0) {
        std::fill(m.scaled.begin(), m.scaled.end(), 1.0);
        return m;
    }
    const double inv = 1.0 / keep_prob;
    for (int i = 0; i < size; ++i) m.scaled[i] = rng.bernoulli(keep_prob) ? inv : 0.0;
    return m;
}

/// Compare analytic gradients held in `store` against central finite
/// differences of `f`. Returns max over parameters of
/// |analytic - fd| / max(1, |fd|).
inline double grad_check(ParamStore& store, const std::function<double()>& f, double h = 1e-5) {
    double worst = 0.0;
    for (auto& e : store.entries()) {
        for (std::size_t k = 0; k < e.value.size(); ++k) {
            const double saved = e.value.data[k];
            e.value.data[k] = saved + h;
            const double fp = f();
            e.value.data[k] = saved - h;
            const double fm = f();
            e.value.data[k] = saved;
            check_finite(fp, "grad_check f(theta+h)");
            check_finite(fm, "grad_check f(theta-h)");
            const double fd = (fp - fm) / (2.0 * h);
            const double rel = std::abs(e.grad.data[k] - fd) / std::max(1.0, std::abs(fd));
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

}  // namespace grreal
