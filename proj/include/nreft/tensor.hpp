#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "nreft/errors.hpp"

namespace nreft {

// Minimal reverse-mode autodiff over dense row-major tensors (rank <= 2 in
// practice). Design: a Tensor is a shared handle to storage; operations are
// free functions that take a Tape, compute the forward value eagerly and, when
// the tape is recording and an input requires grad, push a backward closure.
// Closures are pushed in execution order, so replaying them in reverse is a
// valid topological sweep. Gradients accumulate (+=) into leaf tensors, which
// makes multi-sequence gradient accumulation and "sum of losses" linearity
// fall out for free.
//
// Precision is a template parameter: float for training, double where
// enumeration tolerances are tight.

inline constexpr double kRmsNormEps = 1e-5;

template <typename R>
struct TensorData {
    std::vector<int> shape;
    std::vector<R> data;
    std::vector<R> grad;  // empty unless requires_grad
    bool requires_grad = false;
};

template <typename R>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        Tensor t;
        t.p_ = std::make_shared<TensorData<R>>();
        t.p_->shape = std::move(shape);
        t.p_->data.assign(numel(t.p_->shape), R(0));
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<R> values, bool requires_grad = false) {
        if (numel(shape) != values.size()) {
            throw DimensionError("tensor data length does not match shape product");
        }
        Tensor t;
        t.p_ = std::make_shared<TensorData<R>>();
        t.p_->shape = std::move(shape);
        t.p_->data = std::move(values);
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static Tensor scalar(R value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(p_); }
    const std::vector<int>& shape() const { return p_->shape; }
    int rank() const { return static_cast<int>(p_->shape.size()); }
    int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
    size_t size() const { return p_->data.size(); }

    // rank-2 helpers; rank-1 tensors behave as a single row
    int rows() const { return rank() == 2 ? dim(0) : 1; }
    int cols() const { return rank() == 2 ? dim(1) : dim(0); }

    R* data() { return p_->data.data(); }
    const R* data() const { return p_->data.data(); }
    R& at(int i, int j) { return p_->data[static_cast<size_t>(i) * cols() + j]; }
    R at(int i, int j) const { return p_->data[static_cast<size_t>(i) * cols() + j]; }
    R* grad() { return p_->grad.empty() ? nullptr : p_->grad.data(); }
    const R* grad() const { return p_->grad.empty() ? nullptr : p_->grad.data(); }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool rg) {
        p_->requires_grad = rg;
        if (rg && p_->grad.size() != p_->data.size()) p_->grad.assign(p_->data.size(), R(0));
        if (!rg) p_->grad.clear();
    }
    void zero_grad() {
        if (p_->requires_grad) std::fill(p_->grad.begin(), p_->grad.end(), R(0));
    }

    R item() const {
        if (size() != 1) throw ContractError("item() on a non-scalar tensor");
        return p_->data[0];
    }

    std::shared_ptr<TensorData<R>> node() const { return p_; }

    static size_t numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw DimensionError("non-positive dimension in shape");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

private:
    std::shared_ptr<TensorData<R>> p_;
};

template <typename R>
class Tape {
public:
    Tape() = default;
    explicit Tape(bool recording) : recording_(recording) {}

    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }
    size_t num_ops() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    // Exposed so composite/custom operations (and negative-control tests) can
    // push their own backward rules.
    void record(std::function<void()> backward) {
        if (recording_) ops_.push_back(std::move(backward));
    }

    // Seeds d(loss) = seed, replays recorded ops in reverse, then consumes the
    // tape. Throws ContractError if loss is not a scalar attached to this tape.
    void backward(const Tensor<R>& loss, R seed = R(1)) {
        if (loss.size() != 1) throw ContractError("backward requires a scalar loss");
        if (!loss.requires_grad()) throw ContractError("loss is not connected to the tape (requires_grad is false)");
        loss.node()->grad[0] += seed;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

private:
    std::vector<std::function<void()>> ops_;
    bool recording_ = true;
};

namespace detail {

template <typename R>
inline Tensor<R> make_output(Tape<R>& tape, std::vector<int> shape, bool any_input_grad) {
    Tensor<R> out = Tensor<R>::zeros(std::move(shape));
    if (tape.recording() && any_input_grad) out.set_requires_grad(true);
    return out;
}

template <typename R>
inline bool track(const Tape<R>& tape, bool any_input_grad) {
    return tape.recording() && any_input_grad;
}

}  // namespace detail

// ------------------------------ primitives ------------------------------

template <typename R>
Tensor<R> matmul(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects rank-2 tensors");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) throw DimensionError("matmul inner dimensions disagree: " + std::to_string(k) + " vs " + std::to_string(k2));
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<R> out = detail::make_output(tape, {m, n}, rg);

    const R* ad = a.data();
    const R* bd = b.data();
    R* od = out.data();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const R aik = ad[static_cast<size_t>(i) * k + kk];
            if (aik == R(0)) continue;
            const R* brow = bd + static_cast<size_t>(kk) * n;
            R* orow = od + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }

    if (detail::track(tape, rg)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record([an, bn, on, m, k, n]() {
            const R* dout = on->grad.data();
            if (an->requires_grad) {
                R* da = an->grad.data();
                const R* bd2 = bn->data.data();
                for (int i = 0; i < m; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        const R* brow = bd2 + static_cast<size_t>(kk) * n;
                        const R* grow = dout + static_cast<size_t>(i) * n;
                        R acc = R(0);
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[static_cast<size_t>(i) * k + kk] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                R* db = bn->grad.data();
                const R* ad2 = an->data.data();
                for (int i = 0; i < m; ++i) {
                    const R* grow = dout + static_cast<size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const R aik = ad2[static_cast<size_t>(i) * k + kk];
                        if (aik == R(0)) continue;
                        R* brow = db + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

template <typename R>
Tensor<R> add(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    if (a.shape() != b.shape()) throw DimensionError("add expects identical shapes");
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<R> out = detail::make_output(tape, a.shape(), rg);
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::track(tape, rg)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record([an, bn, on, n]() {
            for (size_t i = 0; i < n; ++i) {
                if (an->requires_grad) an->grad[i] += on->grad[i];
                if (bn->requires_grad) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

template <typename R>
Tensor<R> multiply(Tape<R>& tape, const Tensor<R>& a, const Tensor<R>& b) {
    if (a.shape() != b.shape()) throw DimensionError("multiply expects identical shapes");
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<R> out = detail::make_output(tape, a.shape(), rg);
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::track(tape, rg)) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record([an, bn, on, n]() {
            for (size_t i = 0; i < n; ++i) {
                if (an->requires_grad) an->grad[i] += on->grad[i] * bn->data[i];
                if (bn->requires_grad) bn->grad[i] += on->grad[i] * an->data[i];
            }
        });
    }
    return out;
}

template <typename R>
Tensor<R> scale(Tape<R>& tape, const Tensor<R>& a, R c) {
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, a.shape(), rg);
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, n, c]() {
            for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * c;
        });
    }
    return out;
}

// out_i = a_i + mult * c_i, with c a non-differentiable constant
template <typename R>
Tensor<R> add_constant(Tape<R>& tape, const Tensor<R>& a, std::type_identity_t<std::span<const R>> c, R mult = R(1)) {
    if (a.size() != c.size()) throw DimensionError("add_constant length mismatch");
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, a.shape(), rg);
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + mult * c[i];
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, n]() {
            for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

template <typename R>
Tensor<R> exp(Tape<R>& tape, const Tensor<R>& a) {
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, a.shape(), rg);
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = std::exp(a.data()[i]);
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, n]() {
            for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * on->data[i];
        });
    }
    return out;
}

// min(a_i, cap): gradient passes only through the un-clamped region.
// `clamp_count`, when given, receives the number of clamped entries.
template <typename R>
Tensor<R> clamp_max(Tape<R>& tape, const Tensor<R>& a, R cap, long* clamp_count = nullptr) {
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, a.shape(), rg);
    const size_t n = a.size();
    long clamped = 0;
    for (size_t i = 0; i < n; ++i) {
        if (a.data()[i] > cap) {
            out.data()[i] = cap;
            ++clamped;
        } else {
            out.data()[i] = a.data()[i];
        }
    }
    if (clamp_count) *clamp_count += clamped;
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, n, cap]() {
            for (size_t i = 0; i < n; ++i) {
                if (an->data[i] <= cap) an->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

template <typename R>
Tensor<R> silu(Tape<R>& tape, const Tensor<R>& a) {
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, a.shape(), rg);
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) {
        const R x = a.data()[i];
        const R s = R(1) / (R(1) + std::exp(-x));
        out.data()[i] = x * s;
    }
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, n]() {
            for (size_t i = 0; i < n; ++i) {
                const R x = an->data[i];
                const R s = R(1) / (R(1) + std::exp(-x));
                an->grad[i] += on->grad[i] * s * (R(1) + x * (R(1) - s));
            }
        });
    }
    return out;
}

// Row-wise RMS normalization with learned gain: y_ij = x_ij * g_j / rms_i.
template <typename R>
Tensor<R> rmsnorm(Tape<R>& tape, const Tensor<R>& x, const Tensor<R>& gain) {
    if (x.rank() != 2 && x.rank() != 1) throw DimensionError("rmsnorm expects rank-1 or rank-2 input");
    const int t = x.rows(), d = x.cols();
    if (gain.size() != static_cast<size_t>(d)) throw DimensionError("rmsnorm gain length mismatch");
    const bool rg = x.requires_grad() || gain.requires_grad();
    Tensor<R> out = detail::make_output(tape, x.shape(), rg);

    std::vector<R> inv_rms(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) {
        const R* row = x.data() + static_cast<size_t>(i) * d;
        R ss = R(0);
        for (int j = 0; j < d; ++j) ss += row[j] * row[j];
        inv_rms[static_cast<size_t>(i)] = R(1) / std::sqrt(ss / R(d) + R(kRmsNormEps));
        R* orow = out.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = row[j] * gain.data()[j] * inv_rms[static_cast<size_t>(i)];
    }

    if (detail::track(tape, rg)) {
        auto xn = x.node(), gn = gain.node(), on = out.node();
        tape.record([xn, gn, on, t, d, inv_rms]() {
            for (int i = 0; i < t; ++i) {
                const R* row = xn->data.data() + static_cast<size_t>(i) * d;
                const R* urow = on->grad.data() + static_cast<size_t>(i) * d;
                const R ir = inv_rms[static_cast<size_t>(i)];
                if (gn->requires_grad) {
                    for (int j = 0; j < d; ++j) gn->grad[static_cast<size_t>(j)] += urow[j] * row[j] * ir;
                }
                if (xn->requires_grad) {
                    R dot = R(0);
                    for (int j = 0; j < d; ++j) dot += urow[j] * gn->data[static_cast<size_t>(j)] * row[j];
                    const R coef = dot * ir * ir * ir / R(d);
                    R* drow = xn->grad.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) {
                        drow[j] += urow[j] * gn->data[static_cast<size_t>(j)] * ir - row[j] * coef;
                    }
                }
            }
        });
    }
    return out;
}

// Row gather from an embedding table; backward scatter-adds into the table.
template <typename R>
Tensor<R> embedding(Tape<R>& tape, const Tensor<R>& table, std::span<const int> ids) {
    if (table.rank() != 2) throw DimensionError("embedding table must be rank-2");
    const int rows = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= rows) throw IndexError("embedding id " + std::to_string(id) + " out of range [0, " + std::to_string(rows) + ")");
    }
    const bool rg = table.requires_grad();
    Tensor<R> out = detail::make_output(tape, {static_cast<int>(ids.size()), d}, rg);
    for (size_t i = 0; i < ids.size(); ++i) {
        const R* src = table.data() + static_cast<size_t>(ids[i]) * d;
        std::copy(src, src + d, out.data() + i * static_cast<size_t>(d));
    }
    if (detail::track(tape, rg)) {
        auto tn = table.node(), on = out.node();
        std::vector<int> idv(ids.begin(), ids.end());
        tape.record([tn, on, idv, d]() {
            for (size_t i = 0; i < idv.size(); ++i) {
                R* dst = tn->grad.data() + static_cast<size_t>(idv[i]) * d;
                const R* src = on->grad.data() + i * static_cast<size_t>(d);
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Row-wise softmax over a square score matrix where row i may only attend to
// columns 0..i (causal mask). Masked entries are exactly zero.
template <typename R>
Tensor<R> causal_softmax(Tape<R>& tape, const Tensor<R>& scores) {
    if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
        throw DimensionError("causal_softmax expects a square matrix");
    }
    const int t = scores.dim(0);
    const bool rg = scores.requires_grad();
    Tensor<R> out = detail::make_output(tape, scores.shape(), rg);
    for (int i = 0; i < t; ++i) {
        const R* row = scores.data() + static_cast<size_t>(i) * t;
        R* orow = out.data() + static_cast<size_t>(i) * t;
        R mx = row[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        R sum = R(0);
        for (int j = 0; j <= i; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        const R inv = R(1) / sum;
        for (int j = 0; j <= i; ++j) orow[j] *= inv;
    }
    if (detail::track(tape, rg)) {
        auto sn = scores.node(), on = out.node();
        tape.record([sn, on, t]() {
            for (int i = 0; i < t; ++i) {
                const R* p = on->data.data() + static_cast<size_t>(i) * t;
                const R* u = on->grad.data() + static_cast<size_t>(i) * t;
                R dot = R(0);
                for (int j = 0; j <= i; ++j) dot += u[j] * p[j];
                R* ds = sn->grad.data() + static_cast<size_t>(i) * t;
                for (int j = 0; j <= i; ++j) ds[j] += p[j] * (u[j] - dot);
            }
        });
    }
    return out;
}

template <typename R>
Tensor<R> transpose(Tape<R>& tape, const Tensor<R>& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects rank-2");
    const int m = a.dim(0), n = a.dim(1);
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, {n, m}, rg);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) an->grad[static_cast<size_t>(i) * n + j] += on->grad[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

template <typename R>
Tensor<R> reshape(Tape<R>& tape, const Tensor<R>& a, std::vector<int> new_shape) {
    if (Tensor<R>::numel(new_shape) != a.size()) throw DimensionError("reshape element count mismatch");
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, std::move(new_shape), rg);
    std::copy(a.data(), a.data() + a.size(), out.data());
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        const size_t n = a.size();
        tape.record([an, on, n]() {
            for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

template <typename R>
Tensor<R> slice_cols(Tape<R>& tape, const Tensor<R>& a, int start, int width) {
    if (a.rank() != 2) throw DimensionError("slice_cols expects rank-2");
    const int m = a.dim(0), n = a.dim(1);
    if (start < 0 || width <= 0 || start + width > n) throw DimensionError("slice_cols out of range");
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, {m, width}, rg);
    for (int i = 0; i < m; ++i) {
        const R* src = a.data() + static_cast<size_t>(i) * n + start;
        std::copy(src, src + width, out.data() + static_cast<size_t>(i) * width);
    }
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, m, n, start, width]() {
            for (int i = 0; i < m; ++i) {
                R* dst = an->grad.data() + static_cast<size_t>(i) * n + start;
                const R* src = on->grad.data() + static_cast<size_t>(i) * width;
                for (int j = 0; j < width; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

template <typename R>
Tensor<R> concat_cols(Tape<R>& tape, const std::vector<Tensor<R>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
    const int m = parts[0].dim(0);
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != m) throw DimensionError("concat_cols row mismatch");
        total += p.dim(1);
        rg = rg || p.requires_grad();
    }
    Tensor<R> out = detail::make_output(tape, {m, total}, rg);
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < m; ++i) {
            std::copy(p.data() + static_cast<size_t>(i) * w, p.data() + static_cast<size_t>(i) * w + w,
                      out.data() + static_cast<size_t>(i) * total + off);
        }
        off += w;
    }
    if (detail::track(tape, rg)) {
        std::vector<std::shared_ptr<TensorData<R>>> nodes;
        nodes.reserve(parts.size());
        for (const auto& p : parts) nodes.push_back(p.node());
        auto on = out.node();
        tape.record([nodes, on, m, total]() {
            int off2 = 0;
            for (auto& pn : nodes) {
                const int w = pn->shape[1];
                if (pn->requires_grad) {
                    for (int i = 0; i < m; ++i) {
                        R* dst = pn->grad.data() + static_cast<size_t>(i) * w;
                        const R* src = on->grad.data() + static_cast<size_t>(i) * total + off2;
                        for (int j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                off2 += w;
            }
        });
    }
    return out;
}

template <typename R>
Tensor<R> sum(Tape<R>& tape, const Tensor<R>& a) {
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, {1}, rg);
    R acc = R(0);
    for (size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    out.data()[0] = acc;
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        const size_t n = a.size();
        tape.record([an, on, n]() {
            for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[0];
        });
    }
    return out;
}

// scalar = sum_i w_i * a_i with constant weights
template <typename R>
Tensor<R> weighted_sum(Tape<R>& tape, const Tensor<R>& a, std::type_identity_t<std::span<const R>> weights) {
    if (a.size() != weights.size()) throw DimensionError("weighted_sum length mismatch");
    const bool rg = a.requires_grad();
    Tensor<R> out = detail::make_output(tape, {1}, rg);
    R acc = R(0);
    for (size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * weights[i];
    out.data()[0] = acc;
    if (detail::track(tape, rg)) {
        auto an = a.node(), on = out.node();
        std::vector<R> w(weights.begin(), weights.end());
        tape.record([an, on, w]() {
            for (size_t i = 0; i < w.size(); ++i) an->grad[i] += on->grad[0] * w[i];
        });
    }
    return out;
}

// -log softmax(logits)[target] for a rank-1 logit vector, max-stabilized.
template <typename R>
Tensor<R> softmax_cross_entropy(Tape<R>& tape, const Tensor<R>& logits, int target) {
    if (logits.rank() != 1) throw ContractError("softmax_cross_entropy expects rank-1 logits");
    const int v = logits.dim(0);
    if (target < 0 || target >= v) throw IndexError("cross-entropy target " + std::to_string(target) + " out of range");
    const bool rg = logits.requires_grad();
    Tensor<R> out = detail::make_output(tape, {1}, rg);

    const R* x = logits.data();
    R mx = x[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    R sum = R(0);
    for (int j = 0; j < v; ++j) sum += std::exp(x[j] - mx);
    const R lse = mx + std::log(sum);
    out.data()[0] = lse - x[target];

    if (detail::track(tape, rg)) {
        auto ln = logits.node(), on = out.node();
        tape.record([ln, on, v, target, lse]() {
            const R u = on->grad[0];
            for (int j = 0; j < v; ++j) {
                const R p = std::exp(ln->data[static_cast<size_t>(j)] - lse);
                ln->grad[static_cast<size_t>(j)] += u * (p - (j == target ? R(1) : R(0)));
            }
        });
    }
    return out;
}

// Per-row picked log-softmax: out[j] = log softmax(logits[row_start + j])[targets[j]].
// This is the batched form of the cross-entropy primitive used for sequence
// log-likelihoods (out holds log-probabilities, not losses).
template <typename R>
Tensor<R> log_softmax_pick(Tape<R>& tape, const Tensor<R>& logits, std::span<const int> targets, int row_start) {
    if (logits.rank() != 2) throw DimensionError("log_softmax_pick expects rank-2 logits");
    const int t = logits.dim(0), v = logits.dim(1);
    const int n = static_cast<int>(targets.size());
    if (row_start < 0 || row_start + n > t) throw DimensionError("log_softmax_pick row range out of bounds");
    for (int tok : targets) {
        if (tok < 0 || tok >= v) throw IndexError("token id " + std::to_string(tok) + " out of vocabulary");
    }
    const bool rg = logits.requires_grad();
    Tensor<R> out = detail::make_output(tape, {n}, rg);

    std::vector<R> lses(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        const R* row = logits.data() + static_cast<size_t>(row_start + j) * v;
        R mx = row[0];
        for (int k = 1; k < v; ++k) mx = std::max(mx, row[k]);
        R sum = R(0);
        for (int k = 0; k < v; ++k) sum += std::exp(row[k] - mx);
        lses[static_cast<size_t>(j)] = mx + std::log(sum);
        out.data()[j] = row[targets[j]] - lses[static_cast<size_t>(j)];
    }

    if (detail::track(tape, rg)) {
        auto ln = logits.node(), on = out.node();
        std::vector<int> tv(targets.begin(), targets.end());
        tape.record([ln, on, tv, row_start, v, lses]() {
            for (size_t j = 0; j < tv.size(); ++j) {
                const R u = on->grad[j];
                if (u == R(0)) continue;
                const size_t row = static_cast<size_t>(row_start) + j;
                R* drow = ln->grad.data() + row * v;
                const R* xrow = ln->data.data() + row * v;
                for (int k = 0; k < v; ++k) {
                    const R p = std::exp(xrow[k] - lses[j]);
                    drow[k] += u * ((k == tv[j] ? R(1) : R(0)) - p);
                }
            }
        });
    }
    return out;
}

// ------------------------------ gradient check ------------------------------

// Central-difference gradient verification. f must map a tensor to a scalar
// tensor using the supplied tape. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1), i.e. coordinates below unit scale are compared
// absolutely. Default steps: 1e-3 in 32-bit, 1e-6 in 64-bit.
struct GradCheckResult {
    bool pass = false;
    double max_rel_error = 0.0;
    size_t worst_index = 0;
};

template <typename R>
GradCheckResult grad_check_detail(const std::function<Tensor<R>(Tape<R>&, Tensor<R>&)>& f, Tensor<R> input,
                                  double tolerance, double step = 0.0) {
    if (step == 0.0) step = std::is_same_v<R, float> ? 1e-3 : 1e-6;
    input.set_requires_grad(true);
    input.zero_grad();
    Tape<R> tape;
    Tensor<R> loss = f(tape, input);
    if (loss.size() != 1) throw ContractError("grad_check requires a scalar-valued function");
    tape.backward(loss);

    std::vector<double> analytic(input.size());
    for (size_t i = 0; i < input.size(); ++i) analytic[i] = static_cast<double>(input.grad()[i]);

    GradCheckResult result;
    Tape<R> silent(false);
    for (size_t i = 0; i < input.size(); ++i) {
        const R saved = input.data()[i];
        input.data()[i] = saved + static_cast<R>(step);
        const double fp = static_cast<double>(f(silent, input).item());
        input.data()[i] = saved - static_cast<R>(step);
        const double fm = static_cast<double>(f(silent, input).item());
        input.data()[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1.0});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_index = i;
        }
    }
    result.pass = result.max_rel_error <= tolerance;
    return result;
}

template <typename R>
bool grad_check(const std::function<Tensor<R>(Tape<R>&, Tensor<R>&)>& f, const Tensor<R>& input, double tolerance,
                double step = 0.0) {
    return grad_check_detail<R>(f, input, tolerance, step).pass;
}

}  // namespace nreft
