#include "htp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace htp::ad {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

// Index into b for broadcasting against an r x c operand.
struct Broadcast {
    std::size_t row_stride;
    std::size_t col_stride;

    static Broadcast against(const detail::Node& a, const detail::Node& b, const char* op) {
        if (b.rows == a.rows && b.cols == a.cols) return {b.cols, 1};
        if (b.rows == 1 && b.cols == a.cols) return {0, 1};
        if (b.rows == a.rows && b.cols == 1) return {1, 0};
        if (b.rows == 1 && b.cols == 1) return {0, 0};
        throw std::invalid_argument(std::string(op) + ": incompatible shapes " + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " and " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols));
    }
    std::size_t at(std::size_t r, std::size_t c) const { return r * row_stride + c * col_stride; }
};

}  // namespace

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) throw std::invalid_argument("Tensor: value count does not match shape");
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    return Tensor(std::move(n));
}

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
    Tensor t = constant(rows, cols, std::move(values));
    t.node_->requires_grad = true;
    t.node_->ensure_grad();
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw std::logic_error("Tensor::item on non-scalar " + shape_string(*this));
    return node_->value[0];
}

std::span<double> Tensor::mutable_grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() const {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return constant(rows(), cols(), node_->value); }

std::string shape_string(const Tensor& t) {
    if (!t.defined()) return "<undefined>";
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

// ---------------------------------------------------------------------------

Tensor Tape::make_output(std::size_t rows, std::size_t cols, std::initializer_list<const Tensor*> inputs) {
    Tensor out = Tensor::zeros(rows, cols);
    if (recording_) {
        for (const Tensor* in : inputs)
            if (in->requires_grad()) out.node_->requires_grad = true;
    }
    return out;
}

void Tape::record(std::shared_ptr<detail::Node> output, std::function<void()> fn) {
    records_.push_back({std::move(output), std::move(fn)});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: shape mismatch " + shape_string(a) + " * " + shape_string(b));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_output(m, n, {&a, &b});
    const double* A = a.node_->value.data();
    const double* B = b.node_->value.data();
    double* C = out.node_->value.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) C[i * n + j] += av * B[p * n + j];
        }
    if (out.requires_grad()) {
        NodePtr an = a.node_, bn = b.node_, on = out.node_;
        record(on, [an, bn, on, m, k, n] {
            const double* G = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                const double* Bv = bn->value.data();
                double* dA = an->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * Bv[p * n + j];
                        dA[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                const double* Av = an->value.data();
                double* dB = bn->grad.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = Av[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
                    }
            }
        });
    }
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    const Broadcast bc = Broadcast::against(*a.node_, *b.node_, "add");
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = make_output(r, c, {&a, &b});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.node_->value[i * c + j] = a.node_->value[i * c + j] + b.node_->value[bc.at(i, j)];
    if (out.requires_grad()) {
        NodePtr an = a.node_, bn = b.node_, on = out.node_;
        record(on, [an, bn, on, bc, r, c] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < r * c; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) bn->grad[bc.at(i, j)] += on->grad[i * c + j];
            }
        });
    }
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    const Broadcast bc = Broadcast::against(*a.node_, *b.node_, "sub");
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = make_output(r, c, {&a, &b});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.node_->value[i * c + j] = a.node_->value[i * c + j] - b.node_->value[bc.at(i, j)];
    if (out.requires_grad()) {
        NodePtr an = a.node_, bn = b.node_, on = out.node_;
        record(on, [an, bn, on, bc, r, c] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < r * c; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) bn->grad[bc.at(i, j)] -= on->grad[i * c + j];
            }
        });
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    const Broadcast bc = Broadcast::against(*a.node_, *b.node_, "mul");
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = make_output(r, c, {&a, &b});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.node_->value[i * c + j] = a.node_->value[i * c + j] * b.node_->value[bc.at(i, j)];
    if (out.requires_grad()) {
        NodePtr an = a.node_, bn = b.node_, on = out.node_;
        record(on, [an, bn, on, bc, r, c] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        an->grad[i * c + j] += on->grad[i * c + j] * bn->value[bc.at(i, j)];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        bn->grad[bc.at(i, j)] += on->grad[i * c + j] * an->value[i * c + j];
            }
        });
    }
    return out;
}

Tensor Tape::scale(const Tensor& a, double s) {
    Tensor out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < a.size(); ++i) out.node_->value[i] = a.node_->value[i] * s;
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on, s] {
            an->ensure_grad();
            for (std::size_t i = 0; i < an->value.size(); ++i) an->grad[i] += s * on->grad[i];
        });
    }
    return out;
}

Tensor Tape::gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
    const std::size_t c = table.cols();
    for (std::size_t r : rows)
        if (r >= table.rows())
            throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside table of " +
                                    std::to_string(table.rows()) + " rows");
    Tensor out = make_output(rows.size(), c, {&table});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(table.node_->value.begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                    out.node_->value.begin() + static_cast<std::ptrdiff_t>(i * c));
    if (out.requires_grad()) {
        NodePtr tn = table.node_, on = out.node_;
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        record(on, [tn, on, idx = std::move(idx), c] {
            tn->ensure_grad();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) tn->grad[idx[i] * c + j] += on->grad[i * c + j];
        });
    }
    return out;
}

Tensor Tape::masked_softmax(const Tensor& v, std::span<const std::uint8_t> mask) {
    if (v.rows() != 1 && v.cols() != 1) throw std::invalid_argument("masked_softmax: expects a vector");
    const std::size_t n = v.size();
    if (mask.size() != n) throw std::invalid_argument("masked_softmax: mask length mismatch");
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) hi = std::max(hi, v.node_->value[i]);
    if (!std::isfinite(hi)) throw std::invalid_argument("empty softmax support");
    Tensor out = make_output(v.rows(), v.cols(), {&v});
    auto& y = out.node_->value;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = mask[i] ? std::exp(v.node_->value[i] - hi) : 0.0;
        total += y[i];
    }
    for (double& x : y) x /= total;
    if (out.requires_grad()) {
        NodePtr vn = v.node_, on = out.node_;
        record(on, [vn, on, n] {
            vn->ensure_grad();
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += on->value[i] * on->grad[i];
            for (std::size_t i = 0; i < n; ++i) vn->grad[i] += on->value[i] * (on->grad[i] - dot);
        });
    }
    return out;
}

Tensor Tape::cosine_rows(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("cosine: length mismatch " + shape_string(a) + " vs " + shape_string(b));
    const std::size_t n = a.rows(), d = a.cols();
    Tensor out = make_output(n, 1, {&a, &b});
    // per row: dot, |a|, |b|, clamped denominator
    std::vector<double> stats(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = a.node_->value.data() + i * d;
        const double* y = b.node_->value.data() + i * d;
        double dot = 0.0, xx = 0.0, yy = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += x[j] * y[j];
            xx += x[j] * x[j];
            yy += y[j] * y[j];
        }
        const double na = std::sqrt(xx), nb = std::sqrt(yy);
        const double den = std::max(na * nb, kCosineEpsilon);
        stats[4 * i] = dot;
        stats[4 * i + 1] = na;
        stats[4 * i + 2] = nb;
        stats[4 * i + 3] = den;
        out.node_->value[i] = std::clamp(dot / den, -1.0, 1.0);
    }
    if (out.requires_grad()) {
        NodePtr an = a.node_, bn = b.node_, on = out.node_;
        record(on, [an, bn, on, stats = std::move(stats), n, d] {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double g = on->grad[i];
                if (g == 0.0) continue;
                const double dot = stats[4 * i], na = stats[4 * i + 1], nb = stats[4 * i + 2];
                const double den = stats[4 * i + 3];
                const bool clamped = na * nb <= kCosineEpsilon;
                const double c = dot / den;
                const double* x = an->value.data() + i * d;
                const double* y = bn->value.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) {
                    if (an->requires_grad) {
                        const double dx = clamped ? y[j] / den : y[j] / den - c * x[j] / (na * na);
                        an->grad[i * d + j] += g * dx;
                    }
                    if (bn->requires_grad) {
                        const double dy = clamped ? x[j] / den : x[j] / den - c * y[j] / (nb * nb);
                        bn->grad[i * d + j] += g * dy;
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::sigmoid(const Tensor& a) {
    Tensor out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.node_->value[i];
        out.node_->value[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->value.size(); ++i) {
                const double s = on->value[i];
                an->grad[i] += on->grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

Tensor Tape::log(const Tensor& a, double floor) {
    Tensor out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < a.size(); ++i) out.node_->value[i] = std::log(std::max(a.node_->value[i], floor));
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on, floor] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->value.size(); ++i) {
                const double x = an->value[i];
                if (x > floor) an->grad[i] += on->grad[i] / x;
            }
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& a) {
    Tensor out = make_output(1, 1, {&a});
    double s = 0.0;
    for (double x : a.node_->value) s += x;
    out.node_->value[0] = s;
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on] {
            an->ensure_grad();
            const double g = on->grad[0];
            for (double& x : an->grad) x += g;
        });
    }
    return out;
}

Tensor Tape::mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::sum_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = make_output(r, 1, {&a});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += a.node_->value[i * c + j];
        out.node_->value[i] = s;
    }
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on, r, c] {
            an->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[i];
        });
    }
    return out;
}

Tensor Tape::dropout(const Tensor& a, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (rate == 0.0) return a;
    std::mt19937_64 gen(seed);
    std::bernoulli_distribution keep(1.0 - rate);
    const double s = 1.0 / (1.0 - rate);
    std::vector<double> mask(a.size());
    for (double& m : mask) m = keep(gen) ? s : 0.0;
    Tensor out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < a.size(); ++i) out.node_->value[i] = a.node_->value[i] * mask[i];
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on, mask = std::move(mask)] {
            an->ensure_grad();
            for (std::size_t i = 0; i < mask.size(); ++i) an->grad[i] += on->grad[i] * mask[i];
        });
    }
    return out;
}

Tensor Tape::transpose(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = make_output(c, r, {&a});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.node_->value[j * r + i] = a.node_->value[i * c + j];
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on, r, c] {
            an->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[j * r + i];
        });
    }
    return out;
}

Tensor Tape::reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.size())
        throw std::invalid_argument("reshape: " + shape_string(a) + " to " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
    Tensor out = make_output(rows, cols, {&a});
    out.node_->value = a.node_->value;
    if (out.requires_grad()) {
        NodePtr an = a.node_, on = out.node_;
        record(on, [an, on] {
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

void Tape::backward(const Tensor& loss, double seed) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got " + shape_string(loss));
    if (!loss.requires_grad()) return;
    loss.node_->ensure_grad();
    loss.node_->grad[0] += seed;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        // outputs that never received a gradient contribute nothing
        if (it->output->grad.empty()) continue;
        it->backward();
    }
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&)>& graph, std::span<const Tensor> params, double step) {
    return grad_check_detailed(graph, params, step, 0.0).max_relative;
}

GradCheckResult grad_check_detailed(const std::function<Tensor(Tape&)>& graph, std::span<const Tensor> params,
                                    double step, double floor_scale) {
    if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
    std::vector<Tensor> ps(params.begin(), params.end());
    for (auto& p : ps) p.zero_grad();
    double f = 0.0;
    {
        Tape tape;
        Tensor out = graph(tape);
        f = out.item();
        tape.backward(out);
    }
    auto evaluate = [&] {
        Tape tape(false);
        return graph(tape).item();
    };
    const double floor = std::max(1e-8, floor_scale * std::max(1.0, std::abs(f)));
    GradCheckResult result;
    for (auto& p : ps) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = evaluate();
            values[i] = saved - step;
            const double down = evaluate();
            values[i] = saved;
            const double cd = (up - down) / (2.0 * step);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            const double diff = std::abs(a - cd);
            result.max_relative = std::max(result.max_relative, diff / std::max({std::abs(a), std::abs(cd), floor}));
            result.max_absolute = std::max(result.max_absolute, diff);
            result.below_floor += std::max(std::abs(a), std::abs(cd)) < floor;
            ++result.entries;
        }
    }
    return result;
}

}  // namespace htp::ad
