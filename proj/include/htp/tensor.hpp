#pragma once

// Dense 2-D tensors with a reverse-mode tape.
//
// A Tensor is a cheap handle to a shared node; copies alias the same storage.
// Leaf tensors created with requires_grad=true act as trainable parameters and
// keep their grad buffer across tapes. Everything produced by a Tape is an
// intermediate node owned by the tape's records.
//
// Vectors are represented as n x 1 (column) or 1 x n (row) matrices. Const
// only protects the handle: mutable_values() on a const Tensor still writes
// through to the shared node.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace htp::ad {

namespace detail {
struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor scalar(double v) { return constant(1, 1, {v}); }

    bool defined() const { return static_cast<bool>(node_); }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() const { return node_->value; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
    double item() const;

    // Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() const;
    void zero_grad() const;

    // Deep copy of the values into a fresh constant (no grad tracking).
    Tensor detach() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    friend class Tape;
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Records primitive operations in execution order. A non-recording tape
// evaluates the same arithmetic without keeping backward closures, which is
// what evaluation uses.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return records_.size(); }

    Tensor matmul(const Tensor& a, const Tensor& b);
    // b may match a's shape, be a 1 x c row, an r x 1 column or a 1 x 1 scalar.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double s);
    Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
    // Softmax over a row or column vector restricted to mask != 0.
    Tensor masked_softmax(const Tensor& v, std::span<const std::uint8_t> mask);
    // Row-wise cosine similarity of two n x d matrices -> n x 1.
    Tensor cosine_rows(const Tensor& a, const Tensor& b);
    Tensor sigmoid(const Tensor& a);
    Tensor log(const Tensor& a, double floor = 1e-12);
    Tensor sum(const Tensor& a);
    Tensor mean(const Tensor& a);
    Tensor sum_rows(const Tensor& a);
    // Inverted dropout; identity when rate == 0.
    Tensor dropout(const Tensor& a, double rate, std::uint64_t seed);
    Tensor transpose(const Tensor& a);
    Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);

    // Seeds d(loss)/d(loss) = seed and walks the records once in reverse.
    void backward(const Tensor& loss, double seed = 1.0);

private:
    Tensor make_output(std::size_t rows, std::size_t cols, std::initializer_list<const Tensor*> inputs);
    void record(std::shared_ptr<detail::Node> output, std::function<void()> fn);

    struct Record {
        std::shared_ptr<detail::Node> output;
        std::function<void()> backward;
    };
    bool recording_;
    std::vector<Record> records_;
};

inline constexpr double kCosineEpsilon = 1e-8;

// Largest relative error between the tape gradient and central differences,
// |analytic - cd| / max(|analytic|, |cd|, 1e-8), over every entry of params.
// graph must rebuild the scalar output on the tape it is given.
double grad_check(const std::function<Tensor(Tape&)>& graph, std::span<const Tensor> params, double step);

struct GradCheckResult {
    double max_relative = 0.0;  // largest relative error
    double max_absolute = 0.0;  // largest |analytic - cd| over all entries
    std::size_t entries = 0;
    std::size_t below_floor = 0;  // entries where both gradients sit under the floor
};

// Like grad_check, but the denominator floor is max(1e-8, floor_scale * max(1, |f|)).
// Central differences carry roundoff near eps * |f| / step, so a relative
// error is only resolvable for gradients well above that level.
GradCheckResult grad_check_detailed(const std::function<Tensor(Tape&)>& graph, std::span<const Tensor> params,
                                    double step, double floor_scale);

std::string shape_string(const Tensor& t);

}  // namespace htp::ad
