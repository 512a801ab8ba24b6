#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stwave/error.hpp"
#include "stwave/rng.hpp"

namespace stwave {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

inline void check_shape_valid(const Shape& s) {
    for (int64_t e : s) {
        if (e <= 0) throw ShapeError("invalid shape " + shape_str(s) + ": extents must be positive");
    }
}

// Row-major strides (innermost axis contiguous).
inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

constexpr int64_t kNoTape = -1;

// Immutable dense row-major tensor. A scalar has rank 0 (empty shape) and one
// element. Copies are cheap: the payload is shared and never mutated; every
// operation produces a fresh tensor. All stored values must be finite --
// factories and tape ops enforce this so NaN/Inf surface as NumericalFault at
// the op that produced them rather than corrupting downstream state.
template <typename T>
class Tensor {
public:
    Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}, /*check=*/false) {}

    static Tensor zeros(Shape shape) {
        check_shape_valid(shape);
        std::vector<T> d(static_cast<size_t>(shape_numel(shape)), T(0));
        return Tensor(std::move(shape), std::move(d), /*check=*/false);
    }

    static Tensor full(Shape shape, T value) {
        check_shape_valid(shape);
        if (!std::isfinite(static_cast<double>(value)))
            throw NumericalFault("Tensor::full: non-finite fill value");
        std::vector<T> d(static_cast<size_t>(shape_numel(shape)), value);
        return Tensor(std::move(shape), std::move(d), /*check=*/false);
    }

    static Tensor scalar(T value) { return full(Shape{}, value); }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        check_shape_valid(shape);
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("Tensor::from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
        return Tensor(std::move(shape), std::move(data), /*check=*/true);
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        check_shape_valid(shape);
        std::vector<T> d(static_cast<size_t>(shape_numel(shape)));
        for (auto& v : d) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
        return Tensor(std::move(shape), std::move(d), /*check=*/false);
    }

    static Tensor normal(Shape shape, Rng& rng, T mean, T stddev) {
        check_shape_valid(shape);
        std::vector<T> d(static_cast<size_t>(shape_numel(shape)));
        for (auto& v : d)
            v = static_cast<T>(static_cast<double>(mean) + static_cast<double>(stddev) * rng.normal());
        return Tensor(std::move(shape), std::move(d), /*check=*/false);
    }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t extent(int64_t axis) const { return shape_.at(static_cast<size_t>(axis)); }
    int64_t size() const { return static_cast<int64_t>(data_->size()); }
    std::span<const T> data() const { return {data_->data(), data_->size()}; }

    // Checked multi-index access (slow path; tests and small utilities).
    T at(std::initializer_list<int64_t> idx) const {
        if (static_cast<int64_t>(idx.size()) != rank())
            throw ShapeError("Tensor::at: " + std::to_string(idx.size()) + " indices for rank " +
                             std::to_string(rank()) + " tensor");
        int64_t off = 0;
        auto strides = row_major_strides(shape_);
        size_t axis = 0;
        for (int64_t i : idx) {
            if (i < 0 || i >= shape_[axis])
                throw ShapeError("Tensor::at: index " + std::to_string(i) + " out of range on axis " +
                                 std::to_string(axis) + " of " + shape_str(shape_));
            off += i * strides[axis];
            ++axis;
        }
        return (*data_)[static_cast<size_t>(off)];
    }

    T item() const {
        if (size() != 1)
            throw ContractError("Tensor::item: tensor of shape " + shape_str(shape_) + " is not a scalar");
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    Tensor with_requires_grad(bool rg) const {
        Tensor t = *this;
        t.requires_grad_ = rg;
        return t;
    }

    int64_t tape_id() const { return tape_id_; }
    bool on_tape() const { return tape_id_ != kNoTape; }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> d(data_->size());
        for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>((*data_)[i]);
        return Tensor<U>::from_data(shape_, std::move(d));
    }

    // Same shape and bit-identical payload.
    bool identical(const Tensor& other) const {
        if (shape_ != other.shape_) return false;
        return *data_ == *other.data_;
    }

private:
    template <typename U>
    friend class Tape;

    Tensor(Shape shape, std::vector<T> data, bool check)
        : shape_(std::move(shape)), data_(std::make_shared<const std::vector<T>>(std::move(data))) {
        if (check) {
            for (T v : *data_) {
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericalFault("Tensor: non-finite value in payload of shape " + shape_str(shape_));
            }
        }
    }

    // Trusted fast-path constructor used by the tape after its own finite scan.
    static Tensor unchecked(Shape shape, std::vector<T> data) {
        return Tensor(std::move(shape), std::move(data), /*check=*/false);
    }

    Shape shape_;
    std::shared_ptr<const std::vector<T>> data_;
    bool requires_grad_ = false;
    int64_t tape_id_ = kNoTape;
};

} // namespace stwave
