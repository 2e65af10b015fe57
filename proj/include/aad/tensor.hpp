#pragma once
// Dense row-major tensor plus the one matrix primitive the network needs.

#include <Eigen/Core>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "aad/common.hpp"

namespace aad::net {

template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> dims) { reshape(std::move(dims)); }

    void reshape(std::vector<int> dims) {
        shape_only(std::move(dims));
        std::fill(data.begin(), data.end(), S(0));
    }

    // Caller promises to write every element before reading: skips the zero
    // fill when the element count is unchanged (steady-state training reuses
    // the same activation buffers every batch).
    void reshape_for_overwrite(std::vector<int> dims) { shape_only(std::move(dims)); }

    size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // NCHW accessors
    S& at4(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const S& at4(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    S& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    const S& at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    void zero() { std::fill(data.begin(), data.end(), S(0)); }

    bool finite() const {
        for (const S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i)
            s += (i ? "x" : "") + std::to_string(shape[i]);
        return s + "]";
    }

  private:
    void shape_only(std::vector<int> dims) {
        size_t n = 1;
        for (const int d : dims) {
            if (d <= 0) throw ShapeMismatch("tensor dimensions must be positive");
            n *= static_cast<size_t>(d);
        }
        shape = std::move(dims);
        data.resize(n);
    }
};

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// c[m x n] = a[m x k] * b[k x n], optionally accumulating into c
template <typename S>
inline void matmul(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false,
                   bool transpose_a = false, bool transpose_b = false) {
    MatMap<S> mc(c, m, n);
    if (!transpose_a && !transpose_b) {
        ConstMatMap<S> ma(a, m, k), mb(b, k, n);
        if (accumulate) mc.noalias() += ma * mb; else mc.noalias() = ma * mb;
    } else if (transpose_a && !transpose_b) {
        ConstMatMap<S> ma(a, k, m), mb(b, k, n);
        if (accumulate) mc.noalias() += ma.transpose() * mb; else mc.noalias() = ma.transpose() * mb;
    } else if (!transpose_a && transpose_b) {
        ConstMatMap<S> ma(a, m, k), mb(b, n, k);
        if (accumulate) mc.noalias() += ma * mb.transpose(); else mc.noalias() = ma * mb.transpose();
    } else {
        ConstMatMap<S> ma(a, k, m), mb(b, n, k);
        if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
        else mc.noalias() = ma.transpose() * mb.transpose();
    }
}

template <typename S>
struct ParamRef {
    std::string name;
    Tensor<S>* value = nullptr;
    Tensor<S>* grad = nullptr;
};

}  // namespace aad::net
