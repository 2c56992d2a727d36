#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace rff::nn {

// Dense row-major real array. Rank 1 tensors are treated as a single row by
// the 2-D operations.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, std::vector<double> d);

    static size_t numel_of(const std::vector<int>& shape);
    size_t numel() const { return data.size(); }
    int rows() const;
    int cols() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
};

// Throws NumericError if any entry is NaN or infinite.
void check_finite(const Tensor& t, const char* what);

// Dense kernels, C = alpha * op(A) op(B) + beta * C. Backed by BLAS, pinned to
// a single thread so runs stay deterministic.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             double alpha = 1.0, double beta = 0.0);
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             double alpha = 1.0, double beta = 0.0);  // B given as n x k
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             double alpha = 1.0, double beta = 0.0);  // A given as k x m

}  // namespace rff::nn
