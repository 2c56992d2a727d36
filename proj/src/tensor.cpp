#include "rff/tensor.hpp"

#include <dlfcn.h>
#include <malloc.h>

#include <cmath>
#include <cstdlib>

#include "rff/errors.hpp"

namespace rff::nn {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) {
        throw InvalidArgument("tensor data size does not match shape " + shape_str());
    }
}

size_t Tensor::numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw InvalidArgument("negative tensor dimension");
        n *= static_cast<size_t>(d);
    }
    return n;
}

int Tensor::rows() const {
    if (shape.size() <= 1) return 1;
    return shape[0];
}

int Tensor::cols() const {
    if (shape.empty()) return 1;
    return shape.back();
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void check_finite(const Tensor& t, const char* what) {
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value in ") + what);
        }
    }
}

// ---------------------------------------------------------------------------
// gemm backend: OpenBLAS when available, internal kernel otherwise

namespace {

// CBLAS wire constants
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

struct Blas {
    using DgemmFn = void (*)(int order, int transa, int transb, int m, int n, int k, double alpha,
                             const double* a, int lda, const double* b, int ldb, double beta,
                             double* c, int ldc);
    DgemmFn dgemm = nullptr;

    static const Blas& get() {
        static Blas instance;
        return instance;
    }

  private:
    Blas() {
        // A training step allocates and frees hundreds of MB of tape buffers;
        // with glibc's default mmap threshold every step re-faults those
        // pages. Keep large blocks on the heap so they get reused.
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        // Containers and hypervisors often mask the CPU model string, which
        // drops OpenBLAS's model-based dispatch to its slowest kernel even
        // though the feature flags stay visible. Pick the dynamic arch from
        // the flags before the library initializes, unless already chosen.
        if (!std::getenv("OPENBLAS_CORETYPE")) {
            if (__builtin_cpu_supports("avx512f")) {
                setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
            } else if (__builtin_cpu_supports("avx2")) {
                setenv("OPENBLAS_CORETYPE", "HASWELL", 1);
            }
        }
        void* handle = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
        if (!handle) handle = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
        if (!handle) return;  // internal kernel takes over
        auto set_threads =
            reinterpret_cast<void (*)(int)>(dlsym(handle, "openblas_set_num_threads"));
        if (set_threads) set_threads(1);  // keeps runs bit-reproducible
        dgemm = reinterpret_cast<DgemmFn>(dlsym(handle, "cblas_dgemm"));
    }
};

void scale_output(double* c, int m, int n, double beta) {
    const size_t total = static_cast<size_t>(m) * n;
    if (beta == 0.0) {
        for (size_t i = 0; i < total; ++i) c[i] = 0.0;
    } else if (beta != 1.0) {
        for (size_t i = 0; i < total; ++i) c[i] *= beta;
    }
}

void fallback_nn(const double* a, const double* b, double* c, int m, int k, int n, double alpha,
                 double beta) {
    scale_output(c, m, n, beta);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = alpha * arow[l];
            const double* brow = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void fallback_nt(const double* a, const double* b, double* c, int m, int k, int n, double alpha,
                 double beta) {
    scale_output(c, m, n, beta);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double dot = 0.0;
            for (int l = 0; l < k; ++l) dot += arow[l] * brow[l];
            crow[j] += alpha * dot;
        }
    }
}

void fallback_tn(const double* a, const double* b, double* c, int m, int k, int n, double alpha,
                 double beta) {
    scale_output(c, m, n, beta);
    for (int l = 0; l < k; ++l) {
        const double* arow = a + static_cast<size_t>(l) * m;
        const double* brow = b + static_cast<size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double av = alpha * arow[i];
            double* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, double alpha,
             double beta) {
    const Blas& blas = Blas::get();
    if (blas.dgemm) blas.dgemm(kRowMajor, kNoTrans, kNoTrans, m, n, k, alpha, a, k, b, n, beta, c, n);
    else fallback_nn(a, b, c, m, k, n, alpha, beta);
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, double alpha,
             double beta) {
    const Blas& blas = Blas::get();
    if (blas.dgemm) blas.dgemm(kRowMajor, kNoTrans, kTrans, m, n, k, alpha, a, k, b, k, beta, c, n);
    else fallback_nt(a, b, c, m, k, n, alpha, beta);
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, double alpha,
             double beta) {
    const Blas& blas = Blas::get();
    if (blas.dgemm) blas.dgemm(kRowMajor, kTrans, kNoTrans, m, n, k, alpha, a, m, b, n, beta, c, n);
    else fallback_tn(a, b, c, m, k, n, alpha, beta);
}

}  // namespace rff::nn
