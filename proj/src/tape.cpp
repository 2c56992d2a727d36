#include "rff/tape.hpp"

#include <algorithm>
#include <cmath>

#include "rff/errors.hpp"

namespace rff::nn {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidArgument(msg);
}

// Small per-block kernels for the attention products. Library gemm calls
// carry too much dispatch overhead at 16x32-sized operands.
void small_mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accum) {
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        if (!accum) {
            for (int j = 0; j < n; ++j) crow[j] = 0.0;
        }
        const double* arow = a + static_cast<size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void small_mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accum) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double dot = 0.0;
            for (int l = 0; l < k; ++l) dot += arow[l] * brow[l];
            if (accum) crow[j] += dot;
            else crow[j] = dot;
        }
    }
}

void small_mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accum) {
    if (!accum) {
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) c[i] = 0.0;
    }
    for (int l = 0; l < k; ++l) {
        const double* arow = a + static_cast<size_t>(l) * m;
        const double* brow = b + static_cast<size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tape::Var Tape::push(Tensor value, const char* what) {
    check_finite(value, what);
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, nullptr});
    return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::input(Tensor value) { return push(std::move(value), "input"); }

Tape::Var Tape::param(Parameter& p) {
    const Var v = push(p.value, p.name.c_str());
    nodes_[static_cast<size_t>(v)].bound = &p;
    return v;
}

Tape::Var Tape::add(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.same_shape(B), "add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    const Var out = push(std::move(C), "add");
    nodes_[static_cast<size_t>(out)].back = [out, a, b](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] += g.data[i];
        }
    };
    return out;
}

Tape::Var Tape::add_bias(Var a, Var bias) {
    const Tensor& A = val(a);
    const Tensor& B = val(bias);
    const int n = A.rows(), d = A.cols();
    require(B.numel() == static_cast<size_t>(d),
            "add_bias: bias " + B.shape_str() + " does not match columns of " + A.shape_str());
    Tensor C = A;
    for (int r = 0; r < n; ++r) {
        double* row = &C.data[static_cast<size_t>(r) * d];
        for (int j = 0; j < d; ++j) row[j] += B.data[static_cast<size_t>(j)];
    }
    const Var out = push(std::move(C), "add_bias");
    nodes_[static_cast<size_t>(out)].back = [out, a, bias, n, d](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(bias);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        for (int r = 0; r < n; ++r) {
            const double* row = &g.data[static_cast<size_t>(r) * d];
            for (int j = 0; j < d; ++j) gb.data[static_cast<size_t>(j)] += row[j];
        }
    };
    return out;
}

Tape::Var Tape::scale(Var a, double c) {
    Tensor C = val(a);
    for (double& v : C.data) v *= c;
    const Var out = push(std::move(C), "scale");
    nodes_[static_cast<size_t>(out)].back = [out, a, c](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
    };
    return out;
}

Tape::Var Tape::mul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.same_shape(B), "mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    const Var out = push(std::move(C), "mul");
    nodes_[static_cast<size_t>(out)].back = [out, a, b](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A2 = t.val(a);
        const Tensor& B2 = t.val(b);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i] * B2.data[i];
            gb.data[i] += g.data[i] * A2.data[i];
        }
    };
    return out;
}

Tape::Var Tape::matmul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    const int m = A.rows(), k = A.cols();
    require(B.rows() == k, "matmul: inner dimensions " + A.shape_str() + " x " + B.shape_str());
    const int n = B.cols();
    Tensor C({m, n});
    gemm_nn(A.data.data(), B.data.data(), C.data.data(), m, k, n);
    const Var out = push(std::move(C), "matmul");
    nodes_[static_cast<size_t>(out)].back = [out, a, b, m, k, n](Tape& t) {
        const Tensor& g = t.grad(out);
        // dA += G B^T ; dB += A^T G
        gemm_nt(g.data.data(), t.val(b).data.data(), t.grad_mut(a).data.data(), m, n, k, 1.0, 1.0);
        gemm_tn(t.val(a).data.data(), g.data.data(), t.grad_mut(b).data.data(), k, m, n, 1.0, 1.0);
    };
    return out;
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    const int m = A.rows(), k = A.cols();
    require(B.cols() == k, "matmul_nt: inner dimensions " + A.shape_str() + " x " + B.shape_str() + "^T");
    const int n = B.rows();
    Tensor C({m, n});
    gemm_nt(A.data.data(), B.data.data(), C.data.data(), m, k, n);
    const Var out = push(std::move(C), "matmul_nt");
    nodes_[static_cast<size_t>(out)].back = [out, a, b, m, k, n](Tape& t) {
        const Tensor& g = t.grad(out);
        // dA += G B ; dB += G^T A
        gemm_nn(g.data.data(), t.val(b).data.data(), t.grad_mut(a).data.data(), m, n, k, 1.0, 1.0);
        gemm_tn(g.data.data(), t.val(a).data.data(), t.grad_mut(b).data.data(), n, m, k, 1.0, 1.0);
    };
    return out;
}

Tape::Var Tape::transpose(Var a) {
    const Tensor& A = val(a);
    const int r = A.rows(), c = A.cols();
    Tensor C({c, r});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) C.data[static_cast<size_t>(j) * r + i] = A.data[static_cast<size_t>(i) * c + j];
    }
    const Var out = push(std::move(C), "transpose");
    nodes_[static_cast<size_t>(out)].back = [out, a, r, c](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                ga.data[static_cast<size_t>(i) * c + j] += g.data[static_cast<size_t>(j) * r + i];
            }
        }
    };
    return out;
}

Tape::Var Tape::reshape(Var a, std::vector<int> shape) {
    const Tensor& A = val(a);
    require(Tensor::numel_of(shape) == A.numel(), "reshape: element count mismatch");
    Tensor C(std::move(shape), A.data);
    const Var out = push(std::move(C), "reshape");
    nodes_[static_cast<size_t>(out)].back = [out, a](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    };
    return out;
}

Tape::Var Tape::relu(Var a) {
    Tensor C = val(a);
    for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    const Var out = push(std::move(C), "relu");
    nodes_[static_cast<size_t>(out)].back = [out, a](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A = t.val(a);
        Tensor& ga = t.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) {
            if (A.data[i] > 0.0) ga.data[i] += g.data[i];
        }
    };
    return out;
}

Tape::Var Tape::softmax_rows(Var a) {
    const Tensor& A = val(a);
    const int n = A.rows(), d = A.cols();
    Tensor C = A;
    for (int r = 0; r < n; ++r) {
        double* row = &C.data[static_cast<size_t>(r) * d];
        const double mx = *std::max_element(row, row + d);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < d; ++j) row[j] /= sum;
    }
    const Var out = push(std::move(C), "softmax_rows");
    nodes_[static_cast<size_t>(out)].back = [out, a, n, d](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& S = t.val(out);
        Tensor& ga = t.grad_mut(a);
        for (int r = 0; r < n; ++r) {
            const double* gr = &g.data[static_cast<size_t>(r) * d];
            const double* sr = &S.data[static_cast<size_t>(r) * d];
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += gr[j] * sr[j];
            double* gar = &ga.data[static_cast<size_t>(r) * d];
            for (int j = 0; j < d; ++j) gar[j] += sr[j] * (gr[j] - dot);
        }
    };
    return out;
}

Tape::Var Tape::softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
    const Tensor& A = val(logits);
    const int n = A.rows(), k = A.cols();
    require(n >= 1, "softmax_cross_entropy: empty batch");
    require(labels.size() == static_cast<size_t>(n),
            "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(n) + " rows");
    for (int y : labels) {
        require(y >= 0 && y < k, "label " + std::to_string(y) + " out of range [0, " +
                                     std::to_string(k) + ")");
    }
    Tensor probs = A;
    double loss = 0.0;
    for (int r = 0; r < n; ++r) {
        double* row = &probs.data[static_cast<size_t>(r) * k];
        const double mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < k; ++j) row[j] /= sum;
        loss -= std::log(std::max(row[labels[static_cast<size_t>(r)]], 1e-300));
    }
    loss /= n;
    Tensor C({1}, {loss});
    const Var out = push(std::move(C), "softmax_cross_entropy");
    nodes_[static_cast<size_t>(out)].back = [out, logits, labels, probs = std::move(probs), n,
                                             k](Tape& t) {
        const double gs = t.grad(out).data[0];
        Tensor& gl = t.grad_mut(logits);
        const double inv = gs / n;
        for (int r = 0; r < n; ++r) {
            const double* pr = &probs.data[static_cast<size_t>(r) * k];
            double* gr = &gl.data[static_cast<size_t>(r) * k];
            for (int j = 0; j < k; ++j) gr[j] += inv * pr[j];
            gr[labels[static_cast<size_t>(r)]] -= inv;
        }
    };
    return out;
}

Tape::Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& A = val(x);
    const Tensor& G = val(gamma);
    const Tensor& B = val(beta);
    const int n = A.rows(), d = A.cols();
    require(G.numel() == static_cast<size_t>(d) && B.numel() == static_cast<size_t>(d),
            "layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
    Tensor C({n, d});
    Tensor xhat({n, d});
    std::vector<double> inv_sd(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        const double* row = &A.data[static_cast<size_t>(r) * d];
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sd[static_cast<size_t>(r)] = inv;
        double* xh = &xhat.data[static_cast<size_t>(r) * d];
        double* cr = &C.data[static_cast<size_t>(r) * d];
        for (int j = 0; j < d; ++j) {
            xh[j] = (row[j] - mean) * inv;
            cr[j] = xh[j] * G.data[static_cast<size_t>(j)] + B.data[static_cast<size_t>(j)];
        }
    }
    const Var out = push(std::move(C), "layer_norm");
    nodes_[static_cast<size_t>(out)].back = [out, x, gamma, beta, xhat = std::move(xhat),
                                             inv_sd = std::move(inv_sd), n, d](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& G2 = t.val(gamma);
        Tensor& gx = t.grad_mut(x);
        Tensor& gg = t.grad_mut(gamma);
        Tensor& gb = t.grad_mut(beta);
        for (int r = 0; r < n; ++r) {
            const double* gr = &g.data[static_cast<size_t>(r) * d];
            const double* xh = &xhat.data[static_cast<size_t>(r) * d];
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int j = 0; j < d; ++j) {
                const double dxh = gr[j] * G2.data[static_cast<size_t>(j)];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
                gg.data[static_cast<size_t>(j)] += gr[j] * xh[j];
                gb.data[static_cast<size_t>(j)] += gr[j];
            }
            mean_dxh /= d;
            mean_dxh_xh /= d;
            const double inv = inv_sd[static_cast<size_t>(r)];
            double* gxr = &gx.data[static_cast<size_t>(r) * d];
            for (int j = 0; j < d; ++j) {
                const double dxh = gr[j] * G2.data[static_cast<size_t>(j)];
                gxr[j] += inv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
    };
    return out;
}

Tape::Var Tape::mean_rows_grouped(Var x, int group) {
    const Tensor& A = val(x);
    const int rows = A.rows(), d = A.cols();
    require(group >= 1 && rows % group == 0,
            "mean_rows_grouped: " + std::to_string(rows) + " rows not divisible by group " +
                std::to_string(group));
    const int out_rows = rows / group;
    Tensor C({out_rows, d});
    for (int o = 0; o < out_rows; ++o) {
        double* cr = &C.data[static_cast<size_t>(o) * d];
        for (int i = 0; i < group; ++i) {
            const double* row = &A.data[static_cast<size_t>(o * group + i) * d];
            for (int j = 0; j < d; ++j) cr[j] += row[j];
        }
        for (int j = 0; j < d; ++j) cr[j] /= group;
    }
    const Var out = push(std::move(C), "mean_rows_grouped");
    nodes_[static_cast<size_t>(out)].back = [out, x, group, out_rows, d](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& gx = t.grad_mut(x);
        for (int o = 0; o < out_rows; ++o) {
            const double* gr = &g.data[static_cast<size_t>(o) * d];
            for (int i = 0; i < group; ++i) {
                double* gxr = &gx.data[static_cast<size_t>(o * group + i) * d];
                for (int j = 0; j < d; ++j) gxr[j] += gr[j] / group;
            }
        }
    };
    return out;
}

Tape::Var Tape::mean_all(Var x) {
    const Tensor& A = val(x);
    require(A.numel() > 0, "mean_all: empty tensor");
    double sum = 0.0;
    for (double v : A.data) sum += v;
    Tensor C({1}, {sum / static_cast<double>(A.numel())});
    const Var out = push(std::move(C), "mean_all");
    nodes_[static_cast<size_t>(out)].back = [out, x](Tape& t) {
        const double gs = t.grad(out).data[0];
        Tensor& gx = t.grad_mut(x);
        const double inv = gs / static_cast<double>(gx.data.size());
        for (double& v : gx.data) v += inv;
    };
    return out;
}

Tape::Var Tape::concat_cols(const std::vector<Var>& xs) {
    require(!xs.empty(), "concat_cols: no inputs");
    const int n = val(xs[0]).rows();
    int total = 0;
    std::vector<int> widths;
    for (Var v : xs) {
        require(val(v).rows() == n, "concat_cols: row mismatch");
        widths.push_back(val(v).cols());
        total += widths.back();
    }
    Tensor C({n, total});
    int off = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const Tensor& A = val(xs[i]);
        const int w = widths[i];
        for (int r = 0; r < n; ++r) {
            std::copy_n(&A.data[static_cast<size_t>(r) * w], w,
                        &C.data[static_cast<size_t>(r) * total + off]);
        }
        off += w;
    }
    const Var out = push(std::move(C), "concat_cols");
    nodes_[static_cast<size_t>(out)].back = [out, xs, widths, n, total](Tape& t) {
        const Tensor& g = t.grad(out);
        int off2 = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            Tensor& gx = t.grad_mut(xs[i]);
            const int w = widths[i];
            for (int r = 0; r < n; ++r) {
                const double* gr = &g.data[static_cast<size_t>(r) * total + off2];
                double* gxr = &gx.data[static_cast<size_t>(r) * w];
                for (int j = 0; j < w; ++j) gxr[j] += gr[j];
            }
            off2 += w;
        }
    };
    return out;
}

Tape::Var Tape::slice_cols(Var a, int start, int len) {
    const Tensor& A = val(a);
    const int n = A.rows(), d = A.cols();
    require(start >= 0 && len >= 1 && start + len <= d, "slice_cols: range out of bounds");
    Tensor C({n, len});
    for (int r = 0; r < n; ++r) {
        std::copy_n(&A.data[static_cast<size_t>(r) * d + start], len,
                    &C.data[static_cast<size_t>(r) * len]);
    }
    const Var out = push(std::move(C), "slice_cols");
    nodes_[static_cast<size_t>(out)].back = [out, a, start, len, n, d](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        for (int r = 0; r < n; ++r) {
            const double* gr = &g.data[static_cast<size_t>(r) * len];
            double* gar = &ga.data[static_cast<size_t>(r) * d + start];
            for (int j = 0; j < len; ++j) gar[j] += gr[j];
        }
    };
    return out;
}

Tape::Var Tape::repeat_rows(Var a, int times) {
    const Tensor& A = val(a);
    require(times >= 1, "repeat_rows: times must be >= 1");
    const int n = A.rows(), d = A.cols();
    Tensor C({n * times, d});
    for (int rep = 0; rep < times; ++rep) {
        std::copy_n(A.data.data(), A.data.size(),
                    &C.data[static_cast<size_t>(rep) * A.data.size()]);
    }
    const Var out = push(std::move(C), "repeat_rows");
    nodes_[static_cast<size_t>(out)].back = [out, a, times, n, d](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        for (int rep = 0; rep < times; ++rep) {
            const double* block = &g.data[static_cast<size_t>(rep) * ga.data.size()];
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += block[i];
        }
        (void)n;
        (void)d;
    };
    return out;
}

Tape::Var Tape::l2_normalize_rows(Var a) {
    const Tensor& A = val(a);
    const int n = A.rows(), d = A.cols();
    Tensor C = A;
    std::vector<double> norms(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        double* row = &C.data[static_cast<size_t>(r) * d];
        double sq = 0.0;
        for (int j = 0; j < d; ++j) sq += row[j] * row[j];
        const double nrm = std::sqrt(sq);
        if (nrm < 1e-12) {
            throw NumericError("l2_normalize: zero-norm row " + std::to_string(r));
        }
        norms[static_cast<size_t>(r)] = nrm;
        for (int j = 0; j < d; ++j) row[j] /= nrm;
    }
    const Var out = push(std::move(C), "l2_normalize");
    nodes_[static_cast<size_t>(out)].back = [out, a, norms = std::move(norms), n, d](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& Y = t.val(out);
        Tensor& ga = t.grad_mut(a);
        for (int r = 0; r < n; ++r) {
            const double* gr = &g.data[static_cast<size_t>(r) * d];
            const double* yr = &Y.data[static_cast<size_t>(r) * d];
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
            const double inv = 1.0 / norms[static_cast<size_t>(r)];
            double* gar = &ga.data[static_cast<size_t>(r) * d];
            for (int j = 0; j < d; ++j) gar[j] += inv * (gr[j] - yr[j] * dot);
        }
    };
    return out;
}

Tape::Var Tape::clamp(Var a, double lo, double hi) {
    require(lo <= hi, "clamp: lo must be <= hi");
    Tensor C = val(a);
    for (double& v : C.data) v = std::min(std::max(v, lo), hi);
    const Var out = push(std::move(C), "clamp");
    nodes_[static_cast<size_t>(out)].back = [out, a, lo, hi](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A = t.val(a);
        Tensor& ga = t.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) {
            if (A.data[i] > lo && A.data[i] < hi) ga.data[i] += g.data[i];
        }
    };
    return out;
}

Tape::Var Tape::acos_v(Var a) {
    const Tensor& A = val(a);
    Tensor C = A;
    for (double& v : C.data) {
        require(v >= -1.0 && v <= 1.0, "acos: input outside [-1, 1], clamp first");
        v = std::acos(v);
    }
    const Var out = push(std::move(C), "acos");
    nodes_[static_cast<size_t>(out)].back = [out, a](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A2 = t.val(a);
        Tensor& ga = t.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] -= g.data[i] / std::sqrt(1.0 - A2.data[i] * A2.data[i]);
        }
    };
    return out;
}

Tape::Var Tape::cos_v(Var a) {
    Tensor C = val(a);
    for (double& v : C.data) v = std::cos(v);
    const Var out = push(std::move(C), "cos");
    nodes_[static_cast<size_t>(out)].back = [out, a](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A = t.val(a);
        Tensor& ga = t.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] -= g.data[i] * std::sin(A.data[i]);
    };
    return out;
}

Tape::Var Tape::sin_v(Var a) {
    Tensor C = val(a);
    for (double& v : C.data) v = std::sin(v);
    const Var out = push(std::move(C), "sin");
    nodes_[static_cast<size_t>(out)].back = [out, a](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A = t.val(a);
        Tensor& ga = t.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * std::cos(A.data[i]);
    };
    return out;
}

Tape::Var Tape::block_matmul_nt(Var a, Var b, int block) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    const int rows = A.rows(), d = A.cols();
    require(block >= 1 && rows % block == 0, "block_matmul_nt: rows not divisible by block");
    require(B.rows() == rows && B.cols() == d, "block_matmul_nt: operand shape mismatch");
    const int nb = rows / block;
    Tensor C({rows, block});
    for (int i = 0; i < nb; ++i) {
        const double* ab = &A.data[static_cast<size_t>(i) * block * d];
        const double* bb = &B.data[static_cast<size_t>(i) * block * d];
        double* cb = &C.data[static_cast<size_t>(i) * block * block];
        small_mm_nt(ab, bb, cb, block, d, block, false);
    }
    const Var out = push(std::move(C), "block_matmul_nt");
    nodes_[static_cast<size_t>(out)].back = [out, a, b, block, d, nb](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A2 = t.val(a);
        const Tensor& B2 = t.val(b);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (int i = 0; i < nb; ++i) {
            const double* gblk = &g.data[static_cast<size_t>(i) * block * block];
            const double* ab = &A2.data[static_cast<size_t>(i) * block * d];
            const double* bb = &B2.data[static_cast<size_t>(i) * block * d];
            // dA_i += G_i B_i ; dB_i += G_i^T A_i
            small_mm_nn(gblk, bb, &ga.data[static_cast<size_t>(i) * block * d], block, block, d, true);
            small_mm_tn(gblk, ab, &gb.data[static_cast<size_t>(i) * block * d], block, block, d, true);
        }
    };
    return out;
}

Tape::Var Tape::block_matmul_nn(Var a, Var b, int block) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    const int rows = A.rows();
    require(block >= 1 && rows % block == 0, "block_matmul_nn: rows not divisible by block");
    require(A.cols() == block, "block_matmul_nn: A blocks must be square");
    require(B.rows() == rows, "block_matmul_nn: operand shape mismatch");
    const int d = B.cols();
    const int nb = rows / block;
    Tensor C({rows, d});
    for (int i = 0; i < nb; ++i) {
        const double* ab = &A.data[static_cast<size_t>(i) * block * block];
        const double* bb = &B.data[static_cast<size_t>(i) * block * d];
        double* cb = &C.data[static_cast<size_t>(i) * block * d];
        small_mm_nn(ab, bb, cb, block, block, d, false);
    }
    const Var out = push(std::move(C), "block_matmul_nn");
    nodes_[static_cast<size_t>(out)].back = [out, a, b, block, d, nb](Tape& t) {
        const Tensor& g = t.grad(out);
        const Tensor& A2 = t.val(a);
        const Tensor& B2 = t.val(b);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (int i = 0; i < nb; ++i) {
            const double* gblk = &g.data[static_cast<size_t>(i) * block * d];
            const double* ab = &A2.data[static_cast<size_t>(i) * block * block];
            const double* bb = &B2.data[static_cast<size_t>(i) * block * d];
            // dA_i += G_i B_i^T ; dB_i += A_i^T G_i
            small_mm_nt(gblk, bb, &ga.data[static_cast<size_t>(i) * block * block], block, d, block, true);
            small_mm_tn(ab, gblk, &gb.data[static_cast<size_t>(i) * block * d], block, block, d, true);
        }
    };
    return out;
}

Tape::Var Tape::im2col3x3(Var x, int batch, int height, int width, int channels) {
    const Tensor& A = val(x);
    require(A.rows() == batch * height * width && A.cols() == channels,
            "im2col3x3: input must be [B*H*W, C]");
    Tensor C({batch * height * width, 9 * channels});
    for (int b = 0; b < batch; ++b) {
        for (int y = 0; y < height; ++y) {
            for (int xx = 0; xx < width; ++xx) {
                const size_t orow = (static_cast<size_t>(b) * height + y) * width + xx;
                double* crow = &C.data[orow * 9 * channels];
                for (int ky = 0; ky < 3; ++ky) {
                    const int sy = y + ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int sx = xx + kx - 1;
                        if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
                        const size_t irow = (static_cast<size_t>(b) * height + sy) * width + sx;
                        std::copy_n(&A.data[irow * channels], channels,
                                    crow + (ky * 3 + kx) * channels);
                    }
                }
            }
        }
    }
    const Var out = push(std::move(C), "im2col3x3");
    nodes_[static_cast<size_t>(out)].back = [out, x, batch, height, width, channels](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& gx = t.grad_mut(x);
        for (int b = 0; b < batch; ++b) {
            for (int y = 0; y < height; ++y) {
                for (int xx = 0; xx < width; ++xx) {
                    const size_t orow = (static_cast<size_t>(b) * height + y) * width + xx;
                    const double* grow = &g.data[orow * 9 * channels];
                    for (int ky = 0; ky < 3; ++ky) {
                        const int sy = y + ky - 1;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sx = xx + kx - 1;
                            if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
                            const size_t irow = (static_cast<size_t>(b) * height + sy) * width + sx;
                            double* gxr = &gx.data[irow * channels];
                            const double* gsrc = grow + (ky * 3 + kx) * channels;
                            for (int c = 0; c < channels; ++c) gxr[c] += gsrc[c];
                        }
                    }
                }
            }
        }
    };
    return out;
}

Tape::Var Tape::maxpool2x2(Var x, int batch, int height, int width, int channels) {
    const Tensor& A = val(x);
    require(height % 2 == 0 && width % 2 == 0, "maxpool2x2: spatial dims must be even");
    require(A.rows() == batch * height * width && A.cols() == channels,
            "maxpool2x2: input must be [B*H*W, C]");
    const int oh = height / 2, ow = width / 2;
    Tensor C({batch * oh * ow, channels});
    std::vector<uint32_t> arg(static_cast<size_t>(batch) * oh * ow * channels);
    for (int b = 0; b < batch; ++b) {
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                const size_t orow = (static_cast<size_t>(b) * oh + y) * ow + xx;
                for (int c = 0; c < channels; ++c) {
                    double best = -1e300;
                    uint32_t best_row = 0;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const size_t irow =
                                (static_cast<size_t>(b) * height + 2 * y + dy) * width + 2 * xx + dx;
                            const double v = A.data[irow * channels + c];
                            if (v > best) {
                                best = v;
                                best_row = static_cast<uint32_t>(irow);
                            }
                        }
                    }
                    C.data[orow * channels + c] = best;
                    arg[orow * channels + c] = best_row;
                }
            }
        }
    }
    const Var out = push(std::move(C), "maxpool2x2");
    nodes_[static_cast<size_t>(out)].back = [out, x, arg = std::move(arg), channels](Tape& t) {
        const Tensor& g = t.grad(out);
        Tensor& gx = t.grad_mut(x);
        const size_t orows = g.data.size() / channels;
        for (size_t orow = 0; orow < orows; ++orow) {
            for (int c = 0; c < channels; ++c) {
                gx.data[static_cast<size_t>(arg[orow * channels + c]) * channels + c] +=
                    g.data[orow * channels + c];
            }
        }
    };
    return out;
}

void Tape::backward(Var loss) {
    auto& loss_node = nodes_.at(static_cast<size_t>(loss));
    if (loss_node.value.numel() != 1) {
        throw InvalidArgument("backward: loss must be scalar, got " + loss_node.value.shape_str());
    }
    for (size_t i = 0; i <= static_cast<size_t>(loss); ++i) {
        nodes_[i].grad = Tensor(nodes_[i].value.shape);
    }
    loss_node.grad.data[0] = 1.0;
    for (int i = loss; i >= 0; --i) {
        auto& node = nodes_[static_cast<size_t>(i)];
        if (node.back) node.back(*this);
    }
    for (size_t i = 0; i <= static_cast<size_t>(loss); ++i) {
        check_finite(nodes_[i].grad, "gradient");
        if (nodes_[i].bound) {
            Parameter& p = *nodes_[i].bound;
            for (size_t j = 0; j < p.grad.data.size(); ++j) p.grad.data[j] += nodes_[i].grad.data[j];
            p.has_grad = true;
        }
    }
}

}  // namespace rff::nn
