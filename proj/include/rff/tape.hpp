#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rff/tensor.hpp"

namespace rff::nn {

// One learnable array. Gradients accumulate across backward passes until the
// optimizer consumes and zeroes them.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool has_grad = false;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
};

// Reverse-mode tape. Forward evaluation is eager; each op records a closure
// that scatters its output gradient to its inputs. A tape is built per step
// and thrown away; distinct tapes share no state.
class Tape {
  public:
    using Var = int;

    // constant leaf, no gradient tracked
    Var input(Tensor value);
    // leaf bound to a parameter: backward() accumulates into p.grad
    Var param(Parameter& p);

    const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
    const Tensor& grad(Var v) const { return nodes_[static_cast<size_t>(v)].grad; }

    Var add(Var a, Var b);                    // elementwise, same shape
    Var add_bias(Var a, Var bias);            // [N,D] + [D] row broadcast
    Var scale(Var a, double c);
    Var mul(Var a, Var b);                    // elementwise, same shape
    Var matmul(Var a, Var b);                 // [M,K] x [K,N]
    Var matmul_nt(Var a, Var b);              // [M,K] x [N,K]^T
    Var transpose(Var a);
    Var reshape(Var a, std::vector<int> shape);
    Var relu(Var a);                          // gradient 0 at exactly 0
    Var softmax_rows(Var a);
    // fused stable softmax + mean cross-entropy; returns a scalar
    Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var mean_rows_grouped(Var x, int group);  // [G*B rows] -> [B rows], mean per group
    Var mean_all(Var x);                      // scalar mean of all entries
    Var concat_cols(const std::vector<Var>& xs);
    Var slice_cols(Var a, int start, int len);
    Var repeat_rows(Var a, int times);        // [T,D] -> [times*T,D]
    Var l2_normalize_rows(Var a);             // zero row -> NumericError
    Var clamp(Var a, double lo, double hi);   // gradient 0 where clamped
    Var acos_v(Var a);
    Var cos_v(Var a);
    Var sin_v(Var a);
    // block-diagonal products over consecutive row blocks of height `block`
    Var block_matmul_nt(Var a, Var b, int block);  // per block: A_i B_i^T
    Var block_matmul_nn(Var a, Var b, int block);  // per block: A_i B_i
    // 3x3 'same' convolution lowering, layout [B*H*W, C] -> [B*H*W, 9C]
    Var im2col3x3(Var x, int batch, int height, int width, int channels);
    Var maxpool2x2(Var x, int batch, int height, int width, int channels);

    // Seeds d(loss)=1, walks the tape in reverse and accumulates into every
    // bound parameter. loss must be scalar.
    void backward(Var loss);

    size_t num_nodes() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&)> back;
        Parameter* bound = nullptr;
    };

    Var push(Tensor value, const char* what);
    Tensor& grad_mut(Var v) { return nodes_[static_cast<size_t>(v)].grad; }

    std::vector<Node> nodes_;
};

}  // namespace rff::nn
