#pragma once

#include <deque>
#include <functional>
#include <string>

#include "rff/tape.hpp"

namespace rff::nn {

// Owns a model's parameters. Uses a deque so Parameter references stay valid
// as parameters are added.
class ParamSet {
  public:
    Parameter& add(std::string name, Tensor init);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    size_t count() const { return params_.size(); }
    size_t total_entries() const;
    void zero_grads();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    Parameter& operator[](size_t i) { return params_[i]; }
    const Parameter& operator[](size_t i) const { return params_[i]; }

  private:
    std::deque<Parameter> params_;
};

// Bias-corrected Adam.
struct AdamState {
    int64_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<Tensor> m;  // parallel to the ParamSet
    std::vector<Tensor> v;

    AdamState(const ParamSet& params, double learning_rate);
};

// One update over every parameter; consumes and zeroes the gradients.
// Throws InvalidState if any parameter has no populated gradient.
void adam_step(ParamSet& params, AdamState& state);

// Central-difference verification of the analytic gradients. closure(true)
// must run forward+backward (populating grads) and return the loss;
// closure(false) must run forward only. Checks a random 1% subsample of the
// parameter entries (at least 50) and returns the max guarded relative error
// |a - b| / max(|a|, |b|, 1e-8).
double grad_check(const std::function<double(bool with_grad)>& closure, ParamSet& params,
                  double eps = 1e-4, uint64_t seed = 0x9e3779b9);

}  // namespace rff::nn
