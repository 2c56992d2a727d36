#include "rff/optim.hpp"

#include <algorithm>
#include <cmath>

#include "rff/errors.hpp"
#include "rff/rng.hpp"

namespace rff::nn {

Parameter& ParamSet::add(std::string name, Tensor init) {
    if (find(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
    params_.emplace_back(std::move(name), std::move(init));
    return params_.back();
}

Parameter* ParamSet::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

const Parameter* ParamSet::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

size_t ParamSet::total_entries() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void ParamSet::zero_grads() {
    for (auto& p : params_) {
        std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
        p.has_grad = false;
    }
}

AdamState::AdamState(const ParamSet& params, double learning_rate) : lr(learning_rate) {
    m.reserve(params.count());
    v.reserve(params.count());
    for (const auto& p : params) {
        m.emplace_back(p.value.shape);
        v.emplace_back(p.value.shape);
    }
}

void adam_step(ParamSet& params, AdamState& state) {
    if (state.m.size() != params.count()) {
        throw InvalidState("adam state built for a different parameter set");
    }
    for (const auto& p : params) {
        if (!p.has_grad) {
            throw InvalidState("adam_step: parameter '" + p.name + "' has no gradient");
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.count(); ++i) {
        Parameter& p = params[i];
        double* m = state.m[i].data.data();
        double* v = state.v[i].data.data();
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = p.grad.data[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p.value.data[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
    params.zero_grads();
}

double grad_check(const std::function<double(bool)>& closure, ParamSet& params, double eps,
                  uint64_t seed) {
    params.zero_grads();
    closure(true);

    // snapshot analytic gradients, flattened over the whole set
    std::vector<double> analytic;
    for (const auto& p : params) {
        analytic.insert(analytic.end(), p.grad.data.begin(), p.grad.data.end());
    }
    params.zero_grads();

    const size_t total = analytic.size();
    if (total == 0) return 0.0;
    size_t n_check = std::max<size_t>(total / 100, 50);
    n_check = std::min(n_check, total);

    // sample entry indices without replacement
    RngStream rng(seed);
    std::vector<size_t> picked(n_check);
    {
        std::vector<size_t> pool(total);
        for (size_t i = 0; i < total; ++i) pool[i] = i;
        for (size_t i = 0; i < n_check; ++i) {
            const size_t j = i + rng.below(total - i);
            std::swap(pool[i], pool[j]);
            picked[i] = pool[i];
        }
    }

    auto entry = [&params](size_t flat) -> double& {
        for (auto& p : params) {
            if (flat < p.value.numel()) return p.value.data[flat];
            flat -= p.value.numel();
        }
        throw InvalidArgument("grad_check: flat index out of range");
    };

    double worst = 0.0;
    for (size_t flat : picked) {
        double& slot = entry(flat);
        const double saved = slot;
        slot = saved + eps;
        const double up = closure(false);
        slot = saved - eps;
        const double down = closure(false);
        slot = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[flat];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace rff::nn
