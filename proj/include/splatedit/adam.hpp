#ifndef SPLATEDIT_ADAM_HPP
#define SPLATEDIT_ADAM_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "splatedit/common.hpp"

namespace splatedit {

/// Bias-corrected Adam. Moment buffers grow lazily to the parameter count on
/// the first step and must keep that shape afterwards.
struct AdamState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(std::isfinite(lr) && lr > 0.0)) throw InputError("lr must be finite and positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw InputError("beta1 must be in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InputError("beta2 must be in [0, 1)");
        if (!(std::isfinite(eps) && eps > 0.0))
            throw InputError("eps must be finite and positive");
        if (m.size() != v.size()) throw InputError("moment buffers disagree in size");
    }
};

/// One Adam update of `params` in place. A non-finite gradient rejects the
/// whole step: state and params are left untouched.
inline void adam_step(AdamState& state, std::vector<double>& params,
                      const std::vector<double>& grads) {
    state.validate();
    if (params.size() != grads.size())
        throw InputError("parameter and gradient sizes do not match");
    if (!state.m.empty() && state.m.size() != params.size())
        throw InputError("moment buffers do not match the parameter size");
    for (const double g : grads)
        if (!std::isfinite(g)) throw NumericError("non-finite gradient, step rejected");

    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

} // namespace splatedit

#endif
