#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mtlhof/common.hpp"
#include "mtlhof/tensor.hpp"

namespace mtlhof {

// Finite-difference validation of the reverse pass. Runs on the double
// instantiation of the tensor core: analytic and numeric derivatives come
// from the same templated code that production floats execute.

namespace gradcheck_detail {

using DTensor = TensorT<double>;
using DTape = TapeT<double>;

struct Probe {
    std::vector<DTensor> inputs;
    OpAttrs attrs;
};

inline Probe make_probe(OpKind kind, std::uint64_t seed) {
    Rng rng(mix_seed(seed, "gradcheck-probe", static_cast<std::uint64_t>(kind)));
    Probe p;
    switch (kind) {
        case OpKind::matmul:
            p.inputs.push_back(DTensor::randn({3, 4}, rng, 1.0, true));
            p.inputs.push_back(DTensor::randn({4, 3}, rng, 1.0, true));
            break;
        case OpKind::add:
            p.inputs.push_back(DTensor::randn({3, 4}, rng, 1.0, true));
            p.inputs.push_back(DTensor::randn({3, 4}, rng, 1.0, true));
            break;
        case OpKind::scalar_mul:
            p.inputs.push_back(DTensor::randn({3, 4}, rng, 1.0, true));
            p.attrs.scalar = 1.0 + rng.uniform();
            break;
        case OpKind::embedding_lookup:
            p.inputs.push_back(DTensor::randn({7, 4}, rng, 1.0, true));
            p.attrs.indices = {0, 3, 6, 3, 1};
            p.attrs.shape = {5};
            break;
        case OpKind::layer_norm:
            p.inputs.push_back(DTensor::randn({4, 6}, rng, 1.0, true));
            p.inputs.push_back(DTensor::randn({6}, rng, 0.2, true));
            p.inputs.push_back(DTensor::randn({6}, rng, 0.2, true));
            {
                auto g = p.inputs[1].data();
                for (auto& v : g) v += 1.0;
            }
            break;
        case OpKind::softmax: {
            p.inputs.push_back(DTensor::randn({3, 5}, rng, 2.0, true));
            DTensor mask = DTensor::zeros({3, 5});
            auto m = mask.data();
            for (int r = 0; r < 3; ++r)
                m[static_cast<std::size_t>(r * 5) + rng.below(5)] = -1e9;
            p.inputs.push_back(mask);
            break;
        }
        case OpKind::gelu:
        case OpKind::tanh:
            p.inputs.push_back(DTensor::randn({3, 4}, rng, 1.0, true));
            break;
        case OpKind::dropout:
            p.inputs.push_back(DTensor::randn({3, 4}, rng, 1.0, true));
            p.attrs.rate = 0.35;
            p.attrs.seed = mix_seed(seed, "dropout-mask");
            break;
        case OpKind::reshape:
            p.inputs.push_back(DTensor::randn({3, 4}, rng, 1.0, true));
            p.attrs.shape = {2, 6};
            break;
        case OpKind::transpose:
            p.inputs.push_back(DTensor::randn({2, 3, 4}, rng, 1.0, true));
            p.attrs.perm = {2, 0, 1};
            break;
        case OpKind::mean:
            p.inputs.push_back(DTensor::randn({3, 5}, rng, 1.0, true));
            break;
        case OpKind::cross_entropy_with_logits:
            p.inputs.push_back(DTensor::randn({4, 5}, rng, 1.5, true));
            p.attrs.indices = {1, 4, 0, 2};
            break;
    }
    return p;
}

// Reduces an arbitrary op output to a scalar through a fixed random
// projection built from supported ops, so every output element influences
// the loss with a distinct weight.
inline DTensor project_to_scalar(DTape* tape, const DTensor& out, const DTensor& weights) {
    auto flat = reshape(tape, out, {1, out.size()});
    auto prod = matmul(tape, flat, weights);
    return mean_all(tape, prod);
}

}  // namespace gradcheck_detail

// Max over all probe elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// against central finite differences of the projected scalar loss.
inline double finite_diff_max_rel_err(
    const std::function<TensorT<double>(TapeT<double>*, const std::vector<TensorT<double>>&)>& forward,
    const std::vector<TensorT<double>>& inputs, std::uint64_t seed, double h = 1e-4) {
    using gradcheck_detail::DTape;
    using gradcheck_detail::DTensor;
    using gradcheck_detail::project_to_scalar;

    DTape probe_tape;
    DTensor out0 = forward(&probe_tape, inputs);
    Rng wrng(mix_seed(seed, "gradcheck-proj"));
    DTensor weights = DTensor::randn({out0.size(), 1}, wrng, 1.0, false);

    DTape tape;
    DTensor loss = project_to_scalar(&tape, forward(&tape, inputs), weights);
    GradMapT<double> grads = backward(loss, tape);

    auto eval = [&](const std::vector<DTensor>& ins) {
        DTensor o = forward(nullptr, ins);
        return project_to_scalar(static_cast<DTape*>(nullptr), o, weights).item();
    };

    double max_err = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].grad_enabled()) continue;
        auto git = grads.find(inputs[i].id());
        if (git == grads.end())
            throw ContractError("gradcheck: no gradient for grad-enabled input");
        auto analytic = git->second.data();
        for (int e = 0; e < inputs[i].size(); ++e) {
            std::vector<DTensor> perturbed(inputs.begin(), inputs.end());
            DTensor plus = inputs[i].clone();
            plus.data()[static_cast<std::size_t>(e)] += h;
            perturbed[i] = plus;
            double f_plus = eval(perturbed);
            DTensor minus = inputs[i].clone();
            minus.data()[static_cast<std::size_t>(e)] -= h;
            perturbed[i] = minus;
            double f_minus = eval(perturbed);
            double numeric = (f_plus - f_minus) / (2.0 * h);
            double a = analytic[static_cast<std::size_t>(e)];
            double err = std::abs(a - numeric) /
                         std::max(1e-8, std::abs(a) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

inline double grad_check(OpKind kind, std::uint64_t seed) {
    auto probe = gradcheck_detail::make_probe(kind, seed);
    OpAttrs attrs = probe.attrs;
    auto forward = [kind, attrs](TapeT<double>* tape,
                                 const std::vector<TensorT<double>>& ins) {
        return apply(tape, kind, ins, attrs);
    };
    return finite_diff_max_rel_err(forward, probe.inputs, seed);
}

}  // namespace mtlhof
