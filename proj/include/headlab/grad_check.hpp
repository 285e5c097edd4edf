#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "headlab/autodiff.hpp"
#include "headlab/errors.hpp"

namespace headlab {

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

// Central finite differences (step 1e-5) against the analytic gradients of
// every requires_grad leaf. Relative tolerance `tol`; absolute 1e-8 when the
// reference magnitude is below 1e-6.
inline bool grad_check(Graph& g, TensorId out, double tol = 1e-5,
                       GradCheckReport* report = nullptr) {
    if (g.value(out).numel() != 1) {
        throw ContractError("grad_check: graph output must be scalar, got " +
                            shape_str(g.value(out).shape));
    }
    constexpr double kStep = 1e-5;

    g.backward(out);
    std::vector<std::pair<TensorId, std::vector<double>>> analytic;
    for (TensorId id = 0; id < g.size(); ++id) {
        Node& n = g.node(id);
        if (!n.recompute && n.out.requires_grad) {
            analytic.emplace_back(id, n.out.grad);
        }
    }

    GradCheckReport local;
    GradCheckReport& rep = report ? *report : local;
    rep = GradCheckReport{};
    for (auto& [id, grads] : analytic) {
        Tensor& t = g.value(id);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.values[i];
            t.values[i] = orig + kStep;
            g.forward_all();
            const double fp = g.value(out).values[0];
            t.values[i] = orig - kStep;
            g.forward_all();
            const double fm = g.value(out).values[0];
            t.values[i] = orig;
            const double fd = (fp - fm) / (2.0 * kStep);
            const double an = grads[i];
            const double mag = std::max(std::abs(fd), std::abs(an));
            const double diff = std::abs(fd - an);
            bool ok;
            double rel;
            if (mag < 1e-6) {
                ok = diff < 1e-8;
                rel = diff;
            } else {
                rel = diff / mag;
                ok = rel < tol;
            }
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = g.node(id).op + " leaf " + std::to_string(id) + "[" +
                            std::to_string(i) + "] fd=" + std::to_string(fd) +
                            " analytic=" + std::to_string(an);
            }
            if (!ok) rep.pass = false;
        }
    }
    g.forward_all();
    return rep.pass;
}

}  // namespace headlab
