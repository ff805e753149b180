#pragma once

#include "kare/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace kare {

struct TensorCheck {
    std::string name;
    std::size_t entries = 0;
    double max_abs = 0.0;
    double max_rel = 0.0;
};

struct GradientCheckOptions {
    double step = 1e-5;
    // Entries where both gradients are below this magnitude are compared
    // absolutely; rounding noise there is ~1e-11.
    double floor = 1e-6;
    // 0 checks every entry; otherwise at most this many per tensor (strided).
    std::size_t max_entries = 0;
};

inline double batch_loss(const Model& model, const std::vector<EncodedExample>& batch) {
    double total = 0.0;
    for (const auto& ex : batch) total += model.loss(ex, ex.label);
    return total / static_cast<double>(batch.size());
}

/// Compares the analytic gradient of the mean batch loss with central
/// differences on every trainable tensor. Parameters are restored afterwards.
inline std::vector<TensorCheck> gradient_check(Model& model, const std::vector<EncodedExample>& batch,
                                               const GradientCheckOptions& opt = {}) {
    if (batch.empty()) throw Error("gradient check needs at least one example");
    ModelParams grads = model.zero_gradients();
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) model.accumulate_gradients(ex, ex.label, w, grads);

    std::vector<TensorCheck> out;
    ModelParams::for_each(
        [&](const std::string& name, auto& value, auto& grad) {
            if (value.size() == 0 || grad.size() == 0) return;
            TensorCheck tc;
            tc.name = name;
            const Eigen::Index total = value.size();
            const Eigen::Index stride =
                opt.max_entries == 0 ? 1
                                     : std::max<Eigen::Index>(1, total / static_cast<Eigen::Index>(opt.max_entries));
            for (Eigen::Index k = 0; k < total; k += stride) {
                double& x = value.data()[k];
                const double saved = x;
                x = saved + opt.step;
                const double up = batch_loss(model, batch);
                x = saved - opt.step;
                const double down = batch_loss(model, batch);
                x = saved;
                const double numeric = (up - down) / (2.0 * opt.step);
                const double analytic = grad.data()[k];
                const double diff = std::abs(numeric - analytic);
                const double scale = std::max({std::abs(numeric), std::abs(analytic), opt.floor});
                tc.max_abs = std::max(tc.max_abs, diff);
                tc.max_rel = std::max(tc.max_rel, diff / scale);
                ++tc.entries;
            }
            out.push_back(tc);
        },
        model.params(), grads);
    return out;
}

}  // namespace kare
