#pragma once

#include "kare/config.hpp"
#include "kare/model.hpp"

#include <cmath>
#include <string>

namespace kare {

/// Adam with bias correction. Tensors under "ctx." use the context learning
/// rate; frozen tensors (empty gradient) are skipped.
class Adam {
public:
    Adam(const Model& model, const TrainConfig& cfg) : cfg_(cfg), m_(model.zero_gradients()), v_(m_) {}

    std::size_t steps() const noexcept { return t_; }

    void step(Model& model, const ModelParams& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        ModelParams::for_each(
            [&](const std::string& name, auto& value, const auto& g, auto& m, auto& v) {
                if (g.size() == 0 || value.size() == 0) return;
                const double lr = name.rfind("ctx.", 0) == 0 ? cfg_.context_lr : cfg_.lr;
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
                value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
            },
            model.params(), grads, m_, v_);
    }

private:
    TrainConfig cfg_;
    ModelParams m_;
    ModelParams v_;
    std::size_t t_ = 0;
};

}  // namespace kare
