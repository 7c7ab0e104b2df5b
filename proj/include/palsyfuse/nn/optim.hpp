#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palsyfuse/nn/layer.hpp"

namespace palsyfuse::nn {

enum class OptimizerKind { SGD, AdamW };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SGD;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

class Optimizer {
public:
    Optimizer(OptimizerConfig config, std::vector<Param*> params);

    // Applies one update from the gradients currently stored in the params.
    void step();
    std::uint64_t steps() const { return steps_; }
    const OptimizerConfig& config() const { return config_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

private:
    OptimizerConfig config_;
    std::vector<Param*> params_;
    std::vector<Tensor> m_, v_;
    std::uint64_t steps_ = 0;
};

}  // namespace palsyfuse::nn
