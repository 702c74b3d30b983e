#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace carm {

// Small feedforward action-value network: 12 inputs, two hidden layers of
// 32 rectified-linear units, 4 linear outputs. Double precision throughout;
// parameters live in one flat vector so gradient checking, hashing and
// serialization stay trivial.
class QNet {
public:
    static constexpr int kInputs = 12;
    static constexpr int kHidden = 32;
    static constexpr int kOutputs = 4;
    static constexpr int kParamCount =
        kHidden * kInputs + kHidden + kHidden * kHidden + kHidden + kOutputs * kHidden + kOutputs;

    QNet(); // all-zero parameters

    // Deterministic scaled-uniform initialization.
    static QNet random_init(std::uint64_t seed);

    std::array<double, kOutputs> forward(const std::array<double, kInputs>& x) const;

    // Gradient of sum_i mask[i] * (q(x)[i] - target[i])^2 w.r.t. all
    // parameters, in flat layout.
    std::vector<double> gradient(const std::array<double, kInputs>& x,
                                 const std::array<double, kOutputs>& target,
                                 const std::array<bool, kOutputs>& mask) const;

    // One SGD step on the masked squared loss above.
    void sgd_step(const std::array<double, kInputs>& x, const std::array<double, kOutputs>& target,
                  const std::array<bool, kOutputs>& mask, double learning_rate);

    // Masked squared loss itself (used by the finite-difference check).
    double loss(const std::array<double, kInputs>& x, const std::array<double, kOutputs>& target,
                const std::array<bool, kOutputs>& mask) const;

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    std::uint64_t weight_hash() const; // FNV-1a over the raw parameter bytes

    bool operator==(const QNet& other) const { return params_ == other.params_; }

private:
    // Layout: [W1 (32x12) | b1 (32) | W2 (32x32) | b2 (32) | W3 (4x32) | b3 (4)].
    std::vector<double> params_;
};

} // namespace carm
