#include "carm/qnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <random>

namespace carm {

namespace {

constexpr int kW1 = 0;
constexpr int kB1 = kW1 + QNet::kHidden * QNet::kInputs;
constexpr int kW2 = kB1 + QNet::kHidden;
constexpr int kB2 = kW2 + QNet::kHidden * QNet::kHidden;
constexpr int kW3 = kB2 + QNet::kHidden;
constexpr int kB3 = kW3 + QNet::kOutputs * QNet::kHidden;

struct ForwardCache {
    std::array<double, QNet::kHidden> pre1{};
    std::array<double, QNet::kHidden> act1{};
    std::array<double, QNet::kHidden> pre2{};
    std::array<double, QNet::kHidden> act2{};
    std::array<double, QNet::kOutputs> out{};
};

ForwardCache run_forward(const std::vector<double>& p, const std::array<double, QNet::kInputs>& x) {
    ForwardCache c;
    for (int i = 0; i < QNet::kHidden; ++i) {
        double acc = p[kB1 + i];
        const double* row = &p[kW1 + i * QNet::kInputs];
        for (int j = 0; j < QNet::kInputs; ++j) acc += row[j] * x[j];
        c.pre1[i] = acc;
        c.act1[i] = acc > 0.0 ? acc : 0.0;
    }
    for (int i = 0; i < QNet::kHidden; ++i) {
        double acc = p[kB2 + i];
        const double* row = &p[kW2 + i * QNet::kHidden];
        for (int j = 0; j < QNet::kHidden; ++j) acc += row[j] * c.act1[j];
        c.pre2[i] = acc;
        c.act2[i] = acc > 0.0 ? acc : 0.0;
    }
    for (int i = 0; i < QNet::kOutputs; ++i) {
        double acc = p[kB3 + i];
        const double* row = &p[kW3 + i * QNet::kHidden];
        for (int j = 0; j < QNet::kHidden; ++j) acc += row[j] * c.act2[j];
        c.out[i] = acc;
    }
    return c;
}

} // namespace

QNet::QNet() : params_(kParamCount, 0.0) {}

QNet QNet::random_init(std::uint64_t seed) {
    QNet net;
    std::mt19937_64 rng(seed);
    auto uniform = [&rng]() { return double(rng() >> 11) * 0x1.0p-53; };
    auto fill_layer = [&](int offset, int rows, int cols) {
        double bound = std::sqrt(6.0 / double(rows + cols));
        for (int i = 0; i < rows * cols; ++i) {
            net.params_[offset + i] = (2.0 * uniform() - 1.0) * bound;
        }
    };
    fill_layer(kW1, kHidden, kInputs);
    fill_layer(kW2, kHidden, kHidden);
    fill_layer(kW3, kOutputs, kHidden);
    // Biases stay zero.
    return net;
}

std::array<double, QNet::kOutputs> QNet::forward(const std::array<double, kInputs>& x) const {
    return run_forward(params_, x).out;
}

double QNet::loss(const std::array<double, kInputs>& x, const std::array<double, kOutputs>& target,
                  const std::array<bool, kOutputs>& mask) const {
    auto out = forward(x);
    double acc = 0.0;
    for (int i = 0; i < kOutputs; ++i) {
        if (!mask[i]) continue;
        double diff = out[i] - target[i];
        acc += diff * diff;
    }
    return acc;
}

std::vector<double> QNet::gradient(const std::array<double, kInputs>& x,
                                   const std::array<double, kOutputs>& target,
                                   const std::array<bool, kOutputs>& mask) const {
    ForwardCache c = run_forward(params_, x);
    std::vector<double> grad(kParamCount, 0.0);

    std::array<double, kOutputs> d_out{};
    for (int i = 0; i < kOutputs; ++i) {
        d_out[i] = mask[i] ? 2.0 * (c.out[i] - target[i]) : 0.0;
    }

    std::array<double, kHidden> d_act2{};
    for (int i = 0; i < kOutputs; ++i) {
        if (d_out[i] == 0.0) continue;
        grad[kB3 + i] += d_out[i];
        double* w_grad = &grad[kW3 + i * kHidden];
        const double* w = &params_[kW3 + i * kHidden];
        for (int j = 0; j < kHidden; ++j) {
            w_grad[j] += d_out[i] * c.act2[j];
            d_act2[j] += d_out[i] * w[j];
        }
    }

    std::array<double, kHidden> d_act1{};
    for (int i = 0; i < kHidden; ++i) {
        double d_pre = c.pre2[i] > 0.0 ? d_act2[i] : 0.0;
        if (d_pre == 0.0) continue;
        grad[kB2 + i] += d_pre;
        double* w_grad = &grad[kW2 + i * kHidden];
        const double* w = &params_[kW2 + i * kHidden];
        for (int j = 0; j < kHidden; ++j) {
            w_grad[j] += d_pre * c.act1[j];
            d_act1[j] += d_pre * w[j];
        }
    }

    for (int i = 0; i < kHidden; ++i) {
        double d_pre = c.pre1[i] > 0.0 ? d_act1[i] : 0.0;
        if (d_pre == 0.0) continue;
        grad[kB1 + i] += d_pre;
        double* w_grad = &grad[kW1 + i * kInputs];
        for (int j = 0; j < kInputs; ++j) w_grad[j] += d_pre * x[j];
    }

    return grad;
}

void QNet::sgd_step(const std::array<double, kInputs>& x, const std::array<double, kOutputs>& target,
                    const std::array<bool, kOutputs>& mask, double learning_rate) {
    std::vector<double> grad = gradient(x, target, mask);
    for (int i = 0; i < kParamCount; ++i) params_[i] -= learning_rate * grad[i];
}

std::uint64_t QNet::weight_hash() const {
    std::uint64_t hash = 14695981039346656037ull;
    for (double v : params_) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int byte = 0; byte < 8; ++byte) {
            hash ^= (bits >> (8 * byte)) & 0xffull;
            hash *= 1099511628211ull;
        }
    }
    return hash;
}

} // namespace carm
