#pragma once

// Generators shared by the unit and acceptance suites: worlds whose ground
// truth follows the allocation model exactly, so fits can be checked against
// the generating parameters and argmax oracles.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "ragscale/allocation.hpp"

namespace ragscale::testing {

struct ModelWorld {
    std::array<double, 3> a{0.3, 0.1, 0.2};
    std::array<double, 3> b{-0.05, -0.01, 0.0};
    double c = -0.7;
    double epsilon = 0.01;
    SigmoidParams sigmoid;

    double linear_term(const Informativeness& info, const InferenceConfig& theta) const {
        const double logs[3] = {std::log(theta.k + epsilon), std::log(theta.m + epsilon),
                                std::log(theta.n + epsilon)};
        const double i[3] = {info.doc, info.shot, 0.0};
        double lin = c;
        for (int j = 0; j < 3; ++j) lin += (a[j] + b[j] * i[j]) * logs[j];
        return lin;
    }

    /// Ground-truth performance in sigmoid space.
    double truth(const Informativeness& info, const InferenceConfig& theta) const {
        return sigma(linear_term(info, theta), sigmoid);
    }
};

inline std::vector<InferenceConfig> sweep_grid(int max_n = 5) {
    static const int kDocs[] = {0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
    static const int kShots[] = {0, 1, 2, 4, 8, 16, 32, 64, 128, 256};
    std::vector<InferenceConfig> grid;
    for (int n = 1; n <= max_n; ++n) {
        for (int k : kDocs) {
            for (int m : kShots) grid.push_back({k, m, n});
        }
    }
    return grid;
}

struct Domain {
    std::string name;
    Informativeness info;
};

inline std::vector<Domain> default_domains() {
    return {
        {"alpha", {0.9, 0.25}},
        {"beta", {0.4, 0.10}},
        {"gamma", {1.3, -0.05}},
        {"delta", {0.2, 0.45}},
    };
}

/// Points whose z lives directly in the sigmoid range (fit with the identity
/// range map). Gaussian noise, when requested, is added in the link space.
inline std::vector<FitPoint> make_model_points(const ModelWorld& world,
                                             const std::vector<Domain>& domains,
                                             const std::vector<InferenceConfig>& grid,
                                             double noise_sigma, std::uint64_t seed,
                                             const LengthEstimator& lengths = nullptr) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    std::vector<FitPoint> points;
    for (const auto& domain : domains) {
        for (const auto& theta : grid) {
            FitPoint point;
            point.dataset = domain.name;
            point.strategy = theta.n == 1 ? "drag" : "iterdrag";
            point.theta = theta;
            point.info = domain.info;
            double lin = world.linear_term(domain.info, theta);
            if (noise_sigma > 0.0) lin += noise(rng);
            point.z = sigma(lin, world.sigmoid);
            point.max_eff_len = lengths ? lengths(theta) : 0.0;
            points.push_back(std::move(point));
        }
    }
    return points;
}

/// Exhaustive feasible argmax of the generating model; the oracle that
/// predict_optimal must agree with.
inline InferenceConfig brute_force_optimal(const ModelWorld& world, const Informativeness& info,
                                           const std::vector<InferenceConfig>& grid, double l_max,
                                           const LengthEstimator& lengths) {
    const InferenceConfig* best = nullptr;
    double best_value = 0.0;
    double best_len = 0.0;
    for (const auto& theta : grid) {
        const double len = lengths(theta);
        if (len > l_max) continue;
        const double value = world.truth(info, theta);
        if (best == nullptr || value > best_value ||
            (value == best_value && (len < best_len || (len == best_len && theta < *best)))) {
            best = &theta;
            best_value = value;
            best_len = len;
        }
    }
    if (best == nullptr) {
        throw std::runtime_error("brute_force_optimal: no feasible configuration");
    }
    return *best;
}

}  // namespace ragscale::testing
