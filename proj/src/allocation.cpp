#include "ragscale/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

constexpr double kMinStddev = 1e-12;

double ln_shifted(double value, double epsilon) {
    return std::log(value + epsilon);
}

std::array<double, 3> info_vector(const Informativeness& info) {
    return {info.doc, info.shot, 0.0};
}

// Regularized incomplete beta via Lentz's continued fraction; used only for
// the informational p-values.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 200;
    constexpr double kEps = 3e-14;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return bt * betacf(a, b, x) / a;
    }
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double df) {
    if (df <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

std::size_t design_columns(FitVariant variant) {
    switch (variant) {
        case FitVariant::kExcludeB: return 4;
        case FitVariant::kQuadraticTheta: return 9;
        case FitVariant::kSigmoidal:
        case FitVariant::kLinearSigma: return 6;
    }
    return 6;
}

void fill_design_row(Eigen::MatrixXd& design, Eigen::Index row, const FitPoint& point,
                     FitVariant variant, double epsilon) {
    const double lk = ln_shifted(point.theta.k, epsilon);
    const double lm = ln_shifted(point.theta.m, epsilon);
    const double ln = ln_shifted(point.theta.n, epsilon);
    Eigen::Index col = 0;
    design(row, col++) = lk;
    design(row, col++) = lm;
    design(row, col++) = ln;
    if (variant == FitVariant::kQuadraticTheta) {
        design(row, col++) = lk * lk;
        design(row, col++) = lm * lm;
        design(row, col++) = ln * ln;
    }
    if (variant != FitVariant::kExcludeB) {
        design(row, col++) = point.info.doc * lk;
        design(row, col++) = point.info.shot * lm;
    }
    design(row, col++) = 1.0;
}

AllocationParams params_from_weights(const Eigen::VectorXd& weights, FitVariant variant,
                                     const RangeMap& range_map) {
    AllocationParams params;
    params.range_map = range_map;
    params.link =
        variant == FitVariant::kLinearSigma ? LinkKind::kLinear : LinkKind::kSigmoidal;
    Eigen::Index col = 0;
    params.a = {weights(col), weights(col + 1), weights(col + 2)};
    col += 3;
    if (variant == FitVariant::kQuadraticTheta) {
        params.quad = {weights(col), weights(col + 1), weights(col + 2)};
        col += 3;
    }
    if (variant != FitVariant::kExcludeB) {
        params.b = {weights(col), weights(col + 1), 0.0};
        col += 2;
    }
    params.c = weights(col);
    return params;
}

struct SeriesKey {
    std::string dataset;
    std::string strategy;
    int k = 0;
    int n = 0;

    friend auto operator<=>(const SeriesKey&, const SeriesKey&) = default;
};

double sigmoid_core(double x, const SigmoidParams& p) {
    return p.amplitude / (1.0 + std::exp(-p.steepness * (x + p.shift))) + p.base;
}

}  // namespace

double sigma(double x, const SigmoidParams& params) {
    return sigmoid_core(x, params);
}

double sigma_inv(double y, const SigmoidParams& params) {
    const double lo = params.base;
    const double hi = params.base + params.amplitude;
    if (!(y > lo && y < hi)) {
        throw OutOfRange("sigma_inv argument " + std::to_string(y) + " outside (" +
                         std::to_string(lo) + ", " + std::to_string(hi) + ")");
    }
    return -params.shift - std::log(params.amplitude / (y - params.base) - 1.0) / params.steepness;
}

double predict(const AllocationParams& params, const Informativeness& info,
               const InferenceConfig& theta) {
    const auto i = info_vector(info);
    const double logs[3] = {ln_shifted(theta.k, params.epsilon),
                            ln_shifted(theta.m, params.epsilon),
                            ln_shifted(theta.n, params.epsilon)};
    double lin = params.c;
    for (int j = 0; j < 3; ++j) {
        lin += (params.a[j] + params.b[j] * i[j]) * logs[j];
        lin += params.quad[j] * logs[j] * logs[j];
    }
    return params.link == LinkKind::kSigmoidal ? sigma(lin, params.sigmoid) : lin;
}

double predict_z(const AllocationParams& params, const Informativeness& info,
                 const InferenceConfig& theta) {
    const double value = predict(params, info, theta);
    if (params.link == LinkKind::kLinear) return value;
    return (value - params.range_map.offset) / params.range_map.scale;
}

std::string to_string(FitVariant variant) {
    switch (variant) {
        case FitVariant::kSigmoidal: return "sigmoidal";
        case FitVariant::kExcludeB: return "exclude_b";
        case FitVariant::kQuadraticTheta: return "quadratic_theta";
        case FitVariant::kLinearSigma: return "linear_sigma";
    }
    return "unknown";
}

FitVariant parse_variant(const std::string& name) {
    if (name == "sigmoidal") return FitVariant::kSigmoidal;
    if (name == "exclude_b") return FitVariant::kExcludeB;
    if (name == "quadratic_theta") return FitVariant::kQuadraticTheta;
    if (name == "linear_sigma") return FitVariant::kLinearSigma;
    throw InvalidConfig("unknown fit variant: " + name);
}

FitReport fit(std::span<const FitPoint> points, FitVariant variant, const FitOptions& options) {
    const std::size_t cols = design_columns(variant);
    const std::size_t min_points = std::max<std::size_t>(7, cols + 1);
    if (points.size() < min_points) {
        throw InsufficientPoints("need at least " + std::to_string(min_points) +
                                 " points, have " + std::to_string(points.size()));
    }

    const SigmoidParams sigmoid;
    RangeMap range_map;
    const bool sigmoidal_link = variant != FitVariant::kLinearSigma;
    if (sigmoidal_link) {
        if (options.range_map == RangeMapMode::kAuto) {
            double z_min = points.front().z;
            double z_max = points.front().z;
            for (const auto& point : points) {
                z_min = std::min(z_min, point.z);
                z_max = std::max(z_max, point.z);
            }
            if (z_max - z_min < kMinStddev) {
                throw DegenerateGroup("fit points have zero spread");
            }
            // Observed [min, max] -> central 98% of the sigmoid's open range.
            range_map.scale = 0.98 * sigmoid.amplitude / (z_max - z_min);
            range_map.offset = sigmoid.base + 0.01 * sigmoid.amplitude - range_map.scale * z_min;
        }
    }

    const double epsilon = 0.01;
    Eigen::MatrixXd design(points.size(), cols);
    Eigen::VectorXd target(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        fill_design_row(design, static_cast<Eigen::Index>(i), points[i], variant, epsilon);
        if (sigmoidal_link) {
            target(static_cast<Eigen::Index>(i)) =
                sigma_inv(range_map.scale * points[i].z + range_map.offset, sigmoid);
        } else {
            target(static_cast<Eigen::Index>(i)) = points[i].z;
        }
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < static_cast<Eigen::Index>(cols)) {
        throw RankDeficientDesign("design matrix rank " + std::to_string(qr.rank()) + " < " +
                                  std::to_string(cols) +
                                  " (constant informativeness across points?)");
    }
    Eigen::VectorXd weights = qr.solve(target);

    FitReport report;
    report.variant = variant;
    report.n_points = points.size();
    report.params = params_from_weights(weights, variant, range_map);
    report.params.epsilon = epsilon;
    report.params.sigmoid = sigmoid;

    const Eigen::VectorXd residuals = target - design * weights;
    const double sse = residuals.squaredNorm();
    const double mean_t = target.mean();
    const double sst = (target.array() - mean_t).square().sum();
    report.mse = sse / static_cast<double>(points.size());
    report.r_squared = sst > 0.0 ? 1.0 - sse / sst : (sse < 1e-30 ? 1.0 : 0.0);

    const double df = static_cast<double>(points.size()) - static_cast<double>(cols);
    if (df > 0) {
        const Eigen::MatrixXd xtx_inv =
            (design.transpose() * design).ldlt().solve(Eigen::MatrixXd::Identity(cols, cols));
        const double variance = sse / df;
        report.p_values.resize(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            const double se = std::sqrt(std::max(0.0, variance * xtx_inv(j, j)));
            report.p_values[j] =
                se > 0 ? student_t_two_sided(weights(static_cast<Eigen::Index>(j)) / se, df) : 0.0;
        }
    }
    return report;
}

std::string NormalizationStats::group_key(const std::string& dataset, const std::string& metric) {
    return dataset + "|" + metric;
}

std::pair<std::vector<NormalizedRow>, NormalizationStats> normalize_scores(
    std::span<const SummaryRow> rows) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& row : rows) {
        values[NormalizationStats::group_key(row.dataset, row.metric)].push_back(row.value);
    }
    NormalizationStats stats;
    for (const auto& [key, group] : values) {
        GroupStats g;
        for (double v : group) g.mean += v;
        g.mean /= static_cast<double>(group.size());
        double var = 0.0;
        for (double v : group) var += (v - g.mean) * (v - g.mean);
        var /= static_cast<double>(group.size());
        g.stddev = std::sqrt(var);
        if (g.stddev < kMinStddev) {
            throw DegenerateGroup("zero variance in group " + key);
        }
        stats.groups.emplace(key, g);
    }
    std::vector<NormalizedRow> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        const auto& g = stats.groups.at(NormalizationStats::group_key(row.dataset, row.metric));
        out.push_back({row, (row.value - g.mean) / g.stddev});
    }
    return {std::move(out), std::move(stats)};
}

Informativeness informativeness(std::span<const NormalizedRow> rows, const std::string& strategy,
                                const std::string& dataset, const std::string& metric) {
    const InferenceConfig base{0, 0, 1};
    const InferenceConfig one_doc{1, 0, 1};
    const InferenceConfig one_shot{0, 1, 1};
    std::optional<double> z_base, z_doc, z_shot;
    for (const auto& row : rows) {
        if (row.row.strategy != strategy || row.row.dataset != dataset ||
            row.row.metric != metric) {
            continue;
        }
        if (row.row.config == base) z_base = row.z;
        if (row.row.config == one_doc) z_doc = row.z;
        if (row.row.config == one_shot) z_shot = row.z;
    }
    if (!z_base || !z_doc || !z_shot) {
        throw MissingBaseConfig("informativeness for " + strategy + "/" + dataset +
                                " needs configs (0,0,1), (1,0,1), (0,1,1)");
    }
    return {*z_doc - *z_base, *z_shot - *z_base};
}

std::vector<FitPoint> assemble_fit_points(std::span<const NormalizedRow> rows,
                                          const std::string& metric) {
    std::map<std::pair<std::string, std::string>, Informativeness> info_cache;
    std::vector<FitPoint> points;
    for (const auto& row : rows) {
        if (row.row.metric != metric) continue;
        auto key = std::make_pair(row.row.dataset, row.row.strategy);
        auto it = info_cache.find(key);
        if (it == info_cache.end()) {
            it = info_cache
                     .emplace(key, informativeness(rows, row.row.strategy, row.row.dataset, metric))
                     .first;
        }
        points.push_back({row.row.dataset, row.row.strategy, row.row.config, it->second, row.z,
                          static_cast<double>(row.row.max_eff_len)});
    }
    return points;
}

std::vector<FitPoint> trim_outliers(std::span<const FitPoint> points, OutlierMode mode,
                                    double threshold_sigmas) {
    if (mode == OutlierMode::kOff) {
        return {points.begin(), points.end()};
    }
    std::map<SeriesKey, std::vector<std::size_t>> series;
    for (std::size_t i = 0; i < points.size(); ++i) {
        series[{points[i].dataset, points[i].strategy, points[i].theta.k, points[i].theta.n}]
            .push_back(i);
    }
    std::vector<bool> drop(points.size(), false);
    for (auto& [key, idx] : series) {
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return points[a].theta.m < points[b].theta.m; });
        if (idx.size() < 3) continue;
        double mean = 0.0;
        for (auto i : idx) mean += points[i].z;
        mean /= static_cast<double>(idx.size());
        double var = 0.0;
        for (auto i : idx) var += (points[i].z - mean) * (points[i].z - mean);
        var /= static_cast<double>(idx.size() - 1);  // sample convention
        const double threshold = threshold_sigmas * std::sqrt(var);
        for (std::size_t j = 1; j + 1 < idx.size(); ++j) {
            const double prev = points[idx[j - 1]].z;
            const double curr = points[idx[j]].z;
            const double next = points[idx[j + 1]].z;
            const bool peak = curr > prev && curr > next;
            const bool valley = curr < prev && curr < next;
            if ((peak || valley) && std::fabs(curr - mean) > threshold) {
                drop[idx[j]] = true;
            }
        }
    }
    std::vector<FitPoint> kept;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!drop[i]) kept.push_back(points[i]);
    }
    return kept;
}

LengthEstimator analytic_length_estimator(double avg_doc_tokens, double avg_query_tokens,
                                          double overhead_tokens) {
    return [=](const InferenceConfig& theta) {
        const double per_block =
            theta.k * avg_doc_tokens + avg_query_tokens + overhead_tokens;
        return (theta.m + 1.0) * per_block * theta.n;
    };
}

LengthEstimator measured_length_estimator(std::vector<QAInstance> instances, Strategy strategy,
                                          const Index* index, std::vector<Demonstration> demos,
                                          Backend& backend, EpisodeOptions options,
                                          std::uint64_t seed, std::size_t subsample,
                                          double safety_factor) {
    if (instances.empty()) {
        throw InvalidConfig("measured calibration needs at least one instance");
    }
    if (subsample > 0 && subsample < instances.size()) {
        std::mt19937_64 rng(seed);
        std::shuffle(instances.begin(), instances.end(), rng);
        instances.resize(subsample);
    }
    return [instances = std::move(instances), strategy, index, demos = std::move(demos), &backend,
            options, safety_factor](const InferenceConfig& theta) {
        long max_len = 0;
        for (const auto& instance : instances) {
            const auto trace =
                run_episode(strategy, theta, instance.question, index, demos, backend, options);
            max_len = std::max(max_len, trace.effective_length);
        }
        return static_cast<double>(max_len) * safety_factor;
    };
}

InferenceConfig predict_optimal(const AllocationParams& params, const Informativeness& info,
                                std::span<const InferenceConfig> candidates, double l_max,
                                const LengthEstimator& length_estimator) {
    const InferenceConfig* best = nullptr;
    double best_value = 0.0;
    double best_length = 0.0;
    for (const auto& theta : candidates) {
        const double estimated = length_estimator(theta);
        if (estimated > l_max) continue;
        const double value = predict(params, info, theta);
        if (best == nullptr || value > best_value ||
            (value == best_value &&
             (estimated < best_length || (estimated == best_length && theta < *best)))) {
            best = &theta;
            best_value = value;
            best_length = estimated;
        }
    }
    if (best == nullptr) {
        throw NoFeasibleConfig();
    }
    return *best;
}

LeaveOneOutResult generalize_leave_one_out(std::span<const FitPoint> points,
                                           const std::string& target_dataset, FitVariant variant,
                                           const FitOptions& options) {
    std::vector<FitPoint> train;
    std::vector<FitPoint> target;
    for (const auto& point : points) {
        (point.dataset == target_dataset ? target : train).push_back(point);
    }
    if (target.empty()) {
        throw InvalidConfig("target domain has no points: " + target_dataset);
    }
    LeaveOneOutResult result;
    result.report = fit(train, variant, options);
    result.target_predictions.reserve(target.size());
    for (const auto& point : target) {
        result.target_predictions.emplace_back(
            point, predict_z(result.report.params, point.info, point.theta));
    }
    return result;
}

ExtrapolationResult extrapolate_lengths(std::span<const FitPoint> points, double l_train,
                                        double l_eval, const Informativeness& info,
                                        std::span<const InferenceConfig> candidates,
                                        const LengthEstimator& length_estimator,
                                        FitVariant variant, const FitOptions& options) {
    if (!(l_eval > l_train)) {
        throw InvalidConfig("extrapolation requires l_eval > l_train");
    }
    std::vector<FitPoint> train;
    for (const auto& point : points) {
        if (point.max_eff_len <= l_train) train.push_back(point);
    }
    if (train.size() < 7) {
        throw InsufficientPoints("length cutoff leaves " + std::to_string(train.size()) +
                                 " points");
    }
    ExtrapolationResult result;
    result.report = fit(train, variant, options);
    result.theta_star =
        predict_optimal(result.report.params, info, candidates, l_eval, length_estimator);
    return result;
}

SigmoidFit fit_sigmoid(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw InvalidConfig("fit_sigmoid requires equally sized inputs");
    }
    if (x.size() < 8) {
        throw InsufficientPoints("fit_sigmoid needs at least 8 points");
    }
    const SigmoidParams defaults;
    SigmoidParams p = defaults;
    const auto sse_of = [&](const SigmoidParams& q) {
        double sse = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = sigmoid_core(x[i], q) - y[i];
            sse += r * r;
        }
        return sse;
    };

    double lambda = 1e-3;
    double sse = sse_of(p);
    bool converged = false;
    for (int iter = 0; iter < 500; ++iter) {
        Eigen::MatrixXd jac(x.size(), 4);
        Eigen::VectorXd residual(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double u = std::exp(-p.steepness * (x[i] + p.shift));
            const double g = 1.0 / (1.0 + u);
            jac(i, 0) = g;                                              // d/dA
            jac(i, 1) = p.amplitude * g * g * u * (x[i] + p.shift);     // d/ds
            jac(i, 2) = p.amplitude * g * g * u * p.steepness;          // d/dx0
            jac(i, 3) = 1.0;                                            // d/dB
            residual(i) = sigmoid_core(x[i], p) - y[i];
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtr = jac.transpose() * residual;
        bool stepped = false;
        for (int attempt = 0; attempt < 30; ++attempt) {
            Eigen::MatrixXd damped = jtj;
            damped.diagonal().array() += lambda;
            const Eigen::VectorXd delta = damped.ldlt().solve(-jtr);
            if (!delta.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            SigmoidParams trial{p.amplitude + delta(0), p.steepness + delta(1),
                                p.shift + delta(2), p.base + delta(3)};
            const double trial_sse = sse_of(trial);
            if (std::isfinite(trial_sse) && trial_sse <= sse) {
                const double improvement = sse - trial_sse;
                p = trial;
                const bool tiny_step = delta.norm() < 1e-12 * (1.0 + std::fabs(p.amplitude));
                sse = trial_sse;
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                if (tiny_step || improvement < 1e-14 * (1.0 + sse)) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) {
            // No descent direction left; either converged or stuck.
            converged = lambda < 1e10;
            break;
        }
        if (converged) break;
        if (std::fabs(p.amplitude) > 1e8 || std::fabs(p.base) > 1e8 ||
            std::fabs(p.steepness) > 1e8) {
            converged = false;
            break;
        }
    }
    if (converged && (p.amplitude <= 0.0 || p.steepness <= 0.0)) {
        converged = false;
    }
    if (!converged) {
        return {defaults, false};
    }
    return {p, true};
}

nlohmann::json fit_report_to_json(const FitReport& report) {
    const auto& p = report.params;
    return {
        {"a", p.a},
        {"b", p.b},
        {"c", p.c},
        {"quad", p.quad},
        {"epsilon", p.epsilon},
        {"sigmoid",
         {{"amplitude", p.sigmoid.amplitude},
          {"steepness", p.sigmoid.steepness},
          {"shift", p.sigmoid.shift},
          {"base", p.sigmoid.base}}},
        {"range_map", {{"scale", p.range_map.scale}, {"offset", p.range_map.offset}}},
        {"link", p.link == LinkKind::kSigmoidal ? "sigmoidal" : "linear"},
        {"r2", report.r_squared},
        {"mse", report.mse},
        {"variant", to_string(report.variant)},
        {"n_points", report.n_points},
        {"p_values", report.p_values},
    };
}

FitReport fit_report_from_json(const nlohmann::json& obj) {
    FitReport report;
    auto& p = report.params;
    p.a = obj.at("a").get<std::array<double, 3>>();
    p.b = obj.at("b").get<std::array<double, 3>>();
    p.c = obj.at("c").get<double>();
    p.quad = obj.value("quad", std::array<double, 3>{0.0, 0.0, 0.0});
    p.epsilon = obj.at("epsilon").get<double>();
    const auto& s = obj.at("sigmoid");
    p.sigmoid = {s.at("amplitude").get<double>(), s.at("steepness").get<double>(),
                 s.at("shift").get<double>(), s.at("base").get<double>()};
    const auto& rm = obj.at("range_map");
    p.range_map = {rm.at("scale").get<double>(), rm.at("offset").get<double>()};
    p.link = obj.value("link", "sigmoidal") == "linear" ? LinkKind::kLinear : LinkKind::kSigmoidal;
    report.r_squared = obj.at("r2").get<double>();
    report.mse = obj.at("mse").get<double>();
    report.variant = parse_variant(obj.at("variant").get<std::string>());
    report.n_points = obj.at("n_points").get<std::size_t>();
    if (obj.contains("p_values")) report.p_values = obj.at("p_values").get<std::vector<double>>();
    return report;
}

}  // namespace ragscale
