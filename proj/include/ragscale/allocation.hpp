#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ragscale/harness.hpp"

namespace ragscale {

/// y = amplitude / (1 + exp(-steepness * (x + shift))) + base, an increasing
/// logistic with open range (base, base + amplitude).
struct SigmoidParams {
    double amplitude = 3.30;
    double steepness = 1.81;
    double shift = 0.46;
    double base = -2.18;
};

double sigma(double x, const SigmoidParams& params = {});
/// Inverse on the open range; throws OutOfRange at or beyond the bounds.
double sigma_inv(double y, const SigmoidParams& params = {});

/// Affine bridge between z-scored metrics and the sigmoid's range:
/// mapped = scale * z + offset.
struct RangeMap {
    double scale = 1.0;
    double offset = 0.0;
};

enum class RangeMapMode {
    kAuto,      // map observed [min, max] onto the central 98% of the range
    kIdentity,  // values already live in the sigmoid range
};

/// Per-task performance deltas of one document / one shot over zero-shot QA.
/// The iteration component is fixed at zero.
struct Informativeness {
    double doc = 0.0;
    double shot = 0.0;
};

enum class LinkKind { kSigmoidal, kLinear };

/// The fitted computation allocation model:
///   link_inv(P(theta)) ~= (a + b .* i)^T log(theta + epsilon) + c
/// with b[2] constrained to zero. `quad` holds squared-log coefficients for
/// the quadratic variant and is zero otherwise.
struct AllocationParams {
    std::array<double, 3> a{};
    std::array<double, 3> b{};
    double c = 0.0;
    std::array<double, 3> quad{};
    double epsilon = 0.01;
    SigmoidParams sigmoid;
    RangeMap range_map;
    LinkKind link = LinkKind::kSigmoidal;
};

/// Forward model in link space: sigma(linear term) for the sigmoidal link,
/// the linear term itself otherwise.
double predict(const AllocationParams& params, const Informativeness& info,
               const InferenceConfig& theta);

/// Same prediction expressed in z-score units (range map inverted).
double predict_z(const AllocationParams& params, const Informativeness& info,
                 const InferenceConfig& theta);

enum class FitVariant { kSigmoidal, kExcludeB, kQuadraticTheta, kLinearSigma };

std::string to_string(FitVariant variant);
FitVariant parse_variant(const std::string& name);

struct FitPoint {
    std::string dataset;
    std::string strategy;
    InferenceConfig theta;
    Informativeness info;
    double z = 0.0;           // normalized performance
    double max_eff_len = 0.0; // measured, for length-based filtering
};

struct FitReport {
    AllocationParams params;
    FitVariant variant = FitVariant::kSigmoidal;
    double r_squared = 0.0;  // on training points, in the OLS target space
    double mse = 0.0;
    std::size_t n_points = 0;
    std::vector<double> p_values;  // informational, from OLS t-statistics
};

struct FitOptions {
    RangeMapMode range_map = RangeMapMode::kAuto;
};

/// Closed-form least squares on the chosen design. Throws InsufficientPoints
/// (< 7 points or fewer than columns + 1) and RankDeficientDesign.
FitReport fit(std::span<const FitPoint> points, FitVariant variant = FitVariant::kSigmoidal,
              const FitOptions& options = {});

struct GroupStats {
    double mean = 0.0;
    double stddev = 0.0;  // population convention
};

struct NormalizationStats {
    std::map<std::string, GroupStats> groups;  // key: dataset "\x1f" metric
    static std::string group_key(const std::string& dataset, const std::string& metric);
};

struct NormalizedRow {
    SummaryRow row;
    double z = 0.0;
};

/// Z-scores per (dataset, metric) group with population standard deviation.
/// Groups with zero variance raise DegenerateGroup.
std::pair<std::vector<NormalizedRow>, NormalizationStats> normalize_scores(
    std::span<const SummaryRow> rows);

/// i_doc = P(1,0,1) - P(0,0,1), i_shot = P(0,1,1) - P(0,0,1) on normalized
/// scores of one (strategy, dataset, metric). Throws MissingBaseConfig.
Informativeness informativeness(std::span<const NormalizedRow> rows, const std::string& strategy,
                                const std::string& dataset, const std::string& metric);

/// Points for one metric, each carrying its (dataset, strategy) informativeness.
std::vector<FitPoint> assemble_fit_points(std::span<const NormalizedRow> rows,
                                          const std::string& metric);

enum class OutlierMode { kOff, kPeaks };

/// "peaks" removes, within each (dataset, strategy, k, n) series ordered by m,
/// strict local extrema deviating from the series mean by more than
/// `threshold_sigmas` sample standard deviations. Default mode is off.
std::vector<FitPoint> trim_outliers(std::span<const FitPoint> points, OutlierMode mode,
                                    double threshold_sigmas = 2.0);

using LengthEstimator = std::function<double(const InferenceConfig&)>;

/// Estimated max per-example tokens as (m + 1) * (k * avg_doc_tokens +
/// avg_query_tokens + overhead_tokens) * n.
LengthEstimator analytic_length_estimator(double avg_doc_tokens, double avg_query_tokens,
                                          double overhead_tokens);

/// Measured calibration: runs each candidate configuration on a seeded
/// subsample of the dataset and returns the max observed effective length
/// scaled by the safety factor. The backend reference must outlive the
/// returned estimator; candidates must be valid for the strategy.
LengthEstimator measured_length_estimator(std::vector<QAInstance> instances, Strategy strategy,
                                          const Index* index, std::vector<Demonstration> demos,
                                          Backend& backend, EpisodeOptions options,
                                          std::uint64_t seed, std::size_t subsample = 16,
                                          double safety_factor = 1.1);

/// Argmax of predict over candidates whose estimated length fits the budget.
/// Ties prefer the smaller estimated length, then lexicographic theta.
InferenceConfig predict_optimal(const AllocationParams& params, const Informativeness& info,
                                std::span<const InferenceConfig> candidates, double l_max,
                                const LengthEstimator& length_estimator);

struct LeaveOneOutResult {
    FitReport report;
    std::vector<std::pair<FitPoint, double>> target_predictions;  // predicted z per target point
};

/// Fit on every domain except the target; predictions on the target points use
/// their own (target-derived) informativeness.
LeaveOneOutResult generalize_leave_one_out(std::span<const FitPoint> points,
                                           const std::string& target_dataset,
                                           FitVariant variant = FitVariant::kSigmoidal,
                                           const FitOptions& options = {});

struct ExtrapolationResult {
    FitReport report;
    InferenceConfig theta_star;
};

/// Fit only on points whose measured effective length is within l_train, then
/// pick the best configuration for the larger budget l_eval.
ExtrapolationResult extrapolate_lengths(std::span<const FitPoint> points, double l_train,
                                        double l_eval, const Informativeness& info,
                                        std::span<const InferenceConfig> candidates,
                                        const LengthEstimator& length_estimator,
                                        FitVariant variant = FitVariant::kSigmoidal,
                                        const FitOptions& options = {});

struct SigmoidFit {
    SigmoidParams params;
    bool converged = false;
};

/// Four-parameter logistic fitted by damped Gauss-Newton from the default
/// constants. Falls back to the defaults when the fit does not converge
/// (converged == false). Requires at least 8 points.
SigmoidFit fit_sigmoid(std::span<const double> x, std::span<const double> y);

nlohmann::json fit_report_to_json(const FitReport& report);
FitReport fit_report_from_json(const nlohmann::json& obj);

}  // namespace ragscale
