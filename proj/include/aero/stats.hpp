#pragma once

// Forecast evaluation: interval coverage, quantile crossing, pinball metrics,
// and a paired t-test with a self-contained Student-t tail.

#include "aero/qrnn.hpp"
#include "aero/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aero::stats {

// Fraction of cells with lower <= target <= upper.
double picp(const Tensor &lower, const Tensor &upper, const Tensor &targets);

double mean_interval_width(const Tensor &lower, const Tensor &upper);

// predictions ordered by ascending quantile level. A cell crosses when some
// adjacent pair strictly decreases; ties do not count.
double crossing_rate(const std::vector<Tensor> &predictions);

// I_x(a, b) via Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

// Two-sided P(|T| >= |t|) for Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct TTestResult {
	double t_stat = 0.0;
	double p_value = 1.0;
	std::size_t df = 0;
	double mean_difference = 0.0;
};

// d = a - b with sample standard deviation. Zero-variance differences give
// t = 0, p = 1 when mean(d) == 0 and throw otherwise.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// Mean pinball loss per level.
std::vector<double> pinball_metric(const std::vector<Tensor> &predictions, const Tensor &targets,
                                   const std::vector<double> &levels, LossOrientation orientation);

struct MetricsReport {
	std::string optimizer;
	std::size_t epochs = 0;
	std::vector<double> quantiles;
	std::vector<double> estimated_levels;
	std::vector<double> train_losses;
	std::vector<double> test_losses;
	double initial_train_loss = 0.0;
	double initial_test_loss = 0.0;
	std::vector<double> test_pinball;  // per head, after training
	double band_lower_level = 0.0;
	double band_upper_level = 0.0;
	double picp = 0.0;
	double mean_interval_width = 0.0;  // in scaled target units
	double crossing_rate = 0.0;
	std::optional<TTestResult> t_test;  // absent with fewer than two epochs
	std::uint64_t grad_evals = 0;
	double smoothness = 0.0;  // mean |train_loss[e] - train_loss[e-1]|

	double final_train_loss() const;
	double final_test_loss() const;
};

double loss_smoothness(const std::vector<double> &losses);

std::string to_json_line(const MetricsReport &report);
// Flat "metric,value" rows.
void write_metrics_csv(std::ostream &out, const MetricsReport &report);

} // namespace aero::stats
