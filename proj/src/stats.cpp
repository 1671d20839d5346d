#include "aero/stats.hpp"

#include "aero/error.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <ostream>

namespace aero::stats {

namespace {

void require_same_shape(const Tensor &a, const Tensor &b, const char *what) {
	if (a.shape() != b.shape()) {
		throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
	}
}

double nan_if_empty(std::size_t n) { return n == 0 ? std::numeric_limits<double>::quiet_NaN() : 0.0; }

} // namespace

double picp(const Tensor &lower, const Tensor &upper, const Tensor &targets) {
	require_same_shape(lower, upper, "picp");
	require_same_shape(lower, targets, "picp");
	const std::size_t n = targets.size();
	if (n == 0) {
		return nan_if_empty(n);
	}
	const auto lo = lower.values();
	const auto hi = upper.values();
	const auto y = targets.values();
	std::size_t inside = 0;
	for (std::size_t i = 0; i < n; ++i) {
		inside += (lo[i] <= y[i] && y[i] <= hi[i]) ? 1 : 0;
	}
	return static_cast<double>(inside) / static_cast<double>(n);
}

double mean_interval_width(const Tensor &lower, const Tensor &upper) {
	require_same_shape(lower, upper, "mean_interval_width");
	if (lower.size() == 0) {
		return nan_if_empty(0);
	}
	double sum = 0.0;
	for (std::size_t i = 0; i < lower.size(); ++i) {
		sum += upper.values()[i] - lower.values()[i];
	}
	return sum / static_cast<double>(lower.size());
}

double crossing_rate(const std::vector<Tensor> &predictions) {
	if (predictions.size() < 2) {
		return 0.0;
	}
	for (const auto &p : predictions) {
		require_same_shape(predictions.front(), p, "crossing_rate");
	}
	const std::size_t n = predictions.front().size();
	if (n == 0) {
		return nan_if_empty(0);
	}
	std::size_t crossed = 0;
	for (std::size_t i = 0; i < n; ++i) {
		for (std::size_t k = 0; k + 1 < predictions.size(); ++k) {
			if (predictions[k].values()[i] > predictions[k + 1].values()[i]) {
				++crossed;
				break;
			}
		}
	}
	return static_cast<double>(crossed) / static_cast<double>(n);
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
	constexpr double tiny = 1e-300;
	constexpr double tolerance = 1e-12;
	constexpr int max_iterations = 10000;
	double c = 1.0;
	double d = 1.0 - (a + b) * x / (a + 1.0);
	if (std::abs(d) < tiny) {
		d = tiny;
	}
	d = 1.0 / d;
	double h = d;
	for (int m = 1; m <= max_iterations; ++m) {
		const double m2 = 2.0 * m;
		double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
		d = 1.0 + num * d;
		d = std::abs(d) < tiny ? tiny : d;
		c = 1.0 + num / c;
		c = std::abs(c) < tiny ? tiny : c;
		d = 1.0 / d;
		h *= d * c;
		num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
		d = 1.0 + num * d;
		d = std::abs(d) < tiny ? tiny : d;
		c = 1.0 + num / c;
		c = std::abs(c) < tiny ? tiny : c;
		d = 1.0 / d;
		const double delta = d * c;
		h *= delta;
		if (std::abs(delta - 1.0) < tolerance) {
			return h;
		}
	}
	throw NumericalError("regularized_incomplete_beta: continued fraction did not converge");
}

} // namespace

double regularized_incomplete_beta(double a, double b, double x) {
	if (!(a > 0.0) || !(b > 0.0) || !(x >= 0.0 && x <= 1.0)) {
		throw std::invalid_argument("regularized_incomplete_beta: need a, b > 0 and x in [0, 1]");
	}
	if (x == 0.0 || x == 1.0) {
		return x;
	}
	const double log_front =
	    std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
	const double front = std::exp(log_front);
	// The fraction converges quickly for x < (a + 1) / (a + b + 2); use the symmetry otherwise.
	if (x < (a + 1.0) / (a + b + 2.0)) {
		return front * beta_continued_fraction(a, b, x) / a;
	}
	return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
	if (!(df > 0.0) || std::isnan(t)) {
		throw std::invalid_argument("student_t_two_sided_p: need df > 0 and a number t");
	}
	if (std::isinf(t)) {
		return 0.0;
	}
	return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
	if (a.size() != b.size()) {
		throw ShapeError("paired_t_test: series lengths differ");
	}
	const std::size_t n = a.size();
	if (n < 2) {
		throw std::invalid_argument("paired_t_test: need at least two pairs");
	}
	double mean = 0.0;
	for (std::size_t i = 0; i < n; ++i) {
		mean += a[i] - b[i];
	}
	mean /= static_cast<double>(n);
	double ss = 0.0;
	for (std::size_t i = 0; i < n; ++i) {
		const double dev = (a[i] - b[i]) - mean;
		ss += dev * dev;
	}
	TTestResult r;
	r.df = n - 1;
	r.mean_difference = mean;
	const double sd = std::sqrt(ss / static_cast<double>(n - 1));
	if (sd == 0.0) {
		if (mean != 0.0) {
			throw std::invalid_argument("paired_t_test: constant nonzero differences, t undefined");
		}
		r.t_stat = 0.0;
		r.p_value = 1.0;
		return r;
	}
	r.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
	r.p_value = student_t_two_sided_p(r.t_stat, static_cast<double>(r.df));
	return r;
}

std::vector<double> pinball_metric(const std::vector<Tensor> &predictions, const Tensor &targets,
                                   const std::vector<double> &levels, LossOrientation orientation) {
	if (predictions.size() != levels.size()) {
		throw ShapeError("pinball_metric: " + std::to_string(predictions.size()) + " prediction sets for " +
		                 std::to_string(levels.size()) + " levels");
	}
	std::vector<double> out;
	out.reserve(levels.size());
	for (std::size_t k = 0; k < levels.size(); ++k) {
		out.push_back(pinball_loss(predictions[k], targets, levels[k], orientation));
	}
	return out;
}

double MetricsReport::final_train_loss() const {
	return train_losses.empty() ? initial_train_loss : train_losses.back();
}

double MetricsReport::final_test_loss() const { return test_losses.empty() ? initial_test_loss : test_losses.back(); }

double loss_smoothness(const std::vector<double> &losses) {
	if (losses.size() < 2) {
		return 0.0;
	}
	double sum = 0.0;
	for (std::size_t i = 1; i < losses.size(); ++i) {
		sum += std::abs(losses[i] - losses[i - 1]);
	}
	return sum / static_cast<double>(losses.size() - 1);
}

std::string to_json_line(const MetricsReport &r) {
	nlohmann::ordered_json j;
	j["optimizer"] = r.optimizer;
	j["epochs"] = r.epochs;
	j["quantiles"] = r.quantiles;
	j["estimated_levels"] = r.estimated_levels;
	j["initial_train_loss"] = r.initial_train_loss;
	j["initial_test_loss"] = r.initial_test_loss;
	j["final_train_loss"] = r.final_train_loss();
	j["final_test_loss"] = r.final_test_loss();
	j["train_losses"] = r.train_losses;
	j["test_losses"] = r.test_losses;
	j["test_pinball"] = r.test_pinball;
	j["band"] = {r.band_lower_level, r.band_upper_level};
	j["picp"] = r.picp;
	j["mean_interval_width"] = r.mean_interval_width;
	j["crossing_rate"] = r.crossing_rate;
	if (r.t_test) {
		j["t_test"] = {{"t", r.t_test->t_stat},
		               {"p", r.t_test->p_value},
		               {"df", r.t_test->df},
		               {"mean_difference", r.t_test->mean_difference}};
	} else {
		j["t_test"] = nullptr;
	}
	j["grad_evals"] = r.grad_evals;
	j["smoothness"] = r.smoothness;
	return j.dump();
}

void write_metrics_csv(std::ostream &out, const MetricsReport &r) {
	char buf[64];
	const auto row = [&](const std::string &key, double value) {
		std::snprintf(buf, sizeof buf, "%.12g", value);
		out << key << ',' << buf << '\n';
	};
	out << "metric,value\n";
	out << "optimizer," << r.optimizer << '\n';
	row("epochs", static_cast<double>(r.epochs));
	row("initial_train_loss", r.initial_train_loss);
	row("initial_test_loss", r.initial_test_loss);
	row("final_train_loss", r.final_train_loss());
	row("final_test_loss", r.final_test_loss());
	for (std::size_t k = 0; k < r.quantiles.size() && k < r.test_pinball.size(); ++k) {
		std::snprintf(buf, sizeof buf, "test_pinball_q%g", r.quantiles[k]);
		row(buf, r.test_pinball[k]);
	}
	row("band_lower_level", r.band_lower_level);
	row("band_upper_level", r.band_upper_level);
	row("picp", r.picp);
	row("mean_interval_width", r.mean_interval_width);
	row("crossing_rate", r.crossing_rate);
	if (r.t_test) {
		row("t_stat", r.t_test->t_stat);
		row("p_value", r.t_test->p_value);
		row("df", static_cast<double>(r.t_test->df));
	}
	row("grad_evals", static_cast<double>(r.grad_evals));
	row("smoothness", r.smoothness);
}

} // namespace aero::stats
