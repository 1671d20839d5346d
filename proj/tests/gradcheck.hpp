#pragma once

// Central finite-difference check of the analytic QRNN gradients on a small
// random instance.

#include "aero/qrnn.hpp"
#include "aero/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace gradcheck {

inline aero::QrnnConfig random_small_config(aero::SeededRng &rng) {
	aero::QrnnConfig c;
	c.feature_dim = 4 + rng.below(6);
	c.conv1_channels = 1 + rng.below(3);
	c.conv2_channels = 1 + rng.below(3);
	c.kernel_size = 1 + rng.below(3);
	c.hidden_dim = 2 + rng.below(4);
	c.horizon = 1 + rng.below(4);
	const std::size_t nq = 1 + rng.below(3);
	c.quantiles.clear();
	double level = 0.0;
	for (std::size_t i = 0; i < nq; ++i) {
		level += 0.05 + 0.25 * rng.uniform();
		c.quantiles.push_back(level);
	}
	c.loss_orientation = rng.bernoulli(0.5) ? aero::LossOrientation::paper : aero::LossOrientation::standard;
	return c;
}

struct Outcome {
	double max_relative_error = 0.0; // over quantiles, of |analytic - numeric| / max(|analytic|, |numeric|)
	double input_relative_error = 0.0;
	std::size_t parameters = 0;
};

inline double relative_error(const std::vector<double> &a, const std::vector<double> &b) {
	double diff = 0.0, na = 0.0, nb = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		diff += (a[i] - b[i]) * (a[i] - b[i]);
		na += a[i] * a[i];
		nb += b[i] * b[i];
	}
	const double scale = std::sqrt(std::max(na, nb));
	return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

// Targets sit at least 1e-2 from every prediction so no hinge kink is within reach of h.
inline Outcome check_instance(std::uint64_t seed, double h = 1e-5) {
	aero::SeededRng rng(seed);
	const aero::QrnnConfig config = random_small_config(rng);
	aero::QrnnParams params = aero::init_params(config, rng);
	for (double &v : params.flat()) {
		v += 0.1 * rng.normal(); // nonzero biases too
	}
	const std::size_t batch = 1 + rng.below(4);
	aero::Tensor x = aero::gaussian_sample(rng, {batch, config.feature_dim}, 1.0);
	const auto preds = aero::forward(params, x);
	aero::Tensor y({batch, config.horizon});
	for (std::size_t i = 0; i < y.size(); ++i) {
		const double offset = 0.01 + 0.5 * rng.uniform();
		y[i] = preds[0][i] + (rng.bernoulli(0.5) ? offset : -offset);
	}
	for (const auto &p : preds) {
		for (std::size_t i = 0; i < y.size(); ++i) {
			if (std::abs(p[i] - y[i]) < 1e-3) {
				y[i] += 0.05;
			}
		}
	}

	aero::ForwardCache cache;
	aero::forward(params, x, &cache);
	aero::BackwardOptions opts;
	opts.input_gradients = true;
	const auto grads = aero::backward_quantile_gradients(cache, params, y, opts);

	Outcome out;
	out.parameters = params.size();
	const auto loss_at = [&](std::size_t q) {
		const auto p = aero::forward(params, x);
		return aero::pinball_loss(p[q], y, config.quantiles[q], config.loss_orientation);
	};
	for (std::size_t q = 0; q < config.num_quantiles(); ++q) {
		std::vector<double> numeric(params.size());
		for (std::size_t i = 0; i < params.size(); ++i) {
			const double keep = params.flat()[i];
			params.flat()[i] = keep + h;
			const double fp = loss_at(q);
			params.flat()[i] = keep - h;
			const double fm = loss_at(q);
			params.flat()[i] = keep;
			numeric[i] = (fp - fm) / (2.0 * h);
		}
		out.max_relative_error = std::max(out.max_relative_error, relative_error(grads.params[q], numeric));

		std::vector<double> numeric_x(x.size());
		for (std::size_t i = 0; i < x.size(); ++i) {
			const double keep = x[i];
			x[i] = keep + h;
			const double fp = loss_at(q);
			x[i] = keep - h;
			const double fm = loss_at(q);
			x[i] = keep;
			numeric_x[i] = (fp - fm) / (2.0 * h);
		}
		out.input_relative_error =
		    std::max(out.input_relative_error, relative_error(grads.inputs[q].storage(), numeric_x));
	}
	return out;
}

} // namespace gradcheck
