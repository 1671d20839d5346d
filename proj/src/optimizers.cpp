#include "aero/optimizers.hpp"

#include "aero/error.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace aero {

namespace {

void require_finite(std::span<const double> values, const std::string &what) {
	if (!all_finite(values)) {
		throw NumericalError(what + " contains non-finite values");
	}
}

void require_finite(double value, const std::string &what) {
	if (!std::isfinite(value)) {
		throw NumericalError(what + " is non-finite");
	}
}

void require_same_size(std::size_t a, std::size_t b, const char *what) {
	if (a != b) {
		throw ShapeError(std::string(what) + ": gradient has " + std::to_string(b) + " entries, parameters have " +
		                 std::to_string(a));
	}
}

} // namespace

// ---- baselines ----------------------------------------------------------------

void sgd_step(std::span<double> params, std::span<const double> grad, double lr) {
	require_same_size(params.size(), grad.size(), "sgd_step");
	for (std::size_t i = 0; i < params.size(); ++i) {
		params[i] -= lr * grad[i];
	}
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState &s) {
	require_same_size(params.size(), grad.size(), "adam_step");
	if (s.first_moment.empty()) {
		s.first_moment.assign(params.size(), 0.0);
		s.second_moment.assign(params.size(), 0.0);
	}
	require_same_size(s.first_moment.size(), params.size(), "adam_step state");
	++s.step;
	const double t = static_cast<double>(s.step);
	const double c1 = 1.0 - std::pow(s.beta1, t);
	const double c2 = 1.0 - std::pow(s.beta2, t);
	for (std::size_t i = 0; i < params.size(); ++i) {
		const double g = grad[i];
		s.first_moment[i] = s.beta1 * s.first_moment[i] + (1.0 - s.beta1) * g;
		s.second_moment[i] = s.beta2 * s.second_moment[i] + (1.0 - s.beta2) * g * g;
		const double m_hat = s.first_moment[i] / c1;
		const double v_hat = s.second_moment[i] / c2;
		params[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.epsilon);
	}
}

// ---- shared momentum ---------------------------------------------------------------

void AeroSharedState::validate() const {
	if (!(noise >= 0.0)) {
		throw std::invalid_argument("aero-shared: noise strength must be >= 0");
	}
	if (!(momentum >= 0.0 && momentum < 1.0)) {
		throw std::invalid_argument("aero-shared: momentum must lie in [0, 1)");
	}
	if (!(lr > 0.0)) {
		throw std::invalid_argument("aero-shared: learning rate must be > 0");
	}
}

void aero_shared_step(std::span<double> params, std::span<const double> grad, AeroSharedState &s, SeededRng &rng) {
	require_same_size(params.size(), grad.size(), "aero_shared_step");
	require_finite(grad, "aero-shared gradient");
	s.validate();
	if (s.velocity.empty()) {
		s.velocity.assign(params.size(), 0.0);
	}
	require_same_size(s.velocity.size(), params.size(), "aero_shared_step state");

	const Tensor perturbation = gaussian_sample(rng, {params.size()}, s.noise);
	const double mu = s.momentum;
	for (std::size_t i = 0; i < params.size(); ++i) {
		const double g = grad[i] + perturbation[i];
		s.velocity[i] = mu * s.velocity[i] + (1.0 - mu) * g;
	}
	if (s.base == BaseOptimizer::adam) {
		adam_step(params, s.velocity, s.adam);
	} else {
		sgd_step(params, s.velocity, s.lr);
	}
}

// ---- per-quantile redirection ---------------------------------------------------------

void AeroQuantileConfig::validate(std::size_t num_quantiles) const {
	if (!(energy_allocation >= 0.0 && energy_allocation <= 1.0)) {
		throw std::invalid_argument("aero-quantile: energy allocation lambda must lie in [0, 1]");
	}
	if (!(momentum >= 0.0 && momentum < 1.0)) {
		throw std::invalid_argument("aero-quantile: momentum must lie in [0, 1)");
	}
	if (!base_lr.empty() && base_lr.size() != num_quantiles) {
		throw std::invalid_argument("aero-quantile: need one base learning rate per quantile");
	}
	for (double lr : base_lr) {
		if (!(lr > 0.0)) {
			throw std::invalid_argument("aero-quantile: base learning rates must be > 0");
		}
	}
	if (base_lr.empty() && !(default_lr > 0.0)) {
		throw std::invalid_argument("aero-quantile: learning rate must be > 0");
	}
	if (!(energy_modulation >= 0.0)) {
		throw std::invalid_argument("aero-quantile: energy modulation kappa must be >= 0");
	}
	if (!(adversarial_radius >= 0.0)) {
		throw std::invalid_argument("aero-quantile: adversarial radius must be >= 0");
	}
	if (!cooperation_matrix.empty()) {
		if (cooperation_matrix.size() != num_quantiles * num_quantiles) {
			throw std::invalid_argument("aero-quantile: cooperation matrix must be |Q| x |Q|");
		}
		for (std::size_t q = 0; q < num_quantiles; ++q) {
			if (cooperation_matrix[q * num_quantiles + q] != 0.0) {
				throw std::invalid_argument("aero-quantile: cooperation matrix diagonal must be zero");
			}
		}
	}
	if (!(target_decay >= 0.0 && target_decay < 1.0)) {
		throw std::invalid_argument("aero-quantile: momentum target decay must lie in [0, 1)");
	}
}

AeroQuantileState make_aero_quantile_state(const QrnnParams &params, const AeroQuantileConfig &config) {
	const std::size_t nq = params.config().num_quantiles();
	config.validate(nq);
	AeroQuantileState s;
	s.config = config;
	s.base_lr = config.base_lr.empty() ? std::vector<double>(nq, config.default_lr) : config.base_lr;
	if (!config.cooperation_matrix.empty()) {
		s.cooperation = config.cooperation_matrix;
	} else {
		s.cooperation.assign(nq * nq, 0.0);
		const double share = nq > 1 ? config.cooperation / static_cast<double>(nq - 1) : 0.0;
		for (std::size_t q = 0; q < nq; ++q) {
			for (std::size_t j = 0; j < nq; ++j) {
				s.cooperation[q * nq + j] = q == j ? 0.0 : share;
			}
		}
	}
	s.velocity.assign(nq, std::vector<double>(params.size(), 0.0));
	s.energy.assign(nq, 0.0);
	return s;
}

std::string to_json_line(const StepTrace &trace) {
	nlohmann::ordered_json j;
	j["step"] = trace.step;
	j["momentum_target"] = trace.momentum_target;
	j["velocity_norm_sum"] = trace.velocity_norm_sum;
	j["redistribution_scale"] = trace.redistribution_scale;
	auto &qs = j["quantiles"] = nlohmann::ordered_json::array();
	for (const auto &q : trace.quantiles) {
		nlohmann::ordered_json e;
		e["level"] = q.level;
		e["loss"] = q.loss;
		e["grad_norm"] = q.grad_norm;
		e["adv_grad_norm"] = q.adv_grad_norm;
		e["anticipation"] = q.anticipation;
		e["alignment"] = q.alignment;
		e["redirected_norm"] = q.redirected_norm;
		e["energy"] = q.energy;
		e["lr"] = q.lr;
		e["velocity_norm"] = q.velocity_norm;
		e["grad_evals"] = q.grad_evals;
		qs.push_back(std::move(e));
	}
	return j.dump();
}

std::vector<double> adversarial_gradient(const QrnnParams &params, const Tensor &batch, const Tensor &targets,
                                         std::size_t q, double radius, const Tensor &input_grad,
                                         std::uint64_t &grad_evals) {
	if (!(radius >= 0.0)) {
		throw std::invalid_argument("adversarial gradient: radius must be >= 0");
	}
	if (input_grad.shape() != batch.shape()) {
		throw ShapeError("adversarial gradient: input gradient " + shape_string(input_grad.shape()) +
		                 " does not match batch " + shape_string(batch.shape()));
	}
	Tensor perturbed = batch;
	for (std::size_t i = 0; i < perturbed.size(); ++i) {
		const double g = input_grad[i];
		const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
		perturbed[i] += radius * sign;
	}
	ForwardCache cache;
	forward(params, perturbed, &cache);
	BackwardOptions opts;
	opts.only_quantile = q;
	auto grads = backward_quantile_gradients(cache, params, targets, opts);
	++grad_evals;
	return std::move(grads.params[q]);
}

std::vector<double> adversarial_gradient(const QrnnParams &params, const Tensor &batch, const Tensor &targets,
                                         std::size_t q, double radius, std::uint64_t &grad_evals) {
	ForwardCache cache;
	forward(params, batch, &cache);
	BackwardOptions opts;
	opts.input_gradients = true;
	opts.only_quantile = q;
	const auto natural = backward_quantile_gradients(cache, params, targets, opts);
	return adversarial_gradient(params, batch, targets, q, radius, natural.inputs[q], grad_evals);
}

double redistribute_momentum(std::vector<std::vector<double>> &velocities, double target) {
	if (!(target >= 0.0)) {
		throw std::invalid_argument("momentum redistribution: target must be >= 0");
	}
	double total = 0.0;
	for (const auto &v : velocities) {
		total += norm(v);
	}
	if (total == 0.0) {
		return 1.0;
	}
	const double s = target / total;
	for (auto &v : velocities) {
		scale(v, s);
	}
	return s;
}

StepTrace aero_quantile_step(QrnnParams &params, const Tensor &batch, const Tensor &targets,
                             AeroQuantileState &state) {
	const QrnnConfig &c = params.config();
	const std::size_t nq = c.num_quantiles();
	const AeroQuantileConfig &cfg = state.config;
	if (batch.rank() != 2 || batch.dim(0) == 0) {
		throw ShapeError("aero-quantile step: batch must be a non-empty [n x features] tensor");
	}
	if (state.velocity.size() != nq || state.base_lr.size() != nq) {
		throw std::invalid_argument("aero-quantile step: optimizer state does not match the model's quantiles");
	}

	StepTrace trace;
	trace.step = ++state.steps;
	trace.quantiles.resize(nq);

	// (1) natural gradients, with input gradients for the adversarial pass
	ForwardCache cache;
	const auto predictions = forward(params, batch, &cache);
	BackwardOptions opts;
	opts.input_gradients = true;
	const QuantileGradients natural = backward_quantile_gradients(cache, params, targets, opts);
	state.grad_evals += nq;
	for (std::size_t q = 0; q < nq; ++q) {
		require_finite(natural.params[q], "natural gradient (quantile " + std::to_string(q) + ")");
	}

	std::vector<double> redirected(params.size());
	std::vector<double> disturbance(params.size());
	for (std::size_t q = 0; q < nq; ++q) {
		auto &tq = trace.quantiles[q];
		const auto &G = natural.params[q];
		tq.level = c.quantiles[q];
		tq.loss = natural.losses[q];
		tq.grad_norm = norm(G);

		// (2) anticipated disturbance
		const double delta = cfg.anticipation ? predictive_variance(predictions[q]) : 0.0;
		require_finite(delta, "anticipation (quantile " + std::to_string(q) + ")");
		tq.anticipation = delta;

		std::uint64_t evals = 0;
		const auto G_adv = adversarial_gradient(params, batch, targets, q, cfg.adversarial_radius,
		                                        natural.inputs[q], evals);
		state.grad_evals += evals;
		tq.grad_evals = 1 + evals;
		require_finite(G_adv, "adversarial gradient (quantile " + std::to_string(q) + ")");
		tq.adv_grad_norm = norm(G_adv);

		// (3) redirection: project the disturbed gradient onto G, then cooperate
		const double adv_norm = tq.adv_grad_norm;
		for (std::size_t i = 0; i < disturbance.size(); ++i) {
			const double unit = adv_norm > 0.0 ? G_adv[i] / adv_norm : 0.0;
			disturbance[i] = G_adv[i] + delta * unit;
		}
		double coef = projection_coefficient(disturbance, G);
		if (cfg.clamp_alignment && coef < 0.0) {
			coef = 0.0;
		}
		tq.alignment = coef;
		for (std::size_t i = 0; i < redirected.size(); ++i) {
			redirected[i] = coef * G[i];
		}
		for (std::size_t j = 0; j < nq; ++j) {
			if (j != q) {
				axpy(state.cooperation[q * nq + j], natural.params[j], redirected);
			}
		}
		require_finite(redirected, "redirected gradient (quantile " + std::to_string(q) + ")");
		tq.redirected_norm = norm(redirected);

		// (4) energy budget, (5) adaptive rate
		const double lambda = cfg.energy_allocation;
		const double energy =
		    lambda * tq.redirected_norm * tq.redirected_norm + (1.0 - lambda) * tq.grad_norm * tq.grad_norm;
		require_finite(energy, "energy budget (quantile " + std::to_string(q) + ")");
		state.energy[q] = energy;
		tq.energy = energy;
		tq.lr = state.base_lr[q] / (1.0 + cfg.energy_modulation * energy);

		// (6) velocity
		const double mu = cfg.momentum;
		auto &v = state.velocity[q];
		for (std::size_t i = 0; i < v.size(); ++i) {
			v[i] = mu * v[i] + (1.0 - mu) * redirected[i];
		}
		require_finite(v, "velocity (quantile " + std::to_string(q) + ")");
	}

	// (7) momentum redistribution against an EMA target of the total velocity norm
	double total = 0.0;
	for (const auto &v : state.velocity) {
		total += norm(v);
	}
	if (!state.target_initialized) {
		state.momentum_target = total;
		state.target_initialized = true;
	} else {
		state.momentum_target = cfg.target_decay * state.momentum_target + (1.0 - cfg.target_decay) * total;
	}
	if (cfg.redistribute) {
		trace.redistribution_scale = redistribute_momentum(state.velocity, state.momentum_target);
	}
	trace.momentum_target = state.momentum_target;

	// (8) parameter update, quantiles in ascending order
	double velocity_sum = 0.0;
	for (std::size_t q = 0; q < nq; ++q) {
		trace.quantiles[q].velocity_norm = norm(state.velocity[q]);
		velocity_sum += trace.quantiles[q].velocity_norm;
		sgd_step(params.flat(), state.velocity[q], trace.quantiles[q].lr);
	}
	trace.velocity_norm_sum = velocity_sum;
	require_finite(params.flat(), "parameters after update");
	return trace;
}

// ---- driver ----------------------------------------------------------------------------

std::string to_string(OptimizerKind kind) {
	switch (kind) {
	case OptimizerKind::sgd:
		return "sgd";
	case OptimizerKind::adam:
		return "adam";
	case OptimizerKind::aero_shared:
		return "aero-shared";
	case OptimizerKind::aero_quantile:
		return "aero-quantile";
	}
	return "unknown";
}

OptimizerKind parse_optimizer(const std::string &text) {
	for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::aero_shared,
	                  OptimizerKind::aero_quantile}) {
		if (to_string(kind) == text) {
			return kind;
		}
	}
	throw std::invalid_argument("unknown optimizer '" + text + "' (expected sgd|adam|aero-shared|aero-quantile)");
}

ModelOptimizer::ModelOptimizer(const OptimizerSettings &settings, const QrnnParams &params) : settings_(settings) {
	adam_.lr = settings.adam_lr;
	adam_.beta1 = settings.adam_beta1;
	adam_.beta2 = settings.adam_beta2;
	adam_.epsilon = settings.adam_epsilon;

	shared_.noise = settings.noise;
	shared_.momentum = settings.momentum;
	shared_.lr = settings.lr;
	shared_.base = settings.base;
	shared_.adam = adam_;

	switch (settings.kind) {
	case OptimizerKind::sgd:
		if (!(settings.lr > 0.0)) {
			throw std::invalid_argument("sgd: learning rate must be > 0");
		}
		break;
	case OptimizerKind::adam:
		if (!(settings.adam_lr > 0.0)) {
			throw std::invalid_argument("adam: learning rate must be > 0");
		}
		break;
	case OptimizerKind::aero_shared:
		shared_.validate();
		break;
	case OptimizerKind::aero_quantile:
		quantile_ = make_aero_quantile_state(params, settings.quantile);
		break;
	}
}

BatchResult ModelOptimizer::step(QrnnParams &params, const Tensor &batch, const Tensor &targets, SeededRng &rng) {
	BatchResult result;
	switch (settings_.kind) {
	case OptimizerKind::sgd: {
		ForwardCache cache;
		forward(params, batch, &cache);
		auto grads = backward_quantile_gradients(cache, params, targets);
		result.grad_evals = params.config().num_quantiles();
		for (std::size_t q = 0; q < grads.params.size(); ++q) {
			require_finite(grads.params[q], "sgd gradient");
			sgd_step(params.flat(), grads.params[q], settings_.lr);
		}
		result.losses = std::move(grads.losses);
		break;
	}
	case OptimizerKind::adam:
	case OptimizerKind::aero_shared: {
		ForwardCache cache;
		forward(params, batch, &cache);
		const auto grad = backward_mean_loss_gradient(cache, params, targets, &result.losses);
		result.grad_evals = 1;
		if (settings_.kind == OptimizerKind::adam) {
			require_finite(grad, "adam gradient");
			adam_step(params.flat(), grad, adam_);
		} else {
			aero_shared_step(params.flat(), grad, shared_, rng);
		}
		break;
	}
	case OptimizerKind::aero_quantile: {
		const auto before = quantile_->grad_evals;
		StepTrace trace = aero_quantile_step(params, batch, targets, *quantile_);
		result.grad_evals = quantile_->grad_evals - before;
		for (const auto &q : trace.quantiles) {
			result.losses.push_back(q.loss);
		}
		result.trace = std::move(trace);
		break;
	}
	}
	grad_evals_ += result.grad_evals;
	return result;
}

} // namespace aero
