#pragma once

// Baselines (SGD, Adam), the shared-momentum Gaussian-perturbation optimizer,
// and the per-quantile redirection optimizer:
//
//   G      natural gradient of quantile q's loss (full parameter vector)
//   G_adv  gradient at the sign-perturbed input x + eps * sign(grad_x L_q)
//   delta  predictive variance of quantile q's outputs, added along G_adv's direction
//   R      proj_G(G_adv + delta * u) + sum_{j != q} beta_qj * G_j
//   E      lambda * |R|^2 + (1 - lambda) * |G|^2
//   eta    eta0 / (1 + kappa * E)
//   v      mu * v + (1 - mu) * R, optionally rescaled so sum_q |v_q| tracks a target
//   theta  theta - eta * v

#include "aero/qrnn.hpp"
#include "aero/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aero {

// ---- baselines ----------------------------------------------------------------

void sgd_step(std::span<double> params, std::span<const double> grad, double lr);

struct AdamState {
	double lr = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double epsilon = 1e-8;
	std::uint64_t step = 0;
	std::vector<double> first_moment;
	std::vector<double> second_moment;
};

void adam_step(std::span<double> params, std::span<const double> grad, AdamState &state);

// ---- shared momentum with Gaussian perturbation ---------------------------------

enum class BaseOptimizer { plain, adam };

struct AeroSharedState {
	double noise = 0.0;    // beta, std of the N(0, I) perturbation
	double momentum = 0.9; // mu in [0, 1)
	double lr = 0.05;      // eta > 0
	BaseOptimizer base = BaseOptimizer::plain;
	AdamState adam;        // used when base == adam (adam.lr is the step size)
	std::vector<double> velocity; // m

	void validate() const;
};

// g' = grad + noise * N(0, I); m = mu * m + (1 - mu) * g'; params -= lr * m
// (or m is fed to Adam when base == adam).
void aero_shared_step(std::span<double> params, std::span<const double> grad, AeroSharedState &state,
                      SeededRng &rng);

// ---- per-quantile redirection -------------------------------------------------------

struct AeroQuantileConfig {
	double energy_allocation = 0.5;  // lambda in [0, 1]
	double momentum = 0.9;           // mu in [0, 1)
	std::vector<double> base_lr;     // eta0 per quantile; empty -> all equal to default_lr
	double default_lr = 0.05;
	double energy_modulation = 0.0;  // kappa >= 0
	double adversarial_radius = 0.01; // eps_adv >= 0
	double cooperation = 0.1;        // beta_c, spread uniformly over the other quantiles
	std::vector<double> cooperation_matrix; // optional explicit |Q| x |Q| matrix (diagonal must be 0)
	bool anticipation = true;        // false forces delta = 0
	bool redistribute = true;
	bool clamp_alignment = false;    // zero negative projection coefficients
	double target_decay = 0.99;      // EMA decay of the momentum target

	void validate(std::size_t num_quantiles) const;
};

struct AeroQuantileState {
	AeroQuantileConfig config;
	std::vector<double> base_lr;                // resolved eta0 per quantile
	std::vector<double> cooperation;            // |Q| x |Q|, zero diagonal
	std::vector<std::vector<double>> velocity;  // v per quantile
	std::vector<double> energy;                 // E per quantile
	double momentum_target = 0.0;
	bool target_initialized = false;
	std::uint64_t steps = 0;
	std::uint64_t grad_evals = 0;
};

AeroQuantileState make_aero_quantile_state(const QrnnParams &params, const AeroQuantileConfig &config);

struct QuantileTrace {
	double level = 0.0;
	double loss = 0.0;
	double grad_norm = 0.0;
	double adv_grad_norm = 0.0;
	double anticipation = 0.0; // delta
	double alignment = 0.0;    // signed projection coefficient
	double redirected_norm = 0.0;
	double energy = 0.0;
	double lr = 0.0;
	double velocity_norm = 0.0; // after redistribution
	std::uint64_t grad_evals = 0;
};

struct StepTrace {
	std::uint64_t step = 0;
	std::vector<QuantileTrace> quantiles;
	double momentum_target = 0.0;
	double velocity_norm_sum = 0.0;
	double redistribution_scale = 1.0;
};

std::string to_json_line(const StepTrace &trace);

// Gradient of quantile q's loss at the FGSM-perturbed input x + radius * sign(input_grad).
// input_grad is grad_x L_q at the unperturbed batch. Performs one forward and one
// backward pass and adds 1 to grad_evals.
std::vector<double> adversarial_gradient(const QrnnParams &params, const Tensor &batch, const Tensor &targets,
                                         std::size_t q, double radius, const Tensor &input_grad,
                                         std::uint64_t &grad_evals);

// Convenience form that first computes grad_x L_q itself (that pass is not counted).
std::vector<double> adversarial_gradient(const QrnnParams &params, const Tensor &batch, const Tensor &targets,
                                         std::size_t q, double radius, std::uint64_t &grad_evals);

// Scales every velocity by target / sum_q |v_q| (1 when the sum is 0). Returns the scale.
double redistribute_momentum(std::vector<std::vector<double>> &velocities, double target);

// One step over a batch. Throws NumericalError naming the stage if anything goes non-finite.
StepTrace aero_quantile_step(QrnnParams &params, const Tensor &batch, const Tensor &targets,
                             AeroQuantileState &state);

// ---- uniform driver used by training ---------------------------------------------------

enum class OptimizerKind { sgd, adam, aero_shared, aero_quantile };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string &text);

struct OptimizerSettings {
	OptimizerKind kind = OptimizerKind::aero_shared;
	double lr = 0.05;
	double momentum = 0.9;
	double noise = 1e-3;
	BaseOptimizer base = BaseOptimizer::plain;
	double adam_lr = 1e-3;
	double adam_beta1 = 0.9;
	double adam_beta2 = 0.999;
	double adam_epsilon = 1e-8;
	AeroQuantileConfig quantile;
};

struct BatchResult {
	std::vector<double> losses; // per quantile, before the update
	std::uint64_t grad_evals = 0;
	std::optional<StepTrace> trace;
};

// Owns the optimizer state for one training run.
//   sgd:            per-quantile gradients, applied one quantile after another
//   adam:           gradient of the mean loss over quantiles
//   aero_shared:    gradient of the mean loss, perturbed, shared momentum
//   aero_quantile:  aero_quantile_step
// grad_evals counts backward passes: |Q| for sgd, 1 for adam / aero_shared,
// 2|Q| for aero_quantile.
class ModelOptimizer {
public:
	ModelOptimizer(const OptimizerSettings &settings, const QrnnParams &params);

	BatchResult step(QrnnParams &params, const Tensor &batch, const Tensor &targets, SeededRng &rng);

	std::uint64_t grad_evals() const { return grad_evals_; }
	const OptimizerSettings &settings() const { return settings_; }

private:
	OptimizerSettings settings_;
	AdamState adam_;
	AeroSharedState shared_;
	std::optional<AeroQuantileState> quantile_;
	std::uint64_t grad_evals_ = 0;
};

} // namespace aero
