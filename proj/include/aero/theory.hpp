#pragma once

// Executable checks of the redirection guarantees: closed-form optimal
// redirection under a norm budget, the linear energy bound, cooperative
// equilibrium of convex quadratic agents, and convergence of online gradient
// descent under a Robbins-Monro step schedule.

#include "aero/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace aero::theory {

// ---- optimal redirection ---------------------------------------------------

struct RedirectionProblem {
	std::vector<double> disturbance; // epsilon
	double budget = 1.0;             // epsilon_max > 0
	double resistance = 1.0;         // R > 0

	void validate() const;
};

// Minimizer of |epsilon - rho|^2 / R over |rho| <= budget: epsilon itself when it
// fits, otherwise its radial projection onto the budget sphere. The returned
// vector always satisfies squared_norm(rho) <= budget * budget in floating point.
std::vector<double> optimal_redirection(const RedirectionProblem &problem);

double redirection_cost(const RedirectionProblem &problem, std::span<const double> rho);

// Projected gradient descent on the same problem, started at the origin.
// Independent numerical route used to cross-check optimal_redirection.
std::vector<double> projected_gradient_redirection(const RedirectionProblem &problem, std::size_t iterations = 200);

// ---- energy bound ---------------------------------------------------------------

struct EnergyLedger {
	std::vector<double> energies; // |rho_t|^2 per step
	double budget = 1.0;          // epsilon_max
	double slack = 1.0;           // C >= 1
};

struct EnergyBoundReport {
	std::size_t steps = 0;
	double lhs = 0.0;         // sum of energies
	double rhs = 0.0;         // C * T * budget^2
	bool holds = false;
	double tight_slack = 0.0; // smallest C for which the bound holds: lhs / (T * budget^2)
};

EnergyBoundReport verify_energy_bound(const EnergyLedger &ledger);

// ---- multi-agent equilibrium ------------------------------------------------------

// L(rho) = 0.5 * rho' A rho - b' rho with A symmetric positive definite.
struct AgentProblem {
	Tensor curvature;           // A, [n x n]
	std::vector<double> linear; // b

	std::size_t dim() const { return linear.size(); }
	double loss(std::span<const double> rho) const;
	std::vector<double> gradient(std::span<const double> rho) const;
	// Throws std::invalid_argument unless A is square, symmetric and positive definite.
	void validate() const;
};

struct EquilibriumResult {
	std::vector<std::vector<double>> strategies;
	std::size_t rounds = 0;
	double max_gradient_norm = 0.0;
	bool converged = false;
};

// Every agent runs conjugate gradient on its own loss, one iteration per round,
// until max_i |A_i rho_i - b_i| < tolerance or max_rounds is reached.
EquilibriumResult solve_multiagent_equilibrium(const std::vector<AgentProblem> &agents, double tolerance,
                                               std::size_t max_rounds = 10000);

// Direct solution A^{-1} b via Cholesky.
std::vector<double> solve_spd(const Tensor &a, std::span<const double> b);

// ---- adaptive convergence ----------------------------------------------------------

// eta_t = initial / t^power. Constructing a schedule that violates
// sum eta_t = inf or sum eta_t^2 < inf (i.e. initial <= 0, or power outside
// (0.5, 1]) throws std::invalid_argument.
class StepSchedule {
public:
	StepSchedule(double initial, double power = 1.0);
	double operator()(std::size_t t) const; // t >= 1
	double initial() const { return initial_; }
	double power() const { return power_; }

private:
	double initial_;
	double power_;
};

// Quadratic L_t(rho) = 0.5 * sum_i curvature_i * (rho_i - c_t,i)^2 whose minimizer
// c_t moves by at most `drift` per step; gradients carry N(0, noise^2 I) noise.
struct DriftScenario {
	std::size_t dim = 2;
	std::vector<double> curvature;  // empty -> all ones
	std::vector<double> minimizer;  // c_1; empty -> drawn uniformly from [-1, 1]^dim
	std::vector<double> start;      // rho_1; empty -> origin
	double drift = 0.0;
	double noise = 0.0;
};

struct ConvergenceRun {
	std::vector<double> gaps;         // L_t(rho_t) - min L_t, per step
	std::vector<double> average_gap;  // running (1/t) * sum of gaps
	std::vector<double> final_iterate;
	std::vector<double> final_minimizer;
	double head_mean = 0.0;           // mean gap over the first 10% of steps
	double tail_mean = 0.0;           // mean gap over the last 10% of steps
	double distance_to_minimizer = 0.0;
};

ConvergenceRun adaptive_convergence_run(const DriftScenario &scenario, const StepSchedule &schedule,
                                        std::size_t steps, std::uint64_t seed);

// ---- suites ----------------------------------------------------------------------------

struct TheoryTolerances {
	double redirection = 1e-6;      // closed form vs projected gradient
	double equilibrium = 1e-8;      // gradient norm and distance to A^{-1} b
	double convergence = 1e-3;      // noiseless iterate distance
	double regret_ratio = 0.2;      // tail / head mean gap, noisy case
	std::size_t redirection_problems = 1000;
	std::size_t redirection_probes = 10000;
	std::size_t ledger_steps = 1000;
	std::size_t agents = 5;
	std::size_t static_steps = 10000;
	std::size_t noisy_steps = 50000;
	std::size_t noisy_seeds = 10;
};

struct TheoremResult {
	int theorem = 0;
	std::string name;
	std::string parameters;
	std::string measured;
	std::string threshold;
	bool passed = false;
	double seconds = 0.0;
};

TheoremResult check_optimal_redirection(const TheoryTolerances &tol, std::uint64_t seed);
TheoremResult check_adaptive_convergence(const TheoryTolerances &tol, std::uint64_t seed);
TheoremResult check_energy_bound(const TheoryTolerances &tol, std::uint64_t seed);
TheoremResult check_equilibrium(const TheoryTolerances &tol, std::uint64_t seed);

// All four, in theorem order.
std::vector<TheoremResult> run_theory_suites(const TheoryTolerances &tol, std::uint64_t seed);

// Random symmetric positive definite agent: A = M'M + n I, b ~ N(0, I).
AgentProblem random_agent(SeededRng &rng, std::size_t dim);

} // namespace aero::theory
