#include "aero/theory.hpp"

#include "aero/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace aero::theory {

namespace {

std::string fmt(const char *format, double a) {
	char buf[64];
	std::snprintf(buf, sizeof buf, format, a);
	return buf;
}

template <class... Args>
std::string fmt_many(const char *format, Args... args) {
	char buf[256];
	std::snprintf(buf, sizeof buf, format, args...);
	return buf;
}

std::vector<double> random_in_ball(SeededRng &rng, std::size_t dim, double radius) {
	std::vector<double> x(dim);
	double n2 = 0.0;
	do {
		for (double &v : x) {
			v = rng.normal();
		}
		n2 = squared_norm(x);
	} while (n2 == 0.0);
	const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim)) / std::sqrt(n2);
	scale(x, r);
	return x;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
	return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

// ---- optimal redirection ---------------------------------------------------

void RedirectionProblem::validate() const {
	if (!(budget > 0.0)) {
		throw std::invalid_argument("redirection problem: budget epsilon_max must be > 0");
	}
	if (!(resistance > 0.0)) {
		throw std::invalid_argument("redirection problem: resistance must be > 0");
	}
	if (!all_finite(disturbance)) {
		throw std::invalid_argument("redirection problem: disturbance must be finite");
	}
}

std::vector<double> optimal_redirection(const RedirectionProblem &problem) {
	problem.validate();
	std::vector<double> rho = problem.disturbance;
	const double cap = problem.budget * problem.budget;
	const double n2 = squared_norm(rho);
	if (n2 <= cap) {
		return rho;
	}
	scale(rho, problem.budget / std::sqrt(n2));
	// Rounding can leave the result a few ulps outside the ball.
	while (squared_norm(rho) > cap) {
		scale(rho, 1.0 - 4.0 * std::numeric_limits<double>::epsilon());
	}
	return rho;
}

double redirection_cost(const RedirectionProblem &problem, std::span<const double> rho) {
	if (rho.size() != problem.disturbance.size()) {
		throw ShapeError("redirection cost: dimension mismatch");
	}
	double acc = 0.0;
	for (std::size_t i = 0; i < rho.size(); ++i) {
		const double d = problem.disturbance[i] - rho[i];
		acc += d * d;
	}
	return acc / problem.resistance;
}

std::vector<double> projected_gradient_redirection(const RedirectionProblem &problem, std::size_t iterations) {
	problem.validate();
	const std::size_t n = problem.disturbance.size();
	// grad J = -(2 / R)(epsilon - rho) has Lipschitz constant 2 / R; step half of 1/L.
	const double step = problem.resistance / 4.0;
	std::vector<double> rho(n, 0.0);
	for (std::size_t it = 0; it < iterations; ++it) {
		for (std::size_t i = 0; i < n; ++i) {
			const double grad = -2.0 / problem.resistance * (problem.disturbance[i] - rho[i]);
			rho[i] -= step * grad;
		}
		const double len = norm(rho);
		if (len > problem.budget) {
			scale(rho, problem.budget / len);
		}
	}
	return rho;
}

// ---- energy bound ---------------------------------------------------------------

EnergyBoundReport verify_energy_bound(const EnergyLedger &ledger) {
	if (ledger.energies.empty()) {
		throw std::invalid_argument("energy bound: ledger needs at least one step");
	}
	if (!(ledger.budget > 0.0) || !(ledger.slack >= 1.0)) {
		throw std::invalid_argument("energy bound: need budget > 0 and slack C >= 1");
	}
	EnergyBoundReport r;
	r.steps = ledger.energies.size();
	const double per_step_cap = ledger.slack * (ledger.budget * ledger.budget);
	// Summing (e_t - cap) keeps the comparison exact: every term rounds with its
	// own sign, so the result is <= 0 whenever each e_t <= cap.
	double excess = 0.0;
	for (double e : ledger.energies) {
		if (!(e >= 0.0)) {
			throw std::invalid_argument("energy bound: energies must be non-negative");
		}
		r.lhs += e;
		excess += e - per_step_cap;
	}
	const double steps = static_cast<double>(r.steps);
	r.rhs = steps * per_step_cap;
	r.holds = excess <= 0.0;
	r.tight_slack = r.lhs / (steps * ledger.budget * ledger.budget);
	return r;
}

// ---- multi-agent equilibrium ------------------------------------------------------

namespace {

std::vector<double> matvec(const Tensor &a, std::span<const double> x) {
	const std::size_t n = x.size();
	std::vector<double> y(n, 0.0);
	for (std::size_t i = 0; i < n; ++i) {
		double acc = 0.0;
		for (std::size_t j = 0; j < n; ++j) {
			acc += a.at(i, j) * x[j];
		}
		y[i] = acc;
	}
	return y;
}

// Lower-triangular factor, or empty when a pivot is not positive.
std::vector<double> cholesky(const Tensor &a) {
	const std::size_t n = a.dim(0);
	std::vector<double> l(n * n, 0.0);
	for (std::size_t j = 0; j < n; ++j) {
		double d = a.at(j, j);
		for (std::size_t k = 0; k < j; ++k) {
			d -= l[j * n + k] * l[j * n + k];
		}
		if (!(d > 0.0)) {
			return {};
		}
		l[j * n + j] = std::sqrt(d);
		for (std::size_t i = j + 1; i < n; ++i) {
			double s = a.at(i, j);
			for (std::size_t k = 0; k < j; ++k) {
				s -= l[i * n + k] * l[j * n + k];
			}
			l[i * n + j] = s / l[j * n + j];
		}
	}
	return l;
}

} // namespace

double AgentProblem::loss(std::span<const double> rho) const {
	const auto a_rho = matvec(curvature, rho);
	return 0.5 * dot(rho, a_rho) - dot(linear, rho);
}

std::vector<double> AgentProblem::gradient(std::span<const double> rho) const {
	auto g = matvec(curvature, rho);
	for (std::size_t i = 0; i < g.size(); ++i) {
		g[i] -= linear[i];
	}
	return g;
}

void AgentProblem::validate() const {
	const std::size_t n = linear.size();
	if (n == 0 || curvature.rank() != 2 || curvature.dim(0) != n || curvature.dim(1) != n) {
		throw std::invalid_argument("agent problem: curvature must be an n x n matrix matching b");
	}
	for (std::size_t i = 0; i < n; ++i) {
		for (std::size_t j = 0; j < i; ++j) {
			const double a = curvature.at(i, j);
			const double b = curvature.at(j, i);
			if (std::abs(a - b) > 1e-12 * std::max({1.0, std::abs(a), std::abs(b)})) {
				throw std::invalid_argument("agent problem: curvature matrix is not symmetric");
			}
		}
	}
	if (cholesky(curvature).empty()) {
		throw std::invalid_argument("agent problem: curvature matrix is not positive definite");
	}
}

std::vector<double> solve_spd(const Tensor &a, std::span<const double> b) {
	const std::size_t n = b.size();
	const auto l = cholesky(a);
	if (l.empty()) {
		throw std::invalid_argument("solve_spd: matrix is not positive definite");
	}
	std::vector<double> y(n);
	for (std::size_t i = 0; i < n; ++i) {
		double s = b[i];
		for (std::size_t k = 0; k < i; ++k) {
			s -= l[i * n + k] * y[k];
		}
		y[i] = s / l[i * n + i];
	}
	std::vector<double> x(n);
	for (std::size_t i = n; i-- > 0;) {
		double s = y[i];
		for (std::size_t k = i + 1; k < n; ++k) {
			s -= l[k * n + i] * x[k];
		}
		x[i] = s / l[i * n + i];
	}
	return x;
}

EquilibriumResult solve_multiagent_equilibrium(const std::vector<AgentProblem> &agents, double tolerance,
                                               std::size_t max_rounds) {
	if (!(tolerance >= 0.0)) {
		throw std::invalid_argument("equilibrium: tolerance must be >= 0");
	}
	for (const auto &a : agents) {
		a.validate();
	}
	struct CgState {
		std::vector<double> x, r, p;
		double rs = 0.0;
		std::size_t since_restart = 0;
	};
	std::vector<CgState> cg(agents.size());
	for (std::size_t i = 0; i < agents.size(); ++i) {
		cg[i].x.assign(agents[i].dim(), 0.0);
		cg[i].r = agents[i].linear; // b - A * 0
		cg[i].p = cg[i].r;
		cg[i].rs = squared_norm(cg[i].r);
	}

	EquilibriumResult result;
	auto max_grad = [&] {
		double m = 0.0;
		for (std::size_t i = 0; i < agents.size(); ++i) {
			m = std::max(m, norm(agents[i].gradient(cg[i].x)));
		}
		return m;
	};

	result.max_gradient_norm = max_grad();
	while (!(result.max_gradient_norm < tolerance) && result.rounds < max_rounds) {
		++result.rounds;
		for (std::size_t i = 0; i < agents.size(); ++i) {
			auto &s = cg[i];
			const auto &a = agents[i];
			if (s.since_restart == a.dim() || s.rs == 0.0) {
				// Restart from the true residual.
				s.r = a.gradient(s.x);
				scale(s.r, -1.0);
				s.p = s.r;
				s.rs = squared_norm(s.r);
				s.since_restart = 0;
			}
			const auto ap = matvec(a.curvature, s.p);
			const double pap = dot(s.p, ap);
			if (!(pap > 0.0)) {
				continue;
			}
			const double alpha = s.rs / pap;
			axpy(alpha, s.p, s.x);
			axpy(-alpha, ap, s.r);
			const double rs_new = squared_norm(s.r);
			const double beta = s.rs > 0.0 ? rs_new / s.rs : 0.0;
			for (std::size_t k = 0; k < s.p.size(); ++k) {
				s.p[k] = s.r[k] + beta * s.p[k];
			}
			s.rs = rs_new;
			++s.since_restart;
		}
		result.max_gradient_norm = max_grad();
	}
	result.converged = result.max_gradient_norm < tolerance;
	for (auto &s : cg) {
		result.strategies.push_back(std::move(s.x));
	}
	return result;
}

AgentProblem random_agent(SeededRng &rng, std::size_t dim) {
	std::vector<double> m(dim * dim);
	for (double &v : m) {
		v = rng.normal();
	}
	Tensor a({dim, dim});
	for (std::size_t i = 0; i < dim; ++i) {
		for (std::size_t j = 0; j < dim; ++j) {
			double acc = 0.0;
			for (std::size_t k = 0; k < dim; ++k) {
				acc += m[k * dim + i] * m[k * dim + j];
			}
			a.at(i, j) = acc + (i == j ? static_cast<double>(dim) : 0.0);
		}
	}
	std::vector<double> b(dim);
	for (double &v : b) {
		v = rng.normal();
	}
	return AgentProblem{std::move(a), std::move(b)};
}

// ---- adaptive convergence ----------------------------------------------------------

StepSchedule::StepSchedule(double initial, double power) : initial_(initial), power_(power) {
	if (!(initial > 0.0) || !std::isfinite(initial)) {
		throw std::invalid_argument("step schedule: initial step must be > 0 (otherwise sum eta_t is finite)");
	}
	if (!(power > 0.5 && power <= 1.0)) {
		throw std::invalid_argument("step schedule: decay power must lie in (0.5, 1] for sum eta_t = inf and "
		                            "sum eta_t^2 < inf");
	}
}

double StepSchedule::operator()(std::size_t t) const {
	if (t == 0) {
		throw std::invalid_argument("step schedule: steps are numbered from 1");
	}
	return initial_ / std::pow(static_cast<double>(t), power_);
}

ConvergenceRun adaptive_convergence_run(const DriftScenario &scenario, const StepSchedule &schedule,
                                        std::size_t steps, std::uint64_t seed) {
	const std::size_t d = scenario.dim;
	if (d == 0 || steps == 0) {
		throw std::invalid_argument("convergence run: need dim >= 1 and at least one step");
	}
	if (!(scenario.drift >= 0.0) || !(scenario.noise >= 0.0)) {
		throw std::invalid_argument("convergence run: drift and noise must be >= 0");
	}
	auto sized = [d](const std::vector<double> &v, const char *what) {
		if (!v.empty() && v.size() != d) {
			throw std::invalid_argument(std::string("convergence run: ") + what + " has wrong dimension");
		}
	};
	sized(scenario.curvature, "curvature");
	sized(scenario.minimizer, "minimizer");
	sized(scenario.start, "start");

	SeededRng rng(seed);
	const std::vector<double> curv = scenario.curvature.empty() ? std::vector<double>(d, 1.0) : scenario.curvature;
	for (double a : curv) {
		if (!(a > 0.0)) {
			throw std::invalid_argument("convergence run: curvature must be positive");
		}
	}
	std::vector<double> c = scenario.minimizer;
	if (c.empty()) {
		c.resize(d);
		for (double &v : c) {
			v = rng.uniform(-1.0, 1.0);
		}
	}
	std::vector<double> rho = scenario.start.empty() ? std::vector<double>(d, 0.0) : scenario.start;

	ConvergenceRun run;
	run.gaps.reserve(steps);
	run.average_gap.reserve(steps);
	double cumulative = 0.0;
	std::vector<double> dir(d);
	for (std::size_t t = 1; t <= steps; ++t) {
		double gap = 0.0;
		for (std::size_t i = 0; i < d; ++i) {
			const double e = rho[i] - c[i];
			gap += 0.5 * curv[i] * e * e;
		}
		run.gaps.push_back(gap);
		cumulative += gap;
		run.average_gap.push_back(cumulative / static_cast<double>(t));

		const double eta = schedule(t);
		for (std::size_t i = 0; i < d; ++i) {
			double g = curv[i] * (rho[i] - c[i]);
			if (scenario.noise > 0.0) {
				g += scenario.noise * rng.normal();
			}
			rho[i] -= eta * g;
		}
		if (scenario.drift > 0.0) {
			for (double &v : dir) {
				v = rng.normal();
			}
			const double len = norm(dir);
			if (len > 0.0) {
				axpy(scenario.drift / len, dir, c);
			}
		}
	}
	const std::size_t window = std::max<std::size_t>(1, steps / 10);
	for (std::size_t t = 0; t < window; ++t) {
		run.head_mean += run.gaps[t];
		run.tail_mean += run.gaps[steps - window + t];
	}
	run.head_mean /= static_cast<double>(window);
	run.tail_mean /= static_cast<double>(window);
	run.final_iterate = rho;
	run.final_minimizer = c;
	std::vector<double> diff(d);
	for (std::size_t i = 0; i < d; ++i) {
		diff[i] = rho[i] - c[i];
	}
	run.distance_to_minimizer = norm(diff);
	return run;
}

// ---- suites ----------------------------------------------------------------------------

TheoremResult check_optimal_redirection(const TheoryTolerances &tol, std::uint64_t seed) {
	const auto start = std::chrono::steady_clock::now();
	SeededRng rng(seed);
	double max_diff = 0.0;
	std::size_t probe_violations = 0;
	std::size_t budget_violations = 0;
	std::size_t direction_violations = 0;
	for (std::size_t p = 0; p < tol.redirection_problems; ++p) {
		RedirectionProblem prob;
		const std::size_t dim = 1 + static_cast<std::size_t>(rng.below(8));
		const double spread = rng.uniform(0.1, 3.0);
		prob.disturbance.resize(dim);
		for (double &v : prob.disturbance) {
			v = spread * rng.normal();
		}
		prob.budget = rng.uniform(0.1, 3.0);
		prob.resistance = rng.uniform(0.5, 5.0);

		const auto rho = optimal_redirection(prob);
		const auto oracle = projected_gradient_redirection(prob);
		for (std::size_t i = 0; i < dim; ++i) {
			max_diff = std::max(max_diff, std::abs(rho[i] - oracle[i]));
		}
		if (norm(rho) > prob.budget) {
			++budget_violations;
		}
		if (dot(rho, prob.disturbance) < 0.0) {
			++direction_violations;
		}
		const double best = redirection_cost(prob, rho);
		for (std::size_t k = 0; k < tol.redirection_probes; ++k) {
			const auto x = random_in_ball(rng, dim, prob.budget);
			if (redirection_cost(prob, x) < best) {
				++probe_violations;
			}
		}
	}
	TheoremResult r;
	r.theorem = 1;
	r.name = "optimal-redirection";
	r.parameters = fmt_many("problems=%zu dims=1-8 probes=%zu", tol.redirection_problems, tol.redirection_probes);
	r.measured = fmt_many("max_oracle_diff=%.3g probe_violations=%zu budget_violations=%zu direction_violations=%zu",
	                      max_diff, probe_violations, budget_violations, direction_violations);
	r.threshold = fmt("oracle_diff<%.3g", tol.redirection);
	r.passed = max_diff < tol.redirection && probe_violations == 0 && budget_violations == 0 &&
	           direction_violations == 0;
	r.seconds = seconds_since(start);
	return r;
}

TheoremResult check_adaptive_convergence(const TheoryTolerances &tol, std::uint64_t seed) {
	const auto start = std::chrono::steady_clock::now();
	const StepSchedule schedule(1.0, 1.0);

	DriftScenario fixed;
	fixed.dim = 2;
	fixed.curvature = {1.0, 1.5};
	const auto noiseless = adaptive_convergence_run(fixed, schedule, tol.static_steps, seed);

	DriftScenario noisy = fixed;
	noisy.noise = 1.0;
	double head = 0.0;
	double tail = 0.0;
	bool every_seed_improves = true;
	for (std::size_t s = 0; s < tol.noisy_seeds; ++s) {
		const auto run = adaptive_convergence_run(noisy, schedule, tol.noisy_steps, seed + 1 + s);
		head += run.head_mean;
		tail += run.tail_mean;
		const std::size_t tenth = std::max<std::size_t>(1, tol.noisy_steps / 10);
		if (!(run.average_gap.back() < run.average_gap[tenth - 1])) {
			every_seed_improves = false;
		}
	}
	const double ratio = head > 0.0 ? tail / head : 0.0;

	TheoremResult r;
	r.theorem = 2;
	r.name = "adaptive-convergence";
	r.parameters = fmt_many("eta_t=1/t static_T=%zu noisy_T=%zu seeds=%zu noise_std=1", tol.static_steps,
	                        tol.noisy_steps, tol.noisy_seeds);
	r.measured = fmt_many("static_distance=%.3g tail_head_ratio=%.4g avg_gap_decreasing=%d",
	                      noiseless.distance_to_minimizer, ratio, every_seed_improves ? 1 : 0);
	r.threshold = fmt_many("distance<%.3g ratio<%.3g", tol.convergence, tol.regret_ratio);
	r.passed = noiseless.distance_to_minimizer < tol.convergence && ratio < tol.regret_ratio && every_seed_improves;
	r.seconds = seconds_since(start);
	return r;
}

TheoremResult check_energy_bound(const TheoryTolerances &tol, std::uint64_t seed) {
	const auto start = std::chrono::steady_clock::now();
	SeededRng rng(seed);
	EnergyLedger ledger;
	ledger.budget = 1.0;
	ledger.slack = 1.0;
	std::size_t clipped = 0;
	for (std::size_t t = 0; t < tol.ledger_steps; ++t) {
		RedirectionProblem prob;
		prob.budget = ledger.budget;
		prob.disturbance.resize(4);
		const double spread = rng.uniform(0.0, 1.5);
		for (double &v : prob.disturbance) {
			v = spread * rng.normal();
		}
		const auto rho = optimal_redirection(prob);
		if (squared_norm(prob.disturbance) > prob.budget * prob.budget) {
			++clipped;
		}
		ledger.energies.push_back(squared_norm(rho));
	}
	const auto report = verify_energy_bound(ledger);

	TheoremResult r;
	r.theorem = 3;
	r.name = "energy-bound";
	r.parameters = fmt_many("T=%zu budget=%.3g C=%.3g clipped_steps=%zu", tol.ledger_steps, ledger.budget,
	                        ledger.slack, clipped);
	r.measured = fmt_many("lhs=%.10g rhs=%.10g tight_C=%.6g", report.lhs, report.rhs, report.tight_slack);
	r.threshold = "lhs<=rhs";
	r.passed = report.holds;
	r.seconds = seconds_since(start);
	return r;
}

TheoremResult check_equilibrium(const TheoryTolerances &tol, std::uint64_t seed) {
	const auto start = std::chrono::steady_clock::now();
	SeededRng rng(seed);
	std::vector<AgentProblem> agents;
	for (std::size_t i = 0; i < tol.agents; ++i) {
		agents.push_back(random_agent(rng, 1 + static_cast<std::size_t>(rng.below(8))));
	}
	const auto eq = solve_multiagent_equilibrium(agents, tol.equilibrium);
	double max_distance = 0.0;
	double max_line_gain = 0.0;
	for (std::size_t i = 0; i < agents.size(); ++i) {
		const auto exact = solve_spd(agents[i].curvature, agents[i].linear);
		for (std::size_t k = 0; k < exact.size(); ++k) {
			max_distance = std::max(max_distance, std::abs(exact[k] - eq.strategies[i][k]));
		}
		// Best decrease along direction d from rho: (g'd)^2 / (2 d'Ad).
		const auto g = agents[i].gradient(eq.strategies[i]);
		for (int k = 0; k < 100; ++k) {
			std::vector<double> dir(agents[i].dim());
			for (double &v : dir) {
				v = rng.normal();
			}
			const double gd = dot(g, dir);
			const double dad = dot(dir, matvec(agents[i].curvature, dir));
			if (dad > 0.0) {
				max_line_gain = std::max(max_line_gain, gd * gd / (2.0 * dad));
			}
		}
	}

	TheoremResult r;
	r.theorem = 4;
	r.name = "multiagent-equilibrium";
	r.parameters = fmt_many("agents=%zu dims=1-8 tol=%.3g", tol.agents, tol.equilibrium);
	r.measured = fmt_many("rounds=%zu max_grad_norm=%.3g max_distance=%.3g max_line_gain=%.3g converged=%d",
	                      eq.rounds, eq.max_gradient_norm, max_distance, max_line_gain, eq.converged ? 1 : 0);
	r.threshold = fmt_many("grad_norm<%.3g distance<%.3g", tol.equilibrium, tol.equilibrium);
	r.passed = eq.converged && max_distance < tol.equilibrium && max_line_gain <= tol.equilibrium;
	r.seconds = seconds_since(start);
	return r;
}

std::vector<TheoremResult> run_theory_suites(const TheoryTolerances &tol, std::uint64_t seed) {
	return {check_optimal_redirection(tol, seed), check_adaptive_convergence(tol, seed + 1000),
	        check_energy_bound(tol, seed + 2000), check_equilibrium(tol, seed + 3000)};
}

} // namespace aero::theory
