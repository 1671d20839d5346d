#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aero/error.hpp"
#include "aero/optimizers.hpp"

#include <json.hpp>

#include <cmath>
#include <numeric>

using namespace aero;

namespace {

QrnnConfig tiny_config() {
	QrnnConfig c;
	c.feature_dim = 1;
	c.conv1_channels = 1;
	c.conv2_channels = 1;
	c.kernel_size = 1;
	c.hidden_dim = 1;
	c.horizon = 1;
	c.quantiles = {0.25, 0.75};
	return c;
}

QrnnConfig small_config() {
	QrnnConfig c;
	c.feature_dim = 6;
	c.conv1_channels = 2;
	c.conv2_channels = 3;
	c.hidden_dim = 4;
	c.horizon = 3;
	return c;
}

struct Problem {
	QrnnParams params;
	Tensor x, y;
};

Problem make_problem(const QrnnConfig &c, std::uint64_t seed, std::size_t batch) {
	SeededRng rng(seed);
	QrnnParams p = init_params(c, rng);
	for (double &v : p.flat()) {
		v += 0.1 * rng.normal();
	}
	return {p, gaussian_sample(rng, {batch, c.feature_dim}, 1.0), gaussian_sample(rng, {batch, c.horizon}, 1.0)};
}

double sum_norms(const std::vector<std::vector<double>> &vs) {
	double s = 0.0;
	for (const auto &v : vs) {
		s += norm(v);
	}
	return s;
}

} // namespace

TEST_CASE("sgd step") {
	std::vector<double> theta{1.0};
	sgd_step(theta, std::vector<double>{2.0}, 0.1);
	CHECK(theta[0] == doctest::Approx(0.8).epsilon(1e-15));
	std::vector<double> same{3.0, -1.0};
	sgd_step(same, std::vector<double>{0.0, 0.0}, 0.5);
	CHECK(same == std::vector<double>{3.0, -1.0});
	CHECK_THROWS_AS(sgd_step(same, std::vector<double>{1.0}, 0.1), ShapeError);
}

TEST_CASE("adam first step matches the bias-corrected closed form") {
	AdamState s;
	s.lr = 0.01;
	std::vector<double> theta{0.5, -2.0, 1.0};
	const std::vector<double> g{0.3, -4.0, 2e-3};
	adam_step(theta, g, s);
	const std::vector<double> start{0.5, -2.0, 1.0};
	for (int i = 0; i < 3; ++i) {
		const double m_hat = (1 - s.beta1) * g[i] / (1 - s.beta1);
		const double v_hat = (1 - s.beta2) * g[i] * g[i] / (1 - s.beta2);
		CHECK(std::abs(theta[i] - (start[i] - s.lr * m_hat / (std::sqrt(v_hat) + s.epsilon))) < 1e-12);
	}
	AdamState z;
	std::vector<double> still{1.0, 2.0};
	for (int k = 0; k < 5; ++k) {
		adam_step(still, std::vector<double>{0.0, 0.0}, z);
	}
	CHECK(std::abs(still[0] - 1.0) < 1e-15);
	CHECK(std::abs(still[1] - 2.0) < 1e-15);
	CHECK_THROWS_AS(adam_step(still, std::vector<double>{1.0}, z), ShapeError);
}

TEST_CASE("aero-shared degenerates to sgd and to classical momentum") {
	SeededRng rng(1);
	AeroSharedState s;
	s.noise = 0.0;
	s.momentum = 0.0;
	s.lr = 0.1;
	std::vector<double> theta{1.0, 2.0}, plain{1.0, 2.0};
	const std::vector<double> g{0.5, -1.5};
	aero_shared_step(theta, g, s, rng);
	sgd_step(plain, g, 0.1);
	CHECK(theta == plain);

	AeroSharedState m;
	m.noise = 0.0;
	m.momentum = 0.9;
	m.lr = 0.1;
	std::vector<double> a{1.0, 2.0}, b{1.0, 2.0}, vel{0.0, 0.0};
	for (int step = 0; step < 5; ++step) {
		const std::vector<double> grad{0.1 * step + 0.5, -1.0};
		aero_shared_step(a, grad, m, rng);
		for (int i = 0; i < 2; ++i) {
			vel[i] = 0.9 * vel[i] + 0.1 * grad[i];
			b[i] -= 0.1 * vel[i];
		}
	}
	CHECK(a == b);
}

TEST_CASE("aero-shared replays a scripted recomputation") {
	AeroSharedState s;
	s.noise = 0.1;
	s.momentum = 0.9;
	s.lr = 0.05;
	SeededRng rng(77), script_rng(77);
	std::vector<double> theta{0.3, -0.2, 1.1, 0.0}, mine = theta, m(4, 0.0);
	for (int step = 0; step < 10; ++step) {
		std::vector<double> grad(4);
		for (int i = 0; i < 4; ++i) {
			grad[i] = std::sin(step + i) - mine[i];
		}
		aero_shared_step(theta, grad, s, rng);
		for (int i = 0; i < 4; ++i) {
			const double gp = grad[i] + 0.1 * script_rng.normal();
			m[i] = 0.9 * m[i] + 0.1 * gp;
			mine[i] -= 0.05 * m[i];
		}
		for (int i = 0; i < 4; ++i) {
			CHECK(std::abs(theta[i] - mine[i]) < 1e-12);
		}
	}
	CHECK(rng == script_rng);
}

TEST_CASE("aero-shared rejects bad input") {
	SeededRng rng(2);
	AeroSharedState s;
	std::vector<double> theta{1.0};
	CHECK_THROWS_AS(aero_shared_step(theta, std::vector<double>{NAN}, s, rng), NumericalError);
	s.momentum = 1.0;
	CHECK_THROWS_AS(aero_shared_step(theta, std::vector<double>{1.0}, s, rng), std::invalid_argument);
	s.momentum = 0.5;
	s.noise = -1.0;
	CHECK_THROWS_AS(aero_shared_step(theta, std::vector<double>{1.0}, s, rng), std::invalid_argument);
}

TEST_CASE("adversarial gradient") {
	const QrnnConfig c = small_config();
	Problem pr = make_problem(c, 3, 5);

	ForwardCache cache;
	forward(pr.params, pr.x, &cache);
	BackwardOptions opts;
	opts.input_gradients = true;
	const auto natural = backward_quantile_gradients(cache, pr.params, pr.y, opts);

	std::uint64_t evals = 0;
	CHECK(adversarial_gradient(pr.params, pr.x, pr.y, 1, 0.0, natural.inputs[1], evals) == natural.params[1]);
	CHECK(evals == 1);

	// Replay: perturb by hand, then run an ordinary forward/backward.
	const double eps = 0.01;
	Tensor shifted = pr.x;
	for (std::size_t i = 0; i < shifted.size(); ++i) {
		const double g = natural.inputs[1][i];
		shifted[i] += eps * (g > 0 ? 1.0 : g < 0 ? -1.0 : 0.0);
	}
	ForwardCache replay;
	forward(pr.params, shifted, &replay);
	const auto expected = backward_quantile_gradients(replay, pr.params, pr.y).params[1];
	const auto got = adversarial_gradient(pr.params, pr.x, pr.y, 1, eps, natural.inputs[1], evals);
	CHECK(evals == 2);
	for (std::size_t i = 0; i < got.size(); ++i) {
		CHECK(std::abs(got[i] - expected[i]) < 1e-10);
	}

	// Flat region: with zero conv1 weights the input gradient vanishes.
	Problem flat = make_problem(c, 4, 5);
	for (double &w : flat.params.view(Block::conv1_weight)) {
		w = 0.0;
	}
	ForwardCache fc;
	forward(flat.params, flat.x, &fc);
	const auto nat = backward_quantile_gradients(fc, flat.params, flat.y, opts);
	for (double g : nat.inputs[0].values()) {
		CHECK(g == 0.0);
	}
	CHECK(adversarial_gradient(flat.params, flat.x, flat.y, 0, 0.5, evals) == nat.params[0]);
}

TEST_CASE("momentum redistribution") {
	std::vector<std::vector<double>> v{{3.0, 4.0}, {0.0, 5.0}};
	auto copy = v;
	CHECK(redistribute_momentum(copy, 10.0) == 1.0);
	CHECK(copy == v);
	std::vector<std::vector<double>> zero{{0.0}, {0.0}};
	CHECK(redistribute_momentum(zero, 3.0) == 1.0);
	CHECK(zero == std::vector<std::vector<double>>{{0.0}, {0.0}});
	CHECK_THROWS_AS(redistribute_momentum(v, -1.0), std::invalid_argument);

	SeededRng rng(5);
	for (int trial = 0; trial < 20; ++trial) {
		std::vector<std::vector<double>> r(3, std::vector<double>(7));
		for (auto &vec : r) {
			for (double &x : vec) {
				x = rng.normal();
			}
		}
		const auto before = r;
		const double scale = redistribute_momentum(r, 5.0);
		CHECK(std::abs(sum_norms(r) - 5.0) < 1e-12);
		for (std::size_t q = 0; q < 3; ++q) {
			for (std::size_t i = 0; i < 7; ++i) {
				CHECK(r[q][i] == doctest::Approx(scale * before[q][i]).epsilon(1e-15));
			}
			const double cos = dot(r[q], before[q]) / (norm(r[q]) * norm(before[q]));
			CHECK(cos == doctest::Approx(1.0).epsilon(1e-14));
		}
	}
}

TEST_CASE("aero-quantile config validation") {
	const QrnnParams p(small_config());
	AeroQuantileConfig cfg;
	cfg.energy_allocation = 1.5;
	CHECK_THROWS_AS(make_aero_quantile_state(p, cfg), std::invalid_argument);
	cfg = {};
	cfg.momentum = 1.0;
	CHECK_THROWS_AS(make_aero_quantile_state(p, cfg), std::invalid_argument);
	cfg = {};
	cfg.cooperation_matrix = std::vector<double>(9, 0.1);
	CHECK_THROWS_AS(make_aero_quantile_state(p, cfg), std::invalid_argument);
	cfg = {};
	cfg.base_lr = {0.1};
	CHECK_THROWS_AS(make_aero_quantile_state(p, cfg), std::invalid_argument);
	cfg = {};
	const auto s = make_aero_quantile_state(p, cfg);
	CHECK(s.cooperation[0] == 0.0);
	CHECK(s.cooperation[1] == doctest::Approx(0.05));
}

TEST_CASE("aero-quantile step replays a straight-line recomputation") {
	const QrnnConfig c = tiny_config();
	Problem pr = make_problem(c, 6, 4);
	AeroQuantileConfig cfg;
	cfg.energy_allocation = 0.3;
	cfg.momentum = 0.6;
	cfg.base_lr = {0.05, 0.08};
	cfg.energy_modulation = 0.7;
	cfg.adversarial_radius = 0.02;
	cfg.cooperation_matrix = {0.0, 0.2, 0.15, 0.0};
	cfg.target_decay = 0.9;
	AeroQuantileState state = make_aero_quantile_state(pr.params, cfg);

	QrnnParams mine = pr.params;
	const std::size_t nq = 2, P = mine.size();
	std::vector<std::vector<double>> vel(nq, std::vector<double>(P, 0.0));
	double target = 0.0;

	for (int step = 1; step <= 3; ++step) {
		// Independent recomputation on `mine`.
		ForwardCache cache;
		const auto preds = forward(mine, pr.x, &cache);
		BackwardOptions opts;
		opts.input_gradients = true;
		const auto nat = backward_quantile_gradients(cache, mine, pr.y, opts);
		std::vector<double> energy(nq), lr(nq), coefs(nq), rnorm(nq), delta(nq);
		for (std::size_t q = 0; q < nq; ++q) {
			const auto &G = nat.params[q];
			Tensor shifted = pr.x;
			for (std::size_t i = 0; i < shifted.size(); ++i) {
				const double g = nat.inputs[q][i];
				shifted[i] += 0.02 * (g > 0 ? 1.0 : g < 0 ? -1.0 : 0.0);
			}
			ForwardCache adv_cache;
			forward(mine, shifted, &adv_cache);
			const auto Gadv = backward_quantile_gradients(adv_cache, mine, pr.y).params[q];

			double m = 0.0;
			for (double v : preds[q].values()) {
				m += v;
			}
			m /= static_cast<double>(preds[q].size());
			double var = 0.0;
			for (double v : preds[q].values()) {
				var += (v - m) * (v - m);
			}
			delta[q] = var / static_cast<double>(preds[q].size());

			double an = 0.0;
			for (double v : Gadv) {
				an += v * v;
			}
			an = std::sqrt(an);
			double num = 0.0, den = 0.0;
			for (std::size_t i = 0; i < P; ++i) {
				const double d = Gadv[i] + (an > 0 ? delta[q] * Gadv[i] / an : 0.0);
				num += d * G[i];
				den += G[i] * G[i];
			}
			coefs[q] = den > 0 ? num / den : 0.0;
			std::vector<double> R(P);
			double r2 = 0.0;
			for (std::size_t i = 0; i < P; ++i) {
				R[i] = coefs[q] * G[i] + cfg.cooperation_matrix[q * nq + (1 - q)] * nat.params[1 - q][i];
				r2 += R[i] * R[i];
			}
			rnorm[q] = std::sqrt(r2);
			energy[q] = 0.3 * r2 + 0.7 * den;
			lr[q] = cfg.base_lr[q] / (1.0 + 0.7 * energy[q]);
			for (std::size_t i = 0; i < P; ++i) {
				vel[q][i] = 0.6 * vel[q][i] + 0.4 * R[i];
			}
		}
		const double total = sum_norms(vel);
		target = step == 1 ? total : 0.9 * target + 0.1 * total;
		const double s = total > 0 ? target / total : 1.0;
		for (auto &v : vel) {
			for (double &x : v) {
				x *= s;
			}
		}
		for (std::size_t q = 0; q < nq; ++q) {
			for (std::size_t i = 0; i < P; ++i) {
				mine.flat()[i] -= lr[q] * vel[q][i];
			}
		}

		const StepTrace trace = aero_quantile_step(pr.params, pr.x, pr.y, state);
		CHECK(trace.step == static_cast<std::uint64_t>(step));
		CHECK(std::abs(trace.momentum_target - target) < 1e-10);
		CHECK(std::abs(trace.redistribution_scale - s) < 1e-10);
		for (std::size_t q = 0; q < nq; ++q) {
			const auto &t = trace.quantiles[q];
			CHECK(std::abs(t.anticipation - delta[q]) < 1e-10);
			CHECK(std::abs(t.alignment - coefs[q]) < 1e-10);
			CHECK(std::abs(t.redirected_norm - rnorm[q]) < 1e-10);
			CHECK(std::abs(t.energy - energy[q]) < 1e-10);
			CHECK(std::abs(t.lr - lr[q]) < 1e-10);
			CHECK(std::abs(t.velocity_norm - norm(vel[q])) < 1e-10);
			CHECK(t.grad_evals == 2);
		}
		for (std::size_t i = 0; i < P; ++i) {
			CHECK(std::abs(pr.params.flat()[i] - mine.flat()[i]) < 1e-10);
		}
	}
	CHECK(state.grad_evals == 3 * 2 * nq);
}

TEST_CASE("energy allocation boundary and bracket") {
	const QrnnConfig c = small_config();
	for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
		Problem pr = make_problem(c, 8, 6);
		AeroQuantileConfig cfg;
		cfg.energy_allocation = lambda;
		AeroQuantileState st = make_aero_quantile_state(pr.params, cfg);
		for (int step = 0; step < 5; ++step) {
			const StepTrace t = aero_quantile_step(pr.params, pr.x, pr.y, st);
			for (const auto &q : t.quantiles) {
				const double r2 = q.redirected_norm * q.redirected_norm;
				const double g2 = q.grad_norm * q.grad_norm;
				CHECK(q.energy >= std::min(r2, g2) * (1 - 1e-12));
				CHECK(q.energy <= std::max(r2, g2) * (1 + 1e-12));
				if (lambda == 1.0) {
					CHECK(q.energy == r2);
				}
			}
		}
	}
}

TEST_CASE("clamp_alignment zeroes negative projection coefficients") {
	const QrnnConfig c = small_config();
	bool saw_negative = false;
	for (std::uint64_t seed = 0; seed < 30 && !saw_negative; ++seed) {
		Problem pr = make_problem(c, seed, 3);
		AeroQuantileConfig cfg;
		cfg.adversarial_radius = 2.0;
		auto plain_state = make_aero_quantile_state(pr.params, cfg);
		QrnnParams copy = pr.params;
		const StepTrace t = aero_quantile_step(copy, pr.x, pr.y, plain_state);
		for (std::size_t q = 0; q < t.quantiles.size(); ++q) {
			if (t.quantiles[q].alignment < 0) {
				saw_negative = true;
				cfg.clamp_alignment = true;
				auto clamped_state = make_aero_quantile_state(pr.params, cfg);
				QrnnParams other = pr.params;
				const StepTrace tc = aero_quantile_step(other, pr.x, pr.y, clamped_state);
				CHECK(tc.quantiles[q].alignment == 0.0);
			}
		}
	}
	CHECK(saw_negative);
}

TEST_CASE("redistribution conserves the momentum norm against its target") {
	const QrnnConfig c = small_config();
	Problem pr = make_problem(c, 9, 8);
	AeroQuantileConfig cfg;
	AeroQuantileState st = make_aero_quantile_state(pr.params, cfg);
	for (int step = 0; step < 50; ++step) {
		const StepTrace t = aero_quantile_step(pr.params, pr.x, pr.y, st);
		CHECK(std::abs(sum_norms(st.velocity) - t.momentum_target) <= 1e-6 * t.momentum_target);
		CHECK(std::abs(t.velocity_norm_sum - t.momentum_target) <= 1e-6 * t.momentum_target);
	}
}

TEST_CASE("degenerate aero-quantile equals per-quantile sgd bit for bit") {
	const QrnnConfig c = small_config();
	Problem pr = make_problem(c, 10, 40);
	OptimizerSettings sgd;
	sgd.kind = OptimizerKind::sgd;
	sgd.lr = 0.05;
	OptimizerSettings aq = sgd;
	aq.kind = OptimizerKind::aero_quantile;
	aq.quantile.default_lr = 0.05;
	aq.quantile.adversarial_radius = 0.0;
	aq.quantile.anticipation = false;
	aq.quantile.cooperation = 0.0;
	aq.quantile.energy_modulation = 0.0;
	aq.quantile.momentum = 0.0;
	aq.quantile.redistribute = false;

	QrnnParams a = pr.params, b = pr.params;
	ModelOptimizer oa(sgd, a), ob(aq, b);
	SeededRng ra(1), rb(1);
	for (std::size_t begin = 0; begin < 40; begin += 8) {
		std::vector<double> xs(pr.x.values().begin() + begin * c.feature_dim,
		                       pr.x.values().begin() + (begin + 8) * c.feature_dim);
		std::vector<double> ys(pr.y.values().begin() + begin * c.horizon,
		                       pr.y.values().begin() + (begin + 8) * c.horizon);
		const Tensor x({8, c.feature_dim}, xs), y({8, c.horizon}, ys);
		oa.step(a, x, y, ra);
		ob.step(b, x, y, rb);
	}
	CHECK(a == b);
	CHECK(ob.grad_evals() == 2 * oa.grad_evals());
}

TEST_CASE("gradient evaluation counts per step") {
	const QrnnConfig c = small_config();
	Problem pr = make_problem(c, 11, 4);
	SeededRng rng(0);
	for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::aero_shared, OptimizerKind::aero_quantile}) {
		OptimizerSettings s;
		s.kind = kind;
		QrnnParams p = pr.params;
		ModelOptimizer opt(s, p);
		const auto r = opt.step(p, pr.x, pr.y, rng);
		const std::uint64_t expected = kind == OptimizerKind::sgd ? 3 : kind == OptimizerKind::aero_quantile ? 6 : 1;
		CHECK(r.grad_evals == expected);
		CHECK(r.losses.size() == 3);
		CHECK(r.trace.has_value() == (kind == OptimizerKind::aero_quantile));
	}
}

TEST_CASE("step trace serializes to one json record") {
	const QrnnConfig c = small_config();
	Problem pr = make_problem(c, 12, 4);
	AeroQuantileState st = make_aero_quantile_state(pr.params, {});
	const StepTrace t = aero_quantile_step(pr.params, pr.x, pr.y, st);
	const std::string line = to_json_line(t);
	CHECK(line.find('\n') == std::string::npos);
	const auto j = nlohmann::json::parse(line);
	CHECK(j["step"] == 1);
	CHECK(j["quantiles"].size() == 3);
	CHECK(j["quantiles"][0]["energy"].get<double>() == t.quantiles[0].energy);
}

TEST_CASE("optimizer names round trip") {
	for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::aero_shared, OptimizerKind::aero_quantile}) {
		CHECK(parse_optimizer(to_string(kind)) == kind);
	}
	CHECK_THROWS_AS(parse_optimizer("rmsprop"), std::invalid_argument);
}
