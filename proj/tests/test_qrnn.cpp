#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aero/error.hpp"
#include "aero/qrnn.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include <cmath>
#include <sstream>

using namespace aero;

namespace {

QrnnConfig small_config() {
	QrnnConfig c;
	c.feature_dim = 8;
	c.conv1_channels = 3;
	c.conv2_channels = 4;
	c.hidden_dim = 5;
	c.horizon = 4;
	return c;
}

} // namespace

TEST_CASE("config validation") {
	QrnnConfig c;
	CHECK_NOTHROW(c.validate());
	CHECK(c.flat_dim() == 32 * 27);
	c.quantiles = {0.5, 0.1};
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
	c.quantiles = {0.0, 0.5};
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
	c.quantiles = {};
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
	c = QrnnConfig{};
	c.horizon = 0;
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
	c = QrnnConfig{};
	c.hidden_dim = 0;
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("estimated level flips under the paper orientation") {
	QrnnConfig c;
	CHECK(c.estimated_level(0) == doctest::Approx(0.9));
	CHECK(c.estimated_level(2) == doctest::Approx(0.1));
	c.loss_orientation = LossOrientation::standard;
	CHECK(c.estimated_level(0) == 0.1);
}

TEST_CASE("parameter layout covers the flat vector without gaps") {
	const QrnnParams p(QrnnConfig{});
	std::size_t expected = 0;
	for (const auto &b : p.layout().blocks()) {
		CHECK(b.offset == expected);
		expected += b.size();
	}
	CHECK(expected == p.size());
	CHECK(p.layout().block(Block::head_weight, 1).name == "head1.weight");
	CHECK(p.view(Block::fc_weight).size() == 64 * 32 * 27);
}

TEST_CASE("init_params: deterministic, zero biases, He variance") {
	const QrnnConfig c;
	SeededRng a(5), b(5);
	const QrnnParams pa = init_params(c, a);
	CHECK(pa == init_params(c, b));
	for (const auto &blk : pa.layout().blocks()) {
		if (blk.is_bias()) {
			const auto v = pa.view(blk.kind, blk.head);
			CHECK(std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
		}
	}
	const double expected = 2.0 / static_cast<double>(c.flat_dim());
	for (std::uint64_t seed = 0; seed < 10; ++seed) {
		SeededRng rng(seed);
		const QrnnParams p = init_params(c, rng);
		const auto w = p.view(Block::fc_weight);
		double s = 0, s2 = 0;
		for (double x : w) {
			s += x;
			s2 += x * x;
		}
		const double n = static_cast<double>(w.size());
		const double var = s2 / n - (s / n) * (s / n);
		CHECK(var == doctest::Approx(expected).epsilon(0.2));
	}
}

TEST_CASE("forward: zero network and bias passthrough") {
	const QrnnConfig c = small_config();
	QrnnParams p(c);
	const Tensor x = gaussian_sample(*std::make_unique<SeededRng>(1), {3, c.feature_dim}, 1.0);
	for (const auto &out : forward(p, x)) {
		CHECK(out == Tensor({3, c.horizon}));
	}
	for (std::size_t q = 0; q < c.num_quantiles(); ++q) {
		for (double &b : p.view(Block::head_bias, q)) {
			b = 1.25 + static_cast<double>(q);
		}
	}
	const auto outs = forward(p, x);
	for (std::size_t q = 0; q < c.num_quantiles(); ++q) {
		for (double v : outs[q].values()) {
			CHECK(v == 1.25 + static_cast<double>(q));
		}
	}
}

TEST_CASE("forward matches a straight-line re-evaluation") {
	for (std::uint64_t seed = 0; seed < 20; ++seed) {
		SeededRng rng(seed);
		const QrnnConfig c = seed < 10 ? gradcheck::random_small_config(rng) : QrnnConfig{};
		QrnnParams p = init_params(c, rng);
		for (double &v : p.flat()) {
			v += 0.05 * rng.normal();
		}
		const Tensor x = gaussian_sample(rng, {2, c.feature_dim}, 1.0);
		const auto got = forward(p, x);
		for (std::size_t n = 0; n < 2; ++n) {
			const auto want = oracle::qrnn_forward_one(p, &x.values()[n * c.feature_dim]);
			for (std::size_t q = 0; q < c.num_quantiles(); ++q) {
				for (std::size_t h = 0; h < c.horizon; ++h) {
					CHECK(std::abs(got[q].at(n, h) - want[q][h]) <= 1e-10 * std::max(1.0, std::abs(want[q][h])));
				}
			}
		}
	}
}

TEST_CASE("forward is deterministic and rejects bad widths") {
	SeededRng rng(3);
	const QrnnConfig c;
	const QrnnParams p = init_params(c, rng);
	const Tensor x = gaussian_sample(rng, {5, 27}, 1.0);
	CHECK(forward(p, x) == forward(p, x));
	CHECK_THROWS_AS(forward(p, Tensor({5, 26})), ShapeError);
	CHECK_THROWS_AS(forward(p, Tensor({27})), ShapeError);
}

TEST_CASE("pinball loss examples") {
	const Tensor pred = Tensor::from_vector({2.0});
	const Tensor y = Tensor::from_vector({1.0});
	CHECK(pinball_loss(pred, y, 0.9, LossOrientation::paper) == doctest::Approx(0.9).epsilon(1e-15));
	CHECK(pinball_loss(pred, y, 0.9, LossOrientation::standard) == doctest::Approx(0.1).epsilon(1e-15));
	CHECK(pinball_loss(pred, pred, 0.3, LossOrientation::paper) == 0.0);
	CHECK_THROWS_AS(pinball_loss(pred, y, 1.0, LossOrientation::paper), std::invalid_argument);
	CHECK_THROWS_AS(pinball_loss(pred, y, 0.0, LossOrientation::standard), std::invalid_argument);
	CHECK_THROWS_AS(pinball_loss(pred, Tensor({2}), 0.5, LossOrientation::paper), ShapeError);
}

TEST_CASE("pinball loss matches elementwise summation, non-negative, orientation duality") {
	SeededRng rng(8);
	for (int trial = 0; trial < 50; ++trial) {
		const Tensor p = gaussian_sample(rng, {4, 3}, 1.0);
		const Tensor y = gaussian_sample(rng, {4, 3}, 1.0);
		const double q = 0.01 + 0.98 * rng.uniform();
		for (bool paper : {true, false}) {
			double sum = 0.0;
			for (std::size_t i = 0; i < 12; ++i) {
				sum += oracle::pinball_element(p[i], y[i], q, paper);
			}
			const double got =
			    pinball_loss(p, y, q, paper ? LossOrientation::paper : LossOrientation::standard);
			CHECK(std::abs(got - sum / 12.0) < 1e-12);
			CHECK(got > 0.0);
		}
		CHECK(pinball_loss(p, y, q, LossOrientation::paper) ==
		      doctest::Approx(pinball_loss(p, y, 1.0 - q, LossOrientation::standard)).epsilon(1e-14));
	}
}

TEST_CASE("pinball subgradient is zero at the kink") {
	const Tensor p = Tensor::from_vector({1.0, 2.0, 3.0});
	const Tensor y = Tensor::from_vector({1.0, 1.0, 4.0});
	const Tensor g = pinball_loss_grad(p, y, 0.9, LossOrientation::paper);
	CHECK(g[0] == 0.0);
	CHECK(g[1] == doctest::Approx(0.9 / 3));
	CHECK(g[2] == doctest::Approx(-0.1 / 3));
}

TEST_CASE("gradients vanish when predictions equal targets") {
	SeededRng rng(12);
	const QrnnConfig c = small_config();
	QrnnParams p = init_params(c, rng);
	const Tensor x = gaussian_sample(rng, {3, c.feature_dim}, 1.0);
	// One head only so the targets can equal its predictions; zero the others.
	QrnnConfig one = c;
	one.quantiles = {0.5};
	QrnnParams p1(one);
	std::copy_n(p.flat().begin(), p1.size(), p1.flat().begin());
	ForwardCache cache;
	const auto preds = forward(p1, x, &cache);
	const auto grads = backward_quantile_gradients(cache, p1, preds[0]);
	for (double g : grads.params[0]) {
		CHECK(g == 0.0);
	}
}

TEST_CASE("other heads receive exactly zero gradient") {
	SeededRng rng(13);
	const QrnnConfig c = small_config();
	const QrnnParams p = init_params(c, rng);
	const Tensor x = gaussian_sample(rng, {4, c.feature_dim}, 1.0);
	const Tensor y = gaussian_sample(rng, {4, c.horizon}, 1.0);
	ForwardCache cache;
	forward(p, x, &cache);
	const auto grads = backward_quantile_gradients(cache, p, y);
	for (std::size_t q = 0; q < c.num_quantiles(); ++q) {
		for (std::size_t j = 0; j < c.num_quantiles(); ++j) {
			const auto [begin, end] = p.layout().head_range(j);
			bool all_zero = true;
			for (std::size_t i = begin; i < end; ++i) {
				all_zero = all_zero && grads.params[q][i] == 0.0;
			}
			CHECK(all_zero == (q != j));
		}
		const auto trunk = p.layout().block(Block::fc_weight);
		double trunk_norm = 0.0;
		for (std::size_t i = 0; i < trunk.offset + trunk.size(); ++i) {
			trunk_norm += std::abs(grads.params[q][i]);
		}
		CHECK(trunk_norm > 0.0);
	}
}

TEST_CASE("analytic gradients agree with central differences") {
	for (std::uint64_t seed = 100; seed < 110; ++seed) {
		const auto r = gradcheck::check_instance(seed);
		CHECK(r.max_relative_error < 1e-5);
		CHECK(r.input_relative_error < 1e-5);
	}
}

TEST_CASE("mean-loss gradient equals the average of per-quantile gradients") {
	SeededRng rng(14);
	const QrnnConfig c = small_config();
	const QrnnParams p = init_params(c, rng);
	const Tensor x = gaussian_sample(rng, {6, c.feature_dim}, 1.0);
	const Tensor y = gaussian_sample(rng, {6, c.horizon}, 1.0);
	ForwardCache c1, c2;
	forward(p, x, &c1);
	forward(p, x, &c2);
	const auto per = backward_quantile_gradients(c1, p, y);
	std::vector<double> losses;
	const auto mean = backward_mean_loss_gradient(c2, p, y, &losses);
	CHECK(losses == per.losses);
	for (std::size_t i = 0; i < mean.size(); ++i) {
		double avg = 0.0;
		for (const auto &g : per.params) {
			avg += g[i];
		}
		avg /= static_cast<double>(per.params.size());
		CHECK(std::abs(mean[i] - avg) <= 1e-12 * std::max(1.0, std::abs(avg)));
	}
}

TEST_CASE("a cache is consumed by one backward call and must match the parameters") {
	SeededRng rng(15);
	const QrnnConfig c = small_config();
	QrnnParams p = init_params(c, rng);
	const Tensor x = gaussian_sample(rng, {2, c.feature_dim}, 1.0);
	const Tensor y = gaussian_sample(rng, {2, c.horizon}, 1.0);
	ForwardCache cache;
	forward(p, x, &cache);
	backward_quantile_gradients(cache, p, y);
	CHECK_THROWS_AS(backward_quantile_gradients(cache, p, y), std::logic_error);
	forward(p, x, &cache);
	p.flat()[0] += 1.0;
	CHECK_THROWS_AS(backward_quantile_gradients(cache, p, y), std::logic_error);
	forward(p, x, &cache);
	CHECK_THROWS_AS(backward_quantile_gradients(cache, p, Tensor({3, c.horizon})), ShapeError);
}

TEST_CASE("predictive variance") {
	CHECK(predictive_variance(Tensor({2, 3}, 4.0)) == 0.0);
	CHECK(predictive_variance(Tensor::from_vector({0.0, 2.0})) == 1.0);
	CHECK_THROWS_AS(predictive_variance(Tensor({0, 3})), std::invalid_argument);
	SeededRng rng(16);
	const Tensor t = gaussian_sample(rng, {8, 20}, 2.0);
	double mean = 0.0;
	for (double v : t.values()) {
		mean += v;
	}
	mean /= 160.0;
	double ss = 0.0;
	for (double v : t.values()) {
		ss += (v - mean) * (v - mean);
	}
	CHECK(std::abs(predictive_variance(t) - ss / 160.0) < 1e-12);
}

TEST_CASE("checkpoint round trip is exact and byte-stable") {
	SeededRng rng(17);
	QrnnConfig c = small_config();
	c.loss_orientation = LossOrientation::standard;
	c.quantiles = {0.05, 0.5, 0.95};
	const QrnnParams p = init_params(c, rng);
	std::stringstream first;
	write_checkpoint(first, p);
	const QrnnParams back = read_checkpoint(first);
	CHECK(back == p);
	std::stringstream second;
	write_checkpoint(second, back);
	CHECK(first.str() == second.str());

	std::string text = first.str();
	text.replace(text.find("aero-qrnn-checkpoint 1"), 22, "aero-qrnn-checkpoint 9");
	std::stringstream bad(text);
	CHECK_THROWS(read_checkpoint(bad));
	std::stringstream truncated(first.str().substr(0, first.str().size() / 2));
	CHECK_THROWS(read_checkpoint(truncated));
}
