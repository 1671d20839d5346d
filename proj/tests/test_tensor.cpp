#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aero/error.hpp"
#include "aero/tensor.hpp"

#include <cmath>
#include <set>

using namespace aero;

TEST_CASE("tensor construction checks shape against values") {
	Tensor t({2, 3}, 1.5);
	CHECK(t.size() == 6);
	CHECK(t.at(1, 2) == 1.5);
	CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
	const Tensor v = Tensor::from_vector({1, 2, 3});
	CHECK(v.shape() == Shape{3});
	CHECK(shape_string({2, 3}) == "[2 x 3]");
}

TEST_CASE("seeded rng is deterministic and in range") {
	SeededRng a(11), b(11), c(12);
	for (int i = 0; i < 100; ++i) {
		const double x = a.uniform();
		CHECK(x == b.uniform());
		CHECK(x >= 0.0);
		CHECK(x < 1.0);
	}
	CHECK(a.normal() != c.normal());
	std::set<std::uint64_t> seen;
	for (int i = 0; i < 2000; ++i) {
		const auto k = a.below(7);
		CHECK(k < 7);
		seen.insert(k);
	}
	CHECK(seen.size() == 7);
}

TEST_CASE("normal draws have unit moments") {
	SeededRng rng(3);
	const int n = 200000;
	double s = 0, s2 = 0;
	for (int i = 0; i < n; ++i) {
		const double x = rng.normal();
		s += x;
		s2 += x * x;
	}
	CHECK(std::abs(s / n) < 0.01);
	CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("shuffle is a permutation") {
	SeededRng rng(5);
	std::vector<int> v(50);
	for (int i = 0; i < 50; ++i) {
		v[i] = i;
	}
	rng.shuffle(v);
	std::set<int> s(v.begin(), v.end());
	CHECK(s.size() == 50);
}

TEST_CASE("vector helpers") {
	std::vector<double> x{1, 2, 3}, y{4, 5, 6};
	CHECK(dot(x, y) == 32.0);
	CHECK(squared_norm(x) == 14.0);
	axpy(2.0, x, y);
	CHECK(y == std::vector<double>{6, 9, 12});
	scale(y, 0.5);
	CHECK(y == std::vector<double>{3, 4.5, 6});
	std::vector<double> bad{1, NAN};
	CHECK_FALSE(all_finite(bad));
	CHECK_THROWS_AS(dot(x, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("projection onto a direction") {
	SeededRng rng(9);
	for (int trial = 0; trial < 50; ++trial) {
		const Tensor x = gaussian_sample(rng, {12}, 1.0);
		const Tensor g = gaussian_sample(rng, {12}, 1.0);
		const Tensor p = project_onto(x, g);
		std::vector<double> residual(12);
		for (int i = 0; i < 12; ++i) {
			residual[i] = x[i] - p[i];
		}
		CHECK(std::abs(dot(residual, g.values())) < 1e-12 * norm(x.values()) * norm(g.values()) * 10);
		const double coef = projection_coefficient(x.values(), g.values());
		for (int i = 0; i < 12; ++i) {
			CHECK(p[i] == doctest::Approx(coef * g[i]).epsilon(1e-14));
		}
	}
	const Tensor zero({4});
	const Tensor any = Tensor::from_vector({1, 2, 3, 4});
	CHECK(project_onto(any, zero) == zero);
	CHECK(projection_coefficient(any.values(), zero.values()) == 0.0);
	// Signed: an opposing vector gets a negative coefficient.
	CHECK(projection_coefficient(std::vector<double>{-2, 0}, std::vector<double>{1, 0}) == -2.0);
}

TEST_CASE("gaussian_sample edge cases") {
	SeededRng rng(1);
	const Tensor z = gaussian_sample(rng, {5}, 0.0);
	CHECK(z == Tensor({5}));
	CHECK_THROWS_AS(gaussian_sample(rng, {5}, -1.0), std::invalid_argument);
}

namespace {

Tensor conv_oracle(const Tensor &s, const Tensor &w, const Tensor &b, std::size_t pad) {
	const long cin = static_cast<long>(s.dim(0)), len = static_cast<long>(s.dim(1));
	const long cout = static_cast<long>(w.dim(0)), k = static_cast<long>(w.dim(2));
	const long out_len = len + 2 * static_cast<long>(pad) - k + 1;
	Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(out_len)});
	for (long o = 0; o < cout; ++o) {
		for (long t = 0; t < out_len; ++t) {
			double acc = b[o];
			for (long i = 0; i < cin; ++i) {
				for (long j = 0; j < k; ++j) {
					const long src = t + j - static_cast<long>(pad);
					if (src >= 0 && src < len) {
						acc += w.at(o, i, j) * s.at(i, src);
					}
				}
			}
			out.at(o, t) = acc;
		}
	}
	return out;
}

} // namespace

TEST_CASE("conv1d matches the direct definition") {
	SeededRng rng(21);
	for (std::size_t pad : {0u, 1u, 2u}) {
		const Tensor s = gaussian_sample(rng, {3, 10}, 1.0);
		const Tensor w = gaussian_sample(rng, {4, 3, 3}, 1.0);
		const Tensor b = gaussian_sample(rng, {4}, 1.0);
		const Tensor got = conv1d_forward(s, w, b, pad);
		const Tensor want = conv_oracle(s, w, b, pad);
		REQUIRE(got.shape() == want.shape());
		for (std::size_t i = 0; i < got.size(); ++i) {
			CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
		}
	}
	CHECK_THROWS_AS(conv1d_forward(Tensor({2, 5}), Tensor({1, 3, 3}), Tensor({1}), 1), ShapeError);
}

TEST_CASE("conv1d backward matches finite differences") {
	SeededRng rng(22);
	const std::size_t pad = 1;
	Tensor s = gaussian_sample(rng, {2, 7}, 1.0);
	Tensor w = gaussian_sample(rng, {3, 2, 3}, 1.0);
	Tensor b = gaussian_sample(rng, {3}, 1.0);
	const Tensor up = gaussian_sample(rng, {3, 7}, 1.0);
	const auto objective = [&] {
		const Tensor y = conv1d_forward(s, w, b, pad);
		return dot(y.values(), up.values());
	};
	const Conv1dGrads g = conv1d_backward(up, s, w, pad);
	const double h = 1e-6;
	const auto check = [&](Tensor &param, const Tensor &grad) {
		for (std::size_t i = 0; i < param.size(); ++i) {
			const double keep = param[i];
			param[i] = keep + h;
			const double fp = objective();
			param[i] = keep - h;
			const double fm = objective();
			param[i] = keep;
			CHECK(grad[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-7));
		}
	};
	check(s, g.grad_signal);
	check(w, g.grad_kernels);
	check(b, g.grad_bias);
}
