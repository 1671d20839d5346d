#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace aero {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape &shape);
std::string shape_string(const Shape &shape);

// Dense row-major array of doubles with an explicit shape.
class Tensor {
public:
	Tensor() = default;
	explicit Tensor(Shape shape, double fill = 0.0);
	Tensor(Shape shape, std::vector<double> values);

	static Tensor from_vector(std::vector<double> values);

	const Shape &shape() const { return shape_; }
	std::size_t rank() const { return shape_.size(); }
	std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
	std::size_t size() const { return data_.size(); }

	std::span<double> values() { return data_; }
	std::span<const double> values() const { return data_; }
	const std::vector<double> &storage() const { return data_; }

	double &operator[](std::size_t i) { return data_[i]; }
	double operator[](std::size_t i) const { return data_[i]; }

	double &at(std::size_t i, std::size_t j);
	double at(std::size_t i, std::size_t j) const;
	double &at(std::size_t i, std::size_t j, std::size_t k);
	double at(std::size_t i, std::size_t j, std::size_t k) const;

	bool all_finite() const;

	bool operator==(const Tensor &other) const = default;

private:
	Shape shape_;
	std::vector<double> data_;
};

// Deterministic random source. The engine (mt19937_64) has a standardized
// output sequence; all derived draws are computed here rather than through
// <random> distributions, whose algorithms are implementation-defined.
class SeededRng {
public:
	explicit SeededRng(std::uint64_t seed = 0);

	std::uint64_t seed() const { return seed_; }

	// Uniform on [0, 1) with 53 random bits.
	double uniform();
	double uniform(double lo, double hi);
	// Uniform integer in [0, n), rejection sampled (no modulo bias).
	std::uint64_t below(std::uint64_t n);
	// Standard normal via Box-Muller; the second variate of each pair is cached.
	double normal();
	bool bernoulli(double p);
	double exponential(double mean);

	// Fisher-Yates.
	template <class T>
	void shuffle(std::vector<T> &items) {
		for (std::size_t i = items.size(); i > 1; --i) {
			const auto j = static_cast<std::size_t>(below(i));
			std::swap(items[i - 1], items[j]);
		}
	}

	bool operator==(const SeededRng &other) const = default;

private:
	std::uint64_t seed_;
	std::mt19937_64 engine_;
	bool has_spare_ = false;
	double spare_ = 0.0;
};

// ---- flat vector helpers -------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(std::span<double> x, double alpha);
bool all_finite(std::span<const double> x);

// (<x, g> / <g, g>) * g, or the zero vector when g is zero.
Tensor project_onto(const Tensor &x, const Tensor &g);
// Same, returning the signed coefficient <x, g> / <g, g> (0 when g is zero).
double projection_coefficient(std::span<const double> x, std::span<const double> g);

// i.i.d. N(0, stddev^2) draws.
Tensor gaussian_sample(SeededRng &rng, const Shape &shape, double stddev);

// ---- 1-D convolution (stride 1, symmetric zero padding) -------------------

struct Conv1dGrads {
	Tensor grad_signal;
	Tensor grad_kernels;
	Tensor grad_bias;
};

// signal [c_in x length], kernels [c_out x c_in x k], bias [c_out]
// -> [c_out x (length + 2*padding - k + 1)]
Tensor conv1d_forward(const Tensor &signal, const Tensor &kernels, const Tensor &bias, std::size_t padding);

// Exact partials of sum(upstream .* conv1d_forward(signal, kernels, bias, padding)).
Conv1dGrads conv1d_backward(const Tensor &upstream, const Tensor &signal, const Tensor &kernels,
                            std::size_t padding);

} // namespace aero
