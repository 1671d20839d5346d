#include "aero/tensor.hpp"

#include "aero/error.hpp"
#include "aero/kernels.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace aero {

std::size_t shape_size(const Shape &shape) {
	return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape &shape) {
	std::ostringstream out;
	out << '[';
	for (std::size_t i = 0; i < shape.size(); ++i) {
		out << (i ? " x " : "") << shape[i];
	}
	out << ']';
	return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
	if (shape_size(shape_) != data_.size()) {
		throw ShapeError("tensor shape " + shape_string(shape_) + " does not hold " + std::to_string(data_.size()) +
		                 " values");
	}
}

Tensor Tensor::from_vector(std::vector<double> values) {
	Shape shape{values.size()};
	return Tensor(std::move(shape), std::move(values));
}

double &Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
double &Tensor::at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
	return data_[(i * shape_[1] + j) * shape_[2] + k];
}

bool Tensor::all_finite() const { return aero::all_finite(data_); }

// ---- SeededRng ------------------------------------------------------------

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double SeededRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t SeededRng::below(std::uint64_t n) {
	if (n == 0) {
		throw std::invalid_argument("SeededRng::below: n must be positive");
	}
	const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
	std::uint64_t r;
	do {
		r = engine_();
	} while (r >= limit);
	return r % n;
}

double SeededRng::normal() {
	if (has_spare_) {
		has_spare_ = false;
		return spare_;
	}
	const double u1 = 1.0 - uniform(); // (0, 1]
	const double u2 = uniform();
	const double radius = std::sqrt(-2.0 * std::log(u1));
	const double angle = 2.0 * std::numbers::pi * u2;
	spare_ = radius * std::sin(angle);
	has_spare_ = true;
	return radius * std::cos(angle);
}

bool SeededRng::bernoulli(double p) { return uniform() < p; }

double SeededRng::exponential(double mean) { return -mean * std::log(1.0 - uniform()); }

// ---- vector helpers -------------------------------------------------------

namespace {
void require_same_length(std::size_t a, std::size_t b, const char *what) {
	if (a != b) {
		throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
		                 ")");
	}
}
} // namespace

double dot(std::span<const double> a, std::span<const double> b) {
	require_same_length(a.size(), b.size(), "dot");
	double acc = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		acc += a[i] * b[i];
	}
	return acc;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
	require_same_length(x.size(), y.size(), "axpy");
	for (std::size_t i = 0; i < x.size(); ++i) {
		y[i] += alpha * x[i];
	}
}

void scale(std::span<double> x, double alpha) {
	for (double &v : x) {
		v *= alpha;
	}
}

bool all_finite(std::span<const double> x) {
	for (double v : x) {
		if (!std::isfinite(v)) {
			return false;
		}
	}
	return true;
}

double projection_coefficient(std::span<const double> x, std::span<const double> g) {
	require_same_length(x.size(), g.size(), "project_onto");
	const double gg = dot(g, g);
	if (gg == 0.0) {
		return 0.0;
	}
	return dot(x, g) / gg;
}

Tensor project_onto(const Tensor &x, const Tensor &g) {
	const double coef = projection_coefficient(x.values(), g.values());
	Tensor out(g.shape());
	for (std::size_t i = 0; i < g.size(); ++i) {
		out[i] = coef * g[i];
	}
	return out;
}

Tensor gaussian_sample(SeededRng &rng, const Shape &shape, double stddev) {
	if (!(stddev >= 0.0)) {
		throw std::invalid_argument("gaussian_sample: standard deviation must be non-negative");
	}
	Tensor out(shape);
	if (stddev == 0.0) {
		return out;
	}
	for (double &v : out.values()) {
		v = stddev * rng.normal();
	}
	return out;
}

// ---- convolution ------------------------------------------------------------

namespace {
ConvDims conv_dims(const Tensor &signal, const Tensor &kernels, std::size_t padding) {
	if (signal.rank() != 2) {
		throw ShapeError("conv1d: signal must be [channels x length], got " + shape_string(signal.shape()));
	}
	if (kernels.rank() != 3) {
		throw ShapeError("conv1d: kernels must be [out x in x k], got " + shape_string(kernels.shape()));
	}
	if (kernels.dim(1) != signal.dim(0)) {
		throw ShapeError("conv1d: kernels " + shape_string(kernels.shape()) + " expect " +
		                 std::to_string(kernels.dim(1)) + " input channels, signal has " +
		                 shape_string(signal.shape()));
	}
	ConvDims d;
	d.batch = 1;
	d.in_channels = signal.dim(0);
	d.length = signal.dim(1);
	d.out_channels = kernels.dim(0);
	d.kernel = kernels.dim(2);
	d.padding = padding;
	return d;
}
} // namespace

Tensor conv1d_forward(const Tensor &signal, const Tensor &kernels, const Tensor &bias, std::size_t padding) {
	const ConvDims d = conv_dims(signal, kernels, padding);
	if (bias.size() != d.out_channels) {
		throw ShapeError("conv1d: bias " + shape_string(bias.shape()) + " does not match " +
		                 std::to_string(d.out_channels) + " output channels");
	}
	if (d.kernel == 0 || d.kernel > d.length + 2 * padding) {
		throw ShapeError("conv1d: kernel size " + std::to_string(d.kernel) + " exceeds padded length " +
		                 std::to_string(d.length + 2 * padding));
	}
	Tensor out({d.out_channels, d.out_length()});
	kernels::conv1d_forward(d, signal.values(), kernels.values(), bias.values(), out.values());
	return out;
}

Conv1dGrads conv1d_backward(const Tensor &upstream, const Tensor &signal, const Tensor &kernels,
                            std::size_t padding) {
	const ConvDims d = conv_dims(signal, kernels, padding);
	if (d.kernel == 0 || d.kernel > d.length + 2 * padding) {
		throw ShapeError("conv1d: kernel size " + std::to_string(d.kernel) + " exceeds padded length " +
		                 std::to_string(d.length + 2 * padding));
	}
	const Shape expected{d.out_channels, d.out_length()};
	if (upstream.shape() != expected) {
		throw ShapeError("conv1d backward: upstream gradient " + shape_string(upstream.shape()) +
		                 " does not match output shape " + shape_string(expected));
	}
	Conv1dGrads grads{Tensor(signal.shape()), Tensor(kernels.shape()), Tensor({d.out_channels})};
	kernels::conv1d_backward(d, upstream.values(), signal.values(), kernels.values(), grads.grad_kernels.values(),
	                         grads.grad_bias.values(), grads.grad_signal.values());
	return grads;
}

} // namespace aero
