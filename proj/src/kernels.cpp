#include "aero/kernels.hpp"

#include "aero/error.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace aero {
namespace detail {

void require_size(std::size_t actual, std::size_t expected, const char *what) {
	if (actual != expected) {
		throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) + " elements, got " +
		                 std::to_string(actual));
	}
}

void check_conv(const ConvDims &d, std::size_t input, std::size_t weight, std::size_t bias) {
	if (d.kernel == 0 || d.kernel > d.length + 2 * d.padding) {
		throw ShapeError("conv1d: kernel size " + std::to_string(d.kernel) + " does not fit length " +
		                 std::to_string(d.length) + " with padding " + std::to_string(d.padding));
	}
	require_size(input, d.input_size(), "conv1d input");
	require_size(weight, d.weight_size(), "conv1d weight");
	require_size(bias, d.out_channels, "conv1d bias");
}

void check_dense(const DenseDims &d, std::size_t input, std::size_t weight, std::size_t bias) {
	require_size(input, d.batch * d.in_features, "dense input");
	require_size(weight, d.out_features * d.in_features, "dense weight");
	require_size(bias, d.out_features, "dense bias");
}

} // namespace detail

namespace kernels {

// The conv kernels work on channel-last copies so the innermost loop runs over
// channels and vectorizes. Each output element still sums its terms in the
// reference order, and out-of-range taps are skipped rather than zero-filled.

void conv1d_forward(const ConvDims &d, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
	detail::check_conv(d, input.size(), weight.size(), bias.size());
	detail::require_size(output.size(), d.output_size(), "conv1d output");
	const std::size_t lout = d.out_length();
	const std::size_t K = d.kernel;
	const std::size_t Cin = d.in_channels;
	const std::size_t Cout = d.out_channels;

	// wt[(c * K + t) * Cout + o] = weight[o][c][t]
	std::vector<double> wt(Cin * K * Cout);
	for (std::size_t o = 0; o < Cout; ++o) {
		for (std::size_t ct = 0; ct < Cin * K; ++ct) {
			wt[ct * Cout + o] = weight[o * Cin * K + ct];
		}
	}

#pragma omp parallel
	{
		std::vector<double> xt(d.length * Cin);
		std::vector<double> acc(Cout);
#pragma omp for schedule(static)
		for (std::size_t s = 0; s < d.batch; ++s) {
			const double *x = input.data() + s * Cin * d.length;
			for (std::size_t c = 0; c < Cin; ++c) {
				for (std::size_t j = 0; j < d.length; ++j) {
					xt[j * Cin + c] = x[c * d.length + j];
				}
			}
			double *y = output.data() + s * Cout * lout;
			for (std::size_t i = 0; i < lout; ++i) {
				// taps t with 0 <= i + t - padding < length
				const std::size_t tlo = i < d.padding ? d.padding - i : 0;
				const std::size_t thi = std::min(K, d.length + d.padding - i);
				std::copy(bias.begin(), bias.end(), acc.begin());
				for (std::size_t c = 0; c < Cin; ++c) {
					for (std::size_t t = tlo; t < thi; ++t) {
						const double xv = xt[(i + t - d.padding) * Cin + c];
						const double *w = wt.data() + (c * K + t) * Cout;
						for (std::size_t o = 0; o < Cout; ++o) {
							acc[o] += w[o] * xv;
						}
					}
				}
				for (std::size_t o = 0; o < Cout; ++o) {
					y[o * lout + i] = acc[o];
				}
			}
		}
	}
}

void conv1d_backward(const ConvDims &d, std::span<const double> upstream, std::span<const double> input,
                     std::span<const double> weight, std::span<double> grad_weight, std::span<double> grad_bias,
                     std::span<double> grad_input) {
	detail::check_conv(d, input.size(), weight.size(), d.out_channels);
	detail::require_size(upstream.size(), d.output_size(), "conv1d upstream gradient");
	detail::require_size(grad_weight.size(), d.weight_size(), "conv1d weight gradient");
	detail::require_size(grad_bias.size(), d.out_channels, "conv1d bias gradient");
	if (!grad_input.empty()) {
		detail::require_size(grad_input.size(), d.input_size(), "conv1d input gradient");
	}
	const std::size_t lout = d.out_length();
	const std::size_t K = d.kernel;
	const std::size_t Cin = d.in_channels;
	const std::size_t Cout = d.out_channels;
	const std::size_t lpad = d.length + 2 * d.padding;

	// Channel-last copies: up_t[s][i][o], x_t[s][j + padding][c] with zero padding.
	std::vector<double> up_t(d.batch * lout * Cout);
	std::vector<double> x_t(d.batch * lpad * Cin, 0.0);
#pragma omp parallel for schedule(static)
	for (std::size_t s = 0; s < d.batch; ++s) {
		const double *up = upstream.data() + s * Cout * lout;
		double *ut = up_t.data() + s * lout * Cout;
		for (std::size_t o = 0; o < Cout; ++o) {
			for (std::size_t i = 0; i < lout; ++i) {
				ut[i * Cout + o] = up[o * lout + i];
			}
		}
		const double *x = input.data() + s * Cin * d.length;
		double *xs = x_t.data() + s * lpad * Cin;
		for (std::size_t c = 0; c < Cin; ++c) {
			for (std::size_t j = 0; j < d.length; ++j) {
				xs[(j + d.padding) * Cin + c] = x[c * d.length + j];
			}
		}
	}

	// Weight and bias gradients: every element sums over s, then i. The batch
	// loop stays serial to keep that order; the work splits over input channels.
	// A zero upstream value contributes an exact +-0 and leaves the sum unchanged.
	std::vector<double> gw_t(Cin * K * Cout, 0.0); // [c][t][o]
#pragma omp parallel for schedule(static)
	for (std::size_t c = 0; c < Cin; ++c) {
		double *acc = gw_t.data() + c * K * Cout;
		for (std::size_t s = 0; s < d.batch; ++s) {
			const double *ut = up_t.data() + s * lout * Cout;
			const double *xs = x_t.data() + s * lpad * Cin;
			for (std::size_t i = 0; i < lout; ++i) {
				const double *g = ut + i * Cout;
				for (std::size_t t = 0; t < K; ++t) {
					const double xv = xs[(i + t) * Cin + c];
					double *a = acc + t * Cout;
					for (std::size_t o = 0; o < Cout; ++o) {
						a[o] += g[o] * xv;
					}
				}
			}
		}
	}
	for (std::size_t o = 0; o < Cout; ++o) {
		for (std::size_t ct = 0; ct < Cin * K; ++ct) {
			grad_weight[o * Cin * K + ct] = gw_t[ct * Cout + o];
		}
	}
	std::vector<double> gb(Cout, 0.0);
	for (std::size_t s = 0; s < d.batch; ++s) {
		const double *ut = up_t.data() + s * lout * Cout;
		for (std::size_t i = 0; i < lout; ++i) {
			for (std::size_t o = 0; o < Cout; ++o) {
				gb[o] += ut[i * Cout + o];
			}
		}
	}
	std::copy(gb.begin(), gb.end(), grad_bias.begin());

	if (grad_input.empty()) {
		return;
	}
	// w2[(o * K + t) * Cin + c] = weight[o][c][t]
	std::vector<double> w2(Cout * K * Cin);
	for (std::size_t o = 0; o < Cout; ++o) {
		for (std::size_t c = 0; c < Cin; ++c) {
			for (std::size_t t = 0; t < K; ++t) {
				w2[(o * K + t) * Cin + c] = weight[(o * Cin + c) * K + t];
			}
		}
	}
#pragma omp parallel
	{
		std::vector<double> acc(Cin);
#pragma omp for schedule(static)
		for (std::size_t s = 0; s < d.batch; ++s) {
			const double *ut = up_t.data() + s * lout * Cout;
			double *gi = grad_input.data() + s * Cin * d.length;
			for (std::size_t j = 0; j < d.length; ++j) {
				// input j receives output i = j - t + padding for 0 <= i < lout
				const std::size_t tlo = j + d.padding >= lout ? j + d.padding - lout + 1 : 0;
				const std::size_t thi = std::min(K, j + d.padding + 1);
				std::fill(acc.begin(), acc.end(), 0.0);
				for (std::size_t o = 0; o < Cout; ++o) {
					for (std::size_t t = tlo; t < thi; ++t) {
						const double g = ut[(j + d.padding - t) * Cout + o];
						const double *w = w2.data() + (o * K + t) * Cin;
						for (std::size_t c = 0; c < Cin; ++c) {
							acc[c] += w[c] * g;
						}
					}
				}
				for (std::size_t c = 0; c < Cin; ++c) {
					gi[c * d.length + j] = acc[c];
				}
			}
		}
	}
}

void dense_forward(const DenseDims &d, std::span<const double> input, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> output) {
	detail::check_dense(d, input.size(), weight.size(), bias.size());
	detail::require_size(output.size(), d.batch * d.out_features, "dense output");
	const std::size_t In = d.in_features;
	const std::size_t Out = d.out_features;

	// Transposed weights make the per-feature update contiguous over outputs.
	std::vector<double> wt(In * Out);
	for (std::size_t j = 0; j < Out; ++j) {
		for (std::size_t m = 0; m < In; ++m) {
			wt[m * Out + j] = weight[j * In + m];
		}
	}

#pragma omp parallel for schedule(static)
	for (std::size_t s = 0; s < d.batch; ++s) {
		const double *x = input.data() + s * In;
		double *y = output.data() + s * Out;
		std::copy(bias.begin(), bias.end(), y);
		for (std::size_t m = 0; m < In; ++m) {
			const double xm = x[m];
			if (xm == 0.0) {
				continue;
			}
			const double *wm = wt.data() + m * Out;
			for (std::size_t j = 0; j < Out; ++j) {
				y[j] += wm[j] * xm;
			}
		}
	}
}

void dense_backward(const DenseDims &d, std::span<const double> upstream, std::span<const double> input,
                    std::span<const double> weight, std::span<double> grad_weight, std::span<double> grad_bias,
                    std::span<double> grad_input) {
	detail::check_dense(d, input.size(), weight.size(), d.out_features);
	detail::require_size(upstream.size(), d.batch * d.out_features, "dense upstream gradient");
	detail::require_size(grad_weight.size(), weight.size(), "dense weight gradient");
	detail::require_size(grad_bias.size(), d.out_features, "dense bias gradient");
	if (!grad_input.empty()) {
		detail::require_size(grad_input.size(), input.size(), "dense input gradient");
	}
	const std::size_t In = d.in_features;
	const std::size_t Out = d.out_features;

#pragma omp parallel for schedule(static)
	for (std::size_t j = 0; j < Out; ++j) {
		double *gw = grad_weight.data() + j * In;
		std::fill(gw, gw + In, 0.0);
		double gb = 0.0;
		for (std::size_t s = 0; s < d.batch; ++s) {
			const double g = upstream[s * Out + j];
			gb += g;
			if (g == 0.0) {
				continue;
			}
			const double *x = input.data() + s * In;
			for (std::size_t m = 0; m < In; ++m) {
				gw[m] += g * x[m];
			}
		}
		grad_bias[j] = gb;
	}

	if (grad_input.empty()) {
		return;
	}
#pragma omp parallel for schedule(static)
	for (std::size_t s = 0; s < d.batch; ++s) {
		double *gi = grad_input.data() + s * In;
		std::fill(gi, gi + In, 0.0);
		for (std::size_t j = 0; j < Out; ++j) {
			const double g = upstream[s * Out + j];
			if (g == 0.0) {
				continue;
			}
			const double *w = weight.data() + j * In;
			for (std::size_t m = 0; m < In; ++m) {
				gi[m] += w[m] * g;
			}
		}
	}
}

void relu_forward(std::span<const double> pre, std::span<double> out) {
	detail::require_size(out.size(), pre.size(), "relu output");
	const std::size_t n = pre.size();
#pragma omp parallel for schedule(static)
	for (std::size_t i = 0; i < n; ++i) {
		out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
	}
}

void relu_backward(std::span<const double> pre, std::span<double> grad) {
	detail::require_size(grad.size(), pre.size(), "relu gradient");
	const std::size_t n = pre.size();
#pragma omp parallel for schedule(static)
	for (std::size_t i = 0; i < n; ++i) {
		if (!(pre[i] > 0.0)) {
			grad[i] = 0.0;
		}
	}
}

} // namespace kernels
} // namespace aero
