#include "aero/kernels.hpp"

#include "aero/error.hpp"

#include <string>

namespace aero {
namespace detail {
void require_size(std::size_t actual, std::size_t expected, const char *what);
void check_conv(const ConvDims &d, std::size_t input, std::size_t weight, std::size_t bias);
void check_dense(const DenseDims &d, std::size_t input, std::size_t weight, std::size_t bias);
} // namespace detail

namespace reference {

void conv1d_forward(const ConvDims &d, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
	detail::check_conv(d, input.size(), weight.size(), bias.size());
	detail::require_size(output.size(), d.output_size(), "conv1d output");
	const std::size_t lout = d.out_length();
	for (std::size_t s = 0; s < d.batch; ++s) {
		for (std::size_t o = 0; o < d.out_channels; ++o) {
			for (std::size_t i = 0; i < lout; ++i) {
				double acc = bias[o];
				for (std::size_t c = 0; c < d.in_channels; ++c) {
					for (std::size_t t = 0; t < d.kernel; ++t) {
						const std::size_t pos = i + t;
						if (pos < d.padding || pos - d.padding >= d.length) {
							continue;
						}
						acc += weight[(o * d.in_channels + c) * d.kernel + t] *
						       input[(s * d.in_channels + c) * d.length + pos - d.padding];
					}
				}
				output[(s * d.out_channels + o) * lout + i] = acc;
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
	const std::size_t lout = d.out_length();

	for (std::size_t o = 0; o < d.out_channels; ++o) {
		double gb = 0.0;
		for (std::size_t s = 0; s < d.batch; ++s) {
			for (std::size_t i = 0; i < lout; ++i) {
				gb += upstream[(s * d.out_channels + o) * lout + i];
			}
		}
		grad_bias[o] = gb;
		for (std::size_t c = 0; c < d.in_channels; ++c) {
			for (std::size_t t = 0; t < d.kernel; ++t) {
				double acc = 0.0;
				for (std::size_t s = 0; s < d.batch; ++s) {
					for (std::size_t i = 0; i < lout; ++i) {
						const std::size_t pos = i + t;
						if (pos < d.padding || pos - d.padding >= d.length) {
							continue;
						}
						acc += upstream[(s * d.out_channels + o) * lout + i] *
						       input[(s * d.in_channels + c) * d.length + pos - d.padding];
					}
				}
				grad_weight[(o * d.in_channels + c) * d.kernel + t] = acc;
			}
		}
	}

	if (grad_input.empty()) {
		return;
	}
	detail::require_size(grad_input.size(), d.input_size(), "conv1d input gradient");
	for (std::size_t s = 0; s < d.batch; ++s) {
		for (std::size_t c = 0; c < d.in_channels; ++c) {
			for (std::size_t j = 0; j < d.length; ++j) {
				double acc = 0.0;
				for (std::size_t o = 0; o < d.out_channels; ++o) {
					for (std::size_t t = 0; t < d.kernel; ++t) {
						// output index i = j + padding - t
						if (j + d.padding < t || j + d.padding - t >= lout) {
							continue;
						}
						acc += weight[(o * d.in_channels + c) * d.kernel + t] *
						       upstream[(s * d.out_channels + o) * lout + j + d.padding - t];
					}
				}
				grad_input[(s * d.in_channels + c) * d.length + j] = acc;
			}
		}
	}
}

void dense_forward(const DenseDims &d, std::span<const double> input, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> output) {
	detail::check_dense(d, input.size(), weight.size(), bias.size());
	detail::require_size(output.size(), d.batch * d.out_features, "dense output");
	for (std::size_t s = 0; s < d.batch; ++s) {
		for (std::size_t j = 0; j < d.out_features; ++j) {
			double acc = bias[j];
			for (std::size_t m = 0; m < d.in_features; ++m) {
				acc += weight[j * d.in_features + m] * input[s * d.in_features + m];
			}
			output[s * d.out_features + j] = acc;
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
	for (std::size_t j = 0; j < d.out_features; ++j) {
		double gb = 0.0;
		for (std::size_t s = 0; s < d.batch; ++s) {
			gb += upstream[s * d.out_features + j];
		}
		grad_bias[j] = gb;
		for (std::size_t m = 0; m < d.in_features; ++m) {
			double acc = 0.0;
			for (std::size_t s = 0; s < d.batch; ++s) {
				acc += upstream[s * d.out_features + j] * input[s * d.in_features + m];
			}
			grad_weight[j * d.in_features + m] = acc;
		}
	}
	if (grad_input.empty()) {
		return;
	}
	detail::require_size(grad_input.size(), input.size(), "dense input gradient");
	for (std::size_t s = 0; s < d.batch; ++s) {
		for (std::size_t m = 0; m < d.in_features; ++m) {
			double acc = 0.0;
			for (std::size_t j = 0; j < d.out_features; ++j) {
				acc += weight[j * d.in_features + m] * upstream[s * d.out_features + j];
			}
			grad_input[s * d.in_features + m] = acc;
		}
	}
}

void relu_forward(std::span<const double> pre, std::span<double> out) {
	detail::require_size(out.size(), pre.size(), "relu output");
	for (std::size_t i = 0; i < pre.size(); ++i) {
		out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
	}
}

void relu_backward(std::span<const double> pre, std::span<double> grad) {
	detail::require_size(grad.size(), pre.size(), "relu gradient");
	for (std::size_t i = 0; i < pre.size(); ++i) {
		if (!(pre[i] > 0.0)) {
			grad[i] = 0.0;
		}
	}
}

} // namespace reference
} // namespace aero
