#pragma once

// Batched layer kernels. Two implementations share these signatures:
//
//   aero::kernels    OpenMP-parallel, used by the model and optimizers.
//   aero::reference  plain nested loops, serial; kept for tests and benchmarks.
//
// Both accumulate every output element over the same index sequence, so the
// results agree value-for-value (and are independent of the thread count).
// All outputs are overwritten, never accumulated into.

#include <cstddef>
#include <span>

namespace aero {

// Layout: input [batch x in_channels x length], weight [out_channels x in_channels x kernel],
// output [batch x out_channels x out_length()].
struct ConvDims {
	std::size_t batch = 1;
	std::size_t in_channels = 1;
	std::size_t length = 1;
	std::size_t out_channels = 1;
	std::size_t kernel = 1;
	std::size_t padding = 0;

	std::size_t out_length() const { return length + 2 * padding - kernel + 1; }
	std::size_t input_size() const { return batch * in_channels * length; }
	std::size_t weight_size() const { return out_channels * in_channels * kernel; }
	std::size_t output_size() const { return batch * out_channels * out_length(); }
};

// Layout: input [batch x in_features], weight [out_features x in_features], output [batch x out_features].
struct DenseDims {
	std::size_t batch = 1;
	std::size_t in_features = 1;
	std::size_t out_features = 1;
};

namespace kernels {

void conv1d_forward(const ConvDims &dims, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);

// grad_input may be empty when the input gradient is not needed.
void conv1d_backward(const ConvDims &dims, std::span<const double> upstream, std::span<const double> input,
                     std::span<const double> weight, std::span<double> grad_weight, std::span<double> grad_bias,
                     std::span<double> grad_input);

void dense_forward(const DenseDims &dims, std::span<const double> input, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> output);

void dense_backward(const DenseDims &dims, std::span<const double> upstream, std::span<const double> input,
                    std::span<const double> weight, std::span<double> grad_weight, std::span<double> grad_bias,
                    std::span<double> grad_input);

void relu_forward(std::span<const double> pre, std::span<double> out);
// grad[i] = 0 wherever pre[i] <= 0
void relu_backward(std::span<const double> pre, std::span<double> grad);

} // namespace kernels

namespace reference {

void conv1d_forward(const ConvDims &dims, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv1d_backward(const ConvDims &dims, std::span<const double> upstream, std::span<const double> input,
                     std::span<const double> weight, std::span<double> grad_weight, std::span<double> grad_bias,
                     std::span<double> grad_input);
void dense_forward(const DenseDims &dims, std::span<const double> input, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> output);
void dense_backward(const DenseDims &dims, std::span<const double> upstream, std::span<const double> input,
                    std::span<const double> weight, std::span<double> grad_weight, std::span<double> grad_bias,
                    std::span<double> grad_input);
void relu_forward(std::span<const double> pre, std::span<double> out);
void relu_backward(std::span<const double> pre, std::span<double> grad);

} // namespace reference

} // namespace aero
