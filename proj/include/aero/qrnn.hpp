#pragma once

// Quantile-regression network: two 1-D convolutions over the feature vector
// (treated as one channel), a dense ReLU layer, and one linear head per
// quantile level emitting the whole forecast horizon at once.
//
//   h1     = ReLU(conv1(x))
//   h2     = ReLU(conv2(h1))
//   h_fc1  = ReLU(W3 * flatten(h2) + b3)
//   y_q    = W4[q] * h_fc1 + b4[q]
//
// The trunk is shared. Gradients are always taken over the full parameter
// vector, so a quantile's gradient is zero on every other quantile's head.

#include "aero/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aero {

enum class LossOrientation {
	paper,    // q * max(0, y_hat - y) + (1 - q) * max(0, y - y_hat)
	standard, // q * max(0, y - y_hat) + (1 - q) * max(0, y_hat - y)
};

std::string to_string(LossOrientation orientation);
LossOrientation parse_orientation(const std::string &text);

struct QrnnConfig {
	std::size_t feature_dim = 27;
	std::size_t conv1_channels = 16;
	std::size_t conv2_channels = 32;
	std::size_t kernel_size = 3;
	std::size_t hidden_dim = 64;
	std::size_t horizon = 20;
	std::vector<double> quantiles{0.1, 0.5, 0.9};
	LossOrientation loss_orientation = LossOrientation::paper;

	// Throws std::invalid_argument describing the first violated constraint.
	void validate() const;

	std::size_t padding() const { return (kernel_size - 1) / 2; }
	std::size_t conv1_length() const { return feature_dim + 2 * padding() - kernel_size + 1; }
	std::size_t conv2_length() const { return conv1_length() + 2 * padding() - kernel_size + 1; }
	std::size_t flat_dim() const { return conv2_channels * conv2_length(); }
	std::size_t num_quantiles() const { return quantiles.size(); }

	// The quantile level a head actually estimates once trained: the paper
	// orientation's minimizer is the (1 - q) quantile.
	double estimated_level(std::size_t head) const;

	bool operator==(const QrnnConfig &) const = default;
};

enum class Block { conv1_weight, conv1_bias, conv2_weight, conv2_bias, fc_weight, fc_bias, head_weight, head_bias };

struct ParamBlock {
	Block kind;
	std::size_t head = 0; // quantile index for head blocks
	std::string name;
	Shape shape;
	std::size_t offset = 0;
	std::size_t fan_in = 0;

	std::size_t size() const { return shape_size(shape); }
	bool is_bias() const;
};

// Offsets of every named tensor inside the flat parameter vector.
class ParamLayout {
public:
	explicit ParamLayout(const QrnnConfig &config);

	const std::vector<ParamBlock> &blocks() const { return blocks_; }
	std::size_t total() const { return total_; }
	const ParamBlock &block(Block kind, std::size_t head = 0) const;

	std::span<double> view(std::span<double> flat, Block kind, std::size_t head = 0) const;
	std::span<const double> view(std::span<const double> flat, Block kind, std::size_t head = 0) const;

	// [begin, end) of the head blocks (weight and bias) of one quantile.
	std::pair<std::size_t, std::size_t> head_range(std::size_t head) const;

private:
	std::vector<ParamBlock> blocks_;
	std::size_t total_ = 0;
};

class QrnnParams {
public:
	explicit QrnnParams(QrnnConfig config); // all zeros

	const QrnnConfig &config() const { return config_; }
	const ParamLayout &layout() const { return layout_; }
	std::size_t size() const { return values_.size(); }

	std::span<double> flat() { return values_; }
	std::span<const double> flat() const { return values_; }

	std::span<double> view(Block kind, std::size_t head = 0) { return layout_.view(flat(), kind, head); }
	std::span<const double> view(Block kind, std::size_t head = 0) const { return layout_.view(flat(), kind, head); }

	std::uint64_t fingerprint() const;

	bool operator==(const QrnnParams &other) const {
		return config_ == other.config_ && values_ == other.values_;
	}

private:
	QrnnConfig config_;
	ParamLayout layout_;
	std::vector<double> values_;
};

// He-style initialization: weights ~ N(0, 2 / fan_in), biases zero.
QrnnParams init_params(const QrnnConfig &config, SeededRng &rng);

// Activations of one forward pass, consumed by one backward pass.
struct ForwardCache {
	std::size_t batch = 0;
	std::uint64_t params_fingerprint = 0;
	QrnnConfig config;
	std::vector<double> input; // [batch x feature_dim]
	std::vector<double> z1, h1; // [batch x c1 x L1]
	std::vector<double> z2, h2; // [batch x c2 x L2]
	std::vector<double> z3, hfc; // [batch x hidden]
	std::vector<Tensor> outputs; // per quantile [batch x horizon]
	bool consumed = false;
};

// batch: [batch x feature_dim]. Returns one [batch x horizon] tensor per quantile.
std::vector<Tensor> forward(const QrnnParams &params, const Tensor &batch, ForwardCache *cache_out = nullptr);

// Mean over all elements.
double pinball_loss(const Tensor &pred, const Tensor &target, double q, LossOrientation orientation);

// d pinball_loss / d pred; the subgradient at pred == target is 0.
Tensor pinball_loss_grad(const Tensor &pred, const Tensor &target, double q, LossOrientation orientation);

struct BackwardOptions {
	bool input_gradients = false;
	std::optional<std::size_t> only_quantile; // others are left empty
};

struct QuantileGradients {
	std::vector<std::vector<double>> params; // per quantile, full parameter layout
	std::vector<Tensor> inputs;              // per quantile [batch x feature_dim] when requested
	std::vector<double> losses;              // per quantile pinball loss of the cached batch
};

// Exact gradient of each quantile's pinball loss w.r.t. every parameter.
QuantileGradients backward_quantile_gradients(ForwardCache &cache, const QrnnParams &params, const Tensor &targets,
                                              const BackwardOptions &options = {});

// Gradient of the mean pinball loss over all quantile levels, (1/|Q|) * sum_q L_q,
// computed with one trunk backward pass.
std::vector<double> backward_mean_loss_gradient(ForwardCache &cache, const QrnnParams &params, const Tensor &targets,
                                                std::vector<double> *losses_out = nullptr);

// Population variance of one quantile's predictions over batch x horizon.
double predictive_variance(const Tensor &predictions);

// ---- checkpoints -------------------------------------------------------------

void write_checkpoint(std::ostream &out, const QrnnParams &params);
QrnnParams read_checkpoint(std::istream &in);
void save_checkpoint(const std::string &path, const QrnnParams &params);
QrnnParams load_checkpoint(const std::string &path);

} // namespace aero
