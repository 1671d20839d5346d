#include "aero/qrnn.hpp"

#include "aero/error.hpp"
#include "aero/kernels.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace aero {

std::string to_string(LossOrientation orientation) {
	return orientation == LossOrientation::paper ? "paper" : "standard";
}

LossOrientation parse_orientation(const std::string &text) {
	if (text == "paper") {
		return LossOrientation::paper;
	}
	if (text == "standard") {
		return LossOrientation::standard;
	}
	throw std::invalid_argument("unknown loss orientation '" + text + "' (expected paper|standard)");
}

void QrnnConfig::validate() const {
	if (feature_dim == 0 || conv1_channels == 0 || conv2_channels == 0 || kernel_size == 0 || hidden_dim == 0) {
		throw std::invalid_argument("qrnn config: all layer dimensions must be >= 1");
	}
	if (horizon == 0) {
		throw std::invalid_argument("qrnn config: horizon must be >= 1");
	}
	if (kernel_size > feature_dim + 2 * padding() || kernel_size > conv1_length() + 2 * padding()) {
		throw std::invalid_argument("qrnn config: kernel size " + std::to_string(kernel_size) +
		                            " too large for feature_dim " + std::to_string(feature_dim));
	}
	if (quantiles.empty()) {
		throw std::invalid_argument("qrnn config: at least one quantile level is required");
	}
	for (std::size_t i = 0; i < quantiles.size(); ++i) {
		if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) {
			throw std::invalid_argument("qrnn config: quantile levels must lie in (0, 1)");
		}
		if (i > 0 && !(quantiles[i] > quantiles[i - 1])) {
			throw std::invalid_argument("qrnn config: quantile levels must be strictly increasing");
		}
	}
}

double QrnnConfig::estimated_level(std::size_t head) const {
	const double q = quantiles.at(head);
	return loss_orientation == LossOrientation::paper ? 1.0 - q : q;
}

bool ParamBlock::is_bias() const {
	return kind == Block::conv1_bias || kind == Block::conv2_bias || kind == Block::fc_bias ||
	       kind == Block::head_bias;
}

// ---- layout -------------------------------------------------------------------

ParamLayout::ParamLayout(const QrnnConfig &c) {
	auto add = [this](Block kind, std::size_t head, std::string name, Shape shape, std::size_t fan_in) {
		ParamBlock b{kind, head, std::move(name), std::move(shape), total_, fan_in};
		total_ += b.size();
		blocks_.push_back(std::move(b));
	};
	const std::size_t k = c.kernel_size;
	add(Block::conv1_weight, 0, "conv1.weight", {c.conv1_channels, 1, k}, k);
	add(Block::conv1_bias, 0, "conv1.bias", {c.conv1_channels}, k);
	add(Block::conv2_weight, 0, "conv2.weight", {c.conv2_channels, c.conv1_channels, k}, c.conv1_channels * k);
	add(Block::conv2_bias, 0, "conv2.bias", {c.conv2_channels}, c.conv1_channels * k);
	add(Block::fc_weight, 0, "fc1.weight", {c.hidden_dim, c.flat_dim()}, c.flat_dim());
	add(Block::fc_bias, 0, "fc1.bias", {c.hidden_dim}, c.flat_dim());
	for (std::size_t q = 0; q < c.quantiles.size(); ++q) {
		const std::string prefix = "head" + std::to_string(q);
		add(Block::head_weight, q, prefix + ".weight", {c.horizon, c.hidden_dim}, c.hidden_dim);
		add(Block::head_bias, q, prefix + ".bias", {c.horizon}, c.hidden_dim);
	}
}

const ParamBlock &ParamLayout::block(Block kind, std::size_t head) const {
	for (const auto &b : blocks_) {
		if (b.kind == kind && b.head == head) {
			return b;
		}
	}
	throw std::out_of_range("parameter block not found (head " + std::to_string(head) + ")");
}

std::span<double> ParamLayout::view(std::span<double> flat, Block kind, std::size_t head) const {
	if (flat.size() != total_) {
		throw ShapeError("parameter vector has " + std::to_string(flat.size()) + " entries, layout expects " +
		                 std::to_string(total_));
	}
	const auto &b = block(kind, head);
	return flat.subspan(b.offset, b.size());
}

std::span<const double> ParamLayout::view(std::span<const double> flat, Block kind, std::size_t head) const {
	if (flat.size() != total_) {
		throw ShapeError("parameter vector has " + std::to_string(flat.size()) + " entries, layout expects " +
		                 std::to_string(total_));
	}
	const auto &b = block(kind, head);
	return flat.subspan(b.offset, b.size());
}

std::pair<std::size_t, std::size_t> ParamLayout::head_range(std::size_t head) const {
	const auto &w = block(Block::head_weight, head);
	const auto &b = block(Block::head_bias, head);
	return {w.offset, b.offset + b.size()};
}

// ---- params -------------------------------------------------------------------

QrnnParams::QrnnParams(QrnnConfig config) : config_(std::move(config)), layout_((config_.validate(), config_)) {
	values_.assign(layout_.total(), 0.0);
}

std::uint64_t QrnnParams::fingerprint() const {
	// FNV-1a over the bit patterns.
	std::uint64_t h = 1469598103934665603ull;
	for (double v : values_) {
		h ^= std::bit_cast<std::uint64_t>(v);
		h *= 1099511628211ull;
	}
	return h;
}

QrnnParams init_params(const QrnnConfig &config, SeededRng &rng) {
	QrnnParams params(config);
	for (const auto &b : params.layout().blocks()) {
		if (b.is_bias()) {
			continue;
		}
		const double stddev = std::sqrt(2.0 / static_cast<double>(b.fan_in));
		auto view = params.flat().subspan(b.offset, b.size());
		for (double &v : view) {
			v = stddev * rng.normal();
		}
	}
	return params;
}

// ---- forward --------------------------------------------------------------------

namespace {

ConvDims conv1_dims(const QrnnConfig &c, std::size_t batch) {
	return ConvDims{batch, 1, c.feature_dim, c.conv1_channels, c.kernel_size, c.padding()};
}

ConvDims conv2_dims(const QrnnConfig &c, std::size_t batch) {
	return ConvDims{batch, c.conv1_channels, c.conv1_length(), c.conv2_channels, c.kernel_size, c.padding()};
}

DenseDims fc_dims(const QrnnConfig &c, std::size_t batch) { return DenseDims{batch, c.flat_dim(), c.hidden_dim}; }

DenseDims head_dims(const QrnnConfig &c, std::size_t batch) { return DenseDims{batch, c.hidden_dim, c.horizon}; }

} // namespace

std::vector<Tensor> forward(const QrnnParams &params, const Tensor &batch, ForwardCache *cache_out) {
	const QrnnConfig &c = params.config();
	if (batch.rank() != 2 || batch.dim(1) != c.feature_dim) {
		throw ShapeError("qrnn forward: batch must be [n x " + std::to_string(c.feature_dim) + "], got " +
		                 shape_string(batch.shape()));
	}
	const std::size_t n = batch.dim(0);

	ForwardCache local;
	ForwardCache &cache = cache_out ? *cache_out : local;
	cache = ForwardCache{};
	cache.batch = n;
	cache.params_fingerprint = params.fingerprint();
	cache.config = c;
	cache.input = batch.storage();

	const auto d1 = conv1_dims(c, n);
	cache.z1.resize(d1.output_size());
	cache.h1.resize(d1.output_size());
	kernels::conv1d_forward(d1, cache.input, params.view(Block::conv1_weight), params.view(Block::conv1_bias),
	                        cache.z1);
	kernels::relu_forward(cache.z1, cache.h1);

	const auto d2 = conv2_dims(c, n);
	cache.z2.resize(d2.output_size());
	cache.h2.resize(d2.output_size());
	kernels::conv1d_forward(d2, cache.h1, params.view(Block::conv2_weight), params.view(Block::conv2_bias),
	                        cache.z2);
	kernels::relu_forward(cache.z2, cache.h2);

	const auto d3 = fc_dims(c, n);
	cache.z3.resize(n * c.hidden_dim);
	cache.hfc.resize(n * c.hidden_dim);
	kernels::dense_forward(d3, cache.h2, params.view(Block::fc_weight), params.view(Block::fc_bias), cache.z3);
	kernels::relu_forward(cache.z3, cache.hfc);

	const auto d4 = head_dims(c, n);
	cache.outputs.reserve(c.num_quantiles());
	for (std::size_t q = 0; q < c.num_quantiles(); ++q) {
		Tensor y({n, c.horizon});
		kernels::dense_forward(d4, cache.hfc, params.view(Block::head_weight, q), params.view(Block::head_bias, q),
		                       y.values());
		cache.outputs.push_back(std::move(y));
	}
	return cache.outputs;
}

// ---- loss -----------------------------------------------------------------------

namespace {

void check_loss_args(const Tensor &pred, const Tensor &target, double q) {
	if (pred.shape() != target.shape()) {
		throw ShapeError("pinball loss: prediction " + shape_string(pred.shape()) + " vs target " +
		                 shape_string(target.shape()));
	}
	if (!(q > 0.0 && q < 1.0)) {
		throw std::invalid_argument("pinball loss: quantile level must lie in (0, 1)");
	}
	if (pred.size() == 0) {
		throw ShapeError("pinball loss: empty prediction");
	}
}

// Weights charged for over- and under-prediction.
std::pair<double, double> hinge_weights(double q, LossOrientation orientation) {
	return orientation == LossOrientation::paper ? std::pair{q, 1.0 - q} : std::pair{1.0 - q, q};
}

} // namespace

double pinball_loss(const Tensor &pred, const Tensor &target, double q, LossOrientation orientation) {
	check_loss_args(pred, target, q);
	const auto [over, under] = hinge_weights(q, orientation);
	double acc = 0.0;
	for (std::size_t i = 0; i < pred.size(); ++i) {
		const double e = pred[i] - target[i];
		acc += over * std::max(0.0, e) + under * std::max(0.0, -e);
	}
	return acc / static_cast<double>(pred.size());
}

Tensor pinball_loss_grad(const Tensor &pred, const Tensor &target, double q, LossOrientation orientation) {
	check_loss_args(pred, target, q);
	const auto [over, under] = hinge_weights(q, orientation);
	const double inv_n = 1.0 / static_cast<double>(pred.size());
	Tensor grad(pred.shape());
	for (std::size_t i = 0; i < pred.size(); ++i) {
		const double e = pred[i] - target[i];
		grad[i] = e > 0.0 ? over * inv_n : (e < 0.0 ? -under * inv_n : 0.0);
	}
	return grad;
}

// ---- backward -------------------------------------------------------------------

namespace {

void check_cache(const ForwardCache &cache, const QrnnParams &params, const Tensor &targets) {
	const QrnnConfig &c = params.config();
	if (cache.consumed) {
		throw std::logic_error("qrnn backward: forward cache was already consumed");
	}
	if (cache.outputs.size() != c.num_quantiles() || !(cache.config == c) ||
	    cache.params_fingerprint != params.fingerprint()) {
		throw std::logic_error("qrnn backward: forward cache does not belong to these parameters");
	}
	if (targets.shape() != Shape{cache.batch, c.horizon}) {
		throw ShapeError("qrnn backward: targets " + shape_string(targets.shape()) + " expected " +
		                 shape_string({cache.batch, c.horizon}));
	}
}

} // namespace

QuantileGradients backward_quantile_gradients(ForwardCache &cache, const QrnnParams &params, const Tensor &targets,
                                              const BackwardOptions &options) {
	const QrnnConfig &c = params.config();
	check_cache(cache, params, targets);
	const std::size_t n = cache.batch;
	if (options.only_quantile && *options.only_quantile >= c.num_quantiles()) {
		throw std::out_of_range("qrnn backward: quantile index out of range");
	}
	cache.consumed = true;

	const auto &layout = params.layout();
	const auto d1 = conv1_dims(c, n);
	const auto d2 = conv2_dims(c, n);
	const auto d3 = fc_dims(c, n);
	const auto d4 = head_dims(c, n);

	QuantileGradients out;
	out.params.resize(c.num_quantiles());
	out.inputs.resize(c.num_quantiles());
	out.losses.assign(c.num_quantiles(), 0.0);

	std::vector<double> dhfc(n * c.hidden_dim);
	std::vector<double> dflat(n * c.flat_dim());
	std::vector<double> dh1(d1.output_size());

	for (std::size_t q = 0; q < c.num_quantiles(); ++q) {
		if (options.only_quantile && *options.only_quantile != q) {
			continue;
		}
		const double level = c.quantiles[q];
		const Tensor &pred = cache.outputs[q];
		out.losses[q] = pinball_loss(pred, targets, level, c.loss_orientation);
		const Tensor dy = pinball_loss_grad(pred, targets, level, c.loss_orientation);

		auto &g = out.params[q];
		g.assign(layout.total(), 0.0);
		std::span<double> gs(g);

		kernels::dense_backward(d4, dy.values(), cache.hfc, params.view(Block::head_weight, q),
		                        layout.view(gs, Block::head_weight, q), layout.view(gs, Block::head_bias, q), dhfc);
		kernels::relu_backward(cache.z3, dhfc);
		kernels::dense_backward(d3, dhfc, cache.h2, params.view(Block::fc_weight), layout.view(gs, Block::fc_weight),
		                        layout.view(gs, Block::fc_bias), dflat);
		kernels::relu_backward(cache.z2, dflat);
		kernels::conv1d_backward(d2, dflat, cache.h1, params.view(Block::conv2_weight),
		                         layout.view(gs, Block::conv2_weight), layout.view(gs, Block::conv2_bias), dh1);
		kernels::relu_backward(cache.z1, dh1);

		std::span<double> dx;
		if (options.input_gradients) {
			out.inputs[q] = Tensor({n, c.feature_dim});
			dx = out.inputs[q].values();
		}
		kernels::conv1d_backward(d1, dh1, cache.input, params.view(Block::conv1_weight),
		                         layout.view(gs, Block::conv1_weight), layout.view(gs, Block::conv1_bias), dx);
	}
	return out;
}

std::vector<double> backward_mean_loss_gradient(ForwardCache &cache, const QrnnParams &params, const Tensor &targets,
                                                std::vector<double> *losses_out) {
	const QrnnConfig &c = params.config();
	check_cache(cache, params, targets);
	const std::size_t n = cache.batch;
	cache.consumed = true;

	const auto &layout = params.layout();
	const auto d1 = conv1_dims(c, n);
	const auto d2 = conv2_dims(c, n);
	const auto d3 = fc_dims(c, n);
	const auto d4 = head_dims(c, n);
	const double inv_q = 1.0 / static_cast<double>(c.num_quantiles());

	std::vector<double> g(layout.total(), 0.0);
	std::span<double> gs(g);
	std::vector<double> dhfc(n * c.hidden_dim, 0.0);
	std::vector<double> dhfc_q(n * c.hidden_dim);
	if (losses_out) {
		losses_out->assign(c.num_quantiles(), 0.0);
	}
	for (std::size_t q = 0; q < c.num_quantiles(); ++q) {
		const double level = c.quantiles[q];
		const Tensor &pred = cache.outputs[q];
		if (losses_out) {
			(*losses_out)[q] = pinball_loss(pred, targets, level, c.loss_orientation);
		}
		Tensor dy = pinball_loss_grad(pred, targets, level, c.loss_orientation);
		scale(dy.values(), inv_q);
		kernels::dense_backward(d4, dy.values(), cache.hfc, params.view(Block::head_weight, q),
		                        layout.view(gs, Block::head_weight, q), layout.view(gs, Block::head_bias, q), dhfc_q);
		axpy(1.0, dhfc_q, dhfc);
	}
	kernels::relu_backward(cache.z3, dhfc);
	std::vector<double> dflat(n * c.flat_dim());
	kernels::dense_backward(d3, dhfc, cache.h2, params.view(Block::fc_weight), layout.view(gs, Block::fc_weight),
	                        layout.view(gs, Block::fc_bias), dflat);
	kernels::relu_backward(cache.z2, dflat);
	std::vector<double> dh1(d1.output_size());
	kernels::conv1d_backward(d2, dflat, cache.h1, params.view(Block::conv2_weight),
	                         layout.view(gs, Block::conv2_weight), layout.view(gs, Block::conv2_bias), dh1);
	kernels::relu_backward(cache.z1, dh1);
	kernels::conv1d_backward(d1, dh1, cache.input, params.view(Block::conv1_weight),
	                         layout.view(gs, Block::conv1_weight), layout.view(gs, Block::conv1_bias), {});
	return g;
}

double predictive_variance(const Tensor &predictions) {
	if (predictions.size() == 0) {
		throw ShapeError("predictive variance: empty batch");
	}
	const double n = static_cast<double>(predictions.size());
	double mean = 0.0;
	for (double v : predictions.values()) {
		mean += v;
	}
	mean /= n;
	double acc = 0.0;
	for (double v : predictions.values()) {
		acc += (v - mean) * (v - mean);
	}
	return acc / n;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {
constexpr const char *kCheckpointMagic = "aero-qrnn-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string format_double(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

template <class T>
T expect_field(std::istream &in, const std::string &key) {
	std::string got;
	T value{};
	if (!(in >> got) || got != key || !(in >> value)) {
		throw ConfigError("checkpoint: expected field '" + key + "'");
	}
	return value;
}
} // namespace

void write_checkpoint(std::ostream &out, const QrnnParams &params) {
	const QrnnConfig &c = params.config();
	out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
	out << "feature_dim " << c.feature_dim << '\n';
	out << "conv1_channels " << c.conv1_channels << '\n';
	out << "conv2_channels " << c.conv2_channels << '\n';
	out << "kernel_size " << c.kernel_size << '\n';
	out << "hidden_dim " << c.hidden_dim << '\n';
	out << "horizon " << c.horizon << '\n';
	out << "loss_orientation " << to_string(c.loss_orientation) << '\n';
	out << "quantiles " << c.quantiles.size();
	for (double q : c.quantiles) {
		out << ' ' << format_double(q);
	}
	out << '\n';
	for (const auto &b : params.layout().blocks()) {
		out << "tensor " << b.name << ' ' << b.shape.size();
		for (auto d : b.shape) {
			out << ' ' << d;
		}
		out << '\n';
		for (double v : params.flat().subspan(b.offset, b.size())) {
			out << format_double(v) << '\n';
		}
	}
	out << "end\n";
}

QrnnParams read_checkpoint(std::istream &in) {
	std::string magic;
	int version = 0;
	if (!(in >> magic >> version) || magic != kCheckpointMagic) {
		throw ConfigError("checkpoint: not an aero checkpoint");
	}
	if (version != kCheckpointVersion) {
		throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
	}
	QrnnConfig c;
	c.feature_dim = expect_field<std::size_t>(in, "feature_dim");
	c.conv1_channels = expect_field<std::size_t>(in, "conv1_channels");
	c.conv2_channels = expect_field<std::size_t>(in, "conv2_channels");
	c.kernel_size = expect_field<std::size_t>(in, "kernel_size");
	c.hidden_dim = expect_field<std::size_t>(in, "hidden_dim");
	c.horizon = expect_field<std::size_t>(in, "horizon");
	c.loss_orientation = parse_orientation(expect_field<std::string>(in, "loss_orientation"));
	const auto nq = expect_field<std::size_t>(in, "quantiles");
	c.quantiles.resize(nq);
	for (auto &q : c.quantiles) {
		if (!(in >> q)) {
			throw ConfigError("checkpoint: truncated quantile list");
		}
	}
	QrnnParams params(c);
	for (const auto &b : params.layout().blocks()) {
		std::string tag, name;
		std::size_t rank = 0;
		if (!(in >> tag >> name >> rank) || tag != "tensor" || name != b.name || rank != b.shape.size()) {
			throw ConfigError("checkpoint: expected tensor '" + b.name + "'");
		}
		for (auto d : b.shape) {
			std::size_t got = 0;
			if (!(in >> got) || got != d) {
				throw ShapeError("checkpoint: tensor '" + b.name + "' has shape incompatible with " +
				                 shape_string(b.shape));
			}
		}
		for (double &v : params.flat().subspan(b.offset, b.size())) {
			std::string token;
			if (!(in >> token)) {
				throw ConfigError("checkpoint: truncated tensor '" + b.name + "'");
			}
			v = std::strtod(token.c_str(), nullptr);
		}
	}
	std::string end;
	if (!(in >> end) || end != "end") {
		throw ConfigError("checkpoint: missing end marker");
	}
	return params;
}

void save_checkpoint(const std::string &path, const QrnnParams &params) {
	std::ofstream out(path);
	if (!out) {
		throw ConfigError("cannot write checkpoint '" + path + "'");
	}
	write_checkpoint(out, params);
}

QrnnParams load_checkpoint(const std::string &path) {
	std::ifstream in(path);
	if (!in) {
		throw ConfigError("cannot open checkpoint '" + path + "'");
	}
	return read_checkpoint(in);
}

} // namespace aero
