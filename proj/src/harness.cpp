#include "aero/harness.hpp"

#include "aero/error.hpp"
#include "aero/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>

namespace aero {

namespace {

constexpr std::size_t kPredictChunk = 2048;
constexpr std::uint64_t kShuffleStream = 0x73687566666c65ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

std::string fmt(double v) {
	char buf[40];
	std::snprintf(buf, sizeof buf, "%.12g", v);
	return buf;
}

std::string level_label(double q) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "q%g", q);
	return buf;
}

std::string csv_field(const std::string &s) {
	if (s.find_first_of(",\"\n") == std::string::npos) {
		return s;
	}
	std::string out = "\"";
	for (char c : s) {
		out += c == '"' ? std::string("\"\"") : std::string(1, c);
	}
	return out + "\"";
}

std::ofstream open_output(const RunConfig &config, const std::string &name) {
	std::filesystem::create_directories(config.out_dir);
	const std::string path = config.out_dir + "/" + name;
	std::ofstream out(path);
	if (!out) {
		throw ConfigError("cannot write " + path);
	}
	return out;
}

double mean(const std::vector<double> &v) {
	return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Tensor gather_rows(const Tensor &src, const std::vector<std::size_t> &index, std::size_t begin, std::size_t end) {
	const std::size_t cols = src.dim(1);
	Tensor out({end - begin, cols});
	auto dst = out.values();
	const auto from = src.values();
	for (std::size_t r = begin; r < end; ++r) {
		std::copy_n(from.begin() + index[r] * cols, cols, dst.begin() + (r - begin) * cols);
	}
	return out;
}

Tensor row_slice(const Tensor &src, std::size_t begin, std::size_t end) {
	const std::size_t cols = src.dim(1);
	const auto from = src.values();
	return Tensor({end - begin, cols}, std::vector<double>(from.begin() + begin * cols, from.begin() + end * cols));
}

// Heads ordered by the level they estimate.
std::vector<std::size_t> heads_by_estimated_level(const QrnnConfig &model) {
	std::vector<std::size_t> order(model.num_quantiles());
	std::iota(order.begin(), order.end(), 0);
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
		return model.estimated_level(a) < model.estimated_level(b);
	});
	return order;
}

// Band of the heads estimating the lowest and highest levels (0.1 and 0.9 by default).
std::pair<std::size_t, std::size_t> band_heads(const QrnnConfig &model) {
	const auto order = heads_by_estimated_level(model);
	return {order.front(), order.back()};
}

stats::MetricsReport build_metrics(const RunConfig &config, OptimizerKind kind, const TrainResult &result,
                                   const Dataset &dataset, std::uint64_t grad_evals) {
	const QrnnConfig &model = config.model;
	stats::MetricsReport r;
	r.optimizer = to_string(kind);
	r.epochs = result.epochs.size();
	r.quantiles = model.quantiles;
	for (std::size_t h = 0; h < model.num_quantiles(); ++h) {
		r.estimated_levels.push_back(model.estimated_level(h));
	}
	r.initial_train_loss = mean(result.initial_train);
	r.initial_test_loss = mean(result.initial_test);
	for (const auto &e : result.epochs) {
		r.train_losses.push_back(e.train_loss);
		r.test_losses.push_back(e.test_loss);
	}
	r.grad_evals = grad_evals;
	r.smoothness = stats::loss_smoothness(r.train_losses);

	const auto preds = predict_all(result.final_params, dataset.test_x);
	r.test_pinball = stats::pinball_metric(preds, dataset.test_y, model.quantiles, model.loss_orientation);
	const auto [lo, hi] = band_heads(model);
	r.band_lower_level = model.estimated_level(lo);
	r.band_upper_level = model.estimated_level(hi);
	r.picp = stats::picp(preds[lo], preds[hi], dataset.test_y);
	r.mean_interval_width = stats::mean_interval_width(preds[lo], preds[hi]);
	std::vector<Tensor> ordered;
	for (std::size_t h : heads_by_estimated_level(model)) {
		ordered.push_back(preds[h]);
	}
	r.crossing_rate = stats::crossing_rate(ordered);
	if (r.train_losses.size() >= 2) {
		try {
			r.t_test = stats::paired_t_test(r.train_losses, r.test_losses);
		} catch (const std::invalid_argument &) {
			r.t_test.reset();
		}
	}
	return r;
}

void require_finite_losses(const std::vector<double> &losses, std::size_t epoch, std::size_t step) {
	for (double l : losses) {
		if (!std::isfinite(l)) {
			throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
			                     std::to_string(step));
		}
	}
}

} // namespace

Dataset prepare_dataset(const RunConfig &config) {
	const data::PriceSeries series = config.source == DataSource::csv
	                                     ? data::load_csv(config.csv_path)
	                                     : data::generate_synthetic_series(config.data_seed, config.days, config.generator);
	const data::FeatureMatrix all = data::engineer_features(series, config.model.horizon);
	auto [train, test] = data::train_test_split(all, config.test_fraction);
	data::ScaledSplit split = data::fit_apply_scaler(train, test);
	Dataset d;
	d.train = std::move(split.train);
	d.test = std::move(split.test);
	d.scaler = std::move(split.scaler);
	d.train_x = d.train.feature_tensor();
	d.train_y = d.train.target_tensor();
	d.test_x = d.test.feature_tensor();
	d.test_y = d.test.target_tensor();
	return d;
}

std::vector<Tensor> predict_all(const QrnnParams &params, const Tensor &x) {
	const QrnnConfig &model = params.config();
	const std::size_t rows = x.dim(0);
	std::vector<Tensor> out(model.num_quantiles(), Tensor({rows, model.horizon}));
	for (std::size_t begin = 0; begin < rows; begin += kPredictChunk) {
		const std::size_t end = std::min(rows, begin + kPredictChunk);
		const auto chunk = forward(params, row_slice(x, begin, end));
		for (std::size_t h = 0; h < chunk.size(); ++h) {
			std::copy(chunk[h].values().begin(), chunk[h].values().end(),
			          out[h].values().begin() + begin * model.horizon);
		}
	}
	return out;
}

std::vector<double> evaluate_losses(const QrnnParams &params, const Tensor &x, const Tensor &y) {
	const QrnnConfig &model = params.config();
	return stats::pinball_metric(predict_all(params, x), y, model.quantiles, model.loss_orientation);
}

TrainResult train_model(const RunConfig &config, const Dataset &dataset, OptimizerKind kind,
                        std::ostream *steptrace) {
	const auto started = std::chrono::steady_clock::now();
	SeededRng init_rng(config.seed);
	SeededRng shuffle_rng(config.seed ^ kShuffleStream);
	SeededRng noise_rng(config.seed ^ kNoiseStream);

	QrnnParams params = init_params(config.model, init_rng);
	TrainResult result{params, params, {}, {}, {}, {}, 0.0};
	result.initial_train = evaluate_losses(params, dataset.train_x, dataset.train_y);
	result.initial_test = evaluate_losses(params, dataset.test_x, dataset.test_y);

	ModelOptimizer optimizer(config.optimizer_settings(kind), params);
	const std::size_t n = dataset.train_x.dim(0);
	const std::size_t heads = config.model.num_quantiles();
	std::vector<std::size_t> order(n);
	std::iota(order.begin(), order.end(), 0);

	std::size_t step = 0;
	for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
		shuffle_rng.shuffle(order);
		EpochRecord record;
		record.epoch = epoch;
		record.train_quantile.assign(heads, 0.0);
		const std::uint64_t evals_before = optimizer.grad_evals();
		for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
			const std::size_t end = std::min(n, begin + config.batch_size);
			++step;
			const Tensor x = gather_rows(dataset.train_x, order, begin, end);
			const Tensor y = gather_rows(dataset.train_y, order, begin, end);
			BatchResult batch;
			try {
				batch = optimizer.step(params, x, y, noise_rng);
			} catch (const NumericalError &e) {
				throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
				                     std::to_string(step));
			}
			require_finite_losses(batch.losses, epoch, step);
			for (std::size_t h = 0; h < heads; ++h) {
				record.train_quantile[h] += batch.losses[h] * static_cast<double>(end - begin);
			}
			if (steptrace != nullptr && batch.trace) {
				*steptrace << to_json_line(*batch.trace) << '\n';
			}
		}
		for (double &l : record.train_quantile) {
			l /= static_cast<double>(n);
		}
		if (!std::all_of(params.flat().begin(), params.flat().end(), [](double v) { return std::isfinite(v); })) {
			throw NumericalError("non-finite parameters after epoch " + std::to_string(epoch) + ", step " +
			                     std::to_string(step));
		}
		record.test_quantile = evaluate_losses(params, dataset.test_x, dataset.test_y);
		require_finite_losses(record.test_quantile, epoch, step);
		record.train_loss = mean(record.train_quantile);
		record.test_loss = mean(record.test_quantile);
		record.grad_evals = optimizer.grad_evals() - evals_before;
		result.epochs.push_back(std::move(record));
	}
	result.final_params = params;
	result.metrics = build_metrics(config, kind, result, dataset, optimizer.grad_evals());
	result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
	return result;
}

void write_loss_log(std::ostream &out, const QrnnConfig &model, const std::vector<EpochRecord> &epochs) {
	out << "epoch,train_loss,test_loss";
	for (double q : model.quantiles) {
		out << ",train_" << level_label(q);
	}
	for (double q : model.quantiles) {
		out << ",test_" << level_label(q);
	}
	out << '\n';
	for (const auto &e : epochs) {
		out << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.test_loss);
		for (double l : e.train_quantile) {
			out << ',' << fmt(l);
		}
		for (double l : e.test_quantile) {
			out << ',' << fmt(l);
		}
		out << '\n';
	}
}

int run_train(const RunConfig &config, std::ostream &log) {
	config.validate();
	const Dataset dataset = prepare_dataset(config);
	log << "train: " << dataset.train.rows() << " rows, test: " << dataset.test.rows() << " rows, optimizer "
	    << to_string(config.optimizer.kind) << ", " << config.epochs << " epochs\n";

	{
		auto resolved = open_output(config, "run_config.txt");
		write_run_config(resolved, config);
	}
	std::optional<std::ofstream> trace;
	if (config.optimizer.kind == OptimizerKind::aero_quantile) {
		trace = open_output(config, "steptrace.log");
	}
	const TrainResult result = train_model(config, dataset, config.optimizer.kind, trace ? &*trace : nullptr);

	save_checkpoint(config.checkpoint_path(), result.final_params);
	{
		auto out = open_output(config, "loss_log.csv");
		write_loss_log(out, config.model, result.epochs);
	}
	{
		auto out = open_output(config, "metrics.json-lines");
		out << stats::to_json_line(result.metrics) << '\n';
	}
	{
		auto out = open_output(config, "metrics.csv");
		stats::write_metrics_csv(out, result.metrics);
	}
	const auto &m = result.metrics;
	log << "loss " << fmt(m.initial_train_loss) << " -> " << fmt(m.final_train_loss()) << " (test "
	    << fmt(m.final_test_loss()) << "), picp " << fmt(m.picp) << ", " << fmt(result.seconds) << " s\n";
	if (m.t_test) {
		log << "paired t-test train vs test: t = " << fmt(m.t_test->t_stat) << ", p = " << fmt(m.t_test->p_value)
		    << ", df = " << m.t_test->df << '\n';
	}
	return kExitOk;
}

int run_predict(const RunConfig &config, std::ostream &log) {
	config.validate();
	const QrnnParams params = load_checkpoint(config.checkpoint_path());
	if (!(params.config() == config.model)) {
		throw ShapeError("checkpoint " + config.checkpoint_path() + " does not match the configured model");
	}
	const Dataset dataset = prepare_dataset(config);
	const QrnnConfig &model = config.model;
	const auto preds = predict_all(params, dataset.test_x);
	const auto [lo, hi] = band_heads(model);

	auto out = open_output(config, "forecast.csv");
	out << "origin,origin_time,step,time";
	for (double q : model.quantiles) {
		out << ",head_" << level_label(q);
	}
	out << ",lower_" << level_label(model.estimated_level(lo)) << ",upper_"
	    << level_label(model.estimated_level(hi)) << ",target\n";
	const auto &scaler = dataset.scaler;
	for (std::size_t r = 0; r < dataset.test.rows(); ++r) {
		const std::int64_t origin = dataset.test.origins[r];
		const std::string origin_time = data::format_timestamp(origin);
		for (std::size_t s = 0; s < model.horizon; ++s) {
			out << r << ',' << origin_time << ',' << s + 1 << ','
			    << data::format_timestamp(origin + static_cast<std::int64_t>(s + 1) * data::kStepSeconds);
			for (const auto &p : preds) {
				out << ',' << fmt(scaler.unscale_target(p.at(r, s)));
			}
			out << ',' << fmt(scaler.unscale_target(preds[lo].at(r, s))) << ','
			    << fmt(scaler.unscale_target(preds[hi].at(r, s))) << ','
			    << fmt(scaler.unscale_target(dataset.test_y.at(r, s))) << '\n';
		}
	}
	log << "forecast: " << dataset.test.rows() << " origins x " << model.horizon << " steps -> " << config.out_dir
	    << "/forecast.csv\n";
	return kExitOk;
}

int run_benchmark(const RunConfig &config, std::ostream &log) {
	config.validate();
	const Dataset dataset = prepare_dataset(config);
	const OptimizerKind kinds[] = {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::aero_shared,
	                               OptimizerKind::aero_quantile};
	auto table = open_output(config, "benchmark.csv");
	table << "optimizer,epoch0_train_loss,final_train_loss,final_test_loss,smoothness,picp,crossing_rate,"
	         "grad_evals,grad_evals_per_epoch\n";
	auto metrics = open_output(config, "metrics.json-lines");
	for (OptimizerKind kind : kinds) {
		const TrainResult result = train_model(config, dataset, kind);
		const auto &m = result.metrics;
		const double per_epoch =
		    config.epochs == 0 ? 0.0 : static_cast<double>(m.grad_evals) / static_cast<double>(config.epochs);
		table << to_string(kind) << ',' << fmt(m.initial_train_loss) << ',' << fmt(m.final_train_loss()) << ','
		      << fmt(m.final_test_loss()) << ',' << fmt(m.smoothness) << ',' << fmt(m.picp) << ','
		      << fmt(m.crossing_rate) << ',' << m.grad_evals << ',' << fmt(per_epoch) << '\n';
		metrics << stats::to_json_line(m) << '\n';
		auto curve = open_output(config, "loss_log_" + to_string(kind) + ".csv");
		write_loss_log(curve, config.model, result.epochs);
		log << to_string(kind) << ": final train " << fmt(m.final_train_loss()) << ", test "
		    << fmt(m.final_test_loss()) << ", grad evals " << m.grad_evals << ", " << fmt(result.seconds) << " s\n";
	}
	return kExitOk;
}

int run_theory_check(const RunConfig &config, std::ostream &log) {
	config.validate();
	const auto results = theory::run_theory_suites(config.tolerances, config.seed);
	auto out = open_output(config, "theory_report.csv");
	out << "theorem,name,parameters,measured,threshold,passed\n";
	bool all = true;
	for (const auto &r : results) {
		out << r.theorem << ',' << csv_field(r.name) << ',' << csv_field(r.parameters) << ','
		    << csv_field(r.measured) << ',' << csv_field(r.threshold) << ',' << (r.passed ? "true" : "false")
		    << '\n';
		log << "theorem " << r.theorem << " (" << r.name << "): " << (r.passed ? "PASS" : "FAIL") << "  "
		    << r.measured << " vs " << r.threshold << "  [" << fmt(r.seconds) << " s]\n";
		all = all && r.passed;
	}
	return all ? kExitOk : kExitTheory;
}

int run_command(const std::string &command, const RunConfig &config, std::ostream &log, std::ostream &err) {
	try {
		if (command == "train") {
			return run_train(config, log);
		}
		if (command == "predict") {
			return run_predict(config, log);
		}
		if (command == "benchmark") {
			return run_benchmark(config, log);
		}
		if (command == "theory-check") {
			return run_theory_check(config, log);
		}
		err << "unknown command '" << command << "'\n";
		return kExitUsage;
	} catch (const NumericalError &e) {
		err << "numerical failure: " << e.what() << '\n';
		return kExitNumerical;
	} catch (const ConfigError &e) {
		err << "config error: " << e.what() << '\n';
		return kExitUsage;
	} catch (const std::invalid_argument &e) {
		err << "invalid input: " << e.what() << '\n';
		return kExitUsage;
	} catch (const std::exception &e) {
		err << "error: " << e.what() << '\n';
		return kExitUsage;
	}
}

} // namespace aero
