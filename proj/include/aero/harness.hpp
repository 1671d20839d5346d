#pragma once

// Command implementations behind the `aero` CLI.

#include "aero/config.hpp"
#include "aero/data.hpp"
#include "aero/qrnn.hpp"
#include "aero/stats.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace aero {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitTheory = 3;

struct Dataset {
	data::FeatureMatrix train;  // scaled
	data::FeatureMatrix test;   // scaled with the train-fitted scaler
	data::ScalerParams scaler;
	Tensor train_x, train_y, test_x, test_y;
};

Dataset prepare_dataset(const RunConfig &config);

// Forward over x in fixed-size chunks; one [rows x horizon] tensor per head.
std::vector<Tensor> predict_all(const QrnnParams &params, const Tensor &x);
// Per-head mean pinball loss over the whole set.
std::vector<double> evaluate_losses(const QrnnParams &params, const Tensor &x, const Tensor &y);

struct EpochRecord {
	std::size_t epoch = 0;
	double train_loss = 0.0;  // sample-weighted mean of minibatch losses during the epoch
	double test_loss = 0.0;   // full test set after the epoch
	std::vector<double> train_quantile;
	std::vector<double> test_quantile;
	std::uint64_t grad_evals = 0;
};

struct TrainResult {
	QrnnParams initial;
	QrnnParams final_params;
	std::vector<double> initial_train;  // per head, before any update
	std::vector<double> initial_test;
	std::vector<EpochRecord> epochs;
	stats::MetricsReport metrics;
	double seconds = 0.0;
};

// Deterministic given config.seed. Throws NumericalError naming the epoch and
// step when a loss or parameter becomes non-finite.
TrainResult train_model(const RunConfig &config, const Dataset &dataset, OptimizerKind kind,
                        std::ostream *steptrace = nullptr);

void write_loss_log(std::ostream &out, const QrnnConfig &model, const std::vector<EpochRecord> &epochs);

// Each writes into config.out_dir and returns an exit status; exceptions propagate.
int run_train(const RunConfig &config, std::ostream &log);
int run_predict(const RunConfig &config, std::ostream &log);
int run_benchmark(const RunConfig &config, std::ostream &log);
int run_theory_check(const RunConfig &config, std::ostream &log);

// Dispatches by name ("train", "predict", "benchmark", "theory-check") and maps
// exceptions to exit statuses, reporting them on err.
int run_command(const std::string &command, const RunConfig &config, std::ostream &log, std::ostream &err);

} // namespace aero
