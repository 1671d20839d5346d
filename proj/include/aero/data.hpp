#pragma once

// Price series ingestion, a synthetic stand-in generator, and supervised
// feature engineering for multi-step forecasting at 15-minute resolution.

#include "aero/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace aero::data {

inline constexpr std::int64_t kStepSeconds = 15 * 60;
inline constexpr std::size_t kStepsPerDay = 96;
inline constexpr std::size_t kNumLags = 20;
inline constexpr std::size_t kMovingAverageWindows[] = {4, 12, 96};
inline constexpr std::size_t kWarmup = 96;
inline constexpr std::size_t kNumFeatures = 4 + kNumLags + 3;

struct PriceSeries {
	std::vector<std::int64_t> timestamps; // unix seconds, UTC, uniform 15-minute spacing
	std::vector<double> prices;

	std::size_t size() const { return prices.size(); }
	bool operator==(const PriceSeries &) const = default;
};

struct GeneratorConfig {
	double base_price = 50.0;
	double daily_amplitude = 20.0;
	double weekly_amplitude = 6.0;
	double ar_coefficient = 0.9;
	double noise_std = 0.1;
	double spike_probability = 0.005;
	double spike_mean = 15.0;
	std::int64_t start = 1672531200; // 2023-01-01T00:00:00Z
};

// Deterministic part of the synthetic price at step t: base + daily and weekly sinusoids.
double synthetic_baseline(const GeneratorConfig &config, std::size_t step);

// days * 96 rows: baseline + AR(1) noise + occasional positive one-step spikes.
// Prices are rounded to 12 significant digits so they survive a CSV round trip.
PriceSeries generate_synthetic_series(std::uint64_t seed, std::size_t days, const GeneratorConfig &config = {});

std::string format_timestamp(std::int64_t unix_seconds);
// Accepts YYYY-MM-DDTHH:MM[:SS] with an optional 'Z' or '+00:00' suffix ('T' may be a space).
std::int64_t parse_timestamp(const std::string &text);

// Header "timestamp,price"; prices printed with 12 significant digits.
void write_csv(std::ostream &out, const PriceSeries &series);
void save_csv(const std::string &path, const PriceSeries &series);
// Missing 15-minute slots are filled by linear interpolation. Throws ConfigError
// naming the line for malformed rows, duplicates, or non-increasing timestamps.
PriceSeries read_csv(std::istream &in);
PriceSeries load_csv(const std::string &path);

struct FeatureMatrix {
	std::vector<std::string> feature_names;
	std::size_t horizon = 0;
	std::vector<std::int64_t> origins;  // timestamp of each row's origin t
	std::vector<double> features;       // rows x kNumFeatures
	std::vector<double> targets;        // rows x horizon, prices at t+1 .. t+horizon

	std::size_t rows() const { return origins.size(); }
	std::size_t cols() const { return feature_names.size(); }
	double feature(std::size_t row, std::size_t col) const { return features[row * cols() + col]; }
	double target(std::size_t row, std::size_t step) const { return targets[row * horizon + step]; }

	Tensor feature_tensor() const;
	Tensor target_tensor() const;
	FeatureMatrix slice(std::size_t begin, std::size_t end) const;
};

std::vector<std::string> feature_names();

// Row t: hour, day-of-month, month, weekday (Mon = 0), lag_1..lag_20,
// ma_4, ma_12, ma_96 (trailing means including t), targets t+1..t+horizon.
// The first 96 and last `horizon` positions have no row.
FeatureMatrix engineer_features(const PriceSeries &series, std::size_t horizon = 20);

void write_features_csv(std::ostream &out, const FeatureMatrix &matrix);

struct ScalerParams {
	std::vector<double> feature_min;
	std::vector<double> feature_max;
	double target_min = 0.0;
	double target_max = 1.0;

	double scale_feature(std::size_t col, double x) const;
	double scale_target(double y) const;
	double unscale_target(double scaled) const;
};

// Min-max ranges of the training rows only. Targets share one range.
ScalerParams fit_scaler(const FeatureMatrix &train);
FeatureMatrix apply_scaler(const FeatureMatrix &matrix, const ScalerParams &scaler);

struct ScaledSplit {
	FeatureMatrix train;
	FeatureMatrix test;
	ScalerParams scaler;
};

ScaledSplit fit_apply_scaler(const FeatureMatrix &train, const FeatureMatrix &test);

// Number of test rows: ceil(rows * test_fraction).
std::size_t test_row_count(std::size_t rows, double test_fraction);

// Chronological: the last test_row_count rows form the test set.
std::pair<FeatureMatrix, FeatureMatrix> train_test_split(const FeatureMatrix &matrix, double test_fraction);

} // namespace aero::data
