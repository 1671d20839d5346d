#include "aero/data.hpp"

#include "aero/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace aero::data {

namespace {

double round_significant(double x) {
	char buf[40];
	std::snprintf(buf, sizeof buf, "%.12g", x);
	return std::strtod(buf, nullptr);
}

std::string trim(const std::string &s) {
	const auto first = s.find_first_not_of(" \t\r\n");
	if (first == std::string::npos) {
		return {};
	}
	const auto last = s.find_last_not_of(" \t\r\n");
	return s.substr(first, last - first + 1);
}

bool parse_fixed_int(const std::string &s, std::size_t pos, std::size_t len, int &out) {
	if (pos + len > s.size()) {
		return false;
	}
	int v = 0;
	for (std::size_t i = pos; i < pos + len; ++i) {
		if (s[i] < '0' || s[i] > '9') {
			return false;
		}
		v = v * 10 + (s[i] - '0');
	}
	out = v;
	return true;
}

struct CalendarFields {
	int hour, day, month, weekday;
};

CalendarFields calendar(std::int64_t unix_seconds) {
	using namespace std::chrono;
	const sys_seconds tp{seconds{unix_seconds}};
	const sys_days dp = floor<days>(tp);
	const year_month_day ymd{dp};
	const weekday wd{dp};
	const auto secs_of_day = (tp - dp).count();
	return {static_cast<int>(secs_of_day / 3600), static_cast<int>(unsigned(ymd.day())),
	        static_cast<int>(unsigned(ymd.month())), static_cast<int>(wd.iso_encoding()) - 1};
}

} // namespace

double synthetic_baseline(const GeneratorConfig &config, std::size_t step) {
	const double t = static_cast<double>(step);
	const double day = static_cast<double>(kStepsPerDay);
	const double two_pi = 2.0 * std::numbers::pi;
	return config.base_price + config.daily_amplitude * std::sin(two_pi * t / day) +
	       config.weekly_amplitude * std::sin(two_pi * t / (7.0 * day));
}

PriceSeries generate_synthetic_series(std::uint64_t seed, std::size_t days, const GeneratorConfig &config) {
	if (days < 2) {
		throw std::invalid_argument("generate_synthetic_series: days must be >= 2");
	}
	if (config.noise_std < 0.0 || config.spike_probability < 0.0 || config.spike_probability > 1.0 ||
	    config.spike_mean < 0.0 || std::abs(config.ar_coefficient) >= 1.0) {
		throw std::invalid_argument("generate_synthetic_series: generator parameters out of range");
	}
	SeededRng rng(seed);
	const std::size_t n = days * kStepsPerDay;
	PriceSeries series;
	series.timestamps.resize(n);
	series.prices.resize(n);
	double ar = 0.0;
	for (std::size_t t = 0; t < n; ++t) {
		if (config.noise_std > 0.0) {
			ar = config.ar_coefficient * ar + config.noise_std * rng.normal();
		}
		double spike = 0.0;
		if (config.spike_probability > 0.0 && rng.bernoulli(config.spike_probability)) {
			spike = config.spike_mean > 0.0 ? rng.exponential(config.spike_mean) : 0.0;
		}
		series.timestamps[t] = config.start + static_cast<std::int64_t>(t) * kStepSeconds;
		series.prices[t] = round_significant(synthetic_baseline(config, t) + ar + spike);
	}
	return series;
}

std::string format_timestamp(std::int64_t unix_seconds) {
	using namespace std::chrono;
	const sys_seconds tp{seconds{unix_seconds}};
	const sys_days dp = floor<days>(tp);
	const year_month_day ymd{dp};
	const hh_mm_ss hms{tp - dp};
	char buf[32];
	std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()), unsigned(ymd.month()),
	              unsigned(ymd.day()), int(hms.hours().count()), int(hms.minutes().count()),
	              int(hms.seconds().count()));
	return buf;
}

std::int64_t parse_timestamp(const std::string &raw) {
	const std::string s = trim(raw);
	int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
	const auto bad = [&] { return std::invalid_argument("bad timestamp '" + s + "'"); };
	if (s.size() < 16 || !parse_fixed_int(s, 0, 4, y) || s[4] != '-' || !parse_fixed_int(s, 5, 2, mo) ||
	    s[7] != '-' || !parse_fixed_int(s, 8, 2, d) || (s[10] != 'T' && s[10] != ' ') ||
	    !parse_fixed_int(s, 11, 2, h) || s[13] != ':' || !parse_fixed_int(s, 14, 2, mi)) {
		throw bad();
	}
	std::size_t pos = 16;
	if (pos < s.size() && s[pos] == ':') {
		if (!parse_fixed_int(s, pos + 1, 2, sec)) {
			throw bad();
		}
		pos += 3;
	}
	const std::string suffix = s.substr(pos);
	if (!suffix.empty() && suffix != "Z" && suffix != "+00:00") {
		throw bad();
	}
	using namespace std::chrono;
	const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
	if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) {
		throw bad();
	}
	const sys_days dp{ymd};
	return dp.time_since_epoch().count() * 86400LL + h * 3600LL + mi * 60LL + sec;
}

void write_csv(std::ostream &out, const PriceSeries &series) {
	if (series.timestamps.size() != series.prices.size()) {
		throw std::invalid_argument("write_csv: timestamps/prices length mismatch");
	}
	out << "timestamp,price\n";
	char buf[40];
	for (std::size_t i = 0; i < series.size(); ++i) {
		std::snprintf(buf, sizeof buf, "%.12g", series.prices[i]);
		out << format_timestamp(series.timestamps[i]) << ',' << buf << '\n';
	}
}

void save_csv(const std::string &path, const PriceSeries &series) {
	std::ofstream out(path);
	if (!out) {
		throw ConfigError("cannot write " + path);
	}
	write_csv(out, series);
}

PriceSeries read_csv(std::istream &in) {
	std::string line;
	std::size_t line_no = 0;
	const auto fail = [&](const std::string &what) {
		return ConfigError("line " + std::to_string(line_no) + ": " + what);
	};
	bool header_seen = false;
	std::vector<std::int64_t> ts;
	std::vector<double> px;
	while (std::getline(in, line)) {
		++line_no;
		const std::string row = trim(line);
		if (row.empty()) {
			continue;
		}
		if (!header_seen) {
			if (row != "timestamp,price") {
				throw fail("expected header 'timestamp,price'");
			}
			header_seen = true;
			continue;
		}
		const auto comma = row.find(',');
		if (comma == std::string::npos || row.find(',', comma + 1) != std::string::npos) {
			throw fail("expected two comma-separated fields");
		}
		std::int64_t stamp = 0;
		try {
			stamp = parse_timestamp(row.substr(0, comma));
		} catch (const std::invalid_argument &e) {
			throw fail(e.what());
		}
		const std::string value = trim(row.substr(comma + 1));
		char *end = nullptr;
		const double price = std::strtod(value.c_str(), &end);
		if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(price)) {
			throw fail("bad price '" + value + "'");
		}
		if (!ts.empty()) {
			if (stamp == ts.back()) {
				throw fail("duplicate timestamp " + format_timestamp(stamp));
			}
			if (stamp < ts.back()) {
				throw fail("timestamps not increasing at " + format_timestamp(stamp));
			}
			if ((stamp - ts.back()) % kStepSeconds != 0) {
				throw fail("timestamp off the 15-minute grid");
			}
		}
		ts.push_back(stamp);
		px.push_back(price);
	}
	if (!header_seen) {
		throw ConfigError("line 0: empty file, expected header 'timestamp,price'");
	}

	PriceSeries series;
	for (std::size_t i = 0; i < ts.size(); ++i) {
		if (i > 0) {
			const std::int64_t gap = (ts[i] - ts[i - 1]) / kStepSeconds;
			for (std::int64_t k = 1; k < gap; ++k) {
				const double w = static_cast<double>(k) / static_cast<double>(gap);
				series.timestamps.push_back(ts[i - 1] + k * kStepSeconds);
				series.prices.push_back(px[i - 1] + w * (px[i] - px[i - 1]));
			}
		}
		series.timestamps.push_back(ts[i]);
		series.prices.push_back(px[i]);
	}
	return series;
}

PriceSeries load_csv(const std::string &path) {
	std::ifstream in(path);
	if (!in) {
		throw ConfigError("cannot open " + path);
	}
	return read_csv(in);
}

std::vector<std::string> feature_names() {
	std::vector<std::string> names{"hour", "day", "month", "weekday"};
	for (std::size_t k = 1; k <= kNumLags; ++k) {
		names.push_back("lag_" + std::to_string(k));
	}
	for (std::size_t w : kMovingAverageWindows) {
		names.push_back("ma_" + std::to_string(w));
	}
	return names;
}

Tensor FeatureMatrix::feature_tensor() const { return Tensor({rows(), cols()}, features); }

Tensor FeatureMatrix::target_tensor() const { return Tensor({rows(), horizon}, targets); }

FeatureMatrix FeatureMatrix::slice(std::size_t begin, std::size_t end) const {
	if (begin > end || end > rows()) {
		throw std::out_of_range("FeatureMatrix::slice: bad row range");
	}
	FeatureMatrix out;
	out.feature_names = feature_names;
	out.horizon = horizon;
	out.origins.assign(origins.begin() + begin, origins.begin() + end);
	out.features.assign(features.begin() + begin * cols(), features.begin() + end * cols());
	out.targets.assign(targets.begin() + begin * horizon, targets.begin() + end * horizon);
	return out;
}

FeatureMatrix engineer_features(const PriceSeries &series, std::size_t horizon) {
	const std::size_t n = series.size();
	if (series.timestamps.size() != n) {
		throw std::invalid_argument("engineer_features: timestamps/prices length mismatch");
	}
	if (horizon == 0) {
		throw std::invalid_argument("engineer_features: horizon must be positive");
	}
	if (n <= kWarmup + horizon) {
		throw std::invalid_argument("engineer_features: series of length " + std::to_string(n) +
		                            " too short, need > " + std::to_string(kWarmup + horizon));
	}
	FeatureMatrix m;
	m.feature_names = feature_names();
	m.horizon = horizon;
	const std::size_t rows = n - kWarmup - horizon;
	const std::size_t cols = m.feature_names.size();
	m.origins.resize(rows);
	m.features.resize(rows * cols);
	m.targets.resize(rows * horizon);
	const auto &p = series.prices;
	for (std::size_t r = 0; r < rows; ++r) {
		const std::size_t t = kWarmup + r;
		m.origins[r] = series.timestamps[t];
		double *f = &m.features[r * cols];
		const CalendarFields cal = calendar(series.timestamps[t]);
		*f++ = cal.hour;
		*f++ = cal.day;
		*f++ = cal.month;
		*f++ = cal.weekday;
		for (std::size_t k = 1; k <= kNumLags; ++k) {
			*f++ = p[t - k];
		}
		for (std::size_t w : kMovingAverageWindows) {
			double sum = 0.0;
			for (std::size_t j = t + 1 - w; j <= t; ++j) {
				sum += p[j];
			}
			*f++ = sum / static_cast<double>(w);
		}
		for (std::size_t h = 0; h < horizon; ++h) {
			m.targets[r * horizon + h] = p[t + 1 + h];
		}
	}
	return m;
}

void write_features_csv(std::ostream &out, const FeatureMatrix &matrix) {
	out << "timestamp";
	for (const auto &name : matrix.feature_names) {
		out << ',' << name;
	}
	for (std::size_t h = 1; h <= matrix.horizon; ++h) {
		out << ",target_" << h;
	}
	out << '\n';
	char buf[40];
	for (std::size_t r = 0; r < matrix.rows(); ++r) {
		out << format_timestamp(matrix.origins[r]);
		for (std::size_t c = 0; c < matrix.cols(); ++c) {
			std::snprintf(buf, sizeof buf, ",%.12g", matrix.feature(r, c));
			out << buf;
		}
		for (std::size_t h = 0; h < matrix.horizon; ++h) {
			std::snprintf(buf, sizeof buf, ",%.12g", matrix.target(r, h));
			out << buf;
		}
		out << '\n';
	}
}

namespace {

double minmax(double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.0; }

} // namespace

double ScalerParams::scale_feature(std::size_t col, double x) const {
	return minmax(x, feature_min.at(col), feature_max.at(col));
}

double ScalerParams::scale_target(double y) const { return minmax(y, target_min, target_max); }

double ScalerParams::unscale_target(double scaled) const {
	return target_max > target_min ? scaled * (target_max - target_min) + target_min : target_min;
}

ScalerParams fit_scaler(const FeatureMatrix &train) {
	if (train.rows() == 0) {
		throw std::invalid_argument("fit_scaler: no training rows");
	}
	const std::size_t cols = train.cols();
	ScalerParams s;
	s.feature_min.assign(cols, 0.0);
	s.feature_max.assign(cols, 0.0);
	for (std::size_t c = 0; c < cols; ++c) {
		s.feature_min[c] = s.feature_max[c] = train.feature(0, c);
	}
	for (std::size_t r = 1; r < train.rows(); ++r) {
		for (std::size_t c = 0; c < cols; ++c) {
			s.feature_min[c] = std::min(s.feature_min[c], train.feature(r, c));
			s.feature_max[c] = std::max(s.feature_max[c], train.feature(r, c));
		}
	}
	const auto [lo, hi] = std::minmax_element(train.targets.begin(), train.targets.end());
	s.target_min = *lo;
	s.target_max = *hi;
	return s;
}

FeatureMatrix apply_scaler(const FeatureMatrix &matrix, const ScalerParams &scaler) {
	if (scaler.feature_min.size() != matrix.cols()) {
		throw ShapeError("apply_scaler: scaler has " + std::to_string(scaler.feature_min.size()) +
		                 " columns, matrix has " + std::to_string(matrix.cols()));
	}
	FeatureMatrix out = matrix;
	for (std::size_t r = 0; r < out.rows(); ++r) {
		for (std::size_t c = 0; c < out.cols(); ++c) {
			double &x = out.features[r * out.cols() + c];
			x = scaler.scale_feature(c, x);
		}
	}
	for (double &y : out.targets) {
		y = scaler.scale_target(y);
	}
	return out;
}

ScaledSplit fit_apply_scaler(const FeatureMatrix &train, const FeatureMatrix &test) {
	ScaledSplit split;
	split.scaler = fit_scaler(train);
	split.train = apply_scaler(train, split.scaler);
	split.test = apply_scaler(test, split.scaler);
	return split;
}

std::size_t test_row_count(std::size_t rows, double test_fraction) {
	if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
		throw std::invalid_argument("test_fraction must lie in (0, 1)");
	}
	const double exact = static_cast<double>(rows) * test_fraction;
	// Snap products like 100 * 0.07 = 7.000000000000001 to the intended integer.
	const double nearest = std::round(exact);
	const double count = std::abs(exact - nearest) < 1e-9 ? nearest : std::ceil(exact);
	return static_cast<std::size_t>(count);
}

std::pair<FeatureMatrix, FeatureMatrix> train_test_split(const FeatureMatrix &matrix, double test_fraction) {
	const std::size_t n = matrix.rows();
	const std::size_t n_test = test_row_count(n, test_fraction);
	if (n_test == 0 || n_test >= n) {
		throw std::invalid_argument("train_test_split: fraction leaves an empty train or test set");
	}
	return {matrix.slice(0, n - n_test), matrix.slice(n - n_test, n)};
}

} // namespace aero::data
