#include "aero/config.hpp"

#include "aero/error.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

namespace aero {

namespace {

std::string trim(const std::string &s) {
	const auto first = s.find_first_not_of(" \t\r\n");
	if (first == std::string::npos) {
		return {};
	}
	const auto last = s.find_last_not_of(" \t\r\n");
	return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
	char buf[40];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

double parse_double(const std::string &key, const std::string &text) {
	char *end = nullptr;
	const double v = std::strtod(text.c_str(), &end);
	if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
		throw ConfigError(key + ": expected a finite number, got '" + text + "'");
	}
	return v;
}

std::uint64_t parse_uint(const std::string &key, const std::string &text) {
	if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
		throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
	}
	try {
		return std::stoull(text);
	} catch (const std::out_of_range &) {
		throw ConfigError(key + ": integer out of range");
	}
}

bool parse_bool(const std::string &key, const std::string &text) {
	if (text == "true" || text == "1") {
		return true;
	}
	if (text == "false" || text == "0") {
		return false;
	}
	throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<double> parse_list(const std::string &key, const std::string &text) {
	std::vector<double> out;
	std::stringstream ss(text);
	std::string item;
	while (std::getline(ss, item, ',')) {
		out.push_back(parse_double(key, trim(item)));
	}
	if (out.empty()) {
		throw ConfigError(key + ": empty list");
	}
	return out;
}

std::string format_list(const std::vector<double> &values) {
	std::string out;
	for (std::size_t i = 0; i < values.size(); ++i) {
		out += (i ? "," : "") + format_double(values[i]);
	}
	return out;
}

struct Entry {
	const char *key;
	const char *type; // int | double | bool | string
	std::function<void(RunConfig &, const std::string &)> set;
	std::function<std::string(const RunConfig &)> get;
};

template <typename Member>
Entry int_entry(const char *key, Member member) {
	return {key, "int",
	        [=](RunConfig &c, const std::string &v) { member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(key, v)); },
	        [=](const RunConfig &c) { return std::to_string(member(const_cast<RunConfig &>(c))); }};
}

template <typename Member>
Entry double_entry(const char *key, Member member) {
	return {key, "double", [=](RunConfig &c, const std::string &v) { member(c) = parse_double(key, v); },
	        [=](const RunConfig &c) { return format_double(member(const_cast<RunConfig &>(c))); }};
}

template <typename Member>
Entry bool_entry(const char *key, Member member) {
	return {key, "bool", [=](RunConfig &c, const std::string &v) { member(c) = parse_bool(key, v); },
	        [=](const RunConfig &c) { return std::string(member(const_cast<RunConfig &>(c)) ? "true" : "false"); }};
}

#define FIELD(expr) [](RunConfig &c) -> auto & { return c.expr; }

const std::vector<Entry> &schema() {
	static const std::vector<Entry> entries = [] {
		std::vector<Entry> e;
		e.push_back({"data.source", "string",
		             [](RunConfig &c, const std::string &v) {
			             if (v == "synthetic") {
				             c.source = DataSource::synthetic;
			             } else if (v == "csv") {
				             c.source = DataSource::csv;
			             } else {
				             throw ConfigError("data.source: expected synthetic or csv, got '" + v + "'");
			             }
		             },
		             [](const RunConfig &c) { return std::string(c.source == DataSource::csv ? "csv" : "synthetic"); }});
		e.push_back({"data.csv_path", "string", [](RunConfig &c, const std::string &v) { c.csv_path = v; },
		             [](const RunConfig &c) { return c.csv_path; }});
		e.push_back(int_entry("data.seed", FIELD(data_seed)));
		e.push_back(int_entry("data.days", FIELD(days)));
		e.push_back(double_entry("data.test_fraction", FIELD(test_fraction)));
		e.push_back(double_entry("data.base_price", FIELD(generator.base_price)));
		e.push_back(double_entry("data.daily_amplitude", FIELD(generator.daily_amplitude)));
		e.push_back(double_entry("data.weekly_amplitude", FIELD(generator.weekly_amplitude)));
		e.push_back(double_entry("data.ar_coefficient", FIELD(generator.ar_coefficient)));
		e.push_back(double_entry("data.noise_std", FIELD(generator.noise_std)));
		e.push_back(double_entry("data.spike_probability", FIELD(generator.spike_probability)));
		e.push_back(double_entry("data.spike_mean", FIELD(generator.spike_mean)));

		e.push_back(int_entry("model.conv1_channels", FIELD(model.conv1_channels)));
		e.push_back(int_entry("model.conv2_channels", FIELD(model.conv2_channels)));
		e.push_back(int_entry("model.kernel_size", FIELD(model.kernel_size)));
		e.push_back(int_entry("model.hidden_dim", FIELD(model.hidden_dim)));
		e.push_back(int_entry("model.horizon", FIELD(model.horizon)));
		e.push_back({"model.quantiles", "string",
		             [](RunConfig &c, const std::string &v) { c.model.quantiles = parse_list("model.quantiles", v); },
		             [](const RunConfig &c) { return format_list(c.model.quantiles); }});
		e.push_back({"model.loss_orientation", "string",
		             [](RunConfig &c, const std::string &v) {
			             try {
				             c.model.loss_orientation = parse_orientation(v);
			             } catch (const std::invalid_argument &err) {
				             throw ConfigError(std::string("model.loss_orientation: ") + err.what());
			             }
		             },
		             [](const RunConfig &c) { return to_string(c.model.loss_orientation); }});

		e.push_back({"optimizer", "string",
		             [](RunConfig &c, const std::string &v) {
			             try {
				             c.optimizer.kind = parse_optimizer(v);
			             } catch (const std::invalid_argument &err) {
				             throw ConfigError(std::string("optimizer: ") + err.what());
			             }
		             },
		             [](const RunConfig &c) { return to_string(c.optimizer.kind); }});
		e.push_back(int_entry("train.epochs", FIELD(epochs)));
		e.push_back(int_entry("train.batch_size", FIELD(batch_size)));
		e.push_back(int_entry("seed", FIELD(seed)));
		e.push_back({"out", "string", [](RunConfig &c, const std::string &v) { c.out_dir = v; },
		             [](const RunConfig &c) { return c.out_dir; }});
		e.push_back({"checkpoint", "string", [](RunConfig &c, const std::string &v) { c.checkpoint = v; },
		             [](const RunConfig &c) { return c.checkpoint; }});

		e.push_back(double_entry("sgd.lr", FIELD(sgd_lr)));
		e.push_back(double_entry("adam.lr", FIELD(optimizer.adam_lr)));
		e.push_back(double_entry("adam.beta1", FIELD(optimizer.adam_beta1)));
		e.push_back(double_entry("adam.beta2", FIELD(optimizer.adam_beta2)));
		e.push_back(double_entry("adam.epsilon", FIELD(optimizer.adam_epsilon)));
		e.push_back(double_entry("shared.lr", FIELD(shared_lr)));
		e.push_back(double_entry("shared.momentum", FIELD(optimizer.momentum)));
		e.push_back(double_entry("shared.noise", FIELD(optimizer.noise)));
		e.push_back({"shared.base", "string",
		             [](RunConfig &c, const std::string &v) {
			             if (v == "plain") {
				             c.optimizer.base = BaseOptimizer::plain;
			             } else if (v == "adam") {
				             c.optimizer.base = BaseOptimizer::adam;
			             } else {
				             throw ConfigError("shared.base: expected plain or adam, got '" + v + "'");
			             }
		             },
		             [](const RunConfig &c) {
			             return std::string(c.optimizer.base == BaseOptimizer::adam ? "adam" : "plain");
		             }});

		e.push_back(double_entry("quantile.lr", FIELD(optimizer.quantile.default_lr)));
		e.push_back(double_entry("quantile.momentum", FIELD(optimizer.quantile.momentum)));
		e.push_back(double_entry("quantile.lambda", FIELD(optimizer.quantile.energy_allocation)));
		e.push_back(double_entry("quantile.kappa", FIELD(optimizer.quantile.energy_modulation)));
		e.push_back(double_entry("quantile.eps_adv", FIELD(optimizer.quantile.adversarial_radius)));
		e.push_back(double_entry("quantile.beta_c", FIELD(optimizer.quantile.cooperation)));
		e.push_back(bool_entry("quantile.anticipation", FIELD(optimizer.quantile.anticipation)));
		e.push_back(bool_entry("quantile.redistribute", FIELD(optimizer.quantile.redistribute)));
		e.push_back(bool_entry("quantile.clamp_alignment", FIELD(optimizer.quantile.clamp_alignment)));
		e.push_back(double_entry("quantile.target_decay", FIELD(optimizer.quantile.target_decay)));

		e.push_back(double_entry("theory.redirection_tol", FIELD(tolerances.redirection)));
		e.push_back(double_entry("theory.equilibrium_tol", FIELD(tolerances.equilibrium)));
		e.push_back(double_entry("theory.convergence_tol", FIELD(tolerances.convergence)));
		e.push_back(double_entry("theory.regret_ratio", FIELD(tolerances.regret_ratio)));
		e.push_back(int_entry("theory.redirection_problems", FIELD(tolerances.redirection_problems)));
		e.push_back(int_entry("theory.redirection_probes", FIELD(tolerances.redirection_probes)));
		e.push_back(int_entry("theory.ledger_steps", FIELD(tolerances.ledger_steps)));
		e.push_back(int_entry("theory.agents", FIELD(tolerances.agents)));
		e.push_back(int_entry("theory.static_steps", FIELD(tolerances.static_steps)));
		e.push_back(int_entry("theory.noisy_steps", FIELD(tolerances.noisy_steps)));
		e.push_back(int_entry("theory.noisy_seeds", FIELD(tolerances.noisy_seeds)));
		return e;
	}();
	return entries;
}

#undef FIELD

const Entry &find_entry(const std::string &key) {
	for (const auto &e : schema()) {
		if (key == e.key) {
			return e;
		}
	}
	throw ConfigError("unknown config key '" + key + "'");
}

} // namespace

std::vector<std::string> config_keys() {
	std::vector<std::string> keys;
	for (const auto &e : schema()) {
		keys.emplace_back(e.key);
	}
	return keys;
}

void apply_setting(RunConfig &config, const std::string &key, const std::string &value,
                   const std::string &declared_type) {
	const Entry &e = find_entry(key);
	if (!declared_type.empty() && declared_type != e.type) {
		throw ConfigError(key + ": declared as " + declared_type + ", expected " + e.type);
	}
	e.set(config, value);
}

void apply_override(RunConfig &config, const std::string &assignment) {
	const auto eq = assignment.find('=');
	if (eq == std::string::npos) {
		throw ConfigError("override '" + assignment + "' is not key=value");
	}
	apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void parse_run_config(std::istream &in, RunConfig &config) {
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		const auto hash = line.find('#');
		const std::string text = trim(hash == std::string::npos ? line : line.substr(0, hash));
		if (text.empty()) {
			continue;
		}
		const auto eq = text.find('=');
		std::istringstream lhs(eq == std::string::npos ? std::string{} : text.substr(0, eq));
		std::string type, key, extra;
		lhs >> type >> key;
		if (eq == std::string::npos || key.empty() || (lhs >> extra)) {
			throw ConfigError("line " + std::to_string(line_no) + ": expected '<type> <key> = <value>'");
		}
		try {
			apply_setting(config, key, trim(text.substr(eq + 1)), type);
		} catch (const ConfigError &err) {
			throw ConfigError("line " + std::to_string(line_no) + ": " + err.what());
		}
	}
}

RunConfig load_run_config(const std::string &path) {
	std::ifstream in(path);
	if (!in) {
		throw ConfigError("cannot open config " + path);
	}
	RunConfig config;
	parse_run_config(in, config);
	return config;
}

void write_run_config(std::ostream &out, const RunConfig &config) {
	for (const auto &e : schema()) {
		out << e.type << ' ' << e.key << " = " << e.get(config) << '\n';
	}
}

OptimizerSettings RunConfig::optimizer_settings() const { return optimizer_settings(optimizer.kind); }

OptimizerSettings RunConfig::optimizer_settings(OptimizerKind kind) const {
	OptimizerSettings s = optimizer;
	s.kind = kind;
	s.lr = kind == OptimizerKind::sgd ? sgd_lr : shared_lr;
	return s;
}

std::string RunConfig::checkpoint_path() const {
	return checkpoint.empty() ? out_dir + "/checkpoint.txt" : checkpoint;
}

void RunConfig::validate() const {
	const auto wrap = [](const char *key, auto &&check) {
		try {
			check();
		} catch (const std::invalid_argument &err) {
			throw ConfigError(std::string(key) + ": " + err.what());
		}
	};
	if (source == DataSource::csv) {
		if (csv_path.empty()) {
			throw ConfigError("data.csv_path: required when data.source = csv");
		}
		if (!std::ifstream(csv_path)) {
			throw ConfigError("data.csv_path: cannot open " + csv_path);
		}
	} else if (days < 2) {
		throw ConfigError("data.days: must be >= 2");
	}
	if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
		throw ConfigError("data.test_fraction: must lie in (0, 1)");
	}
	if (model.feature_dim != data::kNumFeatures) {
		throw ConfigError("model.feature_dim: the feature pipeline produces " + std::to_string(data::kNumFeatures));
	}
	wrap("model", [&] { model.validate(); });
	if (batch_size == 0) {
		throw ConfigError("train.batch_size: must be positive");
	}
	if (out_dir.empty()) {
		throw ConfigError("out: must not be empty");
	}
	if (!(sgd_lr > 0.0)) {
		throw ConfigError("sgd.lr: must be > 0");
	}
	if (!(optimizer.adam_lr > 0.0) || !(optimizer.adam_beta1 >= 0.0 && optimizer.adam_beta1 < 1.0) ||
	    !(optimizer.adam_beta2 >= 0.0 && optimizer.adam_beta2 < 1.0) || !(optimizer.adam_epsilon > 0.0)) {
		throw ConfigError("adam: need lr > 0, betas in [0, 1), epsilon > 0");
	}
	wrap("shared", [&] {
		AeroSharedState s;
		s.noise = optimizer.noise;
		s.momentum = optimizer.momentum;
		s.lr = shared_lr;
		s.validate();
	});
	wrap("quantile", [&] { optimizer.quantile.validate(model.num_quantiles()); });
	if (!(tolerances.redirection >= 0.0) || !(tolerances.equilibrium >= 0.0) || !(tolerances.convergence >= 0.0) ||
	    !(tolerances.regret_ratio >= 0.0)) {
		throw ConfigError("theory: tolerances must be >= 0");
	}
}

} // namespace aero
