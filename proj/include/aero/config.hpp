#pragma once

// Run configuration: a flat, typed key-value file
//
//   # comment
//   int    train.epochs   = 50
//   double shared.lr      = 0.05
//   string optimizer      = aero-shared
//   bool   quantile.redistribute = true
//
// Overrides ("key=value") take the declared type of the key.

#include "aero/data.hpp"
#include "aero/optimizers.hpp"
#include "aero/qrnn.hpp"
#include "aero/theory.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace aero {

enum class DataSource { synthetic, csv };

struct RunConfig {
	DataSource source = DataSource::synthetic;
	std::string csv_path;
	std::uint64_t data_seed = 2024;
	std::size_t days = 365;
	data::GeneratorConfig generator;
	double test_fraction = 0.2;

	QrnnConfig model;
	OptimizerSettings optimizer;
	// Step sizes per optimizer; copied into `optimizer` by optimizer_settings().
	double sgd_lr = 0.05;
	double shared_lr = 0.2;

	std::size_t epochs = 50;
	std::size_t batch_size = 256;
	std::uint64_t seed = 42;
	std::string out_dir = "out";
	std::string checkpoint;  // predict: defaults to <out_dir>/checkpoint.txt

	theory::TheoryTolerances tolerances;

	// Throws ConfigError naming the offending key.
	void validate() const;
	OptimizerSettings optimizer_settings() const;
	OptimizerSettings optimizer_settings(OptimizerKind kind) const;
	std::string checkpoint_path() const;
};

std::vector<std::string> config_keys();

// Sets one key from text. declared_type, when non-empty, must match the schema.
void apply_setting(RunConfig &config, const std::string &key, const std::string &value,
                   const std::string &declared_type = "");
// "key=value"
void apply_override(RunConfig &config, const std::string &assignment);

void parse_run_config(std::istream &in, RunConfig &config);
RunConfig load_run_config(const std::string &path);
// Every key in schema order, in the file syntax; parses back to an equal config.
void write_run_config(std::ostream &out, const RunConfig &config);

} // namespace aero
