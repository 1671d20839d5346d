#include "aero/config.hpp"
#include "aero/error.hpp"
#include "aero/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char **argv) {
	CLI::App app{"QRNN quantile forecasting with AERO optimizers"};
	app.require_subcommand(1);

	std::string config_path;
	std::uint64_t seed = 0;
	std::string out_dir;
	std::string checkpoint;
	std::vector<std::string> overrides;

	const char *names[] = {"train", "predict", "benchmark", "theory-check"};
	const char *help[] = {"train a model and write checkpoint, loss log and metrics",
	                      "forecast the test window from a checkpoint",
	                      "train every optimizer on the same data and compare",
	                      "run the theorem property suites"};
	for (int i = 0; i < 4; ++i) {
		CLI::App *sub = app.add_subcommand(names[i], help[i]);
		sub->add_option("--config", config_path, "typed key-value config file")->check(CLI::ExistingFile);
		sub->add_option("--seed", seed, "global seed");
		sub->add_option("--out", out_dir, "output directory");
		sub->add_option("--checkpoint", checkpoint, "checkpoint path");
		sub->add_option("overrides", overrides, "key=value overrides");
	}

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError &e) {
		const int status = app.exit(e);
		return status == 0 ? aero::kExitOk : aero::kExitUsage;
	}

	const std::string command = app.get_subcommands().front()->get_name();
	const CLI::App *sub = app.get_subcommands().front();
	aero::RunConfig config;
	try {
		if (!config_path.empty()) {
			config = aero::load_run_config(config_path);
		}
		for (const auto &o : overrides) {
			aero::apply_override(config, o);
		}
		if (sub->count("--seed") > 0) {
			config.seed = seed;
		}
		if (sub->count("--out") > 0) {
			config.out_dir = out_dir;
		}
		if (sub->count("--checkpoint") > 0) {
			config.checkpoint = checkpoint;
		}
	} catch (const aero::ConfigError &e) {
		std::cerr << "config error: " << e.what() << '\n';
		return aero::kExitUsage;
	}
	return aero::run_command(command, config, std::cout, std::cerr);
}
