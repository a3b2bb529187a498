#include "bsdelab/benchmarks.hpp"
#include "bsdelab/harness.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iomanip>
#include <iostream>

namespace {

struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Root seed; overrides the config");
    cmd->add_option("--threads", f.threads, "Worker threads; overrides the config")->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "Output directory for report.json and artifacts (default: $BSDELAB_OUT)");
}

void print_report(const bsdelab::Report& rep) {
    std::cout << "seed " << rep.seed << "  config " << rep.config_hash << "  threads " << rep.threads << '\n';
    for (const auto& e : rep.experiments) {
        std::cout << (e.pass() ? "PASS " : "FAIL ") << e.type << " " << e.name << '\n';
        if (e.error) std::cout << "    error: " << *e.error << '\n';
        for (const auto& r : e.records) {
            std::cout << "    " << std::left << std::setw(44) << r.metric << std::right << std::setw(16)
                      << std::setprecision(8) << r.value;
            if (r.comparator != "info") {
                std::cout << "  " << r.comparator << " " << (r.tolerance ? *r.tolerance : 0.0) << "  "
                          << (r.pass ? "PASS" : "FAIL");
            }
            std::cout << '\n';
        }
        for (const auto& n : e.notes) std::cout << "    note: " << n << '\n';
        for (const auto& a : e.artifacts) std::cout << "    artifact: " << a << '\n';
    }
}

int execute(const RunFlags& f, std::optional<std::string> only_type) {
    bsdelab::RunOptions opts;
    opts.seed = f.seed;
    opts.threads = f.threads;
    opts.out_dir = f.out;
    if (opts.out_dir.empty()) {
        if (const char* env = std::getenv("BSDELAB_OUT")) opts.out_dir = env;
    }
    opts.only_type = std::move(only_type);
    const bsdelab::RunOutcome out = bsdelab::run_file(f.config, opts);
    if (out.exit_code != 2) print_report(out.report);
    if (!out.message.empty()) std::cerr << (out.exit_code == 2 ? "config error: " : "failed: ") << out.message << '\n';
    return out.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bsdelab: BSDE, HJB and stochastic control verification toolkit"};
    app.require_subcommand(1);

    RunFlags run_flags;
    auto* run_cmd = app.add_subcommand("run", "Run every experiment in a config");
    add_run_flags(run_cmd, run_flags);

    std::string validate_path;
    auto* validate_cmd = app.add_subcommand("validate", "Check a config against the schema");
    validate_cmd->add_option("--config", validate_path, "Experiment configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);

    auto* list_cmd = app.add_subcommand("list", "List registered benchmarks");

    std::vector<std::pair<CLI::App*, std::string>> typed;
    std::vector<RunFlags> typed_flags(bsdelab::experiment_types().size());
    for (std::size_t i = 0; i < bsdelab::experiment_types().size(); ++i) {
        const std::string& type = bsdelab::experiment_types()[i];
        auto* cmd = app.add_subcommand(type, "Run only the '" + type + "' experiments of a config");
        add_run_flags(cmd, typed_flags[i]);
        typed.emplace_back(cmd, type);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (*list_cmd) {
            for (const auto& [name, description] : bsdelab::list_benchmarks()) {
                std::cout << name << "\t" << description << '\n';
            }
            return 0;
        }
        if (*validate_cmd) {
            bsdelab::validate_config(bsdelab::load_json_file(validate_path));
            std::cout << "ok\n";
            return 0;
        }
        if (*run_cmd) return execute(run_flags, std::nullopt);
        for (std::size_t i = 0; i < typed.size(); ++i) {
            if (*typed[i].first) return execute(typed_flags[i], typed[i].second);
        }
    } catch (const bsdelab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
