// Command-line front end: run studies from JSON configs or presets, refit
// emitted CSVs, and calibrate atom number from fluorescence decay.

#include <cstdio>
#include <fstream>
#include <algorithm>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "rydfock/harness.hpp"

using namespace rydfock;
using harness::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct RunOptions {
    std::string config_path;
    std::string preset;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trajectories;
};

int run(const RunOptions& opt, bool require_scan) {
    json raw;
    if (!opt.preset.empty()) {
        raw = harness::preset_config(opt.preset);
    } else if (!opt.config_path.empty()) {
        try {
            raw = json::parse(read_text(opt.config_path));
        } catch (const json::parse_error& e) {
            throw harness::ConfigError({opt.config_path + ": " + e.what()});
        }
    } else {
        throw harness::ConfigError({"config: give a config file or --preset"});
    }
    if (opt.seed) raw["master_seed"] = *opt.seed;
    if (opt.trajectories) raw["n_trajectories"] = *opt.trajectories;

    const auto cfg = harness::validate_config(raw);
    if (require_scan && !cfg.scan) throw harness::ConfigError({"scan: the scan command needs a scan block"});
    const auto result = harness::run_study(cfg);

    if (opt.out.empty()) {
        std::cout << harness::format_csv(result);
        std::cerr << harness::format_json(result);
    } else {
        harness::emit_csv(result, opt.out);
        harness::emit_json(result, opt.out + ".json");
    }
    std::fprintf(stderr, "study %s: %zu rows, %.2f s\n", cfg.study.c_str(), result.rows.size(), result.wall_time_s);
    for (const auto& f : result.fits)
        if (!f.fit.converged) {
            std::fprintf(stderr, "fit %s did not converge: %s\n", f.label.c_str(), f.fit.message.c_str());
            return kExitNumerical;
        }
    return 0;
}

struct FitOptions {
    std::string path;
    std::string model = "eq1";
    double omega_1_mhz = 0.75;
    double tau_us = 5.0;
    std::string x_unit = "theta";
    std::string channel = "n_b=1";
    bool keep_zero_term = true;
};

int fit(const FitOptions& opt) {
    const auto rows = harness::parse_csv(read_text(opt.path));
    const double omega_1 = mhz_to_angular(opt.omega_1_mhz);
    const double tau = opt.tau_us > 0.0 ? opt.tau_us : std::numeric_limits<double>::infinity();
    harness::FitRecord record;
    record.label = opt.model;
    if (opt.model == "eq1") {
        const auto samples = harness::samples_from_rows(rows, opt.channel, opt.x_unit == "theta" ? omega_1 : 1.0);
        record.fit = analytics::fit_eq1(samples, omega_1, tau, opt.keep_zero_term);
    } else {
        std::map<double, analytics::ProbeSample> by_theta;
        for (const auto& r : rows) {
            auto& s = by_theta[r.scan_value];
            s.theta = opt.x_unit == "theta" ? r.scan_value : r.scan_value * omega_1;
            s.sigma = std::max(s.sigma, harness::fit_sigma(r));
            if (r.channel == "n_b=0") s.values.p0 = r.probability;
            if (r.channel == "n_b=1") s.values.p1 = r.probability;
            if (r.channel == "n_b=2") s.values.p2 = r.probability;
        }
        std::vector<analytics::ProbeSample> samples;
        for (const auto& [_, s] : by_theta) samples.push_back(s);
        const auto variant = opt.model == "probe-alpha" ? analytics::ProbeVariant::Alpha : analytics::ProbeVariant::Beta;
        record.fit = analytics::fit_probe(samples, variant, omega_1, tau);
    }
    std::cout << harness::fit_to_json(record).dump(2) << "\n";
    return record.fit.converged ? 0 : kExitNumerical;
}

int calibrate(const std::string& path, double gamma_1, bool fit_gamma_1) {
    std::istringstream in(read_text(path));
    std::string line;
    std::vector<analytics::Sample> samples;
    while (std::getline(in, line)) {
        if (line.empty() || !(std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '.' || line[0] == '-'))
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        analytics::Sample s;
        if (!(ss >> s.x >> s.y)) throw harness::ConfigError({path + ": expected columns t_ms,signal[,sigma]"});
        ss >> s.sigma;
        samples.push_back(s);
    }
    const auto fit = analytics::two_body_calibration(samples, gamma_1, fit_gamma_1);
    std::cout << harness::fit_to_json({"two-body", fit}).dump(2) << "\n";
    return fit.converged ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rydberg-blockade Fock-state simulator"};
    app.require_subcommand(1);

    RunOptions sim_opt, scan_opt;
    std::uint64_t seed = 0;
    std::size_t trajectories = 0;
    auto add_run = [&](CLI::App* cmd, RunOptions& opt) {
        cmd->add_option("config", opt.config_path, "experiment config (JSON)");
        cmd->add_option("--preset", opt.preset, "built-in figure preset")
            ->check(CLI::IsMember(harness::preset_names()));
        cmd->add_option("--out", opt.out, "CSV output path; the JSON record goes to <out>.json");
        cmd->add_option("--seed", seed, "override master_seed");
        cmd->add_option("--trajectories", trajectories, "override n_trajectories");
    };
    auto* simulate = app.add_subcommand("simulate", "run the study described by a config");
    add_run(simulate, sim_opt);
    auto* scan = app.add_subcommand("scan", "run a config that contains a scan");
    add_run(scan, scan_opt);

    FitOptions fit_opt;
    auto* fit_cmd = app.add_subcommand("fit", "fit a study CSV");
    fit_cmd->add_option("data", fit_opt.path, "CSV from simulate/scan")->required();
    fit_cmd->add_option("--model", fit_opt.model)->check(CLI::IsMember({"eq1", "probe-alpha", "probe-beta"}));
    fit_cmd->add_option("--omega1", fit_opt.omega_1_mhz, "single-atom Rabi frequency, MHz");
    fit_cmd->add_option("--tau", fit_opt.tau_us, "coherence time in us; <= 0 for none");
    fit_cmd->add_option("--x", fit_opt.x_unit, "scan_value unit")->check(CLI::IsMember({"theta", "time"}));
    fit_cmd->add_option("--channel", fit_opt.channel, "channel fitted by eq1");
    fit_cmd->add_flag("!--drop-zero-term", fit_opt.keep_zero_term, "omit the N = 0 term of the eq1 model");

    std::string decay_path;
    double gamma_1 = 0.0;
    bool fit_gamma_1 = false;
    auto* cal = app.add_subcommand("calibrate", "two-body loss fit of a fluorescence decay");
    cal->add_option("decay", decay_path, "CSV with t_ms,signal[,sigma]")->required();
    cal->add_option("--gamma1", gamma_1, "one-body loss rate, 1/ms");
    cal->add_flag("--fit-gamma1", fit_gamma_1, "fit the one-body rate too");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        auto finish = [&](RunOptions opt, CLI::App* cmd) {
            if (cmd->count("--seed")) opt.seed = seed;
            if (cmd->count("--trajectories")) opt.trajectories = trajectories;
            return run(opt, cmd == scan);
        };
        if (*simulate) return finish(sim_opt, simulate);
        if (*scan) return finish(scan_opt, scan);
        if (*fit_cmd) return fit(fit_opt);
        if (*cal) return calibrate(decay_path, gamma_1, fit_gamma_1);
    } catch (const harness::ConfigError& e) {
        for (const auto& msg : e.errors()) std::cerr << "config error: " << msg << "\n";
        return kExitConfig;
    } catch (const harness::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
