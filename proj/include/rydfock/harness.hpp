#pragma once

// Experiment orchestration: JSON configs, named studies that regenerate the
// figure datasets, and CSV / JSON output.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rydfock/analytics.hpp"
#include "rydfock/protocol.hpp"

namespace rydfock::harness {

using json = nlohmann::json;

struct Scan {
    std::string variable = "theta";  // theta | duration_us | n_bar
    std::string target = "A1";       // pulse label for theta / duration_us scans
    double start = 0.0;
    double stop = 1.0;
    std::size_t points = 2;

    double value(std::size_t k) const;
};

struct ExperimentConfig {
    std::string study = "histogram";
    protocol::Experiment experiment;
    protocol::SequenceSpec sequence;
    std::optional<Scan> scan;
    std::vector<double> n_bar_values;
    std::size_t n_trajectories = 1000;
    std::uint64_t master_seed = 1;
    bool eq1_zero_n0 = false;
    // Normalised config in file units with every default filled in.
    json echo;
};

/// Aggregated validation failure; each message starts with its field path.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

/// Validate and normalise a raw config (frequencies in MHz become rad/us).
/// Unknown keys are rejected. Throws ConfigError listing every problem found.
ExperimentConfig validate_config(const json& raw);

ExperimentConfig load_config(const std::string& path);

/// Built-in figure presets: fig2b, fig3, fig4a, fig4b, fig5.
json preset_config(const std::string& name);
std::vector<std::string> preset_names();

struct Row {
    double scan_value = 0.0;
    std::string channel;
    double probability = 0.0;
    double stderr_ = 0.0;
    std::size_t n_traj = 0;
};

struct FitRecord {
    std::string label;
    analytics::FitResult fit;
};

struct StudyResult {
    json config_echo;
    std::vector<Row> rows;
    std::vector<FitRecord> fits;
    json summary = json::object();
    double wall_time_s = 0.0;
    std::uint64_t seed = 0;
};

/// Numerical failure inside a study (fit did not converge, propagation error).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

StudyResult run_study(const ExperimentConfig& config);

/// printf "%.9g".
std::string format_number(double v);

/// CSV with header scan_value,channel,probability,stderr,n_traj and 9 significant digits.
void emit_csv(const StudyResult& result, const std::string& path);
std::string format_csv(const StudyResult& result);

/// Binomial error floored at one count, so p = 0 or 1 points keep a finite weight.
double fit_sigma(const Row& row);

/// Fit samples for one channel with x = scan_value / x_divisor.
std::vector<analytics::Sample> samples_from_rows(const std::vector<Row>& rows, const std::string& channel,
                                                 double x_divisor = 1.0);

/// Parse rows written by format_csv. Throws std::runtime_error on malformed input.
std::vector<Row> parse_csv(const std::string& text);

/// JSON record of the config echo, fit parameters and summary (wall time excluded).
std::string format_json(const StudyResult& result);
void emit_json(const StudyResult& result, const std::string& path);

/// Fit parameters as a JSON object.
json fit_to_json(const FitRecord& fit);

/// Toggle presets compared by the fidelity-vs-nbar study.
ensemble::Imperfections toggle_preset(const std::string& name, const ensemble::Imperfections& base);

}  // namespace rydfock::harness
