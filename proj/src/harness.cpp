#include "rydfock/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "rydfock/parallel.hpp"

namespace rydfock::harness {

namespace {

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += "; ";
        out += p;
    }
    return out;
}

using Check = std::function<bool(double)>;

const Check kAny = [](double) { return true; };
const Check kPositive = [](double v) { return v > 0.0; };
const Check kNonNegative = [](double v) { return v >= 0.0; };
const Check kNonZero = [](double v) { return v != 0.0; };
const Check kProbability = [](double v) { return v >= 0.0 && v <= 1.0; };

std::string child(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads one JSON object, collecting errors and writing the normalised echo.
class Reader {
public:
    Reader(std::vector<std::string>& errors, const json& obj, json& echo, std::string path)
        : errors_(errors), obj_(obj), echo_(echo), path_(std::move(path)) {
        if (!obj_.is_object()) errors_.push_back((path_.empty() ? "<root>" : path_) + ": must be an object");
        echo_ = json::object();
    }

    void allow(std::initializer_list<const char*> keys) {
        if (!obj_.is_object()) return;
        std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& [k, _] : obj_.items())
            if (!allowed.count(k)) errors_.push_back(child(path_, k) + ": unknown key");
    }

    bool has(const char* key) const { return obj_.is_object() && obj_.contains(key) && !obj_.at(key).is_null(); }

    double number(const char* key, double def, const Check& ok = kAny, const char* requirement = "") {
        double v = def;
        if (has(key)) {
            const auto& node = obj_.at(key);
            if (!node.is_number()) {
                errors_.push_back(child(path_, key) + ": must be a number");
            } else {
                v = node.get<double>();
                if (!std::isfinite(v) || !ok(v)) errors_.push_back(child(path_, key) + ": must be " + requirement);
            }
        }
        echo_[key] = v;
        return v;
    }

    std::optional<double> optional_number(const char* key, const Check& ok = kAny, const char* requirement = "") {
        if (!has(key)) {
            echo_[key] = nullptr;
            return std::nullopt;
        }
        return number(key, 0.0, ok, requirement);
    }

    std::uint64_t integer(const char* key, std::uint64_t def, std::uint64_t min_value = 0) {
        std::uint64_t v = def;
        if (has(key)) {
            const auto& node = obj_.at(key);
            if (!node.is_number_integer() || (node.is_number_integer() && node.get<long long>() < 0 && !node.is_number_unsigned())) {
                errors_.push_back(child(path_, key) + ": must be a nonnegative integer");
            } else {
                v = node.get<std::uint64_t>();
                if (v < min_value)
                    errors_.push_back(child(path_, key) + ": must be >= " + std::to_string(min_value));
            }
        }
        echo_[key] = v;
        return v;
    }

    bool boolean(const char* key, bool def) {
        bool v = def;
        if (has(key)) {
            if (!obj_.at(key).is_boolean())
                errors_.push_back(child(path_, key) + ": must be true or false");
            else
                v = obj_.at(key).get<bool>();
        }
        echo_[key] = v;
        return v;
    }

    std::string string(const char* key, const std::string& def, const std::set<std::string>& choices = {}) {
        std::string v = def;
        if (has(key)) {
            if (!obj_.at(key).is_string()) {
                errors_.push_back(child(path_, key) + ": must be a string");
            } else {
                v = obj_.at(key).get<std::string>();
                if (!choices.empty() && !choices.count(v)) {
                    std::string list;
                    for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
                    errors_.push_back(child(path_, key) + ": must be one of " + list);
                }
            }
        }
        echo_[key] = v;
        return v;
    }

    const json& sub(const char* key) const {
        static const json empty = json::object();
        return has(key) ? obj_.at(key) : empty;
    }
    json& echo_slot(const char* key) { return echo_[key]; }
    std::string path(const char* key) const { return child(path_, key); }
    std::vector<std::string>& errors() { return errors_; }

private:
    std::vector<std::string>& errors_;
    const json& obj_;
    json& echo_;
    std::string path_;
};

const std::set<std::string> kStudies{"histogram", "collective-scan", "enhancement", "fock2-alpha", "fock2-beta",
                                     "fidelity-vs-nbar"};

ensemble::PhysicalParams read_physical(Reader r) {
    r.allow({"omega_red_peak", "omega_blue_peak", "delta_intermediate", "gamma_5p", "c6", "tau_coh", "lambda_red",
             "lambda_blue", "temperature", "atom_mass", "omega_1", "blockade_cutoff", "min_separation"});
    ensemble::PhysicalParams p;
    p.omega_red_peak = mhz_to_angular(r.number("omega_red_peak", 160.0, kPositive, "> 0 (MHz)"));
    p.omega_blue_peak = mhz_to_angular(r.number("omega_blue_peak", 17.0, kPositive, "> 0 (MHz)"));
    p.delta_intermediate = mhz_to_angular(r.number("delta_intermediate", -2100.0, kNonZero, "nonzero (MHz)"));
    p.gamma_5p = mhz_to_angular(r.number("gamma_5p", 6.07, kPositive, "> 0 (MHz)"));
    p.c6 = mhz_to_angular(r.number("c6", 11.0 * 2985984.0, kPositive, "> 0 (MHz um^6)"));
    p.tau_coh = r.number("tau_coh", 5.0, kPositive, "> 0 (us)");
    p.lambda_red = r.number("lambda_red", 0.780, kPositive, "> 0 (um)");
    p.lambda_blue = r.number("lambda_blue", 0.480, kPositive, "> 0 (um)");
    p.temperature_uk = r.number("temperature", 125.0, kPositive, "> 0 (uK)");
    p.atom_mass_amu = r.number("atom_mass", kRb87MassAmu, kPositive, "> 0 (amu)");
    if (auto w = r.optional_number("omega_1", kPositive, "> 0 (MHz)")) p.two_photon_rabi_peak = mhz_to_angular(*w);
    p.blockade_cutoff = mhz_to_angular(r.number("blockade_cutoff", 10.0, kPositive, "> 0 (MHz)"));
    p.min_separation = r.number("min_separation", 1.0, kPositive, "> 0 (um)");
    return p;
}

ensemble::BeamProfile read_beam(Reader r, const ensemble::BeamProfile& def) {
    r.allow({"waist_x", "waist_y", "offset_x", "offset_y"});
    ensemble::BeamProfile b = def;
    b.waist_x = r.number("waist_x", def.waist_x, kPositive, "> 0 (um)");
    b.waist_y = r.number("waist_y", def.waist_y, kPositive, "> 0 (um)");
    b.offset_x = r.number("offset_x", def.offset_x);
    b.offset_y = r.number("offset_y", def.offset_y);
    return b;
}

protocol::Step read_step(const json& node, json& echo, const std::string& path, std::vector<std::string>& errors) {
    using protocol::Step;
    Step step;
    if (node.is_string()) {
        const auto s = node.get<std::string>();
        echo = s;
        if (s == "blow_away") {
            step.kind = Step::Kind::BlowAway;
        } else if (s == "detect") {
            step.kind = Step::Kind::Detect;
        } else if (s == "fort_restore") {
            step.kind = Step::Kind::FortRestore;
        } else {
            errors.push_back(path + ": unknown step '" + s + "'");
        }
        return step;
    }
    if (!node.is_object() || node.size() != 1) {
        errors.push_back(path + ": step must be a string or a single-key object");
        return step;
    }
    echo = json::object();
    const auto& [kind, body] = *node.items().begin();
    if (kind == "pulse") {
        step.kind = Step::Kind::Pulse;
        Reader r(errors, body, echo["pulse"], path + ".pulse");
        r.allow({"label", "channel", "duration", "theta", "collective_pi", "collective_pi_relative", "detuning",
                 "phase"});
        step.pulse.label = r.string("label", "");
        step.pulse.channel = r.string("channel", "A", {"A", "B"}) == "A" ? dynamics::Channel::A : dynamics::Channel::B;
        int area_count = 0;
        for (const char* k : {"duration", "theta", "collective_pi", "collective_pi_relative"})
            if (r.has(k)) ++area_count;
        if (area_count != 1)
            errors.push_back(path + ".pulse: exactly one of duration, theta, collective_pi, collective_pi_relative");
        using K = protocol::PulseArea::Kind;
        if (r.has("duration")) step.pulse.area = {K::Duration, r.number("duration", 0.0, kNonNegative, ">= 0 (us)"), false};
        if (r.has("theta")) step.pulse.area = {K::Theta, r.number("theta", 0.0, kNonNegative, ">= 0 (rad)"), false};
        if (r.has("collective_pi"))
            step.pulse.area = {K::CollectivePi, r.number("collective_pi", 1.0, kPositive, "> 0 (atoms)"), false};
        if (r.has("collective_pi_relative"))
            step.pulse.area = {K::CollectivePi, r.number("collective_pi_relative", 0.0, kNonNegative, ">= 0"), true};
        step.pulse.global_detuning = mhz_to_angular(r.number("detuning", 0.0));
        step.pulse.phase = r.number("phase", 0.0);
    } else if (kind == "fort_restore") {
        step.kind = Step::Kind::FortRestore;
        Reader r(errors, body, echo["fort_restore"], path + ".fort_restore");
        r.allow({"duration_ms", "drop_time_us"});
        step.restore_ms = r.number("duration_ms", 0.5, kNonNegative, ">= 0 (ms)");
        step.drop_time_us = r.optional_number("drop_time_us", kNonNegative, ">= 0 (us)");
    } else {
        errors.push_back(path + ": unknown step kind '" + kind + "'");
    }
    return step;
}

}  // namespace


ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error("invalid config: " + join(errors)), errors_(std::move(errors)) {}

double Scan::value(std::size_t k) const {
    if (points < 2) return start;
    return start + (stop - start) * static_cast<double>(k) / static_cast<double>(points - 1);
}

ExperimentConfig validate_config(const json& raw) {
    std::vector<std::string> errors;
    ExperimentConfig cfg;
    Reader root(errors, raw, cfg.echo, "");
    root.allow({"study", "physical", "cloud", "beams", "n_bar", "fixed_n", "n_max", "pulse_n_bar", "sequence", "scan",
                "n_bar_values", "n_trajectories", "master_seed", "toggles", "measurement", "integrator"});

    cfg.study = root.string("study", "histogram", kStudies);
    auto& exp = cfg.experiment;
    exp.physical = read_physical(Reader(errors, root.sub("physical"), root.echo_slot("physical"), "physical"));

    {
        Reader r(errors, root.sub("cloud"), root.echo_slot("cloud"), "cloud");
        r.allow({"sigma_x", "sigma_y", "sigma_z"});
        exp.cloud.sigma_x = r.number("sigma_x", 0.25, kNonNegative, ">= 0 (um)");
        exp.cloud.sigma_y = r.number("sigma_y", 0.25, kNonNegative, ">= 0 (um)");
        exp.cloud.sigma_z = r.number("sigma_z", 3.5, kNonNegative, ">= 0 (um)");
    }
    {
        Reader r(errors, root.sub("beams"), root.echo_slot("beams"), "beams");
        r.allow({"red", "blue"});
        const ensemble::BeamPair defaults;
        exp.beams.red = read_beam(Reader(errors, r.sub("red"), r.echo_slot("red"), "beams.red"), defaults.red);
        exp.beams.blue = read_beam(Reader(errors, r.sub("blue"), r.echo_slot("blue"), "beams.blue"), defaults.blue);
    }

    if (root.has("n_bar") && root.has("fixed_n")) {
        errors.push_back("n_bar, fixed_n: give exactly one of n_bar and fixed_n, not both");
    } else if (!root.has("n_bar") && !root.has("fixed_n")) {
        errors.push_back("n_bar, fixed_n: one of n_bar and fixed_n is required");
    }
    exp.source.n_bar = root.optional_number("n_bar", kPositive, "> 0");
    if (root.has("fixed_n")) {
        exp.source.fixed_n = static_cast<std::size_t>(root.integer("fixed_n", 1, 1));
    } else {
        root.echo_slot("fixed_n") = nullptr;
    }
    exp.source.n_max = static_cast<std::size_t>(root.integer("n_max", 0));
    exp.pulse_n_bar = root.optional_number("pulse_n_bar", kPositive, "> 0");

    // Sequence: a name, {name, drop_time_us}, or {steps: [...]}.
    {
        const json& node = root.sub("sequence");
        json& echo = root.echo_slot("sequence");
        const std::string path = "sequence";
        const std::set<std::string> names{"A1B1", "A1B1A2B2", "A1B1A2B2-probe"};
        auto named = [&](const std::string& name) {
            if (!names.count(name)) {
                errors.push_back(path + ": unknown sequence '" + name + "'");
                return protocol::named_sequence("A1B1");
            }
            return protocol::named_sequence(name);
        };
        if (!root.has("sequence")) {
            const std::string def = cfg.study == "fock2-alpha"  ? "A1B1A2B2"
                                    : cfg.study == "fock2-beta" ? "A1B1A2B2-probe"
                                                                : "A1B1";
            cfg.sequence = named(def);
            echo = def;
        } else if (node.is_string()) {
            cfg.sequence = named(node.get<std::string>());
            echo = node;
        } else if (node.is_object() && node.contains("steps")) {
            Reader r(errors, node, echo, path);
            r.allow({"name", "steps"});
            cfg.sequence.name = r.string("name", "custom");
            const json& steps = node.at("steps");
            json& steps_echo = r.echo_slot("steps");
            steps_echo = json::array();
            if (!steps.is_array() || steps.empty()) {
                errors.push_back(path + ".steps: must be a non-empty array");
            } else {
                for (std::size_t k = 0; k < steps.size(); ++k) {
                    json step_echo;
                    cfg.sequence.steps.push_back(
                        read_step(steps[k], step_echo, path + ".steps[" + std::to_string(k) + "]", errors));
                    steps_echo.push_back(step_echo);
                }
            }
        } else {
            Reader r(errors, node, echo, path);
            r.allow({"name", "drop_time_us"});
            cfg.sequence = named(r.string("name", "A1B1"));
            if (auto drop = r.optional_number("drop_time_us", kNonNegative, ">= 0 (us)"))
                for (auto& step : cfg.sequence.steps)
                    if (step.kind == protocol::Step::Kind::FortRestore) step.drop_time_us = drop;
        }
        try {
            cfg.sequence.validate();
        } catch (const std::invalid_argument& e) {
            errors.push_back(path + ": " + e.what());
        }
    }

    if (root.has("scan")) {
        Reader r(errors, root.sub("scan"), root.echo_slot("scan"), "scan");
        r.allow({"variable", "target", "start", "stop", "points"});
        Scan scan;
        scan.variable = r.string("variable", "theta", {"theta", "duration_us", "n_bar"});
        scan.target = r.string("target", cfg.study == "fock2-alpha" ? "B2" : cfg.study == "fock2-beta" ? "B3" : "A1");
        scan.start = r.number("start", 0.0, scan.variable == "n_bar" ? kPositive : kNonNegative,
                              scan.variable == "n_bar" ? "> 0" : ">= 0");
        scan.stop = r.number("stop", 1.0, scan.variable == "n_bar" ? kPositive : kNonNegative,
                             scan.variable == "n_bar" ? "> 0" : ">= 0");
        scan.points = static_cast<std::size_t>(r.integer("points", 2, 2));
        if (scan.variable != "n_bar" && !cfg.sequence.find_pulse(scan.target))
            errors.push_back("scan.target: sequence has no pulse labelled '" + scan.target + "'");
        cfg.scan = scan;
    } else {
        root.echo_slot("scan") = nullptr;
        if (cfg.study != "histogram" && cfg.study != "fidelity-vs-nbar")
            errors.push_back("scan: required for study '" + cfg.study + "'");
    }

    {
        if (root.has("n_bar_values")) {
            const json& node = root.sub("n_bar_values");
            if (!node.is_array() || node.empty()) {
                errors.push_back("n_bar_values: must be a non-empty array of positive numbers");
            } else {
                for (std::size_t k = 0; k < node.size(); ++k) {
                    if (!node[k].is_number() || !(node[k].get<double>() > 0.0))
                        errors.push_back("n_bar_values[" + std::to_string(k) + "]: must be > 0");
                    else
                        cfg.n_bar_values.push_back(node[k].get<double>());
                }
            }
        } else if (cfg.study == "enhancement") {
            cfg.n_bar_values = {3.0, 6.5, 9.1, 15.5};
        } else if (cfg.study == "fidelity-vs-nbar") {
            for (int n = 1; n <= 15; ++n) cfg.n_bar_values.push_back(n);
        }
        if (!cfg.n_bar_values.empty()) root.echo_slot("n_bar_values") = cfg.n_bar_values;
    }

    cfg.n_trajectories = static_cast<std::size_t>(root.integer("n_trajectories", 1000, 1));
    cfg.master_seed = root.integer("master_seed", 1);

    {
        Reader r(errors, root.sub("toggles"), root.echo_slot("toggles"), "toggles");
        r.allow({"doppler", "ac_stark", "scattering", "dephasing", "misalignment", "beam_profile", "finite_blockade",
                 "eq1_zero_n0"});
        auto& t = exp.toggles;
        t.doppler = r.boolean("doppler", true);
        t.ac_stark = r.boolean("ac_stark", true);
        t.scattering = r.boolean("scattering", true);
        t.dephasing = r.boolean("dephasing", true);
        t.misalignment = r.boolean("misalignment", true);
        t.beam_profile = r.boolean("beam_profile", true);
        t.finite_blockade = r.boolean("finite_blockade", true);
        cfg.eq1_zero_n0 = r.boolean("eq1_zero_n0", false);
    }
    {
        Reader r(errors, root.sub("measurement"), root.echo_slot("measurement"), "measurement");
        r.allow({"blow_away_fidelity", "count_unejected", "trap_radius"});
        exp.measurement.blow_away_fidelity = r.number("blow_away_fidelity", 0.97, kProbability, "in [0, 1]");
        exp.measurement.count_unejected = r.boolean("count_unejected", false);
        exp.measurement.trap_radius = r.optional_number("trap_radius", kPositive, "> 0 (um)");
    }
    {
        Reader r(errors, root.sub("integrator"), root.echo_slot("integrator"), "integrator");
        r.allow({"dt_max"});
        exp.dt_max = r.number("dt_max", 0.05, kPositive, "> 0 (us)");
    }

    if (!errors.empty()) throw ConfigError(errors);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({path + ": cannot open config file"});
    json raw;
    try {
        raw = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({path + ": " + e.what()});
    }
    return validate_config(raw);
}

std::vector<std::string> preset_names() { return {"fig2b", "fig3", "fig4a", "fig4b", "fig5"}; }

json preset_config(const std::string& name) {
    if (name == "fig2b") {
        return json{{"study", "collective-scan"},
                    {"n_bar", 3.0},
                    {"sequence", "A1B1"},
                    {"scan", {{"variable", "theta"}, {"target", "A1"}, {"start", 0.0}, {"stop", 3.0 * std::numbers::pi}, {"points", 31}}},
                    {"n_trajectories", 1000},
                    {"master_seed", 20},
                    {"physical", {{"omega_1", 0.75}}}};
    }
    if (name == "fig3") {
        return json{{"study", "enhancement"},
                    {"n_bar", 3.0},
                    {"n_bar_values", {3.0, 6.5, 9.1, 15.5}},
                    {"sequence", "A1B1"},
                    {"scan", {{"variable", "theta"}, {"target", "A1"}, {"start", 0.0}, {"stop", 2.0 * std::numbers::pi}, {"points", 25}}},
                    {"n_trajectories", 2000},
                    {"master_seed", 30},
                    {"physical", {{"omega_1", 0.75}}},
                    {"toggles",
                     {{"doppler", false}, {"ac_stark", false}, {"scattering", false}, {"dephasing", false},
                      {"misalignment", false}, {"beam_profile", false}, {"finite_blockade", false}}}};
    }
    if (name == "fig4a") {
        return json{{"study", "fock2-alpha"},
                    {"n_bar", 7.0},
                    {"sequence", {{"name", "A1B1A2B2"}, {"drop_time_us", 6.34}}},
                    {"scan", {{"variable", "theta"}, {"target", "B2"}, {"start", 0.0}, {"stop", 13.5}, {"points", 28}}},
                    {"n_trajectories", 1000},
                    {"master_seed", 41},
                    {"physical", {{"omega_1", 0.75}}}};
    }
    if (name == "fig4b") {
        return json{{"study", "fock2-beta"},
                    {"n_bar", 7.0},
                    {"sequence", "A1B1A2B2-probe"},
                    {"scan", {{"variable", "theta"}, {"target", "B3"}, {"start", 0.0}, {"stop", 4.0 * std::numbers::pi}, {"points", 28}}},
                    {"n_trajectories", 1000},
                    {"master_seed", 42},
                    {"physical", {{"omega_1", 0.75}}}};
    }
    if (name == "fig5") {
        return json{{"study", "fidelity-vs-nbar"},
                    {"n_bar", 7.0},
                    {"n_bar_values", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}},
                    {"sequence", "A1B1"},
                    {"n_trajectories", 1000},
                    {"master_seed", 50},
                    {"physical", {{"omega_1", 0.75}}}};
    }
    throw ConfigError({"preset: unknown preset '" + name + "'"});
}

ensemble::Imperfections toggle_preset(const std::string& name, const ensemble::Imperfections& base) {
    if (name == "ideal") return ensemble::Imperfections::ideal();
    if (name == "infinite-blockade") {
        auto t = base;
        t.finite_blockade = false;
        return t;
    }
    if (name == "full") {
        auto t = base;
        t.finite_blockade = true;
        return t;
    }
    throw std::invalid_argument("toggle_preset: unknown preset " + name);
}

namespace {

struct Point {
    protocol::Experiment exp;
    protocol::SequenceSpec seq;
    std::uint64_t stream = 0;
    double scan_value = 0.0;
    std::string prefix;
};

void apply_scan(Point& p, const Scan& scan, double value) {
    p.scan_value = value;
    if (scan.variable == "n_bar") {
        p.exp.source.n_bar = value;
        p.exp.source.fixed_n.reset();
        return;
    }
    auto* pulse = p.seq.find_pulse(scan.target);
    if (!pulse) throw ConfigError({"scan.target: sequence has no pulse labelled '" + scan.target + "'"});
    using K = protocol::PulseArea::Kind;
    pulse->area = {scan.variable == "theta" ? K::Theta : K::Duration, value, false};
}

std::vector<std::vector<protocol::MeasurementRecord>> run_points(std::vector<Point>& points, std::size_t n_traj,
                                                                 std::uint64_t master_seed) {
    for (auto& p : points) {
        p.seq.validate();
        // Resolve the tuned recapture radius once instead of per trajectory.
        p.exp.measurement.trap_radius = p.exp.trap_radius();
    }
    std::vector<std::vector<protocol::MeasurementRecord>> out(points.size(),
                                                              std::vector<protocol::MeasurementRecord>(n_traj));
    try {
        parallel_for(points.size() * n_traj, [&](std::size_t idx) {
            const std::size_t p = idx / n_traj;
            const std::size_t k = idx % n_traj;
            out[p][k] = protocol::run_sequence(points[p].seq, points[p].exp,
                                               protocol::trajectory_seed(master_seed, points[p].stream, k));
        });
    } catch (const protocol::TrajectoryError& e) {
        throw NumericalError(e.what());
    }
    return out;
}

Row make_row(double x, const std::string& channel, const std::vector<protocol::MeasurementRecord>& records,
             std::size_t n_b) {
    std::size_t hits = 0;
    for (const auto& r : records)
        if (r.n_b == n_b) ++hits;
    const double n = static_cast<double>(records.size());
    const double p = n > 0.0 ? static_cast<double>(hits) / n : 0.0;
    return {x, channel, p, n > 0.0 ? std::sqrt(p * (1.0 - p) / n) : 0.0, records.size()};
}


// Coherence time the closed-form models should assume for this experiment.
double model_tau(const protocol::Experiment& exp) {
    if (exp.toggles.dephasing) return exp.physical.tau_coh;
    if (exp.toggles.scattering) {
        const auto beams = ensemble::effective_beams(exp.physical, exp.beams, exp.toggles);
        const double omega_red = ensemble::beam_rabi_at(beams.red, 0.0, 0.0);
        const double rate = ensemble::scattering_rate(omega_red, exp.physical.delta_intermediate, exp.physical.gamma_5p);
        return rate > 0.0 ? 4.0 / rate : std::numeric_limits<double>::infinity();
    }
    return std::numeric_limits<double>::infinity();
}

}  // namespace

json fit_to_json(const FitRecord& f) {
    json j;
    j["label"] = f.label;
    j["converged"] = f.fit.converged;
    j["poor_fit"] = f.fit.poor_fit;
    j["iterations"] = f.fit.iterations;
    j["rss"] = f.fit.rss;
    j["message"] = f.fit.message;
    for (std::size_t k = 0; k < f.fit.names.size(); ++k) {
        j["values"][f.fit.names[k]] = f.fit.values[k];
        j["sigmas"][f.fit.names[k]] = f.fit.sigmas[k];
    }
    return j;
}

namespace {

Point base_point(const ExperimentConfig& cfg) { return {cfg.experiment, cfg.sequence, 0, 0.0, ""}; }

std::size_t max_count(const std::vector<protocol::MeasurementRecord>& records) {
    std::size_t m = 0;
    for (const auto& r : records) m = std::max(m, r.n_b);
    return m;
}

void study_histogram(const ExperimentConfig& cfg, StudyResult& res) {
    std::vector<Point> points;
    const std::size_t n_points = cfg.scan ? cfg.scan->points : 1;
    for (std::size_t k = 0; k < n_points; ++k) {
        Point p = base_point(cfg);
        p.stream = k;
        if (cfg.scan) {
            apply_scan(p, *cfg.scan, cfg.scan->value(k));
        } else {
            p.scan_value = cfg.experiment.source.n_bar ? *cfg.experiment.source.n_bar
                                                       : static_cast<double>(*cfg.experiment.source.fixed_n);
        }
        points.push_back(std::move(p));
    }
    const auto records = run_points(points, cfg.n_trajectories, cfg.master_seed);
    std::size_t top = 2;
    for (const auto& r : records) top = std::max(top, max_count(r));
    json per_point = json::array();
    for (std::size_t k = 0; k < points.size(); ++k) {
        for (std::size_t c = 0; c <= top; ++c)
            res.rows.push_back(make_row(points[k].scan_value, "n_b=" + std::to_string(c), records[k], c));
        const auto dist = protocol::histogram(records[k]);
        json j;
        j["scan_value"] = points[k].scan_value;
        j["mean"] = dist.mean;
        j["variance"] = dist.variance;
        j["mandel_q"] = std::isfinite(dist.mandel_q) ? json(dist.mandel_q) : json(nullptr);
        j["probabilities"] = dist.probabilities;
        per_point.push_back(j);
    }
    res.summary["points"] = per_point;
}

std::vector<analytics::Sample> channel_samples(const std::vector<Row>& rows, const std::string& channel,
                                               const Scan& scan, double omega_1) {
    return samples_from_rows(rows, channel, scan.variable == "theta" ? omega_1 : 1.0);
}

// One A1 scan for a single source, fitted with the closed-form model.
FitRecord fit_collective(const ExperimentConfig& cfg, const protocol::Experiment& exp, const std::vector<Row>& rows,
                         const std::string& channel, const std::string& label) {
    const double omega_1 = exp.omega_1();
    const double tau = model_tau(exp);
    const auto samples = channel_samples(rows, channel, *cfg.scan, omega_1);
    if (exp.source.fixed_n) {
        const double guess = std::sqrt(static_cast<double>(*exp.source.fixed_n)) * omega_1;
        std::optional<double> fixed_tau;
        if (!std::isfinite(tau)) fixed_tau = tau;
        return {label, analytics::fit_rabi(samples, guess, fixed_tau, std::isfinite(tau) ? tau : 5.0)};
    }
    return {label, analytics::fit_eq1(samples, omega_1, tau, !cfg.eq1_zero_n0)};
}

void study_collective_scan(const ExperimentConfig& cfg, StudyResult& res) {
    std::vector<Point> points;
    for (std::size_t k = 0; k < cfg.scan->points; ++k) {
        Point p = base_point(cfg);
        p.stream = k;
        apply_scan(p, *cfg.scan, cfg.scan->value(k));
        points.push_back(std::move(p));
    }
    const auto records = run_points(points, cfg.n_trajectories, cfg.master_seed);
    for (std::size_t k = 0; k < points.size(); ++k)
        for (std::size_t c = 0; c <= 2; ++c)
            res.rows.push_back(make_row(points[k].scan_value, "n_b=" + std::to_string(c), records[k], c));
    if (cfg.scan->variable == "n_bar") return;
    const auto& exp = cfg.experiment;
    auto fit = fit_collective(cfg, exp, res.rows, "n_b=1", exp.source.fixed_n ? "rabi" : "eq1");
    res.summary["omega_1"] = exp.omega_1();
    res.summary["tau_model"] = std::isfinite(model_tau(exp)) ? json(model_tau(exp)) : json(nullptr);
    if (exp.source.fixed_n) res.summary["omega_ratio"] = fit.fit.value("omega") / exp.omega_1();
    res.fits.push_back(std::move(fit));
}

void study_enhancement(const ExperimentConfig& cfg, StudyResult& res) {
    if (cfg.scan->variable == "n_bar") throw ConfigError({"scan.variable: enhancement scans a pulse, not n_bar"});
    std::vector<Point> points;
    for (std::size_t i = 0; i < cfg.n_bar_values.size(); ++i) {
        for (std::size_t k = 0; k < cfg.scan->points; ++k) {
            Point p = base_point(cfg);
            p.exp.source.n_bar = cfg.n_bar_values[i];
            p.exp.source.fixed_n.reset();
            p.stream = i * 100000 + k;
            apply_scan(p, *cfg.scan, cfg.scan->value(k));
            p.prefix = "n_bar=" + format_number(cfg.n_bar_values[i]) + ":";
            points.push_back(std::move(p));
        }
    }
    const auto records = run_points(points, cfg.n_trajectories, cfg.master_seed);
    for (std::size_t k = 0; k < points.size(); ++k)
        res.rows.push_back(make_row(points[k].scan_value, points[k].prefix + "n_b=1", records[k], 1));

    std::vector<double> truth, fitted, sigma;
    for (std::size_t i = 0; i < cfg.n_bar_values.size(); ++i) {
        auto exp = cfg.experiment;
        exp.source.n_bar = cfg.n_bar_values[i];
        exp.source.fixed_n.reset();
        const std::string prefix = points[i * cfg.scan->points].prefix;
        auto fit = fit_collective(cfg, exp, res.rows, prefix + "n_b=1", "eq1@" + prefix.substr(0, prefix.size() - 1));
        truth.push_back(cfg.n_bar_values[i]);
        fitted.push_back(fit.fit.value("n_bar"));
        sigma.push_back(fit.fit.sigma("n_bar"));
        res.fits.push_back(std::move(fit));
    }
    const auto slope = analytics::slope_through_origin(truth, fitted, sigma);
    res.summary["n_bar_true"] = truth;
    res.summary["n_bar_fitted"] = fitted;
    res.summary["n_bar_sigma"] = sigma;
    res.summary["slope"] = slope.slope;
    res.summary["slope_sigma"] = slope.sigma;
}

void study_fock2(const ExperimentConfig& cfg, StudyResult& res, analytics::ProbeVariant variant) {
    if (cfg.scan->variable != "theta") throw ConfigError({"scan.variable: probe studies scan theta"});
    std::vector<Point> points;
    for (std::size_t k = 0; k < cfg.scan->points; ++k) {
        Point p = base_point(cfg);
        p.stream = k;
        apply_scan(p, *cfg.scan, cfg.scan->value(k));
        points.push_back(std::move(p));
    }
    const auto records = run_points(points, cfg.n_trajectories, cfg.master_seed);
    std::vector<analytics::ProbeSample> samples;
    for (std::size_t k = 0; k < points.size(); ++k) {
        analytics::ProbeSample s;
        s.theta = points[k].scan_value;
        double sig = 0.0;
        double* slots[3] = {&s.values.p0, &s.values.p1, &s.values.p2};
        for (std::size_t c = 0; c <= 2; ++c) {
            const Row row = make_row(points[k].scan_value, "n_b=" + std::to_string(c), records[k], c);
            *slots[c] = row.probability;
            sig = std::max(sig, fit_sigma(row));
            res.rows.push_back(row);
        }
        s.sigma = sig;
        samples.push_back(s);
    }
    const auto& exp = cfg.experiment;
    const double omega_1 = exp.omega_1();
    const double tau = model_tau(exp);
    res.summary["omega_1"] = omega_1;
    res.summary["tau_model"] = std::isfinite(tau) ? json(tau) : json(nullptr);
    const bool alpha = variant == analytics::ProbeVariant::Alpha;
    res.fits.push_back({alpha ? "probe-alpha" : "probe-beta", analytics::fit_probe(samples, variant, omega_1, tau)});
    if (alpha) {
        const auto p2 = channel_samples(res.rows, "n_b=2", *cfg.scan, omega_1);
        std::optional<double> fixed_tau;
        if (!std::isfinite(tau)) fixed_tau = tau;
        auto fit = analytics::fit_rabi(p2, std::sqrt(2.0) * omega_1, fixed_tau, std::isfinite(tau) ? tau : 5.0);
        res.summary["p2_start"] = p2.front().y;
        res.summary["p2_omega_ratio"] = fit.value("omega") / omega_1;
        if (!fixed_tau) res.summary["p2_tau"] = fit.value("tau");
        res.fits.push_back({"p2-rabi", std::move(fit)});
    } else {
        const auto& f = res.fits.back().fit;
        res.summary["p0_omega1_amplitude"] = f.value("q01");
        res.summary["p0_omega1_sigma"] = f.sigma("q01");
    }
}

void study_fidelity(const ExperimentConfig& cfg, StudyResult& res) {
    const std::vector<std::string> presets{"ideal", "infinite-blockade", "full"};
    std::vector<Point> points;
    for (const auto& preset : presets) {
        for (std::size_t i = 0; i < cfg.n_bar_values.size(); ++i) {
            Point p = base_point(cfg);
            p.exp.toggles = toggle_preset(preset, cfg.experiment.toggles);
            p.exp.source.n_bar = cfg.n_bar_values[i];
            p.exp.source.fixed_n.reset();
            p.exp.pulse_n_bar = cfg.n_bar_values[i];
            // Shared streams across presets: each preset sees the same draws.
            p.stream = i;
            p.scan_value = cfg.n_bar_values[i];
            p.prefix = preset + ":";
            points.push_back(std::move(p));
        }
    }
    const auto records = run_points(points, cfg.n_trajectories, cfg.master_seed);
    for (std::size_t k = 0; k < points.size(); ++k)
        res.rows.push_back(make_row(points[k].scan_value, points[k].prefix + "n_b=1", records[k], 1));
    for (std::size_t q = 0; q < presets.size(); ++q) {
        std::vector<double> p1;
        for (std::size_t i = 0; i < cfg.n_bar_values.size(); ++i)
            p1.push_back(res.rows[q * cfg.n_bar_values.size() + i].probability);
        res.summary["p1"][presets[q]] = p1;
    }
    res.summary["n_bar_values"] = cfg.n_bar_values;
}

}  // namespace

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

StudyResult run_study(const ExperimentConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    StudyResult res;
    res.config_echo = config.echo;
    res.seed = config.master_seed;
    if (config.study == "histogram") {
        study_histogram(config, res);
    } else if (config.study == "collective-scan") {
        study_collective_scan(config, res);
    } else if (config.study == "enhancement") {
        study_enhancement(config, res);
    } else if (config.study == "fock2-alpha") {
        study_fock2(config, res, analytics::ProbeVariant::Alpha);
    } else if (config.study == "fock2-beta") {
        study_fock2(config, res, analytics::ProbeVariant::Beta);
    } else if (config.study == "fidelity-vs-nbar") {
        study_fidelity(config, res);
    } else {
        throw ConfigError({"study: unknown study '" + config.study + "'"});
    }
    res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

std::string format_csv(const StudyResult& result) {
    std::string out = "scan_value,channel,probability,stderr,n_traj\n";
    for (const auto& r : result.rows) {
        out += format_number(r.scan_value) + "," + r.channel + "," + format_number(r.probability) + "," +
               format_number(r.stderr_) + "," + std::to_string(r.n_traj) + "\n";
    }
    return out;
}

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << content;
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace

void emit_csv(const StudyResult& result, const std::string& path) { write_file(path, format_csv(result)); }

std::string format_json(const StudyResult& result) {
    json j;
    j["config"] = result.config_echo;
    j["seed"] = result.seed;
    j["fits"] = json::array();
    for (const auto& f : result.fits) j["fits"].push_back(fit_to_json(f));
    j["summary"] = result.summary;
    return j.dump(2) + "\n";
}

double fit_sigma(const Row& row) {
    return std::max(row.stderr_, row.n_traj > 0 ? 1.0 / static_cast<double>(row.n_traj) : 1.0);
}

std::vector<analytics::Sample> samples_from_rows(const std::vector<Row>& rows, const std::string& channel,
                                                 double x_divisor) {
    std::vector<analytics::Sample> out;
    for (const auto& r : rows)
        if (r.channel == channel) out.push_back({r.scan_value / x_divisor, r.probability, fit_sigma(r)});
    return out;
}

std::vector<Row> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<Row> rows;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("scan_value", 0) == 0) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5) throw std::runtime_error("csv line " + std::to_string(line_no) + ": expected 5 columns");
        try {
            Row r;
            r.scan_value = std::stod(cells[0]);
            r.channel = cells[1];
            r.probability = std::stod(cells[2]);
            r.stderr_ = std::stod(cells[3]);
            r.n_traj = static_cast<std::size_t>(std::stoull(cells[4]));
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw std::runtime_error("csv line " + std::to_string(line_no) + ": malformed number");
        }
    }
    return rows;
}

void emit_json(const StudyResult& result, const std::string& path) { write_file(path, format_json(result)); }

}  // namespace rydfock::harness
