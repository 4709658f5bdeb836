#include "rydfock/ensemble.hpp"

#include <cmath>
#include <stdexcept>

#include "rydfock/rng.hpp"

namespace rydfock::ensemble {

double PhysicalParams::effective_peak_rabi() const {
    if (two_photon_rabi_peak) return *two_photon_rabi_peak;
    return two_photon_rabi(omega_red_peak, omega_blue_peak, delta_intermediate);
}

double PhysicalParams::velocity_sigma() const {
    const double mass = atom_mass_amu * kAtomicMassUnit;
    // m/s and um/us coincide.
    return std::sqrt(kBoltzmann * temperature_uk * 1e-6 / mass);
}

double two_photon_rabi(double omega_red, double omega_blue, double delta) {
    if (delta == 0.0) throw std::domain_error("two_photon_rabi: intermediate detuning must be nonzero");
    return std::abs(omega_red * omega_blue / (2.0 * std::abs(delta)));
}

double beam_rabi_at(const BeamProfile& beam, double x, double y) {
    const double dx = (x - beam.offset_x) / beam.waist_x;
    const double dy = (y - beam.offset_y) / beam.waist_y;
    return beam.peak_rabi * std::exp(-dx * dx - dy * dy);
}

double blockade_shift(const Vec3& r_i, const Vec3& r_j, double c6) {
    const double dx = r_i[0] - r_j[0];
    const double dy = r_i[1] - r_j[1];
    const double dz = r_i[2] - r_j[2];
    const double r2 = dx * dx + dy * dy + dz * dz;
    if (r2 == 0.0) throw std::domain_error("blockade_shift: coincident atom positions");
    return c6 / (r2 * r2 * r2);
}

double blockade_shift_clamped(const Vec3& r_i, const Vec3& r_j, double c6, double min_separation) {
    const double dx = r_i[0] - r_j[0];
    const double dy = r_i[1] - r_j[1];
    const double dz = r_i[2] - r_j[2];
    const double r2 = std::max(dx * dx + dy * dy + dz * dz, min_separation * min_separation);
    return c6 / (r2 * r2 * r2);
}

double doppler_shift(const Vec3& v, double lambda_red, double lambda_blue) {
    const double k_eff = kTwoPi / lambda_red - kTwoPi / lambda_blue;
    return k_eff * v[2];
}

double ac_stark_shift(double omega_red_i, double omega_blue_i, double delta) {
    if (delta == 0.0) throw std::domain_error("ac_stark_shift: intermediate detuning must be nonzero");
    return (omega_red_i * omega_red_i - omega_blue_i * omega_blue_i) / (4.0 * delta);
}

double scattering_rate(double omega_red_i, double delta, double gamma_5p) {
    return gamma_5p * omega_red_i * omega_red_i / (4.0 * delta * delta);
}

BeamPair effective_beams(const PhysicalParams& params, const BeamPair& beams, const Imperfections& toggles) {
    BeamPair out = beams;
    out.red.peak_rabi = params.omega_red_peak;
    out.blue.peak_rabi = params.omega_blue_peak;
    if (!toggles.misalignment) {
        out.red.offset_x = out.red.offset_y = 0.0;
        out.blue.offset_x = out.blue.offset_y = 0.0;
    }
    return out;
}

namespace {

struct LocalField {
    double red;
    double blue;
    double rabi;
};

LocalField field_at(const PhysicalParams& params, const BeamPair& b, double x, double y) {
    const double red = beam_rabi_at(b.red, x, y);
    const double blue = beam_rabi_at(b.blue, x, y);
    const double formula_peak = two_photon_rabi(params.omega_red_peak, params.omega_blue_peak,
                                                params.delta_intermediate);
    const double scale = formula_peak > 0.0 ? params.effective_peak_rabi() / formula_peak : 0.0;
    return {red, blue, scale * two_photon_rabi(red, blue, params.delta_intermediate)};
}

}  // namespace

double calibrated_rabi(const PhysicalParams& params, const BeamPair& beams, const Imperfections& toggles) {
    return field_at(params, effective_beams(params, beams, toggles), 0.0, 0.0).rabi;
}

AtomConfiguration AtomConfiguration::subset(std::span<const std::size_t> kept) const {
    AtomConfiguration out;
    out.n_atoms = kept.size();
    out.blockade = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kept.size()),
                                         static_cast<Eigen::Index>(kept.size()));
    for (std::size_t a = 0; a < kept.size(); ++a) {
        const std::size_t i = kept[a];
        out.positions.push_back(positions[i]);
        out.velocities.push_back(velocities[i]);
        out.rabi_two_photon.push_back(rabi_two_photon[i]);
        out.detuning_two_photon.push_back(detuning_two_photon[i]);
        out.dephasing_rate.push_back(dephasing_rate[i]);
        for (std::size_t b = 0; b < kept.size(); ++b)
            out.blockade(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                blockade(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(kept[b]));
    }
    return out;
}

AtomConfiguration sample_cloud(const CloudGeometry& geom, const PhysicalParams& params, const BeamPair& beams,
                               std::size_t n_atoms, std::uint64_t seed, const Imperfections& toggles) {
    RngStream rng(seed);
    AtomConfiguration cfg;
    cfg.n_atoms = n_atoms;
    cfg.positions.resize(n_atoms);
    cfg.velocities.resize(n_atoms);

    // Draw order is independent of the toggles so that presets share samples.
    const double sigma_v = params.velocity_sigma();
    for (std::size_t i = 0; i < n_atoms; ++i) {
        cfg.positions[i] = {rng.normal(0.0, geom.sigma_x), rng.normal(0.0, geom.sigma_y),
                            rng.normal(0.0, geom.sigma_z)};
        cfg.velocities[i] = {rng.normal(0.0, sigma_v), rng.normal(0.0, sigma_v), rng.normal(0.0, sigma_v)};
    }

    const BeamPair b = effective_beams(params, beams, toggles);
    const LocalField centre = field_at(params, b, 0.0, 0.0);
    const double centre_stark = ac_stark_shift(centre.red, centre.blue, params.delta_intermediate);
    const double centre_scatter = scattering_rate(centre.red, params.delta_intermediate, params.gamma_5p);
    const double residual_dephasing = std::max(0.0, 4.0 / params.tau_coh - centre_scatter);

    cfg.rabi_two_photon.resize(n_atoms);
    cfg.detuning_two_photon.resize(n_atoms);
    cfg.dephasing_rate.resize(n_atoms);
    for (std::size_t i = 0; i < n_atoms; ++i) {
        const auto& p = cfg.positions[i];
        const LocalField local = toggles.beam_profile ? field_at(params, b, p[0], p[1]) : centre;
        cfg.rabi_two_photon[i] = local.rabi;

        double detuning = 0.0;
        if (toggles.doppler) detuning += doppler_shift(cfg.velocities[i], params.lambda_red, params.lambda_blue);
        // Lasers are tuned to the light-shifted resonance at the cloud centre.
        if (toggles.ac_stark)
            detuning += ac_stark_shift(local.red, local.blue, params.delta_intermediate) - centre_stark;
        cfg.detuning_two_photon[i] = detuning;

        double rate = 0.0;
        if (toggles.scattering) rate += scattering_rate(local.red, params.delta_intermediate, params.gamma_5p);
        if (toggles.dephasing) rate += residual_dephasing;
        cfg.dephasing_rate[i] = rate;
    }

    const auto n = static_cast<Eigen::Index>(n_atoms);
    cfg.blockade = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = blockade_shift_clamped(cfg.positions[static_cast<std::size_t>(i)],
                                                    cfg.positions[static_cast<std::size_t>(j)], params.c6,
                                                    params.min_separation);
            cfg.blockade(i, j) = v;
            cfg.blockade(j, i) = v;
        }
    return cfg;
}

}  // namespace rydfock::ensemble
