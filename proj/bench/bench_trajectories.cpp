// Times the OpenMP trajectory fan-out against the serial reference and
// checks that both produce the same records.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "rydfock/parallel.hpp"
#include "rydfock/protocol.hpp"

using namespace rydfock;

namespace {

struct Case {
    const char* name;
    const char* sequence;
    ensemble::Imperfections toggles;
    double n_bar;
};

template <class F>
double seconds(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    const std::size_t n_traj = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 200;
    const Case cases[] = {
        {"A1B1 ideal n=7", "A1B1", ensemble::Imperfections::ideal(), 7.0},
        {"A1B1 full n=7", "A1B1", ensemble::Imperfections::full(), 7.0},
        {"A1B1A2B2 full n=7", "A1B1A2B2", ensemble::Imperfections::full(), 7.0},
        {"A1B1 full n=15", "A1B1", ensemble::Imperfections::full(), 15.0},
    };
    std::printf("workers %d, trajectories %zu\n", worker_count(), n_traj);
    std::printf("%-22s %12s %12s %8s %s\n", "case", "serial_s", "parallel_s", "speedup", "match");
    for (const auto& c : cases) {
        protocol::Experiment exp;
        exp.toggles = c.toggles;
        exp.source.n_bar = c.n_bar;
        const auto seq = protocol::named_sequence(c.sequence);
        std::vector<protocol::MeasurementRecord> serial, parallel;
        const double ts = seconds([&] { serial = protocol::run_trajectories_serial(seq, exp, n_traj, 7); });
        const double tp = seconds([&] { parallel = protocol::run_trajectories(seq, exp, n_traj, 7); });
        bool match = serial.size() == parallel.size();
        for (std::size_t k = 0; match && k < serial.size(); ++k)
            match = serial[k].n_b == parallel[k].n_b && serial[k].n_rydberg_lost == parallel[k].n_rydberg_lost &&
                    serial[k].recapture_losses == parallel[k].recapture_losses;
        std::printf("%-22s %12.3f %12.3f %8.2f %s\n", c.name, ts, tp, ts / tp, match ? "yes" : "NO");
    }
    return 0;
}
