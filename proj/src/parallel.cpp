#include "rydfock/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace rydfock {

int worker_count() {
    if (const char* env = std::getenv("RYDFOCK_WORKERS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
    }
    return omp_get_num_procs();
}

}  // namespace rydfock
