#include "cmim/parallel.hpp"

namespace cmim {

namespace {
std::atomic<unsigned> g_threads{1};
}

unsigned num_threads() noexcept { return g_threads.load(); }

void set_num_threads(unsigned n) noexcept { g_threads.store(n == 0 ? 1 : n); }

}  // namespace cmim
