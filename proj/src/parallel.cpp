#include "tdm/parallel.hpp"

namespace tdm {

namespace {
int g_default_threads = 0;   // 0 = hardware concurrency
}

int default_threads() {
    if (g_default_threads > 0) return g_default_threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void set_default_threads(int n) { g_default_threads = n; }

} // namespace tdm
