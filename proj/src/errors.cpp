#include "rmnet/errors.hpp"

#include <iostream>

namespace rmnet {

namespace {
thread_local long g_warnings = 0;
thread_local bool g_quiet = false;
}  // namespace

void warn(const std::string& message) {
    ++g_warnings;
    if (!g_quiet) std::cerr << "warning: " << message << '\n';
}

long warning_count() { return g_warnings; }

QuietWarnings::QuietWarnings() : previous_(g_quiet) { g_quiet = true; }
QuietWarnings::~QuietWarnings() { g_quiet = previous_; }

}  // namespace rmnet
