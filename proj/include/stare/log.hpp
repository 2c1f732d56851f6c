#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace stare {

// Process-wide logger writing to stderr; artifacts never go through it.
std::shared_ptr<spdlog::logger> logger();

}  // namespace stare
