#include "stare/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace stare {

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    if (auto existing = spdlog::get("stare")) return existing;
    auto created = spdlog::stderr_color_mt("stare");
    created->set_pattern("[%l] %v");
    return created;
  }();
  return instance;
}

}  // namespace stare
