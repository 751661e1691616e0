#include "gxe/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace gxe {

namespace {

spdlog::level::level_enum level_from_env() {
  const char* raw = std::getenv("GXE_REML_LOG");
  if (raw == nullptr) return spdlog::level::warn;
  const std::string value(raw);
  if (value == "error") return spdlog::level::err;
  if (value == "warn") return spdlog::level::warn;
  if (value == "info") return spdlog::level::info;
  if (value == "debug") return spdlog::level::debug;
  return spdlog::level::warn;
}

}  // namespace

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
    auto logger = std::make_shared<spdlog::logger>("gxe", sink);
    logger->set_pattern("[%l] %v");
    logger->set_level(level_from_env());
    return logger;
  }();
  return *instance;
}

}  // namespace gxe
