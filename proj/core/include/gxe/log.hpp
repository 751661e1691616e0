#pragma once

#include <memory>

namespace spdlog {
class logger;
}

namespace gxe {

// Shared stderr logger. Level is taken from GXE_REML_LOG
// (error|warn|info|debug) on first use; default is warn.
spdlog::logger& log();

}  // namespace gxe
