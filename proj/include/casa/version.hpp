#pragma once

#define CASA_VERSION_MAJOR 0
#define CASA_VERSION_MINOR 3
#define CASA_VERSION_PATCH 0

namespace casa {
inline constexpr const char* version = "0.3.0";
}
