#pragma once

namespace mmreg::cli {
inline constexpr const char* kVersion = "0.1.0";
}
