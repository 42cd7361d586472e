#pragma once

namespace fedsim {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fedsim
