#pragma once

namespace flourish {

inline constexpr const char* kVersion = "0.1.0";

}
