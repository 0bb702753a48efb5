#pragma once

namespace propnp {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace propnp
