#ifndef DPGRAD_VERSION_HPP_
#define DPGRAD_VERSION_HPP_

namespace dpgrad {

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace dpgrad

#endif  // DPGRAD_VERSION_HPP_
