#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace codecraid::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kRuntimeError = 3;

// Default experiment configuration; every key a config file may set.
nlohmann::json default_experiment();

// Entry point shared by the codecraid binary and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace codecraid::cli
