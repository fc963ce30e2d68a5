#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace codecraid {

// Reads a JSON experiment file. Throws ConfigError on I/O or parse errors.
nlohmann::json load_json_file(const std::filesystem::path& path);

// Applies "a.b.c=value" to j, creating intermediate objects. The value is
// parsed as JSON when it parses (numbers, booleans, arrays, quoted strings)
// and taken as a bare string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& assignments);

// Recursive object merge; values in `patch` win.
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch);

// Throws ConfigError naming the first key of `j` not in `allowed`.
void require_keys_subset(const nlohmann::json& j, const std::vector<std::string>& allowed, const std::string& where);

}  // namespace codecraid
