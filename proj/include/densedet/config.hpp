#pragma once

#include <string>

#include "densedet/train_eval.hpp"

namespace densedet {

/// Everything a run needs, read from TOML. Tables: [scene], [benchmark],
/// [dense], [grid], [arch], [loss], [ddet], [sdet], [eval], [ablation], plus
/// a top-level `workers`. Absent keys keep their defaults; unknown keys and
/// wrongly typed values throw kInvalidConfig naming the key.
AblationConfig parse_config(const std::string& toml_text, const std::string& source = "config");
AblationConfig load_config(const std::string& path);

/// The same configuration written back as TOML (round-trips through
/// parse_config).
std::string config_to_toml(const AblationConfig& cfg);

}  // namespace densedet
