#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evonas/pipeline.hpp"

namespace evonas {

// Declarative engine configuration: JSON document with sections space,
// supernet, schedule, loss_weights, evolution, devices, protocol, task,
// teacher, train, seed, output_dir. Unknown keys are rejected; validation
// errors name the offending dotted field path.

RunConfig default_run_config();

// Template with every default explicit; parses back to the same document.
std::string config_template_json();

RunConfig parse_run_config(const std::string& json_text);

// Loads a config file and applies dotted-path overrides ("a.b.c=value",
// values parsed as JSON literals, bare words as strings).
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

// Normalized document for the given run; hash ties checkpoints to configs.
std::string run_config_json(const RunConfig& run);
std::uint64_t run_config_hash(const RunConfig& run);

// Hash over the fields that determine the trained supernet (space, supernet,
// schedule, loss weights, task, teacher, train, seed). Search parameters may
// vary against a fixed training checkpoint.
std::uint64_t train_config_hash(const RunConfig& run);

} // namespace evonas
