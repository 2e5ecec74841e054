#pragma once

#include <istream>
#include <map>
#include <string>

#include "maskreid/trainer.hpp"

namespace maskreid {

/// Flat `key=value` text, '#' comments, blank lines ignored.
std::map<std::string, std::string> parse_key_value(std::istream& in);
std::map<std::string, std::string> parse_key_value_file(const std::string& path);

/// Applies entries onto a config; unknown keys or unparsable values throw.
void apply_config_entries(TrainConfig& cfg,
                          const std::map<std::string, std::string>& entries);

/// Canonical flat serialization (sorted keys, lossless doubles).
std::map<std::string, std::string> config_entries(const TrainConfig& cfg);

/// "key=value" lines in sorted order; what every run echoes.
std::string config_echo(const TrainConfig& cfg);

/// FNV-1a hex digest of the canonical echo, embedded in reports.
std::string config_digest(const TrainConfig& cfg);

/// Checkpoint metadata: {"train_config": {...}, "n_classes": C}.
std::string train_meta_json(const TrainConfig& cfg, int n_classes);
TrainConfig config_from_meta_json(const std::string& meta_json, int* n_classes = nullptr);

}  // namespace maskreid
