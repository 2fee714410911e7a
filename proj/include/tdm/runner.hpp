#pragma once

#include "tdm/config.hpp"

#include <string>

namespace tdm {

struct RunArtifacts {
    std::string hash;
    std::string manifest_path;
    std::string metrics_csv;
    std::string metrics_json;
    std::string report_path;
};

// Execute one experiment: writes the run manifest, metrics (CSV + JSON
// mirrors), a summary report and checkpoints under cfg.out_dir, every file
// prefixed by the config hash. Throws ConfigError for validation problems and
// Error (with the failing module) for runtime ones.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

} // namespace tdm
