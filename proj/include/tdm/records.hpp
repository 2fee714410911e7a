#pragma once

#include "tdm/common.hpp"

#include <span>
#include <string>
#include <vector>

namespace tdm {

// Binary trajectory-batch file: header (count, dim, N, N_I), then per record
// the snapshot latent, the final sample and the reward.
struct RecordBatch {
    int dim = 0;
    int n_steps = 0;
    int n_intermediate = 0;
    std::vector<Vec> latents;
    std::vector<Vec> finals;
    std::vector<double> rewards;
};

void save_records(const std::string& path, const RecordBatch& batch);
RecordBatch load_records(const std::string& path);

// Plain vector datasets (inverse-noise sets) reuse the same record format
// with latent == final and zero reward.
void save_vectors(const std::string& path, std::span<const Vec> vectors);
std::vector<Vec> load_vectors(const std::string& path);

} // namespace tdm
