#include "tdm/records.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

namespace tdm {

static_assert(std::endian::native == std::endian::little,
              "record format assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

} // namespace

void save_records(const std::string& path, const RecordBatch& batch) {
    const std::size_t n = batch.finals.size();
    if (batch.latents.size() != n || batch.rewards.size() != n)
        throw Error("diffusion_engine", "save_records: ragged batch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("diffusion_engine", "save_records: cannot open " + path);
    put<std::uint64_t>(os, n);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.dim));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.n_steps));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.n_intermediate));
    for (std::size_t i = 0; i < n; ++i) {
        os.write(reinterpret_cast<const char*>(batch.latents[i].data()),
                 static_cast<std::streamsize>(sizeof(double) * batch.dim));
        os.write(reinterpret_cast<const char*>(batch.finals[i].data()),
                 static_cast<std::streamsize>(sizeof(double) * batch.dim));
        put<double>(os, batch.rewards[i]);
    }
    if (!os) throw Error("diffusion_engine", "save_records: write failed " + path);
}

RecordBatch load_records(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("diffusion_engine", "load_records: cannot open " + path);
    RecordBatch b;
    const auto n = get<std::uint64_t>(is);
    b.dim = static_cast<int>(get<std::uint32_t>(is));
    b.n_steps = static_cast<int>(get<std::uint32_t>(is));
    b.n_intermediate = static_cast<int>(get<std::uint32_t>(is));
    b.latents.resize(n, Vec(b.dim));
    b.finals.resize(n, Vec(b.dim));
    b.rewards.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        is.read(reinterpret_cast<char*>(b.latents[i].data()),
                static_cast<std::streamsize>(sizeof(double) * b.dim));
        is.read(reinterpret_cast<char*>(b.finals[i].data()),
                static_cast<std::streamsize>(sizeof(double) * b.dim));
        b.rewards[i] = get<double>(is);
    }
    if (!is) throw Error("diffusion_engine", "load_records: truncated " + path);
    return b;
}

void save_vectors(const std::string& path, std::span<const Vec> vectors) {
    if (vectors.empty()) throw Error("diffusion_engine", "save_vectors: empty dataset");
    RecordBatch b;
    b.dim = static_cast<int>(vectors[0].size());
    b.latents.assign(vectors.begin(), vectors.end());
    b.finals.assign(vectors.begin(), vectors.end());
    b.rewards.assign(vectors.size(), 0.0);
    save_records(path, b);
}

std::vector<Vec> load_vectors(const std::string& path) {
    return load_records(path).finals;
}

} // namespace tdm
