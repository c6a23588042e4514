#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "icsad/dataset.hpp"
#include "icsad/seqmodel.hpp"

namespace icsad::test {

inline Timestamp t0() { return from_epoch(1'450'800'000); }

inline TagSeries make_series(const std::vector<std::string>& names, const Eigen::MatrixXd& values,
                             Timestamp start = t0()) {
    TagSeries s;
    s.schema = TagSchema::from_names(names);
    s.values = values;
    for (Eigen::Index t = 0; t < values.rows(); ++t) s.timestamps.push_back(start + Seconds{t});
    return s;
}

/// Smooth multi-tag signal in [0, 1] for process 1.
inline TagSeries sine_series(std::size_t rows, int tags, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 6.28);
    std::vector<std::string> names;
    Eigen::MatrixXd v(static_cast<Eigen::Index>(rows), tags);
    for (int j = 0; j < tags; ++j) {
        names.push_back("FIT-10" + std::to_string(j + 1));
        const double ph = phase(rng), period = 40.0 + 17.0 * j;
        for (Eigen::Index t = 0; t < v.rows(); ++t)
            v(t, j) = 0.5 + 0.4 * std::sin(6.283185307179586 * static_cast<double>(t) / period + ph);
    }
    return make_series(names, v);
}

inline WindowBatch random_batch(int tags, Eigen::Index batch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    WindowBatch b;
    b.batch = batch;
    b.encoder_input.resize(tags, static_cast<Eigen::Index>(kEncoderLength) * batch);
    b.decoder_hint.resize(tags, static_cast<Eigen::Index>(kHintLength) * batch);
    b.target.resize(tags, batch);
    for (auto* m : {&b.encoder_input, &b.decoder_hint, &b.target})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = u(rng);
    return b;
}

/// Column b of every step block of a step-major matrix.
inline Eigen::MatrixXd window_columns(const Eigen::MatrixXd& m, Eigen::Index batch, Eigen::Index b) {
    const Eigen::Index steps = m.cols() / batch;
    Eigen::MatrixXd out(m.rows(), steps);
    for (Eigen::Index t = 0; t < steps; ++t) out.col(t) = m.col(t * batch + b);
    return out;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() /
               ("icsad_" + name + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace icsad::test
