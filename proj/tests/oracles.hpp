#pragma once

// Test-only reference implementations. Deliberately naive: scalar loops in
// long double, no Eigen expressions, no library helpers.

#include "cp4vlm/types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace oracle {

using cp4vlm::Index;
using cp4vlm::RowMatrixXf;

inline std::vector<std::vector<long double>> dot_products(const RowMatrixXf& a, const RowMatrixXf& b) {
    std::vector<std::vector<long double>> out(static_cast<std::size_t>(a.rows()),
                                              std::vector<long double>(static_cast<std::size_t>(b.rows()), 0.0L));
    for (Index i = 0; i < a.rows(); ++i)
        for (Index k = 0; k < b.rows(); ++k)
            for (Index j = 0; j < a.cols(); ++j)
                out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] +=
                    static_cast<long double>(a(i, j)) * static_cast<long double>(b(k, j));
    return out;
}

// Mean of frame rows followed by normalization, one clip given as F x d.
inline std::vector<long double> mean_then_normalize(const RowMatrixXf& clip) {
    std::vector<long double> mean(static_cast<std::size_t>(clip.cols()), 0.0L);
    for (Index f = 0; f < clip.rows(); ++f)
        for (Index j = 0; j < clip.cols(); ++j) mean[static_cast<std::size_t>(j)] += clip(f, j);
    long double norm = 0.0L;
    for (auto& v : mean) {
        v /= static_cast<long double>(clip.rows());
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : mean) v /= norm;
    return mean;
}

inline std::vector<long double> softmax(const std::vector<long double>& logits, long double tau) {
    const long double m = *std::max_element(logits.begin(), logits.end());
    std::vector<long double> out(logits.size());
    long double total = 0.0L;
    for (std::size_t k = 0; k < logits.size(); ++k) total += out[k] = std::exp((logits[k] - m) / tau);
    for (auto& v : out) v /= total;
    return out;
}

inline RowMatrixXf random_matrix(Index rows, Index cols, std::mt19937_64& gen, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    RowMatrixXf m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = dist(gen);
    return m;
}

inline RowMatrixXf random_unit_rows(Index rows, Index cols, std::mt19937_64& gen) {
    std::normal_distribution<double> dist;
    RowMatrixXf m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        std::vector<double> v(static_cast<std::size_t>(cols));
        double norm = 0.0;
        for (auto& x : v) {
            x = dist(gen);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<float>(v[static_cast<std::size_t>(j)] / norm);
    }
    return m;
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cp4vlm_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace oracle
