#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace cp4vlm {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using RowMatrixXf = RowMatrix<float>;
using RowMatrixXd = RowMatrix<double>;

// n x K cosine similarities l_{i,k}.
using LogitMatrix = RowMatrixXf;

// Ground-truth class index per sample, each in [0, K).
using LabelVector = std::vector<int>;

// Sorted class indices; may be empty.
using PredictionSet = std::vector<int>;

// Row-major n x d feature vectors (visual or textual).
struct EmbeddingMatrix {
    RowMatrixXf rows;
    bool normalized = false;
};

// Row-wise probabilities on the K-simplex produced at one temperature.
struct SoftLabelMatrix {
    RowMatrixXf values;
    double temperature = 1.0;
};

struct ClassVocabulary {
    std::vector<std::string> names;
    std::string prompt_template = "a photo of a person doing {class}.";

    int size() const { return static_cast<int>(names.size()); }
    std::string prompt(int k) const;
};

} // namespace cp4vlm
