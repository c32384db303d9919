#pragma once

#include "cp4vlm/error.hpp"
#include "cp4vlm/tensor_io.hpp"
#include "cp4vlm/types.hpp"

#include <cmath>
#include <string>

namespace cp4vlm {

inline constexpr double kDegenerateNorm = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-4;

// Row-wise Euclidean normalization, accumulated in double.
template <typename Derived>
RowMatrix<typename Derived::Scalar> l2_normalize_rows(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    RowMatrix<Scalar> out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const auto row = m.row(i).template cast<double>().eval();
        const double norm = row.norm();
        if (!(norm >= kDegenerateNorm))
            fail(ErrorKind::Numeric, "degenerate row " + std::to_string(i) + ": norm below 1e-12 cannot be normalized");
        out.row(i) = (row / norm).template cast<Scalar>();
    }
    return out;
}

// Dot products of every row of `visual` with every row of `textual`, in double.
template <typename DerivedA, typename DerivedB>
RowMatrix<typename DerivedA::Scalar> dot_logits(const Eigen::MatrixBase<DerivedA>& visual,
                                                const Eigen::MatrixBase<DerivedB>& textual) {
    if (visual.cols() != textual.cols()) {
        fail(ErrorKind::Numeric, "embedding dimension mismatch: visual d=" + std::to_string(visual.cols()) +
                                     ", textual d=" + std::to_string(textual.cols()));
    }
    const RowMatrixXd v = visual.template cast<double>();
    const RowMatrixXd t = textual.template cast<double>();
    return (v * t.transpose()).template cast<typename DerivedA::Scalar>();
}

inline EmbeddingMatrix l2_normalize(const Eigen::Ref<const RowMatrixXf>& matrix) {
    return {l2_normalize_rows(matrix), true};
}

// True when every row norm is within kUnitNormTolerance of 1.
template <typename Derived>
bool rows_unit_norm(const Eigen::MatrixBase<Derived>& m, double tolerance = kUnitNormTolerance) {
    for (Index i = 0; i < m.rows(); ++i) {
        if (std::abs(m.row(i).template cast<double>().norm() - 1.0) > tolerance) return false;
    }
    return true;
}

// Wraps raw rows, setting the normalized flag from the data itself.
inline EmbeddingMatrix as_embeddings(RowMatrixXf rows) {
    const bool unit = rows_unit_norm(rows);
    return {std::move(rows), unit};
}

/// Global average pooling over frames: per clip, the arithmetic mean of its
/// frame embeddings, accumulated in double in frame order. With `renormalize`
/// the mean is projected back onto the unit sphere.
inline EmbeddingMatrix gap_pool(const FrameTensor& frames, bool renormalize = true) {
    if (frames.frames < 1) fail(ErrorKind::Numeric, "gap_pool needs at least one frame per clip");
    RowMatrixXf out(frames.samples(), frames.dim);
    for (Index i = 0; i < frames.samples(); ++i) {
        const RowMatrixXd clip = frames.clip(i).cast<double>();
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(frames.dim);
        for (Index f = 0; f < frames.frames; ++f) mean += clip.row(f);
        mean /= static_cast<double>(frames.frames);
        const double norm = mean.norm();
        if (!(norm >= kDegenerateNorm))
            fail(ErrorKind::Numeric, "degenerate mean for clip " + std::to_string(i) + ": frame embeddings cancel out");
        out.row(i) = (renormalize ? (mean / norm).eval() : mean).cast<float>();
    }
    return {std::move(out), renormalize};
}

// l_{i,k} = f_i . t_k for unit-norm visual rows f_i and textual rows t_k.
inline LogitMatrix cosine_logits(const EmbeddingMatrix& visual, const EmbeddingMatrix& textual) {
    if (!visual.normalized || !textual.normalized)
        fail(ErrorKind::Numeric, "cosine_logits requires l2-normalized visual and textual embeddings");
    return dot_logits(visual.rows, textual.rows);
}

} // namespace cp4vlm
