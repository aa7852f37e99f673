#pragma once

// Spatio-temporal frame features and the weighted ground metric.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowsel {

/// Metadata of one multi-agent capture.
struct FrameRecord {
    std::string id;
    std::int64_t t_us = 0;              ///< microseconds
    std::array<double, 3> pose{};       ///< x, y, z in meters
    std::optional<std::string> payload_path;
};

/// Normalized 4-D embedding [t, x, y, s] of a frame.
struct FeatureVector {
    double t = 0.0;  ///< seconds since the reference time, >= 0
    double x = 0.0;  ///< in [-1, 1]
    double y = 0.0;  ///< in [-1, 1]
    double s = 1.0;  ///< sequential position, in (0, 1]

    bool operator==(const FeatureVector&) const = default;
};

/// Per-coordinate weights of the ground metric; all >= 0, at least one > 0.
class WeightVector {
public:
    static constexpr std::array<double, 4> kDefault{2.0, 1.0, 1.0, 0.5};

    WeightVector() : w_(kDefault) {}
    /// Throws InvalidWeights on negative, non-finite or all-zero weights.
    explicit WeightVector(std::array<double, 4> w);

    double t() const { return w_[0]; }
    double x() const { return w_[1]; }
    double y() const { return w_[2]; }
    double s() const { return w_[3]; }
    const std::array<double, 4>& values() const { return w_; }

    /// Parses "w_t,w_x,w_y,w_s".
    static WeightVector parse(const std::string& text);

private:
    std::array<double, 4> w_;
};

enum class TimestampMode {
    relative,  ///< subtract the earliest timestamp before scaling
    absolute,  ///< scale raw timestamps
};

constexpr double kTimeScaleUs = 1e6;
constexpr std::size_t kMaxFrames = 20000;

/// Normalizes frames into feature vectors, preserving order. Throws
/// EmptyDataset for no frames and InvalidRecord for non-finite poses or
/// negative timestamps.
std::vector<FeatureVector> extract_features(std::span<const FrameRecord> frames,
                                            TimestampMode mode = TimestampMode::relative);

/// sqrt(sum_k w_k (a_k - b_k)^2), evaluated in a fixed order so that it agrees
/// bit-for-bit with the entries of distance_matrix().
double weighted_distance(const FeatureVector& a, const FeatureVector& b, const WeightVector& w);

/// Dense symmetric n x n matrix of pairwise distances.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    /// Takes a row-major n*n buffer. No metric validation is done here.
    DistanceMatrix(std::size_t n, std::vector<double> entries);

    std::size_t size() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return entries_[i * n_ + j]; }
    std::span<const double> row(std::size_t i) const { return {entries_.data() + i * n_, n_}; }
    std::span<const double> entries() const { return entries_; }

private:
    std::size_t n_ = 0;
    std::vector<double> entries_;
};

/// Pairwise weighted distances. Each unordered pair is computed once and
/// mirrored. Rows may be split across `threads` workers; the result does not
/// depend on the thread count. Throws EmptyDataset.
DistanceMatrix distance_matrix(std::span<const FeatureVector> features, const WeightVector& w,
                               unsigned threads = 1);

}  // namespace flowsel
