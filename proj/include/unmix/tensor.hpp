#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unmix {

/// Dense row-major real matrix. Used for B×C instance statistics, K×C
/// component tables and B×K assignment scores.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    double operator()(std::size_t r, std::size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// B×C×L feature tensor entering a normalization layer. Layout is
/// batch-major, then channel, then spatial position.
class FeatureBatch {
public:
    FeatureBatch() = default;
    FeatureBatch(std::size_t batch, std::size_t channels, std::size_t length, double fill = 0.0)
        : batch_(batch), channels_(channels), length_(length),
          data_(batch * channels * length, fill) {}
    FeatureBatch(std::size_t batch, std::size_t channels, std::size_t length,
                 std::vector<double> values)
        : batch_(batch), channels_(channels), length_(length), data_(std::move(values)) {
        if (data_.size() != batch_ * channels_ * length_)
            throw std::invalid_argument("FeatureBatch: data size " + std::to_string(data_.size()) +
                                        " does not match shape");
    }

    std::size_t batch() const { return batch_; }
    std::size_t channels() const { return channels_; }
    std::size_t length() const { return length_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t b, std::size_t c, std::size_t l) {
        assert(b < batch_ && c < channels_ && l < length_);
        return data_[(b * channels_ + c) * length_ + l];
    }
    double operator()(std::size_t b, std::size_t c, std::size_t l) const {
        assert(b < batch_ && c < channels_ && l < length_);
        return data_[(b * channels_ + c) * length_ + l];
    }

    /// The L values of feature map (b, c).
    std::span<double> map(std::size_t b, std::size_t c) {
        return {data_.data() + (b * channels_ + c) * length_, length_};
    }
    std::span<const double> map(std::size_t b, std::size_t c) const {
        return {data_.data() + (b * channels_ + c) * length_, length_};
    }

    /// All C×L values of sample b.
    std::span<const double> sample(std::size_t b) const {
        return {data_.data() + b * channels_ * length_, channels_ * length_};
    }
    std::span<double> sample(std::size_t b) {
        return {data_.data() + b * channels_ * length_, channels_ * length_};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const FeatureBatch&) const = default;

private:
    std::size_t batch_ = 0;
    std::size_t channels_ = 0;
    std::size_t length_ = 0;
    std::vector<double> data_;
};

/// Throws unless the batch has a nonzero shape and finite entries.
void validate(const FeatureBatch& batch);

/// Gathers the listed samples of `source` into a new batch, in order.
FeatureBatch gather(const FeatureBatch& source, std::span<const std::size_t> indices);

}  // namespace unmix
