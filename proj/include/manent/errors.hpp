#pragma once

#include <stdexcept>
#include <string>

namespace manent {

/// A Jacobian column block is numerically rank deficient.
class degenerate_jacobian_error : public std::runtime_error {
public:
    degenerate_jacobian_error(std::string what, int column_count)
        : std::runtime_error(std::move(what)), column_count_(column_count) {}

    /// Number of columns in the offending block.
    int column_count() const noexcept { return column_count_; }

private:
    int column_count_;
};

/// An operation was requested that the decoder cannot provide
/// (e.g. log-density on a decoder without an encoder).
class capability_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or incompatible file content (checkpoints, MLP weights, manifests).
class format_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values encountered while evaluating a model.
class evaluation_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training aborted by the divergence detector.
class divergence_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A closed-form fit (e.g. PCA) failed on the given data.
class fit_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace manent
