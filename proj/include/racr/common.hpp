#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace racr {

namespace fs = std::filesystem;

using Eigen::MatrixXd;
using Eigen::MatrixXf;
using Eigen::VectorXd;

// Input that violates a documented precondition (bad config, degenerate spec, ...).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// On-disk data that cannot be loaded. Subtypes distinguish the failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ManifestError : IoError {
    using IoError::IoError;
};
struct FeatureSizeError : IoError {
    using IoError::IoError;
};
struct NonFiniteError : IoError {
    using IoError::IoError;
};

using Rng = std::mt19937_64;

// Little-endian float32 payload helpers (bag features, checkpoints).
void write_f32(const fs::path& file, const std::vector<float>& values);
std::vector<float> read_f32(const fs::path& file);

std::string read_text_file(const fs::path& file);
void write_text_file(const fs::path& file, const std::string& text);

}  // namespace racr
