#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "gma/nn/layers.hpp"
#include "json.hpp"

namespace gma::nn {

/// Single-file tensor archive:
///   8 bytes   magic "GMATENS1"
///   8 bytes   little-endian u64 header length N
///   N bytes   JSON {"metadata": {...}, "tensors": [{"name", "shape", "trainable"}]}
///   payload   float64 little-endian values of each tensor, in header order
struct TensorArchive {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Parameter> tensors;
};

void save_archive(const std::filesystem::path& path, const ParameterSet& params,
                  const nlohmann::json& metadata);
TensorArchive load_archive(const std::filesystem::path& path);

/// Copies every archive tensor named `source_prefix + suffix` into the
/// parameter named `target_prefix + suffix`. Shapes must agree. Returns the
/// number of tensors copied.
int copy_matching(const TensorArchive& archive, ParameterSet& params,
                  const std::string& target_prefix, const std::string& source_prefix = {});

}  // namespace gma::nn
