#pragma once

// JSON model file: format_version, net_config, named tensors (shape plus
// row-major values), the standardization record and training metadata.
// Doubles are written in shortest round-trip form, so save -> load is exact.

#include <filesystem>
#include <string>

#include "flowcausal/cfm_train.hpp"
#include "flowcausal/scm_data.hpp"
#include "flowcausal/velocity_net.hpp"

namespace flowcausal::model_io {

inline constexpr int kFormatVersion = 1;

struct TrainMetadata {
  train::TrainConfig config;
  std::size_t iters_run = 0;
  double final_loss = 0.0;
  std::size_t n_train = 0;
};

struct ModelFile {
  net::NetConfig net_config;
  net::VelocityNetParams params;
  data::Scaler scaler;
  TrainMetadata train;
};

std::string to_json(const ModelFile& model);
ModelFile from_json(const std::string& text, const std::string& source = "<model>");

void save(const ModelFile& model, const std::filesystem::path& path);
ModelFile load(const std::filesystem::path& path);

}  // namespace flowcausal::model_io
