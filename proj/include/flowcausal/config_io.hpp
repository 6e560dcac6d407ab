#pragma once

// Flat key=value configuration files. Blank lines and lines starting with
// '#' are ignored; keys are the struct field names; unknown keys are errors.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "flowcausal/cfm_train.hpp"
#include "flowcausal/ode_engine.hpp"
#include "flowcausal/scm_data.hpp"
#include "flowcausal/velocity_net.hpp"

namespace flowcausal::config {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);

train::TrainConfig train_config_from(const KeyValues& kv);
net::NetConfig net_config_from(const KeyValues& kv);
ode::OdeConfig ode_config_from(const KeyValues& kv);

// Keys: n, d_x, beta, omega, w_shift, noise_sd, propensity (balanced |
// logistic), propensity_coefficients, seed. List values are comma separated.
// Any of beta / omega / w_shift / propensity left out is taken from
// data::default_dgp_config(n, d_x, seed).
data::DgpConfig dgp_config_from(const KeyValues& kv);

std::string to_text(const train::TrainConfig& cfg);
std::string to_text(const net::NetConfig& cfg);
std::string to_text(const data::DgpConfig& cfg);

}  // namespace flowcausal::config
