#include "flowcausal/model_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "flowcausal/errors.hpp"

namespace flowcausal::model_io {

using nlohmann::ordered_json;

namespace {

const char* encoding_name(net::TimeEncoding e) {
  return e == net::TimeEncoding::ScalarAppend ? "scalar-append" : "sinusoidal";
}

template <class T>
T field(const ordered_json& obj, const char* key, const std::string& source) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(source + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(source + ": field '" + key + "' has the wrong type");
  }
}

const ordered_json& section(const ordered_json& doc, const char* key, const std::string& source) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_object()) throw SchemaError(source + ": missing section '" + key + "'");
  return *it;
}

}  // namespace

std::string to_json(const ModelFile& m) {
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  const net::NetConfig& nc = m.net_config;
  doc["net_config"] = {{"d_x", nc.d_x},
                       {"hidden_dim", nc.hidden()},
                       {"n_res_blocks", nc.n_res_blocks},
                       {"time_encoding", encoding_name(nc.time_encoding)},
                       {"n_frequencies", nc.n_frequencies},
                       {"init_seed", nc.init_seed}};
  ordered_json tensors = ordered_json::object();
  m.params.for_each([&](const std::string& name, const numkit::Matrix& w) {
    tensors[name] = {{"shape", {w.rows(), w.cols()}}, {"values", std::vector<double>(w.data().begin(), w.data().end())}};
  });
  doc["tensors"] = std::move(tensors);
  doc["scaler"] = {{"x_mean", m.scaler.x_mean},
                   {"x_sd", m.scaler.x_sd},
                   {"y_mean", m.scaler.y_mean},
                   {"y_sd", m.scaler.y_sd}};
  const train::TrainConfig& tc = m.train.config;
  doc["train"] = {{"batch_size", tc.batch_size},
                  {"max_iters", tc.max_iters},
                  {"lr", tc.lr},
                  {"adam_beta1", tc.adam_beta1},
                  {"adam_beta2", tc.adam_beta2},
                  {"adam_eps", tc.adam_eps},
                  {"ipw", tc.ipw},
                  {"seed", tc.seed},
                  {"loss_log_every", tc.loss_log_every},
                  {"iters_run", m.train.iters_run},
                  {"final_loss", m.train.final_loss},
                  {"n_train", m.train.n_train}};
  return doc.dump(1) + "\n";
}

ModelFile from_json(const std::string& text, const std::string& source) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(source + ": not valid JSON (" + e.what() + ")");
  }
  if (!doc.is_object()) throw SchemaError(source + ": expected a JSON object");
  const int version = field<int>(doc, "format_version", source);
  if (version != kFormatVersion) {
    throw SchemaError(source + ": unsupported format_version " + std::to_string(version));
  }

  ModelFile m;
  const auto& nc_doc = section(doc, "net_config", source);
  net::NetConfig& nc = m.net_config;
  nc.d_x = field<std::size_t>(nc_doc, "d_x", source);
  nc.hidden_dim = field<std::size_t>(nc_doc, "hidden_dim", source);
  nc.n_res_blocks = field<std::size_t>(nc_doc, "n_res_blocks", source);
  nc.n_frequencies = field<std::size_t>(nc_doc, "n_frequencies", source);
  nc.init_seed = field<std::uint64_t>(nc_doc, "init_seed", source);
  const auto enc = field<std::string>(nc_doc, "time_encoding", source);
  if (enc == "scalar-append") {
    nc.time_encoding = net::TimeEncoding::ScalarAppend;
  } else if (enc == "sinusoidal") {
    nc.time_encoding = net::TimeEncoding::Sinusoidal;
  } else {
    throw SchemaError(source + ": unknown time_encoding '" + enc + "'");
  }
  try {
    nc.validate();
  } catch (const ConfigError& e) {
    throw SchemaError(source + ": " + e.what());
  }

  const auto& tensors = section(doc, "tensors", source);
  m.params = net::zero_params(nc);
  std::set<std::string> seen;
  m.params.for_each([&](const std::string& name, numkit::Matrix& w) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw SchemaError(source + ": missing tensor '" + name + "'");
    const auto shape = field<std::vector<std::size_t>>(*it, "shape", source);
    auto values = field<std::vector<double>>(*it, "values", source);
    if (shape.size() != 2 || shape[0] != w.rows() || shape[1] != w.cols() || values.size() != w.size()) {
      throw SchemaError(source + ": tensor '" + name + "' should be " + numkit::shape_string(w));
    }
    std::copy(values.begin(), values.end(), w.data().begin());
    seen.insert(name);
  });
  for (const auto& [name, v] : tensors.items()) {
    if (!seen.contains(name)) throw SchemaError(source + ": unexpected tensor '" + name + "'");
  }
  if (!m.params.all_finite()) throw SchemaError(source + ": non-finite parameter value");

  const auto& sc = section(doc, "scaler", source);
  m.scaler.x_mean = field<std::vector<double>>(sc, "x_mean", source);
  m.scaler.x_sd = field<std::vector<double>>(sc, "x_sd", source);
  m.scaler.y_mean = field<double>(sc, "y_mean", source);
  m.scaler.y_sd = field<double>(sc, "y_sd", source);
  if (m.scaler.x_mean.size() != nc.d_x || m.scaler.x_sd.size() != nc.d_x) {
    throw SchemaError(source + ": scaler length does not match d_x = " + std::to_string(nc.d_x));
  }

  const auto& tr = section(doc, "train", source);
  train::TrainConfig& tc = m.train.config;
  tc.batch_size = field<std::size_t>(tr, "batch_size", source);
  tc.max_iters = field<std::size_t>(tr, "max_iters", source);
  tc.lr = field<double>(tr, "lr", source);
  tc.adam_beta1 = field<double>(tr, "adam_beta1", source);
  tc.adam_beta2 = field<double>(tr, "adam_beta2", source);
  tc.adam_eps = field<double>(tr, "adam_eps", source);
  tc.ipw = field<bool>(tr, "ipw", source);
  tc.seed = field<std::uint64_t>(tr, "seed", source);
  tc.loss_log_every = field<std::size_t>(tr, "loss_log_every", source);
  m.train.iters_run = field<std::size_t>(tr, "iters_run", source);
  m.train.final_loss = field<double>(tr, "final_loss", source);
  m.train.n_train = field<std::size_t>(tr, "n_train", source);
  return m;
}

void save(const ModelFile& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json(model);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ModelFile load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), path.string());
}

}  // namespace flowcausal::model_io
