/* Copyright 2026 The amvi Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/


#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "amvi/core/error.hpp"
#include "amvi/train/head.hpp"

namespace amvi::train {

/// Trained heads plus the identity of the task they were trained for.
struct Checkpoint {
  std::string case_name;
  std::string method;
  AmortizedHead posterior;
  std::optional<AmortizedHead> predictive;
  nlohmann::json meta = nlohmann::json::object();  // free-form run metadata
};

inline constexpr const char* kCheckpointMagic = "AMVI-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json head_header(const AmortizedHead& h) {
  const auto& s = h.net.spec;
  return {{"input_dim", s.input_dim},   {"output_dim", s.output_dim}, {"hidden_layers", s.hidden_layers},
          {"hidden_width", s.hidden_width}, {"activation", "relu"},  {"family", varfam::to_string(h.family)},
          {"input_mean", h.input_mean}, {"input_scale", h.input_scale}, {"sigma_min", h.sigma_min},
          {"parameter_count", h.net.size()}};
}

inline AmortizedHead head_from_header(const nlohmann::json& j) {
  NetworkSpec spec{j.at("input_dim").get<std::size_t>(), j.at("output_dim").get<std::size_t>(),
                   j.at("hidden_layers").get<std::size_t>(), j.at("hidden_width").get<std::size_t>(),
                   diffnet::Activation::ReLU};
  if (j.at("activation").get<std::string>() != "relu") throw ConfigError("checkpoint: unsupported activation");
  AmortizedHead h;
  h.net = NetworkParams(spec);
  h.family = varfam::family_from_string(j.at("family").get<std::string>());
  h.input_mean = j.at("input_mean").get<std::vector<double>>();
  h.input_scale = j.at("input_scale").get<std::vector<double>>();
  h.sigma_min = j.at("sigma_min").get<double>();
  if (j.at("parameter_count").get<std::size_t>() != h.net.size())
    throw ConfigError("checkpoint: parameter count does not match the network spec");
  if (h.input_mean.size() != spec.input_dim || h.input_scale.size() != spec.input_dim)
    throw ConfigError("checkpoint: standardization length does not match input_dim");
  return h;
}

}  // namespace detail

/// Format: a magic line, one JSON header line, then the raw little-endian
/// float64 parameters of the posterior head followed by the predictive head.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header = {{"version", kCheckpointVersion},
                           {"case", ck.case_name},
                           {"method", ck.method},
                           {"posterior", detail::head_header(ck.posterior)}};
  if (ck.predictive) header["predictive"] = detail::head_header(*ck.predictive);
  header["meta"] = ck.meta;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint '" + path + "'");
  os << kCheckpointMagic << '\n' << header.dump() << '\n';
  auto write = [&](const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  write(ck.posterior.net.values);
  if (ck.predictive) write(ck.predictive->net.values);
  if (!os) throw Error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  std::string magic, line;
  std::getline(is, magic);
  if (magic != kCheckpointMagic) throw ConfigError("'" + path + "' is not a checkpoint file");
  std::getline(is, line);
  const auto header = nlohmann::json::parse(line);
  if (header.at("version").get<int>() != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
  Checkpoint ck;
  ck.case_name = header.at("case").get<std::string>();
  ck.method = header.at("method").get<std::string>();
  ck.posterior = detail::head_from_header(header.at("posterior"));
  if (header.contains("predictive")) ck.predictive = detail::head_from_header(header.at("predictive"));
  if (header.contains("meta")) ck.meta = header.at("meta");
  auto read = [&](std::vector<double>& v) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(v.size() * sizeof(double)))
      throw ConfigError("checkpoint '" + path + "' is truncated");
  };
  read(ck.posterior.net.values);
  if (ck.predictive) read(ck.predictive->net.values);
  return ck;
}

}  // namespace amvi::train
