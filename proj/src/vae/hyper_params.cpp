// SPDX-License-Identifier: Apache-2.0

#include "molgen/vae/hyper_params.hpp"

#include <cmath>

#include "molgen/util/text.hpp"

namespace molgen::vae {
namespace {

std::size_t parse_size(const std::string& key, const std::string& text) {
  if (const auto v = parse_integer<std::size_t>(text)) return *v;
  throw InvalidHyperParams("bad integer for " + key + ": '" + text + "'");
}

double parse_double(const std::string& key, const std::string& text) {
  if (const auto v = parse_real(text)) return *v;
  throw InvalidHyperParams("bad number for " + key + ": '" + text + "'");
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (const auto v = parse_flag(text)) return *v;
  throw InvalidHyperParams("bad boolean for " + key + ": '" + text + "'");
}

}  // namespace

void HyperParams::validate() const {
  if (d == 0 || k == 0) throw InvalidHyperParams("d and k must be positive");
  if (layers == 0 || decoder_layers == 0) throw InvalidHyperParams("layer counts must be positive");
  if (max_atoms < 2) throw InvalidHyperParams("max_atoms must be at least 2");
  if (max_position < max_atoms) throw InvalidHyperParams("max_position must be >= max_atoms");
  for (const double w : {lambda_edge, lambda_atoms, lambda_kl, lambda_prop}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidHyperParams("loss weights must be finite and >= 0");
  }
  if (!(attention_eps > 0.0) || !(bn_eps > 0.0)) throw InvalidHyperParams("eps values must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw InvalidHyperParams("bn_momentum must be in [0, 1)");
}

std::map<std::string, std::string> HyperParams::to_map() const {
  return {
      {"d", std::to_string(d)},
      {"k", std::to_string(k)},
      {"layers", std::to_string(layers)},
      {"decoder_layers", std::to_string(decoder_layers)},
      {"max_atoms", std::to_string(max_atoms)},
      {"max_position", std::to_string(max_position)},
      {"lambda_edge", format_double(lambda_edge)},
      {"lambda_atoms", format_double(lambda_atoms)},
      {"lambda_kl", format_double(lambda_kl)},
      {"lambda_prop", format_double(lambda_prop)},
      {"attention_eps", format_double(attention_eps)},
      {"bn_eps", format_double(bn_eps)},
      {"bn_momentum", format_double(bn_momentum)},
      {"positional_features", positional_features ? "1" : "0"},
  };
}

HyperParams HyperParams::from_map(const std::map<std::string, std::string>& values) {
  HyperParams hp;
  for (const auto& [key, text] : values) {
    if (key == "d") hp.d = parse_size(key, text);
    else if (key == "k") hp.k = parse_size(key, text);
    else if (key == "layers") hp.layers = parse_size(key, text);
    else if (key == "decoder_layers") hp.decoder_layers = parse_size(key, text);
    else if (key == "max_atoms") hp.max_atoms = parse_size(key, text);
    else if (key == "max_position") hp.max_position = parse_size(key, text);
    else if (key == "lambda_edge") hp.lambda_edge = parse_double(key, text);
    else if (key == "lambda_atoms") hp.lambda_atoms = parse_double(key, text);
    else if (key == "lambda_kl") hp.lambda_kl = parse_double(key, text);
    else if (key == "lambda_prop") hp.lambda_prop = parse_double(key, text);
    else if (key == "attention_eps") hp.attention_eps = parse_double(key, text);
    else if (key == "bn_eps") hp.bn_eps = parse_double(key, text);
    else if (key == "bn_momentum") hp.bn_momentum = parse_double(key, text);
    else if (key == "positional_features") hp.positional_features = parse_bool(key, text);
    else throw InvalidHyperParams("unknown hyperparameter '" + key + "'");
  }
  hp.validate();
  return hp;
}

}  // namespace molgen::vae
