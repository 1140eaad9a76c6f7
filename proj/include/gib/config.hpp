#pragma once

// JSON configuration files for weight learning and policy training. Unknown
// keys are rejected so that typos do not silently fall back to defaults.

#include <fstream>
#include <functional>
#include <map>
#include <string>

#include <json.hpp>

#include "gib/bed.hpp"
#include "gib/error.hpp"
#include "gib/policy.hpp"

namespace gib::config {

using nlohmann::json;

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

namespace detail {

using Setter = std::function<void(const json&)>;

template <typename T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

inline void apply(const json& j, const std::map<std::string, Setter>& fields, const std::string& what) {
  if (!j.is_object()) throw ValidationError(what + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ValidationError("unknown " + what + " config key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception&) {
      throw ValidationError(what + " config key '" + key + "' has the wrong type");
    }
  }
}

}  // namespace detail

// Keys: c, h, q, lambda, m, epochs, step_size, weight_step_size, momentum,
// resample_len, seed, hidden, latent, standardize_inputs.
inline BedConfig bed_from_json(const json& j) {
  BedConfig c;
  detail::apply(j,
                {{"c", detail::set(c.c)},
                 {"h", detail::set(c.h_coef)},
                 {"q", detail::set(c.q)},
                 {"lambda", detail::set(c.lambda_count)},
                 {"m", detail::set(c.m)},
                 {"epochs", detail::set(c.epochs)},
                 {"step_size", detail::set(c.step_size)},
                 {"weight_step_size", detail::set(c.weight_step_size)},
                 {"momentum", detail::set(c.momentum)},
                 {"resample_len", detail::set(c.resample_len)},
                 {"seed", detail::set(c.seed)},
                 {"hidden", detail::set(c.hidden)},
                 {"latent", detail::set(c.latent)},
                 {"standardize_inputs", detail::set(c.standardize_inputs)}},
                "train-bed");
  c.validate();
  return c;
}

// Keys: hidden, latent, epochs, batch_size, learning_rate, beta1, beta2,
// adam_eps, standardize_inputs, standardize_targets, seed.
inline PolicyConfig policy_from_json(const json& j) {
  PolicyConfig c;
  detail::apply(j,
                {{"hidden", detail::set(c.hidden)},
                 {"latent", detail::set(c.latent)},
                 {"epochs", detail::set(c.epochs)},
                 {"batch_size", detail::set(c.batch_size)},
                 {"learning_rate", detail::set(c.learning_rate)},
                 {"beta1", detail::set(c.beta1)},
                 {"beta2", detail::set(c.beta2)},
                 {"adam_eps", detail::set(c.adam_eps)},
                 {"standardize_inputs", detail::set(c.standardize_inputs)},
                 {"standardize_targets", detail::set(c.standardize_targets)},
                 {"seed", detail::set(c.seed)}},
                "train-policy");
  c.validate();
  return c;
}

}  // namespace gib::config
