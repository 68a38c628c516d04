#include "demure/train/config.hpp"

#include "demure/errors.hpp"

namespace demure::train {

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(d > 0, "d must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(l2_rate >= 0.0, "l2_rate must be non-negative");
  require(max_history > 0, "max_history must be positive");
  require(gamma_i >= 0.0 && gamma_m >= 0.0, "gamma_i and gamma_m must be non-negative");
  require(gamma_i + gamma_m <= 1.0 + 1e-12, "gamma_i + gamma_m must not exceed 1");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be non-negative");
  require(J >= 1, "J must be at least 1");
  require(n_negatives >= 1, "n_negatives must be at least 1");
  require(n_pool >= 1, "n_pool must be at least 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"d", d},
          {"d_hidden", hidden()},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"l2_rate", l2_rate},
          {"epochs", epochs},
          {"max_history", max_history},
          {"gamma_i", gamma_i},
          {"gamma_m", gamma_m},
          {"lambda1", lambda1},
          {"lambda2", lambda2},
          {"J", J},
          {"n_negatives", n_negatives},
          {"n_pool", n_pool},
          {"seed", seed},
          {"split_seed", split_seed},
          {"warmup_steps", warmup_steps},
          {"same_modality_only", same_modality_only},
          {"aggregation", model::to_string(aggregation)}};
}

void TrainConfig::update(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const char* k = key.c_str();
    if (key == "d") read(j, k, d);
    else if (key == "d_hidden") read(j, k, d_hidden);
    else if (key == "batch_size") read(j, k, batch_size);
    else if (key == "learning_rate") read(j, k, learning_rate);
    else if (key == "adam_beta1") read(j, k, adam_beta1);
    else if (key == "adam_beta2") read(j, k, adam_beta2);
    else if (key == "adam_eps") read(j, k, adam_eps);
    else if (key == "l2_rate") read(j, k, l2_rate);
    else if (key == "epochs") read(j, k, epochs);
    else if (key == "max_history") read(j, k, max_history);
    else if (key == "gamma_i") read(j, k, gamma_i);
    else if (key == "gamma_m") read(j, k, gamma_m);
    else if (key == "lambda1") read(j, k, lambda1);
    else if (key == "lambda2") read(j, k, lambda2);
    else if (key == "J") read(j, k, J);
    else if (key == "n_negatives") read(j, k, n_negatives);
    else if (key == "n_pool") read(j, k, n_pool);
    else if (key == "seed") read(j, k, seed);
    else if (key == "split_seed") read(j, k, split_seed);
    else if (key == "warmup_steps") read(j, k, warmup_steps);
    else if (key == "same_modality_only") read(j, k, same_modality_only);
    else if (key == "aggregation") {
      std::string name;
      read(j, k, name);
      aggregation = model::parse_aggregation(name);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.update(j);
  return c;
}

std::uint64_t config_hash(const nlohmann::json& canonical) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canonical.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t config_hash(const TrainConfig& config) { return config_hash(config.to_json()); }

nlohmann::json parse_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  return {{key, value}};
}

}  // namespace demure::train
