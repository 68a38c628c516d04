#include "demure/synth/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "demure/errors.hpp"

namespace demure::synth {

void SynthConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid synth config: " + what);
  };
  require(n_users > 0 && n_items > 0, "n_users and n_items must be positive");
  require(n_modalities > 0, "n_modalities must be positive");
  require(raw_dims.size() == n_modalities, "raw_dims needs one entry per modality");
  require(std::all_of(raw_dims.begin(), raw_dims.end(), [](auto d) { return d > 0; }),
          "raw_dims must be positive");
  require(n_clusters >= 2, "n_clusters must be at least 2");
  require(interactions_per_user > 0, "interactions_per_user must be positive");
  require(interactions_per_user <= n_items, "interactions_per_user exceeds n_items");
  require(noise_rate >= 0.0 && noise_rate < 1.0, "noise_rate must lie in [0, 1)");
  require(feature_noise >= 0.0, "feature_noise must be non-negative");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_users", n_users},
          {"n_items", n_items},
          {"n_modalities", n_modalities},
          {"raw_dims", raw_dims},
          {"n_clusters", n_clusters},
          {"interactions_per_user", interactions_per_user},
          {"noise_rate", noise_rate},
          {"feature_noise", feature_noise},
          {"driver_rule", driver_rule == DriverRule::kRandom ? "random" : "round_robin"},
          {"seed", seed}};
}

void SynthConfig::update(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  bool dims_given = false;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_users") n_users = v.get<std::size_t>();
      else if (key == "n_items") n_items = v.get<std::size_t>();
      else if (key == "n_modalities") n_modalities = v.get<std::size_t>();
      else if (key == "raw_dims") {
        dims_given = true;
        raw_dims = v.is_array() ? v.get<std::vector<std::size_t>>()
                                : std::vector<std::size_t>(1, v.get<std::size_t>());
      } else if (key == "n_clusters") n_clusters = v.get<std::size_t>();
      else if (key == "interactions_per_user") interactions_per_user = v.get<std::size_t>();
      else if (key == "noise_rate") noise_rate = v.get<double>();
      else if (key == "feature_noise") feature_noise = v.get<double>();
      else if (key == "seed") seed = v.get<std::uint64_t>();
      else if (key == "driver_rule") {
        const auto s = v.get<std::string>();
        if (s == "random") driver_rule = DriverRule::kRandom;
        else if (s == "round_robin") driver_rule = DriverRule::kRoundRobin;
        else throw ConfigError("config key 'driver_rule': expected random or round_robin, got '" + s + "'");
      } else {
        throw ConfigError("unknown synth config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  // A single dim (or an unchanged default) is broadcast to every modality.
  if (raw_dims.size() == 1 || (!dims_given && raw_dims.size() != n_modalities)) {
    raw_dims.assign(n_modalities, raw_dims.front());
  }
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.update(j);
  return c;
}

bool GroundTruth::is_noise(data::UserId user, data::ItemId item) const {
  for (const auto& r : interactions)
    if (r.user == user && r.item == item) return r.noise;
  throw LookupError("no ground truth for user " + std::to_string(user) + ", item " + std::to_string(item));
}

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  const std::size_t M = config.n_modalities;
  const std::size_t N = config.n_items;
  Rng rng(config.seed);

  std::vector<nd::Array> centers;
  for (std::size_t m = 0; m < M; ++m) {
    nd::Array c(config.n_clusters, config.raw_dims[m]);
    for (std::size_t k = 0; k < config.n_clusters; ++k) {
      double norm = 0.0;
      for (auto& v : c.row_span(k)) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : c.row_span(k)) v /= norm;
    }
    centers.push_back(std::move(c));
  }

  SynthDataset out;
  std::vector<data::ItemId> ids(N);
  for (std::size_t i = 0; i < N; ++i) ids[i] = i + 1;
  out.truth.item_clusters.assign(N, std::vector<std::size_t>(M));
  std::vector<nd::Array> features;
  for (std::size_t m = 0; m < M; ++m) features.emplace_back(N, config.raw_dims[m]);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t k = rng.uniform_index(config.n_clusters);
      out.truth.item_clusters[i][m] = k;
      const auto center = centers[m].row_span(k);
      auto row = features[m].row_span(i);
      for (std::size_t c = 0; c < row.size(); ++c) {
        // stored as f32 on disk; keep the in-memory copy identical
        row[c] = static_cast<float>(center[c] + config.feature_noise * rng.normal());
      }
    }
  }
  for (std::size_t m = 0; m < M; ++m) {
    out.store.merge(data::FeatureStore::single({"modality" + std::to_string(m), config.raw_dims[m]},
                                               ids, features[m]));
  }

  // members[m][k]: items whose modality-m cluster is k
  std::vector<std::vector<std::vector<std::size_t>>> members(
      M, std::vector<std::vector<std::size_t>>(config.n_clusters));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t m = 0; m < M; ++m) members[m][out.truth.item_clusters[i][m]].push_back(i);

  for (std::size_t u = 0; u < config.n_users; ++u) {
    const data::UserId user = u + 1;
    UserTruth t;
    t.driver_modality = config.driver_rule == DriverRule::kRandom ? rng.uniform_index(M) : u % M;
    t.preferred_cluster = rng.uniform_index(config.n_clusters);
    out.truth.users[user] = t;
    const auto& matching = members[t.driver_modality][t.preferred_cluster];
    std::unordered_set<std::size_t> used;
    for (std::size_t k = 0; k < config.interactions_per_user; ++k) {
      const bool noise = rng.bernoulli(config.noise_rate);
      std::size_t item = 0;
      if (noise) {
        do item = rng.uniform_index(N);
        while (used.contains(item));
      } else {
        std::vector<std::size_t> free;
        for (std::size_t i : matching)
          if (!used.contains(i)) free.push_back(i);
        if (free.empty()) {
          throw ConfigError("synth: user " + std::to_string(user) + " has no unused item in cluster " +
                            std::to_string(t.preferred_cluster) + " of modality " +
                            std::to_string(t.driver_modality) + " (too few items per cluster)");
        }
        item = free[rng.uniform_index(free.size())];
      }
      used.insert(item);
      const auto ts = static_cast<std::int64_t>(k + 1);
      out.log.records.push_back({user, ids[item], ts, noise ? 1.0f : 5.0f});
      out.truth.interactions.push_back({user, ids[item], ts, noise});
    }
  }
  return out;
}

data::Dataset to_dataset(const SynthDataset& ds) {
  data::Dataset out;
  out.store = ds.store;
  out.log = ds.log;
  out.timelines = data::build_timelines(out.log, out.store, out.report);
  return out;
}

void write_synth(const std::filesystem::path& dir, const SynthDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  data::DatasetFiles files;
  for (std::size_t m = 0; m < ds.store.num_modalities(); ++m) {
    const auto p = dir / ("m" + std::to_string(m) + ".dmft");
    data::write_feature_file(p, ds.store, m);
    files.features.push_back(p);
  }
  files.interactions = dir / "interactions.tsv";
  data::write_interactions(files.interactions, ds.log);
  data::write_dataset_manifest(dir, files);

  std::ofstream users(dir / "truth_users.tsv", std::ios::trunc);
  users << "user_id\tdriver_modality\tpreferred_cluster\n";
  for (const auto& [u, t] : ds.truth.users) users << u << '\t' << t.driver_modality << '\t' << t.preferred_cluster << '\n';
  std::ofstream inter(dir / "truth_interactions.tsv", std::ios::trunc);
  inter << "user_id\titem_id\ttimestamp\tnoise\n";
  for (const auto& r : ds.truth.interactions)
    inter << r.user << '\t' << r.item << '\t' << r.timestamp << '\t' << (r.noise ? 1 : 0) << '\n';
  if (!users || !inter) throw DataError("cannot write ground truth under " + dir.string());
}

GroundTruth read_ground_truth(const std::filesystem::path& dir) {
  GroundTruth truth;
  auto open = [&](const char* name) {
    std::ifstream f(dir / name);
    if (!f) throw DataError("cannot open " + (dir / name).string());
    std::string header;
    std::getline(f, header);
    return f;
  };
  {
    auto f = open("truth_users.tsv");
    data::UserId u;
    UserTruth t;
    while (f >> u >> t.driver_modality >> t.preferred_cluster) truth.users[u] = t;
  }
  {
    auto f = open("truth_interactions.tsv");
    InteractionTruth r;
    int noise;
    while (f >> r.user >> r.item >> r.timestamp >> noise) {
      r.noise = noise != 0;
      truth.interactions.push_back(r);
    }
  }
  return truth;
}

LocalizationSummary localization_accuracy(std::span<const LocalizationSample> samples,
                                          const GroundTruth& truth) {
  std::map<std::pair<data::UserId, data::ItemId>, bool> noise;
  for (const auto& r : truth.interactions) noise[{r.user, r.item}] = r.noise;
  LocalizationSummary s;
  std::size_t correct = 0;
  double gap = 0.0, driver_total = 0.0, other_total = 0.0;
  for (const auto& sample : samples) {
    const auto it = truth.users.find(sample.user);
    if (it == truth.users.end()) throw LookupError("no ground truth for user " + std::to_string(sample.user));
    const std::size_t M = sample.scores.modality_scores.cols();
    std::vector<double> mean(M, 0.0);
    std::size_t clean = 0;
    for (std::size_t t = 0; t < sample.items.size(); ++t) {
      const auto f = noise.find({sample.user, sample.items[t]});
      if (f == noise.end() || f->second) continue;
      ++clean;
      for (std::size_t m = 0; m < M; ++m) mean[m] += sample.scores.modality_scores(t, m);
    }
    if (clean == 0 || M < 2) continue;
    for (auto& v : mean) v /= static_cast<double>(clean);
    const std::size_t driver = it->second.driver_modality;
    const auto best = static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    correct += best == driver;
    double others = 0.0;
    for (std::size_t m = 0; m < M; ++m)
      if (m != driver) others += mean[m];
    others /= static_cast<double>(M - 1);
    gap += mean[driver] - others;
    driver_total += mean[driver];
    other_total += others;
    ++s.n_users;
  }
  if (s.n_users > 0) {
    const double n = static_cast<double>(s.n_users);
    s.accuracy = static_cast<double>(correct) / n;
    s.mean_gap = gap / n;
    s.driver_mean_alpha = driver_total / n;
    s.other_mean_alpha = other_total / n;
  }
  return s;
}

std::vector<LocalizationSample> score_users(const model::EncoderParams& params,
                                            model::Aggregation aggregation,
                                            const data::Dataset& data,
                                            std::span<const data::UserId> users,
                                            std::size_t max_history) {
  std::vector<std::vector<std::size_t>> histories;
  std::vector<model::ScoreRequest> requests;
  std::vector<LocalizationSample> out;
  histories.reserve(users.size());
  for (data::UserId u : users) {
    const auto* tl = data.timeline(u);
    if (tl == nullptr || tl->items.size() < 2) continue;
    const std::size_t end = tl->items.size() - 1;
    const std::size_t start = end > max_history ? end - max_history : 0;
    histories.emplace_back(tl->items.begin() + static_cast<std::ptrdiff_t>(start),
                           tl->items.begin() + static_cast<std::ptrdiff_t>(end));
    LocalizationSample s;
    s.user = u;
    for (std::size_t g : histories.back()) s.items.push_back(data.store.item_id(g));
    out.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* tl = data.timeline(out[i].user);
    requests.push_back({histories[i], tl->items.back()});
  }
  // Bounded tape size per sweep.
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < requests.size(); lo += kChunk) {
    const std::size_t hi = std::min(lo + kChunk, requests.size());
    const auto scores = model::interest_scores(params, aggregation, data.store,
                                               std::span(requests).subspan(lo, hi - lo));
    for (std::size_t i = lo; i < hi; ++i) out[i].scores = scores[i - lo];
  }
  return out;
}

}  // namespace demure::synth
