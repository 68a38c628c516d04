#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "demure/data/dataset.hpp"
#include "demure/errors.hpp"
#include "demure/eval/analysis.hpp"
#include "demure/eval/evaluation.hpp"
#include "demure/io/run_manifest.hpp"
#include "demure/synth/synthbench.hpp"
#include "demure/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace demure;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Precedence: built-in defaults, then the config file, then --set in order.
template <class Config>
Config build_config(const std::string& file, const std::vector<std::string>& sets) {
  Config c;
  if (!file.empty()) {
    try {
      c.update(read_json_file(file));
    } catch (const ConfigError& e) {
      throw ConfigError(file + ": " + e.what());
    }
  }
  for (const auto& s : sets) {
    try {
      c.update(train::parse_assignment(s));
    } catch (const ConfigError& e) {
      throw ConfigError("--set " + s + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("--k: '" + tok + "' is not a positive integer");
    }
  }
  if (ks.empty()) throw ConfigError("--k: no values");
  return ks;
}

struct Common {
  std::size_t threads = 1;
  bool deterministic = false;
  std::size_t effective_threads() const { return deterministic ? 1 : std::max<std::size_t>(1, threads); }
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

io::RunManifest start_manifest(const std::string& command, int argc, char** argv) {
  io::RunManifest m;
  m.command = command;
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
  return m;
}

fs::path manifest_next_to(const fs::path& file) {
  return file.parent_path() / (file.filename().string() + ".manifest.json");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::vector<std::string> sets;
};

void run_synth(const SynthArgs& a, io::RunManifest m) {
  Timer timer;
  const auto cfg = build_config<synth::SynthConfig>(a.config, a.sets);
  if (!a.config.empty()) m.add_input(a.config);
  const auto ds = synth::generate(cfg);
  synth::write_synth(a.out, ds);
  io::write_text_atomic(fs::path(a.out) / "synth_config.json", cfg.to_json().dump(2) + "\n");
  m.config = cfg.to_json();
  m.seed = cfg.seed;
  for (const auto& e : fs::directory_iterator(a.out))
    if (e.path().filename() != "manifest.json") m.outputs.push_back(e.path().string());
  std::sort(m.outputs.begin(), m.outputs.end());
  m.wall_clock_seconds = timer.seconds();
  m.write(fs::path(a.out) / "manifest.json");
  std::cout << "wrote " << cfg.n_users << " users, " << cfg.n_items << " items, "
            << ds.log.records.size() << " interactions to " << a.out << '\n';
}

struct IngestArgs {
  std::vector<std::string> features;
  std::string interactions, out;
};

void run_ingest(const IngestArgs& a, io::RunManifest m) {
  Timer timer;
  data::DatasetFiles files;
  for (const auto& f : a.features) files.features.emplace_back(f);
  files.interactions = a.interactions;
  const auto ds = data::load_dataset(files);
  fs::create_directories(a.out);
  data::DatasetFiles copied;
  for (const auto& f : files.features) {
    const auto dst = fs::path(a.out) / f.filename();
    if (std::find(copied.features.begin(), copied.features.end(), dst) != copied.features.end())
      throw DataError("two feature files share the name " + f.filename().string());
    fs::copy_file(f, dst, fs::copy_options::overwrite_existing);
    copied.features.push_back(dst);
  }
  copied.interactions = fs::path(a.out) / "interactions.tsv";
  data::write_interactions(copied.interactions, ds.log);
  data::write_dataset_manifest(a.out, copied);

  auto report = ds.report;
  report.add("items", ds.store.num_items());
  report.add("modalities", ds.store.num_modalities());
  report.add("users", ds.timelines.size());
  const std::string text = report.to_jsonl("ingest");
  io::write_text_atomic(fs::path(a.out) / "ingest_report.jsonl", text);
  std::cout << text;

  for (const auto& f : a.features) m.add_input(f);
  m.add_input(a.interactions);
  for (const auto& f : copied.features) m.outputs.push_back(f.string());
  m.outputs.push_back(copied.interactions.string());
  m.outputs.push_back((fs::path(a.out) / "dataset.json").string());
  m.outputs.push_back((fs::path(a.out) / "ingest_report.jsonl").string());
  m.wall_clock_seconds = timer.seconds();
  m.write(fs::path(a.out) / "manifest.json");
}

struct TrainArgs {
  std::string data, config, out, resume;
  std::vector<std::string> sets;
  std::uint64_t max_steps = 0;
  std::uint64_t checkpoint_every = 0;
};

void run_train(const TrainArgs& a, io::RunManifest m) {
  Timer timer;
  const auto cfg = build_config<train::TrainConfig>(a.config, a.sets);
  if (!a.config.empty()) m.add_input(a.config);
  const auto data = data::load_dataset(a.data);
  m.add_input(a.data);
  train::Trainer trainer(data, cfg);
  const fs::path out(a.out);
  fs::create_directories(out);

  const fs::path log_path = out / "loss_log.jsonl";
  std::vector<std::string> kept;
  if (!a.resume.empty()) {
    const auto loaded = train::load_checkpoint(a.resume, &cfg);
    if (loaded.config_mismatch) throw ConfigError(a.resume + ": " + loaded.warning);
    trainer.restore(loaded.checkpoint);
    m.add_input(a.resume);
    // keep the log lines written before the checkpoint
    std::ifstream old(log_path);
    std::string line;
    while (std::getline(old, line)) {
      if (line.empty()) continue;
      if (json::parse(line).at("step").get<std::uint64_t>() < trainer.progress().global_step)
        kept.push_back(line);
    }
  }
  std::ofstream log(log_path, std::ios::trunc);
  for (const auto& l : kept) log << l << '\n';

  auto save = [&](const fs::path& p) {
    train::save_checkpoint(p, trainer.checkpoint());
    if (std::find(m.outputs.begin(), m.outputs.end(), p.string()) == m.outputs.end())
      m.outputs.push_back(p.string());
  };
  model::LossBreakdown last{};
  while (!trainer.finished() && (a.max_steps == 0 || trainer.progress().global_step < a.max_steps)) {
    const auto rec = trainer.step();
    last = rec.loss;
    log << train::to_jsonl(rec);
    if (trainer.progress().step_in_epoch == 0) {
      log.flush();
      save(out / ("epoch-" + std::to_string(trainer.progress().epoch) + ".dmck"));
      save(out / "last.dmck");
    } else if (a.checkpoint_every > 0 && trainer.progress().global_step % a.checkpoint_every == 0) {
      log.flush();
      save(out / "last.dmck");
    }
  }
  log.close();
  if (!log) throw DataError("cannot write " + log_path.string());
  save(out / "last.dmck");
  io::write_text_atomic(out / "train_config.json", cfg.to_json().dump(2) + "\n");
  m.outputs.push_back(log_path.string());
  m.outputs.push_back((out / "train_config.json").string());
  m.config = cfg.to_json();
  m.seed = cfg.seed;
  m.wall_clock_seconds = timer.seconds();
  m.write(out / "manifest.json");
  std::cout << "steps " << trainer.progress().global_step << " epoch " << trainer.progress().epoch
            << " total " << last.total << " l_ssm " << last.l_ssm << '\n';
}

struct EvalArgs {
  std::string ckpt, data, split = "test", k = "20,50", out;
  bool include_history = false;
};

void run_eval(const EvalArgs& a, const Common& common, io::RunManifest m) {
  Timer timer;
  const auto loaded = train::load_checkpoint(a.ckpt);
  const auto& cfg = loaded.checkpoint.config;
  const auto data = data::load_dataset(a.data);
  eval::EvalOptions opt;
  opt.ks = parse_ks(a.k);
  opt.exclude_history = !a.include_history;
  opt.threads = common.effective_threads();
  loaded.checkpoint.params.validate(train::encoder_config(cfg, data.store));
  auto report = eval::evaluate_split(loaded.checkpoint.params, cfg, data,
                                     data::parse_split_part(a.split), opt);
  json j = report.to_json();
  j["split"] = a.split;
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  io::write_text_atomic(a.out, j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  m.add_input(a.ckpt);
  m.add_input(a.data);
  m.config = cfg.to_json();
  m.seed = cfg.seed;
  m.outputs.push_back(a.out);
  m.wall_clock_seconds = timer.seconds();
  m.write(manifest_next_to(a.out));
}

struct AnalyzeArgs {
  std::string mode, data, out, split = "train";
  std::vector<std::string> ckpts;
  std::size_t users = 1024;
  std::size_t n_users = 20;
  std::size_t n_items = 20;
  std::uint64_t seed = 0;
};

std::vector<data::UserId> pick_users(const data::Dataset& data, const train::TrainConfig& cfg,
                                     const std::string& split, std::size_t n, std::uint64_t seed) {
  auto users = split == "all" ? data.user_ids()
                              : data::users_of(data::split_users(data.user_ids(), cfg.split_seed),
                                               data::parse_split_part(split));
  if (n < users.size()) {
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) std::swap(users[i], users[i + rng.uniform_index(users.size() - i)]);
    users.resize(n);
    std::sort(users.begin(), users.end());
  }
  return users;
}

void run_analyze(const AnalyzeArgs& a, io::RunManifest m) {
  Timer timer;
  if (a.ckpts.empty()) throw ConfigError("--ckpt is required");
  std::vector<train::LoadedCheckpoint> ckpts;
  for (const auto& c : a.ckpts) {
    ckpts.push_back(train::load_checkpoint(c));
    m.add_input(c);
  }
  const auto data = data::load_dataset(a.data);
  m.add_input(a.data);
  const auto& cfg = ckpts.front().checkpoint.config;
  for (const auto& c : ckpts) c.checkpoint.params.validate(train::encoder_config(c.checkpoint.config, data.store));
  const auto& params = ckpts.front().checkpoint.params;
  m.config = cfg.to_json();
  m.seed = a.seed;
  std::string text;

  if (a.mode == "attention-variance") {
    if (ckpts.size() < 2) throw ConfigError("--mode attention-variance needs at least two --ckpt");
    const auto ref = eval::config_hash_ignoring_seed(cfg);
    for (std::size_t i = 1; i < ckpts.size(); ++i) {
      if (eval::config_hash_ignoring_seed(ckpts[i].checkpoint.config) != ref) {
        throw DataError(a.ckpts[i] + ": config differs from " + a.ckpts[0] + " beyond the seed");
      }
    }
    const auto users = pick_users(data, cfg, a.split, a.users, a.seed);
    std::vector<std::vector<eval::UserAttention>> runs;
    for (const auto& c : ckpts) {
      runs.push_back(eval::attention_weights(c.checkpoint.params, c.checkpoint.config.aggregation, data,
                                             users, c.checkpoint.config.max_history));
    }
    text = eval::attention_variance(runs).to_csv();
  } else if (a.mode == "interest-rating") {
    const auto cells = eval::interest_rating_diff(params, cfg.aggregation, data, a.n_users, a.n_items, a.seed);
    text = eval::interest_rating_csv(cells);
  } else if (a.mode == "embeddings") {
    const auto users = pick_users(data, cfg, a.split, a.users, a.seed);
    text = eval::embeddings_csv(params, cfg.aggregation, data, users, cfg.max_history);
  } else if (a.mode == "plans") {
    const auto users = pick_users(data, cfg, a.split, a.users, a.seed);
    text = eval::plans_jsonl(params, cfg, data, users, a.seed);
  } else if (a.mode == "localization") {
    const auto truth = synth::read_ground_truth(a.data);
    const auto users = pick_users(data, cfg, a.split, a.users, a.seed);
    const auto samples = synth::score_users(params, cfg.aggregation, data, users, cfg.max_history);
    const auto s = synth::localization_accuracy(samples, truth);
    text = json{{"accuracy", s.accuracy},
                {"mean_gap", s.mean_gap},
                {"driver_mean_alpha", s.driver_mean_alpha},
                {"other_mean_alpha", s.other_mean_alpha},
                {"n_users", s.n_users}}
               .dump(2) +
           "\n";
  } else {
    throw ConfigError("--mode: unknown analysis '" + a.mode + "'");
  }
  io::write_text_atomic(a.out, text);
  m.outputs.push_back(a.out);
  m.wall_clock_seconds = timer.seconds();
  m.write(manifest_next_to(a.out));
  std::cout << "wrote " << a.out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal sequential recommender with gradient-guided user denoising"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "Worker threads for evaluation")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", common.deterministic, "Single thread and ordered reductions");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the planted-noise synthetic dataset");
  synth_cmd->add_option("--config", sa.config, "Flat JSON synth config");
  synth_cmd->add_option("--set", sa.sets, "key=value override, applied after --config");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();

  IngestArgs ia;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate feature files and an interaction log");
  ingest_cmd->add_option("--features", ia.features, "DMFT files, one per modality, in order")->required();
  ingest_cmd->add_option("--interactions", ia.interactions, "Interaction TSV")->required();
  ingest_cmd->add_option("--out", ia.out, "Output data directory")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train and write checkpoints plus a JSONL loss log");
  train_cmd->add_option("--data", ta.data, "Data directory")->required();
  train_cmd->add_option("--config", ta.config, "Flat JSON train config");
  train_cmd->add_option("--set", ta.sets, "key=value override, applied after --config");
  train_cmd->add_option("--out", ta.out, "Checkpoint directory")->required();
  train_cmd->add_option("--resume", ta.resume, "Continue from this checkpoint");
  train_cmd->add_option("--max-steps", ta.max_steps, "Stop once this many steps are done");
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Also checkpoint every N steps");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Full-gallery Recall@K and NDCG@K");
  eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ea.data, "Data directory")->required();
  eval_cmd->add_option("--split", ea.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  eval_cmd->add_option("--k", ea.k, "Comma-separated cutoffs");
  eval_cmd->add_option("--out", ea.out, "Report JSON path")->required();
  eval_cmd->add_flag("--include-history", ea.include_history, "Keep consumed items as candidates");

  AnalyzeArgs aa;
  auto* analyze_cmd = app.add_subcommand("analyze", "Analysis exports");
  analyze_cmd->add_option("--mode", aa.mode, "attention-variance, interest-rating, embeddings, plans or localization")
      ->required()
      ->check(CLI::IsMember({"attention-variance", "interest-rating", "embeddings", "plans", "localization"}));
  analyze_cmd->add_option("--ckpt", aa.ckpts, "Checkpoint file (repeat for attention-variance)")->required();
  analyze_cmd->add_option("--data", aa.data, "Data directory")->required();
  analyze_cmd->add_option("--out", aa.out, "Output file")->required();
  analyze_cmd->add_option("--split", aa.split, "Users to analyze: train, valid, test or all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}));
  analyze_cmd->add_option("--users", aa.users, "Maximum number of sampled users");
  analyze_cmd->add_option("--n-users", aa.n_users, "interest-rating: users in the grid");
  analyze_cmd->add_option("--n-items", aa.n_items, "interest-rating: positions per user");
  analyze_cmd->add_option("--seed", aa.seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc != 0) std::cerr << app.help();
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) run_synth(sa, start_manifest("synth", argc, argv));
    if (*ingest_cmd) run_ingest(ia, start_manifest("ingest", argc, argv));
    if (*train_cmd) run_train(ta, start_manifest("train", argc, argv));
    if (*eval_cmd) run_eval(ea, common, start_manifest("eval", argc, argv));
    if (*analyze_cmd) run_analyze(aa, start_manifest("analyze", argc, argv));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const LookupError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
