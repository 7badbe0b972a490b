#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include "ugl/checkpoint.hpp"
#include "ugl/downstream.hpp"
#include "ugl/inference.hpp"
#include "ugl/lifecycle.hpp"
#include "ugl/lifecycle_io.hpp"
#include "ugl/seed.hpp"
#include "ugl/synthgen.hpp"
#include "ugl/training.hpp"
#include "ugl/vocab.hpp"
#include "ugl/vocab_io.hpp"

namespace ugl::cli {

/// Canonical artifact names inside the working directory.
namespace files {
inline constexpr const char* events = "events.jsonl";
inline constexpr const char* labels = "labels.csv";
inline constexpr const char* truth = "truth.csv";
inline constexpr const char* ugl = "ugl.jsonl";
inline constexpr const char* vocab = "vocab.json";
inline constexpr const char* longtail = "longtail.csv";
inline constexpr const char* model = "model.ckpt";
inline constexpr const char* telemetry = "telemetry.csv";
inline constexpr const char* manifest = "train_manifest.json";
inline constexpr const char* reps = "reps.csv";
inline constexpr const char* eval = "eval.csv";
inline constexpr const char* sweep = "sweep.csv";
}  // namespace files

namespace detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

inline std::string resolve(const std::string& flag, const std::string& dir, const char* name) {
  return flag.empty() ? (std::filesystem::path(dir) / name).string() : flag;
}

inline std::vector<UglSequence> load_ugl(const std::string& path) {
  auto in = open_in(path);
  return read_ugl(in);
}

inline VocabFile load_vocab(const std::string& path) {
  auto in = open_in(path);
  return read_vocab(in);
}

inline std::vector<LabelRow> load_labels(const std::string& path) {
  auto in = open_in(path);
  return read_labels(in);
}

inline RepresentationDb load_reps(const std::string& path) {
  auto in = open_in(path);
  return read_representations(in);
}

inline void require_same_vocab(const VocabStats& file, const VocabStats& corpus) {
  bool same = file.n_observed() == corpus.n_observed() && file.n_types() == corpus.n_types() &&
              file.n_games() == corpus.n_games();
  for (std::uint32_t i = 0; same && i < file.n_observed(); ++i) {
    const TokenId id{i};
    same = file.token(id) == corpus.token(id) && file.count(id) == corpus.count(id);
  }
  if (!same) throw Error("vocabulary file was not built from this UGL corpus (run `stats` again)");
}

/// Seeds used by `eval` / `sweep` for the downstream repetitions.
inline std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, std::size_t n) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(derive_seed(derive_seed(seed, "eval"), i));
  return out;
}

struct ModelFlags {
  std::size_t dim = 32, layers = 2, heads = 2, max_len = 128;

  ModelConfig config(std::size_t vocab_size) const {
    ModelConfig c;
    c.dim = dim;
    c.n_layers = layers;
    c.n_heads = heads;
    c.max_len = max_len;
    c.vocab_size = vocab_size;
    return c;
  }
};

inline void add_model_flags(CLI::App* app, ModelFlags& m) {
  app->add_option("--dim", m.dim, "Embedding width")->capture_default_str();
  app->add_option("--layers", m.layers, "Encoder layers")->capture_default_str();
  app->add_option("--heads", m.heads, "Attention heads")->capture_default_str();
  app->add_option("--model-max-len", m.max_len, "Longest encodable sequence")->capture_default_str();
}

/// `masking == nullptr` leaves the masking flags to the caller (sweep grids).
inline void add_train_flags(CLI::App* app, TrainConfig& t, std::string* masking) {
  if (masking) {
    app->add_option("--masking", *masking, "vanilla or ipm")
        ->check(CLI::IsMember({"vanilla", "ipm"}))
        ->capture_default_str();
    app->add_option("--q", t.q, "Vanilla mask probability")->capture_default_str();
    app->add_option("--qc", t.q_c, "IPM cap q_c")->capture_default_str();
    app->add_option("--qv", t.q_v, "IPM scale q_v")->capture_default_str();
  }
  app->add_option("--batch", t.batch_size, "Batch size")->capture_default_str();
  app->add_option("--steps", t.steps, "Optimizer steps")->capture_default_str();
  app->add_option("--lr", t.learning_rate, "Learning rate")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay")->capture_default_str();
  app->add_flag("!--no-force-mask", t.force_min_one_mask, "Allow rows with no masked position");
}

inline nlohmann::ordered_json manifest_json(const TrainConfig& t, const ModelConfig& m, const Telemetry& tel) {
  nlohmann::ordered_json j;
  j["masking"] = masking_name(t.masking);
  j["q"] = t.q;
  j["q_c"] = t.q_c;
  j["q_v"] = t.q_v;
  j["batch_size"] = t.batch_size;
  j["steps"] = t.steps;
  j["learning_rate"] = t.learning_rate;
  j["weight_decay"] = t.weight_decay;
  j["seed"] = t.seed;
  j["force_min_one_mask"] = t.force_min_one_mask;
  j["model"] = {{"dim", m.dim},          {"n_layers", m.n_layers},         {"n_heads", m.n_heads},
                {"max_len", m.max_len},  {"vocab_size", m.vocab_size},     {"date_buckets", m.date_buckets},
                {"freq_buckets", m.freq_buckets}, {"ffn_mult", m.ffn_mult}};
  if (!tel.empty()) {
    j["initial_loss"] = tel.initial_loss();
    j["final_loss"] = tel.final_loss();
    j["final_accuracy"] = tel.final_accuracy();
  }
  return j;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

/// Entry point. Exit codes: 0 success, 2 usage error, 1 runtime failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"UGL: user game lifecycle representations"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "key=value configuration file (flags override it)");
  std::string dir = ".";
  std::uint64_t seed = 1;
  app.add_option("--dir", dir, "Working directory for default artifact paths")->capture_default_str();
  app.add_option("--seed", seed, "Global seed; every stage derives its own")->capture_default_str();

  // synth
  SynthConfig sc;
  std::size_t target_game = sc.target_game;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic event log, labels and latent truth");
  synth->add_option("--users", sc.n_users, "Number of users")->capture_default_str();
  synth->add_option("--games", sc.n_games, "Number of games")->capture_default_str();
  synth->add_option("--types", sc.n_types, "Number of action types")->capture_default_str();
  synth->add_option("--zipf", sc.zipf_exponent, "Game popularity exponent")->capture_default_str();
  synth->add_option("--games-per-user", sc.games_per_user_mean, "Mean owned games")->capture_default_str();
  synth->add_option("--horizon", sc.horizon_days, "Days simulated")->capture_default_str();
  synth->add_option("--session-rate", sc.session_rate, "Expected active days per user")->capture_default_str();
  synth->add_option("--gap-mean", sc.gap_mean_days, "Mean inactivity gap in days")->capture_default_str();
  synth->add_option("--plays-mean", sc.plays_mean, "Mean plays per session")->capture_default_str();
  synth->add_option("--target-game", target_game, "Popularity rank of the label game")->capture_default_str();
  synth->add_option("--label-noise", sc.label_noise, "Label flip probability")->capture_default_str();

  // build
  LifecycleConfig lc;
  std::string events_path, ugl_path;
  auto* build = app.add_subcommand("build", "Build UGL sequences from an event log");
  build->add_option("--events", events_path, "Event log (default <dir>/events.jsonl)");
  build->add_option("--out", ugl_path, "UGL output (default <dir>/ugl.jsonl)");
  build->add_option("--lost-days", lc.lost_threshold_days, "Lost-action threshold in days")->capture_default_str();
  build->add_option("--silence-days", lc.silence_threshold_days, "Silence threshold in days")->capture_default_str();
  build->add_option("--max-len", lc.max_len, "Keep the most recent entries")->capture_default_str();
  build->add_flag("!--no-negative-feedback", lc.negative_feedback, "Skip lost and silence markers");
  build->add_flag("!--no-aggregation", lc.aggregation, "Keep repeated actions as separate entries");

  // stats
  std::string vocab_path, longtail_path;
  double stats_qc = 0.15, stats_qv = 0.5;
  auto* stats = app.add_subcommand("stats", "Vocabulary, IPM table and long-tail report");
  stats->add_option("--ugl", ugl_path, "UGL corpus (default <dir>/ugl.jsonl)");
  stats->add_option("--vocab", vocab_path, "Vocabulary output (default <dir>/vocab.json)");
  stats->add_option("--longtail", longtail_path, "Long-tail CSV (default <dir>/longtail.csv)");
  stats->add_option("--qc", stats_qc, "IPM cap q_c")->capture_default_str();
  stats->add_option("--qv", stats_qv, "IPM scale q_v")->capture_default_str();

  // train
  TrainConfig tc;
  std::string masking = "ipm";
  detail::ModelFlags mf;
  std::string model_path, telemetry_path, manifest_path;
  auto* train_cmd = app.add_subcommand("train", "Masked action modeling");
  train_cmd->add_option("--ugl", ugl_path, "UGL corpus (default <dir>/ugl.jsonl)");
  train_cmd->add_option("--vocab", vocab_path, "Vocabulary (default <dir>/vocab.json)");
  train_cmd->add_option("--model", model_path, "Checkpoint output (default <dir>/model.ckpt)");
  train_cmd->add_option("--telemetry", telemetry_path, "Telemetry CSV (default <dir>/telemetry.csv)");
  train_cmd->add_option("--manifest", manifest_path, "Run manifest (default <dir>/train_manifest.json)");
  detail::add_train_flags(train_cmd, tc, &masking);
  detail::add_model_flags(train_cmd, mf);

  // infer
  std::string reps_path;
  auto* infer = app.add_subcommand("infer", "Pooled representations for every user");
  infer->add_option("--ugl", ugl_path, "UGL corpus (default <dir>/ugl.jsonl)");
  infer->add_option("--vocab", vocab_path, "Vocabulary (default <dir>/vocab.json)");
  infer->add_option("--model", model_path, "Checkpoint (default <dir>/model.ckpt)");
  infer->add_option("--out", reps_path, "Representation database (default <dir>/reps.csv)");

  // eval
  std::string labels_path, report_path;
  std::vector<std::string> variant_specs;
  std::size_t n_seeds = 5;
  EvalConfig ec;
  auto* eval = app.add_subcommand("eval", "Downstream AUC and ablation report");
  eval->add_option("--labels", labels_path, "Label table (default <dir>/labels.csv)");
  eval->add_option("--reps", reps_path, "UGL representations (default <dir>/reps.csv)");
  eval->add_option("--variant", variant_specs, "Extra ablation variant as name=reps.csv (repeatable)");
  eval->add_option("--out", report_path, "Report (default <dir>/eval.csv)");
  eval->add_option("--seeds", n_seeds, "Downstream repetitions")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--folds", ec.folds, "Cross-validation folds")->capture_default_str();

  // sweep
  std::vector<double> qv_grid{0.5}, qc_grid{0.15};
  auto* sweep = app.add_subcommand("sweep", "Train, infer and evaluate over a q_c x q_v grid");
  sweep->add_option("--qv", qv_grid, "q_v values")->delimiter(',');
  sweep->add_option("--qc", qc_grid, "q_c values")->delimiter(',');
  sweep->add_option("--ugl", ugl_path, "UGL corpus (default <dir>/ugl.jsonl)");
  sweep->add_option("--vocab", vocab_path, "Vocabulary (default <dir>/vocab.json)");
  sweep->add_option("--labels", labels_path, "Label table (default <dir>/labels.csv)");
  sweep->add_option("--out", report_path, "Grid report (default <dir>/sweep.csv)");
  sweep->add_option("--seeds", n_seeds, "Downstream repetitions per cell")->capture_default_str()->check(CLI::PositiveNumber);
  detail::add_train_flags(sweep, tc, nullptr);
  detail::add_model_flags(sweep, mf);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (synth->parsed()) {
      sc.target_game = target_game;
      sc.seed = derive_seed(seed, "synth");
      const SynthData data = generate(sc);
      auto ev = detail::open_out(detail::resolve("", dir, files::events));
      write_event_log(ev, data.events);
      auto lb = detail::open_out(detail::resolve("", dir, files::labels));
      write_labels(lb, data.labels);
      auto tr = detail::open_out(detail::resolve("", dir, files::truth));
      write_truth(tr, data.truth);
      out << "synth: " << data.events.size() << " events, " << data.labels.size() << " users\n";
    } else if (build->parsed()) {
      auto in = detail::open_in(detail::resolve(events_path, dir, files::events));
      const auto events = parse_event_log(in);
      const auto corpus = build_corpus(events, lc);
      auto o = detail::open_out(detail::resolve(ugl_path, dir, files::ugl));
      write_ugl(o, corpus);
      out << "build: " << corpus.size() << " sequences\n";
    } else if (stats->parsed()) {
      const auto corpus = detail::load_ugl(detail::resolve(ugl_path, dir, files::ugl));
      const VocabStats vocab = build_vocab(corpus);
      auto v = detail::open_out(detail::resolve(vocab_path, dir, files::vocab));
      write_vocab(v, vocab, ipm_probabilities(vocab, stats_qc, stats_qv));
      const LongtailReport lt = longtail_report(vocab);
      auto l = detail::open_out(detail::resolve(longtail_path, dir, files::longtail));
      write_longtail(l, vocab, lt);
      out << "stats: " << vocab.n_observed() << " tokens, top-decile share " << detail::fmt(lt.top_decile_share)
          << "\n";
    } else if (train_cmd->parsed()) {
      const auto corpus = detail::load_ugl(detail::resolve(ugl_path, dir, files::ugl));
      const VocabFile vf = detail::load_vocab(detail::resolve(vocab_path, dir, files::vocab));
      detail::require_same_vocab(vf.stats, build_vocab(corpus));
      tc.masking = masking == "ipm" ? MaskingMode::Ipm : MaskingMode::Vanilla;
      tc.seed = derive_seed(seed, "train");
      const ModelConfig mc = mf.config(vf.stats.size());
      const TrainResult r = train(corpus, vf.stats, mc, tc);
      save_checkpoint(detail::resolve(model_path, dir, files::model), r.params);
      auto t = detail::open_out(detail::resolve(telemetry_path, dir, files::telemetry));
      write_telemetry(t, r.telemetry);
      auto m = detail::open_out(detail::resolve(manifest_path, dir, files::manifest));
      m << detail::manifest_json(tc, mc, r.telemetry).dump(2) << '\n';
      out << "train: " << masking_name(tc.masking) << " q_c=" << tc.q_c << " q_v=" << tc.q_v << " steps=" << tc.steps;
      if (!r.telemetry.empty())
        out << " final_loss=" << detail::fmt(r.telemetry.final_loss())
            << " final_accuracy=" << detail::fmt(r.telemetry.final_accuracy());
      out << "\n";
    } else if (infer->parsed()) {
      const auto corpus = detail::load_ugl(detail::resolve(ugl_path, dir, files::ugl));
      const VocabFile vf = detail::load_vocab(detail::resolve(vocab_path, dir, files::vocab));
      const auto params = load_checkpoint<float>(detail::resolve(model_path, dir, files::model));
      const RepresentationDb db = infer_representations(std::span<const UglSequence>(corpus), params, vf.stats);
      auto o = detail::open_out(detail::resolve(reps_path, dir, files::reps));
      write_representations(o, db);
      out << "infer: " << db.size() << " representations of width " << params.config.representation_width() << "\n";
    } else if (eval->parsed()) {
      const auto labels = detail::load_labels(detail::resolve(labels_path, dir, files::labels));
      AblationBundle bundle;
      bundle["ugl"] = detail::load_reps(detail::resolve(reps_path, dir, files::reps));
      for (const std::string& spec : variant_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw Error("--variant expects name=path, got '" + spec + "'");
        bundle[spec.substr(0, eq)] = detail::load_reps(spec.substr(eq + 1));
      }
      std::vector<std::string> variants;
      for (const std::string& v : ablation_variants()) {
        const bool derived = v == "dense-only" || v == "random" || v == "no-max" || v == "no-avg" || v == "no-min" ||
                             v == "no-var";
        if (derived || bundle.contains(v)) variants.push_back(v);
      }
      for (const auto& [name, db] : bundle)
        if (std::find(variants.begin(), variants.end(), name) == variants.end())
          throw Error("unknown ablation variant '" + name + "'");
      const auto seeds = detail::eval_seeds(seed, n_seeds);
      const AblationReport report = ablation_suite(labels, bundle, seeds, ec, variants);
      auto o = detail::open_out(detail::resolve(report_path, dir, files::eval));
      write_ablation_report(o, report);
      for (const VariantSummary& s : report.summary) out << s.variant << " median AUC " << detail::fmt(s.median) << "\n";
    } else if (sweep->parsed()) {
      const auto corpus = detail::load_ugl(detail::resolve(ugl_path, dir, files::ugl));
      const VocabFile vf = detail::load_vocab(detail::resolve(vocab_path, dir, files::vocab));
      detail::require_same_vocab(vf.stats, build_vocab(corpus));
      const auto labels = detail::load_labels(detail::resolve(labels_path, dir, files::labels));
      const auto seeds = detail::eval_seeds(seed, n_seeds);
      const ModelConfig mc = mf.config(vf.stats.size());
      auto o = detail::open_out(detail::resolve(report_path, dir, files::sweep));
      o << "q_c,q_v,final_loss,final_accuracy,auc_median,auc_min,auc_max\n";
      for (double qc : qc_grid)
        for (double qv : qv_grid) {
          TrainConfig cell = tc;
          cell.masking = MaskingMode::Ipm;
          cell.q_c = qc;
          cell.q_v = qv;
          cell.seed = derive_seed(seed, "train");
          const TrainResult r = train(corpus, vf.stats, mc, cell);
          AblationBundle bundle;
          bundle["ugl"] = infer_representations(std::span<const UglSequence>(corpus), r.params, vf.stats);
          const AblationReport rep = ablation_suite(labels, bundle, seeds, ec, {"ugl"});
          const VariantSummary& s = rep.at("ugl");
          o << detail::fmt(qc) << ',' << detail::fmt(qv) << ','
            << detail::fmt(r.telemetry.empty() ? NAN : r.telemetry.final_loss()) << ','
            << detail::fmt(r.telemetry.empty() ? NAN : r.telemetry.final_accuracy()) << ',' << detail::fmt(s.median)
            << ',' << detail::fmt(s.min) << ',' << detail::fmt(s.max) << '\n';
          out << "sweep: q_c=" << qc << " q_v=" << qv << " AUC " << detail::fmt(s.median) << "\n";
        }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ugl::cli
