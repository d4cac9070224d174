#pragma once

// Command-line front end. Everything lives behind run() so tests can drive
// the commands in-process.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "forestfuse/forestfuse.hpp"

namespace forestfuse::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_data_error = 1;
inline constexpr int exit_usage_error = 2;

inline unsigned default_threads() {
  if (const char* env = std::getenv("FORESTFUSE_THREADS")) {
    try {
      return static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, std::string("FORESTFUSE_THREADS is not a number: '") + env + "'");
    }
  }
  return 0;
}

struct ForestFlags {
  std::string mode = "classification";
  std::size_t trees = 100;
  std::size_t mtry = 0;
  std::size_t min_node_size = 0;
  std::size_t max_depth = 0;  // 0: unlimited
  std::string split = "presort";
  std::size_t bins = 256;
  std::uint64_t seed = 0;
  std::string pair_mode = "all";

  ForestConfig config() const {
    ForestConfig c;
    c.mode = mode == "regression" ? Mode::regression : mode == "unsupervised" ? Mode::unsupervised : Mode::classification;
    c.n_trees = trees;
    c.mtry = mtry;
    c.min_node_size = min_node_size;
    if (max_depth > 0) c.max_depth = max_depth;
    c.split_strategy = split == "histogram" ? SplitStrategy::histogram : SplitStrategy::presort;
    c.n_bins = bins;
    c.seed = seed;
    c.proximity_pairs = pair_mode == "oob" ? PairMode::oob : PairMode::all;
    return c;
  }
};

inline void add_forest_flags(CLI::App* cmd, ForestFlags& f, bool with_mode = true) {
  if (with_mode)
    cmd->add_option("--mode", f.mode, "classification, regression or unsupervised")
        ->check(CLI::IsMember({"classification", "regression", "unsupervised"}))
        ->capture_default_str();
  cmd->add_option("--trees", f.trees, "number of trees")->capture_default_str();
  cmd->add_option("--mtry", f.mtry, "candidate features per split (0: default)");
  cmd->add_option("--min-node-size", f.min_node_size, "nodes this small become leaves (0: default)");
  cmd->add_option("--max-depth", f.max_depth, "maximum depth (0: unlimited)");
  cmd->add_option("--split", f.split, "split finder")->check(CLI::IsMember({"presort", "histogram"}))->capture_default_str();
  cmd->add_option("--bins", f.bins, "histogram bins")->capture_default_str();
  cmd->add_option("--seed", f.seed, "random seed")->capture_default_str();
  cmd->add_option("--pair-mode", f.pair_mode, "proximity pairs")->check(CLI::IsMember({"all", "oob"}))->capture_default_str();
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

struct InputFlags {
  std::string target;
  bool svmlight = false;
  std::string mask;
};

inline void add_input_flags(CLI::App* cmd, InputFlags& f) {
  cmd->add_option("--target", f.target, "target column name (default: the single header column absent from the schema)");
  cmd->add_flag("--svmlight", f.svmlight, "data file is SVMLight/LibSVM sparse text; the schema sets the feature count");
  cmd->add_option("--mask", f.mask, "missing-value sidecar with 0-based row,feature lines");
}

struct LoadedData {
  Dataset data;
  std::string target_name;
};

// Picks the target column: explicit name, else the one header column that is
// not a schema feature.
inline std::optional<std::string> resolve_target(const std::string& path, const FeatureSchema& schema,
                                                 const std::string& requested) {
  if (!requested.empty()) return requested;
  const auto header = read_csv_header(path);
  std::vector<std::string> extra;
  for (const auto& h : header)
    if (!schema.find(h)) extra.push_back(h);
  if (extra.empty()) return std::nullopt;
  if (extra.size() == 1) return extra.front();
  throw Error(ErrorKind::schema, "header has " + std::to_string(extra.size()) +
                                     " columns not in the schema; name the target with --target");
}

inline LoadedData load_input(const std::string& path, const FeatureSchema& schema, const InputFlags& flags) {
  LoadedData out;
  if (flags.svmlight) {
    out.data = load_sparse_svmlight(path, schema.size(), schema);
    out.target_name = flags.target.empty() ? "label" : flags.target;
  } else {
    CsvOptions opts;
    opts.target_column = resolve_target(path, schema, flags.target);
    out.data = load_dense_csv(path, schema, opts);
    out.target_name = opts.target_column.value_or("");
  }
  if (!flags.mask.empty()) {
    auto cells = out.data.missing_cells();
    const auto extra = load_missing_mask(flags.mask);
    for (const auto& c : extra)
      if (c.row >= out.data.n_rows() || c.feature >= out.data.n_features())
        throw Error(ErrorKind::index, "mask cell (" + std::to_string(c.row) + "," + std::to_string(c.feature) +
                                          ") outside the data");
    cells.insert(cells.end(), extra.begin(), extra.end());
    out.data = out.data.with_missing(std::move(cells));
  }
  return out;
}

// Schema used to re-read data for a trained model: the feature schema plus,
// for labelled class targets, the target's category list.
inline FeatureSchema reading_schema(const ModelArtifact& model) {
  auto specs = model.forest.schema.features();
  if (!model.class_labels.empty() && !model.target_name.empty())
    specs.push_back({model.target_name, FeatureKind::categorical, model.class_labels});
  return FeatureSchema(std::move(specs));
}

inline Dataset load_for_model(const std::string& path, const ModelArtifact& model, const InputFlags& flags) {
  Dataset ds;
  if (flags.svmlight) {
    ds = load_sparse_svmlight(path, model.forest.n_features, model.forest.schema);
  } else {
    CsvOptions opts;
    const auto header = read_csv_header(path);
    if (!model.target_name.empty() && std::find(header.begin(), header.end(), model.target_name) != header.end())
      opts.target_column = model.target_name;
    ds = load_dense_csv(path, reading_schema(model), opts);
  }
  if (model.forest.config.mode == Mode::unsupervised) ds = ds.with_target(std::nullopt);
  if (!flags.mask.empty()) ds = ds.with_missing(load_missing_mask(flags.mask));
  return ds;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw Error(ErrorKind::io, "cannot write '" + path + "'");
    }
    stream_ = path.empty() ? &fallback : &file_;
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

inline std::string fingerprint_of(const ModelArtifact& model) { return fingerprint_string(model.fingerprint()); }

inline void fingerprint_line(std::ostream& out, const std::string& fp) { out << "# fingerprint=" << fp << '\n'; }

inline std::string class_name(const ModelArtifact& model, int code) {
  if (code >= 0 && static_cast<std::size_t>(code) < model.class_labels.size()) return model.class_labels[code];
  return std::to_string(code);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, schema, model;
  ForestFlags forest;
  InputFlags input;
  bool build_index = false;
  std::string importance_out;
  std::string importance_method = "permutation";
  std::size_t repetitions = 1;
  unsigned threads = 0;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto schema = load_schema(a.schema);
  auto loaded = load_input(a.data, schema, a.input);
  const auto cfg = a.forest.config();
  if (cfg.mode != Mode::unsupervised && !loaded.data.has_target())
    throw Error(ErrorKind::config, std::string(to_string(cfg.mode)) +
                                       " mode needs a target column; none found (use --target NAME)");
  if (cfg.mode == Mode::unsupervised) loaded.data = loaded.data.with_target(std::nullopt);

  const auto start = std::chrono::steady_clock::now();
  ModelArtifact model;
  model.forest = train(loaded.data, cfg, a.threads);
  if (a.build_index) model.index = build_leaf_index(model.forest, a.threads);
  model.target_name = loaded.target_name;
  if (loaded.data.has_target()) model.class_labels = loaded.data.target()->labels;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_model(model, a.model);

  const auto fp = fingerprint_of(model);
  fingerprint_line(out, fp);
  out << "mode=" << to_string(cfg.mode) << " trees=" << model.forest.n_trees() << " rows=" << loaded.data.n_rows()
      << " features=" << loaded.data.n_features() << " oob_error=" << detail::format_double(model.forest.oob_error)
      << " train_seconds=" << seconds << '\n';

  if (!a.importance_out.empty()) {
    ImportanceOptions opts;
    opts.repetitions = a.repetitions;
    opts.threads = a.threads;
    const auto report =
        compute_importance(model.forest, loaded.data, parse_importance_method(a.importance_method), opts);
    auto write = [&](const std::string& suffix, auto&& body) {
      Output o(a.importance_out + suffix, out);
      fingerprint_line(*o, fp);
      body(*o);
    };
    const auto& s = model.forest.schema;
    write(".overall_var.csv", [&](std::ostream& os) { write_overall_csv(s, report.overall_var, os); });
    write(".overall_prox.csv", [&](std::ostream& os) { write_overall_csv(s, report.overall_prox, os); });
    write(".local_var.csv", [&](std::ostream& os) { write_local_csv(s, report.local_var, os); });
    write(".local_prox.csv", [&](std::ostream& os) { write_local_csv(s, report.local_prox, os); });
  }
  return exit_ok;
}

struct ModelDataArgs {
  std::string model, data, output;
  InputFlags input;
  unsigned threads = 0;
};

inline int cmd_predict(const ModelDataArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto ds = load_for_model(a.data, model, a.input);
  const auto pred = predict(model.forest, ds, a.threads);
  Output o(a.output, out);
  fingerprint_line(*o, fingerprint_of(model));
  const Mode mode = model.forest.config.mode;
  if (mode == Mode::unsupervised) {
    *o << "row_id,p_synthetic\n";
    for (std::size_t i = 0; i < pred.n_rows; ++i) *o << i << ',' << detail::format_double(pred.p_synthetic(i)) << '\n';
  } else if (mode == Mode::regression) {
    *o << "row_id,prediction\n";
    for (std::size_t i = 0; i < pred.n_rows; ++i) *o << i << ',' << detail::format_double(pred.values[i]) << '\n';
  } else {
    *o << "row_id,prediction";
    for (int c = 0; c < pred.n_classes; ++c) *o << ",p_" << class_name(model, c);
    *o << '\n';
    for (std::size_t i = 0; i < pred.n_rows; ++i) {
      const auto p = pred.proba(i);
      *o << i << ',' << class_name(model, argmax_class(p));
      for (double v : p) *o << ',' << detail::format_double(v);
      *o << '\n';
    }
  }
  return exit_ok;
}

struct ImportanceArgs : ModelDataArgs {
  std::string type = "local-prox";
  std::string method = "permutation";
  std::optional<std::size_t> row;
  std::size_t repetitions = 1;
  bool exhaustive = false;
};

inline int cmd_importance(const ImportanceArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto ds = load_for_model(a.data, model, a.input);
  require_training_data(model.forest, ds);
  ImportanceOptions opts;
  opts.repetitions = a.repetitions;
  opts.donors = a.exhaustive ? DonorScheme::exhaustive : DonorScheme::random;
  opts.threads = a.threads;
  if (a.row && *a.row >= ds.n_rows())
    throw Error(ErrorKind::index, "row " + std::to_string(*a.row) + " out of range (" + std::to_string(ds.n_rows()) + " rows)");
  Output o(a.output, out);
  fingerprint_line(*o, fingerprint_of(model));
  const auto& schema = model.forest.schema;
  if (a.type == "overall-var") {
    write_overall_csv(schema, overall_variable_importance(model.forest, ds, parse_importance_method(a.method), opts), *o);
  } else if (a.type == "overall-prox") {
    write_overall_csv(schema, overall_proximity_importance(model.forest, ds, opts), *o);
  } else {
    const auto local = local_importance(model.forest, ds, opts);
    write_local_csv(schema, a.type == "local-var" ? local.variable : local.proximity, *o, a.row);
  }
  return exit_ok;
}

struct OutlierArgs : ModelDataArgs {
  std::string mode = "exact";
  std::size_t m_cap = 256;
};

inline int cmd_outliers(const OutlierArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto ds = load_for_model(a.data, model, a.input);
  require_training_data(model.forest, ds);
  const auto classes = outlier_classes(model.forest, ds);
  OutlierReport report;
  if (a.mode == "greedy") {
    const LeafIndex index = model.index ? *model.index : build_leaf_index(model.forest, a.threads);
    report = outlier_greedy(index, model.forest, classes, a.m_cap, a.threads);
  } else {
    report = outlier_exact(compute_proximity(model.forest, ds, PairMode::all, kDefaultMatrixCap, a.threads), classes);
  }
  Output o(a.output, out);
  fingerprint_line(*o, fingerprint_of(model));
  write_outliers_csv(report, *o);
  return exit_ok;
}

struct PrototypeArgs : ModelDataArgs {
  std::size_t k = 5;
  std::size_t n_protos = 3;
};

inline int cmd_prototypes(const PrototypeArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto ds = load_for_model(a.data, model, a.input);
  require_training_data(model.forest, ds);
  const auto prox = compute_proximity(model.forest, ds, model.forest.config.proximity_pairs, kDefaultMatrixCap, a.threads);
  const auto protos = find_prototypes(prox, ds, outlier_classes(model.forest, ds), a.k, a.n_protos);
  Output o(a.output, out);
  fingerprint_line(*o, fingerprint_of(model));
  write_prototypes_csv(model.forest.schema, protos, *o);
  return exit_ok;
}

struct SimilarArgs {
  std::string model, query, output, data;
  InputFlags input;
  std::size_t k = 10;
  bool explain = false;
  bool build_index = false;
  std::size_t repetitions = 1;
};

inline int cmd_similar(const SimilarArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  if (!model.index && !a.build_index)
    throw Error(ErrorKind::precondition,
                "model has no leaf index; retrain with 'train --build-index' or pass --build-index to build it now");
  const LeafIndex index = model.index ? *model.index : build_leaf_index(model.forest);
  const auto queries = load_for_model(a.query, model, a.input);
  if (queries.n_missing() > 0) throw Error(ErrorKind::precondition, "query rows contain missing values");
  std::optional<Dataset> training;
  if (a.explain) {
    if (a.data.empty()) throw Error(ErrorKind::argument, "--explain needs --data (the training data) for donor values");
    training = load_for_model(a.data, model, InputFlags{"", a.input.svmlight, ""});
    require_training_data(model.forest, *training);
  }
  ImportanceOptions opts;
  opts.repetitions = a.repetitions;

  const bool many = queries.n_rows() > 1;
  std::vector<std::vector<double>> explanations;
  Output o(a.output, out);
  fingerprint_line(*o, fingerprint_of(model));
  *o << (many ? "query,rank,row_id,score\n" : "rank,row_id,score\n");
  for (std::size_t q = 0; q < queries.n_rows(); ++q) {
    const auto x = queries.row(q);
    const auto neighbors = top_k_similar(index, model.forest, x, a.k);
    for (std::size_t r = 0; r < neighbors.size(); ++r) {
      if (many) *o << q << ',';
      *o << (r + 1) << ',' << neighbors[r].row_id << ',' << detail::format_double(neighbors[r].score) << '\n';
    }
    if (a.explain) explanations.push_back(query_proximity_importance(model.forest, *training, x, opts));
  }
  if (a.explain) {
    *o << '\n' << (many ? "query,feature,importance\n" : "feature,importance\n");
    for (std::size_t q = 0; q < explanations.size(); ++q)
      for (std::size_t k = 0; k < explanations[q].size(); ++k) {
        if (many) *o << q << ',';
        *o << model.forest.schema[k].name << ',' << detail::format_double(explanations[q][k]) << '\n';
      }
  }
  return exit_ok;
}

struct ImputeArgs {
  std::string data, schema, output, trace;
  InputFlags input;
  ForestFlags forest;
  std::string method = "bc";
  std::size_t max_iters = 6;
  double tol = 1e-3;
  unsigned threads = 0;
};

inline int cmd_impute(const ImputeArgs& a, std::ostream& out) {
  const auto schema = load_schema(a.schema);
  auto loaded = load_input(a.data, schema, a.input);
  ImputationConfig cfg;
  cfg.method = a.method == "young" ? ImputeMethod::young : ImputeMethod::breiman_cutler;
  cfg.max_iters = a.max_iters;
  cfg.tol = a.tol;
  cfg.forest_config = a.forest.config();
  cfg.threads = a.threads;
  const auto result = impute(loaded.data, cfg);

  const auto fp = fingerprint_string(
      {loaded.data.n_rows(), loaded.data.n_features(), cfg.forest_config.seed, fingerprint(loaded.data)});
  {
    Output o(a.output, out);
    write_dense_csv(result.data, *o, "NA", loaded.target_name.empty() ? "target" : loaded.target_name);
  }
  Output t(a.trace, out);
  *t << nlohmann::json{{"fingerprint", fp},
                       {"method", a.method},
                       {"converged", result.converged},
                       {"iterations", result.trace.size()},
                       {"imputed_cells", loaded.data.n_missing()},
                       {"fallback_cells", result.fallback_cells.size()}}
            .dump()
     << '\n';
  for (const auto& tr : result.trace)
    *t << nlohmann::json{{"iter", tr.iter},
                         {"max_rel_change", tr.max_rel_change},
                         {"n_categorical_changes", tr.n_categorical_changes}}
              .dump()
       << '\n';
  return exit_ok;
}

struct ValidateArgs {
  std::string reference, schema, output;
  std::vector<std::string> candidates;
  ForestFlags forest;
  unsigned threads = 0;
};

inline int cmd_validate(const ValidateArgs& a, std::ostream& out) {
  const auto schema = a.schema.empty() ? FeatureSchema::all_continuous(read_csv_header(a.reference)) : load_schema(a.schema);
  const auto reference = load_dense_csv(a.reference, schema);
  std::vector<NamedDataset> candidates;
  for (const auto& path : a.candidates)
    candidates.push_back({std::filesystem::path(path).stem().string(), load_dense_csv(path, schema)});
  const auto report = validate_imputations(reference, candidates, a.forest.config(), a.threads);
  Output o(a.output, out);
  const auto fp = fingerprint_string({reference.n_rows(), reference.n_features(), a.forest.seed, report.reference_fingerprint});
  *o << nlohmann::json{{"fingerprint", fp}, {"reference_oob", report.reference_oob}}.dump() << '\n';
  for (auto c : report.ranking) {
    const auto& s = report.candidates[c];
    *o << nlohmann::json{{"name", s.name}, {"mean_p_synthetic", s.mean_p_synthetic}, {"rank", s.rank}}.dump() << '\n';
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::config:
    case ErrorKind::argument: return exit_usage_error;
    default: return exit_data_error;
  }
}

// args excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"forestfuse: random forests with proximities, importance, outliers, prototypes and imputation",
               "forestfuse"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  unsigned threads = 0;
  bool threads_set = false;
  auto add_threads = [&](CLI::App* cmd) {
    cmd->add_option("--threads", threads, "worker threads (0: all cores; default $FORESTFUSE_THREADS)")
        ->each([&](const std::string&) { threads_set = true; });
  };

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a forest and write a model file");
  train_cmd->add_option("data", train_args.data, "training data (CSV with header, or SVMLight)")->required();
  train_cmd->add_option("schema", train_args.schema, "feature schema file")->required();
  train_cmd->add_option("-o,--output", train_args.model, "model file to write")->required();
  add_forest_flags(train_cmd, train_args.forest);
  add_input_flags(train_cmd, train_args.input);
  train_cmd->add_flag("--build-index", train_args.build_index, "store the leaf index for similarity queries");
  train_cmd->add_option("--importance-out", train_args.importance_out,
                        "also write importance reports to PREFIX.{overall_var,overall_prox,local_var,local_prox}.csv");
  train_cmd->add_option("--importance-method", train_args.importance_method, "overall variable importance method")
      ->check(CLI::IsMember({"permutation", "split_gain"}));
  train_cmd->add_option("--repetitions", train_args.repetitions, "donor draws per (sample, tree, feature)");
  add_threads(train_cmd);

  ModelDataArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "score rows with a trained model");
  predict_cmd->add_option("model", predict_args.model)->required();
  predict_cmd->add_option("data", predict_args.data)->required();
  predict_cmd->add_option("-o,--output", predict_args.output, "CSV report (default stdout)");
  predict_cmd->add_flag("--svmlight", predict_args.input.svmlight, "data file is SVMLight");
  add_threads(predict_cmd);

  ImportanceArgs imp_args;
  auto* imp_cmd = app.add_subcommand("importance", "overall or local importance for the training data");
  imp_cmd->add_option("model", imp_args.model)->required();
  imp_cmd->add_option("data", imp_args.data, "the training data")->required();
  imp_cmd->add_option("-o,--output", imp_args.output, "CSV report (default stdout)");
  imp_cmd->add_option("--type", imp_args.type, "report type")
      ->check(CLI::IsMember({"overall-var", "overall-prox", "local-var", "local-prox"}))
      ->capture_default_str();
  imp_cmd->add_option("--method", imp_args.method, "overall-var method")->check(CLI::IsMember({"permutation", "split_gain"}));
  imp_cmd->add_option("--row", imp_args.row, "emit a single row of a local report");
  imp_cmd->add_option("--repetitions", imp_args.repetitions, "donor draws per (sample, tree, feature)");
  imp_cmd->add_flag("--exhaustive", imp_args.exhaustive, "use every training row as a donor");
  imp_cmd->add_flag("--svmlight", imp_args.input.svmlight, "data file is SVMLight");
  add_threads(imp_cmd);

  OutlierArgs out_args;
  auto* out_cmd = app.add_subcommand("outliers", "Breiman-Cutler outlier scores for the training data");
  out_cmd->add_option("model", out_args.model)->required();
  out_cmd->add_option("data", out_args.data, "the training data")->required();
  out_cmd->add_option("-o,--output", out_args.output, "CSV report (default stdout)");
  out_cmd->add_option("--mode", out_args.mode, "exact (full matrix) or greedy (leaf index)")
      ->check(CLI::IsMember({"exact", "greedy"}))
      ->capture_default_str();
  out_cmd->add_option("--m-cap", out_args.m_cap, "greedy: classmates kept per sample")->capture_default_str();
  out_cmd->add_flag("--svmlight", out_args.input.svmlight, "data file is SVMLight");
  add_threads(out_cmd);

  PrototypeArgs proto_args;
  auto* proto_cmd = app.add_subcommand("prototypes", "per-class prototypes from proximities");
  proto_cmd->add_option("model", proto_args.model)->required();
  proto_cmd->add_option("data", proto_args.data, "the training data")->required();
  proto_cmd->add_option("-o,--output", proto_args.output, "CSV report (default stdout)");
  proto_cmd->add_option("--k", proto_args.k, "neighbors per candidate center")->capture_default_str();
  proto_cmd->add_option("--n-protos", proto_args.n_protos, "prototypes per class")->capture_default_str();
  proto_cmd->add_flag("--svmlight", proto_args.input.svmlight, "data file is SVMLight");
  add_threads(proto_cmd);

  SimilarArgs sim_args;
  auto* sim_cmd = app.add_subcommand("similar", "top-K most similar training rows for each query row");
  sim_cmd->add_option("model", sim_args.model)->required();
  sim_cmd->add_option("query", sim_args.query, "query rows (same layout as the training data)")->required();
  sim_cmd->add_option("-o,--output", sim_args.output, "CSV report (default stdout)");
  sim_cmd->add_option("--k", sim_args.k, "neighbors to return")->capture_default_str();
  sim_cmd->add_flag("--explain", sim_args.explain, "append the query's proximity importance vector");
  sim_cmd->add_option("--data", sim_args.data, "training data (donor values for --explain)");
  sim_cmd->add_flag("--build-index", sim_args.build_index, "build the leaf index if the model lacks one");
  sim_cmd->add_option("--repetitions", sim_args.repetitions, "donor draws per (tree, feature) for --explain");
  sim_cmd->add_flag("--svmlight", sim_args.input.svmlight, "query and data files are SVMLight");

  ImputeArgs impute_args;
  impute_args.forest.mode = "unsupervised";
  auto* impute_cmd = app.add_subcommand("impute", "fill missing values with forest proximities");
  impute_cmd->add_option("data", impute_args.data, "data with missing cells")->required();
  impute_cmd->add_option("schema", impute_args.schema)->required();
  impute_cmd->add_option("-o,--output", impute_args.output, "imputed CSV (default stdout)");
  impute_cmd->add_option("--trace", impute_args.trace, "JSON-lines iteration trace (default stdout)");
  impute_cmd->add_option("--impute-method", impute_args.method, "bc (Breiman-Cutler) or young (OOB leaf members)")
      ->check(CLI::IsMember({"bc", "young"}))
      ->capture_default_str();
  impute_cmd->add_option("--max-iters", impute_args.max_iters)->capture_default_str();
  impute_cmd->add_option("--tol", impute_args.tol)->capture_default_str();
  add_forest_flags(impute_cmd, impute_args.forest);
  add_input_flags(impute_cmd, impute_args.input);
  add_threads(impute_cmd);

  ValidateArgs val_args;
  auto* val_cmd = app.add_subcommand("validate-imputation", "rank imputed datasets by mean P(synthetic)");
  val_cmd->add_option("reference", val_args.reference, "complete reference CSV")->required();
  val_cmd->add_option("candidates", val_args.candidates, "candidate CSVs")->required();
  val_cmd->add_option("--schema", val_args.schema, "schema file (default: all columns continuous)");
  val_cmd->add_option("-o,--output", val_args.output, "JSON-lines report (default stdout)");
  add_forest_flags(val_cmd, val_args.forest, false);
  add_threads(val_cmd);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return exit_ok;
    }
    err << "usage error: " << e.what() << "\n" << "run 'forestfuse --help' for usage\n";
    return exit_usage_error;
  }

  try {
    if (!threads_set) threads = default_threads();
    if (*train_cmd) {
      train_args.threads = threads;
      return cmd_train(train_args, out);
    }
    if (*predict_cmd) {
      predict_args.threads = threads;
      return cmd_predict(predict_args, out);
    }
    if (*imp_cmd) {
      imp_args.threads = threads;
      return cmd_importance(imp_args, out);
    }
    if (*out_cmd) {
      out_args.threads = threads;
      return cmd_outliers(out_args, out);
    }
    if (*proto_cmd) {
      proto_args.threads = threads;
      return cmd_prototypes(proto_args, out);
    }
    if (*sim_cmd) return cmd_similar(sim_args, out);
    if (*impute_cmd) {
      impute_args.threads = threads;
      return cmd_impute(impute_args, out);
    }
    if (*val_cmd) {
      val_args.threads = threads;
      return cmd_validate(val_args, out);
    }
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_data_error;
  }
  return exit_usage_error;
}

}  // namespace forestfuse::cli
