#include "mtm/cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "mtm/artifact.hpp"
#include "mtm/causal.hpp"
#include "mtm/errors.hpp"
#include "mtm/evaluation.hpp"
#include "mtm/gradcheck.hpp"

namespace mtm::cli {

using nlohmann::json;

namespace {

const std::vector<std::pair<std::string, std::string>> kCommands = {
    {"build-vocab", "build a vocabulary from a JSONL corpus"},
    {"train", "fit a model and write an artifact"},
    {"eval", "perplexity, NPMI, sparsity and count_opposite as JSON lines"},
    {"topics", "print top words per topic and environment"},
    {"causal", "treatment-effect experiments (semi_synthetic, recovery, ols)"},
    {"simulate", "generate a synthetic corpus with its ground truth"},
    {"grad-check", "compare analytic and finite-difference gradients"}};

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (char& c : f) {
    if (c == '_') c = '-';
  }
  return "--" + f;
}

// Sends data to the --out path when given, else to `out`.
class Sink {
 public:
  Sink(const Settings& s, std::ostream& fallback) {
    if (s.has("out") && !s.string("out").empty()) {
      file_ = std::make_unique<std::ofstream>(s.string("out"), std::ios::binary | std::ios::trunc);
      if (!*file_) throw IoError("cannot open '" + s.string("out") + "' for writing");
    }
    stream_ = file_ ? file_.get() : &fallback;
  }
  std::ostream& stream() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json coefficients_json(const CausalResult& r) {
  json coefs = json::array();
  for (const auto& c : r.coefs) {
    coefs.push_back({{"name", c.name},
                     {"coef", c.estimate},
                     {"std_err", c.std_err},
                     {"t_stat", number_or_null(c.t_stat)},
                     {"p_value", c.p_value}});
  }
  return {{"coefs", coefs}, {"n", r.n}, {"treated_count", r.treated_count}, {"rss", r.rss}};
}

Corpus load_test_corpus(const Settings& s, const TrainedModel& model) {
  const std::string path = s.required_path("test");
  if (s.has("vocab")) return load_corpus(path, read_vocabulary(s.string("vocab")), model.env_names);
  return load_corpus(path, model.vocab, model.env_names);
}

std::size_t env_index(const TrainedModel& model, const std::string& name) {
  for (std::size_t e = 0; e < model.env_names.size(); ++e) {
    if (model.env_names[e] == name) return e;
  }
  std::string valid;
  for (const auto& n : model.env_names) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown environment '" + name + "'; valid names: " + valid);
}

}  // namespace

int cmd_build_vocab(const Settings& s, std::ostream& out, std::ostream& err) {
  const VocabSettings v = vocab_settings(s);
  const std::string path = s.required_path("corpus");
  TokenSet stop;
  if (s.has("stopwords")) stop = read_stopwords(s.string("stopwords"));
  const auto records = read_records(path);
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(records.size());
  for (const auto& r : records) tokens.push_back(r.tokens);
  const Vocabulary vocab = build_vocabulary(tokens, v.min_df, v.max_df, stop);
  Sink sink(s, out);
  write_vocabulary(vocab, sink.stream());
  err << "vocabulary: " << vocab.size() << " terms from " << records.size() << " documents\n";
  return 0;
}

int cmd_train(const Settings& s, std::ostream& out, std::ostream& err) {
  const ModelConfig config = model_config(s);
  const std::string corpus_path = s.required_path("corpus");
  const std::string out_path = s.required_path("out");
  const Corpus corpus = s.has("vocab") ? load_corpus(corpus_path, read_vocabulary(s.string("vocab")))
                                       : load_corpus(corpus_path);
  err << "training " << to_string(config.prior.variant) << " with K=" << config.num_topics << " on "
      << corpus.size() << " documents, V=" << corpus.vocab.size() << ", E=" << corpus.num_envs << "\n";
  const TrainedModel model = train(corpus, config, {.log = &err});
  save_model(model, out_path);
  json summary = {{"artifact", out_path}, {"final_elbo", model.training_log.empty() ? 0.0 : model.training_log.back()}};
  if (config.prior.variant == PriorVariant::ard) {
    summary["ard_a"] = model.config.prior.ard_a;
    summary["ard_b"] = model.config.prior.ard_b;
  }
  out << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const Settings& s, std::ostream& out, std::ostream& err) {
  const std::string protocol_name = s.string("protocol", "doc_completion");
  if (protocol_name != "doc_completion" && protocol_name != "full_doc") {
    throw ConfigError("protocol must be doc_completion or full_doc");
  }
  const double ratio = s.number("ratio", 0.5);
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("ratio must lie in (0, 1)");
  const std::size_t top_n = s.count("top_n", 10);
  const double threshold = s.number("sparsity_threshold", 0.01);
  const TrainedModel model = load_model(s.required_path("model"));
  const Corpus test = load_test_corpus(s, model);
  const RngStream rng(s.count("seed", 0), 0xE7A1);

  std::vector<std::string> modes = s.strings("modes");
  if (modes.empty()) {
    modes = {"beta_only", "npmi", "top_words"};
    if (model.has_gamma()) {
      modes.insert(modes.begin() + 1, "with_gamma");
      modes.push_back("sparsity");
      if (model.num_envs() == 2) modes.push_back("count_opposite");
    }
  }

  Sink sink(s, out);
  std::ostream& os = sink.stream();
  const auto protocol =
      protocol_name == "full_doc" ? PerplexityProtocol::full_doc : PerplexityProtocol::doc_completion;
  auto emit_perplexity = [&](const PerplexityMode& mode) {
    const EvalReport r = perplexity(model, test, mode, rng);
    json per_env = json::object();
    for (const auto& [e, p] : r.per_env_breakdown) {
      per_env[e < test.env_names.size() ? test.env_names[e] : std::to_string(e)] = p;
    }
    os << json{{"metric", "perplexity"},
               {"mode", mode.with_gamma ? "with_gamma" : "beta_only"},
               {"gamma_env", mode.with_gamma ? json(model.env_names[mode.env]) : json(nullptr)},
               {"protocol", protocol_name},
               {"optimistic", protocol == PerplexityProtocol::full_doc},
               {"perplexity", r.perplexity},
               {"token_count", r.token_count},
               {"skipped_docs", r.skipped_docs},
               {"per_env", per_env}}
              .dump()
       << "\n";
    if (r.skipped_docs > 0) err << "warning: skipped " << r.skipped_docs << " documents that could not be scored\n";
  };

  for (const auto& m : modes) {
    if (m == "beta_only") {
      PerplexityMode mode = PerplexityMode::beta_only(protocol);
      mode.ratio = ratio;
      emit_perplexity(mode);
    } else if (m == "with_gamma" || m.rfind("with_gamma:", 0) == 0) {
      if (!model.has_gamma()) throw NoGammaVariant("with_gamma requested for a model without deviations");
      std::vector<std::size_t> envs;
      if (m == "with_gamma") {
        for (std::size_t e = 0; e < model.num_envs(); ++e) envs.push_back(e);
      } else {
        envs.push_back(env_index(model, m.substr(11)));
      }
      for (std::size_t e : envs) {
        PerplexityMode mode = PerplexityMode::gamma_of(e, protocol);
        mode.ratio = ratio;
        emit_perplexity(mode);
      }
    } else if (m == "npmi") {
      const auto per_topic = npmi_per_topic(model, test, top_n);
      double mean = 0.0;
      for (double v : per_topic) mean += v;
      if (!per_topic.empty()) mean /= static_cast<double>(per_topic.size());
      os << json{{"metric", "npmi"}, {"top_n", top_n}, {"value", mean}, {"per_topic", per_topic}}.dump() << "\n";
    } else if (m == "sparsity") {
      const auto frac = sparsity(model, threshold);
      json per_env = json::object();
      for (std::size_t e = 0; e < frac.size(); ++e) per_env[model.env_names[e]] = frac[e];
      os << json{{"metric", "sparsity"}, {"threshold", threshold}, {"per_env", per_env}}.dump() << "\n";
    } else if (m == "count_opposite") {
      const auto r = count_opposite(model, test, top_n);
      os << json{{"metric", "count_opposite"}, {"top_n", top_n}, {"median", number_or_null(r.median)}, {"counts", r.counts}}
                .dump()
         << "\n";
    } else if (m == "top_words") {
      for (std::size_t k = 0; k < model.num_topics(); ++k) {
        os << json{{"metric", "top_words"}, {"topic", k}, {"source", "beta"},
                   {"words", top_words(model, k, TopicSource::beta(), top_n)}}
                  .dump()
           << "\n";
        for (std::size_t e = 0; e < model.gamma_hat.size(); ++e) {
          os << json{{"metric", "top_words"}, {"topic", k}, {"source", "gamma"}, {"env", model.env_names[e]},
                     {"words", top_words(model, k, TopicSource::gamma(e), top_n)}}
                    .dump()
             << "\n";
        }
      }
    } else {
      throw ConfigError("unknown eval mode '" + m + "'");
    }
  }
  return 0;
}

int cmd_topics(const Settings& s, std::ostream& out, std::ostream&) {
  const std::size_t n = s.count("top_n", 10);
  const TrainedModel model = load_model(s.required_path("model"));
  Sink sink(s, out);
  std::ostream& os = sink.stream();
  auto join = [](const std::vector<std::string>& words) {
    std::string line;
    for (const auto& w : words) line += (line.empty() ? "" : " ") + w;
    return line;
  };
  for (std::size_t k = 0; k < model.num_topics(); ++k) {
    os << "topic " << k << ": " << join(top_words(model, k, TopicSource::beta(), n)) << "\n";
    for (std::size_t e = 0; e < model.gamma_hat.size(); ++e) {
      os << "  " << model.env_names[e] << ": " << join(top_words(model, k, TopicSource::gamma(e), n)) << "\n";
    }
  }
  return 0;
}

namespace {

int causal_ols(const Settings& s, std::ostream& out, json& record) {
  std::ifstream in(s.required_path("data"));
  if (!in) throw IoError("cannot open '" + s.string("data") + "'");
  std::vector<double> y;
  std::vector<std::uint8_t> t;
  std::vector<std::string> env;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json row = json::parse(line);
      y.push_back(row.at("y").get<double>());
      t.push_back(row.at("t").get<int>() != 0 ? 1 : 0);
      env.push_back(row.contains("env") ? row.at("env").get<std::string>() : "");
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  std::vector<std::string> levels;
  for (const auto& e : env) {
    if (std::find(levels.begin(), levels.end(), e) == levels.end()) levels.push_back(e);
  }
  Covariates cov;
  cov.X = Matrix(y.size(), levels.size() > 1 ? levels.size() - 1 : 0);
  for (std::size_t j = 1; j < levels.size(); ++j) {
    cov.names.push_back("env:" + levels[j]);
    for (std::size_t i = 0; i < y.size(); ++i) cov.X(i, j - 1) = env[i] == levels[j] ? 1.0 : 0.0;
  }
  const CausalResult r = estimate_ate(y, t, cov);
  out << regression_table(r, "OLS: y ~ T" + std::string(levels.size() > 1 ? " + env" : ""));
  record = {{"mode", "ols"}, {"result", coefficients_json(r)}};
  return 0;
}

int causal_semi_synthetic(const Settings& s, std::ostream& out, json& record) {
  const ExperimentSpec spec = experiment_spec(s);
  if (spec.keyword_lists.empty()) throw ConfigError("semi_synthetic needs keyword lists (keywords or keyword_lists)");
  const std::size_t top_n = s.count("top_n", 10);
  const TrainedModel model = load_model(s.required_path("model"));
  const Corpus corpus = load_corpus(s.required_path("corpus"), model.vocab, model.env_names);
  const SemiSyntheticSample sample = semi_synthetic_outcomes(corpus, spec);
  const Matrix theta = infer_theta(model, corpus.docs);
  const Covariates cov = environment_dummies(corpus, sample.docs);
  record = {{"mode", "semi_synthetic"}, {"n", sample.docs.size()}, {"lists", json::array()}};
  for (const auto& list : spec.keyword_lists) {
    const TopicMatch match = match_topic(model, list.tokens, top_n);
    const auto t_all = assign_treatment(theta, match.tied);
    std::vector<std::uint8_t> t;
    for (std::size_t d : sample.docs) t.push_back(t_all[d]);
    const CausalResult r = estimate_ate(sample.y, t, cov);
    std::string topics;
    for (std::size_t k : match.tied) topics += (topics.empty() ? "" : "+") + std::to_string(k);
    out << regression_table(r, list.name + ": topic " + topics + " (keyword overlap " +
                                   std::to_string(match.overlap) + ")")
        << "\n";
    record["lists"].push_back(
        {{"name", list.name}, {"topics", match.tied}, {"overlap", match.overlap}, {"result", coefficients_json(r)}});
  }
  return 0;
}

int causal_recovery(const Settings& s, std::ostream& out, std::ostream& err, json& record) {
  RecoverySpec spec;
  spec.data = planted_spec(s);
  spec.experiment.base_p = s.number("base_p", spec.experiment.base_p);
  spec.experiment.bump = s.number("bump", spec.experiment.bump);
  spec.experiment.min_hits = s.count("min_hits", spec.experiment.min_hits);
  spec.experiment.samples_per_list = s.count("samples_per_list", 300);
  spec.experiment.extra_samples = s.count("extra_samples", 300);
  spec.experiment.seed = s.count("seed", 0);
  spec.experiment.validate();
  spec.model.epochs = s.count("epochs", spec.model.epochs);
  spec.model.batch_size = s.count("batch_size", spec.model.batch_size);
  spec.model.lr = s.number("lr", spec.model.lr);
  spec.model.seed = s.count("seed", 0);
  spec.model.num_topics = spec.data.num_topics;
  spec.model.validate();
  err << "recovery: planted effect " << spec.experiment.bump << ", training MTM and VTM on "
      << spec.data.num_docs << " synthetic documents\n";
  const RecoveryResult r = end_to_end_recovery(spec);
  out << "true effect: " << r.true_effect << "\n\n";
  out << regression_table(r.oracle, "oracle proportions") << "\n";
  out << regression_table(*r.mtm, "MTM") << "\n";
  out << regression_table(*r.vtm, "VTM");
  record = {{"mode", "recovery"},
            {"true_effect", r.true_effect},
            {"oracle", coefficients_json(r.oracle)},
            {"mtm", coefficients_json(*r.mtm)},
            {"vtm", coefficients_json(*r.vtm)},
            {"mtm_topics", r.mtm_match->tied},
            {"vtm_topics", r.vtm_match->tied}};
  return 0;
}

}  // namespace

int cmd_causal(const Settings& s, std::ostream& out, std::ostream& err) {
  const std::string mode = s.string("mode", "semi_synthetic");
  json record;
  int rc = 0;
  if (mode == "ols") {
    rc = causal_ols(s, out, record);
  } else if (mode == "semi_synthetic") {
    rc = causal_semi_synthetic(s, out, record);
  } else if (mode == "recovery") {
    rc = causal_recovery(s, out, err, record);
  } else {
    throw ConfigError("causal mode must be semi_synthetic, recovery or ols");
  }
  if (s.has("out")) {
    std::ofstream f(s.string("out"), std::ios::trunc);
    if (!f) throw IoError("cannot open '" + s.string("out") + "' for writing");
    f << record.dump() << "\n";
  } else {
    out << record.dump() << "\n";
  }
  return rc;
}

int cmd_simulate(const Settings& s, std::ostream& out, std::ostream& err) {
  const SyntheticSpec spec = synthetic_spec(s);
  const std::filesystem::path dir = s.required_path("out");
  std::filesystem::create_directories(dir);
  const SyntheticData data = generate_synthetic(spec);
  {
    std::ofstream f(dir / "corpus.jsonl", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "corpus.jsonl").string());
    write_corpus(data.corpus, f);
  }
  {
    std::ofstream f(dir / "vocab.txt", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "vocab.txt").string());
    write_vocabulary(data.corpus.vocab, f);
  }
  save_truth({spec, data.truth, data.corpus.env_names}, dir / "truth.mtm");
  out << json{{"corpus", (dir / "corpus.jsonl").string()},
              {"vocab", (dir / "vocab.txt").string()},
              {"truth", (dir / "truth.mtm").string()},
              {"documents", data.corpus.size()}}
             .dump()
      << "\n";
  err << "simulated " << data.corpus.size() << " documents\n";
  return 0;
}

int cmd_grad_check(const Settings& s, std::ostream& out, std::ostream&) {
  GradCheckSpec spec;
  spec.variant = parse_prior_variant(s.string("prior", "ard"));
  spec.rate_form = parse_rate_form(s.string("rate_form", "log_additive"));
  spec.seed = s.count("seed", 0);
  spec.num_docs = s.count("num_docs", spec.num_docs);
  spec.vocab_size = s.count("vocab_size", spec.vocab_size);
  spec.num_topics = s.count("num_topics", spec.num_topics);
  spec.num_envs = s.count("num_envs", spec.num_envs);
  const double tol = s.number("tolerance", 1e-4);
  if (spec.num_docs < 2 || spec.vocab_size < 1 || spec.num_topics < 1 || spec.num_envs < 1) {
    throw ConfigError("grad-check needs num_docs >= 2 and positive sizes");
  }
  const GradCheckReport r = check_elbo_gradients(spec);
  json blocks = json::array();
  for (const auto& b : r.blocks) blocks.push_back({{"name", b.name}, {"size", b.size}, {"max_rel_error", b.max_rel_error}});
  const bool pass = r.max_rel_error <= tol;
  out << json{{"prior", to_string(spec.variant)},
              {"rate_form", to_string(spec.rate_form)},
              {"coordinates", r.coordinates},
              {"max_rel_error", r.max_rel_error},
              {"tolerance", tol},
              {"pass", pass},
              {"blocks", blocks}}
             .dump()
      << "\n";
  return pass ? 0 : 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-environment topic models"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> global_raw;
  app.add_option("--config", config_path, "flat JSON settings file; flags override its keys");
  for (const auto& f : global_fields()) app.add_option(flag_name(f.key), global_raw[f.key], f.help);

  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, description] : kCommands) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->fallthrough();
    for (const auto& f : fields_for(name)) sub->add_option(flag_name(f.key), raw[name][f.key], f.help);
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }
  try {
    Settings s = config_path.empty() ? Settings() : Settings::from_file(config_path);
    for (const auto& f : global_fields()) {
      if (app.count(flag_name(f.key)) > 0) s.set_from_string(f, global_raw[f.key]);
    }
    for (const auto& f : fields_for(command)) {
      if (subs[command]->count(flag_name(f.key)) > 0) s.set_from_string(f, raw[command][f.key]);
    }
    s.check(command);
    if (command == "build-vocab") return cmd_build_vocab(s, out, err);
    if (command == "train") return cmd_train(s, out, err);
    if (command == "eval") return cmd_eval(s, out, err);
    if (command == "topics") return cmd_topics(s, out, err);
    if (command == "causal") return cmd_causal(s, out, err);
    if (command == "simulate") return cmd_simulate(s, out, err);
    if (command == "grad-check") return cmd_grad_check(s, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace mtm::cli
