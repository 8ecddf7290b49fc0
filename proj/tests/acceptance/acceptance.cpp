// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset, e.g. `acceptance 2 7 10`.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtm/artifact.hpp"
#include "mtm/causal.hpp"
#include "mtm/errors.hpp"
#include "mtm/evaluation.hpp"
#include "mtm/gradcheck.hpp"
#include "mtm/inference.hpp"
#include "mtm/numerics.hpp"
#include "oracles.hpp"

using namespace mtm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Corpus subset(const Corpus& c, std::size_t begin, std::size_t end) {
  Corpus s;
  s.vocab = c.vocab;
  s.num_envs = c.num_envs;
  s.env_names = c.env_names;
  s.docs.assign(c.docs.begin() + begin, c.docs.begin() + end);
  return s;
}

Corpus only_env(const Corpus& c, std::size_t env) {
  Corpus s = subset(c, 0, 0);
  for (const auto& d : c.docs) {
    if (d.env == env) s.docs.push_back(d);
  }
  return s;
}

// 1. Gradient check for every prior variant and rate form.
Outcome gradients() {
  double worst = 0.0;
  for (auto v : {PriorVariant::normal, PriorVariant::ard, PriorVariant::horseshoe}) {
    for (auto f : {RateForm::log_additive, RateForm::exp_sum}) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        GradCheckSpec spec;
        spec.variant = v;
        spec.rate_form = f;
        spec.seed = seed;
        worst = std::max(worst, check_elbo_gradients(spec).max_rel_error);
      }
    }
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over 18 checks", worst)};
}

// 2. Closed-form Student-t against quadrature of the Gamma precision mixture.
Outcome ard_marginal() {
  RngStream rng(11);
  std::vector<std::array<double, 3>> triples{{3.7, 0.34, 0.1}, {3.7, 0.34, 2.5}};
  while (triples.size() < 20) {
    triples.push_back({0.5 + 9.5 * rng.uniform(), 0.05 + 5.0 * rng.uniform(), -3.0 + 6.0 * rng.uniform()});
  }
  double worst = 0.0;
  for (const auto& [a, b, g] : triples) {
    const double closed = student_t_logpdf(g, 2 * a, std::sqrt(b / a));
    worst = std::max(worst, std::fabs(closed - oracle::gamma_mixed_normal_logpdf(g, a, b)));
  }
  return {worst <= 1e-6, fmt("max abs error %.2e over %zu triples", worst, triples.size())};
}

// 3. Smoothed ELBO trace and held-out perplexity on the default synthetic setup.
Outcome optimization() {
  SyntheticSpec spec;  // D=500 training docs, V=60, K=4, E=2, sparsity 0.9
  spec.num_docs = 600;
  const Corpus all = generate_synthetic(spec).corpus;
  const Corpus train_docs = subset(all, 0, 500), test = subset(all, 500, 600);
  ModelConfig config;
  config.num_topics = 4;
  config.prior.variant = PriorVariant::ard;
  config.batch_size = 500;
  config.epochs = 150;
  const TrainedModel m = train(train_docs, config);

  const auto& log = m.training_log;
  std::vector<double> smooth;
  for (std::size_t i = 4; i < log.size(); ++i) smooth.push_back((log[i - 4] + log[i - 3] + log[i - 2] + log[i - 1] + log[i]) / 5);
  // Smoothed value i covers epochs i..i+4; check every value ending in the final 80%.
  const std::size_t first_epoch = log.size() / 5;
  std::size_t drops = 0;
  for (std::size_t i = first_epoch >= 4 ? first_epoch - 4 : 0; i + 1 < smooth.size(); ++i) drops += smooth[i + 1] < smooth[i];
  const double ppl = perplexity(m, test, PerplexityMode::beta_only(), RngStream(0)).perplexity;
  return {drops == 0 && ppl < 60.0, fmt("smoothed decreases %zu, held-out perplexity %.2f (V=60)", drops, ppl)};
}

// 4. ARD deviations are sparser than normal-prior deviations.
Outcome sparsity_ordering() {
  std::string detail;
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const Corpus c = generate_synthetic(spec).corpus;
    double frac[2];
    int i = 0;
    for (auto v : {PriorVariant::ard, PriorVariant::normal}) {
      ModelConfig config;
      config.num_topics = 4;
      config.prior.variant = v;
      config.batch_size = 64;
      config.lr = 0.003;
      config.epochs = 3000;
      config.seed = seed;
      const auto s = sparsity(train(c, config));
      frac[i++] = (s[0] + s[1]) / 2;
    }
    ok += frac[0] > frac[1] + 0.2;
    detail += fmt("seed %llu ard %.3f normal %.3f; ", static_cast<unsigned long long>(seed), frac[0], frac[1]);
  }
  return {ok == 3, detail + fmt("%d/3 seeds", ok)};
}

double pooled(const std::vector<EvalReport>& parts) {
  double ll = 0.0;
  std::size_t n = 0;
  for (const auto& r : parts) {
    ll += r.log_likelihood;
    n += r.token_count;
  }
  return std::exp(-ll / static_cast<double>(n));
}

// 5. Matched deviations help, mismatched ones hurt.
Outcome gamma_degradation() {
  std::string detail;
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SyntheticSpec spec;
    spec.num_docs = 1000;
    spec.seed = seed;
    const Corpus all = generate_synthetic(spec).corpus;
    const Corpus test = subset(all, 800, 1000);
    ModelConfig config;
    config.num_topics = 4;
    config.seed = seed;
    const TrainedModel m = train(subset(all, 0, 800), config);
    const RngStream rng(seed, 1);
    const Corpus by_env[2] = {only_env(test, 0), only_env(test, 1)};
    const double matched = pooled({perplexity(m, by_env[0], PerplexityMode::gamma_of(0), rng),
                                   perplexity(m, by_env[1], PerplexityMode::gamma_of(1), rng)});
    const double mismatched = pooled({perplexity(m, by_env[0], PerplexityMode::gamma_of(1), rng),
                                      perplexity(m, by_env[1], PerplexityMode::gamma_of(0), rng)});
    const double beta = perplexity(m, test, PerplexityMode::beta_only(), rng).perplexity;
    ok += matched < beta && beta < mismatched && mismatched > 1.02 * matched;
    detail += fmt("seed %llu %.2f < %.2f < %.2f; ", static_cast<unsigned long long>(seed), matched, beta, mismatched);
  }
  return {ok == 3, detail + fmt("%d/3 seeds", ok)};
}

// 6. Beta learned with deviations transfers better to an unseen environment.
Outcome robust_beta() {
  std::string detail;
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SyntheticSpec spec;
    spec.num_docs = 1500;
    spec.num_envs = 3;
    spec.seed = seed;
    const Corpus all = generate_synthetic(spec).corpus;
    Corpus train_docs = subset(all, 0, 0);
    train_docs.num_envs = 2;
    train_docs.env_names.resize(2);
    Corpus test = train_docs;
    for (auto d : all.docs) {
      if (d.env < 2) {
        train_docs.docs.push_back(d);
      } else {
        d.env = 0;  // beta_only ignores the label
        test.docs.push_back(d);
      }
    }
    double ppl[2];
    int i = 0;
    for (auto v : {PriorVariant::ard, PriorVariant::vtm}) {
      ModelConfig config;
      config.num_topics = 4;
      config.prior.variant = v;
      config.seed = seed;
      ppl[i++] = perplexity(train(train_docs, config), test, PerplexityMode::beta_only(), RngStream(seed, 2)).perplexity;
    }
    ok += ppl[0] <= ppl[1];
    detail += fmt("seed %llu mtm %.2f vtm %.2f; ", static_cast<unsigned long long>(seed), ppl[0], ppl[1]);
  }
  return {ok >= 2, detail + fmt("%d/3 seeds", ok)};
}

// 7. QR least squares against extended-precision normal equations.
Outcome ols_oracle() {
  RngStream rng(7);
  double worst = 0.0;
  for (int sys = 0; sys < 100; ++sys) {
    const std::size_t n = 50, p = 3;
    Matrix X(n, p);
    std::vector<std::vector<double>> rows(n, std::vector<double>(p));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) rows[i][j] = X(i, j) = j == 0 ? 1.0 : rng.normal();
      y[i] = 1.0 + 2.0 * rows[i][1] - rows[i][2] + rng.normal();
    }
    const auto fit = least_squares(X, y);
    const auto ref = oracle::normal_equations(rows, y);
    for (std::size_t j = 0; j < p; ++j) worst = std::max(worst, std::fabs(fit.coef[j] - ref[j]));
  }
  Matrix X(2, 2);
  X(0, 0) = X(1, 0) = X(1, 1) = 1;
  const auto exact = least_squares(X, std::vector<double>{2, 5});
  const bool exact_ok = std::fabs(exact.coef[0] - 2) < 1e-12 && std::fabs(exact.coef[1] - 3) < 1e-12;
  bool rank_ok = false;
  try {
    least_squares(Matrix(5, 2, 1.0), std::vector<double>{1, 2, 3, 4, 5});
  } catch (const RankDeficient&) {
    rank_ok = true;
  }
  return {worst <= 1e-8 && exact_ok && rank_ok,
          fmt("max coef error %.2e; exact fit %s; rank deficiency %s", worst, exact_ok ? "ok" : "wrong",
              rank_ok ? "raised" : "missed")};
}

// 8. Planted effect recovered through the MTM pipeline; calibrated null.
Outcome causal_recovery() {
  int covered = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RecoverySpec spec;
    spec.data.seed = seed;
    spec.experiment.samples_per_list = 300;
    spec.experiment.extra_samples = 300;
    spec.experiment.seed = seed;
    spec.model.seed = seed;
    const RecoveryResult r = end_to_end_recovery(spec);
    const Coefficient& t = r.mtm->treatment();
    covered += std::fabs(t.estimate - 0.2) <= 2 * t.std_err;
  }
  int rejected = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RecoverySpec spec;
    spec.data.seed = 1000 + seed;
    spec.experiment.bump = 0.0;
    spec.experiment.samples_per_list = 300;
    spec.experiment.extra_samples = 300;
    spec.experiment.seed = 1000 + seed;
    spec.train_models = false;
    rejected += end_to_end_recovery(spec).oracle.treatment().p_value < 0.05;
  }
  const double rate = rejected / 200.0;
  return {covered >= 18 && rate >= 0.02 && rate <= 0.09,
          fmt("MTM covers 0.2 in %d/20 seeds; null rejection rate %.3f", covered, rate)};
}

// 9. Bit-identical retraining, exact artifact and corpus round trips.
Outcome determinism() {
  SyntheticSpec spec;
  spec.num_docs = 200;
  const Corpus c = generate_synthetic(spec).corpus;
  ModelConfig config;
  config.num_topics = 4;
  config.epochs = 20;
  auto bytes = [&] {
    std::ostringstream out;
    write_model(train(c, config), out);
    return out.str();
  };
  const std::string a = bytes(), b = bytes();

  const auto path = std::filesystem::temp_directory_path() / ("mtm_acceptance_" + std::to_string(std::rand()));
  std::filesystem::create_directories(path);
  std::istringstream in(a);
  const TrainedModel m = read_model(in);
  save_model(m, path / "m.mtm");
  const bool model_ok = load_model(path / "m.mtm") == m;
  {
    std::ofstream f(path / "c.jsonl");
    write_corpus(c, f);
  }
  const Corpus back = load_corpus(path / "c.jsonl", c.vocab, c.env_names);
  const bool corpus_ok = back.docs == c.docs && back.env_names == c.env_names;
  std::filesystem::remove_all(path);
  return {a == b && model_ok && corpus_ok, fmt("retrain identical %s; model round trip %s; corpus round trip %s",
                                               a == b ? "yes" : "no", model_ok ? "exact" : "differs",
                                               corpus_ok ? "exact" : "differs")};
}

TrainedModel blank_model(std::size_t V, std::size_t K, std::size_t E, std::uint64_t seed) {
  TrainedModel m;
  m.config.num_topics = K;
  m.vocab = synthetic_vocabulary(V);
  for (std::size_t e = 0; e < E; ++e) m.env_names.push_back("env" + std::to_string(e));
  m.beta_hat = Matrix(K, V);
  m.gamma_hat.assign(E, Matrix(K, V));
  m.encoder = Encoder(V, K, 8, 1);
  RngStream rng(seed, 99);
  m.encoder.initialize(rng);
  return m;
}

Document bag(std::vector<TermId> terms, std::size_t env = 0) {
  std::sort(terms.begin(), terms.end());
  Document d;
  for (TermId t : terms) {
    if (!d.counts.empty() && d.counts.back().term == t) {
      ++d.counts.back().count;
    } else {
      d.counts.push_back({t, 1});
    }
  }
  d.env = env;
  return d;
}

Corpus corpus_of(const Vocabulary& vocab, std::size_t E, std::vector<Document> docs) {
  Corpus c;
  c.vocab = vocab;
  c.num_envs = E;
  for (std::size_t e = 0; e < E; ++e) c.env_names.push_back("env" + std::to_string(e));
  c.docs = std::move(docs);
  return c;
}

// 10. Metric fixtures.
Outcome metrics() {
  const std::size_t V = 60;
  SyntheticSpec spec;
  const Corpus test = generate_synthetic(spec).corpus;
  const double uniform = perplexity(blank_model(V, 4, 2, 0), test, PerplexityMode::beta_only(), RngStream(0)).perplexity;
  const bool uniform_ok = std::fabs(uniform / V - 1.0) < 1e-13;

  TrainedModel pair = blank_model(4, 1, 1, 0);
  pair.beta_hat(0, 0) = 2.0;
  pair.beta_hat(0, 1) = 1.0;
  const Corpus indep = corpus_of(pair.vocab, 1, {bag({0, 1}), bag({0, 2}), bag({1, 2}), bag({2})});
  const double n = npmi(pair, indep, 2);

  // Planted separation: env 0 deviations live on words 0-9, env 1 on 10-19,
  // and each environment's documents only use its own deviation words.
  TrainedModel sep = blank_model(40, 2, 2, 7);
  for (std::size_t k = 0; k < 2; ++k) {
    for (TermId v = 0; v < 10; ++v) {
      sep.gamma_hat[0](k, v) = 2.0 + 0.01 * v;
      sep.gamma_hat[1](k, 10 + v) = 2.0 + 0.01 * v;
    }
  }
  RngStream rng(3);
  std::vector<Document> docs;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t env = i % 2;
    std::vector<TermId> terms;
    for (int t = 0; t < 30; ++t) {
      terms.push_back(rng.bernoulli(0.5) ? static_cast<TermId>(10 * env + rng.uniform_index(10))
                                         : static_cast<TermId>(20 + rng.uniform_index(20)));
    }
    docs.push_back(bag(terms, env));
  }
  const double planted = count_opposite(sep, corpus_of(sep.vocab, 2, docs), 10).median;

  // Null: random deviations, environments drawn from one distribution.
  std::vector<double> medians;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TrainedModel m = blank_model(V, 3, 2, seed);
    RngStream g(seed, 5);
    for (auto& gm : m.gamma_hat) {
      for (double& x : gm.data()) x = g.normal();
    }
    SyntheticSpec null_spec;
    null_spec.num_docs = 400;
    null_spec.gamma_sparsity = 1.0;
    null_spec.seed = 100 + seed;
    medians.push_back(count_opposite(m, generate_synthetic(null_spec).corpus, 10).median);
  }
  const auto [lo, hi] = std::minmax_element(medians.begin(), medians.end());
  const bool null_ok = *lo >= 3.0 && *hi <= 7.0;
  return {uniform_ok && std::fabs(n) < 1e-10 && planted == 0.0 && null_ok,
          fmt("uniform perplexity %.15g (V=60); npmi at independence %.1e; planted count_opposite %g; null medians in [%g, %g]",
              uniform, n, planted, *lo, *hi)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"ARD marginal oracle", ard_marginal},
      {"optimization sanity", optimization},
      {"sparsity ordering", sparsity_ordering},
      {"cross-environment gamma degradation", gamma_degradation},
      {"robust beta on a held-out environment", robust_beta},
      {"OLS oracle", ols_oracle},
      {"causal recovery", causal_recovery},
      {"determinism and serialization", determinism},
      {"metric fixtures", metrics},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
