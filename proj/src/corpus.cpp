#include "mtm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "mtm/errors.hpp"

namespace mtm {

using json = nlohmann::json;

Vocabulary::Vocabulary(std::vector<std::string> terms) : terms_(std::move(terms)) {
  index_.reserve(terms_.size());
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    if (!index_.emplace(terms_[i], static_cast<TermId>(i)).second) {
      throw DomainError("vocabulary: duplicate term '" + terms_[i] + "'");
    }
  }
}

std::optional<TermId> Vocabulary::id(const std::string& term) const {
  auto it = index_.find(term);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Document::total() const noexcept {
  std::size_t n = 0;
  for (const auto& tc : counts) n += tc.count;
  return n;
}

Vocabulary build_vocabulary(std::span<const std::vector<std::string>> token_lists, double min_df,
                            double max_df, const TokenSet& stopwords) {
  if (!(min_df >= 0.0 && min_df < max_df && max_df <= 1.0)) {
    throw ConfigError("build_vocabulary: require 0 <= min_df < max_df <= 1");
  }
  if (token_lists.empty()) throw EmptyVocabulary("build_vocabulary: no documents");

  std::map<std::string, std::size_t> df;
  for (const auto& tokens : token_lists) {
    std::vector<std::string> distinct(tokens.begin(), tokens.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (auto& t : distinct) ++df[t];
  }

  const double D = static_cast<double>(token_lists.size());
  // Guard against representation error such as 0.3 * 10 = 3.0000000000000004.
  const auto lo = static_cast<std::size_t>(std::ceil(min_df * D - 1e-9));
  const auto hi = static_cast<std::size_t>(std::floor(max_df * D + 1e-9));

  std::vector<std::string> terms;
  for (const auto& [term, count] : df) {  // std::map iterates in sorted order
    if (count < lo || count > hi) continue;
    if (stopwords.contains(term)) continue;
    terms.push_back(term);
  }
  if (terms.empty()) throw EmptyVocabulary("build_vocabulary: no term survives the df filter");
  return Vocabulary(std::move(terms));
}

Document vectorize(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t env) {
  std::map<TermId, std::uint32_t> counts;
  for (const auto& tok : tokens) {
    if (auto id = vocab.id(tok)) ++counts[*id];
  }
  Document doc;
  doc.env = env;
  doc.counts.reserve(counts.size());
  for (const auto& [id, c] : counts) doc.counts.push_back({id, c});
  return doc;
}

std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u >= 0x80 || std::isalnum(u)) {
      current.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<RawRecord> parse_records(std::istream& in) {
  std::vector<RawRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(lineno, "record is not a JSON object");
    RawRecord rec;
    try {
      rec.id = obj.at("id").get<std::string>();
      rec.env = obj.at("env").get<std::string>();
      if (obj.contains("tokens")) {
        rec.tokens = obj.at("tokens").get<std::vector<std::string>>();
      } else if (obj.contains("text")) {
        rec.tokens = tokenize_text(obj.at("text").get<std::string>());
      } else {
        throw ParseError(lineno, "record has neither 'tokens' nor 'text'");
      }
    } catch (const json::exception& e) {
      throw ParseError(lineno, std::string("bad record field: ") + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<RawRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  return parse_records(in);
}

Corpus build_corpus(std::span<const RawRecord> records, Vocabulary vocab,
                    std::span<const std::string> env_order) {
  Corpus corpus;
  corpus.vocab = std::move(vocab);
  std::unordered_map<std::string, std::size_t> env_index;
  for (const auto& name : env_order) {
    if (env_index.emplace(name, corpus.env_names.size()).second) corpus.env_names.push_back(name);
  }
  for (const auto& rec : records) {
    auto [it, inserted] = env_index.emplace(rec.env, corpus.env_names.size());
    if (inserted) corpus.env_names.push_back(rec.env);
    Document doc = vectorize(rec.tokens, corpus.vocab, it->second);
    doc.raw_id = rec.id;
    corpus.docs.push_back(std::move(doc));
  }
  corpus.num_envs = std::max<std::size_t>(1, corpus.env_names.size());
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                   std::span<const std::string> env_order) {
  return build_corpus(read_records(path), vocab, env_order);
}

Corpus load_corpus(const std::filesystem::path& path) {
  const auto records = read_records(path);
  std::vector<std::string> terms;
  for (const auto& r : records) terms.insert(terms.end(), r.tokens.begin(), r.tokens.end());
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  return build_corpus(records, Vocabulary(std::move(terms)));
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& doc : corpus.docs) {
    json tokens = json::array();
    for (const auto& tc : doc.counts) {
      for (std::uint32_t i = 0; i < tc.count; ++i) tokens.push_back(corpus.vocab.term(tc.term));
    }
    json rec = {{"id", doc.raw_id}, {"env", corpus.env_names.at(doc.env)}, {"tokens", tokens}};
    out << rec.dump() << '\n';
  }
}

TokenSet read_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stopword file " + path.string());
  TokenSet out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) terms.push_back(line);
  }
  return Vocabulary(std::move(terms));
}

void write_vocabulary(const Vocabulary& vocab, std::ostream& out) {
  for (const auto& t : vocab.terms()) out << t << '\n';
}

HeldoutSplit split_heldout_words(const Document& doc, double ratio, RngStream rng,
                                 std::span<const std::uint64_t> term_keys) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("split_heldout_words: ratio must be in (0,1)");
  if (doc.total() < 2) throw DegenerateDocument("split_heldout_words: fewer than two tokens");

  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    HeldoutSplit split;
    split.observed.env = split.held.env = doc.env;
    split.observed.raw_id = split.held.raw_id = doc.raw_id;
    RngStream attempt_rng = rng.split(attempt);
    for (const auto& tc : doc.counts) {
      RngStream term_rng;
      RngStream* draw = &attempt_rng;
      if (!term_keys.empty()) {
        term_rng = attempt_rng.split(term_keys[tc.term]);
        draw = &term_rng;
      }
      std::uint32_t kept = 0;
      for (std::uint32_t i = 0; i < tc.count; ++i) {
        if (draw->bernoulli(ratio)) ++kept;
      }
      if (kept > 0) split.observed.counts.push_back({tc.term, kept});
      if (kept < tc.count) split.held.counts.push_back({tc.term, tc.count - kept});
    }
    if (!split.observed.counts.empty() && !split.held.counts.empty()) return split;
  }
  throw DegenerateDocument("split_heldout_words: 100 redraws left one side empty");
}

}  // namespace mtm
