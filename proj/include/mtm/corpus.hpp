#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtm/rng.hpp"

namespace mtm {

using TermId = std::uint32_t;

class Vocabulary {
 public:
  Vocabulary() = default;
  // Ids follow the order of `terms`. Throws DomainError on duplicates.
  explicit Vocabulary(std::vector<std::string> terms);

  std::size_t size() const noexcept { return terms_.size(); }
  const std::vector<std::string>& terms() const noexcept { return terms_; }
  const std::string& term(TermId id) const { return terms_.at(id); }
  std::optional<TermId> id(const std::string& term) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.terms_ == b.terms_; }

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TermId> index_;
};

struct TermCount {
  TermId term;
  std::uint32_t count;
  friend bool operator==(const TermCount&, const TermCount&) = default;
};

struct Document {
  std::vector<TermCount> counts;  // sorted by term id, counts > 0
  std::size_t env = 0;
  std::string raw_id;

  std::size_t total() const noexcept;
  friend bool operator==(const Document&, const Document&) = default;
};

struct Corpus {
  std::vector<Document> docs;
  Vocabulary vocab;
  std::size_t num_envs = 1;
  std::vector<std::string> env_names;

  std::size_t size() const noexcept { return docs.size(); }
};

// A parsed corpus line before vectorization.
struct RawRecord {
  std::string id;
  std::string env;
  std::vector<std::string> tokens;
};

using TokenSet = std::unordered_set<std::string>;

// Keeps terms with ceil(min_df*D) <= df <= floor(max_df*D) that are not
// stopwords, sorted lexicographically.
Vocabulary build_vocabulary(std::span<const std::vector<std::string>> token_lists, double min_df,
                            double max_df, const TokenSet& stopwords = {});

Document vectorize(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t env);

// Lowercases ASCII letters and splits on anything that is not a letter, digit
// or a non-ASCII byte.
std::vector<std::string> tokenize_text(std::string_view text);

// One JSON object per line: {"id","env","tokens":[...]} or {"id","env","text"}.
std::vector<RawRecord> read_records(const std::filesystem::path& path);
std::vector<RawRecord> parse_records(std::istream& in);

// Environments named in `env_order` keep those indices; any others are
// appended in order of first appearance.
Corpus build_corpus(std::span<const RawRecord> records, Vocabulary vocab,
                    std::span<const std::string> env_order = {});
Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                   std::span<const std::string> env_order = {});
// Vocabulary from every token in the file (no filtering).
Corpus load_corpus(const std::filesystem::path& path);

void write_corpus(const Corpus& corpus, std::ostream& out);

TokenSet read_stopwords(const std::filesystem::path& path);
Vocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const Vocabulary& vocab, std::ostream& out);

struct HeldoutSplit {
  Document observed;
  Document held;
};

// Assigns each token to `observed` with probability `ratio`, redrawing (at
// most 100 times) until both halves are nonempty. When `term_keys` is given,
// the draws for a term come from a stream keyed by term_keys[term], which
// makes the split independent of vocabulary order.
HeldoutSplit split_heldout_words(const Document& doc, double ratio, RngStream rng,
                                 std::span<const std::uint64_t> term_keys = {});

}  // namespace mtm
