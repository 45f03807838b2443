#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace obf {

using TokenId = std::int32_t;

/// Fixed ids of the special tokens. Every vocabulary starts with them in this
/// order so checkpoints and tests stay stable.
enum class Special : TokenId { kPad = 0, kBos = 1, kEos = 2, kUnk = 3 };

inline constexpr TokenId kPadId = static_cast<TokenId>(Special::kPad);
inline constexpr TokenId kBosId = static_cast<TokenId>(Special::kBos);
inline constexpr TokenId kEosId = static_cast<TokenId>(Special::kEos);
inline constexpr TokenId kUnkId = static_cast<TokenId>(Special::kUnk);
inline constexpr TokenId kNumSpecials = 4;

inline constexpr bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

/// A sentence as a sequence of token ids.
struct TokenSeq {
  std::vector<TokenId> ids;

  TokenSeq() = default;
  explicit TokenSeq(std::vector<TokenId> v) : ids(std::move(v)) {}
  TokenSeq(std::initializer_list<TokenId> v) : ids(v) {}

  std::size_t length() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  TokenId operator[](std::size_t i) const { return ids[i]; }
  std::span<const TokenId> span() const { return ids; }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

/// Concatenates sequences in order.
TokenSeq concat(std::initializer_list<std::span<const TokenId>> parts);

/// Token inventory. Ids 0..3 are PAD, BOS, EOS, UNK; the rest follow in
/// insertion order.
class Vocabulary {
 public:
  /// Specials only.
  Vocabulary();

  /// Builds from content tokens (specials are prepended). Throws DataError
  /// on duplicates or on a content token that spells a special.
  static Vocabulary from_tokens(std::span<const std::string> content_tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// UNK when absent.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  /// Throws DataError("id out of range").
  const std::string& token(TokenId id) const;

  /// FNV-1a over the token list; used to tie checkpoints to vocabularies.
  std::uint64_t fingerprint() const;

  /// Content (non-special) ids, ascending.
  std::vector<TokenId> content_ids() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr std::string_view kUnkToken = "<unk>";

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Distinct whitespace tokens of `corpus_lines`, specials first then
/// first-occurrence order. Throws DataError("empty corpus").
Vocabulary build_vocab(std::span<const std::string> corpus_lines);

/// Whitespace split; unknown tokens map to UNK. No BOS/EOS is added.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);

/// Joins tokens with single spaces, dropping specials.
std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab);

/// Splits on ASCII whitespace.
std::vector<std::string> split_whitespace(std::string_view text);

struct SentencePair {
  TokenSeq source;
  TokenSeq target;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  Vocabulary source_vocab;
  Vocabulary target_vocab;

  std::size_t size() const { return pairs.size(); }
  std::vector<TokenSeq> sources() const;
};

enum class ReorderRule { kNone, kSwapEvenAdjacent };

std::string_view to_string(ReorderRule rule);
ReorderRule parse_reorder_rule(std::string_view text);

struct SyntheticLangSpec {
  std::size_t vocab_size = 64;
  std::size_t min_len = 3;
  std::size_t max_len = 20;
  ReorderRule reorder_rule = ReorderRule::kNone;
  std::uint64_t seed = 1;

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
};

/// Source token name for content index i ("a17"); the target side is the
/// upper-cased variant ("A17").
std::string synthetic_source_token(std::size_t i);
std::string synthetic_target_token(std::size_t i);

/// Applies the reorder rule to a sequence (swap_even_adjacent swaps positions
/// (0,1), (2,3), ...; an odd trailing token stays in place).
std::vector<TokenId> apply_reorder(std::span<const TokenId> ids, ReorderRule rule);

/// Uniform random source sentences; the target is the position-wise
/// bijective image followed by the reorder rule. Pure function of its
/// arguments.
ParallelCorpus gen_synthetic_corpus(const SyntheticLangSpec& spec, std::size_t n_pairs);

/// Uniform random source-language sentence of exactly `length` content tokens.
TokenSeq random_source_sentence(const Vocabulary& vocab, std::size_t length, std::uint64_t seed);

// Corpus file: one pair per line, "source<TAB>target", '#' lines are comments.
ParallelCorpus read_corpus(const std::filesystem::path& path);
/// Pairs are tokenized against the given vocabularies.
ParallelCorpus read_corpus(const std::filesystem::path& path, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab);
void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& path);

// Vocabulary file: one token per line, line number - 1 = id.
Vocabulary read_vocab(const std::filesystem::path& path);
void write_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

}  // namespace obf
