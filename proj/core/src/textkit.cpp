#include "obf/textkit.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <unordered_set>

#include "obf/error.hpp"

namespace obf {

TokenSeq concat(std::initializer_list<std::span<const TokenId>> parts) {
  TokenSeq out;
  std::size_t total = 0;
  for (auto p : parts) total += p.size();
  out.ids.reserve(total);
  for (auto p : parts) out.ids.insert(out.ids.end(), p.begin(), p.end());
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kBosToken));
  add(std::string(kEosToken));
  add(std::string(kUnkToken));
}

void Vocabulary::add(std::string token) {
  auto id = static_cast<TokenId>(tokens_.size());
  auto [it, inserted] = index_.emplace(token, id);
  if (!inserted) throw DataError("duplicate token in vocabulary: " + token);
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> content_tokens) {
  Vocabulary v;
  for (const auto& t : content_tokens) v.add(t);
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw DataError("id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& t : tokens_) {
    for (char c : t) mix(static_cast<unsigned char>(c));
    mix(0);
  }
  return h;
}

std::vector<TokenId> Vocabulary::content_ids() const {
  std::vector<TokenId> out;
  for (auto i = kNumSpecials; i < static_cast<TokenId>(tokens_.size()); ++i) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary build_vocab(std::span<const std::string> corpus_lines) {
  if (corpus_lines.empty()) throw DataError("empty corpus");
  std::vector<std::string> ordered;
  std::unordered_set<std::string> seen;
  Vocabulary specials;
  for (const auto& line : corpus_lines) {
    for (auto& tok : split_whitespace(line)) {
      if (specials.contains(tok)) continue;
      if (seen.insert(tok).second) ordered.push_back(std::move(tok));
    }
  }
  return Vocabulary::from_tokens(ordered);
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSeq out;
  for (const auto& tok : split_whitespace(text)) out.ids.push_back(vocab.id(tok));
  return out;
}

std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : seq.ids) {
    const auto& tok = vocab.token(id);
    if (is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

std::vector<TokenSeq> ParallelCorpus::sources() const {
  std::vector<TokenSeq> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.source);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic language

std::string_view to_string(ReorderRule rule) {
  switch (rule) {
    case ReorderRule::kNone:
      return "none";
    case ReorderRule::kSwapEvenAdjacent:
      return "swap_even_adjacent";
  }
  return "none";
}

ReorderRule parse_reorder_rule(std::string_view text) {
  if (text == "none") return ReorderRule::kNone;
  if (text == "swap_even_adjacent") return ReorderRule::kSwapEvenAdjacent;
  throw ConfigError("unknown reorder rule: " + std::string(text));
}

void SyntheticLangSpec::validate() const {
  if (vocab_size < 8) throw ConfigError("synthetic vocab_size must be >= 8");
  if (min_len == 0 || min_len > max_len) throw ConfigError("synthetic lengths must satisfy 0 < min_len <= max_len");
}

std::string synthetic_source_token(std::size_t i) { return "a" + std::to_string(i); }
std::string synthetic_target_token(std::size_t i) { return "A" + std::to_string(i); }

std::vector<TokenId> apply_reorder(std::span<const TokenId> ids, ReorderRule rule) {
  std::vector<TokenId> out(ids.begin(), ids.end());
  if (rule == ReorderRule::kSwapEvenAdjacent) {
    for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  }
  return out;
}

ParallelCorpus gen_synthetic_corpus(const SyntheticLangSpec& spec, std::size_t n_pairs) {
  spec.validate();
  if (n_pairs == 0) throw ConfigError("n_pairs must be >= 1");

  std::vector<std::string> src_tokens, tgt_tokens;
  for (std::size_t i = 0; i < spec.vocab_size; ++i) {
    src_tokens.push_back(synthetic_source_token(i));
    tgt_tokens.push_back(synthetic_target_token(i));
  }
  ParallelCorpus corpus{{}, Vocabulary::from_tokens(src_tokens), Vocabulary::from_tokens(tgt_tokens)};

  // Both vocabularies list content tokens in the same order, so the
  // bijection a_i -> A_i is the identity on ids.
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<TokenId> tok_dist(kNumSpecials,
                                                  kNumSpecials + static_cast<TokenId>(spec.vocab_size) - 1);
  corpus.pairs.reserve(n_pairs);
  for (std::size_t n = 0; n < n_pairs; ++n) {
    std::size_t len = len_dist(rng);
    TokenSeq src;
    src.ids.reserve(len);
    for (std::size_t i = 0; i < len; ++i) src.ids.push_back(tok_dist(rng));
    TokenSeq tgt(apply_reorder(src.ids, spec.reorder_rule));
    corpus.pairs.push_back({std::move(src), std::move(tgt)});
  }
  return corpus;
}

TokenSeq random_source_sentence(const Vocabulary& vocab, std::size_t length, std::uint64_t seed) {
  auto content = vocab.content_ids();
  if (content.empty()) throw DataError("vocabulary has no content tokens");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, content.size() - 1);
  TokenSeq out;
  for (std::size_t i = 0; i < length; ++i) out.ids.push_back(content[pick(rng)]);
  return out;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

std::vector<std::pair<std::string, std::string>> read_tsv_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected exactly one TAB");
    }
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    if (split_whitespace(out.back().first).empty() || split_whitespace(out.back().second).empty()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": empty side in pair");
    }
  }
  return out;
}

}  // namespace

ParallelCorpus read_corpus(const std::filesystem::path& path) {
  auto raw = read_tsv_pairs(path);
  std::vector<std::string> src_lines, tgt_lines;
  for (auto& [s, t] : raw) {
    src_lines.push_back(s);
    tgt_lines.push_back(t);
  }
  auto src_vocab = build_vocab(src_lines);
  auto tgt_vocab = build_vocab(tgt_lines);
  ParallelCorpus corpus{{}, std::move(src_vocab), std::move(tgt_vocab)};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    corpus.pairs.push_back({tokenize(src_lines[i], corpus.source_vocab), tokenize(tgt_lines[i], corpus.target_vocab)});
  }
  return corpus;
}

ParallelCorpus read_corpus(const std::filesystem::path& path, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab) {
  auto raw = read_tsv_pairs(path);
  if (raw.empty()) throw DataError("empty corpus");
  ParallelCorpus corpus{{}, source_vocab, target_vocab};
  for (auto& [s, t] : raw) corpus.pairs.push_back({tokenize(s, source_vocab), tokenize(t, target_vocab)});
  return corpus;
}

void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path.string());
  for (const auto& p : corpus.pairs) {
    out << detokenize(p.source, corpus.source_vocab) << '\t' << detokenize(p.target, corpus.target_vocab) << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Vocabulary read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  Vocabulary specials;
  if (lines.size() < specials.size()) throw DataError("vocabulary file too short: " + path.string());
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (lines[i] != specials.tokens()[i]) throw DataError("vocabulary file must start with the special tokens");
  }
  return Vocabulary::from_tokens(std::span<const std::string>(lines).subspan(specials.size()));
}

void write_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file: " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace obf
