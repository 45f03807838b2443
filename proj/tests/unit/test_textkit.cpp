#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "obf/error.hpp"
#include "obf/textkit.hpp"

namespace obf {
namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("obf_textkit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(BuildVocab, SpecialsFirstThenFirstOccurrence) {
  std::vector<std::string> lines{"a b", "b c"};
  Vocabulary v = build_vocab(lines);
  ASSERT_EQ(v.size(), 7u);
  std::vector<std::string> expected{"<pad>", "<s>", "</s>", "<unk>", "a", "b", "c"};
  EXPECT_EQ(v.tokens(), expected);
  EXPECT_EQ(v.id("<pad>"), kPadId);
  EXPECT_EQ(v.id("<s>"), kBosId);
  EXPECT_EQ(v.id("</s>"), kEosId);
  EXPECT_EQ(v.id("<unk>"), kUnkId);
}

TEST(BuildVocab, EmptyCorpusIsAnError) {
  std::vector<std::string> none;
  try {
    build_vocab(none);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "empty corpus");
  }
}

TEST(BuildVocab, SizeMatchesHashSetCount) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> tok(0, 255), len(1, 12);
  std::vector<std::string> lines;
  std::unordered_set<std::string> distinct;
  for (int i = 0; i < 1000; ++i) {
    std::ostringstream line;
    int n = len(rng);
    for (int j = 0; j < n; ++j) {
      std::string t = "w" + std::to_string(tok(rng));
      distinct.insert(t);
      line << (j ? " " : "") << t;
    }
    lines.push_back(line.str());
  }
  Vocabulary v = build_vocab(lines);
  EXPECT_EQ(v.size(), distinct.size() + 4);
  EXPECT_EQ(v.size(), 260u);
  for (const auto& t : distinct) EXPECT_TRUE(v.contains(t));
}

TEST(Vocabulary, IdsAreABijection) {
  std::vector<std::string> lines{"x y z x", "q"};
  Vocabulary v = build_vocab(lines);
  for (TokenId id = 0; id < static_cast<TokenId>(v.size()); ++id) EXPECT_EQ(v.id(v.token(id)), id);
}

TEST(Vocabulary, RejectsDuplicatesAndSpecialSpellings) {
  std::vector<std::string> dup{"a", "a"};
  EXPECT_THROW(Vocabulary::from_tokens(dup), DataError);
  std::vector<std::string> special{"<s>"};
  EXPECT_THROW(Vocabulary::from_tokens(special), DataError);
}

TEST(Tokenize, LooksUpEachToken) {
  std::vector<std::string> lines{"a b", "b c"};
  Vocabulary v = build_vocab(lines);
  EXPECT_EQ(tokenize("a b", v), (TokenSeq{v.id("a"), v.id("b")}));
  EXPECT_EQ(tokenize("a zzz", v), (TokenSeq{v.id("a"), kUnkId}));
  EXPECT_TRUE(tokenize("   ", v).empty());
}

TEST(Detokenize, JoinsAndStripsSpecials) {
  std::vector<std::string> lines{"a b"};
  Vocabulary v = build_vocab(lines);
  EXPECT_EQ(detokenize(TokenSeq{v.id("a"), v.id("b")}, v), "a b");
  EXPECT_EQ(detokenize(TokenSeq{kBosId, v.id("a"), kEosId}, v), "a");
  try {
    detokenize(TokenSeq{static_cast<TokenId>(v.size())}, v);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "id out of range");
  }
}

TEST(Tokenize, RoundTripOnSyntheticSentences) {
  SyntheticLangSpec spec{32, 3, 20, ReorderRule::kNone, 5};
  ParallelCorpus c = gen_synthetic_corpus(spec, 100);
  for (const auto& p : c.pairs) {
    std::string s = detokenize(p.source, c.source_vocab);
    EXPECT_EQ(detokenize(tokenize(s, c.source_vocab), c.source_vocab), s);
    EXPECT_EQ(tokenize(s, c.source_vocab), p.source);
  }
}

TEST(Synthetic, NoReorderIsPositionwiseBijection) {
  SyntheticLangSpec spec{8, 3, 3, ReorderRule::kNone, 1};
  ParallelCorpus c = gen_synthetic_corpus(spec, 1);
  ASSERT_EQ(c.size(), 1u);
  const auto& p = c.pairs[0];
  ASSERT_EQ(p.source.length(), 3u);
  ASSERT_EQ(p.target.length(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    std::string src = c.source_vocab.token(p.source[i]);
    std::string tgt = c.target_vocab.token(p.target[i]);
    EXPECT_EQ(src.substr(1), tgt.substr(1));
    EXPECT_EQ(src[0], 'a');
    EXPECT_EQ(tgt[0], 'A');
  }
}

TEST(Synthetic, SwapEvenAdjacentRule) {
  std::vector<TokenId> src{10, 11, 12, 13};
  EXPECT_EQ(apply_reorder(src, ReorderRule::kSwapEvenAdjacent), (std::vector<TokenId>{11, 10, 13, 12}));
  std::vector<TokenId> odd{1, 2, 3};
  EXPECT_EQ(apply_reorder(odd, ReorderRule::kSwapEvenAdjacent), (std::vector<TokenId>{2, 1, 3}));

  SyntheticLangSpec spec{16, 4, 4, ReorderRule::kSwapEvenAdjacent, 9};
  ParallelCorpus c = gen_synthetic_corpus(spec, 20);
  for (const auto& p : c.pairs) {
    auto name = [&](TokenId s) { return "A" + c.source_vocab.token(s).substr(1); };
    EXPECT_EQ(c.target_vocab.token(p.target[0]), name(p.source[1]));
    EXPECT_EQ(c.target_vocab.token(p.target[1]), name(p.source[0]));
    EXPECT_EQ(c.target_vocab.token(p.target[2]), name(p.source[3]));
    EXPECT_EQ(c.target_vocab.token(p.target[3]), name(p.source[2]));
  }
}

TEST(Synthetic, DeterministicGivenSeed) {
  SyntheticLangSpec spec{64, 3, 20, ReorderRule::kSwapEvenAdjacent, 7};
  auto dir = temp_dir("determinism");
  write_corpus(gen_synthetic_corpus(spec, 300), dir / "a.tsv");
  write_corpus(gen_synthetic_corpus(spec, 300), dir / "b.tsv");
  std::ifstream a(dir / "a.tsv", std::ios::binary), b(dir / "b.tsv", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, sb);

  spec.seed = 8;
  EXPECT_NE(gen_synthetic_corpus(spec, 300).pairs[0].source, gen_synthetic_corpus({64, 3, 20, spec.reorder_rule, 7}, 300).pairs[0].source);
}

TEST(Synthetic, LengthsWithinBoundsAndIdsValid) {
  SyntheticLangSpec spec{10, 2, 6, ReorderRule::kNone, 4};
  ParallelCorpus c = gen_synthetic_corpus(spec, 500);
  std::set<std::size_t> lengths;
  for (const auto& p : c.pairs) {
    EXPECT_GE(p.source.length(), 2u);
    EXPECT_LE(p.source.length(), 6u);
    EXPECT_EQ(p.source.length(), p.target.length());
    lengths.insert(p.source.length());
    for (TokenId id : p.source.ids) {
      EXPECT_FALSE(is_special(id));
      EXPECT_LT(static_cast<std::size_t>(id), c.source_vocab.size());
    }
  }
  EXPECT_EQ(lengths.size(), 5u);
}

TEST(Synthetic, SpecValidation) {
  EXPECT_THROW((SyntheticLangSpec{7, 3, 20, ReorderRule::kNone, 1}.validate()), ConfigError);
  EXPECT_THROW((SyntheticLangSpec{8, 0, 20, ReorderRule::kNone, 1}.validate()), ConfigError);
  EXPECT_THROW((SyntheticLangSpec{8, 5, 4, ReorderRule::kNone, 1}.validate()), ConfigError);
  EXPECT_NO_THROW((SyntheticLangSpec{8, 4, 4, ReorderRule::kNone, 1}.validate()));
}

TEST(Synthetic, ReorderRuleNames) {
  EXPECT_EQ(parse_reorder_rule("none"), ReorderRule::kNone);
  EXPECT_EQ(parse_reorder_rule(to_string(ReorderRule::kSwapEvenAdjacent)), ReorderRule::kSwapEvenAdjacent);
  EXPECT_THROW(parse_reorder_rule("reverse"), ConfigError);
}

TEST(CorpusFile, RoundTripWithComments) {
  auto dir = temp_dir("corpus");
  {
    std::ofstream out(dir / "c.tsv");
    out << "# header comment\n"
        << "a b\tB A\n"
        << "\n"
        << "c\tC\n";
  }
  ParallelCorpus c = read_corpus(dir / "c.tsv");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(detokenize(c.pairs[0].source, c.source_vocab), "a b");
  EXPECT_EQ(detokenize(c.pairs[0].target, c.target_vocab), "B A");
  write_corpus(c, dir / "d.tsv");
  ParallelCorpus d = read_corpus(dir / "d.tsv", c.source_vocab, c.target_vocab);
  EXPECT_EQ(d.pairs[1].source, c.pairs[1].source);
  EXPECT_EQ(d.pairs[1].target, c.pairs[1].target);
}

TEST(CorpusFile, MalformedLinesAreDataErrors) {
  auto dir = temp_dir("bad");
  {
    std::ofstream out(dir / "two_tabs.tsv");
    out << "a\tb\tc\n";
  }
  EXPECT_THROW(read_corpus(dir / "two_tabs.tsv"), DataError);
  {
    std::ofstream out(dir / "empty_side.tsv");
    out << "a\t\n";
  }
  EXPECT_THROW(read_corpus(dir / "empty_side.tsv"), DataError);
  EXPECT_THROW(read_corpus(dir / "missing.tsv"), DataError);
}

TEST(VocabFile, RoundTrip) {
  auto dir = temp_dir("vocab");
  std::vector<std::string> lines{"p q r"};
  Vocabulary v = build_vocab(lines);
  write_vocab(v, dir / "v.txt");
  Vocabulary w = read_vocab(dir / "v.txt");
  EXPECT_EQ(v, w);
  EXPECT_EQ(v.fingerprint(), w.fingerprint());

  std::ofstream(dir / "bad.txt") << "p\nq\n";
  EXPECT_THROW(read_vocab(dir / "bad.txt"), DataError);
}

TEST(Vocabulary, FingerprintSeparatesVocabularies) {
  std::vector<std::string> a{"a b"}, b{"b a"};
  EXPECT_NE(build_vocab(a).fingerprint(), build_vocab(b).fingerprint());
}

TEST(Concat, JoinsInOrder) {
  TokenSeq x{5, 6};
  TokenId w[] = {9};
  TokenSeq t{7};
  EXPECT_EQ(concat({x.span(), w, t.span()}), (TokenSeq{5, 6, 9, 7}));
}

}  // namespace
}  // namespace obf
