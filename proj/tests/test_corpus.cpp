#include <trolldet/corpus.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace trolldet;

namespace {

Document doc(std::vector<std::string> tokens, int label = 0) { return {std::move(tokens), label, 0}; }

}  // namespace

TEST(LoadDataset, ParsesTsvRows) {
  const auto r = parse_dataset("hi\t1\nyo\t0\n", DatasetFormat::tsv());
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].text, "hi");
  EXPECT_EQ(r[0].label, 1);
  EXPECT_EQ(r[1].text, "yo");
  EXPECT_EQ(r[1].label, 0);
}

TEST(LoadDataset, UnknownLabelNamesTheRow) {
  try {
    parse_dataset("a\t1\nb\t0\nc\t1\nd\t0\ne\t2\n", DatasetFormat::tsv());
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("row 5"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, QuotedCsvWithHeader) {
  DatasetFormat f = DatasetFormat::csv();
  f.has_header = true;
  f.text_col = 1;
  f.label_col = 0;
  f.pos_label = "troll";
  f.neg_label = "ok";
  const auto r = parse_dataset("label,text\ntroll,\"hello, \"\"world\"\"\"\nok,plain\n", f);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].text, "hello, \"world\"");
  EXPECT_EQ(r[0].label, 1);
  EXPECT_EQ(r[1].label, 0);
}

TEST(LoadDataset, MissingFile) {
  EXPECT_THROW(load_dataset("/nonexistent/data.tsv", DatasetFormat::tsv()), InputError);
}

TEST(LoadDataset, MalformedRowNamesTheRow) {
  try {
    parse_dataset("a\t1\nno label here\n", DatasetFormat::tsv());
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, ReadsFromDisk) {
  const auto path = std::filesystem::temp_directory_path() / "trolldet_corpus_test.tsv";
  std::ofstream(path) << "first\t1\nsecond\t0\n";
  const auto r = load_dataset(path, DatasetFormat::tsv());
  EXPECT_EQ(r.size(), 2u);
  std::filesystem::remove(path);
}

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("Hello, WORLD!"), (std::vector<std::string>{"hello", "world"}));
  EXPECT_EQ(tokenize("see http://x.co @bob"), (std::vector<std::string>{"see", "<url>", "<user>"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("visit www.site.org now"), (std::vector<std::string>{"visit", "<url>", "now"}));
  EXPECT_EQ(tokenize("!!! ... ???"), std::vector<std::string>{});
}

TEST(ToDocuments, EmptyAfterTokenizationIsAnError) {
  EXPECT_THROW(to_documents({{"fine", 1}, {"?!", 0}}), InputError);
}

TEST(Vocabulary, FrequencyOrder) {
  const Vocabulary v = build_vocabulary({doc({"a", "a", "b"})}, 1);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("<pad>"), 0u);
  EXPECT_EQ(v.id("<unk>"), 1u);
  EXPECT_EQ(v.id("a"), 2u);
  EXPECT_EQ(v.id("b"), 3u);
}

TEST(Vocabulary, MinCountThreshold) {
  const Vocabulary v = build_vocabulary({doc({"a", "a", "b"})}, 2);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_FALSE(v.contains("b"));
  const EncodedIds e = encode({"a", "b"}, v, 2);
  EXPECT_EQ(e.ids, (std::vector<TokenId>{2, Vocabulary::kUnk}));
}

TEST(Vocabulary, LexicographicTieBreak) {
  const Vocabulary v = build_vocabulary({doc({"b", "a"})}, 1);
  EXPECT_EQ(v.id("a"), 2u);
  EXPECT_EQ(v.id("b"), 3u);
}

TEST(Vocabulary, IdsAreDenseBijection) {
  const Vocabulary v = build_vocabulary({doc({"x", "y", "z", "x"}), doc({"w", "y"})}, 1);
  for (TokenId i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
}

TEST(Encode, PaddingUnkAndTruncation) {
  const Vocabulary v({"<pad>", "<unk>", "a", "b"});
  EncodedIds e = encode({"a", "b"}, v, 4);
  EXPECT_EQ(e.ids, (std::vector<TokenId>{2, 3, 0, 0}));
  EXPECT_EQ(e.valid_length, 2u);
  e = encode({"a", "z"}, v, 4);
  EXPECT_EQ(e.ids, (std::vector<TokenId>{2, 1, 0, 0}));
  EXPECT_EQ(e.valid_length, 2u);
  e = encode({"a", "b", "a", "b", "a"}, v, 3);
  EXPECT_EQ(e.ids, (std::vector<TokenId>{2, 3, 2}));
  EXPECT_EQ(e.valid_length, 3u);
}

TEST(Encode, DeterministicAndInRange) {
  const std::vector<Document> docs = to_documents({{"The cat sat on the mat", 1}, {"A dog, a DOG!", 0}});
  const Vocabulary v = build_vocabulary(docs, 1);
  const EncodedIds first = encode(tokenize("The cat sat on the mat"), v, 8);
  EXPECT_EQ(encode(tokenize("The cat sat on the mat"), v, 8).ids, first.ids);
  for (const Document& d : docs) {
    for (TokenId id : encode(d.tokens, v, 8).ids) EXPECT_LT(id, v.size());
  }
}

TEST(Split, SizesFollowFloorRule) {
  EXPECT_EQ(split_sizes(10, {}).train, 7u);
  EXPECT_EQ(split_sizes(10, {}).validation, 1u);
  EXPECT_EQ(split_sizes(10, {}).test, 2u);
  const SplitSizes three = split_sizes(3, {});
  EXPECT_EQ(three.train, 2u);
  EXPECT_EQ(three.validation, 0u);
  EXPECT_EQ(three.test, 1u);
  const SplitSizes big = split_sizes(18514, {});
  EXPECT_EQ(big.train, 12959u);
  EXPECT_EQ(big.validation, 1851u);
  EXPECT_EQ(big.test, 3704u);
}

TEST(Split, FloorRuleForAllSizes) {
  for (std::size_t n = 3; n <= 10000; ++n) {
    const SplitSizes s = split_sizes(n, {});
    ASSERT_EQ(s.train, n * 7 / 10) << n;
    ASSERT_EQ(s.validation, n / 10) << n;
    ASSERT_EQ(s.train + s.validation + s.test, n);
  }
}

TEST(Split, RatioSumViolation) {
  EXPECT_THROW(split_sizes(10, {0.7, 0.2, 0.2}), InputError);
  std::vector<int> items(10);
  EXPECT_THROW(split_dataset(items, {0.5, 0.1, 0.1}, 0), InputError);
}

TEST(Split, PartitionAndDeterminism) {
  std::vector<int> items(257);
  for (int i = 0; i < 257; ++i) items[static_cast<std::size_t>(i)] = i;
  const auto a = split_dataset(items, {}, 42);
  const auto b = split_dataset(items, {}, 42);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  std::vector<int> all = a.train;
  all.insert(all.end(), a.validation.begin(), a.validation.end());
  all.insert(all.end(), a.test.begin(), a.test.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, items);
}

TEST(Split, DifferentSeedsGiveDifferentTrainSets) {
  std::vector<int> items(100);
  for (int i = 0; i < 100; ++i) items[static_cast<std::size_t>(i)] = i;
  const auto base = split_dataset(items, {}, 0);
  int differing = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) differing += split_dataset(items, {}, seed).train != base.train;
  EXPECT_EQ(differing, 20);
}
