#pragma once

#include <trolldet/common.hpp>

#include <cmath>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace trolldet {

struct RawRecord {
  std::string text;
  int label = 0;  // troll = 1
};

struct Document {
  std::vector<std::string> tokens;
  int label = 0;
  /// Row of the source record in the loaded file (0-based).
  std::size_t source_index = 0;
};

/// Column layout and label tokens of a delimited dataset file.
struct DatasetFormat {
  char delimiter = '\t';
  std::size_t text_col = 0;
  std::size_t label_col = 1;
  std::string pos_label = "1";
  std::string neg_label = "0";
  bool has_header = false;

  static DatasetFormat tsv() { return {}; }
  static DatasetFormat csv() {
    DatasetFormat f;
    f.delimiter = ',';
    return f;
  }
};

/// Reads one record per data row, in file order. Throws InputError naming
/// the 1-based data row on malformed rows or unknown label tokens.
std::vector<RawRecord> load_dataset(const std::filesystem::path& path, const DatasetFormat& format);
/// Same as load_dataset but from an in-memory buffer.
std::vector<RawRecord> parse_dataset(const std::string& contents, const DatasetFormat& format);

/// Lowercases, maps URLs to "<url>" and @-mentions to "<user>", and splits
/// on whitespace and punctuation. Punctuation itself is dropped.
std::vector<std::string> tokenize(std::string_view text);

/// Tokenizes every record. Records that tokenize to nothing are rejected.
std::vector<Document> to_documents(const std::vector<RawRecord>& records);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  /// Builds from an explicit id order; tokens[0] and tokens[1] must be the
  /// reserved PAD and UNK tokens.
  explicit Vocabulary(std::vector<std::string> tokens, std::size_t min_count = 1);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }
  std::size_t min_count() const { return min_count_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::size_t min_count_ = 1;
};

/// Ids by descending corpus frequency, ties broken lexicographically.
Vocabulary build_vocabulary(const std::vector<Document>& docs, std::size_t min_count);

struct EncodedIds {
  std::vector<TokenId> ids;  // length max_len
  std::size_t valid_length = 0;
};

/// Tail truncation and tail PAD padding to max_len; unknown tokens map to UNK.
EncodedIds encode(const std::vector<std::string>& tokens, const Vocabulary& vocab, std::size_t max_len);

template <typename T>
struct DatasetSplit {
  std::vector<T> train;
  std::vector<T> validation;
  std::vector<T> test;
  std::uint64_t seed = 0;
};

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// (floor(train * n), floor(validation * n), remainder).
SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios);

/// Seeded permutation followed by the floor/floor/remainder cut.
template <typename T>
DatasetSplit<T> split_dataset(const std::vector<T>& records, const SplitRatios& ratios, std::uint64_t seed) {
  if (records.size() < 3) throw InputError("split_dataset: need at least 3 records");
  const SplitSizes sizes = split_sizes(records.size(), ratios);
  Rng rng(seed);
  const std::vector<std::size_t> order = rng.permutation(records.size());
  DatasetSplit<T> out;
  out.seed = seed;
  out.train.reserve(sizes.train);
  out.validation.reserve(sizes.validation);
  out.test.reserve(sizes.test);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const T& item = records[order[i]];
    if (i < sizes.train) {
      out.train.push_back(item);
    } else if (i < sizes.train + sizes.validation) {
      out.validation.push_back(item);
    } else {
      out.test.push_back(item);
    }
  }
  return out;
}

}  // namespace trolldet
