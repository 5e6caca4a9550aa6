#include <trolldet/corpus.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace trolldet {
namespace {

std::string_view trim(std::string_view s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  auto begin = std::find_if(s.begin(), s.end(), not_space);
  auto end = std::find_if(s.rbegin(), s.rend(), not_space).base();
  if (begin >= end) return {};
  return s.substr(static_cast<std::size_t>(begin - s.begin()), static_cast<std::size_t>(end - begin));
}

// Splits one line. Comma-delimited input honours double-quoted fields with
// "" as an escaped quote; tab-delimited input is split verbatim.
std::vector<std::string> split_fields(std::string_view line, char delim) {
  std::vector<std::string> fields;
  std::string current;
  if (delim != ',') {
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(delim, start);
      if (pos == std::string_view::npos) {
        fields.emplace_back(line.substr(start));
        break;
      }
      fields.emplace_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    return fields;
  }
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"' && current.empty()) {
      quoted = true;
    } else if (c == delim) {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (quoted) throw InputError("unterminated quoted field");
  fields.push_back(std::move(current));
  return fields;
}

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  }
  return true;
}

}  // namespace

std::vector<RawRecord> parse_dataset(const std::string& contents, const DatasetFormat& format) {
  std::vector<RawRecord> records;
  std::istringstream in(contents);
  std::string line;
  std::size_t row = 0;
  bool header_pending = format.has_header;
  const std::size_t needed = std::max(format.text_col, format.label_col) + 1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    ++row;
    std::vector<std::string> fields;
    try {
      fields = split_fields(line, format.delimiter);
    } catch (const InputError& e) {
      throw InputError("row " + std::to_string(row) + ": " + e.what());
    }
    if (fields.size() < needed) {
      throw InputError("row " + std::to_string(row) + ": expected at least " + std::to_string(needed) +
                       " columns, found " + std::to_string(fields.size()));
    }
    const std::string_view text = trim(fields[format.text_col]);
    if (text.empty()) throw InputError("row " + std::to_string(row) + ": empty text");
    const std::string_view label = trim(fields[format.label_col]);
    int y;
    if (label == format.pos_label) {
      y = 1;
    } else if (label == format.neg_label) {
      y = 0;
    } else {
      throw InputError("row " + std::to_string(row) + ": unknown label '" + std::string(label) + "'");
    }
    records.push_back(RawRecord{std::string(text), y});
  }
  return records;
}

std::vector<RawRecord> load_dataset(const std::filesystem::path& path, const DatasetFormat& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str(), format);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t end = i;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    std::string_view chunk = text.substr(i, end - i);
    i = end;
    if (chunk.empty()) continue;

    if (starts_with_ci(chunk, "http://") || starts_with_ci(chunk, "https://") || starts_with_ci(chunk, "www.")) {
      tokens.emplace_back("<url>");
      continue;
    }
    std::size_t pos = 0;
    if (chunk[0] == '@' && chunk.size() > 1 && is_word_byte(static_cast<unsigned char>(chunk[1]))) {
      tokens.emplace_back("<user>");
      pos = 1;
      while (pos < chunk.size() && is_word_byte(static_cast<unsigned char>(chunk[pos]))) ++pos;
    }
    std::string word;
    for (; pos <= chunk.size(); ++pos) {
      const bool at_end = pos == chunk.size();
      if (!at_end && is_word_byte(static_cast<unsigned char>(chunk[pos]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(chunk[pos]))));
      } else if (!word.empty()) {
        tokens.push_back(std::move(word));
        word.clear();
      }
    }
  }
  return tokens;
}

std::vector<Document> to_documents(const std::vector<RawRecord>& records) {
  std::vector<Document> docs;
  docs.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    Document d{tokenize(records[i].text), records[i].label, i};
    if (d.tokens.empty()) {
      throw InputError("record " + std::to_string(i + 1) + " has no tokens after tokenization");
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{std::string(kPadToken), std::string(kUnkToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t min_count)
    : id_to_token_(std::move(tokens)), min_count_(min_count) {
  if (id_to_token_.size() < 2 || id_to_token_[kPad] != kPadToken || id_to_token_[kUnk] != kUnkToken) {
    throw InputError("vocabulary must start with the reserved <pad> and <unk> tokens");
  }
  token_to_id_.reserve(id_to_token_.size());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i)).second) {
      throw InputError("duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) != 0; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= id_to_token_.size()) throw InputError("token id " + std::to_string(id) + " out of range");
  return id_to_token_[id];
}

Vocabulary build_vocabulary(const std::vector<Document>& docs, std::size_t min_count) {
  if (min_count < 1) throw InputError("build_vocabulary: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const Document& d : docs) {
    for (const std::string& t : d.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [token, count] : counts) {
    if (count >= min_count && token != Vocabulary::kPadToken && token != Vocabulary::kUnkToken) {
      entries.emplace_back(token, count);
    }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{std::string(Vocabulary::kPadToken), std::string(Vocabulary::kUnkToken)};
  for (auto& e : entries) tokens.push_back(std::move(e.first));
  return Vocabulary(std::move(tokens), min_count);
}

EncodedIds encode(const std::vector<std::string>& tokens, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw InputError("encode: max_len must be >= 1");
  EncodedIds out;
  out.ids.assign(max_len, Vocabulary::kPad);
  out.valid_length = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < out.valid_length; ++i) out.ids[i] = vocab.id(tokens[i]);
  return out;
}

SplitSizes split_sizes(std::size_t n, const SplitRatios& r) {
  if (r.train < 0 || r.validation < 0 || r.test < 0 || std::abs(r.train + r.validation + r.test - 1.0) > 1e-9) {
    throw InputError("split ratios must be non-negative and sum to 1");
  }
  // The small nudge keeps exact products such as 0.7 * 10 from flooring to 6.
  const auto floor_share = [n](double ratio) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  };
  SplitSizes s;
  s.train = std::min(n, floor_share(r.train));
  s.validation = std::min(n - s.train, floor_share(r.validation));
  s.test = n - s.train - s.validation;
  return s;
}

}  // namespace trolldet
