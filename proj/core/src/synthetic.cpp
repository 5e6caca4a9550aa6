#include <trolldet/synthetic.hpp>

#include <algorithm>

namespace trolldet {

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

std::vector<RawRecord> make_marker_dataset(std::size_t size, std::uint64_t seed) {
  if (size < 2) throw InputError("marker dataset needs at least 2 records");
  Rng rng(seed);
  std::vector<std::string> fillers;
  for (int i = 0; i < 40; ++i) fillers.push_back("w" + std::to_string(i));
  std::vector<RawRecord> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const int label = static_cast<int>(i % 2);
    const std::size_t length = 5 + rng.below(8);
    std::vector<std::string> words;
    for (std::size_t t = 0; t < length; ++t) words.push_back(fillers[rng.below(fillers.size())]);
    if (label) words[rng.below(length)] = std::string(kMarkerToken);
    out.push_back({join(words), label});
  }
  return out;
}

std::vector<RawRecord> make_polysemy_dataset(std::size_t size, std::uint64_t seed) {
  if (size < 2) throw InputError("polysemy dataset needs at least 2 records");
  Rng rng(seed);
  const std::vector<std::string> base = {"the", "walk", "near", "old", "river", "money"};
  std::vector<RawRecord> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const int label = static_cast<int>(i % 2);
    std::vector<std::string> words = base;
    rng.shuffle(words);
    const std::string anchor = label ? "river" : "money";
    const auto it = std::find(words.begin(), words.end(), anchor);
    words.insert(it + 1, "bank");
    out.push_back({join(words), label});
  }
  return out;
}

}  // namespace trolldet
