#pragma once

// Generated datasets with known structure, used to exercise the pipeline
// end to end.

#include <trolldet/corpus.hpp>

#include <string>
#include <vector>

namespace trolldet {

/// Marker token of make_marker_dataset.
inline constexpr std::string_view kMarkerToken = "zorblax";

/// Balanced records of 5 to 12 filler words. Label 1 records contain the
/// marker token once at a random position; label 0 records never do.
std::vector<RawRecord> make_marker_dataset(std::size_t size, std::uint64_t seed);

/// Balanced records that are all permutations of one fixed word multiset
/// containing "river", "money" and "bank". In label 1 records "bank"
/// directly follows "river"; in label 0 records it directly follows
/// "money". Bag-of-words features are identical across every record.
std::vector<RawRecord> make_polysemy_dataset(std::size_t size, std::uint64_t seed);

}  // namespace trolldet
