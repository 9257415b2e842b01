#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace em {

// All timestamps in the pipeline are UTC epoch milliseconds.
int64_t wall_now_ms();

// "2019-03-02T14:05:09Z" or with fractional seconds / "+00:00" suffix.
std::string format_iso8601(int64_t epoch_ms);
std::optional<int64_t> parse_iso8601(const std::string& s);

// Accepts an ISO-8601 string or a raw number (epoch seconds if < 1e11,
// else epoch milliseconds). Fixture corpora use either form.
std::optional<int64_t> parse_timestamp(const std::string& s);

}  // namespace em
