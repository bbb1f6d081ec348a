#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace gridrag {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration or arguments.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem and input-format failures. Carries the offending path.
struct IoError : Error {
    using Error::Error;
};

// Backend (chat/embedding) failure after retries were exhausted, or a
// non-retryable request error.
struct GatewayError : Error {
    explicit GatewayError(const std::string& msg, int status = 0, bool retryable = false)
        : Error(msg), http_status(status), was_retryable(retryable) {}
    int http_status;      // 0 when the failure was not an HTTP response
    bool was_retryable;
};

// ---------------------------------------------------------------------------
// UTF-8 / codepoint handling
//
// All size limits in the chunker are measured in Unicode codepoints, so text
// is routinely decoded to codepoint arrays. Invalid byte sequences decode to
// U+FFFD rather than throwing; corpus inputs are expected to be valid UTF-8.
// ---------------------------------------------------------------------------

std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view cps);
void utf8_append(std::string& out, char32_t cp);
std::size_t utf8_length(std::string_view text);

// Substring in codepoint coordinates over an already-decoded array.
std::string utf8_slice(const std::u32string& cps, std::size_t begin, std::size_t end);

bool is_cjk(char32_t cp);
// Member of the small built-in set of characters that occur in Simplified
// Chinese but not in the Traditional script.
bool is_simplified_only(char32_t cp);

// ---------------------------------------------------------------------------
// Shared tokenizer: lowercase, split on non-alphanumeric, each CJK codepoint
// is its own token. Fullwidth ASCII letters/digits fold to their ASCII forms.
// Used by the sparse index, the stub embedder and keyword handling so that
// ranking behavior is consistent across components.
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text);

// Normalization key: fullwidth ASCII folded, ideographic space folded, ASCII
// lowercased, whitespace runs collapsed to single spaces, trimmed.
std::string normalize_key(std::string_view text);

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view data);
std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// Small string helpers
// ---------------------------------------------------------------------------

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string to_lower_ascii(std::string_view s);

// ---------------------------------------------------------------------------
// Files and JSON Lines
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
bool file_exists(const std::string& path);

// Parses a JSONL file. Blank lines are skipped; a malformed line raises
// IoError naming the path and 1-based line number.
std::vector<json> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<json>& rows);

// ---------------------------------------------------------------------------
// Prompt templates: single-brace {name} placeholders. Unknown placeholders
// are left untouched.
// ---------------------------------------------------------------------------

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values);

// Fixed-format float used everywhere scores appear in reports (not traces;
// traces keep full precision via JSON round-trip formatting).
std::string format_fixed(double v, int decimals);

}  // namespace gridrag
