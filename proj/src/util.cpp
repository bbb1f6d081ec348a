#include "gridrag/util.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace gridrag {

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

std::u32string utf8_decode(std::string_view text) {
    std::u32string out;
    out.reserve(text.size());
    std::size_t i = 0;
    const auto n = text.size();
    while (i < n) {
        const unsigned char c0 = static_cast<unsigned char>(text[i]);
        char32_t cp = 0xFFFD;
        std::size_t len = 1;
        if (c0 < 0x80) {
            cp = c0;
        } else if ((c0 & 0xE0) == 0xC0 && i + 1 < n) {
            const unsigned char c1 = static_cast<unsigned char>(text[i + 1]);
            if ((c1 & 0xC0) == 0x80) {
                cp = (static_cast<char32_t>(c0 & 0x1F) << 6) | (c1 & 0x3F);
                len = 2;
                if (cp < 0x80) cp = 0xFFFD;  // overlong
            }
        } else if ((c0 & 0xF0) == 0xE0 && i + 2 < n) {
            const unsigned char c1 = static_cast<unsigned char>(text[i + 1]);
            const unsigned char c2 = static_cast<unsigned char>(text[i + 2]);
            if ((c1 & 0xC0) == 0x80 && (c2 & 0xC0) == 0x80) {
                cp = (static_cast<char32_t>(c0 & 0x0F) << 12) |
                     (static_cast<char32_t>(c1 & 0x3F) << 6) | (c2 & 0x3F);
                len = 3;
                if (cp < 0x800) cp = 0xFFFD;
            }
        } else if ((c0 & 0xF8) == 0xF0 && i + 3 < n) {
            const unsigned char c1 = static_cast<unsigned char>(text[i + 1]);
            const unsigned char c2 = static_cast<unsigned char>(text[i + 2]);
            const unsigned char c3 = static_cast<unsigned char>(text[i + 3]);
            if ((c1 & 0xC0) == 0x80 && (c2 & 0xC0) == 0x80 && (c3 & 0xC0) == 0x80) {
                cp = (static_cast<char32_t>(c0 & 0x07) << 18) |
                     (static_cast<char32_t>(c1 & 0x3F) << 12) |
                     (static_cast<char32_t>(c2 & 0x3F) << 6) | (c3 & 0x3F);
                len = 4;
                if (cp < 0x10000 || cp > 0x10FFFF) cp = 0xFFFD;
            }
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

void utf8_append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string utf8_encode(std::u32string_view cps) {
    std::string out;
    out.reserve(cps.size() * 3);
    for (char32_t cp : cps) utf8_append(out, cp);
    return out;
}

std::size_t utf8_length(std::string_view text) {
    std::size_t count = 0;
    for (char c : text) {
        if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++count;
    }
    return count;
}

std::string utf8_slice(const std::u32string& cps, std::size_t begin, std::size_t end) {
    if (begin > cps.size()) begin = cps.size();
    if (end > cps.size()) end = cps.size();
    if (begin >= end) return {};
    return utf8_encode(std::u32string_view(cps).substr(begin, end - begin));
}

bool is_cjk(char32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF) ||   // unified ideographs
           (cp >= 0x3400 && cp <= 0x4DBF) ||   // extension A
           (cp >= 0xF900 && cp <= 0xFAFF);     // compatibility ideographs
}

bool is_simplified_only(char32_t cp) {
    // Characters introduced by the script simplification; their Traditional
    // counterparts are distinct codepoints, so a hit is strong evidence of
    // zh-Hans text.
    static const std::unordered_set<char32_t> kSimplified = {
        0x7535,  // 电 (電)
        0x8D39,  // 费 (費)
        0x7F34,  // 缴 (繳)
        0x5355,  // 单 (單)
        0x95EE,  // 问 (問)
        0x9898,  // 题 (題)
        0x8BDD,  // 话 (話)
        0x8BED,  // 语 (語)
        0x7B80,  // 简 (簡)
        0x53D1,  // 发 (發)
        0x7F51,  // 网 (網)
        0x7EBF,  // 线 (線)
        0x8BBE,  // 设 (設)
        0x8BB0,  // 记 (記)
        0x4E66,  // 书 (書)
        0x4E1C,  // 东 (東)
        0x8F66,  // 车 (車)
        0x95E8,  // 门 (門)
        0x9A6C,  // 马 (馬)
        0x9F99,  // 龙 (龍)
        0x6C49,  // 汉 (漢)
        0x6C14,  // 气 (氣)
        0x4E50,  // 乐 (樂)
        0x52A1,  // 务 (務)
        0x5E94,  // 应 (應)
        0x4E3A,  // 为 (為)
        0x8FD9,  // 这 (這)
        0x6765,  // 来 (來)
        0x53F7,  // 号 (號)
        0x51E0,  // 几 (幾)
        0x5F20,  // 张 (張)
        0x4F20,  // 传 (傳)
        0x5934,  // 头 (頭)
        0x65AD,  // 断 (斷)
        0x7EE7,  // 继 (繼)
        0x7EED,  // 续 (續)
        0x5173,  // 关 (關)
        0x5F00,  // 开 (開)
        0x533A,  // 区 (區)
        0x52A8,  // 动 (動)
        0x4F59,  // 余 (餘)
    };
    return kSimplified.count(cp) > 0;
}

namespace {

// Folds fullwidth ASCII (FF01-FF5E) and the ideographic space to their ASCII
// equivalents; other codepoints pass through.
char32_t fold_fullwidth(char32_t cp) {
    if (cp >= 0xFF01 && cp <= 0xFF5E) return cp - 0xFF01 + 0x21;
    if (cp == 0x3000) return U' ';
    return cp;
}

bool is_ascii_alnum(char32_t cp) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
}

char32_t ascii_lower(char32_t cp) {
    return (cp >= 'A' && cp <= 'Z') ? cp + 32 : cp;
}

bool is_space_cp(char32_t cp) {
    return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\f' ||
           cp == U'\v' || cp == 0x3000;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char32_t raw : utf8_decode(text)) {
        const char32_t cp = fold_fullwidth(raw);
        if (is_ascii_alnum(cp)) {
            current.push_back(static_cast<char>(ascii_lower(cp)));
        } else {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            if (is_cjk(cp)) {
                std::string tok;
                utf8_append(tok, cp);
                tokens.push_back(std::move(tok));
            }
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::string normalize_key(std::string_view text) {
    std::string out;
    bool pending_space = false;
    bool emitted = false;
    for (char32_t raw : utf8_decode(text)) {
        const char32_t cp = fold_fullwidth(raw);
        if (is_space_cp(cp)) {
            pending_space = emitted;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        utf8_append(out, ascii_lower(cp));
        emitted = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : data) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0F]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// String helpers
// ---------------------------------------------------------------------------

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c += 32;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files / JSONL
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write: " + path);
}

bool file_exists(const std::string& path) {
    std::ifstream in(path);
    return in.good();
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": malformed JSON line: " +
                          e.what());
        }
    }
    return rows;
}

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path);
    for (const auto& row : rows) out << row.dump() << '\n';
    if (!out) throw IoError("short write: " + path);
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const std::size_t close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                const std::string name(tmpl.substr(i + 1, close - i - 1));
                auto it = values.find(name);
                if (it != values.end()) {
                    out.append(it->second);
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i]);
        ++i;
    }
    return out;
}

std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return std::string(buf);
}

}  // namespace gridrag
