#include "instcache/text.hpp"

#include <algorithm>
#include <array>

namespace instcache::text {

char32_t decode_utf8(std::string_view s, size_t& pos) {
    const auto b0 = static_cast<uint8_t>(s[pos]);
    if (b0 < 0x80) {
        pos += 1;
        return b0;
    }
    auto cont = [&](size_t i) {
        return i < s.size() && (static_cast<uint8_t>(s[i]) & 0xC0) == 0x80;
    };
    auto bits = [&](size_t i) { return static_cast<char32_t>(static_cast<uint8_t>(s[i]) & 0x3F); };
    if ((b0 & 0xE0) == 0xC0 && cont(pos + 1)) {
        char32_t cp = ((b0 & 0x1Fu) << 6) | bits(pos + 1);
        pos += 2;
        return cp < 0x80 ? 0xFFFD : cp;
    }
    if ((b0 & 0xF0) == 0xE0 && cont(pos + 1) && cont(pos + 2)) {
        char32_t cp = ((b0 & 0x0Fu) << 12) | (bits(pos + 1) << 6) | bits(pos + 2);
        pos += 3;
        return cp < 0x800 ? 0xFFFD : cp;
    }
    if ((b0 & 0xF8) == 0xF0 && cont(pos + 1) && cont(pos + 2) && cont(pos + 3)) {
        char32_t cp = ((b0 & 0x07u) << 18) | (bits(pos + 1) << 12) | (bits(pos + 2) << 6) | bits(pos + 3);
        pos += 4;
        return (cp < 0x10000 || cp > 0x10FFFF) ? 0xFFFD : cp;
    }
    pos += 1;
    return 0xFFFD;
}

void append_utf8(std::string& out, char32_t cp) {
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

char32_t fold_codepoint(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    // Latin-1 Supplement uppercase block, skipping the multiplication sign.
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
    // Latin Extended-A: alternating case pairs, with three irregular runs.
    if (cp >= 0x100 && cp <= 0x137) return (cp % 2 == 0) ? cp + 1 : cp;
    if (cp >= 0x139 && cp <= 0x148) return (cp % 2 == 1) ? cp + 1 : cp;
    if (cp >= 0x14A && cp <= 0x177) return (cp % 2 == 0) ? cp + 1 : cp;
    if (cp == 0x178) return 0xFF; // Y with diaeresis
    if (cp >= 0x179 && cp <= 0x17E) return (cp % 2 == 1) ? cp + 1 : cp;
    // Greek capitals (skip the gap at 0x3A2).
    if (cp >= 0x391 && cp <= 0x3A1) return cp + 0x20;
    if (cp >= 0x3A3 && cp <= 0x3AB) return cp + 0x20;
    // Cyrillic.
    if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
    if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
    return cp;
}

std::string lowercase_fold(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    size_t pos = 0;
    while (pos < s.size()) {
        append_utf8(out, fold_codepoint(decode_utf8(s, pos)));
    }
    return out;
}

namespace {

struct Composition {
    char32_t base;
    char32_t mark;
    char32_t composed;
};

// Latin-1 Supplement canonical compositions (NFC subset).
constexpr std::array<Composition, 59> kCompositions{{
    {'A', 0x300, 0xC0}, {'A', 0x301, 0xC1}, {'A', 0x302, 0xC2}, {'A', 0x303, 0xC3},
    {'A', 0x308, 0xC4}, {'A', 0x30A, 0xC5}, {'C', 0x327, 0xC7},
    {'E', 0x300, 0xC8}, {'E', 0x301, 0xC9}, {'E', 0x302, 0xCA}, {'E', 0x308, 0xCB},
    {'I', 0x300, 0xCC}, {'I', 0x301, 0xCD}, {'I', 0x302, 0xCE}, {'I', 0x308, 0xCF},
    {'N', 0x303, 0xD1},
    {'O', 0x300, 0xD2}, {'O', 0x301, 0xD3}, {'O', 0x302, 0xD4}, {'O', 0x303, 0xD5},
    {'O', 0x308, 0xD6},
    {'U', 0x300, 0xD9}, {'U', 0x301, 0xDA}, {'U', 0x302, 0xDB}, {'U', 0x308, 0xDC},
    {'Y', 0x301, 0xDD},
    {'a', 0x300, 0xE0}, {'a', 0x301, 0xE1}, {'a', 0x302, 0xE2}, {'a', 0x303, 0xE3},
    {'a', 0x308, 0xE4}, {'a', 0x30A, 0xE5}, {'c', 0x327, 0xE7},
    {'e', 0x300, 0xE8}, {'e', 0x301, 0xE9}, {'e', 0x302, 0xEA}, {'e', 0x308, 0xEB},
    {'i', 0x300, 0xEC}, {'i', 0x301, 0xED}, {'i', 0x302, 0xEE}, {'i', 0x308, 0xEF},
    {'n', 0x303, 0xF1},
    {'o', 0x300, 0xF2}, {'o', 0x301, 0xF3}, {'o', 0x302, 0xF4}, {'o', 0x303, 0xF5},
    {'o', 0x308, 0xF6},
    {'u', 0x300, 0xF9}, {'u', 0x301, 0xFA}, {'u', 0x302, 0xFB}, {'u', 0x308, 0xFC},
    {'y', 0x301, 0xFD}, {'y', 0x308, 0xFF},
    {'A', 0x30C, 0x1CD}, {'a', 0x30C, 0x1CE}, // caron pair spills into Ext-B
    {'S', 0x30C, 0x160}, {'s', 0x30C, 0x161},
    {'Z', 0x30C, 0x17D}, {'z', 0x30C, 0x17E},
}};

char32_t compose_pair(char32_t base, char32_t mark) {
    for (const auto& c : kCompositions) {
        if (c.base == base && c.mark == mark) return c.composed;
    }
    return 0;
}

} // namespace

std::string compose_latin1(std::string_view s) {
    std::vector<char32_t> cps;
    cps.reserve(s.size());
    size_t pos = 0;
    while (pos < s.size()) cps.push_back(decode_utf8(s, pos));

    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < cps.size(); ++i) {
        char32_t cp = cps[i];
        while (i + 1 < cps.size()) {
            char32_t composed = compose_pair(cp, cps[i + 1]);
            if (composed == 0) break;
            cp = composed;
            ++i;
        }
        append_utf8(out, cp);
    }
    return out;
}

bool is_space(char32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' ||
           cp == '\v' || cp == 0xA0 || cp == 0x2028 || cp == 0x2029 ||
           (cp >= 0x2000 && cp <= 0x200A) || cp == 0x3000;
}

std::string trim(std::string_view s) {
    size_t begin = 0;
    size_t end = s.size();
    while (begin < end) {
        size_t p = begin;
        if (!is_space(decode_utf8(s, p))) break;
        begin = p;
    }
    // Scan forward to find the last non-space boundary; UTF-8 cannot be
    // decoded backwards without care.
    size_t last_end = begin;
    size_t p = begin;
    while (p < end) {
        size_t q = p;
        const bool space = is_space(decode_utf8(s, q));
        if (!space) last_end = q;
        p = q;
    }
    return std::string(s.substr(begin, last_end - begin));
}

std::vector<std::string> tokenize_words(std::string_view s, const TokenizerConfig& cfg) {
    std::string normalized;
    if (cfg.nfc) {
        normalized = compose_latin1(s);
        s = normalized;
    }
    std::vector<std::string> words;
    std::string current;
    size_t pos = 0;
    while (pos < s.size()) {
        char32_t cp = decode_utf8(s, pos);
        if (is_space(cp)) {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        } else {
            append_utf8(current, cfg.case_fold ? fold_codepoint(cp) : cp);
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

size_t word_count(std::string_view s, const TokenizerConfig& cfg) {
    return tokenize_words(s, cfg).size();
}

} // namespace instcache::text
