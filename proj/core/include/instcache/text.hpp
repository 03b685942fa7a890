#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace instcache::text {

// Decodes one UTF-8 code point starting at `pos`. Advances `pos` past it.
// Invalid bytes decode as U+FFFD and advance by one byte.
char32_t decode_utf8(std::string_view s, size_t& pos);

void append_utf8(std::string& out, char32_t cp);

// Simple one-to-one lowercase fold covering Basic Latin, Latin-1 Supplement,
// Latin Extended-A, Greek and Cyrillic. Other code points pass through.
char32_t fold_codepoint(char32_t cp);

std::string lowercase_fold(std::string_view s);

// Canonical composition limited to the Latin-1 Supplement range: an ASCII
// base letter followed by one of the common combining marks (grave, acute,
// circumflex, tilde, diaeresis, ring above, cedilla) becomes the precomposed
// character. Everything else passes through unchanged.
std::string compose_latin1(std::string_view s);

std::string trim(std::string_view s);

bool is_space(char32_t cp);

struct TokenizerConfig {
    bool case_fold = true;
    bool nfc = true; // Latin-1 subset composition, see compose_latin1()
};

// Whitespace word tokenizer used by the n-gram model and the dataset pipeline.
std::vector<std::string> tokenize_words(std::string_view s,
                                        const TokenizerConfig& cfg = {});

// Token count under the pipeline tokenizer.
size_t word_count(std::string_view s, const TokenizerConfig& cfg = {});

} // namespace instcache::text
