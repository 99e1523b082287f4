// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace cmh {

// A small tokenizer for Python-like candidate programs. It is total: any
// byte sequence produces a token list, with `ok == false` when it hit an
// unterminated string or unbalanced brackets.

enum class TokenKind { Identifier, Number, String, Operator };

struct Token {
    TokenKind kind;
    std::string_view text;
    std::size_t offset;     // byte offset into the source
    std::size_t line;       // 1-based
    std::size_t column;     // 0-based, in bytes
    int depth;              // bracket nesting level the token sits at
    bool starts_line;       // first token of a logical line
};

struct TokenStream {
    std::vector<Token> tokens;
    bool ok = true;
};

namespace detail {

inline bool ident_start(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 0x80;
}

inline bool ident_char(unsigned char c) {
    return ident_start(c) || (c >= '0' && c <= '9');
}

inline bool string_prefix(std::string_view p) {
    if (p.empty() || p.size() > 2) return false;
    for (char c : p) {
        switch (c) {
        case 'r': case 'R': case 'b': case 'B': case 'u': case 'U': case 'f': case 'F': break;
        default: return false;
        }
    }
    return true;
}

inline constexpr std::array<std::string_view, 27> kOperators{
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==",
    "!=",  "+=",  "-=",  "*=",  "/=",  "%=", "&=", "|=", "^=", "@=", "<>", "~",  "`"};

} // namespace detail

inline TokenStream tokenize(std::string_view src) {
    TokenStream out;
    std::size_t i = 0;
    std::size_t line = 1;
    std::size_t line_begin = 0;
    int depth = 0;
    bool at_line_start = true;

    auto push = [&](TokenKind kind, std::size_t begin, std::size_t end, std::size_t tok_line, std::size_t tok_col) {
        out.tokens.push_back(
            Token{kind, src.substr(begin, end - begin), begin, tok_line, tok_col, depth, at_line_start});
        at_line_start = false;
    };
    auto newline = [&](std::size_t pos) {
        ++line;
        line_begin = pos + 1;
    };

    while (i < src.size()) {
        unsigned char c = static_cast<unsigned char>(src[i]);

        if (c == '\n') {
            newline(i);
            if (depth == 0) at_line_start = true;
            ++i;
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
            ++i;
            continue;
        }
        if (c == '\\' && i + 1 < src.size() && (src[i + 1] == '\n' || src[i + 1] == '\r')) {
            // explicit line continuation
            i += 1;
            if (src[i] == '\r') ++i;
            if (i < src.size() && src[i] == '\n') {
                newline(i);
                ++i;
            }
            continue;
        }
        if (c == '#') {
            while (i < src.size() && src[i] != '\n') ++i;
            continue;
        }

        const std::size_t begin = i;
        const std::size_t tok_line = line;
        const std::size_t tok_col = i - line_begin;

        if (detail::ident_start(c)) {
            std::size_t j = i;
            while (j < src.size() && detail::ident_char(static_cast<unsigned char>(src[j]))) ++j;
            if (j < src.size() && (src[j] == '\'' || src[j] == '"') && detail::string_prefix(src.substr(i, j - i))) {
                i = j;  // prefixed string literal; fall through to the string branch
                c = static_cast<unsigned char>(src[i]);
            } else {
                push(TokenKind::Identifier, begin, j, tok_line, tok_col);
                i = j;
                continue;
            }
        }

        if (c == '\'' || c == '"') {
            const char q = static_cast<char>(c);
            const bool triple = i + 2 < src.size() && src[i + 1] == q && src[i + 2] == q;
            std::size_t j = i + (triple ? 3 : 1);
            bool closed = false;
            while (j < src.size()) {
                char d = src[j];
                if (d == '\\' && j + 1 < src.size()) {
                    if (src[j + 1] == '\n') newline(j + 1);
                    j += 2;
                    continue;
                }
                if (d == '\n') {
                    if (!triple) break;
                    newline(j);
                }
                if (d == q) {
                    if (!triple) {
                        closed = true;
                        ++j;
                        break;
                    }
                    if (j + 2 < src.size() && src[j + 1] == q && src[j + 2] == q) {
                        closed = true;
                        j += 3;
                        break;
                    }
                }
                ++j;
            }
            if (!closed) out.ok = false;
            push(TokenKind::String, begin, j, tok_line, tok_col);
            i = j;
            continue;
        }

        if ((c >= '0' && c <= '9') || (c == '.' && i + 1 < src.size() && src[i + 1] >= '0' && src[i + 1] <= '9')) {
            std::size_t j = i;
            while (j < src.size()) {
                unsigned char d = static_cast<unsigned char>(src[j]);
                if (detail::ident_char(d) || d == '.') {
                    ++j;
                } else if ((d == '+' || d == '-') && (src[j - 1] == 'e' || src[j - 1] == 'E') &&
                           !(src.substr(i, 2) == "0x" || src.substr(i, 2) == "0X")) {
                    ++j;
                } else {
                    break;
                }
            }
            push(TokenKind::Number, begin, j, tok_line, tok_col);
            i = j;
            continue;
        }

        std::size_t len = 1;
        for (std::string_view op : detail::kOperators) {
            if (src.substr(i, op.size()) == op) {
                len = op.size();
                break;
            }
        }
        if (c == ')' || c == ']' || c == '}') {
            --depth;
            if (depth < 0) {
                out.ok = false;
                depth = 0;
            }
        }
        push(TokenKind::Operator, begin, i + len, tok_line, tok_col);
        if (c == '(' || c == '[' || c == '{') ++depth;
        i += len;
    }
    if (depth != 0) out.ok = false;
    return out;
}

} // namespace cmh
