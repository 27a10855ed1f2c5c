#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualrec {

inline std::string base64_encode(const uint8_t* data, size_t n) {
    static const char tab[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= n; i += 3) {
        uint32_t v = (uint32_t(data[i]) << 16) | (uint32_t(data[i + 1]) << 8) | data[i + 2];
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += tab[(v >> 6) & 63];
        out += tab[v & 63];
    }
    size_t rem = n - i;
    if (rem == 1) {
        uint32_t v = uint32_t(data[i]) << 16;
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += "==";
    } else if (rem == 2) {
        uint32_t v = (uint32_t(data[i]) << 16) | (uint32_t(data[i + 1]) << 8);
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += tab[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

inline std::vector<uint8_t> base64_decode(const std::string& s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        if (c == '=') return -1;
        throw std::runtime_error("base64: invalid character");
    };
    if (s.size() % 4 != 0) throw std::runtime_error("base64: length not multiple of 4");
    std::vector<uint8_t> out;
    out.reserve(s.size() / 4 * 3);
    for (size_t i = 0; i < s.size(); i += 4) {
        int a = val(s[i]), b = val(s[i + 1]), c = val(s[i + 2]), d = val(s[i + 3]);
        if (a < 0 || b < 0) throw std::runtime_error("base64: malformed block");
        uint32_t v = (uint32_t(a) << 18) | (uint32_t(b) << 12);
        out.push_back(uint8_t(v >> 16));
        if (c >= 0) {
            v |= uint32_t(c) << 6;
            out.push_back(uint8_t((v >> 8) & 0xFF));
            if (d >= 0) {
                v |= uint32_t(d);
                out.push_back(uint8_t(v & 0xFF));
            }
        }
    }
    return out;
}

// Little-endian float32 payloads used by the dataset / checkpoint formats.
inline std::string floats_to_base64(const std::vector<float>& v) {
    static_assert(sizeof(float) == 4);
    std::vector<uint8_t> bytes(v.size() * 4);
    for (size_t i = 0; i < v.size(); ++i) {
        uint32_t u;
        std::memcpy(&u, &v[i], 4);
        bytes[4 * i + 0] = uint8_t(u & 0xFF);
        bytes[4 * i + 1] = uint8_t((u >> 8) & 0xFF);
        bytes[4 * i + 2] = uint8_t((u >> 16) & 0xFF);
        bytes[4 * i + 3] = uint8_t((u >> 24) & 0xFF);
    }
    return base64_encode(bytes.data(), bytes.size());
}

inline std::vector<float> base64_to_floats(const std::string& s) {
    std::vector<uint8_t> bytes = base64_decode(s);
    if (bytes.size() % 4 != 0) throw std::runtime_error("base64 float payload: bad size");
    std::vector<float> v(bytes.size() / 4);
    for (size_t i = 0; i < v.size(); ++i) {
        uint32_t u = uint32_t(bytes[4 * i]) | (uint32_t(bytes[4 * i + 1]) << 8) |
                     (uint32_t(bytes[4 * i + 2]) << 16) | (uint32_t(bytes[4 * i + 3]) << 24);
        std::memcpy(&v[i], &u, 4);
    }
    return v;
}

}  // namespace dualrec
