#include "unmix/io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace unmix::io {

std::string format_double(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, end);
}

double parse_double(std::string_view text) {
    double value = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        // from_chars rejects "inf"/"nan" spellings produced by some writers.
        if (text == "inf") return INFINITY;
        if (text == "-inf") return -INFINITY;
        throw std::invalid_argument("not a number: '" + std::string(text) + "'");
    }
    return value;
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    auto [end, ec] = std::to_chars(buf, buf + 16, value, 16);
    std::string s(buf, end);
    return std::string(16 - s.size(), '0') + s;
}

void write_array(std::ostream& out, std::string_view tag, std::span<const double> values) {
    out << tag << ' ' << values.size();
    for (double v : values) out << ' ' << format_double(v);
    out << '\n';
}

void write_array(std::ostream& out, std::string_view tag, std::span<const std::size_t> values) {
    out << tag << ' ' << values.size();
    for (std::size_t v : values) out << ' ' << v;
    out << '\n';
}

namespace {

std::istringstream tagged_line(std::istream& in, std::string_view tag, std::size_t expected,
                               std::size_t& count) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("unexpected end of file before '" +
                                                          std::string(tag) + "'");
    std::istringstream ss(line);
    std::string got;
    ss >> got >> count;
    if (got != tag)
        throw std::runtime_error("expected field '" + std::string(tag) + "', found '" + got + "'");
    if (!ss) throw std::runtime_error("field '" + std::string(tag) + "' lacks a count");
    if (expected != 0 && count != expected)
        throw std::runtime_error("field '" + std::string(tag) + "' has " + std::to_string(count) +
                                 " entries, expected " + std::to_string(expected));
    return ss;
}

}  // namespace

std::vector<double> read_doubles(std::istream& in, std::string_view tag, std::size_t expected) {
    std::size_t count = 0;
    auto ss = tagged_line(in, tag, expected, count);
    std::vector<double> values(count);
    std::string token;
    for (auto& v : values) {
        if (!(ss >> token)) throw std::runtime_error("field '" + std::string(tag) + "' truncated");
        try {
            v = parse_double(token);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("field '" + std::string(tag) + "': " + e.what());
        }
    }
    return values;
}

std::vector<std::size_t> read_indices(std::istream& in, std::string_view tag,
                                      std::size_t expected) {
    std::size_t count = 0;
    auto ss = tagged_line(in, tag, expected, count);
    std::vector<std::size_t> values(count);
    for (auto& v : values)
        if (!(ss >> v)) throw std::runtime_error("field '" + std::string(tag) + "' truncated");
    return values;
}

int read_header(std::istream& in, std::string_view magic) {
    std::string got, version;
    if (!(in >> got >> version) || got != magic || version.size() < 2 || version[0] != 'v')
        throw std::runtime_error("not a " + std::string(magic) + " file");
    std::string rest;
    std::getline(in, rest);
    return std::stoi(version.substr(1));
}

std::string read_field(std::istream& in, std::string_view key) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("missing field '" + std::string(key) + "'");
    const auto space = line.find(' ');
    if (line.substr(0, space) != key)
        throw std::runtime_error("expected field '" + std::string(key) + "', found '" +
                                 line.substr(0, space) + "'");
    return space == std::string::npos ? std::string{} : line.substr(space + 1);
}

}  // namespace unmix::io
