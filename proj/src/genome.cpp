#include "ouroboros/genome.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace ouroboros {

int Alphabet::index_of(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  switch (c) {
    case ' ': return 36;
    case '\n': return 37;
    case '.': return 38;
    default: return -1;
  }
}

char Alphabet::char_at(std::size_t index) {
  if (index >= kSize) throw std::out_of_range("alphabet index out of range");
  return kChars[index];
}

bool Genome::legal() const {
  return lr_micros >= kLrMicrosMin && lr_micros <= kLrMicrosMax && hid >= kHidMin &&
         hid <= kHidMax && noi >= kNoiMin && noi <= kNoiMax && aux >= kAuxMin && aux <= kAuxMax;
}

Genome Genome::from_values(double lr, int hid, int noi, int aux) {
  if (!std::isfinite(lr)) throw std::invalid_argument("lr must be finite");
  Genome g{static_cast<std::int64_t>(std::llround(lr * 1e6)), hid, noi, aux};
  if (!g.legal()) throw std::invalid_argument("genome field out of range");
  return g;
}

ParseError::ParseError(int line, std::string reason)
    : std::runtime_error("genome line " + std::to_string(line) + ": " + reason),
      line_(line),
      reason_(std::move(reason)) {}

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) throw ParseError(static_cast<int>(lines.size()) + 1, "missing newline");
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

int parse_digits(std::string_view digits, int line) {
  int value = 0;
  for (char c : digits) {
    if (c < '0' || c > '9') throw ParseError(line, "expected digit");
    value = value * 10 + (c - '0');
  }
  return value;
}

int parse_int_field(std::string_view line_text, std::string_view key, int lo, int hi, int line) {
  if (line_text.size() != key.size() + 4) throw ParseError(line, "wrong width");
  if (line_text.substr(0, key.size()) != key || line_text[key.size()] != ' ')
    throw ParseError(line, "expected key '" + std::string(key) + "'");
  int value = parse_digits(line_text.substr(key.size() + 1), line);
  if (value < lo || value > hi) throw ParseError(line, std::string(key) + " out of range");
  return value;
}

}  // namespace

Genome parse_genome(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!Alphabet::contains(text[i])) {
      auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(i), '\n');
      throw ParseError(static_cast<int>(line), "illegal character");
    }
  }
  auto lines = split_lines(text);
  if (lines.size() != 6) throw ParseError(static_cast<int>(std::min<std::size_t>(lines.size(), 7)), "expected 6 lines");
  if (lines[0] != "org1") throw ParseError(1, "expected 'org1'");

  // "lr d.dddddd"
  std::string_view lr_line = lines[1];
  if (lr_line.size() != 11) throw ParseError(2, "wrong width");
  if (lr_line.substr(0, 3) != "lr ") throw ParseError(2, "expected key 'lr'");
  if (lr_line[4] != '.') throw ParseError(2, "expected decimal point");
  int whole = parse_digits(lr_line.substr(3, 1), 2);
  int frac = parse_digits(lr_line.substr(5, 6), 2);
  std::int64_t micros = static_cast<std::int64_t>(whole) * 1000000 + frac;
  if (micros < Genome::kLrMicrosMin || micros > Genome::kLrMicrosMax) throw ParseError(2, "lr out of range");

  Genome g;
  g.lr_micros = micros;
  g.hid = parse_int_field(lines[2], "hid", Genome::kHidMin, Genome::kHidMax, 3);
  g.noi = parse_int_field(lines[3], "noi", Genome::kNoiMin, Genome::kNoiMax, 4);
  g.aux = parse_int_field(lines[4], "aux", Genome::kAuxMin, Genome::kAuxMax, 5);
  if (lines[5] != "end") throw ParseError(6, "expected 'end'");
  return g;
}

std::string serialize_genome(const Genome& g) {
  if (!g.legal()) throw std::invalid_argument("cannot serialize illegal genome");
  char buf[64];
  int n = std::snprintf(buf, sizeof buf, "org1\nlr %d.%06d\nhid %03d\nnoi %03d\naux %03d\nend\n",
                        static_cast<int>(g.lr_micros / 1000000), static_cast<int>(g.lr_micros % 1000000),
                        g.hid, g.noi, g.aux);
  return std::string(buf, static_cast<std::size_t>(n));
}

MutationDraw draw_mutation(std::mt19937_64& rng, const MutationScales& scales) {
  MutationDraw d;
  if (scales.sigma_lr > 0.0) d.lr_delta = std::normal_distribution<double>(0.0, scales.sigma_lr)(rng);
  if (scales.int_delta_max > 0) {
    std::uniform_int_distribution<int> delta(-scales.int_delta_max, scales.int_delta_max);
    d.hid_delta = delta(rng);
    d.noi_delta = delta(rng);
    d.aux_delta = delta(rng);
  }
  return d;
}

Genome apply_mutation(const Genome& g, const MutationDraw& draw) {
  Genome out;
  double micros = static_cast<double>(g.lr_micros) + draw.lr_delta * 1e6;
  micros = std::clamp(micros, static_cast<double>(Genome::kLrMicrosMin), static_cast<double>(Genome::kLrMicrosMax));
  out.lr_micros = static_cast<std::int64_t>(std::llround(micros));
  out.hid = std::clamp(g.hid + draw.hid_delta, Genome::kHidMin, Genome::kHidMax);
  out.noi = std::clamp(g.noi + draw.noi_delta, Genome::kNoiMin, Genome::kNoiMax);
  out.aux = std::clamp(g.aux + draw.aux_delta, Genome::kAuxMin, Genome::kAuxMax);
  return out;
}

Genome mutate_genome(const Genome& g, std::mt19937_64& rng, const MutationScales& scales) {
  return apply_mutation(g, draw_mutation(rng, scales));
}

}  // namespace ouroboros
