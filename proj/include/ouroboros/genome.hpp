#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ouroboros {

/// Characters an organism's genome text may contain, in index order:
/// a-z, 0-9, space, newline, '.'.
class Alphabet {
 public:
  static constexpr std::size_t kSize = 39;

  static constexpr std::string_view chars() { return kChars; }
  static bool contains(char c) { return index_of(c) >= 0; }
  /// Returns -1 for characters outside the alphabet.
  static int index_of(char c);
  static char char_at(std::size_t index);

 private:
  static constexpr std::string_view kChars = "abcdefghijklmnopqrstuvwxyz0123456789 \n.";
  static_assert(kChars.size() == kSize);
};

/// The heritable hyperparameters of one organism.
///
/// The learning rate is held in integer millionths so the six-decimal text
/// form round-trips exactly.
struct Genome {
  static constexpr std::int64_t kLrMicrosMin = 1;
  static constexpr std::int64_t kLrMicrosMax = 999999;
  static constexpr int kHidMin = 4, kHidMax = 999;
  static constexpr int kNoiMin = 0, kNoiMax = 64;
  static constexpr int kAuxMin = 0, kAuxMax = 64;
  static constexpr std::size_t kTextLength = 45;

  std::int64_t lr_micros = 1000;
  int hid = 16;
  int noi = 8;
  int aux = 8;

  double lr() const { return static_cast<double>(lr_micros) * 1e-6; }
  bool legal() const;

  static Genome ancestor() { return Genome{}; }
  /// Rounds `lr` to the nearest millionth; throws std::invalid_argument
  /// when any field falls outside its legal range.
  static Genome from_values(double lr, int hid, int noi, int aux);

  friend bool operator==(const Genome&, const Genome&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, std::string reason);
  int line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  int line_;
  std::string reason_;
};

/// Parses canonical genome text. Any deviation from the canonical form
/// (width, key, character, range, trailing bytes) raises ParseError.
Genome parse_genome(std::string_view text);
std::string serialize_genome(const Genome& g);

/// Per-replication perturbation scales. Integer deltas are uniform over
/// {-int_delta_max, ..., +int_delta_max}.
struct MutationScales {
  double sigma_lr = 0.002;
  int int_delta_max = 5;
};

/// One concrete set of drawn perturbations.
struct MutationDraw {
  double lr_delta = 0.0;
  int hid_delta = 0;
  int noi_delta = 0;
  int aux_delta = 0;
};

MutationDraw draw_mutation(std::mt19937_64& rng, const MutationScales& scales);
/// Adds the deltas and clamps every field to its legal range.
Genome apply_mutation(const Genome& g, const MutationDraw& draw);
Genome mutate_genome(const Genome& g, std::mt19937_64& rng, const MutationScales& scales);

}  // namespace ouroboros
