#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ouroboros/arena.hpp"
#include "ouroboros/genome.hpp"
#include "ouroboros/neuralcore.hpp"
#include "ouroboros/telemetry.hpp"

namespace ouroboros {

struct OrganismConfig {
  Genome genome;
  std::string genome_text;
  OrganismId organism = 1;
  std::optional<OrganismId> parent;
  std::uint64_t seed = 0;
  TrainingOptions training;
  MutationScales mutation;
  std::filesystem::path arena;
  bool copy_host = false;

  static OrganismConfig for_genome(const Genome& g, std::uint64_t seed);
  bool valid() const { return genome.legal() && genome_text == serialize_genome(genome) && training.max_epochs >= 1; }
};

/// Raised when the epoch cap passes without an exact reproduction.
class Sterile : public std::runtime_error {
 public:
  explicit Sterile(std::uint64_t epochs);
  std::uint64_t epochs() const { return epochs_; }

 private:
  std::uint64_t epochs_;
};

/// One organism's training loop, advanced an epoch at a time so the
/// simulation scheduler can interleave organisms.
///
/// An epoch is: sampled rollout, loss, BPTT, clip, Adam step, and (every
/// eval_every epochs) an argmax rollout compared with the genome text.
class Trainer {
 public:
  Trainer(const Genome& genome, std::uint64_t seed, const TrainingOptions& options);

  struct EpochResult {
    double loss = 0.0;
    bool matured = false;
  };
  EpochResult step();

  const Genome& genome() const { return genome_; }
  const std::string& target_text() const { return target_text_; }
  std::uint64_t epochs() const { return epochs_; }
  bool matured() const { return matured_; }
  bool exhausted() const { return !matured_ && epochs_ >= options_.max_epochs; }
  /// The argmax string that matched the genome (empty until matured).
  const std::string& generated() const { return generated_; }
  const NetworkParams& params() const { return params_; }

 private:
  Genome genome_;
  std::string target_text_;
  std::vector<int> target_;
  TrainingOptions options_;
  std::mt19937_64 rng_;
  NetworkParams params_;
  AdamState adam_;
  std::uint64_t epochs_ = 0;
  bool matured_ = false;
  std::string generated_;
};

struct Maturity {
  NetworkParams params;
  std::uint64_t epochs = 0;
  std::string generated;
  double wall_seconds = 0.0;
};

/// Trains until the argmax rollout reproduces the genome text byte-exactly.
/// Throws Sterile once max_epochs pass without that.
Maturity run_to_maturity(const OrganismConfig& cfg);

/// Mixes parent seed, child index and parent id into a child seed.
std::uint64_t child_seed(std::uint64_t parent_seed, unsigned child_index, OrganismId parent);
/// Seed of the stream an organism draws its offspring mutations from.
std::uint64_t mutation_seed(std::uint64_t seed, OrganismId organism);

struct ChildSpec {
  OrganismId organism = 0;
  OrganismId parent = 0;
  Genome genome;
  std::uint64_t seed = 0;
  std::filesystem::path genome_path;
};

/// Where offspring go. Process mode writes files and launches OS
/// processes; sim mode queues tasks.
class Nursery {
 public:
  virtual ~Nursery() = default;
  /// Assigns ids, writes both child genome files and records the parent's
  /// replication event as one atomic step.
  virtual std::array<ChildSpec, 2> commit(const OrganismConfig& parent, const std::array<Genome, 2>& genomes,
                                          const std::array<std::uint64_t, 2>& seeds) = 0;
  virtual void spawn(const ChildSpec& child) = 0;
};

/// Parses the network's own product, mutates it twice independently, and
/// hands both children to the nursery. `generated` must equal the stored
/// genome text (std::logic_error otherwise, before anything is written).
std::array<ChildSpec, 2> emit_offspring(const OrganismConfig& cfg, const std::string& generated, std::mt19937_64& rng,
                                        Nursery& nursery);

/// Copies the running executable to `target` (mode 0755) and returns it.
std::filesystem::path copy_host(const std::filesystem::path& target);

/// Exit statuses of run-organism.
enum OrganismExit : int {
  kExitReplicated = 0,
  kExitSterile = 2,
  kExitBadGenome = 3,
  kExitNotAdmitted = 4,
};

struct OrganismOverrides {
  std::optional<std::uint64_t> max_epochs;
  std::optional<FeedbackMode> feedback;
  bool copy_host = false;
};

/// Full process-mode lifecycle for one organism: admission, training,
/// maturity record, offspring. Returns the exit status.
int organism_main(const std::filesystem::path& genome_path, const std::filesystem::path& arena_path,
                  std::uint64_t seed, const OrganismOverrides& overrides = {});

}  // namespace ouroboros
