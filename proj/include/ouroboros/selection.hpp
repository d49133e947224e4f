#pragma once

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ouroboros/arena.hpp"
#include "ouroboros/genome.hpp"
#include "ouroboros/neuralcore.hpp"
#include "ouroboros/telemetry.hpp"

namespace ouroboros {

enum class EvictionPolicy { KillOldest, RejectNew };
std::string_view to_string(EvictionPolicy policy);
EvictionPolicy eviction_policy_from_string(std::string_view name);

enum class ExecutionMode { Sim, Process };

enum class AdmitDecision { Admitted, AdmittedWithEviction, Rejected };
std::string_view to_string(AdmitDecision decision);

/// The whole admission policy. It sees only how many organisms are live,
/// the cap, and whether the arena is closing; never losses or genomes.
AdmitDecision admit_decision(std::size_t live, std::size_t capacity, bool shutting_down, EvictionPolicy policy);

/// Live organisms in admission order (front = oldest).
class Registry {
 public:
  struct Entry {
    OrganismId organism = 0;
    std::uint64_t stamp = 0;
    pid_t pid = -1;
  };

  struct AdmitResult {
    AdmitDecision decision = AdmitDecision::Admitted;
    std::optional<Entry> evicted;
  };

  /// Applies admit_decision; on eviction the oldest entry is removed and
  /// returned so the caller can terminate it.
  AdmitResult admit(OrganismId organism, pid_t pid, std::size_t capacity, bool shutting_down, EvictionPolicy policy);
  bool remove(OrganismId organism);
  bool contains(OrganismId organism) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<Entry>& entries() const { return entries_; }

 private:
  std::deque<Entry> entries_;
  std::uint64_t next_stamp_ = 0;
};

struct PopulationConfig {
  std::size_t capacity = 16;
  std::uint64_t budget = 500;
  ExecutionMode mode = ExecutionMode::Sim;
  EvictionPolicy eviction = EvictionPolicy::KillOldest;
  MutationScales mutation;
  TrainingOptions training;
  std::uint64_t seed = 1;
  std::chrono::milliseconds poll_interval{200};
  std::filesystem::path arena;  // sim mode: empty keeps everything in memory
  Genome ancestor = Genome::ancestor();
  bool copy_host = false;
  std::filesystem::path host;  // process mode: empty = this executable

  bool valid() const { return capacity >= 1 && budget >= 1; }
};

/// Forward+backward multiply-accumulate estimate of one training epoch:
/// L * (8*hid*(in_dim+hid) + 8*hid*(2*hid) + 2*hid*out_dim).
double cost_epoch(const NetDims& dims, int length);

struct RunResult {
  std::vector<Event> events;
  ValidationReport validation;
};

struct ScheduleSlot {
  OrganismId organism = 0;
  double clock = 0.0;       // virtual time the organism has reached
  double epoch_cost = 0.0;  // cost of its next epoch
};

/// The organism whose next epoch would finish first; ties go to the lower id.
OrganismId next_to_run(std::span<const ScheduleSlot> slots);

/// Deterministic cooperative simulation. The scheduler always runs one
/// epoch of the organism whose clock would be lowest after that epoch, so
/// organisms progress as if running in parallel at equal speed.
RunResult sim_run(const PopulationConfig& cfg);

class ArenaCorrupt : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class SpawnFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Real-process supervisor: launches the ancestor, grants admission
/// requests in id order and kills the oldest organism at capacity. Once
/// `budget` organisms have been spawned further requests are refused; the
/// first refusal shuts the arena down and kills the survivors.
RunResult supervisor_run(const PopulationConfig& cfg);

}  // namespace ouroboros
