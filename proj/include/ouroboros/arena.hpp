#pragma once

#include <sys/types.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ouroboros/genome.hpp"
#include "ouroboros/neuralcore.hpp"
#include "ouroboros/telemetry.hpp"

namespace ouroboros {

struct TrainingOptions {
  std::uint64_t max_epochs = 200000;
  std::uint64_t eval_every = 1;
  FeedbackMode feedback = FeedbackMode::Continuous;
  double clip_norm = 5.0;
};

std::string_view to_string(FeedbackMode mode);
FeedbackMode feedback_mode_from_string(std::string_view name);

/// Settings shared by every organism living in one arena directory
/// (persisted as arena.json by the supervisor).
struct ArenaSettings {
  TrainingOptions training;
  MutationScales mutation;
  bool copy_host = false;
  std::size_t capacity = 16;
  std::uint64_t budget = 500;
  std::string eviction = "kill-oldest";
  std::uint64_t seed = 0;
};

/// Filesystem layout of an arena:
///
///   events.log         append-only event log
///   arena.json         ArenaSettings
///   supervisor.pid     pid of the live supervisor, if any
///   g<id>.org          genome of organism <id>
///   h<id>              host copy for organism <id> (copy-host mode)
///   requests/<id>.req  pending admission request
///   requests/<id>.ok   admission grant
class Arena {
 public:
  explicit Arena(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path events_path() const { return root_ / "events.log"; }
  std::filesystem::path settings_path() const { return root_ / "arena.json"; }
  std::filesystem::path supervisor_pid_path() const { return root_ / "supervisor.pid"; }
  std::filesystem::path requests_dir() const { return root_ / "requests"; }
  std::filesystem::path genome_path(OrganismId id) const;
  std::filesystem::path host_copy_path(OrganismId id) const;
  std::filesystem::path request_path(OrganismId id) const;
  std::filesystem::path grant_path(OrganismId id) const;

  EventLog& log() { return *log_; }

  ArenaSettings load_settings() const;
  void save_settings(const ArenaSettings& settings) const;

  /// Pid recorded in supervisor.pid when that process is still running.
  std::optional<pid_t> live_supervisor() const;

  /// Parses "g<id>.org".
  static std::optional<OrganismId> id_from_genome_path(const std::filesystem::path& path);

 private:
  std::filesystem::path root_;
  std::unique_ptr<EventLog> log_;
};

/// Next unused organism id according to the log (1 for an empty log).
OrganismId next_organism_id(const std::vector<Event>& events);
/// Parent recorded for `child` by a replication event, if any.
std::optional<OrganismId> announced_parent(const std::vector<Event>& events, OrganismId child);

/// An admission request left in requests/ by a freshly started organism.
struct SpawnRequest {
  OrganismId organism = 0;
  std::optional<OrganismId> parent;
  pid_t pid = 0;
  std::uint64_t seed = 0;
  Genome genome;
};

void write_request(const Arena& arena, const SpawnRequest& request);
std::vector<SpawnRequest> pending_requests(const Arena& arena);

/// Writes `content` to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::filesystem::path current_executable();
/// fork + execv. The child joins process group `pgid` (0 = its own new
/// group, -1 = inherit). A non-empty `output` gets the child's stdout and
/// stderr appended to it. Throws std::system_error if fork fails.
pid_t launch_process(const std::filesystem::path& program, const std::vector<std::string>& args, pid_t pgid = -1,
                     const std::filesystem::path& output = {});
bool process_alive(pid_t pid);
double unix_time();

}  // namespace ouroboros
