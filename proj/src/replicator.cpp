#include "ouroboros/replicator.hpp"

#include <unistd.h>

#include <chrono>
#include <thread>

#include "ouroboros/selection.hpp"

namespace ouroboros {

OrganismConfig OrganismConfig::for_genome(const Genome& g, std::uint64_t seed) {
  OrganismConfig cfg;
  cfg.genome = g;
  cfg.genome_text = serialize_genome(g);
  cfg.seed = seed;
  return cfg;
}

Sterile::Sterile(std::uint64_t epochs)
    : std::runtime_error("sterile after " + std::to_string(epochs) + " epochs"), epochs_(epochs) {}

namespace {

std::vector<int> encode(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(Alphabet::index_of(c));
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Separate stream for mutation draws so they do not depend on how many
// epochs training took.
constexpr unsigned kMutationStream = 0x6d75u;

}  // namespace

Trainer::Trainer(const Genome& genome, std::uint64_t seed, const TrainingOptions& options)
    : genome_(genome),
      target_text_(serialize_genome(genome)),
      target_(encode(target_text_)),
      options_(options),
      rng_(seed),
      params_(init_params(NetDims::from_genome(genome), rng_)),
      adam_(AdamState::fresh(params_.size())) {
  if (options_.eval_every == 0) throw std::invalid_argument("eval_every must be >= 1");
}

Trainer::EpochResult Trainer::step() {
  const int length = static_cast<int>(target_.size());
  ++epochs_;
  auto cache = generate_sequence(params_, length, rng_, RolloutMode::TrainSampled, options_.feedback);
  EpochResult result;
  result.loss = sequence_loss(cache, target_);
  Gradients grads = bptt(cache, target_, params_);
  clip_gradients(grads, options_.clip_norm);
  adam_step(params_, grads, adam_, genome_.lr());

  if (epochs_ % options_.eval_every == 0) {
    auto eval = generate_sequence(params_, length, rng_, RolloutMode::EvalArgmax, options_.feedback, target_);
    if (eval.length == length && eval.emitted == target_) {
      matured_ = true;
      generated_ = eval.text();
    }
  }
  result.matured = matured_;
  return result;
}

Maturity run_to_maturity(const OrganismConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("invalid organism config");
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(cfg.genome, cfg.seed, cfg.training);
  while (!trainer.matured()) {
    if (trainer.exhausted()) throw Sterile(trainer.epochs());
    trainer.step();
  }
  return Maturity{trainer.params(), trainer.epochs(), trainer.generated(),
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
}

std::uint64_t child_seed(std::uint64_t parent_seed, unsigned child_index, OrganismId parent) {
  return splitmix64(splitmix64(parent_seed) ^ splitmix64((static_cast<std::uint64_t>(child_index) << 48) ^ parent));
}

std::uint64_t mutation_seed(std::uint64_t seed, OrganismId organism) {
  return child_seed(seed, kMutationStream, organism);
}

std::array<ChildSpec, 2> emit_offspring(const OrganismConfig& cfg, const std::string& generated, std::mt19937_64& rng,
                                        Nursery& nursery) {
  if (generated != cfg.genome_text) throw std::logic_error("emit_offspring: generated text differs from genome");
  const Genome self = parse_genome(generated);
  std::array<Genome, 2> genomes{mutate_genome(self, rng, cfg.mutation), mutate_genome(self, rng, cfg.mutation)};
  std::array<std::uint64_t, 2> seeds{child_seed(cfg.seed, 0, cfg.organism), child_seed(cfg.seed, 1, cfg.organism)};
  auto children = nursery.commit(cfg, genomes, seeds);
  for (const auto& child : children) nursery.spawn(child);
  return children;
}

std::filesystem::path copy_host(const std::filesystem::path& target) {
  std::filesystem::copy_file(current_executable(), target, std::filesystem::copy_options::overwrite_existing);
  std::filesystem::permissions(target, std::filesystem::perms::owner_all | std::filesystem::perms::group_read |
                                           std::filesystem::perms::group_exec | std::filesystem::perms::others_read |
                                           std::filesystem::perms::others_exec);
  return target;
}

namespace {

class ProcessNursery : public Nursery {
 public:
  ProcessNursery(Arena& arena, const ArenaSettings& settings) : arena_(arena), settings_(settings) {}

  std::array<ChildSpec, 2> commit(const OrganismConfig& parent, const std::array<Genome, 2>& genomes,
                                   const std::array<std::uint64_t, 2>& seeds) override {
    return arena_.log().transact([&](EventLog::Txn& txn) {
      const OrganismId first = next_organism_id(txn.read_all());
      std::array<ChildSpec, 2> children;
      for (unsigned k = 0; k < 2; ++k) {
        children[k] = ChildSpec{first + k, parent.organism, genomes[k], seeds[k], arena_.genome_path(first + k)};
        write_file_atomic(children[k].genome_path, serialize_genome(genomes[k]));
      }
      Event e;
      e.kind = EventKind::Replication;
      e.organism = parent.organism;
      e.children = {children[0].organism, children[1].organism};
      e.wall = unix_time();
      txn.append(e);
      return children;
    });
  }

  void spawn(const ChildSpec& child) override {
    std::filesystem::path host =
        settings_.copy_host ? copy_host(arena_.host_copy_path(child.organism)) : current_executable();
    std::vector<std::string> args{"run-organism",
                                  "--genome",
                                  child.genome_path.string(),
                                  "--arena",
                                  arena_.root().string(),
                                  "--seed",
                                  std::to_string(child.seed),
                                  "--max-epochs",
                                  std::to_string(settings_.training.max_epochs),
                                  "--feedback",
                                  std::string(to_string(settings_.training.feedback))};
    if (settings_.copy_host) args.emplace_back("--copy-host");
    launch_process(host, args);
  }

 private:
  Arena& arena_;
  const ArenaSettings& settings_;
};

Event organism_event(EventKind kind, OrganismId id) {
  Event e;
  e.kind = kind;
  e.organism = id;
  e.wall = unix_time();
  return e;
}

}  // namespace

int organism_main(const std::filesystem::path& genome_path, const std::filesystem::path& arena_path,
                  std::uint64_t seed, const OrganismOverrides& overrides) {
  Arena arena(arena_path);
  ArenaSettings settings = arena.load_settings();
  if (overrides.max_epochs) settings.training.max_epochs = *overrides.max_epochs;
  if (overrides.feedback) settings.training.feedback = *overrides.feedback;
  if (overrides.copy_host) settings.copy_host = true;

  std::optional<OrganismId> id = Arena::id_from_genome_path(genome_path);
  if (!id) id = arena.log().transact([](EventLog::Txn& t) { return next_organism_id(t.read_all()); });

  Genome genome;
  try {
    genome = parse_genome(read_text_file(genome_path));
  } catch (const std::exception& err) {
    Event e = organism_event(EventKind::Rejected, *id);
    e.reason = std::string("bad genome: ") + err.what();
    e.pid = ::getpid();
    arena.log().append(e);
    return kExitBadGenome;
  }

  OrganismConfig cfg = OrganismConfig::for_genome(genome, seed);
  cfg.organism = *id;
  cfg.parent = announced_parent(arena.log().read_all(), *id);
  cfg.training = settings.training;
  cfg.mutation = settings.mutation;
  cfg.arena = arena_path;
  cfg.copy_host = settings.copy_host;

  if (auto supervisor = arena.live_supervisor()) {
    write_request(arena, SpawnRequest{cfg.organism, cfg.parent, ::getpid(), seed, genome});
    const auto grant = arena.grant_path(cfg.organism);
    while (!std::filesystem::exists(grant)) {
      if (!process_alive(*supervisor)) return kExitNotAdmitted;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    std::filesystem::remove(grant);
  } else {
    Event e = organism_event(EventKind::Spawn, cfg.organism);
    e.parent = cfg.parent;
    e.genome = genome;
    e.seed = seed;
    e.pid = ::getpid();
    arena.log().append(e);
  }

  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(genome, seed, cfg.training);
  while (!trainer.matured() && !trainer.exhausted()) trainer.step();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!trainer.matured()) {
    Event e = organism_event(EventKind::Sterile, cfg.organism);
    e.epochs = trainer.epochs();
    e.exit_code = kExitSterile;
    e.wall_seconds = seconds;
    arena.log().append(e);
    return kExitSterile;
  }

  Event matured = organism_event(EventKind::Maturity, cfg.organism);
  matured.genome = genome;
  matured.epochs = trainer.epochs();
  matured.cost = static_cast<double>(trainer.epochs()) *
                 cost_epoch(NetDims::from_genome(genome), static_cast<int>(Genome::kTextLength));
  matured.wall_seconds = seconds;
  arena.log().append(matured);

  std::mt19937_64 mutation_rng(mutation_seed(seed, cfg.organism));
  ProcessNursery nursery(arena, settings);
  emit_offspring(cfg, trainer.generated(), mutation_rng, nursery);
  return kExitReplicated;
}

}  // namespace ouroboros
