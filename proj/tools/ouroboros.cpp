#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ouroboros/genome.hpp"
#include "ouroboros/neuralcore.hpp"
#include "ouroboros/replicator.hpp"
#include "ouroboros/selection.hpp"
#include "ouroboros/telemetry.hpp"
#include "selftest.hpp"

using namespace ouroboros;

namespace {

constexpr const char* kArenaEnv = "OUROBOROS_ARENA";

std::string default_arena() {
  const char* env = std::getenv(kArenaEnv);
  return env && *env ? env : "arena";
}

// One line that, pasted back after the program name, reproduces the run.
class ConfigLine {
 public:
  explicit ConfigLine(std::string subcommand) { out_ << "config: " << subcommand; }
  template <typename T>
  ConfigLine& flag(const std::string& name, const T& value) {
    out_ << " --" << name << ' ' << value;
    return *this;
  }
  ConfigLine& sw(const std::string& name, bool on) {
    if (on) out_ << " --" << name;
    return *this;
  }
  void print(std::ostream& os = std::cout) const { os << out_.str() << std::endl; }

 private:
  std::ostringstream out_;
};

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct InitArgs {
  std::string arena = default_arena();
  double lr = 0.001;
  int hid = 16, noi = 8, aux = 8;
  std::uint64_t id = 1;
};

int cmd_init_ancestor(const InitArgs& a) {
  ConfigLine("init-ancestor")
      .flag("arena", a.arena)
      .flag("lr", fmt(a.lr))
      .flag("hid", a.hid)
      .flag("noi", a.noi)
      .flag("aux", a.aux)
      .flag("id", a.id)
      .print();
  Genome g;
  try {
    g = Genome::from_values(a.lr, a.hid, a.noi, a.aux);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  std::filesystem::create_directories(a.arena);
  const auto path = std::filesystem::path(a.arena) / ("g" + std::to_string(a.id) + ".org");
  write_file_atomic(path, serialize_genome(g));
  std::cout << path.string() << "\n";
  return 0;
}

struct OrganismArgs {
  std::string genome;
  std::string arena = default_arena();
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> max_epochs;
  std::optional<std::string> feedback;
  bool copy_host = false;
};

int cmd_run_organism(const OrganismArgs& a) {
  ConfigLine line("run-organism");
  line.flag("genome", a.genome).flag("arena", a.arena).flag("seed", a.seed);
  if (a.max_epochs) line.flag("max-epochs", *a.max_epochs);
  if (a.feedback) line.flag("feedback", *a.feedback);
  line.sw("copy-host", a.copy_host).print();
  OrganismOverrides o;
  o.max_epochs = a.max_epochs;
  if (a.feedback) o.feedback = feedback_mode_from_string(*a.feedback);
  o.copy_host = a.copy_host;
  try {
    return organism_main(a.genome, a.arena, a.seed, o);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitBadGenome;
  }
}

struct EvolveArgs {
  std::string mode = "sim";
  std::size_t capacity = 16;
  std::uint64_t budget = 500;
  std::uint64_t seed = 1;
  double sigma_lr = 0.002;
  int int_delta = 5;
  std::string arena = default_arena();
  std::string eviction = "kill-oldest";
  std::uint64_t max_epochs = 200000;
  std::string feedback = "continuous";
  int poll_ms = 200;
  bool copy_host = false;
  std::string ancestor;
};

int cmd_evolve(const EvolveArgs& a) {
  ConfigLine("evolve")
      .flag("mode", a.mode)
      .flag("capacity", a.capacity)
      .flag("budget", a.budget)
      .flag("seed", a.seed)
      .flag("sigma-lr", fmt(a.sigma_lr))
      .flag("int-delta", a.int_delta)
      .flag("arena", a.arena)
      .flag("eviction", a.eviction)
      .flag("max-epochs", a.max_epochs)
      .flag("feedback", a.feedback)
      .flag("poll-ms", a.poll_ms)
      .sw("copy-host", a.copy_host)
      .flag("ancestor", a.ancestor.empty() ? std::string("default") : a.ancestor)
      .print();

  PopulationConfig cfg;
  cfg.capacity = a.capacity;
  cfg.budget = a.budget;
  cfg.seed = a.seed;
  cfg.mode = a.mode == "process" ? ExecutionMode::Process : ExecutionMode::Sim;
  cfg.eviction = eviction_policy_from_string(a.eviction);
  cfg.mutation.sigma_lr = a.sigma_lr;
  cfg.mutation.int_delta_max = a.int_delta;
  cfg.training.max_epochs = a.max_epochs;
  cfg.training.feedback = feedback_mode_from_string(a.feedback);
  cfg.poll_interval = std::chrono::milliseconds(a.poll_ms);
  cfg.arena = a.arena;
  cfg.copy_host = a.copy_host;
  if (!a.ancestor.empty() && a.ancestor != "default") cfg.ancestor = parse_genome(read_text_file(a.ancestor));

  RunResult result;
  try {
    result = cfg.mode == ExecutionMode::Sim ? sim_run(cfg) : supervisor_run(cfg);
  } catch (const ArenaCorrupt& err) {
    std::cerr << "arena error: " << err.what() << "\n";
    return 3;
  } catch (const SpawnFailure& err) {
    std::cerr << "spawn failure: " << err.what() << "\n";
    return 4;
  }
  const auto& v = result.validation;
  std::cout << "events " << result.events.size() << " spawned " << v.spawned << " matured " << v.matured
            << " evicted " << v.evicted << " sterile " << v.sterile << " rejected " << v.rejected << " alive "
            << v.alive << " max_population " << v.max_population << "\n";
  if (!v.valid()) {
    std::cout << "validation: FAIL seq " << v.violation->seq << " " << to_string(v.violation->kind) << ": "
              << v.violation->detail << "\n";
    return 1;
  }
  std::cout << "validation: ok\n";
  return 0;
}

struct StatsArgs {
  std::string arena = default_arena();
  std::size_t window = 16;
  std::string out = "stats.csv";
  std::string svg;
  std::string index = "maturity";
  std::string metric = "virtual";
  std::optional<std::size_t> capacity;
};

int cmd_stats(const StatsArgs& a) {
  ConfigLine line("stats");
  line.flag("arena", a.arena).flag("window", a.window).flag("out", a.out);
  if (!a.svg.empty()) line.flag("svg", a.svg);
  line.flag("index", a.index).flag("metric", a.metric);
  if (a.capacity) line.flag("capacity", *a.capacity);
  line.print();

  if (!std::filesystem::exists(std::filesystem::path(a.arena) / "events.log")) {
    std::cerr << "error: no events.log in " << a.arena << "\n";
    return 2;
  }
  Arena arena(a.arena);
  const auto events = EventLog::read_file(arena.events_path());
  const std::size_t capacity = a.capacity.value_or(arena.load_settings().capacity);
  const auto report = replay_validate(events, capacity);
  if (report.valid()) {
    std::cout << "validation: ok\n";
  } else {
    std::cout << "validation: FAIL seq " << report.violation->seq << " " << to_string(report.violation->kind) << ": "
              << report.violation->detail << "\n";
  }

  SummaryStats stats;
  try {
    stats = summarize(events, a.window, a.index == "spawn" ? IndexOrder::Spawn : IndexOrder::Maturity,
                      a.metric == "wall" ? CostMetric::Wall : CostMetric::Virtual);
  } catch (const InsufficientData& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  write_text_file(a.out, stats_to_csv(stats));
  if (!a.svg.empty()) write_text_file(a.svg, stats_to_svg(stats));
  std::cout << "matured " << stats.matured.size() << " first_quartile_mean " << fmt(stats.first_quartile_mean)
            << " last_quartile_mean " << fmt(stats.last_quartile_mean) << " ratio " << fmt(stats.quartile_ratio)
            << "\n";
  return report.valid() ? 0 : 1;
}

struct GradArgs {
  int np = 5, hid = 4, aux = 1, noi = 1, length = 6;
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  bool corrupt = false;
};

int cmd_gradcheck(const GradArgs& a) {
  ConfigLine("gradcheck")
      .flag("np", a.np)
      .flag("hid", a.hid)
      .flag("aux", a.aux)
      .flag("noi", a.noi)
      .flag("length", a.length)
      .flag("seed", a.seed)
      .flag("step", fmt(a.step))
      .flag("tolerance", fmt(a.tolerance))
      .sw("corrupt", a.corrupt)
      .print();
  NetDims dims;
  dims.np = a.np;
  dims.hid = a.hid;
  dims.aux = a.aux;
  dims.noi = a.noi;
  if (!dims.legal() || a.length < 1) {
    std::cerr << "error: illegal dimensions\n";
    return 2;
  }
  const std::size_t params = NetworkParams(dims).size();
  if (params > 500) {
    std::cerr << "error: " << params << " parameters; gradcheck is limited to 500\n";
    return 2;
  }
  const auto report = gradient_check(dims, a.length, a.seed, a.step, a.corrupt);
  const bool pass = report.max_rel_error < a.tolerance;
  std::cout << "parameters " << report.parameters << " max_rel_error " << fmt(report.max_rel_error) << " worst_index "
            << report.worst_index << " " << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-replicating LSTM organisms in a finite arena"};
  app.require_subcommand(1);
  int status = 0;

  InitArgs init;
  auto* c_init = app.add_subcommand("init-ancestor", "Write the ancestor genome file");
  c_init->add_option("--arena", init.arena, "Arena directory (default $OUROBOROS_ARENA or ./arena)");
  c_init->add_option("--lr", init.lr, "Learning rate");
  c_init->add_option("--hid", init.hid, "LSTM cells per layer");
  c_init->add_option("--noi", init.noi, "Noise inputs");
  c_init->add_option("--aux", init.aux, "Auxiliary outputs");
  c_init->add_option("--id", init.id, "Organism id used in the file name");
  c_init->callback([&] { status = cmd_init_ancestor(init); });

  OrganismArgs org;
  auto* c_org = app.add_subcommand("run-organism", "Train one organism to maturity and replicate");
  c_org->add_option("--genome", org.genome, "Genome file")->required();
  c_org->add_option("--arena", org.arena, "Arena directory");
  c_org->add_option("--seed", org.seed, "RNG seed")->required();
  c_org->add_option("--max-epochs", org.max_epochs, "Epoch cap before sterile death")->check(CLI::PositiveNumber);
  c_org->add_option("--feedback", org.feedback, "Feedback mode")->check(CLI::IsMember({"continuous", "onehot"}));
  c_org->add_flag("--copy-host", org.copy_host, "Launch children from a copy of this executable");
  c_org->callback([&] { status = cmd_run_organism(org); });

  EvolveArgs ev;
  auto* c_ev = app.add_subcommand("evolve", "Run a population from the ancestor");
  c_ev->add_option("--mode", ev.mode, "sim or process")->check(CLI::IsMember({"sim", "process"}));
  c_ev->add_option("--capacity", ev.capacity, "Population cap K")->check(CLI::PositiveNumber);
  c_ev->add_option("--budget", ev.budget, "Organisms to spawn before shutdown (M)")->check(CLI::PositiveNumber);
  c_ev->add_option("--seed", ev.seed, "Run seed");
  c_ev->add_option("--sigma-lr", ev.sigma_lr, "Std dev of the lr mutation")->check(CLI::NonNegativeNumber);
  c_ev->add_option("--int-delta", ev.int_delta, "Max |delta| of hid/noi/aux mutations")->check(CLI::Range(0, 64));
  c_ev->add_option("--arena", ev.arena, "Arena directory");
  c_ev->add_option("--eviction", ev.eviction, "Full-arena policy")
      ->check(CLI::IsMember({"kill-oldest", "reject-new"}));
  c_ev->add_option("--max-epochs", ev.max_epochs, "Epoch cap per organism")->check(CLI::PositiveNumber);
  c_ev->add_option("--feedback", ev.feedback, "Feedback mode")->check(CLI::IsMember({"continuous", "onehot"}));
  c_ev->add_option("--poll-ms", ev.poll_ms, "Supervisor poll interval (process mode)")->check(CLI::PositiveNumber);
  c_ev->add_flag("--copy-host", ev.copy_host, "Children run from copies of the executable");
  c_ev->add_option("--ancestor", ev.ancestor, "Ancestor genome file (default: built-in ancestor)");
  c_ev->callback([&] { status = cmd_evolve(ev); });

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "Validate an arena log and export maturity statistics");
  c_st->add_option("--arena", st.arena, "Arena directory");
  c_st->add_option("--window", st.window, "Moving-average window")->check(CLI::PositiveNumber);
  c_st->add_option("--out", st.out, "CSV output path");
  c_st->add_option("--svg", st.svg, "SVG chart output path");
  c_st->add_option("--index", st.index, "Organism index order")->check(CLI::IsMember({"maturity", "spawn"}));
  c_st->add_option("--metric", st.metric, "Maturity cost metric")->check(CLI::IsMember({"virtual", "wall"}));
  c_st->add_option("--capacity", st.capacity, "Capacity for validation (default from arena.json)");
  c_st->callback([&] { status = cmd_stats(st); });

  GradArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare BPTT gradients with finite differences");
  c_gc->add_option("--np", gc.np, "Alphabet size");
  c_gc->add_option("--hid", gc.hid, "Cells per layer");
  c_gc->add_option("--aux", gc.aux, "Auxiliary outputs");
  c_gc->add_option("--noi", gc.noi, "Noise inputs");
  c_gc->add_option("--length", gc.length, "Sequence length");
  c_gc->add_option("--seed", gc.seed, "Seed");
  c_gc->add_option("--step", gc.step, "Finite-difference step");
  c_gc->add_option("--tolerance", gc.tolerance, "Max allowed relative error");
  c_gc->add_flag("--corrupt", gc.corrupt, "Perturb one analytic gradient entry");
  c_gc->callback([&] { status = cmd_gradcheck(gc); });

  SelftestArgs sf;
  auto* c_sf = app.add_subcommand("selftest", "Run the built-in self checks");
  c_sf->add_option("--fixture", sf.fixture, "Replay this log instead of the bundled fixture");
  c_sf->add_option("--capacity", sf.capacity, "Capacity used to replay the fixture");
  c_sf->add_option("--seed", sf.seed, "Seed for the fuzz suites");
  c_sf->callback([&] { status = run_selftest(sf); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return status;
}
