// c2freg command line: synthetic data, iterative and learned registration,
// training, evaluation and ablations.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "c2freg/experiment.hpp"
#include "c2freg/io.hpp"
#include "c2freg/phantom.hpp"
#include "c2freg/report.hpp"

using namespace c2freg;
namespace fs = std::filesystem;

namespace {

// Worker count from C2FREG_THREADS; 1 when unset.
std::size_t thread_count() {
  const char* env = std::getenv("C2FREG_THREADS");
  if (!env || !*env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  if (n < 1) throw std::invalid_argument(std::string("C2FREG_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(n);
}

// Runs f(i) for i in [0, n) on up to `threads` workers, in index stripes.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

ModelConfig named_config(const std::string& name) {
  if (name == "toy") return ModelConfig::toy();
  if (name == "desk") return ModelConfig::desk();
  if (name == "full") return ModelConfig::full();
  throw std::invalid_argument("unknown config '" + name + "' (expected toy|desk|full)");
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

AffineFile params_file(const IterRegResult& r, const Volume3D& fixed, const std::string& note) {
  AffineFile a;
  a.matrix = r.matrix;
  a.params = r.params;
  a.pivot = center_of_mass(fixed);
  a.note = note;
  return a;
}

struct SynthArgs {
  std::size_t dims = 32;
  std::uint64_t seed = 0;
  std::uint64_t phantom_seed = 0;
  bool phantom_seed_set = false;
  double magnitude = 0.2;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const std::uint64_t ps = a.phantom_seed_set ? a.phantom_seed : a.seed;
  const SyntheticPair p = make_pair(Dims::cube(a.dims), ps, a.seed, a.magnitude);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_volume(dir / "fixed.json", p.fixed);
  write_volume(dir / "moving.json", p.moving);
  write_labels(dir / "fixed_labels.json", p.fixed_labels);
  write_labels(dir / "moving_labels.json", p.moving_labels);
  AffineFile t;
  t.matrix = p.truth;
  t.params = p.params;
  t.pivot = center_of_mass(p.fixed);
  t.note = "ground truth: phantom seed " + std::to_string(ps) + ", affine seed " + std::to_string(a.seed) +
           ", magnitude " + format_number(a.magnitude);
  write_affine(dir / "truth.json", t);
  std::cout << "wrote " << dir.string() << " (fixed, moving, labels, truth)\n";
  return 0;
}

struct IterArgs {
  std::string fixed, moving, out;
  std::vector<std::size_t> iterations{100, 100, 50};
  std::vector<double> lr{0.01, 0.005, 0.002};
  double restart_angle = 0.5;
  bool rigid = false;
  std::string trace;
};

int run_register_iter(const IterArgs& a) {
  const Volume3D f = read_volume(a.fixed), m = read_volume(a.moving);
  IterRegConfig c;
  c.iterations = a.iterations;
  c.lr = a.lr;
  c.restart_angle = a.restart_angle;
  if (a.rigid) c.frozen = rigid_mask();
  const IterRegResult r = iterative_register(f, m, c);
  write_affine(a.out, params_file(r, f, "iterative registration"));
  if (!a.trace.empty()) {
    Table t;
    t.header = {"level", "iteration", "loss", "grad_max"};
    for (const auto& e : r.trace)
      t.rows.push_back({std::to_string(e.level), std::to_string(e.iteration), format_number(e.loss),
                        format_number(e.grad_max)});
    write_text(a.trace, t.csv());
  }
  std::cout << "final loss " << format_number(r.trace.back().loss) << ", start " << r.start << ", wrote " << a.out
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string config = "desk";
  std::string head = "decoupled";
  bool no_progressive = false;
  std::uint64_t seed = 0;
  std::size_t steps = 2000;
  std::size_t pairs = 200;
  std::size_t held_out = 20;
  double magnitude = 0.3;
  double lr = 1e-4;
  bool semi = false;
  double lambda = 0.5;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 0;
  std::string resume;
  std::string out;
  bool evaluate = false;
};

SyntheticProtocol protocol_from(const TrainArgs& a) {
  SyntheticProtocol p;
  p.model = named_config(a.config);
  p.model.head_mode = parse_head_mode(a.head);
  p.model.progressive = !a.no_progressive;
  p.lr = a.lr;
  p.steps = a.steps;
  p.train_pairs = a.pairs;
  p.held_out = a.held_out;
  p.magnitude = a.magnitude;
  p.semi = a.semi;
  p.loss.lambda = a.lambda;
  p.init_seed = a.seed;
  p.validate();
  return p;
}

void print_held_out(const HeldOutResult& r) {
  std::cout << summary_table(r.before).aligned() << "(identity)\n"
            << summary_table(r.after).aligned() << "(predicted)\n"
            << "median DSC " << format_number(r.median_before) << " -> " << format_number(r.median_after)
            << ", median improvement " << format_number(r.median_improvement) << "\n";
}

int run_train(const TrainArgs& a) {
  const SyntheticProtocol p = protocol_from(a);
  TrainingState st;
  if (!a.resume.empty()) {
    st = load_checkpoint(a.resume);
    if (!(st.config == p.model)) throw std::invalid_argument("checkpoint config differs from the requested one");
  } else {
    st = TrainingState{p.model, init_weights(p.model, p.init_seed), {}};
    st.adam.cfg.lr = p.lr;
  }
  continue_training(st, p, [&](const StepResult& r) {
    if (a.log_every && r.step % a.log_every == 0) std::cout << format_log_line(r) << std::endl;
    if (a.checkpoint_every && r.step % a.checkpoint_every == 0) save_checkpoint(a.out, st);
  });
  save_checkpoint(a.out, st);
  std::cout << "wrote " << a.out << " after " << st.adam.step << " steps\n";
  if (a.evaluate) print_held_out(evaluate_held_out(st.model, p));
  return 0;
}

struct ModelRegArgs {
  std::string checkpoint, config = "desk", fixed, moving, out;
  std::uint64_t init_seed = 0;
  bool com_init = false;
};

int run_register_model(const ModelRegArgs& a) {
  const Volume3D f = read_volume(a.fixed), m = read_volume(a.moving);
  ModelConfig cfg;
  ModelState state;
  if (!a.checkpoint.empty()) {
    const TrainingState st = load_checkpoint(a.checkpoint);
    cfg = st.config;
    state = st.model;
  } else {
    cfg = named_config(a.config);
    state = init_weights(cfg, a.init_seed);
  }
  AffineFile out;
  out.matrix = register_with_model(f, m, state, cfg, a.com_init);
  out.note = std::string("network prediction") + (a.com_init ? " with centre-of-mass initialization" : "");
  write_affine(a.out, out);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::vector<std::string> fixed, moving, affine, ids;
  std::string csv;
};

int run_evaluate(const EvalArgs& a) {
  const std::size_t n = a.fixed.size();
  if (n == 0 || a.moving.size() != n || a.affine.size() != n)
    throw std::invalid_argument("evaluate: give one --moving-labels and one --affine per --fixed-labels");
  if (!a.ids.empty() && a.ids.size() != n) throw std::invalid_argument("evaluate: --id count must match the cases");
  std::vector<CaseResult> cases(n);
  parallel_for(n, thread_count(), [&](std::size_t i) {
    const std::string id = a.ids.empty() ? "case" + std::to_string(i) : a.ids[i];
    cases[i] = evaluate_case(read_labels(a.fixed[i]), read_labels(a.moving[i]), read_affine(a.affine[i]).matrix, id);
  });
  const Table per = case_table(cases), sum = summary_table(cases);
  std::cout << per.aligned() << "\n" << sum.aligned();
  if (!a.csv.empty()) write_text(a.csv, per.csv() + "\n" + sum.csv());
  return 0;
}

int run_ablate(const TrainArgs& a) {
  const SyntheticProtocol base = protocol_from(a);
  struct Variant {
    std::string name;
    SyntheticProtocol p;
    HeldOutResult r;
  };
  std::vector<Variant> v{{"progressive+decoupled", base, {}},
                         {"non-progressive", base, {}},
                         {"direct head", base, {}}};
  v[1].p.model.progressive = false;
  v[2].p.model.head_mode = HeadMode::Direct;
  parallel_for(v.size(), thread_count(), [&](std::size_t i) {
    const TrainingState st = train_synthetic(v[i].p);
    v[i].r = evaluate_held_out(st.model, v[i].p);
  });
  Table t;
  t.header = {"variant", "median_dsc_before", "median_dsc_after", "median_improvement"};
  for (const auto& x : v)
    t.rows.push_back({x.name, format_number(x.r.median_before), format_number(x.r.median_after),
                      format_number(x.r.median_improvement)});
  std::cout << t.aligned();
  return 0;
}

void add_train_options(CLI::App* c, TrainArgs& a, bool with_output) {
  c->add_option("--config", a.config, "toy|desk|full")->capture_default_str();
  c->add_option("--seed", a.seed, "Weight initialization seed")->required();
  c->add_option("--steps", a.steps, "Total optimizer steps")->capture_default_str();
  c->add_option("--pairs", a.pairs, "Synthetic training pairs")->capture_default_str();
  c->add_option("--held-out", a.held_out, "Held-out evaluation pairs")->capture_default_str();
  c->add_option("--magnitude", a.magnitude, "Misalignment magnitude")->capture_default_str();
  c->add_option("--lr", a.lr, "Adam learning rate")->capture_default_str();
  c->add_flag("--semi", a.semi, "Add the label Dice term");
  c->add_option("--lambda", a.lambda, "Weight of the Dice term")->capture_default_str();
  if (!with_output) return;
  c->add_option("--head", a.head, "decoupled|direct")->capture_default_str();
  c->add_flag("--no-progressive", a.no_progressive, "Warp the original moving image at every stage");
  c->add_option("--out", a.out, "Checkpoint path")->required();
  c->add_option("--resume", a.resume, "Continue from a checkpoint");
  c->add_option("--log-every", a.log_every, "Steps between log lines (0 disables)")->capture_default_str();
  c->add_option("--checkpoint-every", a.checkpoint_every, "Steps between checkpoints (0 disables)");
  c->add_flag("--evaluate", a.evaluate, "Score the held-out pairs afterwards");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine affine registration toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand("synth", "Render a phantom pair with its ground-truth affine");
  synth->add_option("--dims", sa.dims, "Cube side in voxels (>= 16)")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Affine seed (and phantom seed unless given)")->required();
  synth->add_option("--phantom-seed", sa.phantom_seed, "Phantom seed")
      ->each([&](const std::string&) { sa.phantom_seed_set = true; });
  synth->add_option("--magnitude", sa.magnitude, "Misalignment magnitude in (0, 1]")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  IterArgs ia;
  CLI::App* iter = app.add_subcommand("register-iter", "Iterative coarse-to-fine registration");
  iter->add_option("--fixed", ia.fixed)->required()->check(CLI::ExistingFile);
  iter->add_option("--moving", ia.moving)->required()->check(CLI::ExistingFile);
  iter->add_option("--out", ia.out, "Affine file")->required();
  iter->add_option("--iterations", ia.iterations, "Per level, coarse to fine")->capture_default_str();
  iter->add_option("--lr", ia.lr, "Per level, coarse to fine")->capture_default_str();
  iter->add_option("--restart-angle", ia.restart_angle, "Rotated restarts (0 disables)")->capture_default_str();
  iter->add_flag("--rigid", ia.rigid, "Freeze scale and shear");
  iter->add_option("--trace", ia.trace, "CSV of the optimization trace");

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Train the network on synthetic pairs");
  add_train_options(train, ta, true);

  ModelRegArgs ma;
  CLI::App* reg = app.add_subcommand("register-model", "Predict an affine with the network");
  reg->add_option("--checkpoint", ma.checkpoint)->check(CLI::ExistingFile);
  reg->add_option("--config", ma.config, "Config for fresh weights when no checkpoint is given")
      ->capture_default_str();
  reg->add_option("--init-seed", ma.init_seed, "Seed for fresh weights")->capture_default_str();
  reg->add_option("--fixed", ma.fixed)->required()->check(CLI::ExistingFile);
  reg->add_option("--moving", ma.moving)->required()->check(CLI::ExistingFile);
  reg->add_option("--out", ma.out, "Affine file")->required();
  reg->add_flag("--com-init", ma.com_init, "Align centres of mass first");

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("evaluate", "DSC, DSC30 and HD95 report");
  eval->add_option("--fixed-labels", ea.fixed, "Repeat once per case")->required()->check(CLI::ExistingFile);
  eval->add_option("--moving-labels", ea.moving)->required()->check(CLI::ExistingFile);
  eval->add_option("--affine", ea.affine)->required()->check(CLI::ExistingFile);
  eval->add_option("--id", ea.ids, "Case ids");
  eval->add_option("--csv", ea.csv, "Also write comma-separated tables");

  TrainArgs aa;
  CLI::App* ablate = app.add_subcommand("ablate", "Progressive vs non-progressive, decoupled vs direct");
  add_train_options(ablate, aa, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(sa);
    if (*iter) return run_register_iter(ia);
    if (*train) return run_train(ta);
    if (*reg) return run_register_model(ma);
    if (*eval) return run_evaluate(ea);
    if (*ablate) return run_ablate(aa);
  } catch (const std::exception& e) {
    std::cerr << "c2freg: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
