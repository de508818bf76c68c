#include "cli.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "cpcore/bench.hpp"
#include "cpcore/bp.hpp"
#include "cpcore/degree_model.hpp"
#include "cpcore/em.hpp"
#include "cpcore/error.hpp"
#include "cpcore/graph.hpp"
#include "cpcore/oracle.hpp"
#include "cpcore/parallel.hpp"
#include "cpcore/random.hpp"
#include "cpcore/sbm_gen.hpp"

namespace cpcore::cli {

using json = nlohmann::json;

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError(fmt::format("cannot read {}", path));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

namespace {

// Per-invocation bookkeeping that ends up in the manifest.
struct Run {
  std::string subcommand;
  std::vector<std::string> argv;
  std::string manifest_path;
  json inputs = json::array();
  json outputs = json::array();
  json outcome = json::object();
  std::uint64_t seed = 0;

  void input(const std::string& path) { inputs.push_back({{"path", path}, {"sha256", file_sha256(path)}}); }
  void output(const std::string& path) { outputs.push_back(path); }
};

struct Common {
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string log_level = "info";
  std::string manifest;
  std::string config;

  std::size_t worker_count() const { return workers == 0 ? default_workers() : workers; }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--workers", c.workers, "Worker threads, 0 = available parallelism")->envname("CPCORE_WORKERS");
  sub->add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off")
      ->envname("CPCORE_LOG_LEVEL")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  sub->add_option("--manifest", c.manifest, "Run manifest path (default: next to the outputs)");
  sub->add_option("--config", c.config, "TOML or INI file of flag values; command line and environment win");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UserError(fmt::format("cannot write {}", path));
  return f;
}

void finish_file(std::ofstream& f, const std::string& path) {
  f.flush();
  if (!f) throw UserError(fmt::format("write to {} failed", path));
}

std::string stem_of(const std::string& path) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path;
  return path.substr(0, dot);
}

// ---- graph input ----

struct GraphInput {
  std::string path;
  std::string duplicates = "reject";
  std::string self_loops = "drop";
};

void add_graph_input(CLI::App* sub, GraphInput& in) {
  sub->add_option("--input", in.path, "Edge list: two labels per line, # comments, optional %nodes header")->required();
  sub->add_option("--duplicates", in.duplicates, "Duplicate edges: reject or ignore")
      ->check(CLI::IsMember({"reject", "ignore"}));
  sub->add_option("--self-loops", in.self_loops, "Self-loops: drop or reject")->check(CLI::IsMember({"drop", "reject"}));
}

LoadedGraph load_input(const GraphInput& in, Run& run) {
  LoadOptions opts;
  opts.duplicates = in.duplicates == "ignore" ? DuplicatePolicy::ignore : DuplicatePolicy::reject;
  opts.self_loops = in.self_loops == "reject" ? SelfLoopPolicy::reject : SelfLoopPolicy::drop;
  run.input(in.path);
  LoadedGraph lg = load_edge_list_file(in.path, opts);
  spdlog::info("loaded {}: {} vertices, {} edges", in.path, lg.graph.num_vertices(), lg.graph.num_edges());
  return lg;
}

Assignment read_truth(const std::string& path, const LabelMap& labels, Run& run) {
  run.input(path);
  std::ifstream in(path);
  if (!in) throw UserError(fmt::format("cannot read {}", path));
  Assignment truth(labels.size(), Group::core);
  std::vector<bool> seen(labels.size(), false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string label;
    int group = 0;
    if (!(fields >> label >> group) || (group != 1 && group != 2))
      throw ParseError(lineno, "expected '<vertex> <group>' with group 1 or 2");
    const auto v = labels.find(label);
    if (!v) throw ParseError(lineno, fmt::format("vertex '{}' is not in the graph", label));
    truth[*v] = group == 1 ? Group::core : Group::periphery;
    seen[*v] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw UserError(fmt::format("{} does not label every vertex", path));
  return truth;
}

// ---- shared detect-style outputs ----

struct DetectOutputs {
  std::string prefix;
  std::string truth;
};

void write_vertices(const std::string& path, const LabelMap& labels, const Marginals& marg, const Assignment& a,
                    Run& run) {
  auto f = open_out(path);
  f << "label,q_core,assignment\n";
  for (std::size_t i = 0; i < a.size(); ++i)
    f << fmt::format("{},{:.17g},{}\n", labels.label(static_cast<vertex_t>(i)), marg.q[i][0], static_cast<int>(a[i]));
  finish_file(f, path);
  run.output(path);
}

void write_json(const std::string& path, const json& j, Run& run) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
  finish_file(f, path);
  run.output(path);
}

json mixing_json(json j, double gamma1, const MixingMatrix& c) {
  j["gamma"] = {gamma1, 1.0 - gamma1};
  j["c11"] = c.c11;
  j["c12"] = c.c12;
  j["c22"] = c.c22;
  j["structure_class"] = std::string(to_string(c.classify()));
  return j;
}

std::string default_prefix(const std::string& input, const std::string& sub) { return stem_of(input) + "." + sub; }

// ---- generate ----

struct GenerateOpts {
  Common common;
  std::size_t n = 1000;
  double gamma1 = 0.5;
  std::optional<double> c11, c12, c22;
  std::optional<double> theta1, theta2;
  double r = 2.0;
  std::optional<double> c, delta;
  double alpha1 = 1.0, alpha2 = 1.0;
  std::string output;
  std::string truth;
};

void setup_generate(CLI::App* sub, GenerateOpts& o) {
  sub->add_option("--n", o.n, "Number of vertices");
  sub->add_option("--gamma1", o.gamma1, "Expected core fraction");
  sub->add_option("--c11", o.c11, "Core-core c_rs (explicit mixing; needs --c12 --c22)");
  sub->add_option("--c12", o.c12, "Core-periphery c_rs");
  sub->add_option("--c22", o.c22, "Periphery-periphery c_rs");
  sub->add_option("--theta1", o.theta1, "theta family: first eigenvalue (needs --theta2)");
  sub->add_option("--theta2", o.theta2, "theta family: second eigenvalue");
  sub->add_option("--r", o.r, "theta family: ratio r > 1");
  sub->add_option("--c", o.c, "weak family: mean degree (needs --delta)");
  sub->add_option("--alpha1", o.alpha1, "weak family: core weight");
  sub->add_option("--alpha2", o.alpha2, "weak family: periphery weight");
  sub->add_option("--delta", o.delta, "weak family: structure strength");
  sub->add_option("--output", o.output, "Edge list to write")->required();
  sub->add_option("--truth", o.truth, "Planted labels to write (default: <output stem>.truth.tsv)");
  add_common(sub, o.common);
}

MixingMatrix generate_mixing(const GenerateOpts& o, CLI::App* sub) {
  const bool explicit_given = o.c11 || o.c12 || o.c22;
  const bool theta_given = o.theta1 || o.theta2 || sub->count("--r") > 0;
  const bool weak_given = o.c || o.delta || sub->count("--alpha1") > 0 || sub->count("--alpha2") > 0;
  if (explicit_given + theta_given + weak_given != 1)
    throw UserError("give exactly one of (--c11 --c12 --c22), (--theta1 --theta2 [--r]) or (--c --delta [--alpha1 --alpha2])");
  if (explicit_given) {
    if (!(o.c11 && o.c12 && o.c22)) throw UserError("explicit mixing needs all of --c11 --c12 --c22");
    if (*o.c11 < 0 || *o.c12 < 0 || *o.c22 < 0) throw UserError("c_rs must be nonnegative");
    return {*o.c11, *o.c12, *o.c22};
  }
  if (theta_given) {
    if (!(o.theta1 && o.theta2)) throw UserError("the theta family needs --theta1 and --theta2");
    return mixing_from_theta({*o.theta1, *o.theta2, o.r});
  }
  if (!(o.c && o.delta)) throw UserError("the weak family needs --c and --delta");
  return weak_structure_mixing(*o.c, o.alpha1, o.alpha2, *o.delta);
}

void run_generate(GenerateOpts& o, CLI::App* sub, Run& run) {
  const MixingMatrix mix = generate_mixing(o, sub);
  const PlantedNetwork net = sample_sbm(o.n, o.gamma1, mix, o.common.seed);
  auto f = open_out(o.output);
  write_edge_list(f, net.graph);
  finish_file(f, o.output);
  run.output(o.output);

  const std::string truth = o.truth.empty() ? stem_of(o.output) + ".truth.tsv" : o.truth;
  auto t = open_out(truth);
  for (std::size_t i = 0; i < net.truth.size(); ++i) t << i << '\t' << static_cast<int>(net.truth[i]) << '\n';
  finish_file(t, truth);
  run.output(truth);

  std::size_t cores = std::count(net.truth.begin(), net.truth.end(), Group::core);
  spdlog::info("generated {} vertices ({} core), {} edges", o.n, cores, net.graph.num_edges());
  run.outcome = mixing_json({{"n", o.n}, {"m", net.graph.num_edges()}, {"core_vertices", cores},
                             {"clamped_blocks", net.clamped_blocks}},
                            o.gamma1, mix);
}

// ---- detect ----

struct DetectOpts {
  Common common;
  GraphInput input;
  DetectOutputs out;
  FitConfig fit;
  bool no_accelerate = false;
  bool bp_trace = false;
};

void add_init_order(CLI::App* sub, FitConfig& fit) {
  static const std::map<std::string, InitOrder> names{{"core-periphery", InitOrder::core_periphery},
                                                       {"mixed", InitOrder::mixed}};
  sub->add_option("--init-order", fit.init_order,
                  "Initial c ordering: core-periphery, or mixed (odd restarts start assortative)")
      ->transform(CLI::CheckedTransformer(names, CLI::ignore_case).description(""))
      ->type_name("TEXT:{core-periphery,mixed}")
      ->default_str("core-periphery");
}

void setup_detect(CLI::App* sub, DetectOpts& o) {
  add_graph_input(sub, o.input);
  sub->add_option("--restarts", o.fit.restarts, "Independent EM restarts")->check(CLI::PositiveNumber);
  sub->add_option("--em-tol", o.fit.em_tol, "EM stops when max |dc| < em-tol * mean c and |dgamma| < em-tol");
  sub->add_option("--em-max-iter", o.fit.em_max_iter, "EM iteration cap per restart");
  sub->add_option("--bp-tol", o.fit.bp_tol, "BP stops when no message moves more than this");
  sub->add_option("--bp-max-iter", o.fit.bp_max_iter, "BP sweep cap per E-step");
  sub->add_option("--init-spread", o.fit.init_spread, "Relative spread of the random initial c_rs");
  add_init_order(sub, o.fit);
  sub->add_option("--damping", o.fit.damping, "BP damping in [0, 1)");
  sub->add_option("--max-reseeds", o.fit.max_reseeds, "Re-seeds per restart after a group collapses");
  sub->add_flag("--no-accelerate", o.no_accelerate, "Plain EM iterations without extrapolation");
  sub->add_flag("--bp-trace", o.bp_trace, "Also write the final BP delta log as <prefix>.bp_deltas.csv");
  sub->add_option("--truth", o.out.truth, "Planted labels; adds error_rate to the summary");
  sub->add_option("--output-prefix", o.out.prefix, "Output prefix (default: <input stem>.detect)");
  add_common(sub, o.common);
}

void add_error_rate(json& summary, const std::string& truth_path, const LoadedGraph& lg, const Assignment& a,
                    Run& run) {
  if (truth_path.empty()) return;
  const Assignment truth = read_truth(truth_path, lg.labels, run);
  summary["error_rate"] = error_rate(a, truth);
  spdlog::info("error rate against {}: {:.6f}", truth_path, summary["error_rate"].get<double>());
}

void run_detect(DetectOpts& o, Run& run) {
  const LoadedGraph lg = load_input(o.input, run);
  FitConfig fc = o.fit;
  fc.seed = o.common.seed;
  fc.workers = o.common.worker_count();
  fc.accelerate = !o.no_accelerate;
  fc.record_bp_deltas = o.bp_trace;
  const FitResult fr = fit(lg.graph, fc);
  spdlog::info("best of {} restarts: objective {:.6f} after {} EM iterations{}", fr.restarts_used, fr.objective,
               fr.em_iterations, fr.converged ? "" : " (not converged)");

  const std::string prefix = o.out.prefix.empty() ? default_prefix(o.input.path, "detect") : o.out.prefix;
  write_vertices(prefix + ".vertices.csv", lg.labels, fr.marginals, fr.assignment, run);
  json summary = mixing_json({{"method", "bp_em"}}, fr.params.gamma1, fr.params.c);
  summary["structure_class"] = std::string(to_string(fr.structure_class));
  summary["objective"] = fr.objective;
  summary["iterations"] = fr.em_iterations;
  summary["restarts_used"] = fr.restarts_used;
  summary["converged"] = fr.converged;
  summary["degenerate_restarts"] = fr.degenerate_restarts;
  summary["ties"] = fr.ties;
  summary["n"] = lg.graph.num_vertices();
  summary["m"] = lg.graph.num_edges();
  json restarts = json::array();
  for (const auto& d : fr.restarts)
    restarts.push_back({{"seed", d.seed}, {"reseeds", d.reseeds}, {"failed", d.failed}, {"em_iterations", d.em_iterations},
                        {"converged", d.converged}, {"objective", d.failed ? json() : json(d.objective)}});
  summary["restarts"] = restarts;
  add_error_rate(summary, o.out.truth, lg, fr.assignment, run);
  write_json(prefix + ".summary.json", summary, run);
  if (o.bp_trace) {
    const std::string path = prefix + ".bp_deltas.csv";
    auto f = open_out(path);
    write_delta_csv(f, fr.bp_deltas);
    finish_file(f, path);
    run.output(path);
  }
  run.manifest_path = prefix + ".manifest.json";
  run.outcome = summary;
  run.outcome.erase("restarts");
}

// ---- detect-degree ----

struct DegreeOpts {
  Common common;
  GraphInput input;
  DetectOutputs out;
  double tol = 1e-10;
  std::size_t max_iter = 100000;
};

void setup_degree(CLI::App* sub, DegreeOpts& o) {
  add_graph_input(sub, o.input);
  sub->add_option("--tol", o.tol, "Stop when gamma1 and r move less than this");
  sub->add_option("--max-iter", o.max_iter, "Iteration cap");
  sub->add_option("--truth", o.out.truth, "Planted labels; adds error_rate to the summary");
  sub->add_option("--output-prefix", o.out.prefix, "Output prefix (default: <input stem>.detect-degree)");
  add_common(sub, o.common);
}

void run_degree(DegreeOpts& o, Run& run) {
  const LoadedGraph lg = load_input(o.input, run);
  const DegreeFit df = fit_degree_model(lg.graph, o.tol, o.max_iter, o.common.seed);
  spdlog::info("degree model: gamma1 {:.6f} r {:.6f} theta {:.6f} after {} iterations", df.params.gamma1, df.params.r,
               df.params.theta, df.iterations);
  const std::string prefix = o.out.prefix.empty() ? default_prefix(o.input.path, "detect-degree") : o.out.prefix;
  write_vertices(prefix + ".vertices.csv", lg.labels, df.marginals, df.assignment, run);
  json summary = mixing_json({{"method", "degree_em"}}, df.params.gamma1, df.params.mixing());
  summary["objective"] = nullptr;
  summary["iterations"] = df.iterations;
  summary["restarts_used"] = 1;
  summary["converged"] = df.converged;
  summary["r"] = df.params.r;
  summary["theta"] = df.params.theta;
  summary["n"] = lg.graph.num_vertices();
  summary["m"] = lg.graph.num_edges();
  add_error_rate(summary, o.out.truth, lg, df.assignment, run);
  write_json(prefix + ".summary.json", summary, run);
  run.manifest_path = prefix + ".manifest.json";
  run.outcome = summary;
}

// ---- split-degree ----

struct SplitOpts {
  Common common;
  GraphInput input;
  DetectOutputs out;
  double core_fraction = 0.5;
};

void setup_split(CLI::App* sub, SplitOpts& o) {
  add_graph_input(sub, o.input);
  sub->add_option("--core-fraction", o.core_fraction, "Fraction of highest-degree vertices put in the core");
  sub->add_option("--truth", o.out.truth, "Planted labels; adds error_rate to the summary");
  sub->add_option("--output-prefix", o.out.prefix, "Output prefix (default: <input stem>.split-degree)");
  add_common(sub, o.common);
}

void run_split(SplitOpts& o, Run& run) {
  const LoadedGraph lg = load_input(o.input, run);
  const Graph& g = lg.graph;
  const Assignment a = naive_split(g, o.core_fraction);
  Marginals marg;
  marg.q.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) marg.q[i] = a[i] == Group::core ? Pair{1.0, 0.0} : Pair{0.0, 1.0};

  const std::string prefix = o.out.prefix.empty() ? default_prefix(o.input.path, "split-degree") : o.out.prefix;
  write_vertices(prefix + ".vertices.csv", lg.labels, marg, a, run);
  // Count-based densities of the split, as the M-step would give them.
  EdgeMarginals edges;
  for (const auto& e : g.edges()) {
    EdgeTable t{};
    t[index_of(a[e.u])][index_of(a[e.v])] = 1.0;
    edges.table.push_back(t);
  }
  json summary;
  try {
    const Params p = m_step(g, marg, edges);
    summary = mixing_json({{"method", "naive"}}, p.gamma1, p.c);
  } catch (const DegenerateGroupError&) {
    const double core = static_cast<double>(std::count(a.begin(), a.end(), Group::core)) / static_cast<double>(a.size());
    summary = {{"method", "naive"}, {"gamma", {core, 1.0 - core}}, {"c11", nullptr}, {"c12", nullptr}, {"c22", nullptr},
               {"structure_class", "degenerate"}};
  }
  summary["objective"] = nullptr;
  summary["iterations"] = 0;
  summary["restarts_used"] = 0;
  summary["n"] = g.num_vertices();
  summary["m"] = g.num_edges();
  add_error_rate(summary, o.out.truth, lg, a, run);
  write_json(prefix + ".summary.json", summary, run);
  run.manifest_path = prefix + ".manifest.json";
  run.outcome = summary;
}

// ---- benchmark ----

struct BenchOpts {
  Common common;
  std::size_t n = 100000;
  std::size_t trials = 10;
  double gamma1 = 0.5;
  std::string family = "theta";
  double r = 2.0;
  std::vector<double> theta1{2.0, 3.0, 4.0};
  std::vector<double> theta2;
  std::size_t points = 11;
  double margin = 0.05;
  double c = 3.0;
  double alpha1 = 1.0, alpha2 = 1.0;
  std::vector<double> delta{0.2, 0.5, 1.0};
  std::vector<std::string> methods{"bp_em", "degree_em", "naive"};
  bool true_params = false;
  FitConfig fit = sweep_fit_defaults();
  std::string output = "-";
  std::string plot_script;
};

void setup_bench(CLI::App* sub, BenchOpts& o) {
  sub->add_option("--n", o.n, "Vertices per planted network");
  sub->add_option("--trials", o.trials, "Networks per grid point");
  sub->add_option("--gamma1", o.gamma1, "Planted core fraction (also the naive split's core fraction)");
  sub->add_option("--family", o.family, "Sweep family: theta or weak")->check(CLI::IsMember({"theta", "weak"}));
  sub->add_option("--r", o.r, "theta family: ratio r > 1");
  sub->add_option("--theta1", o.theta1, "theta family: one sweep per value");
  sub->add_option("--theta2", o.theta2, "theta family: explicit grid (default: --points across the admissible range)");
  sub->add_option("--points", o.points, "theta family: size of the default grid");
  sub->add_option("--margin", o.margin, "theta family: grid margin as a fraction of the admissible width");
  sub->add_option("--c", o.c, "weak family: mean degree");
  sub->add_option("--alpha1", o.alpha1, "weak family: core weight");
  sub->add_option("--alpha2", o.alpha2, "weak family: periphery weight");
  sub->add_option("--delta", o.delta, "weak family: grid of structure strengths");
  sub->add_option("--methods", o.methods, "Subset of bp_em, degree_em, naive");
  sub->add_flag("--true-params", o.true_params, "Run BP at the planted parameters instead of fitting them");
  sub->add_option("--restarts", o.fit.restarts, "EM restarts per fit")->check(CLI::PositiveNumber);
  sub->add_option("--em-tol", o.fit.em_tol, "EM tolerance");
  sub->add_option("--em-max-iter", o.fit.em_max_iter, "EM iteration cap");
  sub->add_option("--bp-tol", o.fit.bp_tol, "BP tolerance");
  sub->add_option("--bp-max-iter", o.fit.bp_max_iter, "BP sweep cap");
  sub->add_option("--init-spread", o.fit.init_spread, "Relative spread of the random initial c_rs");
  add_init_order(sub, o.fit);
  sub->add_option("--damping", o.fit.damping, "BP damping in [0, 1)");
  sub->add_option("--output", o.output, "CSV path, - for standard output");
  sub->add_option("--plot-script", o.plot_script, "Also write a gnuplot script reading the CSV");
  add_common(sub, o.common);
}

void run_bench(BenchOpts& o, std::ostream& out, Run& run) {
  SweepConfig base;
  base.n = o.n;
  base.trials = o.trials;
  base.gamma1 = o.gamma1;
  base.family = o.family == "weak" ? SweepFamily::weak : SweepFamily::theta;
  base.r = o.r;
  base.c = o.c;
  base.alpha1 = o.alpha1;
  base.alpha2 = o.alpha2;
  base.delta_grid = o.delta;
  base.methods.clear();
  for (const auto& m : o.methods) base.methods.push_back(method_from_string(m));
  base.seed = o.common.seed;
  base.true_params_mode = o.true_params;
  base.fit = o.fit;
  base.workers = o.common.worker_count();

  std::vector<SweepConfig> configs;
  if (base.family == SweepFamily::theta) {
    if (o.theta1.empty()) throw UserError("--theta1 needs at least one value");
    for (std::size_t k = 0; k < o.theta1.size(); ++k) {
      SweepConfig cfg = base;
      cfg.theta1 = o.theta1[k];
      cfg.theta2_grid = o.theta2.empty() ? default_theta2_grid(cfg.theta1, cfg.r, o.points, o.margin) : o.theta2;
      cfg.seed = child_seed(o.common.seed, {k});
      cfg.validate();
      configs.push_back(cfg);
    }
  } else {
    base.validate();
    configs.push_back(base);
  }

  std::ostringstream csv;
  json rows = json::array();
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const auto& cfg = configs[k];
    spdlog::info("sweep {}/{}: {} points x {} trials at n = {}", k + 1, configs.size(),
                 cfg.family == SweepFamily::theta ? cfg.theta2_grid.size() : cfg.delta_grid.size(), cfg.trials, cfg.n);
    const auto result = run_sweep(cfg);
    std::ostringstream part;
    write_sweep_csv(part, cfg, result);
    std::string text = part.str();
    if (k > 0) text.erase(0, text.find('\n') + 1);
    csv << text;
    for (const auto& row : result)
      for (const auto& s : row.methods)
        rows.push_back({{"theta1", row.theta1}, {"point", row.point}, {"method", std::string(to_string(s.method))},
                        {"mean_error", s.mean_error}, {"stderr", s.stderr_error}, {"failures", s.failures}});
  }

  if (o.output == "-") {
    out << csv.str();
  } else {
    auto f = open_out(o.output);
    f << csv.str();
    finish_file(f, o.output);
    run.output(o.output);
  }
  if (!o.plot_script.empty()) {
    auto f = open_out(o.plot_script);
    write_gnuplot_script(f, configs.front(), o.output == "-" ? "benchmark.csv" : o.output);
    finish_file(f, o.plot_script);
    run.output(o.plot_script);
  }
  run.manifest_path = o.output == "-" ? "benchmark.manifest.json" : o.output + ".manifest.json";
  run.outcome = {{"rows", rows}};
}

// ---- oracle-check ----

struct OracleOpts {
  Common common;
  double tol = 1e-8;
  double bethe_tol = 1e-6;
  double ambient_n = 1e12;
  std::size_t trees = 25;
  std::size_t max_n = 12;
};

void setup_oracle(CLI::App* sub, OracleOpts& o) {
  sub->add_option("--tol", o.tol, "Largest allowed |BP - exact| for one- and two-point marginals");
  sub->add_option("--bethe-tol", o.bethe_tol, "Largest allowed |Bethe - (log-likelihood + m log N)|");
  sub->add_option("--ambient-n", o.ambient_n, "Model size N used to scale c_rs into probabilities");
  sub->add_option("--trees", o.trees, "Random trees in the suite");
  sub->add_option("--max-n", o.max_n, "Largest random tree")->check(CLI::Range(2, 20));
  add_common(sub, o.common);
}

struct SuiteCase {
  std::string name;
  Graph graph;
  Params params;
  bool tree = true;
};

Graph random_tree(std::size_t n, Rng& rng) {
  std::vector<Edge> edges;
  for (std::size_t v = 1; v < n; ++v) {
    const auto u = static_cast<vertex_t>(uniform01(rng) * static_cast<double>(v));
    edges.push_back({u, static_cast<vertex_t>(v)});
  }
  return Graph::from_edges(n, edges);
}

std::vector<SuiteCase> oracle_suite(const OracleOpts& o) {
  const std::array<Params, 3> param_sets{Params{0.5, {6.0, 3.0, 1.5}, o.ambient_n}, Params{0.3, {3.0, 1.0, 0.5}, o.ambient_n},
                                         Params{0.6, mixing_from_theta({3.0, -0.5, 2.0}), o.ambient_n}};
  std::vector<SuiteCase> suite;
  suite.push_back({"single-edge", Graph::from_edges(2, {{0, 1}}), param_sets[0]});
  suite.push_back({"path-6", Graph::from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}}), param_sets[1]});
  suite.push_back({"star-8", Graph::from_edges(8, {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}, {0, 6}, {0, 7}}), param_sets[2]});
  suite.push_back({"forest-7", Graph::from_edges(7, {{0, 1}, {1, 2}, {3, 4}}), param_sets[0]});
  Rng rng(child_seed(o.common.seed, {7}));
  for (std::size_t t = 0; t < o.trees; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(o.max_n - 1));
    suite.push_back({fmt::format("tree-{}-n{}", t, n), random_tree(n, rng), param_sets[t % param_sets.size()]});
  }
  suite.push_back({"triangle", Graph::from_edges(3, {{0, 1}, {1, 2}, {0, 2}}), param_sets[0], false});
  suite.push_back({"cycle-6", Graph::from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}}), param_sets[1], false});
  return suite;
}

int run_oracle(OracleOpts& o, std::ostream& out, Run& run) {
  const auto suite = oracle_suite(o);
  out << fmt::format("{:<16} {:>3} {:>3} {:>12} {:>12} {:>12}  {}\n", "graph", "n", "m", "one_point", "two_point",
                     "bethe_gap", "status");
  double worst_one = 0.0, worst_two = 0.0, worst_bethe = 0.0;
  std::size_t breaches = 0;
  json cases = json::array();
  for (std::size_t k = 0; k < suite.size(); ++k) {
    const auto& sc = suite[k];
    const Graph& g = sc.graph;
    const ExactPosterior exact = exact_posterior(g, sc.params, o.common.worker_count());
    BpOptions opts;
    opts.tol = 1e-13;
    opts.max_iter = 1000;
    opts.schedule_seed = child_seed(o.common.seed, {8, k});
    const BpResult bp = run_bp(g, sc.params, child_seed(o.common.seed, {9, k}), opts);
    double one = 0.0, two = 0.0;
    for (std::size_t i = 0; i < g.num_vertices(); ++i)
      one = std::max(one, std::abs(bp.state.marginals.q[i][0] - exact.one_point.q[i][0]));
    const EdgeMarginals edges = two_point_marginals(g, sc.params, bp.state.messages);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      const auto& x = exact.pair(g.edges()[e].u, g.edges()[e].v);
      for (int r = 0; r < 2; ++r)
        for (int s = 0; s < 2; ++s) two = std::max(two, std::abs(edges.table[e][r][s] - x[r][s]));
    }
    const double bethe = bethe_objective(g, sc.params, bp.state.marginals, edges);
    const double gap = std::abs(bethe - (exact.log_evidence + static_cast<double>(g.num_edges()) * std::log(sc.params.scale(g))));
    std::string status = "ok";
    if (!sc.tree) {
      status = "loopy (not checked)";
    } else if (!bp.converged || one > o.tol || two > o.tol || gap > o.bethe_tol) {
      status = bp.converged ? "BREACH" : "BREACH (bp not converged)";
      ++breaches;
    }
    if (sc.tree) {
      worst_one = std::max(worst_one, one);
      worst_two = std::max(worst_two, two);
      worst_bethe = std::max(worst_bethe, gap);
    }
    out << fmt::format("{:<16} {:>3} {:>3} {:>12.3e} {:>12.3e} {:>12.3e}  {}\n", sc.name, g.num_vertices(), g.num_edges(),
                       one, two, gap, status);
    cases.push_back({{"graph", sc.name}, {"one_point", one}, {"two_point", two}, {"bethe_gap", gap}, {"status", status}});
  }
  out << fmt::format("max over trees: one_point {:.3e}  two_point {:.3e}  bethe_gap {:.3e}  ({} breach{})\n", worst_one,
                     worst_two, worst_bethe, breaches, breaches == 1 ? "" : "es");
  run.manifest_path = "oracle-check.manifest.json";
  run.outcome = {{"max_one_point", worst_one}, {"max_two_point", worst_two}, {"max_bethe_gap", worst_bethe},
                 {"breaches", breaches}, {"cases", cases}};
  if (breaches > 0) {
    spdlog::error("{} case(s) exceed the tolerance", breaches);
    return exit_tolerance;
  }
  return exit_ok;
}

// ---- replay ----

struct ReplayOpts {
  std::string manifest;
  bool ignore_digests = false;
};

std::vector<std::string> replay_args(const ReplayOpts& o) {
  std::ifstream in(o.manifest);
  if (!in) throw UserError(fmt::format("cannot read {}", o.manifest));
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw UserError(fmt::format("{} is not a manifest: {}", o.manifest, e.what()));
  }
  if (!m.contains("argv") || !m["argv"].is_array()) throw UserError(fmt::format("{} has no argv", o.manifest));
  if (!o.ignore_digests)
    for (const auto& input : m.value("inputs", json::array())) {
      const std::string path = input.at("path");
      if (file_sha256(path) != input.at("sha256").get<std::string>())
        throw UserError(fmt::format("{} changed since the recorded run (use --ignore-digests to replay anyway)", path));
    }
  auto args = m["argv"].get<std::vector<std::string>>();
  if (!args.empty() && args.front() == "replay") throw UserError("refusing to replay a replay manifest");
  return args;
}

// Fills options not given on the command line (or by environment) from a
// TOML/INI file. Keys may sit at top level or under [<subcommand>].
void apply_config(CLI::App* sub, const std::string& path, Run& run) {
  run.input(path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path);
  } catch (const CLI::Error& e) {
    throw UserError(fmt::format("{}: {}", path, e.what()));
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents.front() == sub->get_name())) continue;
    CLI::Option* opt = sub->get_option_no_throw("--" + item.name);
    if (opt == nullptr || item.name == "config") throw UserError(fmt::format("{}: unknown key '{}'", path, item.name));
    if (opt->count() > 0) continue;
    try {
      opt->add_result(item.inputs);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UserError(fmt::format("{}: bad value for '{}': {}", path, item.name, e.what()));
    }
  }
}

// ---- manifest ----

json resolved_flags(const CLI::App* sub) {
  json flags = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      flags[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else {
      flags[name] = opt->get_default_str();
    }
  }
  return flags;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const Run& run, const CLI::App* sub, const std::string& started, double seconds, int code,
                    const std::string& message) {
  static const std::array<const char*, 4> status{"ok", "user_error", "tolerance_breach", "internal_error"};
  json m{{"tool", "cpcore"},
         {"version", CPCORE_VERSION},
         {"subcommand", run.subcommand},
         {"argv", run.argv},
         {"resolved", resolved_flags(sub)},
         {"seed", run.seed},
         {"inputs", run.inputs},
         {"outputs", run.outputs},
         {"started", started},
         {"wall_clock_seconds", seconds},
         {"exit_code", code},
         {"status", status.at(static_cast<std::size_t>(code))},
         {"outcome", run.outcome}};
  if (!message.empty()) m["message"] = message;
  std::ofstream f(run.manifest_path, std::ios::trunc);
  if (!f) {
    spdlog::error("cannot write manifest {}", run.manifest_path);
    return;
  }
  f << m.dump(2) << '\n';
}

// Routes spdlog through `err` for the duration of one dispatch.
class LogScope {
 public:
  explicit LogScope(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    auto logger = std::make_shared<spdlog::logger>("cpcore", sink);
    logger->set_pattern("%Y-%m-%d %H:%M:%S.%e [%l] %v");
    logger->set_level(spdlog::level::info);
    spdlog::set_default_logger(logger);
  }
  ~LogScope() { spdlog::set_default_logger(previous_); }
  LogScope(const LogScope&) = delete;
  LogScope& operator=(const LogScope&) = delete;

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LogScope log_scope(err);

  CLI::App app{"Core-periphery structure in networks: two-group block model fitted by belief propagation and EM",
               "cpcore"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string(CPCORE_VERSION));
  app.require_subcommand(1);

  GenerateOpts gen;
  DetectOpts det;
  DegreeOpts deg;
  SplitOpts split;
  BenchOpts bench;
  OracleOpts orc;
  ReplayOpts rep;
  auto* gen_cmd = app.add_subcommand("generate", "Sample a planted two-group network");
  setup_generate(gen_cmd, gen);
  auto* det_cmd = app.add_subcommand("detect", "Fit the block model by BP + EM and assign core/periphery");
  setup_detect(det_cmd, det);
  auto* deg_cmd = app.add_subcommand("detect-degree", "Fit the degree-only (theta, r) model");
  setup_degree(deg_cmd, deg);
  auto* split_cmd = app.add_subcommand("split-degree", "Put the highest-degree vertices in the core");
  setup_split(split_cmd, split);
  auto* bench_cmd = app.add_subcommand("benchmark", "Error rates on planted networks across a parameter sweep");
  setup_bench(bench_cmd, bench);
  auto* orc_cmd = app.add_subcommand("oracle-check", "Compare BP with exact enumeration on small graphs");
  setup_oracle(orc_cmd, orc);
  auto* rep_cmd = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  rep_cmd->add_option("--manifest", rep.manifest, "Manifest written by an earlier run")->required();
  rep_cmd->add_flag("--ignore-digests", rep.ignore_digests, "Replay even if input files changed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_user_error;
  }

  if (rep_cmd->parsed()) {
    std::vector<std::string> replayed;
    try {
      replayed = replay_args(rep);
    } catch (const UserError& e) {
      spdlog::error("{}", e.what());
      return exit_user_error;
    }
    spdlog::info("replaying: {}", fmt::join(replayed, " "));
    return dispatch(replayed, out, err);
  }

  CLI::App* sub = app.get_subcommands().front();
  const Common& common = gen_cmd->parsed()     ? gen.common
                         : det_cmd->parsed()   ? det.common
                         : deg_cmd->parsed()   ? deg.common
                         : split_cmd->parsed() ? split.common
                         : bench_cmd->parsed() ? bench.common
                                               : orc.common;
  spdlog::default_logger()->set_level(spdlog::level::from_str(common.log_level));

  Run run;
  run.subcommand = sub->get_name();
  run.argv = args;
  run.seed = common.seed;
  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  int code = exit_ok;
  std::string message;
  try {
    if (!common.config.empty()) {
      apply_config(sub, common.config, run);
      spdlog::default_logger()->set_level(spdlog::level::from_str(common.log_level));
      run.seed = common.seed;
    }
    if (gen_cmd->parsed()) {
      run.manifest_path = gen.output + ".manifest.json";
      run_generate(gen, gen_cmd, run);
    } else if (det_cmd->parsed()) {
      run.manifest_path = default_prefix(det.input.path, "detect") + ".manifest.json";
      run_detect(det, run);
    } else if (deg_cmd->parsed()) {
      run.manifest_path = default_prefix(deg.input.path, "detect-degree") + ".manifest.json";
      run_degree(deg, run);
    } else if (split_cmd->parsed()) {
      run.manifest_path = default_prefix(split.input.path, "split-degree") + ".manifest.json";
      run_split(split, run);
    } else if (bench_cmd->parsed()) {
      run_bench(bench, out, run);
    } else {
      code = run_oracle(orc, out, run);
    }
  } catch (const UserError& e) {
    code = exit_user_error;
    message = e.what();
  } catch (const FitFailure& e) {
    code = exit_user_error;
    message = fmt::format("fit failed: {}", e.what());
  } catch (const std::exception& e) {
    code = exit_internal;
    message = fmt::format("internal error: {}", e.what());
  }
  if (!message.empty()) spdlog::error("{}", message);
  if (!common.manifest.empty()) run.manifest_path = common.manifest;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!run.manifest_path.empty()) write_manifest(run, sub, started, seconds, code, message);
  spdlog::info("{} finished in {:.2f} s with status {}", run.subcommand, seconds, code);
  return code;
}

}  // namespace cpcore::cli
