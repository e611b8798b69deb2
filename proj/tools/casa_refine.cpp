// casa-refine: batch front end for mask refinement, embedding pruning and
// the synthetic benchmark.
//
// Exit codes: 0 success, 1 usage/validation, 2 data/format, 3 solver did not
// converge (outputs still written).

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "casa/casa.hpp"

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

enum ExitCode : int { ok = 0, usage = 1, data = 2, nonconverged = 3 };

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int exit_code_for(casa::ErrorKind k) {
  return k == casa::ErrorKind::usage ? usage : data;
}

/// Worker threads: --jobs, capped by CASA_REFINE_THREADS when set.
unsigned thread_budget(unsigned requested) {
  unsigned n = std::max(1u, requested);
  if (const char* env = std::getenv("CASA_REFINE_THREADS")) {
    try {
      long cap = std::stol(env);
      if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring malformed CASA_REFINE_THREADS='" << env << "'\n";
    }
  }
  return n;
}

/// Config flags shared by refine and bench. Unset flags leave the config file
/// (or built-in defaults) untouched.
struct ConfigFlags {
  std::string config_path;
  std::optional<double> alpha, lambda, delta, cg_tol, lambda_floor;
  std::optional<int> gamma;
  std::optional<long> cg_max_iter;
  std::string solver;
  bool uniform_weights = false;
  bool no_symmetrize = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--alpha", alpha, "confidence sharpness (> 0)");
    app.add_option("--lambda", lambda, "smoothness weight (>= 0)");
    app.add_option("--delta", delta, "mask threshold in [0, 1]");
    app.add_option("--gamma", gamma, "cross-attention upsampling factor (>= 1)");
    app.add_option("--cg-tol", cg_tol, "relative residual tolerance for CG");
    app.add_option("--cg-max-iter", cg_max_iter, "CG iteration cap (default 10 * nodes)");
    app.add_option("--lambda-floor", lambda_floor, "lower bound on confidence weights");
    app.add_option("--solver", solver, "dense, cg or auto");
    app.add_flag("--uniform-weights", uniform_weights, "ablation: identity confidence matrix");
    app.add_flag("--no-symmetrize", no_symmetrize, "ablation: use the raw self-attention");
  }

  /// Config file first, then inline flags on top.
  casa::RefineConfig resolve() const {
    std::vector<std::string> warnings;
    casa::RefineConfig c = config_path.empty() ? casa::RefineConfig{} : casa::load_config(config_path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    json overlay = json::object();
    if (alpha) overlay["alpha"] = *alpha;
    if (lambda) overlay["lambda"] = *lambda;
    if (delta) overlay["delta"] = *delta;
    if (gamma) overlay["gamma"] = *gamma;
    if (cg_tol) overlay["cg_tol"] = *cg_tol;
    if (cg_max_iter) overlay["cg_max_iter"] = *cg_max_iter;
    if (lambda_floor) overlay["lambda_floor"] = *lambda_floor;
    if (!solver.empty()) overlay["solver"] = solver;
    if (uniform_weights) overlay["ablation_uniform_weights"] = true;
    if (no_symmetrize) overlay["ablation_no_symmetrize"] = true;
    try {
      return casa::apply_config_json(overlay, c);
    } catch (const casa::ValidationError& e) {
      std::string flag = e.field();
      std::replace(flag.begin(), flag.end(), '_', '-');
      throw casa::ValidationError(e.field(), "--" + flag + ": " + e.what());
    }
  }
};

json branch_json(const casa::BranchReport& b) {
  return {{"objective_initial", b.objective_initial}, {"objective_final", b.objective_final},
          {"solver", casa::solver_name(b.solver)},    {"cg_iterations", b.cg_iterations},
          {"residual_norm", b.residual_norm},         {"converged", b.converged},
          {"wall_ms", b.wall_ms}};
}

casa::DenseArray read_input(const std::string& path, const char* flag) {
  if (!std::filesystem::exists(path)) throw casa::IoError(std::string(flag) + ": no such file '" + path + "'");
  try {
    return casa::read_array(path);
  } catch (const casa::Error& e) {
    throw casa::Error(e.kind(), std::string(flag) + " '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct RefineArgs {
  ConfigFlags cfg;
  std::string cross_src, cross_tgt, self_src, self_tgt;
  std::string out_mask, out_saliency, out_fused;
  std::string z_tgt, z_src, out_latent;
  std::optional<double> sparsify;
  unsigned jobs = 1;
};

int cmd_refine(const RefineArgs& a, json& report) {
  const auto t0 = Clock::now();
  casa::RefineConfig config = a.cfg.resolve();
  report["config"] = casa::to_json(config);

  const auto cross_src = read_input(a.cross_src, "--cross-src");
  const auto cross_tgt = read_input(a.cross_tgt, "--cross-tgt");
  const auto self_src = read_input(a.self_src, "--self-src");
  const auto self_tgt = read_input(a.self_tgt, "--self-tgt");

  casa::PipelineOptions opts;
  opts.parallel_branches = thread_budget(a.jobs) > 1;
  opts.laplacian.sparsify_rel = a.sparsify;
  auto result = casa::run_pipeline(cross_src, cross_tgt, self_src, self_tgt, config, opts);

  const casa::Dtype out_dtype = cross_src.dtype();
  const auto side = static_cast<std::size_t>(result.mask.rows());
  const casa::Grid mask_grid = casa::mask_to_grid(result.mask);
  casa::write_array(casa::DenseArray::from_doubles({side, side}, std::span(mask_grid.data(), mask_grid.size()), out_dtype),
                    a.out_mask);
  if (!a.out_saliency.empty()) {
    std::vector<double> both(result.m_star_src.values.begin(), result.m_star_src.values.end());
    both.insert(both.end(), result.m_star_tgt.values.begin(), result.m_star_tgt.values.end());
    casa::write_array(casa::DenseArray::from_doubles({2, side, side}, both, out_dtype), a.out_saliency);
  }
  if (!a.out_fused.empty())
    casa::write_array(
        casa::DenseArray::from_doubles({side, side}, std::span(result.fused.data(), result.fused.size()), out_dtype),
        a.out_fused);

  if (!a.z_tgt.empty() || !a.z_src.empty() || !a.out_latent.empty()) {
    if (a.z_tgt.empty() || a.z_src.empty() || a.out_latent.empty())
      throw casa::ParameterError("--z-tgt, --z-src and --out-latent must be given together");
    const auto z_tgt = read_input(a.z_tgt, "--z-tgt");
    const auto z_src = read_input(a.z_src, "--z-src");
    const auto& s = z_tgt.shape();
    if (s.size() < 2) throw casa::ShapeError("--z-tgt: latent must have rank >= 2");
    auto m = casa::resize_nearest(result.mask, static_cast<Eigen::Index>(s[s.size() - 2]),
                                  static_cast<Eigen::Index>(s[s.size() - 1]));
    casa::write_array(casa::blend_latents(m, z_tgt, z_src), a.out_latent);
  }

  const auto& r = result.report;
  report["objective_initial"] = r.src.objective_initial + r.tgt.objective_initial;
  report["objective_final"] = r.src.objective_final + r.tgt.objective_final;
  report["solver"] = r.src.solver == r.tgt.solver ? casa::solver_name(r.src.solver) : "mixed";
  report["cg_iterations"] = r.src.cg_iterations + r.tgt.cg_iterations;
  report["converged"] = r.converged();
  report["branches"] = {{"src", branch_json(r.src)}, {"tgt", branch_json(r.tgt)}};
  report["side"] = side;
  report["fused_min"] = r.fused_min;
  report["fused_max"] = r.fused_max;
  report["mask_pixels"] = r.mask_count;
  report["wall_ms"] = ms_since(t0);
  if (!r.converged()) {
    std::cerr << "warning: conjugate gradient did not reach the tolerance; outputs hold the best iterate\n";
    return nonconverged;
  }
  return ok;
}

// ---------------------------------------------------------------------------

struct PruneArgs {
  std::string config_path;
  std::string src_img, src_txt, tgt_txt, out;
  std::optional<double> tau_percentile;
  std::string sign = "paper";
};

int cmd_prune(const PruneArgs& a, json& report) {
  const auto t0 = Clock::now();
  double tau_p = casa::RefineConfig{}.tau_percentile;
  if (!a.config_path.empty()) {
    std::vector<std::string> warnings;
    tau_p = casa::load_config(a.config_path, &warnings).tau_percentile;
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }
  if (a.tau_percentile) {
    tau_p = *a.tau_percentile;
    if (!(tau_p >= 0 && tau_p <= 100))
      throw casa::ValidationError("tau_percentile", "--tau-percentile: tau_percentile must be in [0, 100]");
  }
  const casa::OffsetSign sign = casa::parse_offset_sign(a.sign);
  report["config"] = {{"tau_percentile", tau_p}, {"sign", a.sign}};

  const auto img = read_input(a.src_img, "--src-img");
  const auto src = read_input(a.src_txt, "--src-txt");
  const auto tgt = read_input(a.tgt_txt, "--tgt-txt");
  auto as_vec = [](const casa::DenseArray& arr) {
    auto v = arr.to_doubles();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  const Eigen::VectorXd e_img = as_vec(img), e_src = as_vec(src), e_tgt = as_vec(tgt);
  const Eigen::VectorXd out = casa::interpolate(e_img, e_src, e_tgt, tau_p, sign);
  casa::write_array(casa::DenseArray::from_doubles(img.shape(), std::span(out.data(), out.size()), img.dtype()), a.out);

  const Eigen::VectorXd offset = sign == casa::OffsetSign::paper ? Eigen::VectorXd(e_src - e_tgt)
                                                                 : Eigen::VectorXd(e_tgt - e_src);
  const double tau = casa::percentile_threshold(offset, tau_p);
  report["dims"] = e_img.size();
  report["tau"] = tau;
  report["kept"] = (casa::prune_with_threshold(offset, tau).array() != 0.0).count();
  report["wall_ms"] = ms_since(t0);
  return ok;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  ConfigFlags cfg;
  std::size_t seeds = 20;
  std::uint64_t seed = 0;
  long side = 32;
  std::string scenario = "disk";
  double noise_sigma = casa::ScenarioParams{}.noise_sigma;
  int spill_count = casa::ScenarioParams{}.spill_count;
  double spill_magnitude = casa::ScenarioParams{}.spill_magnitude;
  std::string out_csv;
  bool timings = false;
  unsigned jobs = 1;
};

json summary_json(const casa::BenchSummary& s) {
  return {{"seeds", s.seeds},
          {"mean_iou_before", s.mean_iou_before},
          {"mean_iou_after", s.mean_iou_after},
          {"mean_iou_delta", s.mean_iou_delta()},
          {"mean_smoothness_before", s.mean_smoothness_before},
          {"mean_smoothness_after", s.mean_smoothness_after},
          {"spill_pixels_before", s.spill_before},
          {"spill_pixels_after", s.spill_after},
          {"nonconverged", s.nonconverged}};
}

int cmd_bench(const BenchArgs& a, json& report) {
  const auto t0 = Clock::now();
  casa::RefineConfig config = a.cfg.resolve();
  report["config"] = casa::to_json(config);
  casa::ScenarioParams p;
  p.side = a.side;
  p.shape = casa::parse_region(a.scenario);
  p.noise_sigma = a.noise_sigma;
  p.spill_count = a.spill_count;
  p.spill_magnitude = a.spill_magnitude;
  std::vector<std::uint64_t> seeds(a.seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = a.seed + i;

  auto bench = casa::run_suite(config, seeds, p, thread_budget(a.jobs));
  const std::string csv = bench.to_csv(a.timings);
  casa::write_file_atomic(a.out_csv, std::span(csv.data(), csv.size()));

  const auto full = bench.summary(casa::Ablation::full);
  json j = summary_json(full);
  for (auto& [k, v] : j.items()) report[k] = v;
  json ablations = json::object();
  for (auto abl : casa::all_ablations) ablations[casa::ablation_name(abl)] = summary_json(bench.summary(abl));
  report["ablations"] = ablations;
  report["scenario"] = {{"shape", a.scenario},           {"side", a.side},
                        {"noise_sigma", a.noise_sigma},  {"spill_count", a.spill_count},
                        {"spill_magnitude", a.spill_magnitude}, {"first_seed", a.seed}};
  report["rows"] = bench.rows.size();
  long cg = 0;
  int nonconv = 0;
  for (const auto& r : bench.rows) {
    cg += r.cg_iters;
    nonconv += r.converged ? 0 : 1;
  }
  double obj_initial = 0.0, obj_final = 0.0;
  for (const auto& r : bench.rows) {
    if (r.ablation != casa::Ablation::full) continue;
    obj_initial += r.obj_initial;
    obj_final += r.obj_final;
  }
  report["objective_initial"] = obj_initial;
  report["objective_final"] = obj_final;
  report["solver"] = casa::solver_name(bench.rows.front().solver);
  report["cg_iterations"] = cg;
  report["wall_ms"] = ms_since(t0);
  if (nonconv) {
    std::cerr << "warning: " << nonconv << " benchmark rows did not converge\n";
    return nonconverged;
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Refine attention saliency maps into edit masks by graph Laplacian regularization"};
  app.set_version_flag("--version", std::string(casa::version));
  app.require_subcommand(1);

  RefineArgs ra;
  auto* refine = app.add_subcommand("refine", "refine source/target saliency and write the edit mask");
  ra.cfg.attach(*refine);
  refine->add_option("--cross-src", ra.cross_src, "source cross-attention stack (B x r x r)")->required();
  refine->add_option("--cross-tgt", ra.cross_tgt, "target cross-attention stack (B x r x r)")->required();
  refine->add_option("--self-src", ra.self_src, "source self-attention (R^2 x R^2, optionally stacked)")->required();
  refine->add_option("--self-tgt", ra.self_tgt, "target self-attention (R^2 x R^2, optionally stacked)")->required();
  refine->add_option("--out-mask", ra.out_mask, "binary mask output (R x R)")->required();
  refine->add_option("--out-saliency", ra.out_saliency, "refined saliency output (2 x R x R: src, tgt)");
  refine->add_option("--out-fused", ra.out_fused, "element-wise max of refined maps (R x R)");
  refine->add_option("--z-tgt", ra.z_tgt, "target latent to blend");
  refine->add_option("--z-src", ra.z_src, "source latent to blend");
  refine->add_option("--out-latent", ra.out_latent, "blended latent output");
  refine->add_option("--sparsify", ra.sparsify, "drop affinities below this fraction of the row maximum");
  refine->add_option("--jobs", ra.jobs, "worker threads");

  PruneArgs pa;
  auto* prune = app.add_subcommand("prune", "interpolate an image embedding with a pruned text offset");
  prune->add_option("--config", pa.config_path, "JSON config file (tau_percentile)");
  prune->add_option("--src-img", pa.src_img, "source image embedding")->required();
  prune->add_option("--src-txt", pa.src_txt, "source text embedding")->required();
  prune->add_option("--tgt-txt", pa.tgt_txt, "target text embedding")->required();
  prune->add_option("--tau-percentile", pa.tau_percentile, "pruning percentile in [0, 100]");
  prune->add_option("--sign", pa.sign, "offset direction: paper (src - tgt) or reversed")
      ->check(CLI::IsMember({"paper", "reversed"}));
  prune->add_option("--out", pa.out, "output embedding")->required();

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "run the synthetic spill benchmark");
  ba.cfg.attach(*bench);
  bench->add_option("--seeds", ba.seeds, "number of seeds (>= 5)");
  bench->add_option("--seed", ba.seed, "first seed");
  bench->add_option("--side", ba.side, "grid side R (>= 8)");
  bench->add_option("--scenario", ba.scenario, "disk, rectangle or two_blobs")
      ->check(CLI::IsMember({"disk", "rectangle", "two_blobs"}));
  bench->add_option("--noise-sigma", ba.noise_sigma, "additive noise standard deviation");
  bench->add_option("--spill-count", ba.spill_count, "isolated spill responses per scenario");
  bench->add_option("--spill-magnitude", ba.spill_magnitude, "height of each spill response");
  bench->add_option("--out-csv", ba.out_csv, "per-seed CSV output")->required();
  bench->add_flag("--timings", ba.timings, "record wall_ms in the CSV (output no longer byte-stable)");
  bench->add_option("--jobs", ba.jobs, "worker threads");

  std::string command = "unknown";
  if (argc > 1 && (std::string(argv[1]) == "refine" || std::string(argv[1]) == "prune" || std::string(argv[1]) == "bench"))
    command = argv[1];
  json report = json::object();
  int code = ok;
  try {
    app.parse(argc, argv);
    command = refine->parsed() ? "refine" : prune->parsed() ? "prune" : "bench";
    report["command"] = command;
    if (refine->parsed()) code = cmd_refine(ra, report);
    else if (prune->parsed()) code = cmd_prune(pa, report);
    else code = cmd_bench(ba, report);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    report = {{"command", command}, {"error", e.what()}};
    code = usage;
  } catch (const casa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    report = {{"command", command}, {"error", e.what()}};
    code = exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    report = {{"command", command}, {"error", e.what()}};
    code = data;
  }
  report["exit_code"] = code;
  std::cout << report.dump() << std::endl;
  return code;
}
