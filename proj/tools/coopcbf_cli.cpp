// coopcbf: run, validate and time the coordination stack.
//
//   coopcbf run scenarios/two_obstacles.json [--mode full] [--noise -43] [--seed 7] [--out DIR]
//   coopcbf validate scenarios/*.json
//   coopcbf bench
//
// Exit status of run: 0 when every scenario meets its thresholds, 1 when one does not,
// 2 when a scenario cannot be loaded.

#include "coopcbf/qp.hpp"
#include "coopcbf/report.hpp"
#include "coopcbf/scenario_io.hpp"
#include "coopcbf/sim.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace coopcbf;

namespace {

/// Accepts a path with or without the .json suffix.
std::string resolve(const std::string& arg)
{
  if (fs::exists(arg)) return arg;
  if (fs::exists(arg + ".json")) return arg + ".json";
  return arg;
}

unsigned worker_count(std::size_t jobs)
{
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COOPCBF_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

std::string output_stem(const ScenarioConfig& c)
{
  std::string s = c.name + "_" + to_string(c.mode);
  if (c.noise.enabled) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "_noise%gdb_seed%llu", c.noise.level_db, static_cast<unsigned long long>(c.noise.seed));
    s += buf;
  }
  return s;
}

template <class Fn>
void write_file(const fs::path& p, Fn&& fn)
{
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  fn(os);
}

struct Job
{
  std::string input;
  std::optional<ScenarioConfig> config;
  std::string error;
  io::json summary;
  bool passed = false;
  std::string line;
};

void run_job(Job& job, const fs::path& out_dir)
{
  const ScenarioConfig& cfg = *job.config;
  sim::RunLog log;
  try {
    log = sim::run_scenario(cfg);
  } catch (const std::exception& e) {
    job.error = e.what();
    job.summary = {{"input", job.input}, {"scenario", cfg.name}, {"passed", false}, {"error", job.error}};
    job.line = "ERROR " + cfg.name + ": " + job.error;
    return;
  }
  const auto checks = sim::evaluate_thresholds(cfg, log.summary);
  job.passed = sim::all_passed(checks);
  job.summary = io::summary_json(cfg, log, checks);
  job.summary["input"] = job.input;

  const std::string stem = output_stem(cfg);
  job.summary["files"] = {{"log", stem + ".csv"},
                          {"timing", stem + "_timing.csv"},
                          {"paths", stem + "_paths.csv"},
                          {"bars", stem + "_bars.csv"},
                          {"figure", stem + ".svg"}};
  write_file(out_dir / (stem + ".csv"), [&](std::ostream& os) { report::write_run_csv(os, log); });
  write_file(out_dir / (stem + "_timing.csv"), [&](std::ostream& os) { report::write_timing_csv(os, log); });
  write_file(out_dir / (stem + "_paths.csv"), [&](std::ostream& os) { report::write_paths_csv(os, log); });
  write_file(out_dir / (stem + "_bars.csv"), [&](std::ostream& os) { report::write_bars_csv(os, log); });
  write_file(out_dir / (stem + ".svg"), [&](std::ostream& os) { report::write_svg(os, cfg, log); });

  const sim::RunSummary& s = log.summary;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s %-28s min_h=%.3e goal=%s max|sep-sqrt(psi)|=%.2e planner_med=%.0fus mpc_med=%.0fus wall=%.2fs",
                job.passed ? "PASS" : "FAIL", stem.c_str(), s.min_barrier,
                s.goal_reached ? (std::to_string(s.goal_time) + "s").c_str() : "no", s.max_drift, s.planner_median_us,
                s.mpc_median_us, s.wall_time_s);
  job.line = buf;
  for (const auto& c : checks) {
    if (c.passed) continue;
    if (c.name == "goal_reached") {
      std::snprintf(buf, sizeof buf, "\n     goal_reached: not within %g s (distances %.3f m, %.3f m)", c.limit,
                    s.final_goal_distance[0], s.final_goal_distance[1]);
      job.line += buf;
    } else {
      std::snprintf(buf, sizeof buf, "\n     %s: %.4g (limit %.4g)", c.name.c_str(), c.value, c.limit);
      job.line += buf;
    }
  }
  if (s.aborted) job.line += "\n     aborted at tick " + std::to_string(s.abort_tick) + ": " + s.abort_reason;
}

int cmd_run(const std::vector<std::string>& inputs, const std::string& mode, std::optional<double> noise_db,
            std::optional<std::uint64_t> seed, const std::string& out, std::optional<double> duration)
{
  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  std::vector<Job> jobs(inputs.size());
  bool load_error = false;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Job& job = jobs[k];
    job.input = inputs[k];
    try {
      ScenarioConfig c = io::load_scenario(resolve(inputs[k]));
      if (!mode.empty()) c.mode = mode == "full" ? RunMode::Full : RunMode::Kinematic;
      if (noise_db) {
        c.noise.enabled = true;
        c.noise.level_db = *noise_db;
      }
      if (seed) c.noise.seed = *seed;
      if (duration) c.duration = *duration;
      c.validate();
      job.config = std::move(c);
    } catch (const std::exception& e) {
      load_error = true;
      job.error = e.what();
      job.summary = {{"input", job.input}, {"passed", false}, {"error", job.error}};
      job.line = "ERROR " + job.error;
    }
  }

  // Each worker pulls whole scenarios; every run owns its planner, MPC, plant and RNG.
  std::atomic<std::size_t> next{0};
  std::mutex print;
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      if (!jobs[k].config) continue;
      run_job(jobs[k], out_dir);
      std::lock_guard<std::mutex> lock(print);
      std::cout << jobs[k].line << std::endl;
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = worker_count(jobs.size());
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  bool all = !load_error;
  io::json summary = io::json::array();
  for (const Job& j : jobs) {
    if (!j.config) std::cout << j.line << std::endl;
    all = all && j.passed;
    summary.push_back(j.summary);
  }
  write_file(out_dir / "summary.json", [&](std::ostream& os) { os << summary.dump(2) << '\n'; });
  std::cout << "summary: " << (out_dir / "summary.json").string() << std::endl;
  if (load_error) return 2;
  return all ? 0 : 1;
}

int cmd_validate(const std::vector<std::string>& inputs)
{
  int status = 0;
  for (const auto& in : inputs) {
    try {
      const ScenarioConfig c = io::load_scenario(resolve(in));
      std::cout << "OK    " << in << " (" << c.name << ", " << c.obstacles.size() << " obstacles, "
                << planner::barrier_labels(c.barrier_set()).size() << " barrier rows)\n";
    } catch (const std::exception& e) {
      std::cout << "ERROR " << e.what() << '\n';
      status = 1;
    }
  }
  return status;
}

/// Solver timing: planner QPs and MPC solves along a full-stack run, plus random dense QPs.
int cmd_bench(double duration, int qp_instances)
{
  ScenarioConfig cfg = obstacle_course(2);
  cfg.mode = RunMode::Full;
  cfg.duration = duration;
  const sim::RunLog log = sim::run_scenario(cfg);
  const sim::RunSummary& s = log.summary;
  std::printf("planner QP  (%zu solves): median %8.1f us  max %8.1f us\n", log.planner_solve_us.size(), s.planner_median_us,
              s.planner_max_us);
  std::printf("MPC         (%zu solves): median %8.1f us  max %8.1f us  (%d decision variables)\n", log.mpc_solve_us.size(),
              s.mpc_median_us, s.mpc_max_us, s.mpc_decision_variables);

  mpc::MpcConfig stacked;
  stacked.formulation = mpc::Formulation::Stacked;
  const srb::SrbModel model = cfg.srb_model();
  srb::SrbState x;
  x.agents[0].position = Eigen::Vector3d(0.0, 0.0, 0.26);
  x.agents[1].position = Eigen::Vector3d(0.0, -1.0, 0.26);
  const srb::ContactState contacts = srb::standing_contacts(model, x);
  const auto ref = mpc::build_reference(model, Eigen::Vector4d(0.2, 0.0, 0.2, 0.0), x, stacked);
  std::vector<double> t_stacked;
  for (int k = 0; k < 5; ++k)
    t_stacked.push_back(
        mpc::solve_mpc(model, x, contacts, ref, stacked, srb::gravity_compensation(model, contacts), 0.0).diagnostics.solve_time_us);
  std::printf("MPC stacked (%zu solves): median %8.1f us\n", t_stacked.size(), sim::median(t_stacked));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> t_qp;
  for (int k = 0; k < qp_instances; ++k) {
    const int n = 12, m = 16;
    Eigen::MatrixXd L(n, n);
    for (int i = 0; i < L.size(); ++i) L.data()[i] = g(rng);
    qp::QpProblem pb(L * L.transpose() + Eigen::MatrixXd::Identity(n, n), Eigen::VectorXd::NullaryExpr(n, [&] { return g(rng); }));
    pb.ineq_matrix = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return g(rng); });
    pb.ineq_vector = Eigen::VectorXd::NullaryExpr(m, [&] { return g(rng) - 1.0; });
    const auto t0 = std::chrono::steady_clock::now();
    const qp::QpSolution sol = qp::solve_qp(pb);
    t_qp.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
    (void)sol;
  }
  std::printf("dense QP 12x16 (%d solves): median %8.1f us\n", qp_instances, sim::median(t_qp));
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Two-agent coordination stack: CBF velocity planner, SRB MPC and plant"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run scenarios and write logs, plots and summary.json");
  std::vector<std::string> run_inputs;
  std::string mode, out = "out";
  std::optional<double> noise_db, duration;
  std::optional<std::uint64_t> seed;
  run->add_option("scenario", run_inputs, "Scenario files (.json suffix optional)")->required();
  run->add_option("--mode", mode, "Override the scenario mode")->check(CLI::IsMember({"kinematic", "full"}));
  run->add_option("--noise", noise_db, "Enable input noise at this level in dB relative to the command RMS");
  run->add_option("--seed", seed, "Noise seed");
  run->add_option("--duration", duration, "Override the time limit in seconds");
  run->add_option("--out", out, "Output directory")->capture_default_str();

  auto* validate = app.add_subcommand("validate", "Parse and check scenario files");
  std::vector<std::string> validate_inputs;
  validate->add_option("scenario", validate_inputs, "Scenario files")->required();

  auto* bench = app.add_subcommand("bench", "Re-run the solver timing suite");
  double bench_duration = 5.0;
  int qp_instances = 1000;
  bench->add_option("--duration", bench_duration, "Simulated seconds of the full-stack timing run")->capture_default_str();
  bench->add_option("--qp-instances", qp_instances, "Random dense QPs to time")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_inputs, mode, noise_db, seed, out, duration);
    if (*validate) return cmd_validate(validate_inputs);
    if (*bench) return cmd_bench(bench_duration, qp_instances);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
