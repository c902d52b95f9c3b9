#ifndef COOPCBF_REPORT_HPP
#define COOPCBF_REPORT_HPP

// Text artifacts of a run: per-tick CSV, solve-time sidecar, and plot data (paths, bar
// segments, SVG). Numbers are printed with a fixed format so equal runs give equal bytes.

#include "coopcbf/scenario.hpp"
#include "coopcbf/sim.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace coopcbf::report {

inline std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::vector<std::string> run_csv_header(const sim::RunLog& log)
{
  std::vector<std::string> h{"time_s"};
  for (int i = 1; i <= 2; ++i) {
    const std::string a = "a" + std::to_string(i) + "_";
    for (const char* c : {"x_m", "y_m", "z_m", "vx_mps", "vy_mps", "vz_mps", "yaw_rad", "pitch_rad", "roll_rad"})
      h.push_back(a + c);
  }
  for (int k = 0; k < 4; ++k) h.push_back("phi_s" + std::to_string(k) + "_mps");
  for (const auto& l : log.barrier_labels) h.push_back(l);
  h.push_back("separation_m");
  h.push_back("lambda");
  static const char* legs[] = {"fr", "fl", "rr", "rl"};
  for (int i = 1; i <= 2; ++i)
    for (const char* leg : legs)
      for (const char* ax : {"x", "y", "z"}) h.push_back("grf_a" + std::to_string(i) + "_" + leg + "_" + ax + "_N");
  h.push_back("flags");
  return h;
}

inline void write_run_csv(std::ostream& os, const sim::RunLog& log)
{
  const auto header = run_csv_header(log);
  for (std::size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
  os << '\n';
  for (const sim::LogRow& r : log.rows) {
    os << num(r.time);
    for (std::size_t i = 0; i < 2; ++i) {
      for (int a = 0; a < 3; ++a) os << ',' << num(r.position[i][a]);
      for (int a = 0; a < 3; ++a) os << ',' << num(r.velocity[i][a]);
      os << ',' << num(r.euler[i].yaw) << ',' << num(r.euler[i].pitch) << ',' << num(r.euler[i].roll);
    }
    for (int k = 0; k < 4; ++k) os << ',' << num(r.phi_s[k]);
    for (Eigen::Index k = 0; k < r.barriers.size(); ++k) os << ',' << num(r.barriers[k]);
    os << ',' << num(r.separation) << ',' << num(r.lambda);
    for (int k = 0; k < srb::kForceDim; ++k) os << ',' << num(r.grf[k]);
    os << ',' << r.flags << '\n';
  }
}

/// solve_us_planner, solve_us_mpc per tick (empty MPC column in kinematic mode).
inline void write_timing_csv(std::ostream& os, const sim::RunLog& log)
{
  os << "tick,solve_us_planner,solve_us_mpc\n";
  for (std::size_t k = 0; k < log.planner_solve_us.size(); ++k) {
    os << k << ',' << num(log.planner_solve_us[k]) << ',';
    if (k < log.mpc_solve_us.size()) os << num(log.mpc_solve_us[k]);
    os << '\n';
  }
}

/// Planar attachment points (x1, y1, x2, y2) per row.
inline std::vector<Eigen::Vector4d> planar_path(const sim::RunLog& log)
{
  std::vector<Eigen::Vector4d> p;
  p.reserve(log.rows.size());
  for (const auto& r : log.rows) p.emplace_back(r.position[0].x(), r.position[0].y(), r.position[1].x(), r.position[1].y());
  return p;
}

/// Row indices at multiples of interval (the first row at or after each mark).
inline std::vector<std::size_t> bar_samples(const sim::RunLog& log, double interval)
{
  std::vector<std::size_t> idx;
  double next = 0.0;
  for (std::size_t k = 0; k < log.rows.size(); ++k)
    if (log.rows[k].time >= next - 1e-9) {
      idx.push_back(k);
      next += interval;
    }
  return idx;
}

inline void write_paths_csv(std::ostream& os, const sim::RunLog& log)
{
  os << "time_s,x1_m,y1_m,x2_m,y2_m\n";
  const auto p = planar_path(log);
  for (std::size_t k = 0; k < p.size(); ++k)
    os << num(log.rows[k].time) << ',' << num(p[k][0]) << ',' << num(p[k][1]) << ',' << num(p[k][2]) << ','
       << num(p[k][3]) << '\n';
}

inline void write_bars_csv(std::ostream& os, const sim::RunLog& log, double interval = 0.5)
{
  os << "time_s,x1_m,y1_m,x2_m,y2_m\n";
  const auto p = planar_path(log);
  for (std::size_t k : bar_samples(log, interval))
    os << num(log.rows[k].time) << ',' << num(p[k][0]) << ',' << num(p[k][1]) << ',' << num(p[k][2]) << ','
       << num(p[k][3]) << '\n';
}

/// Top-down figure: obstacles, both paths, bar segments every interval seconds, starts and goals.
inline void write_svg(std::ostream& os, const ScenarioConfig& cfg, const sim::RunLog& log, double interval = 0.5)
{
  const auto p = planar_path(log);
  double xmin = std::min(cfg.start[0], cfg.start[2]), xmax = std::max(cfg.goal[0], cfg.goal[2]);
  double ymin = std::min({cfg.start[1], cfg.start[3], cfg.goal[1], cfg.goal[3]});
  double ymax = std::max({cfg.start[1], cfg.start[3], cfg.goal[1], cfg.goal[3]});
  auto grow = [&](double x, double y, double r) {
    xmin = std::min(xmin, x - r);
    xmax = std::max(xmax, x + r);
    ymin = std::min(ymin, y - r);
    ymax = std::max(ymax, y + r);
  };
  for (const auto& o : cfg.obstacles) grow(o.center.x(), o.center.y(), o.radius);
  for (const auto& q : p) {
    grow(q[0], q[1], 0.0);
    grow(q[2], q[3], 0.0);
  }
  const double margin = 0.3, scale = 120.0;
  xmin -= margin;
  ymin -= margin;
  xmax += margin;
  ymax += margin;
  auto X = [&](double x) { return num((x - xmin) * scale); };
  auto Y = [&](double y) { return num((ymax - y) * scale); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num((xmax - xmin) * scale) << "\" height=\""
     << num((ymax - ymin) * scale) << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& o : cfg.obstacles)
    os << "<circle cx=\"" << X(o.center.x()) << "\" cy=\"" << Y(o.center.y()) << "\" r=\"" << num(o.radius * scale)
       << "\" fill=\"#bbbbbb\"/>\n";
  for (std::size_t k : bar_samples(log, interval))
    os << "<line x1=\"" << X(p[k][0]) << "\" y1=\"" << Y(p[k][1]) << "\" x2=\"" << X(p[k][2]) << "\" y2=\"" << Y(p[k][3])
       << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  const char* colors[] = {"#d62728", "#1f77b4"};
  for (int i = 0; i < 2; ++i) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[i] << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < p.size(); ++k) os << (k ? " " : "") << X(p[k][2 * i]) << ',' << Y(p[k][2 * i + 1]);
    os << "\"/>\n";
    os << "<circle cx=\"" << X(cfg.start[2 * i]) << "\" cy=\"" << Y(cfg.start[2 * i + 1]) << "\" r=\"4\" fill=\"" << colors[i]
       << "\"/>\n";
    os << "<circle cx=\"" << X(cfg.goal[2 * i]) << "\" cy=\"" << Y(cfg.goal[2 * i + 1]) << "\" r=\"6\" fill=\"none\" stroke=\""
       << colors[i] << "\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace coopcbf::report

#endif  // COOPCBF_REPORT_HPP
