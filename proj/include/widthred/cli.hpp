#ifndef WIDTHRED_CLI_HPP
#define WIDTHRED_CLI_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "widthred/core.hpp"
#include "widthred/crude_solver.hpp"
#include "widthred/instance_io.hpp"
#include "widthred/losses.hpp"
#include "widthred/oracle.hpp"
#include "widthred/refine_solver.hpp"

namespace widthred {

// ---------------------------------------------------------------------------
// Trace CSV

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Crude rows carry six columns; with refine columns every row gets eleven and
/// crude rows leave the refine ones empty.
inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows, bool refine_columns) {
  os << "iteration,step_kind,phi,psi,max_abs_PDelta,objective";
  if (refine_columns) os << ",refine_step,nu,zeta,res_value,accepted";
  os << "\n";
  for (const auto& r : rows) {
    os << r.iteration << ',' << to_string(r.kind) << ',' << format_double(r.phi) << ',' << format_double(r.psi)
       << ',' << format_double(r.max_abs_PDelta) << ',' << format_double(r.objective);
    if (refine_columns) {
      if (r.kind == StepKind::Refine)
        os << ',' << r.refine_step << ',' << format_double(r.nu) << ',' << format_double(r.zeta) << ','
           << format_double(r.res_value) << ',' << (r.accepted ? "true" : "false");
      else
        os << ",,,,,";
    }
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Exit codes and logging

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::TheoryViolation: return 4;
    case ErrorKind::RankDeficient:
    case ErrorKind::OracleFailure:
    case ErrorKind::NonConverged:
    case ErrorKind::InfeasibleAugmented:
    case ErrorKind::EmptyVector: return 3;
    default: return 2;
  }
}

inline std::string error_json(std::string_view kind, const std::string& message, int code) {
  nlohmann::json j = {{"error", kind}, {"message", message}, {"exit_code", code}};
  return j.dump();
}

class Log {
 public:
  // WIDTHRED_LOG: 0/quiet (default), 1/info, 2/debug
  static int level() {
    const char* v = std::getenv("WIDTHRED_LOG");
    if (!v) return 0;
    const std::string s(v);
    if (s == "info") return 1;
    if (s == "debug") return 2;
    if (s == "quiet" || s.empty()) return 0;
    try {
      return std::stoi(s);
    } catch (...) {
      return 0;
    }
  }
  static void info(const std::string& msg) {
    if (level() >= 1) std::cerr << "[widthred] " << msg << "\n";
  }
  static void debug(const std::string& msg) {
    if (level() >= 2) std::cerr << "[widthred:debug] " << msg << "\n";
  }
};

// ---------------------------------------------------------------------------

struct ScaleRow {
  Index m = 0;
  long flow_steps = 0;
  long width_steps = 0;
  double tau = 0.0;
  double objective = 0.0;
  std::string failure;
};

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::InvalidParameter, "slope needs >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

struct ScaleOptions {
  std::vector<Index> ms{64, 128, 256, 512, 1024, 2048, 4096};
  Index n = 8;
  Index d = 2;
  std::string loss = "exp";
  GenerateParams params{};
  double radius = 1.0;  // generator hint: planted ||P x||_inf = 1
  std::uint64_t seed = 1;
  MwuConfig cfg{};
  unsigned threads = 0;  // 0: hardware concurrency
};

/// One crude run per m on generated instances, spread over worker threads.
inline std::vector<ScaleRow> run_scale(const ScaleOptions& opt) {
  std::vector<ScaleRow> rows(opt.ms.size());
  unsigned workers = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(opt.ms.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < opt.ms.size(); i = next++) {
      ScaleRow& row = rows[i];
      row.m = opt.ms[i];
      try {
        const auto file = generate(opt.loss, opt.seed + i, opt.d, opt.n, row.m, opt.params);
        const auto inst = effective_instance(file.instance(), file.loss);
        MwuConfig c = opt.cfg;
        c.record_trace = false;
        const auto sol = qsc_mwu(inst, resolve_loss(file.loss), opt.radius, c);
        row.flow_steps = sol.flow_steps;
        row.width_steps = sol.width_steps;
        row.tau = sol.schedule.tau;
        row.objective = sol.objective;
      } catch (const Error& e) {
        row.failure = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w + 1 < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return rows;
}

// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::Usage, "cannot write '" + p.string() + "'");
  out << text;
}

inline void emit(std::ostream& os, const nlohmann::json& j, const std::string& format) {
  if (format == "json") {
    os << j.dump(2) << "\n";
    return;
  }
  // csv: flat key,value rows for objects, header + rows for arrays of objects
  if (j.is_array()) {
    if (j.empty()) return;
    std::vector<std::string> keys;
    for (auto it = j[0].begin(); it != j[0].end(); ++it) keys.push_back(it.key());
    for (std::size_t k = 0; k < keys.size(); ++k) os << (k ? "," : "") << keys[k];
    os << "\n";
    for (const auto& row : j) {
      for (std::size_t k = 0; k < keys.size(); ++k) {
        const auto& v = row[keys[k]];
        os << (k ? "," : "");
        if (v.is_number_float())
          os << format_double(v.get<double>());
        else if (v.is_string())
          os << v.get<std::string>();
        else
          os << v.dump();
      }
      os << "\n";
    }
    return;
  }
  os << "key,value\n";
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it->is_structured()) continue;
    os << it.key() << ',';
    if (it->is_number_float())
      os << format_double(it->get<double>());
    else if (it->is_string())
      os << it->get<std::string>();
    else
      os << it->dump();
    os << "\n";
  }
}

}  // namespace detail

struct CliFlags {
  std::string instance;
  std::string loss;
  double eps = -1.0;
  double radius = -1.0;
  std::uint64_t seed = 1;
  std::string out;
  double c_tau = 1.0;
  double c_alpha = 1.0;
  long max_width_steps = -1;
  std::string format = "json";
  // loss parameters for --loss / generate
  double nu = 0.5;
  double p = 3.0;
  double mu = 1.0;
  // generate
  std::string kind = "logistic";
  long d = 2, n = 4, m = 16;
  // scale
  std::vector<long> ms{64, 128, 256, 512, 1024, 2048, 4096};
  long scale_n = 8, scale_d = 2;
  unsigned threads = 0;
  long max_outer = 50000;
};

/// Entry point of the widthred tool. Output goes to `out`, diagnostics and
/// error JSON to `err`.
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"width-reduced solvers for constrained q.s.c. minimisation"};
  app.require_subcommand(1);
  CliFlags fl;

  auto add_common = [&](CLI::App* sub, bool need_instance) {
    auto* opt = sub->add_option("--instance", fl.instance, "instance JSON file");
    if (need_instance) opt->required();
    sub->add_option("--out", fl.out, "output directory");
    sub->add_option("--format", fl.format, "stdout summary format")->check(CLI::IsMember({"json", "csv"}));
  };
  auto add_loss = [&](CLI::App* sub) {
    sub->add_option("--loss", fl.loss, "loss key: exp | sym-exp | lp | logistic");
    sub->add_option("--nu", fl.nu, "exp smoothing nu");
    sub->add_option("--p", fl.p, "lp exponent");
    sub->add_option("--mu", fl.mu, "lp quadratic weight");
  };
  auto add_mwu = [&](CLI::App* sub) {
    sub->add_option("--eps", fl.eps, "accuracy parameter");
    sub->add_option("--radius", fl.radius, "radius R (default: instance hint)");
    sub->add_option("--c-tau", fl.c_tau, "tau scale");
    sub->add_option("--c-alpha", fl.c_alpha, "alpha scale");
    sub->add_option("--max-width-steps", fl.max_width_steps, "width-step cap override");
  };

  auto* crude = app.add_subcommand("crude", "width-reduced MWU crude solve");
  add_common(crude, true);
  add_loss(crude);
  add_mwu(crude);
  auto* boost = app.add_subcommand("boost", "crude solve followed by iterative refinement");
  add_common(boost, true);
  add_loss(boost);
  add_mwu(boost);
  boost->add_option("--max-outer", fl.max_outer, "refinement step cap");
  auto* oracle = app.add_subcommand("oracle", "projected Newton (or LP for sym-exp) reference solve");
  add_common(oracle, true);
  add_loss(oracle);
  auto* check = app.add_subcommand("check", "q.s.c. and Hessian-stability checks, plus solver invariants on an instance");
  add_common(check, false);
  add_loss(check);
  add_mwu(check);
  auto* scale = app.add_subcommand("scale", "width-step counts over a sweep of m");
  scale->add_option("--out", fl.out, "output directory");
  scale->add_option("--format", fl.format, "stdout format")->check(CLI::IsMember({"json", "csv"}));
  add_loss(scale);
  add_mwu(scale);
  scale->add_option("--seed", fl.seed, "base seed");
  scale->add_option("--ms", fl.ms, "row counts");
  scale->add_option("--n", fl.scale_n, "columns");
  scale->add_option("--d", fl.scale_d, "constraints");
  scale->add_option("--threads", fl.threads, "worker threads (0: all cores)");
  auto* gen = app.add_subcommand("generate", "write a synthetic instance");
  gen->add_option("--kind", fl.kind, "loss key of the instance")->check(CLI::IsMember({"exp", "sym-exp", "lp", "logistic"}));
  gen->add_option("--seed", fl.seed, "seed");
  gen->add_option("--d", fl.d, "constraints");
  gen->add_option("--n", fl.n, "columns");
  gen->add_option("--m", fl.m, "rows");
  gen->add_option("--nu", fl.nu, "exp smoothing nu");
  gen->add_option("--p", fl.p, "lp exponent");
  gen->add_option("--mu", fl.mu, "lp quadratic weight");
  gen->add_option("--out", fl.out, "output file (default: stdout)");
  auto* linf = app.add_subcommand("linf", "approximate min ||P x||_inf subject to A x = b");
  add_common(linf, true);
  linf->add_option("--eps", fl.eps, "accuracy in (0, 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_json("Usage", e.what(), 2) << "\n";
    return 2;
  }

  auto load = [&]() {
    auto res = load_instance(fl.instance);
    for (const auto& w : res.warnings) err << w << "\n";
    if (!fl.loss.empty()) {
      res.file.loss.key = fl.loss;
      res.file.loss.nu = fl.nu;
      res.file.loss.p = fl.p;
      res.file.loss.mu = fl.mu;
    }
    return res;
  };
  auto mwu_config = [&](double default_eps) {
    MwuConfig c;
    c.epsilon = fl.eps > 0 ? fl.eps : default_eps;
    c.c_tau = fl.c_tau;
    c.c_alpha = fl.c_alpha;
    if (fl.max_width_steps >= 0) c.max_width_steps = fl.max_width_steps;
    return c;
  };
  auto radius_for = [&](const InstanceFile& f) {
    if (fl.radius > 0) return fl.radius;
    if (f.R) return *f.R;
    throw Error(ErrorKind::Usage, "no --radius given and the instance has no R hint");
  };
  auto out_dir = [&]() -> std::optional<std::filesystem::path> {
    if (fl.out.empty()) return std::nullopt;
    std::filesystem::create_directories(fl.out);
    return std::filesystem::path(fl.out);
  };

  try {
    if (*crude) {
      const auto res = load();
      const auto inst = effective_instance(res.file.instance(), res.file.loss);
      const double R = radius_for(res.file);
      Log::info("crude: m=" + std::to_string(inst.m()) + " n=" + std::to_string(inst.n()) + " R=" + format_double(R));
      const auto sol = qsc_mwu(inst, resolve_loss(res.file.loss), R, mwu_config(1.0));
      nlohmann::json j = {{"command", "crude"},
                          {"loss", res.file.loss.key},
                          {"radius", R},
                          {"epsilon", sol.epsilon},
                          {"flow_steps", sol.flow_steps},
                          {"width_steps", sol.width_steps},
                          {"tau", sol.schedule.tau},
                          {"alpha", sol.schedule.alpha},
                          {"objective", sol.objective},
                          {"linf_bound", sol.linf_bound},
                          {"linf", (inst.P * sol.x_tilde).lpNorm<Eigen::Infinity>()},
                          {"phi_initial", sol.phi_initial},
                          {"phi_final", sol.phi_final}};
      if (auto dir = out_dir()) {
        nlohmann::json s = j;
        s["x"] = detail::vec_json(sol.x_tilde);
        detail::write_text(*dir / "solution.json", s.dump(2) + "\n");
        std::ofstream tr(*dir / "trace.csv", std::ios::binary);
        write_trace_csv(tr, sol.trace, false);
      }
      detail::emit(out, j, fl.format);
      return 0;
    }
    if (*boost) {
      const auto res = load();
      const auto inst = effective_instance(res.file.instance(), res.file.loss);
      const double R = radius_for(res.file);
      RefineConfig rc;
      rc.eps = fl.eps > 0 ? fl.eps : 1e-6;
      rc.max_outer_steps = fl.max_outer;
      MwuConfig mc = mwu_config(1.0);
      const auto rep = boost_pipeline(inst, resolve_loss(res.file.loss), R, mc, rc);
      nlohmann::json j = {{"command", "boost"},
                          {"loss", res.file.loss.key},
                          {"radius", R},
                          {"radius_boost", rep.R_boost},
                          {"crude_objective", rep.crude.objective},
                          {"crude_flow_steps", rep.crude.flow_steps},
                          {"crude_width_steps", rep.crude.width_steps},
                          {"objective", rep.f},
                          {"refine_steps", rep.refine.outer_steps},
                          {"status", to_string(rep.refine.status)}};
      if (auto dir = out_dir()) {
        nlohmann::json s = j;
        s["x"] = detail::vec_json(rep.x);
        detail::write_text(*dir / "solution.json", s.dump(2) + "\n");
        std::vector<TraceRow> rows = rep.crude.trace;
        const long base = rows.empty() ? 0 : rows.back().iteration + 1;
        for (auto r : rep.refine.trace) {
          r.iteration += base;
          rows.push_back(r);
        }
        std::ofstream tr(*dir / "trace.csv", std::ios::binary);
        write_trace_csv(tr, rows, true);
      }
      detail::emit(out, j, fl.format);
      return 0;
    }
    if (*oracle) {
      const auto res = load();
      nlohmann::json j = {{"command", "oracle"}, {"loss", res.file.loss.key}};
      OracleResult o;
      if (res.file.loss.key == "sym-exp") {
        o = oracle_linf(res.file.instance());
        j["linf_opt"] = o.f_opt;
        const auto inst = effective_instance(res.file.instance(), res.file.loss);
        const auto smooth = oracle_solve(inst, resolve_loss(res.file.loss));
        j["f_opt"] = smooth.f_opt;
        j["certified_tol"] = smooth.certified_tol;
      } else {
        o = oracle_solve(res.file.instance(), resolve_loss(res.file.loss));
        j["f_opt"] = o.f_opt;
        j["certified_tol"] = o.certified_tol;
      }
      j["method"] = to_string(o.method);
      j["linf_at_opt"] = (res.file.P * o.x_opt).lpNorm<Eigen::Infinity>();
      if (auto dir = out_dir()) {
        nlohmann::json s = j;
        s["x"] = detail::vec_json(o.x_opt);
        detail::write_text(*dir / "oracle.json", s.dump(2) + "\n");
      }
      detail::emit(out, j, fl.format);
      return 0;
    }
    if (*check) {
      nlohmann::json table = nlohmann::json::array();
      bool all = true;
      auto add = [&](const std::string& subject, const std::string& name, double value, double bound, bool pass) {
        table.push_back({{"subject", subject}, {"check", name}, {"value", value}, {"bound", bound}, {"pass", pass}});
        all = all && pass;
      };
      std::vector<LossSpec> specs;
      std::optional<LoadResult> res;
      if (!fl.instance.empty()) {
        res = load();
        specs.push_back(res->file.loss);
      } else if (!fl.loss.empty()) {
        specs.push_back({fl.loss, fl.nu, fl.p, fl.mu});
      } else {
        specs = {{"exp", fl.nu, fl.p, fl.mu}, {"sym-exp", fl.nu, fl.p, fl.mu},
                 {"lp", fl.nu, fl.p, fl.mu}, {"logistic", fl.nu, fl.p, fl.mu}};
      }
      for (const auto& spec : specs) {
        const QscLoss loss = resolve_loss(spec);
        const double M = std::visit([](const auto& l) { return l.qsc_constant(); }, loss);
        const double span = 30.0 / M;
        const auto rep = check_qsc(loss, uniform_grid(-span, span, 2001));
        add(spec.key, "qsc_ratio", rep.max_ratio, rep.declared_M * (1 + 1e-8), rep.qsc_pass);
        add(spec.key, "hessian_stability", rep.max_stability_ratio, rep.stability_bound * (1 + 1e-8),
            rep.stability_pass);
        add(spec.key, "convex", rep.convex ? 1.0 : 0.0, 1.0, rep.convex);
      }
      if (res) {
        const auto inst = effective_instance(res->file.instance(), res->file.loss);
        const double R = radius_for(res->file);
        const MwuConfig cfg = mwu_config(1.0);
        const QscLoss loss = resolve_loss(res->file.loss);
        const auto sol = qsc_mwu(inst, loss, R, cfg);
        const double eps = cfg.epsilon;
        double worst_sandwich = 0.0, worst_linear = 0.0;
        for (const auto& r : sol.trace) {
          worst_sandwich = std::max(worst_sandwich, r.psi / ((1 + eps) * r.phi));
          if (r.kind == StepKind::Flow) worst_linear = std::max(worst_linear, r.bound_linear / ((1 + eps) * R * r.phi));
        }
        add("instance", "psi_le_(1+eps)phi", worst_sandwich, 1 + 1e-8, worst_sandwich <= 1 + 1e-8);
        add("instance", "linear_le_(1+eps)R_phi", worst_linear, 1 + 1e-8, worst_linear <= 1 + 1e-8);
        add("instance", "flow_steps_eq_T", static_cast<double>(sol.flow_steps),
            static_cast<double>(sol.schedule.flow_steps), sol.flow_steps == sol.schedule.flow_steps);
        add("instance", "width_steps_le_tau", static_cast<double>(sol.width_steps), sol.schedule.tau,
            sol.width_steps <= sol.schedule.tau);
        const double feas = (inst.A * sol.x_tilde - inst.b).norm() / (1 + inst.b.norm());
        add("instance", "feasibility", feas, cfg.feas_tol, feas <= cfg.feas_tol);
      }
      detail::emit(out, table, fl.format);
      return all ? 0 : 4;
    }
    if (*scale) {
      ScaleOptions so;
      so.ms.assign(fl.ms.begin(), fl.ms.end());
      so.n = fl.scale_n;
      so.d = fl.scale_d;
      so.loss = fl.loss.empty() ? "exp" : fl.loss;
      so.params = {fl.nu, fl.p, fl.mu};
      if (fl.radius > 0) so.radius = fl.radius;
      so.seed = fl.seed;
      so.cfg = mwu_config(0.5);
      so.threads = fl.threads;
      const auto rows = run_scale(so);
      nlohmann::json arr = nlohmann::json::array();
      std::vector<double> xs, ys;
      for (const auto& r : rows) {
        arr.push_back({{"m", r.m},
                       {"flow_steps", r.flow_steps},
                       {"width_steps", r.width_steps},
                       {"tau", r.tau},
                       {"objective", r.objective},
                       {"failure", r.failure}});
        if (r.failure.empty()) {
          xs.push_back(static_cast<double>(r.m));
          ys.push_back(static_cast<double>(r.width_steps) + 1.0);
        }
      }
      const double slope = xs.size() >= 2 ? loglog_slope(xs, ys) : std::nan("");
      if (auto dir = out_dir()) {
        nlohmann::json s = {{"rows", arr}, {"slope", slope}};
        detail::write_text(*dir / "scale.json", s.dump(2) + "\n");
      }
      if (fl.format == "json") {
        out << nlohmann::json({{"command", "scale"}, {"rows", arr}, {"width_slope", slope}}).dump(2) << "\n";
      } else {
        detail::emit(out, arr, "csv");
        out << "# width_slope," << format_double(slope) << "\n";
      }
      for (const auto& r : rows)
        if (!r.failure.empty()) {
          err << error_json("TheoryViolation", r.failure, 4) << "\n";
          return 4;
        }
      return 0;
    }
    if (*gen) {
      if (fl.d < 0 || fl.n <= 0 || fl.m <= 0) throw Error(ErrorKind::Usage, "dimensions must be positive");
      const auto f = generate(fl.kind, fl.seed, fl.d, fl.n, fl.m, {fl.nu, fl.p, fl.mu});
      if (fl.out.empty())
        out << dump_instance(f);
      else
        save_instance(f, fl.out);
      return 0;
    }
    if (*linf) {
      const auto res = load();
      const double eps = fl.eps > 0 ? fl.eps : 0.25;
      MwuConfig cfg;
      cfg.record_trace = false;
      const auto r = solve_linf(res.file.instance(), eps, cfg);
      nlohmann::json j = {{"command", "linf"},
                          {"eps", eps},
                          {"nu", r.nu},
                          {"linf", r.value},
                          {"runs", r.search.runs.size()},
                          {"best_radius", r.search.best_radius}};
      if (auto dir = out_dir()) {
        nlohmann::json s = j;
        s["x"] = detail::vec_json(r.x);
        detail::write_text(*dir / "solution.json", s.dump(2) + "\n");
      }
      detail::emit(out, j, fl.format);
      return 0;
    }
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    err << error_json(to_string(e.kind()), e.what(), code) << "\n";
    return code;
  } catch (const std::exception& e) {
    err << error_json("Internal", e.what(), 3) << "\n";
    return 3;
  }
  return 2;
}

}  // namespace widthred

#endif  // WIDTHRED_CLI_HPP
