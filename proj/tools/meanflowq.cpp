// meanflowq: experiment harness for Q-learning mean-flow analysis on finite
// MDPs. Subcommands emit plot-ready CSV/JSON; every run is deterministic
// under a fixed seed and output files carry the resolved configuration.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "meanflowq/counterexample.hpp"
#include "meanflowq/gauss1d.hpp"
#include "meanflowq/mdp.hpp"
#include "meanflowq/mean_flow.hpp"
#include "meanflowq/model_io.hpp"
#include "meanflowq/policies.hpp"
#include "meanflowq/qlearn.hpp"

namespace mfq = meanflowq;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct GridAxis {
  double lo = 0.0, hi = 0.0;
  int n = 0;
  double at(int i) const { return n == 1 ? lo : lo + (hi - lo) * i / (n - 1); }
};

GridAxis parse_axis(const std::string& s) {
  GridAxis a;
  char tail;
  if (std::sscanf(s.c_str(), "%lf:%lf:%d%c", &a.lo, &a.hi, &a.n, &tail) != 3 || a.n < 1 ||
      a.hi < a.lo)
    throw CLI::ValidationError("--grid", "expected lo:hi:n with n >= 1 and hi >= lo");
  return a;
}

std::vector<GridAxis> parse_grid(const std::string& s) {
  std::vector<GridAxis> axes;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) axes.push_back(parse_axis(part));
  if (axes.empty()) throw CLI::ValidationError("--grid", "empty grid spec");
  return axes;
}

mfq::Theta parse_theta(const std::string& s) {
  std::vector<double> vals;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) vals.push_back(std::stod(part));
  mfq::Theta t(static_cast<int>(vals.size()));
  for (int i = 0; i < t.size(); ++i) t(i) = vals[static_cast<std::size_t>(i)];
  return t;
}

struct CommonOptions {
  std::string model_path;
  std::string policy = "tamed_gibbs";
  double kappa = 20.0;
  double eps = 1e-3;
  std::string eligibility = "pbe";
  std::uint64_t seed = 0;
  std::string out;
};

void add_model_options(CLI::App* cmd, CommonOptions& o, bool with_policy = true) {
  cmd->add_option("--model", o.model_path, "model JSON file")->required();
  if (with_policy) {
    cmd->add_option("--policy", o.policy, "tamed_gibbs | eps_greedy | oblivious | greedy")
        ->check(CLI::IsMember({"tamed_gibbs", "eps_greedy", "oblivious", "greedy"}));
    cmd->add_option("--kappa", o.kappa, "Gibbs inverse temperature");
    cmd->add_option("--eps", o.eps, "exploration weight");
    cmd->add_option("--eligibility", o.eligibility, "pbe | msbe")
        ->check(CLI::IsMember({"pbe", "msbe"}));
  }
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--out", o.out, "output file (stdout when omitted)");
}

mfq::PolicyFamily family_from(const CommonOptions& o) {
  if (o.policy == "tamed_gibbs") return mfq::PolicyFamily::tamed_gibbs(o.kappa, o.eps);
  if (o.policy == "eps_greedy") return mfq::PolicyFamily::eps_greedy(o.eps);
  if (o.policy == "oblivious") return mfq::PolicyFamily::oblivious();
  return mfq::PolicyFamily::greedy();
}

mfq::Eligibility eligibility_from(const CommonOptions& o) {
  return o.eligibility == "msbe" ? mfq::Eligibility::Msbe : mfq::Eligibility::Pbe;
}

// Two-basis configuration straight from a model file; the file must carry
// c_diamond for the basis construction.
struct LoadedConfig {
  mfq::TwoBasisInstance instance;
  mfq::MeanFlowConfig config;
};

LoadedConfig load_config(const CommonOptions& o) {
  const mfq::ModelFile mf = mfq::load_model(o.model_path);
  if (!mf.c_diamond)
    throw mfq::ModelError("model file has no 'c_diamond'; the two-basis construction needs it");
  LoadedConfig lc{mfq::build_instance(mf.mdp, mf.c, *mf.c_diamond), {}};
  lc.config = lc.instance.config(family_from(o), eligibility_from(o));
  return lc;
}

std::string config_comment(const std::string& subcommand, const CommonOptions& o,
                           const std::string& extra = "") {
  std::ostringstream os;
  os << "# meanflowq " << subcommand << " model=" << o.model_path << " policy=" << o.policy
     << " kappa=" << fmt(o.kappa) << " eps=" << fmt(o.eps) << " eligibility=" << o.eligibility
     << " seed=" << o.seed;
  if (!extra.empty()) os << ' ' << extra;
  return os.str();
}

json config_json(const std::string& subcommand, const CommonOptions& o) {
  return json{{"subcommand", subcommand}, {"model", o.model_path},   {"policy", o.policy},
              {"kappa", o.kappa},         {"eps", o.eps},            {"eligibility", o.eligibility},
              {"seed", o.seed}};
}

void emit(const CommonOptions& o, const std::string& contents) {
  if (o.out.empty())
    std::cout << contents;
  else
    mfq::write_file_atomic(o.out, contents);
}

json root_to_json(const mfq::Root& r) {
  json jr;
  jr["theta"] = std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size());
  jr["residual"] = r.residual;
  if (r.jacobian) {
    json eig = json::array();
    for (int i = 0; i < r.jacobian->eigenvalues.size(); ++i)
      eig.push_back({r.jacobian->eigenvalues(i).real(), r.jacobian->eigenvalues(i).imag()});
    jr["eigenvalues"] = std::move(eig);
    jr["hurwitz"] = r.jacobian->hurwitz;
  } else {
    jr["eigenvalues"] = nullptr;
    jr["hurwitz"] = nullptr;
  }
  return jr;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const mfq::ModelError*>(&e) || dynamic_cast<const mfq::DimensionError*>(&e) ||
      dynamic_cast<const std::invalid_argument*>(&e))
    return 3;
  return 4;
}

void print_error(const std::exception& e) {
  json err;
  err["error"] = {{"type", typeid(e).name()}, {"message", e.what()}};
  std::cout << err.dump(2) << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Q-learning mean-flow toolkit"};
  app.require_subcommand(1);

  // ---- solve ----
  CommonOptions solve_opt;
  auto* solve_cmd = app.add_subcommand("solve", "value iteration and greedy policies");
  add_model_options(solve_cmd, solve_opt, /*with_policy=*/false);

  // ---- roots ----
  CommonOptions roots_opt;
  std::string roots_box = "-2:2";
  int roots_starts = 64;
  auto* roots_cmd = app.add_subcommand("roots", "multistart root search of the mean flow");
  add_model_options(roots_cmd, roots_opt);
  roots_cmd->add_option("--box", roots_box, "search box lo:hi applied to every axis");
  roots_cmd->add_option("--starts", roots_starts, "number of quasi-random starts");

  // ---- flowfield ----
  CommonOptions flow_opt;
  std::string flow_grid = "-0.5:1.5:50";
  auto* flow_cmd = app.add_subcommand("flowfield", "mean-flow field on a parameter grid (CSV)");
  add_model_options(flow_cmd, flow_opt);
  flow_cmd->add_option("--grid", flow_grid, "grid spec lo:hi:n[,lo:hi:n]");

  // ---- trajectories ----
  CommonOptions traj_opt;
  long traj_steps = 5000;
  int traj_runs = 10;
  std::string traj_theta0 = "0.5,0.6";
  long traj_stride = 10;
  auto* traj_cmd =
      app.add_subcommand("trajectories", "independent Q-learning runs from one start (CSV)");
  add_model_options(traj_cmd, traj_opt);
  traj_cmd->add_option("--steps", traj_steps, "steps per run");
  traj_cmd->add_option("--runs", traj_runs, "number of runs");
  traj_cmd->add_option("--theta0", traj_theta0, "initial parameter, comma separated");
  traj_cmd->add_option("--stride", traj_stride, "sampling stride");

  // ---- simulate ----
  CommonOptions sim_opt;
  long sim_steps = 5000;
  std::string sim_theta0 = "0.5,0.6";
  long sim_stride = 10;
  auto* sim_cmd = app.add_subcommand("simulate", "one Q-learning run (CSV)");
  add_model_options(sim_cmd, sim_opt);
  sim_cmd->add_option("--steps", sim_steps, "number of steps");
  sim_cmd->add_option("--theta0", sim_theta0, "initial parameter, comma separated");
  sim_cmd->add_option("--stride", sim_stride, "sampling stride");

  // ---- best-of-m ----
  CommonOptions bom_opt;
  long bom_steps = 5000;
  int bom_runs = 500;
  std::string bom_theta0 = "0.5,0.6";
  int bom_x0 = 0;
  long bom_paths = 400;
  auto* bom_cmd =
      app.add_subcommand("best-of-m", "repeated runs with Monte Carlo policy scoring (JSON)");
  add_model_options(bom_cmd, bom_opt);
  bom_cmd->add_option("--steps", bom_steps, "steps per run");
  bom_cmd->add_option("--runs", bom_runs, "number of runs M");
  bom_cmd->add_option("--theta0", bom_theta0, "initial parameter, comma separated");
  bom_cmd->add_option("--eval-x0", bom_x0, "evaluation start state");
  bom_cmd->add_option("--eval-paths", bom_paths, "Monte Carlo paths per evaluation");

  // ---- sweep-epsilon ----
  CommonOptions sweep_opt;
  sweep_opt.eps = 1e-3;
  int sweep_points = 120;
  int sweep_starts = 64;
  auto* sweep_cmd = app.add_subcommand(
      "sweep-epsilon", "continuation of the tamed-Gibbs root branch in epsilon (CSV)");
  add_model_options(sweep_cmd, sweep_opt);
  sweep_cmd->add_option("--points", sweep_points, "number of epsilon grid points (>= 100)");
  sweep_cmd->add_option("--starts", sweep_starts, "multistart count for the initial root set");

  // ---- gauss1d ----
  mfq::Gauss1dModel g1d;
  double g1d_kappa = 5.0, g1d_eps = 0.0;
  std::string g1d_grid = "-50:50:1001";
  std::string g1d_out;
  auto* g1d_cmd = app.add_subcommand("gauss1d", "scalar-Gaussian example: curves and case label");
  g1d_cmd->add_option("--alpha", g1d.alpha, "AR(1) coefficient");
  g1d_cmd->add_option("--gamma", g1d.gamma, "discount");
  g1d_cmd->add_option("--r", g1d.r, "basis offset r");
  g1d_cmd->add_option("--m", g1d.m, "basis reflection point m");
  g1d_cmd->add_option("--w", g1d.w, "action cost weight");
  g1d_cmd->add_option("--quad-order", g1d.quad_order, "Gauss-Hermite order per dimension");
  g1d_cmd->add_option("--kappa", g1d_kappa, "tamed Gibbs inverse temperature");
  g1d_cmd->add_option("--eps", g1d_eps, "tamed Gibbs exploration weight");
  g1d_cmd->add_option("--grid", g1d_grid, "theta grid lo:hi:n");
  g1d_cmd->add_option("--out", g1d_out, "CSV output file (stdout when omitted)");

  // ---- search-counterexample ----
  int sc_states = 2, sc_actions = 2, sc_count = 1;
  double sc_gamma = 0.75;
  std::uint64_t sc_seed = 0;
  long sc_budget = 10000;
  std::string sc_out;
  auto* sc_cmd = app.add_subcommand("search-counterexample",
                                    "random search for two-root instances (JSON)");
  sc_cmd->add_option("--states", sc_states, "number of states");
  sc_cmd->add_option("--actions", sc_actions, "number of actions");
  sc_cmd->add_option("--gamma", sc_gamma, "discount");
  sc_cmd->add_option("--seed", sc_seed, "RNG seed");
  sc_cmd->add_option("--budget", sc_budget, "maximum number of samples");
  sc_cmd->add_option("--count", sc_count, "stop after this many passing instances");
  sc_cmd->add_option("--out", sc_out, "output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*solve_cmd) {
      const mfq::ModelFile mf = mfq::load_model(solve_opt.model_path);
      json out;
      out["config"] = config_json("solve", solve_opt);
      const mfq::QFunction qs = mfq::value_iteration(mf.mdp, mf.c);
      const mfq::GreedyResult gs = mfq::greedy_policy(qs);
      out["Q_star"] = mfq::matrix_to_json(qs);
      out["policy_star"] = gs.policy;
      out["continuous_star"] = gs.continuous;
      out["bellman_residual_star"] = mfq::bellman_residual(mf.mdp, mf.c, qs);
      if (mf.c_diamond) {
        const mfq::TwoBasisInstance inst = mfq::build_instance(mf.mdp, mf.c, *mf.c_diamond);
        const mfq::GreedyResult gd = mfq::greedy_policy(inst.q_diamond);
        out["Q_diamond"] = mfq::matrix_to_json(inst.q_diamond);
        out["policy_diamond"] = gd.policy;
        out["continuous_diamond"] = gd.continuous;
        out["beta_diamond"] = inst.beta_diamond;
        out["eq28_residual"] = inst.eq28_residual;
      }
      emit(solve_opt, out.dump(2) + "\n");
    } else if (*roots_cmd) {
      const LoadedConfig lc = load_config(roots_opt);
      double lo, hi;
      if (std::sscanf(roots_box.c_str(), "%lf:%lf", &lo, &hi) != 2 || hi < lo)
        throw std::invalid_argument("--box expects lo:hi");
      const mfq::RootSet rs =
          mfq::find_roots(lc.config, mfq::Box::cube(2, lo, hi), roots_starts, roots_opt.seed);
      json out;
      out["config"] = config_json("roots", roots_opt);
      out["config"]["box"] = {lo, hi};
      out["config"]["starts"] = roots_starts;
      out["roots"] = json::array();
      for (const auto& r : rs.roots) out["roots"].push_back(root_to_json(r));
      emit(roots_opt, out.dump(2) + "\n");
    } else if (*flow_cmd) {
      const LoadedConfig lc = load_config(flow_opt);
      std::vector<GridAxis> axes = parse_grid(flow_grid);
      if (axes.size() == 1) axes.push_back(axes[0]);
      std::ostringstream csv;
      csv << config_comment("flowfield", flow_opt, "grid=" + flow_grid) << "\n";
      csv << "theta1,theta2,f1,f2,norm\n";
      for (int i = 0; i < axes[0].n; ++i)
        for (int j = 0; j < axes[1].n; ++j) {
          mfq::Theta t(2);
          t << axes[0].at(i), axes[1].at(j);
          const Eigen::VectorXd f = mfq::barf(lc.config, t);
          csv << fmt(t(0)) << ',' << fmt(t(1)) << ',' << fmt(f(0)) << ',' << fmt(f(1)) << ','
              << fmt(f.norm()) << "\n";
        }
      emit(flow_opt, csv.str());
    } else if (*traj_cmd) {
      const LoadedConfig lc = load_config(traj_opt);
      const mfq::Theta theta0 = parse_theta(traj_theta0);
      std::ostringstream csv;
      csv << config_comment("trajectories", traj_opt,
                            "steps=" + std::to_string(traj_steps) +
                                " runs=" + std::to_string(traj_runs) + " theta0=" + traj_theta0)
          << "\n";
      csv << "run,n";
      for (int k = 0; k < theta0.size(); ++k) csv << ",theta" << (k + 1);
      csv << "\n";
      for (int run = 0; run < traj_runs; ++run) {
        mfq::RunConfig rc;
        rc.theta0 = theta0;
        rc.n_steps = traj_steps;
        rc.seed = mfq::derive_seed(traj_opt.seed, static_cast<std::uint64_t>(run));
        rc.family = family_from(traj_opt);
        rc.eligibility = eligibility_from(traj_opt);
        rc.stride = traj_stride;
        const mfq::Trajectory tr = mfq::simulate(lc.instance.mdp, lc.instance.c, lc.instance.basis, rc);
        for (std::size_t s = 0; s < tr.steps.size(); ++s) {
          csv << run << ',' << tr.steps[s];
          for (int k = 0; k < theta0.size(); ++k) csv << ',' << fmt(tr.thetas[s](k));
          csv << "\n";
        }
      }
      emit(traj_opt, csv.str());
    } else if (*sim_cmd) {
      const LoadedConfig lc = load_config(sim_opt);
      mfq::RunConfig rc;
      rc.theta0 = parse_theta(sim_theta0);
      rc.n_steps = sim_steps;
      rc.seed = sim_opt.seed;
      rc.family = family_from(sim_opt);
      rc.eligibility = eligibility_from(sim_opt);
      rc.stride = sim_stride;
      const mfq::Trajectory tr = mfq::simulate(lc.instance.mdp, lc.instance.c, lc.instance.basis, rc);
      std::ostringstream csv;
      csv << config_comment("simulate", sim_opt,
                            "steps=" + std::to_string(sim_steps) + " theta0=" + sim_theta0)
          << "\n";
      csv << "n";
      for (int k = 0; k < rc.theta0.size(); ++k) csv << ",theta" << (k + 1);
      csv << "\n";
      for (std::size_t s = 0; s < tr.steps.size(); ++s) {
        csv << tr.steps[s];
        for (int k = 0; k < rc.theta0.size(); ++k) csv << ',' << fmt(tr.thetas[s](k));
        csv << "\n";
      }
      emit(sim_opt, csv.str());
    } else if (*bom_cmd) {
      const LoadedConfig lc = load_config(bom_opt);
      mfq::RunConfig rc;
      rc.theta0 = parse_theta(bom_theta0);
      rc.n_steps = bom_steps;
      rc.seed = bom_opt.seed;
      rc.family = family_from(bom_opt);
      rc.eligibility = eligibility_from(bom_opt);
      const mfq::BestOfM result = mfq::best_of_m(lc.instance.mdp, lc.instance.c, lc.instance.basis,
                                                 rc, bom_runs, bom_x0, bom_paths);
      json out;
      out["config"] = config_json("best-of-m", bom_opt);
      out["config"]["steps"] = bom_steps;
      out["config"]["runs"] = bom_runs;
      out["config"]["theta0"] = bom_theta0;
      out["config"]["eval_x0"] = bom_x0;
      out["config"]["eval_paths"] = bom_paths;
      json thetas = json::array(), js = json::array(), ses = json::array(), div = json::array();
      for (const auto& run : result.runs) {
        thetas.push_back(std::vector<double>(run.final_theta.data(),
                                             run.final_theta.data() + run.final_theta.size()));
        js.push_back(run.j_estimate);
        ses.push_back(run.j_std_error);
        div.push_back(run.diverged);
      }
      out["final_thetas"] = std::move(thetas);
      out["J_estimates"] = std::move(js);
      out["J_std_errors"] = std::move(ses);
      out["diverged"] = std::move(div);
      out["best_index"] = result.best_index;
      emit(bom_opt, out.dump(2) + "\n");
    } else if (*sweep_cmd) {
      if (sweep_points < 2) throw std::invalid_argument("--points must be at least 2");
      CommonOptions base = sweep_opt;
      base.policy = "tamed_gibbs";
      const LoadedConfig lc0 = load_config(base);
      const double eps_min = sweep_opt.eps;
      if (!(eps_min > 0.0 && eps_min < 1.0))
        throw std::invalid_argument("--eps must lie in (0,1) for the sweep start");

      // Branch seed: the root nearest theta_diamond at eps_min.
      const mfq::RootSet rs0 = mfq::find_roots(lc0.config, mfq::Box::cube(2, -2.0, 2.0),
                                               sweep_starts, sweep_opt.seed);
      if (rs0.roots.empty()) throw mfq::ConvergenceError("no root found at the initial epsilon");
      mfq::Theta diamond(2);
      diamond << 0.0, 1.0;
      mfq::Theta current = rs0.roots.front().theta;
      for (const auto& r : rs0.roots)
        if ((r.theta - diamond).norm() < (current - diamond).norm()) current = r.theta;

      std::ostringstream csv;
      csv << config_comment("sweep-epsilon", sweep_opt,
                            "points=" + std::to_string(sweep_points)) << "\n";
      csv << "eps,theta1,theta2,residual,event\n";
      for (int i = 0; i < sweep_points; ++i) {
        const double eps =
            eps_min + (1.0 - eps_min) * static_cast<double>(i) / (sweep_points - 1);
        mfq::MeanFlowConfig cfg = lc0.config;
        cfg.family = mfq::PolicyFamily::tamed_gibbs(sweep_opt.kappa, eps);
        std::string event;
        const std::optional<mfq::Theta> polished = mfq::refine_root(cfg, current, 1e-8);
        if (!polished) {
          // Branch lost: restart from a fresh multistart at this epsilon.
          event = "lost";
          const mfq::RootSet rs = mfq::find_roots(cfg, mfq::Box::cube(2, -2.0, 2.0), sweep_starts,
                                                  sweep_opt.seed);
          if (rs.roots.empty()) {
            csv << fmt(eps) << ",nan,nan,nan," << event << "\n";
            continue;
          }
          mfq::Theta nearest = rs.roots.front().theta;
          for (const auto& r : rs.roots)
            if ((r.theta - current).norm() < (nearest - current).norm()) nearest = r.theta;
          current = nearest;
        } else {
          if ((*polished - current).norm() > 0.5 && i > 0) event = "jump";
          current = *polished;
        }
        csv << fmt(eps) << ',' << fmt(current(0)) << ',' << fmt(current(1)) << ','
            << fmt(mfq::barf(cfg, current).norm()) << ',' << event << "\n";
      }
      emit(sweep_opt, csv.str());
    } else if (*g1d_cmd) {
      const GridAxis axis = parse_axis(g1d_grid);
      json report;
      report["config"] = {{"subcommand", "gauss1d"}, {"alpha", g1d.alpha}, {"gamma", g1d.gamma},
                          {"r", g1d.r},              {"m", g1d.m},         {"w", g1d.w},
                          {"kappa", g1d_kappa},      {"eps", g1d_eps},     {"grid", g1d_grid},
                          {"quad_order", g1d.quad_order}};
      try {
        const mfq::CaseReport rep = mfq::classify(g1d);
        report["label"] = mfq::to_string(rep.label);
        report["margin"] = rep.margin;
        report["R"] = rep.witness.R;
        report["R1_plus"] = rep.witness.R1_plus;
        report["R1_minus"] = rep.witness.R1_minus;
        report["E_psi_c"] = rep.witness.E_psi_c;
      } catch (const mfq::MarginalError& e) {
        report["label"] = "Marginal";
        report["message"] = e.what();
      }
      std::vector<double> grid(static_cast<std::size_t>(axis.n));
      for (int i = 0; i < axis.n; ++i) grid[static_cast<std::size_t>(i)] = axis.at(i);
      const std::vector<double> f_obl = mfq::barf_1d_grid(g1d, grid, mfq::Gauss1dPolicy::oblivious());
      const std::vector<double> f_greedy = mfq::barf_1d_grid(g1d, grid, mfq::Gauss1dPolicy::greedy());
      const std::vector<double> f_gibbs =
          mfq::barf_1d_grid(g1d, grid, mfq::Gauss1dPolicy::tamed_gibbs(g1d_kappa, g1d_eps));
      std::ostringstream csv;
      csv << "# meanflowq gauss1d alpha=" << fmt(g1d.alpha) << " gamma=" << fmt(g1d.gamma)
          << " r=" << fmt(g1d.r) << " m=" << fmt(g1d.m) << " w=" << fmt(g1d.w)
          << " kappa=" << fmt(g1d_kappa) << " eps=" << fmt(g1d_eps) << " grid=" << g1d_grid << "\n";
      csv << "theta,f_oblivious,f_greedy,f_tamed_gibbs\n";
      for (int i = 0; i < axis.n; ++i)
        csv << fmt(grid[static_cast<std::size_t>(i)]) << ',' << fmt(f_obl[static_cast<std::size_t>(i)])
            << ',' << fmt(f_greedy[static_cast<std::size_t>(i)]) << ','
            << fmt(f_gibbs[static_cast<std::size_t>(i)]) << "\n";
      std::cout << report.dump(2) << std::endl;
      if (g1d_out.empty())
        std::cout << csv.str();
      else
        mfq::write_file_atomic(g1d_out, csv.str());
    } else if (*sc_cmd) {
      const mfq::SearchResult sr =
          mfq::search_instances(sc_states, sc_actions, sc_gamma, sc_seed, sc_budget, sc_count);
      json out;
      out["config"] = {{"subcommand", "search-counterexample"}, {"states", sc_states},
                       {"actions", sc_actions},                 {"gamma", sc_gamma},
                       {"seed", sc_seed},                       {"budget", sc_budget},
                       {"count", sc_count}};
      out["samples_used"] = sr.samples_used;
      out["instances"] = json::array();
      for (const auto& inst : sr.instances) out["instances"].push_back(mfq::instance_to_json(inst));
      if (sc_out.empty())
        std::cout << out.dump(2) << std::endl;
      else
        mfq::write_file_atomic(sc_out, out.dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    print_error(e);
    return exit_code_for(e);
  }
  return 0;
}
