// aif_cli: command-line front end for inference, planning, learning, agent
// runs and free-energy diagnostics.
//
// Exit codes: 0 success, 2 input error, 3 model contradiction, 4 scale guard.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aif/efe.hpp"
#include "aif/engine.hpp"
#include "aif/envsim.hpp"
#include "aif/io.hpp"
#include "aif/learning.hpp"
#include "aif/planning.hpp"

namespace fs = std::filesystem;
using aif::io::json;
using aif::io::format_double;
using aif::io::number;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitContradiction = 3;
constexpr int kExitScale = 4;

const std::vector<std::string> kKnownEnvs = {"tmaze", "gridworld"};

bool use_color() { return std::getenv("NO_COLOR") == nullptr && isatty(fileno(stderr)); }

int fail(int code, const std::string& msg) {
  if (use_color())
    std::cerr << "\033[31merror\033[0m: " << msg << "\n";
  else
    std::cerr << "error: " << msg << "\n";
  return code;
}

// Every option of the subcommand with its effective value.
json resolved_config(const CLI::App* sub) {
  json cfg = json::object();
  cfg["command"] = sub->get_name();
  for (const CLI::Option* opt : sub->get_options()) {
    std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& res = opt->results();
    if (!res.empty())
      cfg[name] = res.back();
    else if (opt->get_type_size() == 0)
      cfg[name] = opt->count() > 0;
    else
      cfg[name] = opt->get_default_str();
  }
  return cfg;
}

json provenance(const CLI::App* sub) { return {{"version", AIF_VERSION}, {"config", resolved_config(sub)}}; }

std::string csv_header_q(std::size_t S) {
  std::string h;
  for (std::size_t s = 0; s < S; ++s) h += ",q_" + std::to_string(s);
  return h;
}

std::string csv_q(const aif::CategoricalDist& q) {
  std::string row;
  for (double x : q.weights()) row += "," + format_double(x);
  return row;
}

aif::SweepMode parse_mode(const std::string& s) {
  return s == "filtering" ? aif::SweepMode::Filtering : aif::SweepMode::Smoothing;
}

// ---- infer ----

struct InferArgs {
  std::string model, obs, out, mode = "smoothing";
  long t = -1;
  std::size_t T = 0;
  std::size_t max_iters = 100;
  double tol = 1e-10;
};

// Loads the model and the first t observations, and checks t <= T.
aif::BeliefTrajectory load_trajectory(const std::string& model_path, const std::string& obs_path, long t_arg,
                                      std::size_t T) {
  const auto model = aif::io::hmm_from_json(aif::io::read_json_file(model_path));
  auto obs = aif::io::observations_from_json(aif::io::read_json_file(obs_path), model.num_obs());
  const std::size_t t = t_arg < 0 ? obs.size() : static_cast<std::size_t>(t_arg);
  if (T == 0) throw aif::io::InputError("T: must be >= 1");
  if (t > T) throw aif::io::InputError("t: must not exceed T");
  if (obs.size() < t) throw aif::io::InputError("obs: fewer than t observations");
  obs.resize(t);
  return aif::with_observations(aif::init_beliefs(model, T), obs);
}

int cmd_infer(const InferArgs& a, const CLI::App* sub) {
  auto bt = load_trajectory(a.model, a.obs, a.t, a.T);
  const std::size_t S = bt.model.num_states();

  aif::io::CsvWriter csv({"pass,update_index,tau,divergence" + csv_header_q(S)});
  auto observer = [&](std::size_t pass, std::size_t updates, const aif::BeliefTrajectory& b, double d) {
    for (std::size_t tau = 0; tau < b.q.size(); ++tau)
      csv.row_strings({std::to_string(pass) + "," + std::to_string(updates) + "," + std::to_string(tau) + "," +
                       format_double(d) + csv_q(b.q[tau])});
  };
  const auto result = aif::sweep(std::move(bt), {parse_mode(a.mode), a.max_iters, a.tol}, observer);
  const auto split = aif::divergence_split(result.beliefs);

  json summary = provenance(sub);
  summary["S"] = S;
  summary["t"] = result.beliefs.present();
  summary["T"] = result.beliefs.horizon();
  summary["divergence"] = number(split.past + split.future);
  summary["F_past"] = number(split.past);
  summary["F_future"] = number(split.future);
  summary["vfe_if_t_eq_T"] =
      result.beliefs.present() == result.beliefs.horizon() ? number(split.past) : json(nullptr);
  summary["sweep_passes"] = result.report.iterations;
  summary["converged"] = result.report.converged;

  aif::io::write_atomic(fs::path(a.out) / "beliefs.csv", csv.str());
  aif::io::write_json(fs::path(a.out) / "summary.json", summary);
  return kExitOk;
}

// ---- plan ----

struct PlanArgs {
  std::string model, policies, obs, out, planner = "reverse";
};

int cmd_plan(const PlanArgs& a, const CLI::App* sub) {
  const auto model = aif::io::hmm_from_json(aif::io::read_json_file(a.model));
  const auto ps = aif::io::policy_set_from_json(aif::io::read_json_file(a.policies), model.num_states());
  const auto obs = aif::io::observations_from_json(aif::io::read_json_file(a.obs), model.num_obs());
  const std::size_t T = ps.policies.front().size();
  if (obs.size() > T) throw aif::io::InputError("obs: more observations than the policy horizon");

  const auto ranked = a.planner == "forward"
                          ? aif::plan_forward(ps.actions, ps.policies, ps.preference, obs.size(), T)
                          : aif::plan_reverse(model, ps.actions, ps.policies, obs, ps.preference, T);

  aif::io::CsvWriter csv({"rank,policy_index,policy,score"});
  json ranking = json::array();
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& sp = ranked[r];
    const auto name = aif::io::policy_name(ps.actions, ps.policies[sp.index]);
    csv.row_strings({std::to_string(r), std::to_string(sp.index), "\"" + name + "\"", format_double(sp.score)});
    ranking.push_back({{"policy_index", sp.index}, {"policy", name}, {"score", number(sp.score)}});
  }
  json out = provenance(sub);
  out["t"] = obs.size();
  out["T"] = T;
  out["chosen_index"] = ranked.front().index;
  out["chosen"] = aif::io::policy_name(ps.actions, ps.policies[ranked.front().index]);
  out["ranking"] = ranking;

  aif::io::write_atomic(fs::path(a.out) / "ranking.csv", csv.str());
  aif::io::write_json(fs::path(a.out) / "plan.json", out);
  return kExitOk;
}

// ---- learn ----

struct LearnArgs {
  std::string prior, data, out;
  std::size_t iters = 50;
  double tol = 1e-8;
};

int cmd_learn(const LearnArgs& a, const CLI::App* sub) {
  const auto prior = aif::io::prior_from_json(aif::io::read_json_file(a.prior));
  const auto& conc = prior.concentrations;
  const auto sequences = aif::io::sequences_from_jsonl(aif::io::read_text(a.data), conc.num_obs());
  if (sequences.empty()) throw aif::io::InputError("data: no training sequences");
  const auto p0 = prior.p0.value_or(aif::CategoricalDist::uniform(conc.num_states()));

  aif::LearnOptions opts;
  opts.outer_iters = a.iters;
  opts.tol = a.tol;
  const auto res = aif::learn(conc, p0, sequences, opts);

  aif::io::CsvWriter csv({"half_step,iteration,phase,divergence"});
  for (std::size_t k = 0; k < res.trace.size(); ++k) {
    const std::string phase = k == 0 ? "prior" : (k % 2 == 1 ? "states" : "parameters");
    csv.row_strings({std::to_string(k), std::to_string((k + 1) / 2), phase, format_double(res.trace[k])});
  }

  json post = provenance(sub);
  post.update(aif::io::dirichlet_to_json(res.posterior));
  post["p0"] = aif::io::numbers(p0.weights());
  post["iterations"] = res.iterations;
  post["converged"] = res.converged;

  json model = aif::io::hmm_to_json(aif::posterior_mean_model(res.posterior, p0));
  model.update(provenance(sub));

  aif::io::write_atomic(fs::path(a.out) / "trace.csv", csv.str());
  aif::io::write_json(fs::path(a.out) / "posterior.json", post);
  aif::io::write_json(fs::path(a.out) / "model.json", model);
  return kExitOk;
}

// ---- agent ----

struct AgentArgs {
  std::string env = "tmaze", planner = "reverse", out, mode = "filtering";
  std::size_t episodes = 10;
  std::uint64_t seed = 0;
  std::size_t side = 3;
  double slip = 0.0;
  double emission_noise = 0.0;
};

aif::io::EnvSpec resolve_env(const AgentArgs& a) {
  if (a.env == "tmaze") {
    const auto tm = aif::make_tmaze();
    return {"tmaze", tm.model, {tm.actions, tm.policies, tm.preference, std::nullopt}, tm.horizon};
  }
  if (a.env == "gridworld") {
    const auto g = aif::make_gridworld(a.side, a.slip, a.emission_noise);
    const std::size_t T = aif::gridworld_horizon(a.side);
    aif::require_enumerable(g.actions.size(), T, 1e5);
    return {"gridworld", g.model, {g.actions, aif::all_policies(g.actions.size(), T), aif::gridworld_preference(a.side),
                                   std::nullopt},
            T};
  }
  if (fs::is_regular_file(a.env)) return aif::io::env_from_json(aif::io::read_json_file(a.env));
  std::string known;
  for (const auto& k : kKnownEnvs) known += (known.empty() ? "" : ", ") + k;
  throw aif::io::InputError("env: unknown fixture '" + a.env + "' (known: " + known + ", or a path to an env JSON file)");
}

int cmd_agent(const AgentArgs& a, const CLI::App* sub) {
  const auto spec = resolve_env(a);
  aif::AgentOptions opts;
  opts.planner = a.planner == "forward"     ? aif::Planner::Forward
                 : a.planner == "posterior" ? aif::Planner::PolicyPosterior
                                            : aif::Planner::Reverse;
  opts.sweep.mode = parse_mode(a.mode);
  const auto& am = spec.policy_set.actions;
  const auto& policies = spec.policy_set.policies;
  const auto trace = aif::run_agent(spec.environment(), spec.model, am, spec.policy_set.preference, policies,
                                    spec.horizon, a.episodes, a.seed, opts);

  const std::size_t S = spec.model.num_states();
  const fs::path out(a.out);
  std::map<std::string, std::size_t> histogram;
  std::size_t successes = 0;
  std::size_t cue_first = 0;
  double div_total = 0.0;
  std::size_t div_count = 0;
  json episodes = json::array();

  for (std::size_t e = 0; e < trace.episodes.size(); ++e) {
    const auto& ep = trace.episodes[e];
    aif::io::CsvWriter steps({"t,action,action_name,observation,true_state,chosen_policy,divergence" + csv_header_q(S)});
    aif::io::CsvWriter scores({"t,rank,policy_index,policy,score"});
    aif::Policy executed;
    for (const auto& st : ep.steps) {
      executed.push_back(st.action);
      steps.row_strings({std::to_string(st.t) + "," + std::to_string(st.action) + "," + am.names[st.action] + "," +
                         std::to_string(st.observation) + "," + std::to_string(st.true_state) + "," +
                         std::to_string(st.chosen_policy) + "," + format_double(st.divergence) + csv_q(st.belief)});
      for (std::size_t r = 0; r < st.scores.size(); ++r) {
        const auto& sp = st.scores[r];
        scores.row_strings({std::to_string(st.t) + "," + std::to_string(r) + "," + std::to_string(sp.index) + ",\"" +
                            aif::io::policy_name(am, policies[sp.index]) + "\"," + format_double(sp.score)});
      }
      div_total += st.divergence;
      ++div_count;
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "episode_%03zu", e);
    aif::io::write_atomic(out / (std::string(stem) + ".csv"), steps.str());
    aif::io::write_atomic(out / (std::string(stem) + "_scores.csv"), scores.str());

    const auto name = aif::io::policy_name(am, executed);
    ++histogram[name];
    successes += ep.success ? 1 : 0;
    if (spec.name == "tmaze" && !executed.empty() && executed.front() == aif::tmaze::kCue) ++cue_first;
    episodes.push_back({{"episode", e},
                        {"seed", ep.seed},
                        {"initial_state", ep.initial_state},
                        {"actions", name},
                        {"success", ep.success}});
  }

  json summary = provenance(sub);
  summary["env"] = spec.name;
  summary["horizon"] = spec.horizon;
  summary["num_policies"] = policies.size();
  summary["episodes"] = trace.episodes.size();
  summary["success"] = successes == trace.episodes.size();
  summary["success_rate"] = number(trace.episodes.empty() ? 0.0 : double(successes) / double(trace.episodes.size()));
  summary["mean_divergence"] = number(div_count ? div_total / double(div_count) : 0.0);
  if (spec.name == "tmaze") {
    summary["cue_first_rate"] = number(trace.episodes.empty() ? 0.0 : double(cue_first) / double(trace.episodes.size()));
  }
  summary["chosen_policy_histogram"] = histogram;
  summary["per_episode"] = episodes;
  aif::io::write_json(out / "summary.json", summary);
  return kExitOk;
}

// ---- diagnose ----

struct DiagnoseArgs {
  std::string model, obs, out;
  long t = -1;
  std::size_t T = 0;
};

int cmd_diagnose(const DiagnoseArgs& a, const CLI::App* sub) {
  auto bt = load_trajectory(a.model, a.obs, a.t, a.T);
  bt = aif::sweep(std::move(bt), {aif::SweepMode::Smoothing, 1000, 1e-13}).beliefs;
  const auto r = aif::verify_bounds(bt);

  json out = provenance(sub);
  out["S"] = bt.model.num_states();
  out["O"] = bt.model.num_obs();
  out["t"] = bt.present();
  out["T"] = bt.horizon();
  out["divergence"] = number(aif::divergence(bt));
  out["mutual_information"] = number(r.mutual_information);
  out["ambiguity"] = number(r.ambiguity);
  out["pragmatic_value"] = number(r.pragmatic_value);
  out["entropy_q_s"] = number(r.entropy_q_s);
  out["entropy_q_o"] = number(r.entropy_q_o);
  out["g_lhs"] = number(r.g_lhs);
  out["g_standard"] = number(r.g_standard);
  out["g_exact"] = number(r.g_exact);
  out["kl_future"] = number(r.kl_future);
  out["slacks"] = {{"info", number(r.slacks.info)},
                   {"simplest", number(r.slacks.simplest)},
                   {"efe", number(r.slacks.efe)},
                   {"gkl_residual", number(r.slacks.gkl_residual)}};
  aif::io::write_json(fs::path(a.out) / "report.json", out);
  return kExitOk;
}

// ---- fixture export ----

int cmd_fixture(const std::string& name, const std::string& out_path) {
  if (name != "tmaze") throw aif::io::InputError("fixture: only 'tmaze' can be exported");
  const auto tm = aif::make_tmaze();
  aif::io::write_json(out_path, aif::io::env_to_json("tmaze", tm.model, tm.actions, tm.policies, tm.preference,
                                                     tm.horizon));
  return kExitOk;
}

// Splices `--key value` pairs from a JSON config file in front of the
// command-line flags so that explicit flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] != "--config") continue;
    const json cfg = aif::io::read_json_file(args[i + 1]);
    if (!cfg.is_object()) throw aif::io::InputError("config: expected a JSON object");
    std::vector<std::string> injected;
    for (const auto& [key, value] : cfg.items()) {
      if (value.is_boolean()) {
        if (value.get<bool>()) injected.push_back("--" + key);
        continue;
      }
      injected.push_back("--" + key);
      injected.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    args.insert(args.begin() + 1, injected.begin(), injected.end());
    break;
  }
  std::reverse(args.begin(), args.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active-inference toolkit for discrete hidden Markov models", "aif_cli"};
  app.set_version_flag("--version", std::string(AIF_VERSION));
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON file of flag values; explicit flags override it");
  };

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Sweep beliefs for a model and observation prefix");
  infer->add_option("--model", ia.model)->required();
  infer->add_option("--obs", ia.obs)->required();
  infer->add_option("--t", ia.t, "present time (default: number of observations)");
  infer->add_option("--T", ia.T)->required();
  infer->add_option("--mode", ia.mode)->check(CLI::IsMember({"filtering", "smoothing"}));
  infer->add_option("--max-iters", ia.max_iters);
  infer->add_option("--tol", ia.tol);
  infer->add_option("--out", ia.out)->required();
  add_config(infer);

  PlanArgs pa;
  auto* plan = app.add_subcommand("plan", "Rank a policy set");
  plan->add_option("--model", pa.model)->required();
  plan->add_option("--policies", pa.policies)->required();
  plan->add_option("--obs", pa.obs)->required();
  plan->add_option("--planner", pa.planner)->check(CLI::IsMember({"reverse", "forward"}));
  plan->add_option("--out", pa.out)->required();
  add_config(plan);

  LearnArgs la;
  auto* learn = app.add_subcommand("learn", "Variational Bayes for Dirichlet HMM parameters");
  learn->add_option("--prior", la.prior)->required();
  learn->add_option("--data", la.data, "JSON lines, one observation array per line")->required();
  learn->add_option("--iters", la.iters);
  learn->add_option("--tol", la.tol);
  learn->add_option("--out", la.out)->required();
  add_config(learn);

  AgentArgs aa;
  auto* agent = app.add_subcommand("agent", "Run the perception/action loop in an environment");
  agent->add_option("env", aa.env, "tmaze, gridworld, or a path to an env JSON file");
  agent->add_option("--planner", aa.planner)->check(CLI::IsMember({"reverse", "forward", "posterior"}));
  agent->add_option("--mode", aa.mode)->check(CLI::IsMember({"filtering", "smoothing"}));
  agent->add_option("--episodes", aa.episodes);
  agent->add_option("--seed", aa.seed);
  agent->add_option("--side", aa.side, "gridworld side length");
  agent->add_option("--slip", aa.slip, "gridworld slip probability");
  agent->add_option("--emission-noise", aa.emission_noise, "gridworld emission noise");
  agent->add_option("--out", aa.out)->required();
  add_config(agent);

  DiagnoseArgs da;
  auto* diagnose = app.add_subcommand("diagnose", "Expected free energy report and bound slacks");
  diagnose->add_option("--model", da.model)->required();
  diagnose->add_option("--obs", da.obs)->required();
  diagnose->add_option("--t", da.t);
  diagnose->add_option("--T", da.T)->required();
  diagnose->add_option("--out", da.out)->required();
  add_config(diagnose);

  std::string fixture_name, fixture_out;
  auto* fixture = app.add_subcommand("fixture", "Write a built-in environment as an env JSON file");
  fixture->add_option("name", fixture_name)->required();
  fixture->add_option("--out", fixture_out)->required();

  try {
    auto args = expand_config(argc, argv);
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  } catch (const aif::io::InputError& e) {
    return fail(kExitInput, e.what());
  }

  try {
    if (*infer) return cmd_infer(ia, infer);
    if (*plan) return cmd_plan(pa, plan);
    if (*learn) return cmd_learn(la, learn);
    if (*agent) return cmd_agent(aa, agent);
    if (*diagnose) return cmd_diagnose(da, diagnose);
    if (*fixture) return cmd_fixture(fixture_name, fixture_out);
  } catch (const aif::io::InputError& e) {
    return fail(kExitInput, e.what());
  } catch (const aif::Error& e) {
    switch (e.code()) {
      case aif::ErrorCode::ModelContradiction: return fail(kExitContradiction, e.what());
      case aif::ErrorCode::TooLarge: return fail(kExitScale, e.what());
      default: return fail(kExitInput, e.what());
    }
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
  return kExitInput;
}
