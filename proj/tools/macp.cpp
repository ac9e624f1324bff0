#include <CLI11.hpp>

#include <iostream>

#include "macp/ais.hpp"
#include "macp/io.hpp"
#include "macp/learner.hpp"

using namespace macp;

namespace {

enum Exit { kOk = 0, kValidation = 2, kSizing = 3, kNumeric = 4 };

struct Common {
    std::string model;
    std::string out;
    std::vector<std::string> argv;
};

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// FNV-1a over the argument vector and the model file contents.
std::string config_hash(const Common& c) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const std::string& s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    for (const auto& a : c.argv) mix(a);
    if (!c.model.empty()) mix(file_bytes(c.model));
    return hex64(h);
}

void emit(const Common& c, const std::string& command, json outputs, json checks = json::object(), json seed = nullptr) {
    json report;
    report["command"] = command;
    report["argv"] = c.argv;
    report["config_hash"] = config_hash(c);
    report["seed"] = seed;
    report["outputs"] = std::move(outputs);
    report["checks"] = std::move(checks);
    const std::string text = report.dump(2) + "\n";
    if (c.out.empty()) std::cout << text;
    else {
        std::ofstream f(c.out);
        if (!f) throw std::runtime_error("cannot write '" + c.out + "'");
        f << text;
    }
}

json to_json(const Evaluation& ev) { return {{"C", ev.C}, {"D", ev.D}}; }

json to_json(const Certification& c) {
    json stages = json::array();
    for (const auto& s : c.stages) stages.push_back({{"p1", s.p1}, {"p2", s.p2}, {"p3", s.p3}, {"c1", s.c1}, {"c2", s.c2}, {"c3", s.c3}});
    return {{"eps_p1", c.eps_p1}, {"eps_p2", c.eps_p2}, {"delta_p", c.delta_p}, {"eps_c1", c.eps_c1},
            {"eps_c2", c.eps_c2}, {"delta_c", c.delta_c}, {"horizon", c.horizon},  {"stages", stages}};
}

Certification certification_from_json(const json& j) {
    const json& c = j.contains("outputs") ? j.at("outputs").at("certification") : j;
    Certification cert;
    try {
        cert.eps_p1 = c.at("eps_p1").get<double>();
        cert.eps_p2 = c.at("eps_p2").get<double>();
        cert.delta_p = c.at("delta_p").get<double>();
        cert.eps_c1 = c.at("eps_c1").get<double>();
        cert.eps_c2 = c.at("eps_c2").get<double>();
        cert.delta_c = c.at("delta_c").get<double>();
        cert.horizon = c.value("horizon", 0);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("certificate: ") + e.what());
    }
    return cert;
}

json to_json(const GapBounds& g) {
    return {{"M_c", g.M_c}, {"M_p", g.M_p}, {"N", g.N_term},  {"total", g.total()}, {"t", g.t},
            {"T", g.T < 0 ? json("inf") : json(g.T)},            {"alpha", g.alpha}, {"lambda", g.lambda}};
}

json action_ids(const ModelSpec& m, const RankActions& g) {
    // per agent: rank -> action id
    json out = json::array();
    for (int n = 0; n < m.num_agents; ++n) {
        json row = json::array();
        for (int a : g[n]) row.push_back(m.actions[n][a]);
        out.push_back(row);
    }
    return out;
}

Vec lambda_or_zero(const ModelSpec& m, const std::string& s) {
    if (s.empty()) return Vec(m.K(), 0.0);
    Vec l = parse_lambda(s);
    if (static_cast<int>(l.size()) != m.K())
        throw DomainError("multiplier needs " + std::to_string(m.K()) + " entries, got " + std::to_string(l.size()));
    for (double x : l)
        if (!(x >= 0.0)) throw DomainError("multipliers must be nonnegative");
    return l;
}

BehavioralPolicy parse_policy(const ModelSpec& m, const std::string& spec, const Vec& lambda, int T) {
    if (spec == "uniform") return uniform_policy(m);
    if (spec.rfind("action:", 0) == 0) {
        std::vector<int> a;
        std::stringstream ss(spec.substr(7));
        std::string id;
        for (int n = 0; std::getline(ss, id, ','); ++n) {
            if (n >= m.num_agents) throw DomainError("too many actions in policy spec");
            a.push_back(detail::find_id(m.actions[n], id, "action"));
        }
        if (static_cast<int>(a.size()) != m.num_agents) throw DomainError("policy spec needs one action per agent");
        return constant_action_policy(m, a);
    }
    if (spec == "exact") {
        const auto vt = exact_dp(m, lambda, T);
        return coordination_to_behavioral(extract_policy(m, vt), m);
    }
    throw DomainError("unknown policy '" + spec + "' (uniform | action:<ids> | exact)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained multi-agent POMDP planner and learner"};
    app.require_subcommand(1);
    Common c;
    for (int i = 1; i < argc; ++i) c.argv.emplace_back(argv[i]);

    auto add_model = [&](CLI::App* sub) {
        sub->add_option("model", c.model, "model JSON file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", c.out, "write the report here instead of stdout");
    };

    std::string lambda_s, generator = "identity", cert_path, policy = "uniform", config_path, metrics, ckpt;
    int horizon = 3, t_index = 1, iters = 20000, episodes = 1, cert_depth = 6;
    std::uint64_t seed = 1;
    double tol = 1e-6;
    bool infinite = false;

    auto* validate_cmd = app.add_subcommand("validate", "check a model file");
    add_model(validate_cmd);

    auto* plan_exact = app.add_subcommand("plan-exact", "exact coordinator dynamic program");
    add_model(plan_exact);
    plan_exact->add_option("--lambda", lambda_s, "comma-separated multipliers");
    plan_exact->add_option("--horizon", horizon)->check(CLI::PositiveNumber);

    auto* plan_ais = app.add_subcommand("plan-ais", "dynamic program over approximate information states");
    add_model(plan_ais);
    plan_ais->add_option("--generator", generator, "identity|constant|window:k|belief|file:<path>");
    plan_ais->add_option("--lambda", lambda_s);
    plan_ais->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
    plan_ais->add_flag("--infinite", infinite, "value iteration on the time-invariant kernel");
    plan_ais->add_option("--tol", tol, "value-iteration tolerance");
    plan_ais->add_option("--depth", cert_depth, "kernel enumeration depth");

    auto* certify_cmd = app.add_subcommand("certify", "measure (epsilon, delta) attributes of a generator");
    add_model(certify_cmd);
    certify_cmd->add_option("--generator", generator);
    certify_cmd->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
    certify_cmd->add_option("--lambda", lambda_s, "restrict the common side to this multiplier's minimizers");

    auto* bounds_cmd = app.add_subcommand("bounds", "gap bounds from a certificate");
    add_model(bounds_cmd);
    bounds_cmd->add_option("--cert", cert_path, "certificate JSON (certify report)")->required()->check(CLI::ExistingFile);
    bounds_cmd->add_option("--lambda", lambda_s);
    bounds_cmd->add_option("--t", t_index);
    bounds_cmd->add_option("--horizon", horizon, "finite horizon; <= 0 gives the infinite-horizon limits");

    auto* dual_cmd = app.add_subcommand("dual", "projected supergradient ascent on the dual");
    add_model(dual_cmd);
    dual_cmd->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
    dual_cmd->add_option("--iters", iters)->check(CLI::PositiveNumber);

    auto* oracle_cmd = app.add_subcommand("oracle", "single-constraint primal oracle");
    add_model(oracle_cmd);
    oracle_cmd->add_option("--horizon", horizon)->check(CLI::PositiveNumber);

    auto* train_cmd = app.add_subcommand("train", "primal-dual reinforcement learning");
    add_model(train_cmd);
    train_cmd->add_option("--config", config_path, "learner config JSON")->check(CLI::ExistingFile);
    train_cmd->add_option("--metrics", metrics, "metrics CSV path");
    train_cmd->add_option("--checkpoints", ckpt, "checkpoint directory");

    auto* sim_cmd = app.add_subcommand("simulate", "sample trajectories");
    add_model(sim_cmd);
    sim_cmd->add_option("--policy", policy, "uniform | action:<ids> | exact");
    sim_cmd->add_option("--episodes", episodes)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", seed);
    sim_cmd->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--lambda", lambda_s, "multiplier for --policy exact");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*validate_cmd) {
            const auto m = load_model(c.model);
            const auto rep = validate(m);
            json v = json::array();
            for (const auto& x : rep.violations) v.push_back({{"severity", x.severity == Severity::Error ? "error" : "warning"}, {"message", x.message}});
            emit(c, "validate", {{"name", m.name}, {"violations", v}}, {{"valid", rep.ok()}});
            if (!rep.ok()) {
                for (const auto& x : rep.violations) std::cerr << "invalid: " << x.message << "\n";
                return kValidation;
            }
            return kOk;
        }
        const auto m = load_model(c.model);
        require_valid(m);

        if (*plan_exact) {
            const Vec lam = lambda_or_zero(m, lambda_s);
            const auto vt = exact_dp(m, lam, horizon);
            json roots = json::array(), layers = json::array();
            for (size_t i = 0; i < vt.roots.size(); ++i)
                roots.push_back({{"h0", m.common_obs[vt.roots[i].h0[0]]}, {"prob", vt.roots[i].prob}, {"V", vt.V1(static_cast<int>(i))}});
            for (const auto& layer : vt.layers) {
                json entries = json::array();
                for (const auto& e : layer) entries.push_back({{"V", e.V}, {"prescription", action_ids(m, e.best)}});
                layers.push_back(entries);
            }
            const double offset = lagrangian_offset(lam, m.kappa, m.discount, horizon);
            emit(c, "plan-exact",
                 {{"lambda", lam}, {"horizon", horizon}, {"objective", vt.objective},
                  {"lagrangian", vt.objective - offset}, {"roots", roots}, {"layers", layers}});
            return kOk;
        }

        if (*plan_ais) {
            const Vec lam = lambda_or_zero(m, lambda_s);
            const auto gen = load_generator(generator);
            if (infinite) {
                const auto K = build_kernel(m, gen, lam, cert_depth);
                const auto fp = value_iteration(K, m.discount, tol);
                json roots = json::array();
                for (size_t i = 0; i < K.initial.size(); ++i)
                    roots.push_back({{"prob", K.initial_prob[i]}, {"V", fp.V[K.initial[i]]}});
                emit(c, "plan-ais",
                     {{"generator", gen.name()}, {"lambda", lam}, {"horizon", "inf"}, {"kernel_depth", K.depth},
                      {"ais_values", K.values.size()}, {"iterations", fp.iterations}, {"residual", fp.residual},
                      {"initial_value", fp.initial_value}, {"roots", roots}});
                return kOk;
            }
            const auto ct = compressed_dp(m, gen, lam, horizon);
            const auto vt = exact_dp(m, lam, horizon);
            json roots = json::array();
            for (size_t i = 0; i < ct.roots.size(); ++i)
                roots.push_back({{"prob", ct.roots[i].prob}, {"V_hat", ct.V1(static_cast<int>(i))}, {"V", vt.V1(static_cast<int>(i))}});
            json sizes = json::array();
            for (const auto& l : ct.layers) sizes.push_back(l.size());
            emit(c, "plan-ais",
                 {{"generator", gen.name()}, {"lambda", lam}, {"horizon", horizon}, {"objective", ct.objective},
                  {"exact_objective", vt.objective}, {"realized", realized_value(m, ct)}, {"roots", roots},
                  {"layer_sizes", sizes}});
            return kOk;
        }

        if (*certify_cmd) {
            const auto gen = load_generator(generator);
            Vec lam;
            if (!lambda_s.empty()) lam = lambda_or_zero(m, lambda_s);
            const auto cert = certify(m, gen, horizon, {}, lambda_s.empty() ? nullptr : &lam);
            emit(c, "certify", {{"generator", gen.name()}, {"horizon", horizon}, {"certification", to_json(cert)}},
                 {{"exact", cert.all_zero()}});
            return kOk;
        }

        if (*bounds_cmd) {
            const auto cert = certification_from_json(read_json_file(cert_path));
            const Vec lam = lambda_or_zero(m, lambda_s);
            const auto g = horizon <= 0 ? gap_bounds_infinite(cert, m, lam) : gap_bounds(cert, t_index, horizon, m, lam);
            emit(c, "bounds", {{"bounds", to_json(g)}});
            return kOk;
        }

        if (*dual_cmd) {
            DualConfig cfg;
            cfg.iters = iters;
            const auto r = dual_ascent(m, horizon, cfg);
            emit(c, "dual",
                 {{"horizon", horizon}, {"dual_value", r.dual_value}, {"lambda", r.lambda_star},
                  {"lambda_max", r.lambda_max}, {"supergradient", r.supergradient},
                  {"inner_evaluation", to_json(r.inner_eval)}, {"iterations", r.iterations},
                  {"comp_slack_residual", r.comp_slack_residual}},
                 {{"converged", r.converged}});
            return kOk;
        }

        if (*oracle_cmd) {
            const auto r = primal_oracle(m, horizon);
            json hull = json::array();
            for (const auto& [d, cc] : r.hull) hull.push_back({{"D", d}, {"C", cc}});
            emit(c, "oracle",
                 {{"horizon", horizon}, {"primal_value", r.primal_value}, {"policies", r.points.size()}, {"hull", hull},
                  {"mixture", {{"lo", r.lo}, {"hi", r.hi}, {"weight_hi", r.weight_hi}}}},
                 {{"feasible", std::isfinite(r.primal_value)}});
            return kOk;
        }

        if (*train_cmd) {
            LearnerConfig cfg;
            if (!config_path.empty()) cfg = learner_config_from_json(read_json_file(config_path));
            cfg = validate_config(cfg, m);
            auto bundle = make_bundle(m, cfg, cfg.seed);
            const auto st = train(m, cfg, bundle, {metrics, ckpt});
            const int w = std::max(1, st.iteration / 2);
            const auto& last = st.history.back();
            emit(c, "train",
                 {{"iterations", st.iteration}, {"lambda", st.lambda}, {"lambda_max", cfg.lambda_max},
                  {"last", {{"risk_coord", last.risk_coord}, {"risk_sup", last.risk_sup}, {"lagrangian_mean", last.lagrangian_mean},
                            {"violation", last.violation}}},
                  {"running", {{"window", w}, {"lambda", st.recent_lambda(w)}, {"D", st.recent_D(w)},
                               {"lagrangian_mean", st.recent_lagrangian(w)}}},
                  {"metrics", metrics}, {"checkpoints", ckpt}},
                 {{"converged", st.converged}}, cfg.seed);
            return kOk;
        }

        if (*sim_cmd) {
            const Vec lam = lambda_or_zero(m, lambda_s);
            const auto u = parse_policy(m, policy, lam, horizon);
            json eps = json::array();
            for (int e = 0; e < episodes; ++e) {
                const auto tr = sample_trajectory(m, u, horizon, stream_seed(seed, static_cast<std::uint64_t>(e)));
                json steps = json::array();
                for (const auto& st : tr.steps) {
                    json a = json::array();
                    for (int n = 0; n < m.num_agents; ++n) a.push_back(m.actions[n][st.a[n]]);
                    steps.push_back({{"obs", detail::obs_json(m, st.o)}, {"action", a}, {"c", st.c}, {"d", st.d}});
                }
                eps.push_back({{"steps", steps}, {"discounted_cost", discounted_cost(tr, m.discount)}});
            }
            emit(c, "simulate", {{"policy", policy}, {"horizon", horizon}, {"episodes", eps}}, json::object(), seed);
            return kOk;
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kValidation;
    } catch (const SizingError& e) {
        std::cerr << "sizing guard: " << e.what() << "\n";
        return kSizing;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const DomainError& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kOk;
}
