#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "actloop/bench.hpp"
#include "actloop/error.hpp"
#include "actloop/run_config.hpp"

using namespace actloop;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kUsage = 2;

std::atomic<bool> g_stop{false};

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> domain;
    std::optional<std::string> out;
    std::optional<int> jobs;
};

RunConfig resolve(const Globals& g, const RunConfig& base = {}) {
    RunConfig cfg = g.config_path.empty() ? base : load_run_config(g.config_path, base);
    if (g.seed) cfg.seed = *g.seed;
    if (g.domain) cfg.domain = *g.domain;
    if (g.out) cfg.out = *g.out;
    if (g.jobs) cfg.jobs = *g.jobs;
    const int cores = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (cfg.jobs > cores) {
        std::cerr << "note: jobs lowered from " << cfg.jobs << " to " << cores << " available cores\n";
        cfg.jobs = cores;
    }
    cfg.validate();
    return cfg;
}

void prepare_out(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec) throw ConfigError("cannot create output directory " + cfg.out + ": " + ec.message());
    std::ofstream out(fs::path(cfg.out) / "config.json");
    if (!out) throw ConfigError("cannot write " + cfg.out + "/config.json");
    out << run_config_to_json(cfg).dump(2) << '\n';
}

VelocityModel load_checkpoint(const std::string& path, const DomainSpec& spec, const RunConfig& cfg) {
    if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
    auto rng = stream_rng(cfg, Stream::init);
    const auto expected = make_manifest(spec, make_velocity_model(spec, rng), cfg.sampler);
    return load_policy(path, expected);
}

std::string out_file(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.out) / name).string(); }

int cmd_plan(const RunConfig& cfg, const std::string& goal_text, const std::string& format, const std::string& save) {
    const auto spec = load_domain(resolve_domain_path(cfg.domain));
    const auto goal = parse_goal(spec, goal_text);
    auto planner = make_planner(cfg.planner_backend);
    const auto p = planner->plan(spec, goal, spec.initial);
    const auto wire = plan_to_json(spec, p);
    if (format == "wire")
        std::cout << wire.dump(2) << '\n';
    else
        std::cout << format_plan(spec, p);
    if (!save.empty()) {
        std::ofstream out(save);
        if (!out) throw ConfigError("cannot write " + save);
        out << wire.dump(2) << '\n';
    }
    return kOk;
}

int cmd_sft(const RunConfig& cfg) {
    const auto spec = load_domain(resolve_domain_path(cfg.domain));
    prepare_out(cfg);
    const auto result = run_sft(spec, cfg);
    save_policy(out_file(cfg, "policy.ckpt"), result.model, make_manifest(spec, result.model, cfg.sampler));
    std::ofstream csv(out_file(cfg, "sft_loss.csv"));
    csv.precision(10);
    csv << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) csv << e + 1 << ',' << result.epoch_loss[e] << '\n';
    std::cout << "sft: " << cfg.demos.count << " demos, " << cfg.sft.epochs << " epochs, probe loss "
              << result.initial_loss << " -> " << result.final_loss << "\n"
              << "checkpoint: " << out_file(cfg, "policy.ckpt") << '\n';
    return kOk;
}

int cmd_grpo(const Globals& g, std::string checkpoint, std::string reference, std::optional<int> iterations,
             const std::string& resume) {
    RunConfig base;
    TrainState state;
    TrainingLog history;
    if (!resume.empty()) {
        base = load_run_config((fs::path(resume) / "config.json").string());
        if (checkpoint.empty()) checkpoint = (fs::path(resume) / "policy.ckpt").string();
        if (reference.empty()) reference = (fs::path(resume) / "reference.ckpt").string();
        state = load_train_state((fs::path(resume) / "train_state.bin").string());
        history = read_training_csv((fs::path(resume) / "training_log.csv").string());
        if (!g.out) base.out = resume;
    }
    RunConfig cfg = resolve(g, base);
    if (iterations) cfg.grpo.iterations = *iterations;
    cfg.validate();
    if (checkpoint.empty()) throw ConfigError("grpo needs --checkpoint or --resume");
    if (reference.empty()) reference = checkpoint;
    const auto spec = load_domain(resolve_domain_path(cfg.domain));
    PolicyBundle bundle;
    bundle.theta = load_checkpoint(checkpoint, spec, cfg);
    bundle.theta_old = bundle.theta;
    bundle.reference = load_checkpoint(reference, spec, cfg);
    prepare_out(cfg);

    auto planner = make_planner(cfg.planner_backend);
    auto critic = make_critic(cfg.critic_backend, cfg.critic_config());
    auto rng = stream_rng(cfg, Stream::grpo);
    const auto log = train(bundle, spec, *planner, *critic, cfg.grpo, cfg.sampler, rng, nullptr,
                           [](const TrainingRecord& r) {
                               if (r.iteration % 10 == 0)
                                   std::cerr << "iteration " << r.iteration << " level " << r.level << " reward "
                                             << r.mean_reward << " kl " << r.kl_mean << '\n';
                           },
                           &state);
    for (const auto& r : log.records) history.records.push_back(r);
    for (const auto& e : log.events) history.events.push_back(e);

    const auto manifest = make_manifest(spec, bundle.theta, cfg.sampler);
    save_policy(out_file(cfg, "policy.ckpt"), bundle.theta, manifest);
    save_policy(out_file(cfg, "reference.ckpt"), bundle.reference, manifest);
    save_train_state(out_file(cfg, "train_state.bin"), state);
    std::ofstream events(out_file(cfg, "events.log"), std::ios::app);
    for (const auto& e : log.events) events << e << '\n';
    if (!history.records.empty()) emit_curves(history, cfg.out);
    std::cout << "grpo: iterations " << (log.records.empty() ? 0 : log.records.front().iteration) << ".."
              << state.completed << ", checkpoint " << out_file(cfg, "policy.ckpt") << '\n';
    return kOk;
}

PromptSuite suite_for(const DomainSpec& spec, const RunConfig& cfg, const std::string& suite_path,
                      std::optional<std::uint64_t> suite_seed, const SuiteCounts& counts) {
    if (!suite_path.empty()) return load_suite(suite_path, spec);
    return generate_suite(spec, suite_seed.value_or(cfg.seed), counts);
}

SuiteCounts parse_counts(const std::vector<int>& v) {
    if (v.empty()) return {};
    if (v.size() != 3) throw ConfigError("--counts takes three numbers: simple medium hard");
    return {v[0], v[1], v[2]};
}

int cmd_bench(const RunConfig& cfg, const std::string& checkpoint, const std::string& policy_name,
              const std::string& mode, const std::string& suite_path, std::optional<std::uint64_t> suite_seed,
              const std::vector<int>& counts) {
    const auto loop = loop_mode(mode, cfg.loop);
    const auto spec = load_domain(resolve_domain_path(cfg.domain));
    std::unique_ptr<SegmentPolicy> policy;
    if (!checkpoint.empty())
        policy = std::make_unique<LearnedPolicy>(load_checkpoint(checkpoint, spec, cfg), cfg.sampler,
                                                 fs::path(checkpoint).stem().string());
    else if (policy_name == "oracle")
        policy = std::make_unique<OraclePolicy>();
    else if (policy_name == "frozen")
        policy = std::make_unique<FrozenPolicy>();
    else
        throw ConfigError("bench needs --checkpoint or --policy oracle|frozen");
    const auto suite = suite_for(spec, cfg, suite_path, suite_seed, parse_counts(counts));
    prepare_out(cfg);
    save_suite(out_file(cfg, "suite.json"), spec, suite);

    auto wire = std::make_shared<WireLog>();
    auto planner = make_planner(cfg.planner_backend, wire);
    auto critic = make_critic(cfg.critic_backend, cfg.critic_config(), wire);
    EvalOptions opts;
    opts.loop = loop;
    opts.log_path = out_file(cfg, "episodes_" + mode + ".jsonl");
    std::error_code ec;
    fs::remove(opts.log_path, ec);
    auto rng = stream_rng(cfg, Stream::bench);
    auto report = evaluate_policy(spec, suite, *policy, *critic, *planner, opts, rng);
    report.policy = policy->name() + "/" + mode;
    std::ofstream(out_file(cfg, "report_" + mode + ".json")) << report_to_json(report).dump(2) << '\n';
    if (!wire->records().empty()) wire->write_jsonl(out_file(cfg, "wire_" + mode + ".jsonl"));
    std::cout << compare({report}).to_text();
    return kOk;
}

int cmd_compare(const std::vector<std::string>& files, const std::string& csv_path) {
    std::vector<MetricReport> reports;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) throw ConfigError("cannot read report " + f);
        try {
            reports.push_back(metric_report_from_json(nlohmann::json::parse(in)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(f + ": " + e.what());
        }
    }
    const auto table = compare(reports);
    std::cout << table.to_text();
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw ConfigError("cannot write " + csv_path);
        out << table.to_csv();
    }
    return kOk;
}

int cmd_suite(const RunConfig& cfg, std::optional<std::uint64_t> suite_seed, const std::vector<int>& counts,
              const std::string& path) {
    const auto spec = load_domain(resolve_domain_path(cfg.domain));
    const auto suite = generate_suite(spec, suite_seed.value_or(cfg.seed), parse_counts(counts));
    const std::string target = path.empty() ? out_file(cfg, "suite.json") : path;
    if (path.empty()) prepare_out(cfg);
    save_suite(target, spec, suite);
    std::cout << "suite: " << suite.tasks.size() << " tasks (" << suite.counts.simple << " simple, "
              << suite.counts.medium << " medium, " << suite.counts.hard << " hard), hash " << std::hex
              << suite.hash() << std::dec << ", written to " << target << '\n';
    return kOk;
}

int cmd_mock_serve(const std::string& script, const std::string& host, int port, double max_seconds,
                   const std::string& transcript) {
    MockServer server(load_mock_script(script));
    server.start(host, port);
    std::cout << "mock server listening on " << server.url() << std::endl;
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    const auto t0 = std::chrono::steady_clock::now();
    while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        if (max_seconds > 0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= max_seconds)
            break;
    }
    server.stop();
    if (!transcript.empty()) {
        std::ofstream out(transcript, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + transcript);
        out << transcript_to_jsonl(server.transcript());
    }
    std::cout << "mock server stopped after " << server.transcript().size() << " requests ("
              << server.unmatched() << " unmatched)\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"actloop: plan, generate, critique and train on symbolic microworlds"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON run configuration (flags override it)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Global seed");
    app.add_option("--domain", g.domain, "Bundled domain name or domain JSON path");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--jobs", g.jobs, "Parallelism degree, capped at the available cores")->check(CLI::PositiveNumber);

    auto* plan_cmd = app.add_subcommand("plan", "Print a plan for a goal from the domain's initial state");
    std::string goal_text, format = "text", save;
    plan_cmd->add_option("--goal", goal_text, "Goal literals, e.g. \"cup.sweet, cup.stirred\"")->required();
    plan_cmd->add_option("--format", format, "text or wire")->check(CLI::IsMember({"text", "wire"}));
    plan_cmd->add_option("--save", save, "Also write the wire form to this file");

    auto* sft_cmd = app.add_subcommand("sft", "Fit the segment policy on generated demonstrations");
    std::optional<int> demos, epochs;
    sft_cmd->add_option("--demos", demos, "Demonstration count");
    sft_cmd->add_option("--epochs", epochs, "Training epochs");

    auto* grpo_cmd = app.add_subcommand("grpo", "Closed-loop GRPO fine-tuning from a checkpoint");
    std::string checkpoint, reference, resume;
    std::optional<int> iterations;
    grpo_cmd->add_option("--checkpoint", checkpoint, "Starting policy checkpoint");
    grpo_cmd->add_option("--reference", reference, "Frozen reference policy (defaults to the checkpoint)");
    grpo_cmd->add_option("--iterations", iterations, "Last iteration to run");
    grpo_cmd->add_option("--resume", resume, "Continue the run stored in this directory");

    auto* bench_cmd = app.add_subcommand("bench", "Evaluate a policy on a prompt suite");
    std::string bench_ckpt, policy_name, mode = "full", suite_path;
    std::optional<std::uint64_t> suite_seed;
    std::vector<int> counts;
    bench_cmd->add_option("--checkpoint", bench_ckpt, "Learned policy checkpoint");
    bench_cmd->add_option("--policy", policy_name, "Built-in policy instead of a checkpoint")
        ->check(CLI::IsMember({"oracle", "frozen"}));
    bench_cmd->add_option("--mode", mode, "full, inner-only or open-loop");
    bench_cmd->add_option("--suite", suite_path, "Suite file (otherwise generated)")->check(CLI::ExistingFile);
    bench_cmd->add_option("--suite-seed", suite_seed, "Seed for a generated suite (defaults to --seed)");
    bench_cmd->add_option("--counts", counts, "Tasks per level: simple medium hard")->expected(3);

    auto* compare_cmd = app.add_subcommand("compare", "Tabulate metric reports against the first one");
    std::vector<std::string> report_files;
    std::string csv_path;
    compare_cmd->add_option("reports", report_files, "Report JSON files")->required()->check(CLI::ExistingFile);
    compare_cmd->add_option("--csv", csv_path, "Also write the table as CSV");

    auto* suite_cmd = app.add_subcommand("suite", "Generate a prompt suite");
    std::optional<std::uint64_t> gen_seed;
    std::vector<int> gen_counts;
    std::string suite_out;
    suite_cmd->add_option("--suite-seed", gen_seed, "Suite seed (defaults to --seed)");
    suite_cmd->add_option("--counts", gen_counts, "Tasks per level: simple medium hard")->expected(3);
    suite_cmd->add_option("--file", suite_out, "Output file (defaults to <out>/suite.json)");

    auto* mock_cmd = app.add_subcommand("mock-serve", "Serve a scripted planner/critic endpoint");
    std::string script, host = "127.0.0.1", transcript;
    int port = 8765;
    double max_seconds = 0.0;
    mock_cmd->add_option("--script", script, "Mock script JSON")->required()->check(CLI::ExistingFile);
    mock_cmd->add_option("--host", host, "Bind address");
    mock_cmd->add_option("--port", port, "Port, 0 for any free port");
    mock_cmd->add_option("--max-seconds", max_seconds, "Stop after this long (0: until interrupted)");
    mock_cmd->add_option("--transcript", transcript, "Write the exchanged requests and responses here on exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (plan_cmd->parsed()) return cmd_plan(resolve(g), goal_text, format, save);
        if (sft_cmd->parsed()) {
            RunConfig cfg = resolve(g);
            if (demos) cfg.demos.count = *demos;
            if (epochs) cfg.sft.epochs = *epochs;
            cfg.validate();
            return cmd_sft(cfg);
        }
        if (grpo_cmd->parsed()) return cmd_grpo(g, checkpoint, reference, iterations, resume);
        if (bench_cmd->parsed())
            return cmd_bench(resolve(g), bench_ckpt, policy_name, mode, suite_path, suite_seed, counts);
        if (compare_cmd->parsed()) return cmd_compare(report_files, csv_path);
        if (suite_cmd->parsed()) return cmd_suite(resolve(g), gen_seed, gen_counts, suite_out);
        if (mock_cmd->parsed()) return cmd_mock_serve(script, host, port, max_seconds, transcript);
    } catch (const NoPlanError& e) {
        std::cerr << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kInternal;
    }
    return kInternal;
}
