#include "adaptagent/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "adaptagent/demostore.hpp"
#include "adaptagent/evalkit.hpp"
#include "adaptagent/metatrain.hpp"
#include "adaptagent/protocol.hpp"
#include "adaptagent/recorder.hpp"
#include "adaptagent/text.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// Thrown for flag combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::MalformedFile:
        case ErrorCode::SchemaMismatch:
        case ErrorCode::PreconditionFailed:
        case ErrorCode::ReplayFailure:
        case ErrorCode::UnknownSite:
        case ErrorCode::UnknownTask:
        case ErrorCode::TaskSiteMismatch:
        case ErrorCode::InsufficientTasks:
        case ErrorCode::NoPeerWebsite:
        case ErrorCode::NotEnoughDemos:
        case ErrorCode::MissingDemonstration:
        case ErrorCode::EmptyInput:
            return kExitValidation;
        default:
            return kExitRuntime;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp);
        out << text;
        if (!out) throw Error(ErrorCode::IoFailure, "short write to " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "rename to " + path.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, path + ": " + e.what());
    }
}

json provenance(const std::string& command, const json& config, const webenv::Corpus* corpus) {
    json p{{"tool", "adaptagent"}, {"version", kVersion}, {"command", command}, {"config", config}};
    if (corpus) {
        p["corpus_digest"] = hex64(webenv::corpus_digest(*corpus));
        p["corpus_seed"] = corpus->seed;
    }
    return p;
}

json refs_json(const std::vector<evalkit::TaskRef>& refs) {
    json out = json::array();
    for (const auto& r : refs) {
        out.push_back(json{{"task_id", r.task_id}, {"website_id", r.website_id}, {"instruction", r.instruction}});
    }
    return out;
}

std::vector<evalkit::TaskRef> read_refs(const std::string& path) {
    const auto j = read_json(path);
    std::vector<evalkit::TaskRef> out;
    try {
        for (const auto& r : j) {
            out.push_back({r.at("task_id").get<std::string>(), r.at("website_id").get<std::string>(),
                           r.at("instruction").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, path + ": " + e.what());
    }
    return out;
}

evalkit::SplitSpec load_or_make_splits(const webenv::Corpus& corpus, const std::string& splits_path,
                                       std::uint64_t split_seed) {
    evalkit::SplitSpec splits;
    if (!splits_path.empty()) {
        try {
            splits = read_json(splits_path).get<evalkit::SplitSpec>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::SchemaMismatch, splits_path + ": " + e.what());
        }
    } else {
        evalkit::SplitOptions options;
        options.seed = split_seed;
        splits = evalkit::make_splits(corpus, options);
    }
    evalkit::validate_splits(corpus, splits);
    return splits;
}

// Options shared by every command that trains or evaluates a policy.
struct MetaFlags {
    std::string strategy = "hybrid";
    std::string modality = "multimodal";
    metatrain::MetaConfig config;

    void add(CLI::App* app, bool meta_epochs = true) {
        app->add_option("--strategy", strategy, "Task selection: intra, inter or hybrid")
            ->check(CLI::IsMember({"intra", "inter", "hybrid"}))
            ->capture_default_str();
        app->add_option("--alpha", config.alpha, "Inner-loop step size")->capture_default_str();
        app->add_option("--beta", config.beta, "Outer-loop step size")->capture_default_str();
        app->add_option("--inner-steps", config.inner_steps_per_demo_step, "Inner updates per demo step")
            ->capture_default_str();
        if (meta_epochs) app->add_option("--epochs", config.meta_epochs, "Meta-training epochs")->capture_default_str();
        app->add_option("--meta-batch", config.meta_batch_size, "Websites per meta-update")->capture_default_str();
        app->add_option("--n-adapt", config.n_adapt_tasks, "Tasks per inner loop")->capture_default_str();
        app->add_option("--n-eval", config.n_eval_tasks, "Held-out tasks per meta-update")->capture_default_str();
        app->add_option("--hidden", config.hidden, "Policy hidden width")->capture_default_str();
        app->add_option("--top-k", config.top_k, "Candidate elements kept per page")->capture_default_str();
        app->add_option("--modality", modality, "Policy observation: multimodal or text")
            ->check(CLI::IsMember({"multimodal", "text"}))
            ->capture_default_str();
        app->add_option("--seed", config.seed, "Training seed")->capture_default_str();
    }

    metatrain::MetaConfig resolve() const {
        auto c = config;
        c.strategy = metatrain::parse_strategy(strategy);
        c.modality = parse_modality(modality);
        c.validate();
        return c;
    }
};

struct CorpusFlags {
    std::string corpus;
    std::string splits;
    std::uint64_t split_seed = 0;

    void add(CLI::App* app) {
        app->add_option("--corpus", corpus, "Corpus file written by gen-corpus")->required();
        app->add_option("--splits", splits, "Split file; generated from the corpus when omitted");
        app->add_option("--split-seed", split_seed, "Seed for generated splits")->capture_default_str();
    }
};

// ---------------------------------------------------------------- commands

struct GenCorpus {
    std::uint64_t seed = 0;
    int domains = 4;
    int sites = 15;
    int tasks = 8;
    webenv::CorpusOptions options;
    evalkit::SplitOptions split_options;
    std::string out;

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Corpus seed")->capture_default_str();
        app->add_option("--domains", domains, "Number of domains (the last is held out)")->capture_default_str();
        app->add_option("--sites-per-domain", sites)->capture_default_str();
        app->add_option("--tasks-per-site", tasks)->capture_default_str();
        app->add_flag("--duplicate-labels", options.duplicate_labels, "Give controls hidden same-label twins");
        app->add_option("--submit-first-prob", options.submit_first_prob)->capture_default_str();
        app->add_option("--navigation-prob", options.navigation_task_prob)->capture_default_str();
        app->add_option("--heldout-websites", split_options.heldout_websites)->capture_default_str();
        app->add_option("--heldout-domains", split_options.heldout_domains)->capture_default_str();
        app->add_option("--cross-task-per-website", split_options.cross_task_per_website)->capture_default_str();
        app->add_option("--split-seed", split_options.seed)->capture_default_str();
        app->add_option("--out", out, "Output directory")->required();
    }

    json run() const {
        if (domains < 1 || sites < 1 || tasks < 1) throw Error(ErrorCode::InvalidArgument, "sizes must be positive");
        const auto corpus = webenv::generate_corpus(seed, domains, sites, tasks, options);
        for (const auto& d : corpus.domains) {
            for (const auto& s : d.sites) webenv::validate_site(s);
        }
        const auto splits = evalkit::make_splits(corpus, split_options);
        const json config{{"seed", seed},
                          {"domains", domains},
                          {"sites_per_domain", sites},
                          {"tasks_per_site", tasks},
                          {"duplicate_labels", options.duplicate_labels},
                          {"submit_first_prob", options.submit_first_prob},
                          {"navigation_task_prob", options.navigation_task_prob},
                          {"heldout_websites", split_options.heldout_websites},
                          {"heldout_domains", split_options.heldout_domains},
                          {"cross_task_per_website", split_options.cross_task_per_website},
                          {"split_seed", split_options.seed}};
        const auto prov = provenance("gen-corpus", config, &corpus);
        const fs::path dir(out);
        fs::create_directories(dir);
        webenv::save_corpus(corpus, (dir / "corpus.json").string());
        write_json(dir / "splits.json", splits);
        write_json(dir / "train_refs.json", refs_json(evalkit::task_refs(corpus, splits.train)));
        write_json(dir / "cross_task_refs.json", refs_json(evalkit::task_refs(corpus, splits.cross_task)));
        write_json(dir / "provenance.json", prov);
        return json{{"corpus", (dir / "corpus.json").string()},
                    {"tasks", corpus.all_tasks().size()},
                    {"train", splits.train.size()},
                    {"cross_task", splits.cross_task.size()},
                    {"cross_website", splits.cross_website.size()},
                    {"cross_domain", splits.cross_domain.size()},
                    {"provenance", prov}};
    }
};

struct Dedup {
    std::string train;
    std::string cross_task;
    std::string out;

    void add(CLI::App* app) {
        app->add_option("--train", train, "Training task refs (JSON array)")->required();
        app->add_option("--cross-task", cross_task, "Cross-task refs (JSON array)")->required();
        app->add_option("--out", out, "Output directory")->required();
    }

    json run() const {
        const auto tr = read_refs(train);
        const auto ct = read_refs(cross_task);
        const auto [new_train, new_ct] = evalkit::amend_splits(tr, ct);
        const auto k = evalkit::dedup_config(ct);
        const auto prov = provenance("dedup", json{{"train", train}, {"cross_task", cross_task}}, nullptr);
        const fs::path dir(out);
        fs::create_directories(dir);
        write_json(dir / "train_refs.json", refs_json(new_train));
        write_json(dir / "cross_task_refs.json", refs_json(new_ct));
        write_json(dir / "dedup.json", json{{"k_per_website", k.k_per_website}, {"provenance", prov}});
        return json{{"train", new_train.size()}, {"cross_task", new_ct.size()}, {"provenance", prov}};
    }
};

struct MetaTrain {
    CorpusFlags corpus_flags;
    MetaFlags meta;
    std::string out;

    void add(CLI::App* app) {
        corpus_flags.add(app);
        meta.add(app);
        app->add_option("--out", out, "Output directory")->required();
    }

    json run() const {
        const auto config = meta.resolve();
        const auto corpus = webenv::load_corpus(corpus_flags.corpus);
        const auto splits = load_or_make_splits(corpus, corpus_flags.splits, corpus_flags.split_seed);
        const auto train = metatrain::restrict_to(corpus, {splits.train.begin(), splits.train.end()});
        const auto result = metatrain::meta_train(train, config);
        const auto prov = provenance(
            "meta-train", json{{"meta", config}, {"splits", corpus_flags.splits}, {"split_seed", corpus_flags.split_seed}},
            &corpus);
        const fs::path dir(out);
        fs::create_directories(dir);
        policy::save_checkpoint(result.params, (dir / "theta_star.ckpt").string());
        std::string log;
        for (const auto& r : result.log) log += json(r).dump() + "\n";
        write_text(dir / "training_log.jsonl", log);
        json plan = json::array();
        for (const auto& b : result.plan) {
            plan.push_back(json{{"website_id", b.website_id},
                                {"d_train", b.d_train},
                                {"d_test", b.d_test},
                                {"provenance", metatrain::to_string(b.provenance)}});
        }
        write_json(dir / "plan.json", plan);
        json summary{{"checkpoint", (dir / "theta_star.ckpt").string()},
                     {"params_fingerprint", hex64(metatrain::fingerprint(result.params))},
                     {"epoch_meta_loss", result.epoch_meta_loss},
                     {"provenance", prov}};
        write_json(dir / "provenance.json", summary);
        return summary;
    }
};

struct Finetune {
    CorpusFlags corpus_flags;
    MetaFlags meta;
    std::string mode = "full";
    double lr = 0.05;
    int epochs = 30;
    std::string out;

    void add(CLI::App* app) {
        corpus_flags.add(app);
        meta.add(app, false);
        app->add_option("--mode", mode, "full: all training tasks; de: the tasks meta-training would consume")
            ->check(CLI::IsMember({"full", "de"}))
            ->capture_default_str();
        app->add_option("--lr", lr)->capture_default_str();
        app->add_option("--epochs,--ft-epochs", epochs, "Fine-tuning epochs")->capture_default_str();
        app->add_option("--out", out, "Output directory")->required();
    }

    json run() const {
        const auto config = meta.resolve();
        if (lr <= 0 || epochs < 1) throw Error(ErrorCode::InvalidArgument, "lr must be > 0 and epochs >= 1");
        const auto corpus = webenv::load_corpus(corpus_flags.corpus);
        const auto splits = load_or_make_splits(corpus, corpus_flags.splits, corpus_flags.split_seed);
        protocol::ArmConfig arm;
        arm.arm = mode == "full" ? protocol::Arm::policy_ft : protocol::Arm::policy_ft_de;
        arm.meta = config;
        arm.ft_lr = lr;
        arm.ft_epochs = epochs;
        metatrain::ExampleBank bank(corpus, config.modality, config.top_k);
        const auto params = protocol::train_policy(corpus, splits, arm.arm, arm, bank);
        const auto prov = provenance("finetune", json{{"arm", arm}, {"splits", corpus_flags.splits}}, &corpus);
        const fs::path dir(out);
        fs::create_directories(dir);
        policy::save_checkpoint(params, (dir / "finetuned.ckpt").string());
        json summary{{"checkpoint", (dir / "finetuned.ckpt").string()},
                     {"params_fingerprint", hex64(metatrain::fingerprint(params))},
                     {"provenance", prov}};
        write_json(dir / "provenance.json", summary);
        return summary;
    }
};

struct Adapt {
    std::string corpus_path;
    std::string checkpoint;
    std::vector<std::string> demos;
    std::vector<std::string> oracle;
    double alpha = 0.05;
    int inner_steps = 1;
    std::string modality = "multimodal";
    int top_k = domkit::kDefaultTopK;
    std::string out;

    void add(CLI::App* app) {
        app->add_option("--corpus", corpus_path)->required();
        app->add_option("--checkpoint", checkpoint, "Meta-trained parameters")->required();
        auto* d = app->add_option("--demos", demos, "Recorded demonstration files");
        auto* o = app->add_option("--oracle", oracle, "Task ids adapted on with oracle demonstrations");
        d->excludes(o);
        app->add_option("--alpha", alpha)->capture_default_str();
        app->add_option("--inner-steps", inner_steps)->capture_default_str();
        app->add_option("--modality", modality)->check(CLI::IsMember({"multimodal", "text"}))->capture_default_str();
        app->add_option("--top-k", top_k)->capture_default_str();
        app->add_option("--out", out, "Output directory")->required();
    }

    json run() const {
        if (demos.empty() && oracle.empty()) throw UsageError("adapt needs --demos or --oracle");
        if (alpha <= 0 || inner_steps < 1) throw Error(ErrorCode::InvalidArgument, "alpha must be > 0, inner steps >= 1");
        const auto corpus = webenv::load_corpus(corpus_path);
        const auto theta = policy::load_checkpoint(checkpoint);
        metatrain::DemoLibrary library;
        std::vector<std::string> targets = oracle;
        json sources = json::array();
        for (const auto& path : demos) {
            const auto record = demostore::load(path);
            library.add_record(record, corpus);
            targets.push_back(record.task_id);
            sources.push_back(json{{"path", path}, {"task_id", record.task_id}, {"annotator", record.annotator == demostore::Annotator::human ? "human" : "oracle"}});
        }
        for (const auto& t : oracle) {
            corpus.task(t);
            sources.push_back(json{{"task_id", t}, {"annotator", "oracle"}});
        }
        const auto mod = parse_modality(modality);
        metatrain::ExampleBank bank(corpus, mod, top_k, library);
        const auto examples = bank.gather(targets);
        const double before = policy::mean_loss(theta, examples);
        const auto adapted = metatrain::adapt_to_target(theta, targets, bank, alpha, inner_steps);
        const double after = policy::mean_loss(adapted, examples);
        const auto prov = provenance("adapt",
                                     json{{"checkpoint", checkpoint},
                                          {"checkpoint_fingerprint", hex64(metatrain::fingerprint(theta))},
                                          {"alpha", alpha},
                                          {"inner_steps", inner_steps},
                                          {"modality", modality},
                                          {"top_k", top_k},
                                          {"demos", sources}},
                                     &corpus);
        const fs::path dir(out);
        fs::create_directories(dir);
        policy::save_checkpoint(adapted, (dir / "adapted.ckpt").string());
        json summary{{"checkpoint", (dir / "adapted.ckpt").string()},
                     {"target_tasks", targets},
                     {"loss_before", before},
                     {"loss_after", after},
                     {"params_fingerprint", hex64(metatrain::fingerprint(adapted))},
                     {"provenance", prov}};
        write_json(dir / "provenance.json", summary);
        return summary;
    }
};

struct Eval {
    CorpusFlags corpus_flags;
    MetaFlags meta;
    std::string arm = "POLICY_FOMAML_ADAPTED";
    std::string split = "cross-website";
    std::string mode = "trajectory";
    int runs = 5;
    std::uint64_t seed = 0;
    int support_size = 2;
    int jobs = 1;
    std::string checkpoint;
    double ft_lr = 0.05;
    int ft_epochs = 30;
    int n_demos = 1;
    std::string client = "heuristic";
    std::string script;
    std::string out;
    bool icl = false;

    void add(CLI::App* app, bool icl_command) {
        icl = icl_command;
        corpus_flags.add(app);
        if (icl) {
            app->add_option("--n-demos", n_demos, "Demonstrations in the prompt")->capture_default_str();
            app->add_option("--modality", meta.modality, "Prompt modality: multimodal or text")
                ->check(CLI::IsMember({"multimodal", "text"}))
                ->capture_default_str();
            app->add_option("--client", client, "Agent client: mock, http or heuristic")
                ->check(CLI::IsMember({"mock", "http", "heuristic"}))
                ->capture_default_str();
            app->add_option("--script", script, "Mock script file, or the endpoint url for http");
            app->add_option("--top-k", meta.config.top_k)->capture_default_str();
        } else {
            meta.add(app);
            app->add_option("--arm", arm, "SEEACT_MOCK, POLICY_FT, POLICY_FT_DE, POLICY_FOMAML, POLICY_FOMAML_ADAPTED or ICL_N_DEMOS")
                ->capture_default_str();
            app->add_option("--checkpoint", checkpoint, "Use these parameters instead of training the arm");
            app->add_option("--ft-lr", ft_lr)->capture_default_str();
            app->add_option("--ft-epochs", ft_epochs)->capture_default_str();
            app->add_option("--n-demos", n_demos)->capture_default_str();
            app->add_option("--client", client)->check(CLI::IsMember({"mock", "http", "heuristic"}))->capture_default_str();
            app->add_option("--script", script);
        }
        app->add_option("--split", split)
            ->check(CLI::IsMember({"cross-task", "cross-website", "cross-domain"}))
            ->capture_default_str();
        app->add_option("--mode", mode)->check(CLI::IsMember({"trajectory", "live"}))->capture_default_str();
        app->add_option("--runs", runs, "Selection seeds")->capture_default_str();
        app->add_option("--eval-seed", seed, "Base seed for support selection")->capture_default_str();
        app->add_option("--support-size", support_size, "Demonstrations per adaptation group")->capture_default_str();
        app->add_option("--out", out, "Output directory");
    }

    json run(int jobs_flag) const {
        protocol::ArmConfig arm_config;
        try {
            arm_config.arm = icl ? protocol::Arm::icl_n_demos : protocol::parse_arm(arm);
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        arm_config.meta = icl ? metatrain::MetaConfig{} : meta.resolve();
        if (icl) {
            arm_config.meta.modality = parse_modality(meta.modality);
            arm_config.meta.top_k = meta.config.top_k;
        }
        arm_config.ft_lr = ft_lr;
        arm_config.ft_epochs = ft_epochs;
        arm_config.n_demos = n_demos;
        arm_config.client = client;
        arm_config.script = script;
        if (client != "heuristic" && script.empty()) throw UsageError("--client " + client + " needs --script");
        if (runs < 1 || support_size < 0 || n_demos < 0) throw Error(ErrorCode::InvalidArgument, "runs >= 1, sizes >= 0");

        protocol::ProtocolConfig config;
        config.split = evalkit::parse_split_name(split);
        config.mode = evalkit::parse_success_mode(mode);
        config.n_runs = runs;
        config.seed = seed;
        config.support_size = std::max(support_size, n_demos);
        config.jobs = std::max(1, jobs_flag);

        const auto corpus = webenv::load_corpus(corpus_flags.corpus);
        const auto splits = load_or_make_splits(corpus, corpus_flags.splits, corpus_flags.split_seed);
        metatrain::ExampleBank bank(corpus, arm_config.meta.modality, arm_config.meta.top_k);
        std::optional<policy::PolicyParams> params;
        if (!checkpoint.empty()) params = policy::load_checkpoint(checkpoint);
        auto prepared = protocol::prepare_arm(corpus, splits, arm_config, bank, params);
        auto report = protocol::run_protocol(corpus, splits, *prepared.factory, config,
                                             std::string(protocol::to_string(arm_config.arm)));
        const auto prov = provenance(icl ? "icl-eval" : "eval",
                                     json{{"arm", arm_config},
                                          {"protocol", config},
                                          {"checkpoint", checkpoint},
                                          {"splits", corpus_flags.splits},
                                          {"split_seed", corpus_flags.split_seed},
                                          {"arm_provenance", prepared.provenance}},
                                     &corpus);
        report.provenance["run"] = prov;
        json summary{{"arm", report.arm},
                     {"split", report.split},
                     {"mode", evalkit::to_string(report.mode)},
                     {"n_runs", report.n_runs},
                     {"ele_acc", {{"mean", report.ele_acc.mean}, {"std", report.ele_acc.std}}},
                     {"op_f1", {{"mean", report.op_f1.mean}, {"std", report.op_f1.std}}},
                     {"step_sr", {{"mean", report.step_sr.mean}, {"std", report.step_sr.std}}},
                     {"overall_sr", {{"mean", report.overall_sr.mean}, {"std", report.overall_sr.std}}},
                     {"provenance", prov}};
        if (!out.empty()) {
            const fs::path dir(out);
            fs::create_directories(dir);
            write_json(dir / "report.json", report);
            write_text(dir / "report.csv", evalkit::to_csv(report));
            if (prepared.params) policy::save_checkpoint(*prepared.params, (dir / "params.ckpt").string());
            summary["report"] = (dir / "report.json").string();
        }
        return summary;
    }
};

struct Serve {
    std::string corpus;
    std::string host = "127.0.0.1";
    int port = 8765;
    std::string demo_dir = "demos";
    int ttl_minutes = 30;

    void add(CLI::App* app) {
        app->add_option("--corpus", corpus)->required();
        app->add_option("--host", host)->capture_default_str();
        app->add_option("--port", port)->capture_default_str();
        app->add_option("--demo-dir", demo_dir, "Where finished demonstrations are written")->capture_default_str();
        app->add_option("--ttl-minutes", ttl_minutes, "Idle session lifetime")->capture_default_str();
    }

    int run(std::ostream& out) const {
        recorder::RecorderConfig config;
        config.demo_dir = demo_dir;
        config.ttl = std::chrono::minutes(ttl_minutes);
        recorder::RecorderService service(webenv::load_corpus(corpus), config);
        out << json{{"listening", host + ":" + std::to_string(port)}, {"demo_dir", demo_dir}}.dump() << std::endl;
        if (!service.listen(host, port)) throw Error(ErrorCode::IoFailure, "cannot listen on " + host + ":" + std::to_string(port));
        return kExitOk;
    }
};

void report_error(std::ostream& err, std::string_view name, const std::string& detail, int code) {
    err << json{{"error", name}, {"detail", detail}, {"exit_code", code}}.dump() << std::endl;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"AdaptAgent desk lab: synthetic web tasks, meta-trained policies and evaluation"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    int jobs = 1;
    app.add_option("--jobs", jobs, "Worker threads for evaluation")->capture_default_str();

    GenCorpus gen;
    Dedup dedup;
    MetaTrain meta_train;
    Finetune finetune;
    Adapt adapt;
    Eval eval;
    Eval icl_eval;
    Serve serve;
    auto* c_gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus and its splits");
    auto* c_dedup = app.add_subcommand("dedup", "Move near-duplicate tasks out of the cross-task split");
    auto* c_meta = app.add_subcommand("meta-train", "First-order meta-training on the training split");
    auto* c_ft = app.add_subcommand("finetune", "Plain or data-equivalent fine-tuning");
    auto* c_adapt = app.add_subcommand("adapt", "Few-shot adaptation of a checkpoint");
    auto* c_eval = app.add_subcommand("eval", "Evaluate an arm over several selection seeds");
    auto* c_icl = app.add_subcommand("icl-eval", "Evaluate in-context demonstration prompting");
    auto* c_serve = app.add_subcommand("serve", "Run the demonstration recorder service");
    gen.add(c_gen);
    dedup.add(c_dedup);
    meta_train.add(c_meta);
    finetune.add(c_ft);
    adapt.add(c_adapt);
    eval.add(c_eval, false);
    icl_eval.add(c_icl, true);
    serve.add(c_serve);
    for (auto* sub : app.get_subcommands({})) {
        sub->add_option("--jobs", jobs, "Worker threads for evaluation")->capture_default_str();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        report_error(err, "UsageError", e.what(), kExitUsage);
        return kExitUsage;
    }

    try {
        json summary;
        if (*c_gen) summary = gen.run();
        else if (*c_dedup) summary = dedup.run();
        else if (*c_meta) summary = meta_train.run();
        else if (*c_ft) summary = finetune.run();
        else if (*c_adapt) summary = adapt.run();
        else if (*c_eval) summary = eval.run(jobs);
        else if (*c_icl) summary = icl_eval.run(jobs);
        else if (*c_serve) return serve.run(out);
        out << summary.dump(2) << std::endl;
        return kExitOk;
    } catch (const UsageError& e) {
        report_error(err, "UsageError", e.what(), kExitUsage);
        return kExitUsage;
    } catch (const Error& e) {
        const int code = exit_code_for(e.code());
        report_error(err, e.name(), e.what(), code);
        return code;
    } catch (const std::exception& e) {
        report_error(err, "RuntimeError", e.what(), kExitRuntime);
        return kExitRuntime;
    }
}

}  // namespace adaptagent::cli
