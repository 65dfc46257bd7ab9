#include "adaptagent/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <map>
#include <set>
#include <thread>

#include "adaptagent/text.hpp"

namespace adaptagent::protocol {

using nlohmann::json;

std::string_view to_string(Arm arm) {
    switch (arm) {
        case Arm::seeact_mock: return "SEEACT_MOCK";
        case Arm::policy_ft: return "POLICY_FT";
        case Arm::policy_ft_de: return "POLICY_FT_DE";
        case Arm::policy_fomaml: return "POLICY_FOMAML";
        case Arm::policy_fomaml_adapted: return "POLICY_FOMAML_ADAPTED";
        case Arm::icl_n_demos: return "ICL_N_DEMOS";
    }
    return "POLICY_FOMAML_ADAPTED";
}

Arm parse_arm(std::string_view s) {
    std::string u(s);
    for (auto& c : u) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (auto a : {Arm::seeact_mock, Arm::policy_ft, Arm::policy_ft_de, Arm::policy_fomaml,
                   Arm::policy_fomaml_adapted, Arm::icl_n_demos}) {
        if (u == to_string(a)) return a;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown arm '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- agents

PolicyAgent::PolicyAgent(policy::PolicyParams params, Modality modality, int top_k)
    : params_(std::move(params)), modality_(modality), top_k_(top_k) {}

std::optional<webenv::Action> PolicyAgent::act(const AgentContext& ctx) {
    const auto input = policy::observe(ctx.site, ctx.task.instruction, ctx.state, modality_, top_k_);
    if (input.size() == 0) return std::nullopt;
    return policy::predict(params_, input).action;
}

IclAgent::IclAgent(std::unique_ptr<icl::AgentClient> client, icl::PromptBundle prompt, int top_k)
    : client_(std::move(client)), prompt_(std::move(prompt)), top_k_(top_k) {}

std::optional<webenv::Action> IclAgent::act(const AgentContext& ctx) {
    const auto query = icl::make_query(ctx.site, ctx.task, ctx.state, ctx.previous, top_k_);
    try {
        const auto text = icl::query_agent(*client_, prompt_, query);
        return icl::parse_action_response(text, query.candidates, &query.layout);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ClientFailure) throw;
        return std::nullopt;
    }
}

std::optional<webenv::Action> OracleAgent::act(const AgentContext& ctx) {
    const auto gold = webenv::oracle_trajectory(ctx.site, ctx.task);
    const auto i = static_cast<std::size_t>(ctx.state.steps_taken);
    if (i >= gold.steps.size()) return std::nullopt;
    return gold.steps[i].action;
}

std::optional<webenv::Action> RandomAgent::act(const AgentContext& ctx) {
    const auto& page = ctx.site.page(ctx.state.current_page_id);
    if (page.elements.empty()) return std::nullopt;
    const auto& e = page.elements[rng_.below(page.elements.size())];
    std::vector<Operation> ops;
    for (auto op : {Operation::click, Operation::type, Operation::select}) {
        if (operation_allowed(e.tag, op)) ops.push_back(op);
    }
    webenv::Action a;
    a.element_id = e.element_id;
    a.operation = rng_.pick(ops);
    if (a.operation == Operation::select && !e.options.empty()) {
        a.value = rng_.pick(e.options);
    } else if (operation_takes_value(a.operation)) {
        const auto words = tokenize(ctx.task.instruction);
        a.value = words.empty() ? std::string("x") : rng_.pick(words);
    }
    return a;
}

PolicyFactory::PolicyFactory(policy::PolicyParams params, const metatrain::ExampleBank& bank, bool adapt,
                             double alpha, int steps_per_demo_step)
    : params_(std::move(params)), bank_(bank), adapt_(adapt), alpha_(alpha), steps_(steps_per_demo_step) {}

std::unique_ptr<Agent> PolicyFactory::make(const std::vector<std::string>& support, std::uint64_t) {
    auto params = adapt_ && !support.empty()
                      ? metatrain::adapt_to_target(params_, support, bank_, alpha_, steps_)
                      : params_;
    return std::make_unique<PolicyAgent>(std::move(params), bank_.modality());
}

IclFactory::IclFactory(const webenv::Corpus& corpus, ClientMaker clients, int n_demos, Modality modality,
                       metatrain::DemoLibrary demos, int top_k, std::string base)
    : corpus_(corpus),
      clients_(std::move(clients)),
      n_demos_(n_demos),
      modality_(modality),
      demos_(std::move(demos)),
      top_k_(top_k),
      base_(std::move(base)) {}

std::unique_ptr<Agent> IclFactory::make(const std::vector<std::string>& support, std::uint64_t run_seed) {
    std::vector<icl::Demo> demos;
    for (std::size_t i = 0; i < support.size() && static_cast<int>(i) < n_demos_; ++i) {
        const auto& task = corpus_.task(support[i]);
        const auto& site = corpus_.site_of(task);
        demos.push_back(icl::deconstruct_demo(demos_.resolve(site, task), site, top_k_));
    }
    auto prompt = icl::build_prompt(base_, demos, n_demos_, modality_);
    return std::make_unique<IclAgent>(clients_(run_seed), std::move(prompt), top_k_);
}

// ---------------------------------------------------------------- protocol

void to_json(json& j, const ProtocolConfig& c) {
    j = json{{"split", evalkit::to_string(c.split)},
             {"mode", evalkit::to_string(c.mode)},
             {"n_runs", c.n_runs},
             {"seed", c.seed},
             {"support_size", c.support_size},
             {"jobs", c.jobs}};
    if (c.thresholds) j["visual_thresholds"] = {c.thresholds->low, c.thresholds->high};
}

std::vector<EvalGroup> eval_groups(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits,
                                   evalkit::SplitName split, std::uint64_t run_seed, int support_size) {
    const bool by_domain = split == evalkit::SplitName::cross_domain;
    std::map<std::string, std::vector<std::string>> members;
    for (const auto& id : splits.tasks(split)) {
        const auto& t = corpus.task(id);
        members[by_domain ? t.domain_id : t.site_id].push_back(id);
    }
    std::map<std::string, std::vector<std::string>> train_by_site;
    if (split == evalkit::SplitName::cross_task) {
        for (const auto& id : splits.train) train_by_site[corpus.task(id).site_id].push_back(id);
    }
    std::vector<EvalGroup> groups;
    for (auto& [group_id, ids] : members) {
        std::sort(ids.begin(), ids.end());
        EvalGroup g;
        g.group_id = group_id;
        Rng rng(derive_seed(run_seed, "support:" + group_id));
        if (split == evalkit::SplitName::cross_task) {
            auto pool = train_by_site[group_id];
            std::sort(pool.begin(), pool.end());
            const auto n = std::min(pool.size(), static_cast<std::size_t>(std::max(support_size, 0)));
            for (auto i : rng.sample(pool.size(), n)) g.support.push_back(pool[i]);
            g.eval = ids;
        } else {
            const auto n = std::min(ids.size() - 1, static_cast<std::size_t>(std::max(support_size, 0)));
            const auto picks = rng.sample(ids.size(), n);
            const std::set<std::size_t> chosen(picks.begin(), picks.end());
            for (auto i : picks) g.support.push_back(ids[i]);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (!chosen.count(i)) g.eval.push_back(ids[i]);
            }
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

evalkit::TaskReport evaluate_task(Agent& agent, const webenv::SiteSpec& site, const webenv::Task& task,
                                  evalkit::SuccessMode mode) {
    const auto gold = webenv::oracle_trajectory(site, task);
    std::vector<evalkit::StepRecord> steps;
    std::vector<webenv::Action> previous;
    for (const auto& g : gold.steps) {
        const AgentContext ctx{site, task, g.state, previous};
        steps.push_back(evalkit::score_step(agent.act(ctx), g.action));
        previous.push_back(g.action);
    }
    auto report = evalkit::make_task_report(task.task_id, std::move(steps));
    if (mode == evalkit::SuccessMode::live) {
        auto state = webenv::reset(site, task);
        std::vector<webenv::Action> taken;
        while (!state.terminated) {
            const AgentContext ctx{site, task, state, taken};
            const auto action = agent.act(ctx);
            if (!action) break;
            try {
                state = webenv::step(state, site, task, *action);
            } catch (const Error&) {
                break;
            }
            taken.push_back(*action);
        }
        report.live_success = state.success;
    }
    return report;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, int jobs, F fn) {
    const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, 64));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

evalkit::AggregateReport run_protocol(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits,
                                      AgentFactory& factory, const ProtocolConfig& config,
                                      const std::string& arm_name) {
    if (config.n_runs < 1) throw Error(ErrorCode::InvalidArgument, "n_runs must be >= 1");
    const auto thresholds = config.thresholds ? *config.thresholds : evalkit::visual_thresholds(corpus);

    evalkit::AggregateReport report;
    report.arm = arm_name;
    report.split = std::string(evalkit::to_string(config.split));
    report.mode = config.mode;
    report.n_runs = config.n_runs;

    std::vector<double> ele, op, step, overall;
    std::vector<evalkit::TaskReport> pooled;
    std::vector<evalkit::DifficultyLabel> pooled_labels;
    std::map<std::string, evalkit::DifficultyLabel> label_cache;

    for (int run = 0; run < config.n_runs; ++run) {
        const auto run_seed = derive_seed(config.seed, "run:" + std::to_string(run));
        const auto groups = eval_groups(corpus, splits, config.split, run_seed, config.support_size);
        std::vector<std::vector<evalkit::TaskReport>> per_group(groups.size());
        parallel_for(groups.size(), config.jobs, [&](std::size_t gi) {
            const auto& g = groups[gi];
            auto agent = factory.make(g.support, run_seed);
            for (const auto& id : g.eval) {
                const auto& task = corpus.task(id);
                per_group[gi].push_back(evaluate_task(*agent, corpus.site_of(task), task, config.mode));
            }
        });
        std::vector<evalkit::TaskReport> reports;
        for (auto& g : per_group) {
            for (auto& r : g) reports.push_back(std::move(r));
        }
        std::sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
        const auto m = evalkit::compute_metrics(reports, config.mode);
        ele.push_back(m.ele_acc);
        op.push_back(m.op_f1);
        step.push_back(m.step_sr);
        overall.push_back(m.overall_sr);

        for (auto& r : reports) {
            auto it = label_cache.find(r.task_id);
            if (it == label_cache.end()) {
                const auto& task = corpus.task(r.task_id);
                const auto& site = corpus.site_of(task);
                const auto c = evalkit::trajectory_complexities(site, webenv::oracle_trajectory(site, task));
                it = label_cache.emplace(r.task_id, evalkit::stratify_difficulty(r.steps.size(), c, thresholds)).first;
            }
            const std::span<const evalkit::TaskReport> one(&r, 1);
            evalkit::TaskRow row;
            row.run = run;
            row.task_id = r.task_id;
            row.steps = r.steps.size();
            row.ele_acc = evalkit::element_accuracy(one);
            row.op_f1 = evalkit::mean_operation_f1(one);
            row.step_sr = evalkit::step_success_rate(one);
            row.overall_success = r.overall_success;
            row.live_success = r.live_success;
            row.difficulty = it->second;
            report.rows.push_back(row);
            pooled_labels.push_back(it->second);
            pooled.push_back(std::move(r));
        }
    }
    report.ele_acc = evalkit::mean_std(ele);
    report.op_f1 = evalkit::mean_std(op);
    report.step_sr = evalkit::mean_std(step);
    report.overall_sr = evalkit::mean_std(overall);

    for (const char* axis : {"sequence", "visual"}) {
        for (auto level : {evalkit::Level::easy, evalkit::Level::medium, evalkit::Level::hard}) {
            std::vector<evalkit::TaskReport> subset;
            for (std::size_t i = 0; i < pooled.size(); ++i) {
                const auto l = std::string(axis) == "sequence" ? pooled_labels[i].sequence : pooled_labels[i].visual;
                if (l == level) subset.push_back(pooled[i]);
            }
            auto& slot = report.strata[axis][std::string(evalkit::to_string(level))];
            if (!subset.empty()) slot = evalkit::compute_metrics(subset, config.mode);
        }
    }
    report.provenance = json{{"protocol", config},
                             {"corpus_digest", hex64(webenv::corpus_digest(corpus))},
                             {"visual_thresholds", {thresholds.low, thresholds.high}}};
    return report;
}

// ---------------------------------------------------------------- arms

void to_json(json& j, const ArmConfig& c) {
    j = json{{"arm", to_string(c.arm)},  {"meta", c.meta},       {"ft_lr", c.ft_lr},   {"ft_epochs", c.ft_epochs},
             {"n_demos", c.n_demos},     {"client", c.client},   {"script", c.script}};
}

policy::PolicyParams train_policy(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits, Arm arm,
                                  const ArmConfig& config, const metatrain::ExampleBank& bank) {
    const auto init = policy::init_params(config.meta.seed, config.meta.hidden);
    const std::set<std::string> train(splits.train.begin(), splits.train.end());
    const auto corpus_train = metatrain::restrict_to(corpus, train);
    switch (arm) {
        case Arm::policy_ft:
            return metatrain::finetune(init, splits.train, bank, config.ft_lr, config.ft_epochs, config.meta.seed).params;
        case Arm::policy_ft_de: {
            const auto plan = metatrain::meta_plan(corpus_train, config.meta);
            return metatrain::finetune(init, metatrain::consumed_tasks(plan), bank, config.ft_lr, config.ft_epochs,
                                       config.meta.seed)
                .params;
        }
        case Arm::policy_fomaml:
        case Arm::policy_fomaml_adapted:
            return metatrain::meta_train(init, corpus_train, bank, config.meta).params;
        default:
            throw Error(ErrorCode::InvalidArgument, std::string(to_string(arm)) + " has no policy to train");
    }
}

PreparedArm prepare_arm(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits, const ArmConfig& config,
                        const metatrain::ExampleBank& bank, std::optional<policy::PolicyParams> params) {
    PreparedArm out;
    out.provenance = json{{"arm_config", config}};
    if (config.arm == Arm::seeact_mock || config.arm == Arm::icl_n_demos) {
        const int n = config.arm == Arm::seeact_mock ? 0 : config.n_demos;
        const auto kind = config.client;
        const auto script = config.script;
        ClientMaker clients = [kind, script](std::uint64_t) -> std::unique_ptr<icl::AgentClient> {
            if (kind == "heuristic") return std::make_unique<icl::HeuristicClient>();
            if (kind == "mock") return std::make_unique<icl::MockClient>(icl::MockClient::from_script_file(script, true));
            if (kind == "http") return std::make_unique<icl::HttpClient>(script);
            throw Error(ErrorCode::InvalidArgument, "unknown client '" + kind + "'");
        };
        out.factory = std::make_unique<IclFactory>(corpus, clients, n, config.meta.modality, metatrain::DemoLibrary{},
                                                   config.meta.top_k);
        return out;
    }
    if (!params) params = train_policy(corpus, splits, config.arm, config, bank);
    out.params = params;
    out.provenance["params_fingerprint"] = hex64(metatrain::fingerprint(*params));
    out.factory = std::make_unique<PolicyFactory>(*params, bank, config.arm == Arm::policy_fomaml_adapted,
                                                  config.meta.alpha, config.meta.inner_steps_per_demo_step);
    return out;
}

}  // namespace adaptagent::protocol
