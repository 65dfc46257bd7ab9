#include "adaptagent/metatrain.hpp"

#include <algorithm>
#include <cstring>

#include "adaptagent/text.hpp"

namespace adaptagent::metatrain {

using nlohmann::json;
using policy::PolicyParams;
using policy::StepExample;

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::intra: return "intra";
        case Strategy::inter: return "inter";
        case Strategy::hybrid: return "hybrid";
    }
    return "hybrid";
}

Strategy parse_strategy(std::string_view s) {
    if (s == "intra" || s == "INTRA") return Strategy::intra;
    if (s == "inter" || s == "INTER") return Strategy::inter;
    if (s == "hybrid" || s == "HYBRID") return Strategy::hybrid;
    throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(s) + "'");
}

void MetaConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorCode::InvalidArgument, what);
    };
    require(alpha > 0, "alpha must be > 0");
    require(beta > 0, "beta must be > 0");
    require(inner_steps_per_demo_step >= 1, "inner steps must be >= 1");
    require(meta_batch_size >= 1, "meta batch size must be >= 1");
    require(n_adapt_tasks >= 1, "n_adapt_tasks must be >= 1");
    require(n_eval_tasks >= 1, "n_eval_tasks must be >= 1");
    require(meta_epochs >= 0, "meta_epochs must be >= 0");
    require(hidden >= 1, "hidden must be >= 1");
    require(top_k >= 1, "top_k must be >= 1");
}

void to_json(json& j, const MetaConfig& c) {
    j = json{{"alpha", c.alpha},
             {"beta", c.beta},
             {"inner_steps_per_demo_step", c.inner_steps_per_demo_step},
             {"meta_batch_size", c.meta_batch_size},
             {"strategy", to_string(c.strategy)},
             {"n_adapt_tasks", c.n_adapt_tasks},
             {"n_eval_tasks", c.n_eval_tasks},
             {"meta_epochs", c.meta_epochs},
             {"seed", c.seed},
             {"hidden", c.hidden},
             {"modality", adaptagent::to_string(c.modality)},
             {"top_k", c.top_k}};
}

void from_json(const json& j, MetaConfig& c) {
    MetaConfig d;
    c.alpha = j.value("alpha", d.alpha);
    c.beta = j.value("beta", d.beta);
    c.inner_steps_per_demo_step = j.value("inner_steps_per_demo_step", d.inner_steps_per_demo_step);
    c.meta_batch_size = j.value("meta_batch_size", d.meta_batch_size);
    c.strategy = parse_strategy(j.value("strategy", std::string(to_string(d.strategy))));
    c.n_adapt_tasks = j.value("n_adapt_tasks", d.n_adapt_tasks);
    c.n_eval_tasks = j.value("n_eval_tasks", d.n_eval_tasks);
    c.meta_epochs = j.value("meta_epochs", d.meta_epochs);
    c.seed = j.value("seed", d.seed);
    c.hidden = j.value("hidden", d.hidden);
    c.modality = parse_modality(j.value("modality", std::string("multimodal")));
    c.top_k = j.value("top_k", d.top_k);
}

void to_json(json& j, const TrainingLogRecord& r) {
    j = json{{"epoch", r.epoch},
             {"website_id", r.website_id},
             {"inner_loss_before", r.inner_loss_before},
             {"inner_loss_after", r.inner_loss_after},
             {"meta_loss", r.meta_loss}};
}

// ---------------------------------------------------------------- demos and examples

void DemoLibrary::add_record(const demostore::TrajectoryRecord& record, const webenv::Corpus& corpus) {
    const auto result = demostore::validate(record, corpus);
    if (!result.ok) {
        throw Error(ErrorCode::ReplayFailure, "demo for " + record.task_id + " failed validation: " +
                                                  join(result.failures, "; "));
    }
    recorded_[record.task_id] = demostore::to_trajectory(record, corpus);
}

webenv::Trajectory DemoLibrary::resolve(const webenv::SiteSpec& site, const webenv::Task& task) const {
    if (auto it = recorded_.find(task.task_id); it != recorded_.end()) return it->second;
    return webenv::oracle_trajectory(site, task);
}

ExampleBank::ExampleBank(const webenv::Corpus& corpus, Modality modality, int top_k, DemoLibrary demos)
    : corpus_(corpus), modality_(modality), top_k_(top_k), demos_(std::move(demos)) {}

const std::vector<StepExample>& ExampleBank::examples(const std::string& task_id) const {
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(task_id); it != cache_.end()) return it->second;
    }
    const auto& task = corpus_.task(task_id);
    const auto& site = corpus_.site_of(task);
    auto built = policy::make_examples(site, task, demos_.resolve(site, task), modality_, top_k_);
    std::lock_guard lock(mutex_);
    return cache_.emplace(task_id, std::move(built)).first->second;
}

std::vector<StepExample> ExampleBank::gather(const std::vector<std::string>& task_ids) const {
    std::vector<StepExample> out;
    for (const auto& id : task_ids) {
        const auto& ex = examples(id);
        out.insert(out.end(), ex.begin(), ex.end());
    }
    return out;
}

std::uint64_t fingerprint(const PolicyParams& params) {
    const auto flat = params.tensors.flatten();
    std::string bytes(flat.size() * sizeof(double), '\0');
    std::memcpy(bytes.data(), flat.data(), bytes.size());
    return fnv1a64(bytes);
}

// ---------------------------------------------------------------- task selection

std::vector<std::string> training_websites(const webenv::Corpus& corpus) {
    std::vector<std::string> out;
    for (const auto& d : corpus.domains) {
        for (const auto& s : d.sites) {
            if (!s.tasks.empty()) out.push_back(s.site_id);
        }
    }
    return out;
}

namespace {

std::vector<std::string> pick(Rng& rng, std::vector<std::string> pool, std::size_t k) {
    std::vector<std::string> out;
    for (auto i : rng.sample(pool.size(), k)) out.push_back(pool[i]);
    return out;
}

std::vector<std::string> task_ids_of(const webenv::SiteSpec& site) {
    std::vector<std::string> ids;
    for (const auto& t : site.tasks) ids.push_back(t.task_id);
    return ids;
}

}  // namespace

TaskBatch select_tasks(const webenv::Corpus& corpus, const std::string& website_id, Strategy strategy,
                       std::uint64_t seed, int n_adapt, int n_eval) {
    const auto& site = corpus.site(website_id);
    const auto n_a = static_cast<std::size_t>(n_adapt);
    const auto n_e = static_cast<std::size_t>(n_eval);
    const std::size_t own_eval = strategy == Strategy::intra ? n_e : (strategy == Strategy::hybrid ? n_e / 2 : 0);
    const std::size_t peer_eval = n_e - own_eval;

    auto own = task_ids_of(site);
    if (own.size() < n_a + own_eval) {
        throw Error(ErrorCode::InsufficientTasks, website_id + " has " + std::to_string(own.size()) +
                                                      " tasks, needs " + std::to_string(n_a + own_eval));
    }
    std::vector<const webenv::SiteSpec*> peers;
    if (peer_eval > 0) {
        for (const auto& d : corpus.domains) {
            if (d.domain_id != site.domain_id) continue;
            for (const auto& s : d.sites) {
                if (s.site_id != website_id && s.tasks.size() >= peer_eval) peers.push_back(&s);
            }
        }
        if (peers.empty()) throw Error(ErrorCode::NoPeerWebsite, website_id + " has no peer website in its domain");
    }

    Rng rng(seed);
    TaskBatch batch;
    batch.website_id = website_id;
    batch.provenance = strategy;
    const auto order = rng.sample(own.size(), own.size());
    for (std::size_t i = 0; i < n_a; ++i) batch.d_train.push_back(own[order[i]]);
    for (std::size_t i = 0; i < own_eval; ++i) batch.d_test.push_back(own[order[n_a + i]]);
    if (peer_eval > 0) {
        const auto& peer = *peers[rng.below(peers.size())];
        auto chosen = pick(rng, task_ids_of(peer), peer_eval);
        batch.d_test.insert(batch.d_test.end(), chosen.begin(), chosen.end());
    }
    return batch;
}

std::vector<TaskBatch> meta_plan(const webenv::Corpus& corpus, const MetaConfig& config) {
    std::vector<TaskBatch> plan;
    for (const auto& w : training_websites(corpus)) {
        plan.push_back(select_tasks(corpus, w, config.strategy, derive_seed(config.seed, "plan:" + w),
                                    config.n_adapt_tasks, config.n_eval_tasks));
    }
    return plan;
}

std::vector<std::string> consumed_tasks(const std::vector<TaskBatch>& plan) {
    std::vector<std::string> out;
    for (const auto& b : plan) {
        out.insert(out.end(), b.d_train.begin(), b.d_train.end());
        out.insert(out.end(), b.d_test.begin(), b.d_test.end());
    }
    return out;
}

// ---------------------------------------------------------------- training

PolicyParams inner_adapt(const PolicyParams& params, const std::vector<std::string>& d_train, const ExampleBank& bank,
                         double alpha, int steps_per_demo_step) {
    if (d_train.empty()) throw Error(ErrorCode::MissingDemonstration, "d_train is empty");
    const auto examples = bank.gather(d_train);
    return fomaml::adapt(PolicyLearner{}, params, std::span<const StepExample>(examples), alpha, steps_per_demo_step);
}

namespace {

PolicyParams meta_step_impl(const PolicyParams& params, const std::vector<TaskBatch>& batches, const ExampleBank& bank,
                            const MetaConfig& config, const GradientTrace& trace, std::size_t step_index,
                            std::vector<TrainingLogRecord>* log, int epoch) {
    std::vector<fomaml::MetaTask<StepExample>> tasks;
    for (const auto& b : batches) tasks.push_back({bank.gather(b.d_train), bank.gather(b.d_test)});

    const auto theta_fp = trace ? fingerprint(params) : 0;
    std::size_t outer_seen = 0;
    fomaml::GradientObserver<PolicyLearner> observer =
        [&](fomaml::Phase phase, const PolicyParams& at, std::span<const StepExample> examples) {
            if (trace) {
                GradientEvent ev;
                ev.phase = phase;
                ev.meta_step = step_index;
                ev.params_fingerprint = fingerprint(at);
                ev.theta_fingerprint = theta_fp;
                for (const auto& e : examples) ev.task_ids.insert(e.task_id);
                trace(ev);
            }
            if (phase == fomaml::Phase::outer && log) {
                const auto& task = tasks[outer_seen];
                TrainingLogRecord r;
                r.epoch = epoch;
                r.website_id = batches[outer_seen].website_id;
                r.inner_loss_before = policy::mean_loss(params, task.train);
                r.inner_loss_after = policy::mean_loss(at, task.train);
                r.meta_loss = policy::mean_loss(at, examples);
                log->push_back(r);
            }
            if (phase == fomaml::Phase::outer) ++outer_seen;
        };
    const bool observe = static_cast<bool>(trace) || log != nullptr;
    return fomaml::meta_step(PolicyLearner{}, params, std::span<const fomaml::MetaTask<StepExample>>(tasks),
                             config.alpha, config.beta, config.inner_steps_per_demo_step,
                             observe ? &observer : nullptr);
}

}  // namespace

PolicyParams fomaml_meta_step(const PolicyParams& params, const std::vector<TaskBatch>& batches, const ExampleBank& bank,
                              const MetaConfig& config, const GradientTrace& trace, std::size_t meta_step_index) {
    return meta_step_impl(params, batches, bank, config, trace, meta_step_index, nullptr, 0);
}

MetaTrainResult meta_train(const webenv::Corpus& corpus_train, const MetaConfig& config, const DemoLibrary& demos,
                           const GradientTrace& trace) {
    config.validate();
    ExampleBank bank(corpus_train, config.modality, config.top_k, demos);
    return meta_train(policy::init_params(config.seed, config.hidden), corpus_train, bank, config, trace);
}

MetaTrainResult meta_train(const PolicyParams& init, const webenv::Corpus& corpus_train, const ExampleBank& bank,
                           const MetaConfig& config, const GradientTrace& trace) {
    config.validate();
    MetaTrainResult result;
    result.params = init;
    result.plan = meta_plan(corpus_train, config);
    std::size_t step_index = 0;
    for (int epoch = 0; epoch < config.meta_epochs; ++epoch) {
        std::vector<std::size_t> order(result.plan.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(config.seed, "epoch:" + std::to_string(epoch)));
        rng.shuffle(order);

        const auto log_start = result.log.size();
        const auto chunk = static_cast<std::size_t>(config.meta_batch_size);
        for (std::size_t start = 0; start < order.size(); start += chunk) {
            std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + chunk)));
            // Ascending website order inside a meta batch keeps the gradient sum bit-stable.
            std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
                return result.plan[a].website_id < result.plan[b].website_id;
            });
            std::vector<TaskBatch> batches;
            for (auto m : members) batches.push_back(result.plan[m]);
            result.params = meta_step_impl(result.params, batches, bank, config, trace, step_index++, &result.log, epoch);
        }
        double total = 0;
        for (std::size_t i = log_start; i < result.log.size(); ++i) total += result.log[i].meta_loss;
        const auto n = result.log.size() - log_start;
        result.epoch_meta_loss.push_back(n ? total / static_cast<double>(n) : 0.0);
    }
    return result;
}

FinetuneResult finetune(const PolicyParams& params, const std::vector<std::string>& task_ids, const ExampleBank& bank,
                        double lr, int epochs, std::uint64_t seed) {
    if (task_ids.empty()) throw Error(ErrorCode::EmptyBatch, "finetune needs at least one task");
    if (epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 0");
    std::vector<const StepExample*> pool;
    for (const auto& id : task_ids) {
        for (const auto& ex : bank.examples(id)) pool.push_back(&ex);
    }
    FinetuneResult result;
    result.params = params;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(derive_seed(seed, "finetune:" + std::to_string(epoch)));
        rng.shuffle(pool);
        for (const auto* ex : pool) {
            result.params = policy::apply_update(result.params, policy::grad(result.params, std::span(ex, 1)), lr);
        }
        double total = 0;
        for (const auto* ex : pool) total += policy::loss(result.params, *ex);
        result.epoch_loss.push_back(total / static_cast<double>(pool.size()));
    }
    return result;
}

PolicyParams adapt_to_target(const PolicyParams& theta_star, const std::vector<std::string>& target_task_ids,
                             const ExampleBank& bank, double alpha, int steps_per_demo_step) {
    if (target_task_ids.empty()) throw Error(ErrorCode::MissingDemonstration, "no target tasks");
    std::set<std::string> domains;
    for (const auto& id : target_task_ids) domains.insert(bank.corpus().task(id).domain_id);
    if (domains.size() != 1) {
        throw Error(ErrorCode::PreconditionFailed, "adaptation tasks span " + std::to_string(domains.size()) + " domains");
    }
    return inner_adapt(theta_star, target_task_ids, bank, alpha, steps_per_demo_step);
}

webenv::Corpus restrict_to(const webenv::Corpus& corpus, const std::set<std::string>& task_ids) {
    webenv::Corpus out;
    out.seed = corpus.seed;
    for (const auto& d : corpus.domains) {
        webenv::Domain nd{d.domain_id, {}};
        for (const auto& s : d.sites) {
            auto ns = s;
            ns.tasks.clear();
            for (const auto& t : s.tasks) {
                if (task_ids.count(t.task_id)) ns.tasks.push_back(t);
            }
            if (!ns.tasks.empty()) nd.sites.push_back(std::move(ns));
        }
        if (!nd.sites.empty()) out.domains.push_back(std::move(nd));
    }
    return out;
}

}  // namespace adaptagent::metatrain
