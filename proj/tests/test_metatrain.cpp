#include <doctest.h>

#include <random>

#include "adaptagent/fomaml.hpp"
#include "adaptagent/metatrain.hpp"
#include "support.hpp"

using namespace adaptagent;
using metatrain::Strategy;

namespace {

const webenv::Corpus& corpus() {
    static const webenv::Corpus c = webenv::generate_corpus(21, 2, 3, 6);
    return c;
}

const metatrain::ExampleBank& bank() {
    static const metatrain::ExampleBank b(corpus(), Modality::multimodal);
    return b;
}

std::string site_of_task(const std::string& task_id) { return corpus().task(task_id).site_id; }
std::string domain_of_task(const std::string& task_id) { return corpus().task(task_id).domain_id; }

metatrain::MetaConfig small_config() {
    metatrain::MetaConfig c;
    c.hidden = 8;
    c.meta_epochs = 3;
    return c;
}

}  // namespace

TEST_CASE("generic first-order step on the quadratic probe") {
    const testsupport::QuadraticLearner learner;
    std::vector<fomaml::MetaTask<double>> tasks{{{1.0}, {1.0}}, {{-2.0}, {-2.0}}};
    const double theta = 0.5, alpha = 0.3, beta = 0.1;
    double expected = theta;
    for (double c : {1.0, -2.0}) expected -= beta * (1 - alpha) * (theta - c);
    CHECK(fomaml::meta_step(learner, theta, std::span<const fomaml::MetaTask<double>>(tasks), alpha, beta, 1) ==
          doctest::Approx(expected).epsilon(1e-12));

    std::vector<double> none;
    CHECK_THROWS_AS(fomaml::adapt(learner, theta, std::span<const double>(none), alpha, 1), Error);
    CHECK_THROWS_AS(fomaml::meta_step(learner, theta, std::span<const fomaml::MetaTask<double>>{}, alpha, beta, 1),
                    Error);
}

TEST_CASE("config validation and strategy names") {
    CHECK_NOTHROW(metatrain::MetaConfig{}.validate());
    auto bad = metatrain::MetaConfig{};
    bad.alpha = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = {};
    bad.inner_steps_per_demo_step = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK(metatrain::parse_strategy("INTRA") == Strategy::intra);
    CHECK(metatrain::parse_strategy("hybrid") == Strategy::hybrid);
    CHECK_THROWS_AS(metatrain::parse_strategy("bogus"), Error);
    const auto c = small_config();
    CHECK(nlohmann::json(c).get<metatrain::MetaConfig>().hidden == c.hidden);
}

TEST_CASE("task selection honours each strategy") {
    for (const auto& d : corpus().domains) {
        for (const auto& s : d.sites) {
            for (auto strategy : {Strategy::intra, Strategy::inter, Strategy::hybrid}) {
                const auto b = metatrain::select_tasks(corpus(), s.site_id, strategy, 3, 2, 2);
                CHECK(b.provenance == strategy);
                REQUIRE(b.d_train.size() == 2);
                REQUIRE(b.d_test.size() == 2);
                for (const auto& t : b.d_train) CHECK(site_of_task(t) == s.site_id);
                for (const auto& t : b.d_test) {
                    CHECK(domain_of_task(t) == s.domain_id);
                    CHECK(std::find(b.d_train.begin(), b.d_train.end(), t) == b.d_train.end());
                }
                const auto own = std::count_if(b.d_test.begin(), b.d_test.end(),
                                               [&](const std::string& t) { return site_of_task(t) == s.site_id; });
                if (strategy == Strategy::intra) CHECK(own == 2);
                if (strategy == Strategy::inter) CHECK(own == 0);
                if (strategy == Strategy::hybrid) CHECK(own == 1);
                if (strategy != Strategy::intra) {
                    std::set<std::string> peers;
                    for (const auto& t : b.d_test) {
                        if (site_of_task(t) != s.site_id) peers.insert(site_of_task(t));
                    }
                    CHECK(peers.size() == 1);
                }
                CHECK(b == metatrain::select_tasks(corpus(), s.site_id, strategy, 3, 2, 2));
            }
        }
    }
}

TEST_CASE("task selection errors") {
    const auto& site = corpus().domains[0].sites[0];
    CHECK_THROWS_WITH_AS(metatrain::select_tasks(corpus(), site.site_id, Strategy::intra, 0, 5, 2),
                         doctest::Contains("InsufficientTasks"), Error);
    const auto lonely = metatrain::restrict_to(corpus(), {site.tasks[0].task_id, site.tasks[1].task_id,
                                                          site.tasks[2].task_id, site.tasks[3].task_id});
    CHECK_THROWS_WITH_AS(metatrain::select_tasks(lonely, site.site_id, Strategy::inter, 0, 2, 2),
                         doctest::Contains("NoPeerWebsite"), Error);
    CHECK_NOTHROW(metatrain::select_tasks(lonely, site.site_id, Strategy::intra, 0, 2, 2));
}

TEST_CASE("the plan has one fixed batch per training website") {
    const auto config = small_config();
    const auto plan = metatrain::meta_plan(corpus(), config);
    CHECK(plan.size() == corpus().site_count());
    CHECK(plan == metatrain::meta_plan(corpus(), config));
    const auto consumed = metatrain::consumed_tasks(plan);
    CHECK(consumed.size() == plan.size() * 4);
    CHECK(consumed[0] == plan[0].d_train[0]);
    CHECK(consumed[2] == plan[0].d_test[0]);
}

TEST_CASE("outer gradients are taken at adapted parameters on held-out tasks") {
    const auto config = small_config();
    const auto plan = metatrain::meta_plan(corpus(), config);
    const auto theta = policy::init_params(1, config.hidden);
    std::vector<metatrain::GradientEvent> events;
    const auto next = metatrain::fomaml_meta_step(theta, {plan[0]}, bank(), config,
                                                  [&](const metatrain::GradientEvent& e) { events.push_back(e); }, 7);
    REQUIRE(events.size() >= 2);
    const auto theta_fp = metatrain::fingerprint(theta);
    CHECK(events.front().phase == fomaml::Phase::inner);
    CHECK(events.front().params_fingerprint == theta_fp);
    const auto& outer = events.back();
    CHECK(outer.phase == fomaml::Phase::outer);
    CHECK(outer.meta_step == 7);
    CHECK(outer.theta_fingerprint == theta_fp);
    CHECK(outer.params_fingerprint != theta_fp);
    CHECK(outer.task_ids == std::set<std::string>(plan[0].d_test.begin(), plan[0].d_test.end()));
    std::size_t inner_steps = 0;
    for (const auto& e : events) {
        if (e.phase != fomaml::Phase::inner) continue;
        ++inner_steps;
        for (const auto& t : e.task_ids) {
            CHECK(std::find(plan[0].d_train.begin(), plan[0].d_train.end(), t) != plan[0].d_train.end());
        }
    }
    CHECK(inner_steps == bank().gather(plan[0].d_train).size());

    // the update equals theta - beta * grad at the adapted parameters
    const auto adapted = metatrain::inner_adapt(theta, plan[0].d_train, bank(), config.alpha, 1);
    const auto g = policy::grad(adapted, bank().gather(plan[0].d_test));
    CHECK(policy::apply_update(theta, g, config.beta) == next);
}

TEST_CASE("meta-training is deterministic and lowers the held-out loss") {
    const auto config = small_config();
    const auto a = metatrain::meta_train(corpus(), config);
    const auto b = metatrain::meta_train(corpus(), config);
    CHECK(a.params == b.params);
    REQUIRE(a.epoch_meta_loss.size() == 3);
    CHECK(a.epoch_meta_loss.back() < a.epoch_meta_loss.front());
    CHECK(a.log.size() == 3 * a.plan.size());
    for (const auto& r : a.log) CHECK(std::isfinite(r.meta_loss));
}

TEST_CASE("fine-tuning lowers the training loss") {
    std::vector<std::string> ids;
    for (const auto& t : corpus().domains[0].sites[0].tasks) ids.push_back(t.task_id);
    const auto init = policy::init_params(2, 8);
    const auto r = metatrain::finetune(init, ids, bank(), 0.05, 4, 1);
    REQUIRE(r.epoch_loss.size() == 4);
    CHECK(r.epoch_loss.back() < policy::mean_loss(init, bank().gather(ids)));
    CHECK(r.params == metatrain::finetune(init, ids, bank(), 0.05, 4, 1).params);
}

TEST_CASE("adaptation requires one target domain") {
    const auto init = policy::init_params(2, 8);
    const auto& d0 = corpus().domains[0].sites[0].tasks[0].task_id;
    const auto& d1 = corpus().domains[1].sites[0].tasks[0].task_id;
    CHECK_THROWS_WITH_AS(metatrain::adapt_to_target(init, {d0, d1}, bank(), 0.05, 1),
                         doctest::Contains("PreconditionFailed"), Error);
    const auto adapted = metatrain::adapt_to_target(init, {d0}, bank(), 0.05, 1);
    CHECK(policy::mean_loss(adapted, bank().examples(d0)) < policy::mean_loss(init, bank().examples(d0)));
}

TEST_CASE("restrict_to keeps only the listed tasks") {
    const auto& s = corpus().domains[1].sites[2];
    const auto r = metatrain::restrict_to(corpus(), {s.tasks[0].task_id, s.tasks[3].task_id});
    CHECK(r.domains.size() == 1);
    CHECK(r.site_count() == 1);
    CHECK(r.all_tasks().size() == 2);
    CHECK(metatrain::training_websites(r) == std::vector<std::string>{s.site_id});
}

TEST_CASE("recorded demonstrations replace oracle ones after validation") {
    const auto& site = corpus().domains[0].sites[1];
    const auto& task = site.tasks[2];
    auto traj = webenv::oracle_trajectory(site, task);
    auto record = demostore::make_record(site, task, traj, demostore::Annotator::human, "2026-01-01T00:00:00Z");
    metatrain::DemoLibrary lib;
    lib.add_record(record, corpus());
    CHECK(lib.has_recorded(task.task_id));
    CHECK(lib.resolve(site, task) == traj);

    record.steps.pop_back();
    metatrain::DemoLibrary other;
    CHECK_THROWS_WITH_AS(other.add_record(record, corpus()), doctest::Contains("ReplayFailure"), Error);
    CHECK_FALSE(other.has_recorded(task.task_id));
}
