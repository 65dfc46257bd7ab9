#include <doctest.h>

#include <fstream>

#include "adaptagent/demostore.hpp"
#include "support.hpp"

using namespace adaptagent;

namespace {

const webenv::Corpus& corpus() {
    static const webenv::Corpus c = webenv::generate_corpus(41, 2, 2, 5);
    return c;
}

demostore::TrajectoryRecord oracle_record(const webenv::Task& task) {
    const auto& site = corpus().site_of(task);
    return demostore::make_record(site, task, webenv::oracle_trajectory(site, task), demostore::Annotator::oracle,
                                  "2026-03-01T12:00:00Z");
}

}  // namespace

TEST_CASE("records capture one digest pair per step") {
    const auto& task = *corpus().all_tasks()[3];
    const auto& site = corpus().site_of(task);
    const auto traj = webenv::oracle_trajectory(site, task);
    const auto r = oracle_record(task);
    CHECK(r.task_id == task.task_id);
    CHECK(r.site_id == site.site_id);
    CHECK(r.schema_version == demostore::kSchemaVersion);
    REQUIRE(r.steps.size() == traj.size());
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        const auto obs = demostore::observe(site, task, traj.steps[i].state);
        CHECK(r.steps[i].page_id == traj.steps[i].state.current_page_id);
        CHECK(r.steps[i].layout_digest == demostore::layout_digest(obs.layout));
        CHECK(r.steps[i].candidates_digest == demostore::candidates_digest(obs.candidates));
        CHECK(r.steps[i].layout_digest.size() == 16);
        CHECK(r.steps[i].action == traj.steps[i].action);
    }
}

TEST_CASE("digests react to any change of the observation") {
    const auto& task = *corpus().all_tasks()[0];
    const auto& site = corpus().site_of(task);
    const auto obs = demostore::observe(site, task, webenv::reset(site, task));
    auto moved = obs.layout;
    moved.boxes[0].y += 1;
    CHECK(demostore::layout_digest(moved) != demostore::layout_digest(obs.layout));
    auto rescored = obs.candidates;
    rescored.candidates[0].score += 1e-9;
    CHECK(demostore::candidates_digest(rescored) != demostore::candidates_digest(obs.candidates));
    CHECK(demostore::layout_digest(obs.layout) ==
          demostore::layout_digest(demostore::observe(site, task, webenv::reset(site, task)).layout));
}

TEST_CASE("records survive save and load and replay cleanly") {
    const auto dir = testsupport::temp_dir("demos");
    for (const auto* t : corpus().all_tasks()) {
        const auto r = oracle_record(*t);
        const auto path = (dir / (t->task_id + demostore::kDemoExtension)).string();
        demostore::save(r, path);
        const auto back = demostore::load(path);
        CHECK(back == r);
        const auto v = demostore::validate(back, corpus());
        CHECK_MESSAGE(v.ok, (v.failures.empty() ? "" : v.failures.front()));
        const auto traj = demostore::to_trajectory(back, corpus());
        CHECK(traj == webenv::oracle_trajectory(corpus().site_of(*t), *t));
    }
    CHECK(demostore::parse(demostore::serialize(oracle_record(*corpus().all_tasks()[1]))) ==
          oracle_record(*corpus().all_tasks()[1]));
}

TEST_CASE("validation reports every kind of defect") {
    const auto& task = *corpus().all_tasks()[2];
    const auto good = oracle_record(task);

    auto stale = good;
    stale.steps[0].layout_digest = "0000000000000000";
    const auto v1 = demostore::validate(stale, corpus());
    CHECK_FALSE(v1.ok);
    CHECK_FALSE(v1.failures.empty());

    auto short_record = good;
    short_record.steps.pop_back();
    CHECK_FALSE(demostore::validate(short_record, corpus()).ok);
    CHECK_THROWS_WITH_AS(demostore::to_trajectory(short_record, corpus()), doctest::Contains("ReplayFailure"), Error);

    auto wrong_element = good;
    wrong_element.steps[0].action.element_id = "missing";
    CHECK_FALSE(demostore::validate(wrong_element, corpus()).ok);

    auto unknown = good;
    unknown.task_id = "no_such_task";
    CHECK_FALSE(demostore::validate(unknown, corpus()).ok);

    auto future = good;
    future.schema_version = demostore::kSchemaVersion + 1;
    CHECK_FALSE(demostore::validate(future, corpus()).ok);
}

TEST_CASE("malformed files are rejected") {
    const auto dir = testsupport::temp_dir("demos_bad");
    const auto path = (dir / "x.demo.json").string();
    std::ofstream(path) << "{\"task_id\": 3";
    CHECK_THROWS_AS(demostore::load(path), Error);
    CHECK_THROWS_AS(demostore::load((dir / "absent.demo.json").string()), Error);
    CHECK_THROWS_AS(demostore::parse("{\"task_id\": \"t\"}"), Error);
}

TEST_CASE("observation JSON carries marks and candidates") {
    const auto& task = *corpus().all_tasks()[0];
    const auto& site = corpus().site_of(task);
    const auto obs = demostore::observe(site, task, webenv::reset(site, task), 5);
    const auto j = demostore::observation_json(obs);
    REQUIRE(j.contains("layout"));
    REQUIRE(j.contains("candidates"));
    CHECK(j.at("candidates") == nlohmann::json(obs.candidates));
    CHECK(obs.candidates.candidates.size() <= 5);
    int marks = 0;
    for (const auto& b : obs.layout.boxes) marks += b.mark.has_value();
    CHECK(marks == static_cast<int>(obs.candidates.candidates.size()));
}
