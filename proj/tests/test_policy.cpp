#include <doctest.h>

#include "adaptagent/metatrain.hpp"
#include "adaptagent/policy.hpp"
#include "support.hpp"

using namespace adaptagent;

namespace {

const webenv::Corpus& corpus() {
    static const webenv::Corpus c = webenv::generate_corpus(11, 2, 3, 6);
    return c;
}

const metatrain::ExampleBank& bank() {
    static const metatrain::ExampleBank b(corpus(), Modality::multimodal);
    return b;
}

std::vector<policy::StepExample> examples_with_values() {
    std::vector<policy::StepExample> out;
    for (const auto* t : corpus().all_tasks()) {
        for (const auto& ex : bank().examples(t->task_id)) {
            if (ex.gold_value && out.size() < 3) out.push_back(ex);
        }
    }
    const auto& first = bank().examples(corpus().domains[0].sites[0].tasks[0].task_id);
    out.push_back(first.front());
    return out;
}

}  // namespace

TEST_CASE("init_params draws entries in (-0.05, 0.05) reproducibly") {
    const auto a = policy::init_params(5, 8);
    CHECK(a == policy::init_params(5, 8));
    CHECK_FALSE(a == policy::init_params(6, 8));
    CHECK(a.tensors.input_dims() == static_cast<int>(policy::kInputDims));
    CHECK(a.tensors.hidden_dims() == 8);
    for (double v : a.tensors.flatten()) {
        CHECK(v > -0.05);
        CHECK(v < 0.05);
    }
    CHECK_THROWS_AS(policy::init_params(1, 0), Error);
}

TEST_CASE("examples carry gold indices that the observation resolves") {
    for (const auto* t : corpus().all_tasks()) {
        const auto& site = corpus().site_of(*t);
        const auto traj = webenv::oracle_trajectory(site, *t);
        const auto& exs = bank().examples(t->task_id);
        REQUIRE(exs.size() == traj.size());
        for (std::size_t i = 0; i < exs.size(); ++i) {
            const auto& ex = exs[i];
            REQUIRE(ex.gold_element < ex.input.size());
            CHECK(ex.input.info[ex.gold_element].element_id == traj.steps[i].action.element_id);
            CHECK(ex.gold_operation == traj.steps[i].action.operation);
            if (traj.steps[i].action.value) {
                REQUIRE(ex.gold_value.has_value());
                CHECK(ex.spans.texts[*ex.gold_value] == *traj.steps[i].action.value);
            } else {
                CHECK_FALSE(ex.gold_value.has_value());
            }
            CHECK(ex.input.candidates.cols() == static_cast<int>(policy::kCandidateDims));
        }
    }
}

TEST_CASE("forward yields distributions and a finite loss") {
    const auto params = testsupport::spread_params(3, 8);
    for (const auto& ex : examples_with_values()) {
        const auto d = policy::forward(params, ex);
        CHECK(d.element.sum() == doctest::Approx(1.0));
        CHECK(d.operation.sum() == doctest::Approx(1.0));
        if (ex.gold_value) CHECK(d.value.sum() == doctest::Approx(1.0));
        CHECK(std::isfinite(policy::loss(params, ex)));
        CHECK(policy::loss(params, ex) > 0);
    }
    CHECK_THROWS_AS(policy::grad(params, std::span<const policy::StepExample>{}), Error);
}

TEST_CASE("analytic gradient matches central differences") {
    const auto params = testsupport::spread_params(4, 6);
    const auto batch = examples_with_values();
    const auto analytic = policy::grad(params, batch).tensors.flatten();
    const auto numeric = testsupport::fd_gradient(params, batch, 1e-5);
    CHECK(testsupport::relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("gradient steps reduce the loss on their batch") {
    auto params = policy::init_params(9, 16);
    const auto batch = examples_with_values();
    const double before = policy::mean_loss(params, batch);
    for (int i = 0; i < 20; ++i) params = policy::apply_update(params, policy::grad(params, batch), 0.1);
    CHECK(policy::mean_loss(params, batch) < before);
}

TEST_CASE("predict returns an action the element allows") {
    const auto params = testsupport::spread_params(2, 8);
    for (const auto& ex : examples_with_values()) {
        const auto p = policy::predict(params, ex.input);
        REQUIRE(p.element_index < ex.input.size());
        const auto& info = ex.input.info[p.element_index];
        CHECK(p.action.element_id == info.element_id);
        CHECK(operation_allowed(info.tag, p.action.operation));
        CHECK(p.action.value.has_value() == operation_takes_value(p.action.operation));
    }
}

TEST_CASE("text-only observations zero the layout features") {
    const auto* t = corpus().all_tasks().front();
    const auto& site = corpus().site_of(*t);
    const auto state = webenv::reset(site, *t);
    const auto text = policy::observe(site, t->instruction, state, Modality::text_only);
    const auto mm = policy::observe(site, t->instruction, state, Modality::multimodal);
    REQUIRE(text.size() == mm.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        for (std::size_t k = 0; k < layout::kLayoutFeatureDims; ++k) {
            CHECK(text.candidates(static_cast<int>(i), static_cast<int>(domkit::kElementFeatureDims + k)) == 0.0);
        }
    }
    CHECK(mm.candidates.rightCols(layout::kLayoutFeatureDims).cwiseAbs().sum() > 0);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    const auto params = testsupport::spread_params(8, 5);
    const auto bytes = policy::encode_checkpoint(params);
    CHECK(policy::decode_checkpoint(bytes) == params);
    const auto dir = testsupport::temp_dir("ckpt");
    const auto path = (dir / "p.ckpt").string();
    policy::save_checkpoint(params, path);
    CHECK(policy::load_checkpoint(path) == params);
    CHECK_THROWS_AS(policy::decode_checkpoint("garbage"), Error);
    CHECK_THROWS_AS(policy::decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
}
