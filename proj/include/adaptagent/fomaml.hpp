#pragma once

// First-order model-agnostic meta-learning, independent of the model.
//
// A learner supplies three operations on its own parameter, example and
// gradient types:
//   gradient(params, batch)  -> gradient of the mean loss over `batch`
//   update(params, g, lr)    -> params - lr * g
//   accumulate(g1, g2)       -> g1 + g2
//
// The inner loop walks the demonstration steps in order and takes
// `steps_per_demo_step` plain gradient steps on each. The outer update uses
// gradients taken at the adapted parameters on held-out examples and drops
// the second-order term: theta <- theta - beta * sum_i grad L_test_i(theta_i).

#include <concepts>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "adaptagent/common.hpp"

namespace adaptagent::fomaml {

template <class L>
concept FirstOrderLearner =
    requires(const L& learner, const typename L::params_type& params,
             std::span<const typename L::example_type> batch, const typename L::gradient_type& g, double lr) {
        { learner.gradient(params, batch) } -> std::same_as<typename L::gradient_type>;
        { learner.update(params, g, lr) } -> std::same_as<typename L::params_type>;
        { learner.accumulate(g, g) } -> std::same_as<typename L::gradient_type>;
    };

enum class Phase { inner, outer };

template <class L>
using GradientObserver =
    std::function<void(Phase, const typename L::params_type&, std::span<const typename L::example_type>)>;

template <class Example>
struct MetaTask {
    std::vector<Example> train;  // demonstration steps, in order
    std::vector<Example> test;   // held-out steps scored after adaptation
};

template <FirstOrderLearner L>
typename L::params_type adapt(const L& learner, typename L::params_type params,
                              std::span<const typename L::example_type> demo_steps, double alpha,
                              int steps_per_demo_step, const GradientObserver<L>* observer = nullptr) {
    if (demo_steps.empty()) throw Error(ErrorCode::MissingDemonstration, "no demonstration steps to adapt on");
    if (steps_per_demo_step < 1) throw Error(ErrorCode::InvalidArgument, "steps_per_demo_step must be >= 1");
    for (std::size_t i = 0; i < demo_steps.size(); ++i) {
        const auto one = demo_steps.subspan(i, 1);
        for (int k = 0; k < steps_per_demo_step; ++k) {
            if (observer && *observer) (*observer)(Phase::inner, params, one);
            params = learner.update(params, learner.gradient(params, one), alpha);
        }
    }
    return params;
}

template <FirstOrderLearner L>
typename L::params_type meta_step(const L& learner, const typename L::params_type& params,
                                  std::span<const MetaTask<typename L::example_type>> tasks, double alpha,
                                  double beta, int steps_per_demo_step,
                                  const GradientObserver<L>* observer = nullptr) {
    if (tasks.empty()) throw Error(ErrorCode::EmptyBatch, "meta step needs at least one task");
    std::optional<typename L::gradient_type> total;
    for (const auto& task : tasks) {
        if (task.test.empty()) throw Error(ErrorCode::EmptyBatch, "meta task has no held-out examples");
        const auto adapted = adapt(learner, params, std::span(task.train), alpha, steps_per_demo_step, observer);
        const std::span<const typename L::example_type> held_out(task.test);
        if (observer && *observer) (*observer)(Phase::outer, adapted, held_out);
        auto g = learner.gradient(adapted, held_out);
        total = total ? learner.accumulate(*total, g) : std::move(g);
    }
    return learner.update(params, *total, beta);
}

}  // namespace adaptagent::fomaml
