#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptagent/evalkit.hpp"
#include "adaptagent/icl.hpp"
#include "adaptagent/metatrain.hpp"
#include "adaptagent/policy.hpp"
#include "adaptagent/text.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::protocol {

enum class Arm { seeact_mock, policy_ft, policy_ft_de, policy_fomaml, policy_fomaml_adapted, icl_n_demos };
std::string_view to_string(Arm arm);
Arm parse_arm(std::string_view s);

struct AgentContext {
    const webenv::SiteSpec& site;
    const webenv::Task& task;
    const webenv::EnvState& state;
    const std::vector<webenv::Action>& previous;
};

class Agent {
public:
    virtual ~Agent() = default;
    // nullopt when the agent has no usable answer.
    virtual std::optional<webenv::Action> act(const AgentContext& ctx) = 0;
};

// Builds the agent for one adaptation group, given the group's support tasks
// (the demonstrations it may learn from). Must be callable from several
// threads at once.
class AgentFactory {
public:
    virtual ~AgentFactory() = default;
    virtual std::unique_ptr<Agent> make(const std::vector<std::string>& support, std::uint64_t run_seed) = 0;
};

class PolicyAgent : public Agent {
public:
    PolicyAgent(policy::PolicyParams params, Modality modality, int top_k = domkit::kDefaultTopK);
    std::optional<webenv::Action> act(const AgentContext& ctx) override;

private:
    policy::PolicyParams params_;
    Modality modality_;
    int top_k_;
};

class IclAgent : public Agent {
public:
    IclAgent(std::unique_ptr<icl::AgentClient> client, icl::PromptBundle prompt, int top_k = domkit::kDefaultTopK);
    std::optional<webenv::Action> act(const AgentContext& ctx) override;

private:
    std::unique_ptr<icl::AgentClient> client_;
    icl::PromptBundle prompt_;
    int top_k_;
};

// Follows the oracle trajectory; an upper bound for the harness.
class OracleAgent : public Agent {
public:
    std::optional<webenv::Action> act(const AgentContext& ctx) override;
};

// Uniform over the page's elements, the operations their tags allow and
// the instruction's words as values.
class RandomAgent : public Agent {
public:
    explicit RandomAgent(std::uint64_t seed) : rng_(seed) {}
    std::optional<webenv::Action> act(const AgentContext& ctx) override;

private:
    Rng rng_;
};

class LambdaFactory : public AgentFactory {
public:
    using Fn = std::function<std::unique_ptr<Agent>(const std::vector<std::string>&, std::uint64_t)>;
    explicit LambdaFactory(Fn fn) : fn_(std::move(fn)) {}
    std::unique_ptr<Agent> make(const std::vector<std::string>& support, std::uint64_t run_seed) override {
        return fn_(support, run_seed);
    }

private:
    Fn fn_;
};

// Policy parameters, optionally adapted on the support tasks with the
// inner-loop procedure before evaluation.
class PolicyFactory : public AgentFactory {
public:
    PolicyFactory(policy::PolicyParams params, const metatrain::ExampleBank& bank, bool adapt, double alpha,
                  int steps_per_demo_step);
    std::unique_ptr<Agent> make(const std::vector<std::string>& support, std::uint64_t run_seed) override;

private:
    policy::PolicyParams params_;
    const metatrain::ExampleBank& bank_;
    bool adapt_;
    double alpha_;
    int steps_;
};

using ClientMaker = std::function<std::unique_ptr<icl::AgentClient>(std::uint64_t run_seed)>;

// Prompts built from the first `n_demos` support tasks.
class IclFactory : public AgentFactory {
public:
    IclFactory(const webenv::Corpus& corpus, ClientMaker clients, int n_demos, Modality modality,
               metatrain::DemoLibrary demos = {}, int top_k = domkit::kDefaultTopK,
               std::string base = icl::kBasePrompt);
    std::unique_ptr<Agent> make(const std::vector<std::string>& support, std::uint64_t run_seed) override;

private:
    const webenv::Corpus& corpus_;
    ClientMaker clients_;
    int n_demos_;
    Modality modality_;
    metatrain::DemoLibrary demos_;
    int top_k_;
    std::string base_;
};

struct ProtocolConfig {
    evalkit::SplitName split = evalkit::SplitName::cross_website;
    evalkit::SuccessMode mode = evalkit::SuccessMode::trajectory;
    int n_runs = 5;
    std::uint64_t seed = 0;
    // Support tasks drawn per adaptation group and removed from its evaluation set.
    int support_size = 2;
    int jobs = 1;
    std::optional<evalkit::VisualThresholds> thresholds;
};

void to_json(nlohmann::json& j, const ProtocolConfig& c);

// Adaptation groups: one per website for cross-website and cross-task, one
// per domain for cross-domain. Cross-task support comes from the website's
// training tasks, so every cross-task task is evaluated.
struct EvalGroup {
    std::string group_id;
    std::vector<std::string> support;
    std::vector<std::string> eval;
};

std::vector<EvalGroup> eval_groups(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits,
                                   evalkit::SplitName split, std::uint64_t run_seed, int support_size);

evalkit::TaskReport evaluate_task(Agent& agent, const webenv::SiteSpec& site, const webenv::Task& task,
                                  evalkit::SuccessMode mode);

// Runs every evaluation task of the split for n_runs selection seeds and
// aggregates mean and population std of the four metrics.
evalkit::AggregateReport run_protocol(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits,
                                      AgentFactory& factory, const ProtocolConfig& config,
                                      const std::string& arm_name);

// ---------------------------------------------------------------- arms

struct ArmConfig {
    Arm arm = Arm::policy_fomaml_adapted;
    metatrain::MetaConfig meta;
    double ft_lr = 0.05;
    int ft_epochs = 30;
    int n_demos = 1;
    std::string client = "heuristic";  // mock, heuristic or http
    std::string script;                // mock script file or http url
};

void to_json(nlohmann::json& j, const ArmConfig& c);

struct PreparedArm {
    std::unique_ptr<AgentFactory> factory;
    std::optional<policy::PolicyParams> params;  // trained parameters of policy arms
    nlohmann::json provenance;
};

// Trains what the arm needs on the training split (unless `params` is given)
// and returns its factory. `bank` must cover the corpus and stay alive as
// long as the factory.
PreparedArm prepare_arm(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits, const ArmConfig& config,
                        const metatrain::ExampleBank& bank, std::optional<policy::PolicyParams> params = std::nullopt);

policy::PolicyParams train_policy(const webenv::Corpus& corpus, const evalkit::SplitSpec& splits, Arm arm,
                                  const ArmConfig& config, const metatrain::ExampleBank& bank);

}  // namespace adaptagent::protocol
