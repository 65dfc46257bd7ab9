#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptagent/demostore.hpp"
#include "adaptagent/fomaml.hpp"
#include "adaptagent/policy.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::metatrain {

enum class Strategy { intra, inter, hybrid };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);  // throws InvalidArgument

struct MetaConfig {
    double alpha = 0.05;
    double beta = 0.1;
    int inner_steps_per_demo_step = 1;
    int meta_batch_size = 1;
    Strategy strategy = Strategy::hybrid;
    int n_adapt_tasks = 2;
    int n_eval_tasks = 2;
    int meta_epochs = 30;
    std::uint64_t seed = 0;
    int hidden = policy::kDefaultHidden;
    Modality modality = Modality::multimodal;
    int top_k = domkit::kDefaultTopK;

    void validate() const;  // throws InvalidArgument
};

void to_json(nlohmann::json& j, const MetaConfig& c);
void from_json(const nlohmann::json& j, MetaConfig& c);

struct TaskBatch {
    std::string website_id;
    std::vector<std::string> d_train;  // task ids, all from website_id
    std::vector<std::string> d_test;
    Strategy provenance = Strategy::hybrid;

    bool operator==(const TaskBatch&) const = default;
};

// Demonstrations used for training and adaptation: validated recorded
// trajectories take precedence; every other task falls back to its oracle
// trajectory.
class DemoLibrary {
public:
    // Validates the record against the corpus first; throws ReplayFailure
    // listing the validation failures otherwise.
    void add_record(const demostore::TrajectoryRecord& record, const webenv::Corpus& corpus);
    bool has_recorded(const std::string& task_id) const { return recorded_.count(task_id) > 0; }
    webenv::Trajectory resolve(const webenv::SiteSpec& site, const webenv::Task& task) const;

private:
    std::map<std::string, webenv::Trajectory> recorded_;
};

// Step examples per task, built once per (corpus, modality, K) and cached.
class ExampleBank {
public:
    ExampleBank(const webenv::Corpus& corpus, Modality modality, int top_k = domkit::kDefaultTopK,
                DemoLibrary demos = {});

    const std::vector<policy::StepExample>& examples(const std::string& task_id) const;
    std::vector<policy::StepExample> gather(const std::vector<std::string>& task_ids) const;
    const webenv::Corpus& corpus() const { return corpus_; }
    Modality modality() const { return modality_; }

private:
    const webenv::Corpus& corpus_;
    Modality modality_;
    int top_k_;
    DemoLibrary demos_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::vector<policy::StepExample>> cache_;
};

// Adapter exposing the policy to the generic first-order core.
struct PolicyLearner {
    using params_type = policy::PolicyParams;
    using example_type = policy::StepExample;
    using gradient_type = policy::Gradient;

    gradient_type gradient(const params_type& p, std::span<const example_type> batch) const {
        return policy::grad(p, batch);
    }
    params_type update(const params_type& p, const gradient_type& g, double lr) const {
        return policy::apply_update(p, g, lr);
    }
    gradient_type accumulate(const gradient_type& a, const gradient_type& b) const {
        auto out = a;
        out += b;
        return out;
    }
};

// Call-trace record emitted for every gradient evaluation during meta-training.
struct GradientEvent {
    fomaml::Phase phase = fomaml::Phase::inner;
    std::size_t meta_step = 0;
    std::uint64_t params_fingerprint = 0;  // parameters the gradient is taken at
    std::uint64_t theta_fingerprint = 0;   // meta parameters at the start of the step
    std::set<std::string> task_ids;
};
using GradientTrace = std::function<void(const GradientEvent&)>;

std::uint64_t fingerprint(const policy::PolicyParams& params);

// Training websites of a corpus: sites that carry at least one task.
std::vector<std::string> training_websites(const webenv::Corpus& corpus);

TaskBatch select_tasks(const webenv::Corpus& corpus, const std::string& website_id, Strategy strategy,
                       std::uint64_t seed, int n_adapt = 2, int n_eval = 2);

// One fixed batch per training website, drawn once from the config seed and
// reused every epoch.
std::vector<TaskBatch> meta_plan(const webenv::Corpus& corpus, const MetaConfig& config);

// Task ids consumed by a plan, as a multiset in plan order.
std::vector<std::string> consumed_tasks(const std::vector<TaskBatch>& plan);

policy::PolicyParams inner_adapt(const policy::PolicyParams& params, const std::vector<std::string>& d_train,
                                 const ExampleBank& bank, double alpha, int steps_per_demo_step);

policy::PolicyParams fomaml_meta_step(const policy::PolicyParams& params, const std::vector<TaskBatch>& batches,
                                      const ExampleBank& bank, const MetaConfig& config,
                                      const GradientTrace& trace = {}, std::size_t meta_step_index = 0);

struct TrainingLogRecord {
    int epoch = 0;
    std::string website_id;
    double inner_loss_before = 0;
    double inner_loss_after = 0;
    double meta_loss = 0;
};
void to_json(nlohmann::json& j, const TrainingLogRecord& r);

struct MetaTrainResult {
    policy::PolicyParams params;
    std::vector<TaskBatch> plan;
    std::vector<TrainingLogRecord> log;
    std::vector<double> epoch_meta_loss;  // mean post-adaptation d_test loss per epoch
};

// `corpus_train` holds only training tasks (see restrict_to).
MetaTrainResult meta_train(const webenv::Corpus& corpus_train, const MetaConfig& config,
                           const DemoLibrary& demos = {}, const GradientTrace& trace = {});
// Same, starting from given parameters and reusing a prepared bank. The plan
// is drawn from `corpus_train`; the bank only has to cover its tasks.
MetaTrainResult meta_train(const policy::PolicyParams& init, const webenv::Corpus& corpus_train,
                           const ExampleBank& bank, const MetaConfig& config, const GradientTrace& trace = {});

struct FinetuneResult {
    policy::PolicyParams params;
    std::vector<double> epoch_loss;  // mean training loss after each epoch
};

// Plain SGD, one update per demonstration step, reshuffled every epoch.
FinetuneResult finetune(const policy::PolicyParams& params, const std::vector<std::string>& task_ids,
                        const ExampleBank& bank, double lr, int epochs, std::uint64_t seed);

// Few-shot adaptation with the inner-loop procedure. All target tasks must
// come from one domain.
policy::PolicyParams adapt_to_target(const policy::PolicyParams& theta_star,
                                     const std::vector<std::string>& target_task_ids, const ExampleBank& bank,
                                     double alpha, int steps_per_demo_step);

// Copy of `corpus` keeping only the listed tasks; sites left without tasks
// are dropped, and so are empty domains.
webenv::Corpus restrict_to(const webenv::Corpus& corpus, const std::set<std::string>& task_ids);

}  // namespace adaptagent::metatrain
