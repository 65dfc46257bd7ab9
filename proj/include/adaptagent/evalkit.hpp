#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adaptagent/demostore.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::evalkit {

// ---------------------------------------------------------------- metrics

struct StepRecord {
    std::optional<webenv::Action> pred;  // empty when the agent produced nothing usable
    webenv::Action gold;
    bool element_correct = false;
    double op_f1 = 0.0;
    bool step_correct = false;
};

struct TaskReport {
    std::string task_id;
    std::vector<StepRecord> steps;
    bool overall_success = false;  // every step correct
    std::optional<bool> live_success;
};

// Operation F1: 0 when the operations differ; otherwise token F1 between the
// value unigram bags, with two value-less actions counting 1.
double operation_f1(const webenv::Action& pred, const webenv::Action& gold);
StepRecord score_step(const std::optional<webenv::Action>& pred, const webenv::Action& gold);
TaskReport make_task_report(std::string task_id, std::vector<StepRecord> steps);

// Step-level metrics are averaged within each task, then across tasks.
// All of them throw EmptyInput when no task has a step.
double element_accuracy(std::span<const TaskReport> reports);
double mean_operation_f1(std::span<const TaskReport> reports);
double step_success_rate(std::span<const TaskReport> reports);

enum class SuccessMode { trajectory, live };
std::string_view to_string(SuccessMode mode);
SuccessMode parse_success_mode(std::string_view s);

// TRAJECTORY: share of tasks with every step correct. LIVE: share with
// environment success; throws MissingLiveSignal when a report lacks it.
double overall_success_rate(std::span<const TaskReport> reports, SuccessMode mode);

struct MetricSet {
    double ele_acc = 0;
    double op_f1 = 0;
    double step_sr = 0;
    double overall_sr = 0;
};
MetricSet compute_metrics(std::span<const TaskReport> reports, SuccessMode mode);

// ---------------------------------------------------------------- similarity and splits

double unigram_jaccard(std::string_view a, std::string_view b);

struct TaskRef {
    std::string task_id;
    std::string website_id;
    std::string instruction;

    bool operator==(const TaskRef&) const = default;
};

struct DedupConfig {
    std::map<std::string, std::size_t> k_per_website;
};
DedupConfig dedup_config(std::span<const TaskRef> cross_task);

// Per website: pool both sets and move the K tasks whose highest similarity
// to any other pooled task is lowest into cross-task (ties by task id), the
// rest into train. K is the website's original cross-task count. Outputs are
// sorted by task id.
std::pair<std::vector<TaskRef>, std::vector<TaskRef>> amend_splits(std::span<const TaskRef> train,
                                                                   std::span<const TaskRef> cross_task);

enum class SplitName { cross_task, cross_website, cross_domain };
std::string_view to_string(SplitName s);
SplitName parse_split_name(std::string_view s);

struct SplitOptions {
    int heldout_domains = 1;    // the last domains of the corpus
    int heldout_websites = 5;   // drawn from the remaining domains
    int cross_task_per_website = 2;
    std::uint64_t seed = 0;
};

struct SplitSpec {
    std::vector<std::string> train;
    std::vector<std::string> cross_task;
    std::vector<std::string> cross_website;
    std::vector<std::string> cross_domain;
    std::vector<std::string> train_websites;
    std::vector<std::string> heldout_websites;
    std::vector<std::string> heldout_domains;

    const std::vector<std::string>& tasks(SplitName split) const;
};

SplitSpec make_splits(const webenv::Corpus& corpus, const SplitOptions& options = {});
// Throws PreconditionFailed when splits overlap or held-out sites/domains leak into train.
void validate_splits(const webenv::Corpus& corpus, const SplitSpec& splits);
std::vector<TaskRef> task_refs(const webenv::Corpus& corpus, const std::vector<std::string>& task_ids);

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

// ---------------------------------------------------------------- difficulty

enum class Level { easy, medium, hard };
std::string_view to_string(Level level);

struct DifficultyLabel {
    Level sequence = Level::easy;
    Level visual = Level::easy;

    bool operator==(const DifficultyLabel&) const = default;
};

struct VisualThresholds {
    double low = 0;
    double high = 0;
};

// <= 3 easy, 4 to 9 medium, >= 10 hard.
Level sequence_level(std::size_t length);
// Mean complexity below `low` is easy, below `high` medium, otherwise hard.
DifficultyLabel stratify_difficulty(std::size_t length, std::span<const double> layout_complexities,
                                    const VisualThresholds& thresholds);

// Visual complexity of every page an oracle trajectory passes through.
std::vector<double> trajectory_complexities(const webenv::SiteSpec& site, const webenv::Trajectory& trajectory);
// 33rd and 66th percentiles of the per-task mean complexity over the corpus.
VisualThresholds visual_thresholds(const webenv::Corpus& corpus);

// ---------------------------------------------------------------- import

enum class ImportFormat { native, mind2web_json };
ImportFormat parse_import_format(std::string_view s);

struct ImportResult {
    std::vector<webenv::Task> tasks;
    std::vector<demostore::TrajectoryRecord> records;
    int warnings = 0;  // records skipped as unmappable
};

ImportResult import_records(const std::string& path, ImportFormat format);
void export_records(const std::string& path, const std::vector<webenv::Task>& tasks,
                    const std::vector<demostore::TrajectoryRecord>& records);

// ---------------------------------------------------------------- reports

struct MeanStd {
    double mean = 0;
    double std = 0;  // population
};
MeanStd mean_std(std::span<const double> values);

struct TaskRow {
    int run = 0;
    std::string task_id;
    std::size_t steps = 0;
    double ele_acc = 0;
    double op_f1 = 0;
    double step_sr = 0;
    bool overall_success = false;
    std::optional<bool> live_success;
    DifficultyLabel difficulty;
};

struct AggregateReport {
    std::string arm;
    std::string split;
    SuccessMode mode = SuccessMode::trajectory;
    int n_runs = 0;
    MeanStd ele_acc, op_f1, step_sr, overall_sr;
    std::map<std::string, std::map<std::string, std::optional<MetricSet>>> strata;  // axis -> level -> metrics
    std::vector<TaskRow> rows;
    nlohmann::json provenance;
};

void to_json(nlohmann::json& j, const MetricSet& m);
void to_json(nlohmann::json& j, const AggregateReport& r);
std::string to_csv(const AggregateReport& r);

}  // namespace adaptagent::evalkit
