#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "adaptagent/domkit.hpp"
#include "adaptagent/layout.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::demostore {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kDemoExtension = ".demo.json";

enum class Annotator { human, oracle };

struct RecordStep {
    std::string page_id;
    std::string layout_digest;      // 16 hex digits
    std::string candidates_digest;  // 16 hex digits
    webenv::Action action;

    bool operator==(const RecordStep&) const = default;
};

struct TrajectoryRecord {
    std::string task_id;
    std::string site_id;
    Annotator annotator = Annotator::oracle;
    std::vector<RecordStep> steps;
    std::string created_at;  // ISO-8601
    int schema_version = kSchemaVersion;

    bool operator==(const TrajectoryRecord&) const = default;
};

// What an agent or a human sees at a state: the marked layout and the
// filtered candidates, ranked against the task instruction.
struct Observation {
    layout::LayoutObservation layout;
    domkit::CandidateSet candidates;
};

Observation observe(const webenv::SiteSpec& site, const webenv::Task& task, const webenv::EnvState& state,
                    int k = domkit::kDefaultTopK);
nlohmann::json observation_json(const Observation& obs);

// 64-bit FNV-1a of the canonical JSON serialization, as 16 hex digits.
std::string layout_digest(const layout::LayoutObservation& layout);
std::string candidates_digest(const domkit::CandidateSet& candidates);

std::string now_iso8601();

TrajectoryRecord make_record(const webenv::SiteSpec& site, const webenv::Task& task,
                             const webenv::Trajectory& trajectory, Annotator annotator, std::string created_at);

std::string serialize(const TrajectoryRecord& record);
TrajectoryRecord parse(const std::string& text);
// Written to a temporary sibling and renamed into place.
void save(const TrajectoryRecord& record, const std::string& path);
TrajectoryRecord load(const std::string& path);

struct ValidationResult {
    bool ok = true;
    std::vector<std::string> failures;
};

// Replays the record in its site: every action must apply, every digest must
// match the recomputed observation, the goal must be reached within the cap.
ValidationResult validate(const TrajectoryRecord& record, const webenv::Corpus& corpus);

// Rebuilds the state sequence of a record. Throws ReplayFailure on a record
// that does not replay.
webenv::Trajectory to_trajectory(const TrajectoryRecord& record, const webenv::Corpus& corpus);

void to_json(nlohmann::json& j, const TrajectoryRecord& r);
void from_json(const nlohmann::json& j, TrajectoryRecord& r);

}  // namespace adaptagent::demostore
