#include "adaptagent/demostore.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adaptagent/text.hpp"

namespace adaptagent::demostore {

using nlohmann::json;

Observation observe(const webenv::SiteSpec& site, const webenv::Task& task, const webenv::EnvState& state, int k) {
    const auto& page = site.page(state.current_page_id);
    Observation obs;
    obs.candidates = domkit::rank_candidates(task.instruction, domkit::serialize_elements(page, state.form_values), k);
    obs.candidates.task_id = task.task_id;
    obs.candidates.step_index = state.steps_taken;
    obs.layout = layout::annotate_marks(layout::compute_layout(page), obs.candidates);
    return obs;
}

json observation_json(const Observation& obs) { return json{{"layout", obs.layout}, {"candidates", obs.candidates}}; }

std::string layout_digest(const layout::LayoutObservation& l) { return hex64(fnv1a64(json(l).dump())); }

std::string candidates_digest(const domkit::CandidateSet& c) { return hex64(fnv1a64(json(c).dump())); }

std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

TrajectoryRecord make_record(const webenv::SiteSpec& site, const webenv::Task& task,
                             const webenv::Trajectory& trajectory, Annotator annotator, std::string created_at) {
    TrajectoryRecord r;
    r.task_id = task.task_id;
    r.site_id = site.site_id;
    r.annotator = annotator;
    r.created_at = std::move(created_at);
    for (const auto& s : trajectory.steps) {
        const auto obs = observe(site, task, s.state);
        r.steps.push_back({s.state.current_page_id, layout_digest(obs.layout), candidates_digest(obs.candidates), s.action});
    }
    return r;
}

void to_json(json& j, const TrajectoryRecord& r) {
    json steps = json::array();
    for (const auto& s : r.steps) {
        steps.push_back(json{{"page_id", s.page_id},
                             {"layout_digest", s.layout_digest},
                             {"candidates_digest", s.candidates_digest},
                             {"action", s.action}});
    }
    j = json{{"task_id", r.task_id},
             {"site_id", r.site_id},
             {"annotator", r.annotator == Annotator::human ? "HUMAN" : "ORACLE"},
             {"steps", steps},
             {"created_at", r.created_at},
             {"schema_version", r.schema_version}};
}

void from_json(const json& j, TrajectoryRecord& r) {
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kSchemaVersion) {
        throw Error(ErrorCode::SchemaMismatch, "schema_version " + std::to_string(r.schema_version) +
                                                   ", expected " + std::to_string(kSchemaVersion));
    }
    r.task_id = j.at("task_id").get<std::string>();
    r.site_id = j.at("site_id").get<std::string>();
    const auto annotator = j.at("annotator").get<std::string>();
    if (annotator == "HUMAN") {
        r.annotator = Annotator::human;
    } else if (annotator == "ORACLE") {
        r.annotator = Annotator::oracle;
    } else {
        throw Error(ErrorCode::MalformedFile, "annotator " + annotator);
    }
    r.created_at = j.at("created_at").get<std::string>();
    r.steps.clear();
    for (const auto& s : j.at("steps")) {
        r.steps.push_back({s.at("page_id").get<std::string>(), s.at("layout_digest").get<std::string>(),
                           s.at("candidates_digest").get<std::string>(), s.at("action").get<webenv::Action>()});
    }
    if (r.steps.empty()) throw Error(ErrorCode::MalformedFile, "record has no steps");
}

std::string serialize(const TrajectoryRecord& record) { return json(record).dump(2) + "\n"; }

TrajectoryRecord parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("demo file: ") + e.what());
    }
    try {
        return j.get<TrajectoryRecord>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("demo file: ") + e.what());
    }
}

void save(const TrajectoryRecord& record, const std::string& path) {
    const auto tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp);
        out << serialize(record);
        if (!out) throw Error(ErrorCode::IoFailure, "short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "rename to " + path + ": " + ec.message());
}

TrajectoryRecord load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

ValidationResult validate(const TrajectoryRecord& record, const webenv::Corpus& corpus) {
    const auto* site = corpus.find_site(record.site_id);
    if (!site) throw Error(ErrorCode::UnknownSite, record.site_id);
    ValidationResult result;
    auto fail = [&](std::string msg) {
        result.ok = false;
        result.failures.push_back(std::move(msg));
    };
    const auto* task = site->find_task(record.task_id);
    if (!task) {
        fail("task " + record.task_id + " is not part of site " + record.site_id);
        return result;
    }
    if (record.schema_version != kSchemaVersion) {
        fail("schema_version " + std::to_string(record.schema_version) + " is not supported");
    }
    if (record.steps.empty()) fail("record has no steps");
    if (static_cast<int>(record.steps.size()) > webenv::kStepCap) {
        fail("record has " + std::to_string(record.steps.size()) + " steps, cap is " + std::to_string(webenv::kStepCap));
    }
    auto state = webenv::reset(*site, *task);
    for (std::size_t i = 0; i < record.steps.size(); ++i) {
        const auto& s = record.steps[i];
        const auto where = "step " + std::to_string(i) + ": ";
        if (state.terminated) {
            fail(where + "episode already terminated");
            break;
        }
        if (s.page_id != state.current_page_id) {
            fail(where + "page " + s.page_id + " but replay is on " + state.current_page_id);
        } else {
            const auto obs = observe(*site, *task, state);
            if (layout_digest(obs.layout) != s.layout_digest) fail(where + "layout digest mismatch");
            if (candidates_digest(obs.candidates) != s.candidates_digest) fail(where + "candidate set digest mismatch");
        }
        try {
            state = webenv::step(state, *site, *task, s.action);
        } catch (const Error& e) {
            fail(where + std::string(e.name()) + " (" + e.what() + ")");
            return result;
        }
    }
    if (!state.success) fail("replay does not reach the goal");
    return result;
}

webenv::Trajectory to_trajectory(const TrajectoryRecord& record, const webenv::Corpus& corpus) {
    const auto& site = corpus.site(record.site_id);
    const auto* task = site.find_task(record.task_id);
    if (!task) throw Error(ErrorCode::UnknownTask, record.task_id);
    webenv::Trajectory traj;
    traj.task_id = record.task_id;
    auto state = webenv::reset(site, *task);
    for (const auto& s : record.steps) {
        traj.steps.push_back({state, s.action});
        try {
            state = webenv::step(state, site, *task, s.action);
        } catch (const Error& e) {
            throw Error(ErrorCode::ReplayFailure, record.task_id + ": " + e.what());
        }
    }
    if (!state.success) throw Error(ErrorCode::ReplayFailure, record.task_id + " does not reach its goal");
    return traj;
}

}  // namespace adaptagent::demostore
