#include "adaptagent/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "adaptagent/layout.hpp"
#include "adaptagent/text.hpp"

namespace adaptagent::evalkit {

using nlohmann::json;

// ---------------------------------------------------------------- metrics

double operation_f1(const webenv::Action& pred, const webenv::Action& gold) {
    if (pred.operation != gold.operation) return 0.0;
    const auto p = tokenize(pred.value.value_or(""));
    const auto g = tokenize(gold.value.value_or(""));
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : g) ++counts[t];
    int shared = 0;
    for (const auto& t : p) {
        if (auto it = counts.find(t); it != counts.end() && it->second > 0) {
            --it->second;
            ++shared;
        }
    }
    if (shared == 0) return 0.0;
    const double precision = static_cast<double>(shared) / static_cast<double>(p.size());
    const double recall = static_cast<double>(shared) / static_cast<double>(g.size());
    return 2 * precision * recall / (precision + recall);
}

StepRecord score_step(const std::optional<webenv::Action>& pred, const webenv::Action& gold) {
    StepRecord r;
    r.pred = pred;
    r.gold = gold;
    if (!pred) return r;
    r.element_correct = pred->element_id == gold.element_id;
    r.op_f1 = operation_f1(*pred, gold);
    const bool value_ok = !operation_takes_value(gold.operation) || pred->value == gold.value;
    r.step_correct = r.element_correct && pred->operation == gold.operation && value_ok;
    return r;
}

TaskReport make_task_report(std::string task_id, std::vector<StepRecord> steps) {
    TaskReport r;
    r.task_id = std::move(task_id);
    r.steps = std::move(steps);
    r.overall_success = !r.steps.empty() &&
                        std::all_of(r.steps.begin(), r.steps.end(), [](const StepRecord& s) { return s.step_correct; });
    return r;
}

namespace {

template <class F>
double macro_average(std::span<const TaskReport> reports, F per_step) {
    double total = 0;
    std::size_t tasks = 0;
    for (const auto& r : reports) {
        if (r.steps.empty()) continue;
        double sum = 0;
        for (const auto& s : r.steps) sum += per_step(s);
        total += sum / static_cast<double>(r.steps.size());
        ++tasks;
    }
    if (tasks == 0) throw Error(ErrorCode::EmptyInput, "no steps to score");
    return total / static_cast<double>(tasks);
}

}  // namespace

double element_accuracy(std::span<const TaskReport> reports) {
    return macro_average(reports, [](const StepRecord& s) { return s.element_correct ? 1.0 : 0.0; });
}

double mean_operation_f1(std::span<const TaskReport> reports) {
    return macro_average(reports, [](const StepRecord& s) { return s.op_f1; });
}

double step_success_rate(std::span<const TaskReport> reports) {
    return macro_average(reports, [](const StepRecord& s) { return s.step_correct ? 1.0 : 0.0; });
}

std::string_view to_string(SuccessMode mode) { return mode == SuccessMode::live ? "live" : "trajectory"; }

SuccessMode parse_success_mode(std::string_view s) {
    if (s == "trajectory" || s == "TRAJECTORY") return SuccessMode::trajectory;
    if (s == "live" || s == "LIVE") return SuccessMode::live;
    throw Error(ErrorCode::InvalidArgument, "unknown mode '" + std::string(s) + "'");
}

double overall_success_rate(std::span<const TaskReport> reports, SuccessMode mode) {
    std::size_t n = 0;
    std::size_t ok = 0;
    for (const auto& r : reports) {
        if (mode == SuccessMode::live) {
            if (!r.live_success) throw Error(ErrorCode::MissingLiveSignal, r.task_id + " has no live success signal");
            ok += *r.live_success ? 1 : 0;
            ++n;
        } else if (!r.steps.empty()) {
            ok += r.overall_success ? 1 : 0;
            ++n;
        }
    }
    if (n == 0) throw Error(ErrorCode::EmptyInput, "no tasks to score");
    return static_cast<double>(ok) / static_cast<double>(n);
}

MetricSet compute_metrics(std::span<const TaskReport> reports, SuccessMode mode) {
    return {element_accuracy(reports), mean_operation_f1(reports), step_success_rate(reports),
            overall_success_rate(reports, mode)};
}

// ---------------------------------------------------------------- similarity and splits

double unigram_jaccard(std::string_view a, std::string_view b) {
    const auto ua = unigram_set(a);
    const auto ub = unigram_set(b);
    if (ua.empty() && ub.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : ua) inter += ub.count(t);
    return static_cast<double>(inter) / static_cast<double>(ua.size() + ub.size() - inter);
}

DedupConfig dedup_config(std::span<const TaskRef> cross_task) {
    DedupConfig c;
    for (const auto& t : cross_task) ++c.k_per_website[t.website_id];
    return c;
}

std::pair<std::vector<TaskRef>, std::vector<TaskRef>> amend_splits(std::span<const TaskRef> train,
                                                                   std::span<const TaskRef> cross_task) {
    const auto config = dedup_config(cross_task);
    std::map<std::string, std::vector<TaskRef>> pools;
    for (const auto& t : train) pools[t.website_id].push_back(t);
    for (const auto& t : cross_task) pools[t.website_id].push_back(t);

    std::vector<TaskRef> out_train;
    std::vector<TaskRef> out_cross;
    for (auto& [website, pool] : pools) {
        const auto it = config.k_per_website.find(website);
        const std::size_t k = it == config.k_per_website.end() ? 0 : it->second;
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            double best = 0.0;
            for (std::size_t j = 0; j < pool.size(); ++j) {
                if (i != j) best = std::max(best, unigram_jaccard(pool[i].instruction, pool[j].instruction));
            }
            order.emplace_back(best, i);
        }
        std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return pool[a.second].task_id < pool[b.second].task_id;
        });
        for (std::size_t r = 0; r < order.size(); ++r) {
            (r < k ? out_cross : out_train).push_back(pool[order[r].second]);
        }
    }
    auto by_id = [](const TaskRef& a, const TaskRef& b) { return a.task_id < b.task_id; };
    std::sort(out_train.begin(), out_train.end(), by_id);
    std::sort(out_cross.begin(), out_cross.end(), by_id);
    return {out_train, out_cross};
}

std::string_view to_string(SplitName s) {
    switch (s) {
        case SplitName::cross_task: return "cross-task";
        case SplitName::cross_website: return "cross-website";
        case SplitName::cross_domain: return "cross-domain";
    }
    return "cross-task";
}

SplitName parse_split_name(std::string_view s) {
    if (s == "cross-task" || s == "cross_task") return SplitName::cross_task;
    if (s == "cross-website" || s == "cross_website") return SplitName::cross_website;
    if (s == "cross-domain" || s == "cross_domain") return SplitName::cross_domain;
    throw Error(ErrorCode::InvalidArgument, "unknown split '" + std::string(s) + "'");
}

const std::vector<std::string>& SplitSpec::tasks(SplitName split) const {
    switch (split) {
        case SplitName::cross_task: return cross_task;
        case SplitName::cross_website: return cross_website;
        case SplitName::cross_domain: return cross_domain;
    }
    return cross_task;
}

SplitSpec make_splits(const webenv::Corpus& corpus, const SplitOptions& options) {
    const int n_domains = static_cast<int>(corpus.domains.size());
    if (options.heldout_domains < 0 || options.heldout_domains >= n_domains) {
        throw Error(ErrorCode::PreconditionFailed, "need at least one training domain");
    }
    SplitSpec spec;
    const auto first_heldout = static_cast<std::size_t>(n_domains - options.heldout_domains);
    std::vector<const webenv::SiteSpec*> train_sites;
    for (std::size_t d = 0; d < corpus.domains.size(); ++d) {
        const auto& domain = corpus.domains[d];
        if (d >= first_heldout) {
            spec.heldout_domains.push_back(domain.domain_id);
            for (const auto& s : domain.sites) {
                for (const auto& t : s.tasks) spec.cross_domain.push_back(t.task_id);
            }
        } else {
            for (const auto& s : domain.sites) train_sites.push_back(&s);
        }
    }
    if (options.heldout_websites < 0 || static_cast<std::size_t>(options.heldout_websites) >= train_sites.size()) {
        throw Error(ErrorCode::PreconditionFailed, "need at least one training website");
    }
    Rng rng(derive_seed(options.seed, "splits"));
    const auto picks = rng.sample(train_sites.size(), static_cast<std::size_t>(options.heldout_websites));
    const std::set<std::size_t> heldout(picks.begin(), picks.end());
    for (std::size_t i = 0; i < train_sites.size(); ++i) {
        const auto& site = *train_sites[i];
        if (heldout.count(i)) {
            spec.heldout_websites.push_back(site.site_id);
            for (const auto& t : site.tasks) spec.cross_website.push_back(t.task_id);
            continue;
        }
        spec.train_websites.push_back(site.site_id);
        const auto n_cross = std::min(site.tasks.size(), static_cast<std::size_t>(options.cross_task_per_website));
        Rng site_rng(derive_seed(options.seed, "cross-task:" + site.site_id));
        const auto chosen = site_rng.sample(site.tasks.size(), n_cross);
        const std::set<std::size_t> cross(chosen.begin(), chosen.end());
        for (std::size_t t = 0; t < site.tasks.size(); ++t) {
            (cross.count(t) ? spec.cross_task : spec.train).push_back(site.tasks[t].task_id);
        }
    }
    return spec;
}

void validate_splits(const webenv::Corpus& corpus, const SplitSpec& splits) {
    std::set<std::string> seen;
    for (const auto* part : {&splits.train, &splits.cross_task, &splits.cross_website, &splits.cross_domain}) {
        for (const auto& id : *part) {
            corpus.task(id);
            if (!seen.insert(id).second) throw Error(ErrorCode::PreconditionFailed, id + " appears in two splits");
        }
    }
    std::set<std::string> train_sites;
    std::set<std::string> train_domains;
    for (const auto& id : splits.train) {
        const auto& t = corpus.task(id);
        train_sites.insert(t.site_id);
        train_domains.insert(t.domain_id);
    }
    for (const auto& id : splits.cross_website) {
        if (train_sites.count(corpus.task(id).site_id)) {
            throw Error(ErrorCode::PreconditionFailed, id + " is on a training website");
        }
    }
    for (const auto& id : splits.cross_domain) {
        if (train_domains.count(corpus.task(id).domain_id)) {
            throw Error(ErrorCode::PreconditionFailed, id + " is in a training domain");
        }
    }
}

std::vector<TaskRef> task_refs(const webenv::Corpus& corpus, const std::vector<std::string>& task_ids) {
    std::vector<TaskRef> out;
    for (const auto& id : task_ids) {
        const auto& t = corpus.task(id);
        out.push_back({t.task_id, t.site_id, t.instruction});
    }
    return out;
}

void to_json(json& j, const SplitSpec& s) {
    j = json{{"train", s.train},
             {"cross_task", s.cross_task},
             {"cross_website", s.cross_website},
             {"cross_domain", s.cross_domain},
             {"train_websites", s.train_websites},
             {"heldout_websites", s.heldout_websites},
             {"heldout_domains", s.heldout_domains}};
}

void from_json(const json& j, SplitSpec& s) {
    j.at("train").get_to(s.train);
    j.at("cross_task").get_to(s.cross_task);
    j.at("cross_website").get_to(s.cross_website);
    j.at("cross_domain").get_to(s.cross_domain);
    s.train_websites = j.value("train_websites", std::vector<std::string>{});
    s.heldout_websites = j.value("heldout_websites", std::vector<std::string>{});
    s.heldout_domains = j.value("heldout_domains", std::vector<std::string>{});
}

// ---------------------------------------------------------------- difficulty

std::string_view to_string(Level level) {
    switch (level) {
        case Level::easy: return "easy";
        case Level::medium: return "medium";
        case Level::hard: return "hard";
    }
    return "easy";
}

Level sequence_level(std::size_t length) {
    if (length <= 3) return Level::easy;
    if (length <= 9) return Level::medium;
    return Level::hard;
}

DifficultyLabel stratify_difficulty(std::size_t length, std::span<const double> layout_complexities,
                                    const VisualThresholds& thresholds) {
    if (length == 0) throw Error(ErrorCode::EmptyInput, "empty trajectory");
    DifficultyLabel label;
    label.sequence = sequence_level(length);
    double mean = 0;
    for (double c : layout_complexities) mean += c;
    if (!layout_complexities.empty()) mean /= static_cast<double>(layout_complexities.size());
    label.visual = mean < thresholds.low ? Level::easy : (mean < thresholds.high ? Level::medium : Level::hard);
    return label;
}

std::vector<double> trajectory_complexities(const webenv::SiteSpec& site, const webenv::Trajectory& trajectory) {
    std::vector<double> out;
    for (const auto& s : trajectory.steps) {
        out.push_back(layout::visual_complexity(layout::compute_layout(site.page(s.state.current_page_id))));
    }
    return out;
}

VisualThresholds visual_thresholds(const webenv::Corpus& corpus) {
    std::vector<double> means;
    for (const auto* task : corpus.all_tasks()) {
        const auto& site = corpus.site_of(*task);
        const auto c = trajectory_complexities(site, webenv::oracle_trajectory(site, *task));
        if (c.empty()) continue;
        double m = 0;
        for (double v : c) m += v;
        means.push_back(m / static_cast<double>(c.size()));
    }
    if (means.empty()) return {};
    std::sort(means.begin(), means.end());
    auto at = [&](double q) { return means[static_cast<std::size_t>(std::floor(q * static_cast<double>(means.size() - 1)))]; };
    return {at(0.33), at(0.66)};
}

// ---------------------------------------------------------------- import

ImportFormat parse_import_format(std::string_view s) {
    if (s == "native" || s == "NATIVE") return ImportFormat::native;
    if (s == "mind2web" || s == "mind2web_json" || s == "MIND2WEB_JSON") return ImportFormat::mind2web_json;
    throw Error(ErrorCode::InvalidArgument, "unknown import format '" + std::string(s) + "'");
}

namespace {

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, path + ": " + e.what());
    }
}

std::optional<std::string> string_field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) return std::nullopt;
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return std::nullopt;
}

// One Mind2Web-style action: operation {op, value} and the target element,
// given directly or as the first positive candidate.
std::optional<webenv::Action> mind2web_action(const json& a) {
    if (!a.is_object() || !a.contains("operation")) return std::nullopt;
    const auto& op = a.at("operation");
    auto op_name = op.is_object() ? string_field(op, "op") : (op.is_string() ? std::optional(op.get<std::string>()) : std::nullopt);
    if (!op_name) return std::nullopt;
    auto element = string_field(a, "element_id");
    if (!element && a.contains("pos_candidates") && a.at("pos_candidates").is_array() && !a.at("pos_candidates").empty()) {
        element = string_field(a.at("pos_candidates").front(), "backend_node_id");
    }
    if (!element) return std::nullopt;
    webenv::Action action;
    action.element_id = *element;
    try {
        action.operation = parse_operation(*op_name);
    } catch (const Error&) {
        return std::nullopt;
    }
    const auto value = op.is_object() ? string_field(op, "value") : std::nullopt;
    if (operation_takes_value(action.operation)) {
        if (!value || value->empty()) return std::nullopt;
        action.value = value;
    }
    return action;
}

}  // namespace

ImportResult import_records(const std::string& path, ImportFormat format) {
    const auto doc = read_json(path);
    ImportResult result;
    if (format == ImportFormat::native) {
        try {
            for (const auto& t : doc.at("tasks")) result.tasks.push_back(t.get<webenv::Task>());
            for (const auto& r : doc.at("records")) {
                try {
                    result.records.push_back(r.get<demostore::TrajectoryRecord>());
                } catch (const Error&) {
                    ++result.warnings;
                }
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedFile, path + ": " + e.what());
        }
        return result;
    }
    const json& items = doc.is_array() ? doc : doc.value("data", json::array());
    if (!items.is_array()) throw Error(ErrorCode::MalformedFile, path + ": expected an array of records");
    for (const auto& item : items) {
        const auto id = string_field(item, "annotation_id");
        const auto description = string_field(item, "confirmed_task");
        const auto website = string_field(item, "website");
        if (!id || !description || !website || !item.contains("actions") || !item.at("actions").is_array() ||
            item.at("actions").empty()) {
            ++result.warnings;
            continue;
        }
        demostore::TrajectoryRecord record;
        bool ok = true;
        for (const auto& a : item.at("actions")) {
            auto action = mind2web_action(a);
            if (!action) {
                ok = false;
                break;
            }
            record.steps.push_back({"", "", "", *action});
        }
        if (!ok) {
            ++result.warnings;
            continue;
        }
        webenv::Task task;
        task.task_id = *id;
        task.instruction = *description;
        task.site_id = *website;
        task.domain_id = string_field(item, "domain").value_or("");
        task.oracle_len = static_cast<int>(record.steps.size());
        record.task_id = *id;
        record.site_id = *website;
        record.annotator = demostore::Annotator::human;
        result.tasks.push_back(task);
        result.records.push_back(std::move(record));
    }
    return result;
}

void export_records(const std::string& path, const std::vector<webenv::Task>& tasks,
                    const std::vector<demostore::TrajectoryRecord>& records) {
    json doc{{"tasks", tasks}, {"records", records}};
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------- reports

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) return {};
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

void to_json(json& j, const MetricSet& m) {
    j = json{{"ele_acc", m.ele_acc}, {"op_f1", m.op_f1}, {"step_sr", m.step_sr}, {"overall_sr", m.overall_sr}};
}

void to_json(json& j, const AggregateReport& r) {
    auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
    json strata = json::object();
    for (const auto& [axis, levels] : r.strata) {
        json a = json::object();
        for (const auto& [level, metrics] : levels) a[level] = metrics ? json(*metrics) : json(nullptr);
        strata[axis] = a;
    }
    j = json{{"arm", r.arm},
             {"split", r.split},
             {"mode", to_string(r.mode)},
             {"n_runs", r.n_runs},
             {"metrics",
              {{"ele_acc", ms(r.ele_acc)}, {"op_f1", ms(r.op_f1)}, {"step_sr", ms(r.step_sr)}, {"overall_sr", ms(r.overall_sr)}}},
             {"strata", strata},
             {"provenance", r.provenance}};
}

std::string to_csv(const AggregateReport& r) {
    std::ostringstream out;
    out << "run,task_id,steps,ele_acc,op_f1,step_sr,overall_success,live_success,sequence,visual\n";
    for (const auto& row : r.rows) {
        out << row.run << ',' << row.task_id << ',' << row.steps << ',' << row.ele_acc << ',' << row.op_f1 << ','
            << row.step_sr << ',' << (row.overall_success ? 1 : 0) << ','
            << (row.live_success ? (*row.live_success ? "1" : "0") : "") << ',' << to_string(row.difficulty.sequence)
            << ',' << to_string(row.difficulty.visual) << '\n';
    }
    return out.str();
}

}  // namespace adaptagent::evalkit
