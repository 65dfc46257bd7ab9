#include "adaptagent/webenv.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "adaptagent/text.hpp"

namespace adaptagent::webenv {

using nlohmann::json;

const EnvElement* PageSpec::find(std::string_view element_id) const {
    for (const auto& e : elements) {
        if (e.element_id == element_id) return &e;
    }
    return nullptr;
}

const PageSpec& SiteSpec::page(const std::string& page_id) const {
    auto it = pages.find(page_id);
    if (it == pages.end()) {
        throw Error(ErrorCode::InvalidElement, "site " + site_id + " has no page " + page_id);
    }
    return it->second;
}

const Task* SiteSpec::find_task(std::string_view task_id) const {
    for (const auto& t : tasks) {
        if (t.task_id == task_id) return &t;
    }
    return nullptr;
}

const SiteSpec* Corpus::find_site(std::string_view site_id) const {
    for (const auto& d : domains) {
        for (const auto& s : d.sites) {
            if (s.site_id == site_id) return &s;
        }
    }
    return nullptr;
}

const SiteSpec& Corpus::site(std::string_view site_id) const {
    if (const auto* s = find_site(site_id)) return *s;
    throw Error(ErrorCode::UnknownSite, std::string(site_id));
}

const Task& Corpus::task(std::string_view task_id) const {
    for (const auto& d : domains) {
        for (const auto& s : d.sites) {
            if (const auto* t = s.find_task(task_id)) return *t;
        }
    }
    throw Error(ErrorCode::UnknownTask, std::string(task_id));
}

std::vector<const Task*> Corpus::all_tasks() const {
    std::vector<const Task*> out;
    for (const auto& d : domains) {
        for (const auto& s : d.sites) {
            for (const auto& t : s.tasks) out.push_back(&t);
        }
    }
    return out;
}

std::size_t Corpus::site_count() const {
    std::size_t n = 0;
    for (const auto& d : domains) n += d.sites.size();
    return n;
}

EnvState reset(const SiteSpec& site, const Task& task) {
    if (task.site_id != site.site_id) {
        throw Error(ErrorCode::TaskSiteMismatch,
                    "task " + task.task_id + " belongs to " + task.site_id + ", not " + site.site_id);
    }
    EnvState s;
    s.site_id = site.site_id;
    s.current_page_id = kStartPage;
    return s;
}

bool goal_satisfied(const EnvState& state, const Task& task) {
    if (state.current_page_id != task.goal.page_id) return false;
    for (const auto& [id, value] : task.goal.required_values) {
        auto it = state.form_values.find(id);
        if (it == state.form_values.end() || it->second != value) return false;
    }
    return true;
}

EnvState step(const EnvState& state, const SiteSpec& site, const Task& task, const Action& action) {
    if (state.terminated) throw Error(ErrorCode::AlreadyTerminated, "episode already terminated");
    if (task.site_id != site.site_id) throw Error(ErrorCode::TaskSiteMismatch, task.task_id);

    const auto& page = site.page(state.current_page_id);
    const auto* element = page.find(action.element_id);
    if (!element) {
        throw Error(ErrorCode::InvalidElement,
                    "no element " + action.element_id + " on page " + state.current_page_id);
    }
    if (!operation_allowed(element->tag, action.operation)) {
        throw Error(ErrorCode::InvalidOperation, std::string(to_string(action.operation)) + " on " +
                                                     std::string(to_string(element->tag)));
    }
    if (operation_takes_value(action.operation) != action.value.has_value()) {
        throw Error(ErrorCode::InvalidOperation, "value must be present iff operation is TYPE or SELECT");
    }
    if (action.operation == Operation::select &&
        std::find(element->options.begin(), element->options.end(), *action.value) == element->options.end()) {
        throw Error(ErrorCode::InvalidOperation, "'" + *action.value + "' is not an option of " + element->element_id);
    }

    EnvState next = state;
    switch (action.operation) {
        case Operation::click:
            if (element->target) next.current_page_id = *element->target;
            break;
        case Operation::type:
        case Operation::select:
            next.form_values[element->element_id] = *action.value;
            break;
    }
    next.steps_taken += 1;
    next.success = goal_satisfied(next, task);
    next.terminated = next.success || next.steps_taken >= kStepCap;
    return next;
}

EnvState replay(const SiteSpec& site, const Task& task, const std::vector<Action>& actions) {
    auto state = reset(site, task);
    for (const auto& a : actions) state = step(state, site, task, a);
    return state;
}

Trajectory oracle_trajectory(const SiteSpec& site, const Task& task) {
    if (task.site_id != site.site_id) throw Error(ErrorCode::TaskSiteMismatch, task.task_id);
    if (!site.pages.count(task.goal.page_id)) {
        throw Error(ErrorCode::NoPath, "goal page " + task.goal.page_id + " does not exist");
    }
    std::vector<std::string> required;
    for (const auto& [id, _] : task.goal.required_values) required.push_back(id);
    if (required.size() > 20) throw Error(ErrorCode::NoPath, "too many required fields");
    const unsigned full = (1u << required.size()) - 1;

    struct Node {
        std::string page;
        unsigned mask;
        int parent;
        Action via;
        int depth;
    };
    std::vector<Node> nodes;
    std::set<std::pair<std::string, unsigned>> seen;
    std::deque<int> frontier;
    nodes.push_back({kStartPage, 0u, -1, {}, 0});
    seen.insert({kStartPage, 0u});
    frontier.push_back(0);
    int found = -1;
    while (!frontier.empty() && found < 0) {
        const int cur = frontier.front();
        frontier.pop_front();
        const Node node = nodes[cur];
        if (node.depth >= kStepCap) continue;
        const auto pit = site.pages.find(node.page);
        if (pit == site.pages.end()) continue;
        for (const auto& e : pit->second.elements) {
            Node child{node.page, node.mask, cur, {}, node.depth + 1};
            if ((e.tag == Tag::link || e.tag == Tag::button) && e.target) {
                child.page = *e.target;
                child.via = Action::click(e.element_id);
            } else if (e.tag == Tag::input || e.tag == Tag::select) {
                auto rit = std::find(required.begin(), required.end(), e.element_id);
                if (rit == required.end()) continue;
                const unsigned bit = 1u << (rit - required.begin());
                if (node.mask & bit) continue;
                child.mask |= bit;
                const auto& v = task.goal.required_values.at(e.element_id);
                child.via = e.tag == Tag::input ? Action::type(e.element_id, v) : Action::select(e.element_id, v);
            } else {
                continue;
            }
            if (!seen.insert({child.page, child.mask}).second) continue;
            nodes.push_back(child);
            const int idx = static_cast<int>(nodes.size()) - 1;
            if (child.page == task.goal.page_id && child.mask == full) {
                found = idx;
                break;
            }
            frontier.push_back(idx);
        }
    }
    if (found < 0) throw Error(ErrorCode::NoPath, "goal of task " + task.task_id + " is unreachable");

    std::vector<Action> actions;
    for (int i = found; nodes[i].parent >= 0; i = nodes[i].parent) actions.push_back(nodes[i].via);
    std::reverse(actions.begin(), actions.end());

    Trajectory traj;
    traj.task_id = task.task_id;
    auto state = reset(site, task);
    for (const auto& a : actions) {
        traj.steps.push_back({state, a});
        state = step(state, site, task, a);
    }
    if (!state.success) throw Error(ErrorCode::NoPath, "oracle replay of " + task.task_id + " did not succeed");
    return traj;
}

void validate_site(const SiteSpec& site) {
    if (!site.pages.count(kStartPage)) throw Error(ErrorCode::NoPath, site.site_id + " lacks a start page");
    for (const auto& [pid, page] : site.pages) {
        if (pid != page.page_id) throw Error(ErrorCode::MalformedFile, "page key mismatch " + pid);
        std::set<std::string> ids;
        for (const auto& e : page.elements) {
            if (!ids.insert(e.element_id).second) {
                throw Error(ErrorCode::MalformedFile, "duplicate element id " + e.element_id + " on " + pid);
            }
            if (e.target && !site.pages.count(*e.target)) {
                throw Error(ErrorCode::MalformedFile, e.element_id + " targets missing page " + *e.target);
            }
            if (e.tag == Tag::select && e.options.empty()) {
                throw Error(ErrorCode::MalformedFile, "select " + e.element_id + " has no options");
            }
        }
    }
    for (const auto& t : site.tasks) {
        if (t.instruction.empty()) throw Error(ErrorCode::MalformedFile, t.task_id + " has no instruction");
        const auto traj = oracle_trajectory(site, t);
        if (static_cast<int>(traj.size()) != t.oracle_len) {
            throw Error(ErrorCode::MalformedFile, t.task_id + " oracle_len disagrees with oracle");
        }
    }
}

// JSON

void to_json(json& j, const EnvElement& e) {
    j = json{{"element_id", e.element_id}, {"tag", to_string(e.tag)}, {"label", e.label}, {"depth", e.depth}};
    if (e.target) j["target"] = *e.target;
    if (!e.options.empty()) j["options"] = e.options;
    if (!e.attributes.empty()) j["attributes"] = e.attributes;
    if (e.hidden) j["hidden"] = true;
}

void from_json(const json& j, EnvElement& e) {
    e.element_id = j.at("element_id").get<std::string>();
    e.tag = parse_tag(j.at("tag").get<std::string>());
    e.label = j.value("label", "");
    e.depth = j.value("depth", 0);
    e.target = j.contains("target") ? std::optional(j["target"].get<std::string>()) : std::nullopt;
    e.options = j.value("options", std::vector<std::string>{});
    e.attributes = j.value("attributes", std::map<std::string, std::string>{});
    e.hidden = j.value("hidden", false);
}

void to_json(json& j, const PageSpec& p) { j = json{{"page_id", p.page_id}, {"elements", p.elements}}; }

void from_json(const json& j, PageSpec& p) {
    p.page_id = j.at("page_id").get<std::string>();
    p.elements = j.at("elements").get<std::vector<EnvElement>>();
}

void to_json(json& j, const GoalPredicate& g) {
    j = json{{"page_id", g.page_id}, {"required_values", g.required_values}};
}

void from_json(const json& j, GoalPredicate& g) {
    g.page_id = j.at("page_id").get<std::string>();
    g.required_values = j.value("required_values", FormValues{});
}

void to_json(json& j, const Task& t) {
    j = json{{"task_id", t.task_id}, {"instruction", t.instruction}, {"site_id", t.site_id},
             {"domain_id", t.domain_id}, {"goal", t.goal}, {"oracle_len", t.oracle_len}};
}

void from_json(const json& j, Task& t) {
    t.task_id = j.at("task_id").get<std::string>();
    t.instruction = j.at("instruction").get<std::string>();
    t.site_id = j.at("site_id").get<std::string>();
    t.domain_id = j.at("domain_id").get<std::string>();
    t.goal = j.at("goal").get<GoalPredicate>();
    t.oracle_len = j.at("oracle_len").get<int>();
}

void to_json(json& j, const SiteSpec& s) {
    j = json{{"site_id", s.site_id}, {"domain_id", s.domain_id}, {"pages", s.pages},
             {"tasks", s.tasks}, {"seed", s.seed}};
}

void from_json(const json& j, SiteSpec& s) {
    s.site_id = j.at("site_id").get<std::string>();
    s.domain_id = j.at("domain_id").get<std::string>();
    s.pages = j.at("pages").get<std::map<std::string, PageSpec>>();
    s.tasks = j.at("tasks").get<std::vector<Task>>();
    s.seed = j.value("seed", std::uint64_t{0});
}

void to_json(json& j, const Corpus& c) {
    json domains = json::array();
    for (const auto& d : c.domains) domains.push_back(json{{"domain_id", d.domain_id}, {"sites", d.sites}});
    j = json{{"seed", c.seed}, {"domains", domains}};
}

void from_json(const json& j, Corpus& c) {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.domains.clear();
    for (const auto& d : j.at("domains")) {
        c.domains.push_back({d.at("domain_id").get<std::string>(), d.at("sites").get<std::vector<SiteSpec>>()});
    }
}

void to_json(json& j, const EnvState& s) {
    j = json{{"site_id", s.site_id}, {"current_page_id", s.current_page_id}, {"form_values", s.form_values},
             {"steps_taken", s.steps_taken}, {"terminated", s.terminated}, {"success", s.success}};
}

void from_json(const json& j, EnvState& s) {
    s.site_id = j.at("site_id").get<std::string>();
    s.current_page_id = j.at("current_page_id").get<std::string>();
    s.form_values = j.value("form_values", FormValues{});
    s.steps_taken = j.value("steps_taken", 0);
    s.terminated = j.value("terminated", false);
    s.success = j.value("success", false);
}

void to_json(json& j, const Action& a) {
    j = json{{"element_id", a.element_id}, {"operation", to_string(a.operation)}};
    if (a.value) j["value"] = *a.value;
}

void from_json(const json& j, Action& a) {
    a.element_id = j.at("element_id").get<std::string>();
    a.operation = parse_operation(j.at("operation").get<std::string>());
    a.value = j.contains("value") && !j["value"].is_null() ? std::optional(j["value"].get<std::string>())
                                                            : std::nullopt;
}

std::string serialize_corpus(const Corpus& corpus) { return json(corpus).dump(); }

Corpus parse_corpus(const std::string& text) {
    try {
        return json::parse(text).get<Corpus>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("corpus: ") + e.what());
    }
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_corpus(ss.str());
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << serialize_corpus(corpus);
}

std::uint64_t corpus_digest(const Corpus& corpus) { return fnv1a64(serialize_corpus(corpus)); }

}  // namespace adaptagent::webenv
