#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptagent/common.hpp"

namespace adaptagent::webenv {

inline constexpr int kStepCap = 30;
// Every site starts on this page.
inline constexpr const char* kStartPage = "home";

struct EnvElement {
    std::string element_id;
    Tag tag = Tag::text;
    std::string label;
    std::optional<std::string> target;  // links and buttons
    std::vector<std::string> options;   // selects
    std::map<std::string, std::string> attributes;
    int depth = 0;
    // Rendered with display:none. Present in the DOM, absent from the screen.
    bool hidden = false;

    bool operator==(const EnvElement&) const = default;
};

struct PageSpec {
    std::string page_id;
    std::vector<EnvElement> elements;

    const EnvElement* find(std::string_view element_id) const;
    bool operator==(const PageSpec&) const = default;
};

using FormValues = std::map<std::string, std::string>;

struct GoalPredicate {
    std::string page_id;
    FormValues required_values;

    bool operator==(const GoalPredicate&) const = default;
};

struct Task {
    std::string task_id;
    std::string instruction;
    std::string site_id;
    std::string domain_id;
    GoalPredicate goal;
    int oracle_len = 0;

    bool operator==(const Task&) const = default;
};

struct SiteSpec {
    std::string site_id;
    std::string domain_id;
    std::map<std::string, PageSpec> pages;
    std::vector<Task> tasks;
    std::uint64_t seed = 0;

    const PageSpec& page(const std::string& page_id) const;
    const Task* find_task(std::string_view task_id) const;
    bool operator==(const SiteSpec&) const = default;
};

struct Domain {
    std::string domain_id;
    std::vector<SiteSpec> sites;

    bool operator==(const Domain&) const = default;
};

struct Corpus {
    std::uint64_t seed = 0;
    std::vector<Domain> domains;

    const SiteSpec* find_site(std::string_view site_id) const;
    const SiteSpec& site(std::string_view site_id) const;  // throws UnknownSite
    const Task& task(std::string_view task_id) const;      // throws UnknownTask
    const SiteSpec& site_of(const Task& task) const { return site(task.site_id); }
    std::vector<const Task*> all_tasks() const;
    std::size_t site_count() const;
    bool operator==(const Corpus&) const = default;
};

struct EnvState {
    std::string site_id;
    std::string current_page_id;
    FormValues form_values;
    int steps_taken = 0;
    bool terminated = false;
    bool success = false;

    bool operator==(const EnvState&) const = default;
};

struct Action {
    std::string element_id;
    Operation operation = Operation::click;
    std::optional<std::string> value;

    static Action click(std::string id) { return {std::move(id), Operation::click, std::nullopt}; }
    static Action type(std::string id, std::string v) { return {std::move(id), Operation::type, std::move(v)}; }
    static Action select(std::string id, std::string v) { return {std::move(id), Operation::select, std::move(v)}; }
    bool operator==(const Action&) const = default;
};

struct Step {
    EnvState state;  // observation the action was taken from
    Action action;

    bool operator==(const Step&) const = default;
};

struct Trajectory {
    std::string task_id;
    std::vector<Step> steps;

    std::size_t size() const { return steps.size(); }
    bool operator==(const Trajectory&) const = default;
};

struct CorpusOptions {
    // Give every form control and submit button a hidden twin with the same
    // label, placed at a random document position. Only the layout tells them
    // apart.
    bool duplicate_labels = false;
    // Probability that a site puts its submit button first among the form
    // buttons. Otherwise the position is a per-site convention.
    double submit_first_prob = 0.6;
    // Fraction of tasks that only navigate to a section page.
    double navigation_task_prob = 0.15;
};

Corpus generate_corpus(std::uint64_t seed, int n_domains, int sites_per_domain, int tasks_per_site,
                       const CorpusOptions& options = {});

EnvState reset(const SiteSpec& site, const Task& task);
EnvState step(const EnvState& state, const SiteSpec& site, const Task& task, const Action& action);
bool goal_satisfied(const EnvState& state, const Task& task);

// Shortest action sequence reaching the goal, by breadth-first search over
// (page, satisfied required fields). Ties resolve to document order.
Trajectory oracle_trajectory(const SiteSpec& site, const Task& task);

// Replays actions from reset; returns the final state. Throws the webenv
// error of the first invalid action.
EnvState replay(const SiteSpec& site, const Task& task, const std::vector<Action>& actions);

// Structural checks: unique ids, resolvable targets, reachable goals.
void validate_site(const SiteSpec& site);

void to_json(nlohmann::json& j, const EnvElement& e);
void from_json(const nlohmann::json& j, EnvElement& e);
void to_json(nlohmann::json& j, const PageSpec& p);
void from_json(const nlohmann::json& j, PageSpec& p);
void to_json(nlohmann::json& j, const GoalPredicate& g);
void from_json(const nlohmann::json& j, GoalPredicate& g);
void to_json(nlohmann::json& j, const Task& t);
void from_json(const nlohmann::json& j, Task& t);
void to_json(nlohmann::json& j, const SiteSpec& s);
void from_json(const nlohmann::json& j, SiteSpec& s);
void to_json(nlohmann::json& j, const Corpus& c);
void from_json(const nlohmann::json& j, Corpus& c);
void to_json(nlohmann::json& j, const EnvState& s);
void from_json(const nlohmann::json& j, EnvState& s);
void to_json(nlohmann::json& j, const Action& a);
void from_json(const nlohmann::json& j, Action& a);

std::string serialize_corpus(const Corpus& corpus);
Corpus parse_corpus(const std::string& text);
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);
std::uint64_t corpus_digest(const Corpus& corpus);

}  // namespace adaptagent::webenv
