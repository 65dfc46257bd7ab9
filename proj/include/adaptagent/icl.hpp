#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptagent/domkit.hpp"
#include "adaptagent/layout.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::icl {

// Stand-in for the agent framework's own instructions, which precede the
// demonstrations.
extern const char* const kBasePrompt;

struct DemoSegment {
    layout::LayoutObservation layout;  // the visual snapshot, marks applied
    domkit::CandidateSet filtered_elements;
    std::string chosen_element_id;
    Operation operation = Operation::click;
    std::optional<std::string> value;
    bool forced_inclusion = false;  // chosen element was appended past the top-K
};

// A deconstructed demonstration plus what the prompt header says about it.
struct Demo {
    std::string website_name;
    std::string task_description;
    std::vector<DemoSegment> segments;
};

// Replays the trajectory and captures one segment per step. Throws ReplayFailure.
Demo deconstruct_demo(const webenv::Trajectory& trajectory, const webenv::SiteSpec& site,
                      int k = domkit::kDefaultTopK);

enum class BlockKind { text, image_slot };

struct Block {
    BlockKind kind = BlockKind::text;
    std::string payload;  // text, or the serialized layout for an image slot

    bool operator==(const Block&) const = default;
};

struct PromptBundle {
    std::vector<Block> blocks;
    int n_demos = 0;
    Modality modality = Modality::multimodal;

    std::size_t image_count() const;
    bool operator==(const PromptBundle&) const = default;
};

// Exactly what a demo contributes to the prompt text. `image` is the payload
// of the step's image slot.
struct DemoText {
    std::string website_name;
    std::string task_description;
    struct Step {
        std::string element;
        std::string action;
        std::string value;
        std::string image;
    };
    std::vector<Step> steps;
};

DemoText demo_text(const Demo& demo);
std::string element_name(const domkit::ElementDescriptor& element);

PromptBundle build_prompt(const std::string& base, const std::vector<DemoText>& demos, int n, Modality modality);
PromptBundle build_prompt(const std::string& base, const std::vector<Demo>& demos, int n, Modality modality);

// Text blocks concatenated in order; image slots become "<<IMAGE k>>" lines,
// numbered from 1.
std::string render(const PromptBundle& bundle);

// The step the agent has to act on.
struct Query {
    std::string task_id;
    int step_index = 0;
    std::string instruction;
    std::vector<std::string> previous_actions;
    domkit::CandidateSet candidates;
    layout::LayoutObservation layout;  // candidates carry their marks here
};

Query make_query(const webenv::SiteSpec& site, const webenv::Task& task, const webenv::EnvState& state,
                 const std::vector<webenv::Action>& previous, int k = domkit::kDefaultTopK);

// Prompt plus the query block: task, previous actions, the current snapshot
// (multimodal only) and the candidate list.
PromptBundle with_query(const PromptBundle& prompt, const Query& query);

class AgentClient {
public:
    virtual ~AgentClient() = default;
    // `prompt` is the full bundle including the query block.
    virtual std::string complete(const PromptBundle& prompt, const Query& query) = 0;
};

// Replays scripted answers. Keyed entries (task, step) win over the
// sequential script; a cyclic script never runs out.
class MockClient : public AgentClient {
public:
    MockClient() = default;
    explicit MockClient(std::vector<std::string> script, bool cyclic = false);

    void add_keyed(const std::string& task_id, int step_index, std::string response);
    std::string complete(const PromptBundle& prompt, const Query& query) override;

    // Line-delimited JSON; each line is a string, or an object
    // {"response", "task_id"?, "step"?}.
    static MockClient from_script_file(const std::string& path, bool cyclic = false);

private:
    std::vector<std::string> script_;
    bool cyclic_ = false;
    std::size_t next_ = 0;
    std::map<std::pair<std::string, int>, std::string> keyed_;
};

// Deterministic scoring stand-in for a model: reads the prompt it is given
// and picks by lexical overlap with the task, a bonus for elements the demos
// chose, and, when the prompt carries a snapshot, a penalty for elements the
// snapshot shows as not visible.
class HeuristicClient : public AgentClient {
public:
    std::string complete(const PromptBundle& prompt, const Query& query) override;
};

// POSTs {"prompt", "blocks"} as JSON to `url` and expects the response text
// as the body.
class HttpClient : public AgentClient {
public:
    explicit HttpClient(std::string url, int timeout_seconds = 60);
    std::string complete(const PromptBundle& prompt, const Query& query) override;

private:
    std::string url_;
    int timeout_seconds_;
};

std::string query_agent(AgentClient& client, const PromptBundle& prompt, const Query& query);

std::string render_action(const webenv::Action& action);
// ELEMENT by id, then mark number, then exact label text.
webenv::Action parse_action_response(const std::string& text, const domkit::CandidateSet& candidates,
                                     const layout::LayoutObservation* layout = nullptr);

void to_json(nlohmann::json& j, const PromptBundle& b);

}  // namespace adaptagent::icl
