#include "adaptagent/icl.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "adaptagent/text.hpp"

namespace adaptagent::icl {

using nlohmann::json;

const char* const kBasePrompt =
    "You are a web agent. You will be shown a task, the current web page as a screenshot with numbered marks, "
    "and a list of candidate elements. Pick the element to act on next and the action to take.\n\n";

namespace {

const char* const kEndOfDemo = "This marks the end of an example task and its steps.";
const char* const kMoveOn = " Now, let's move on to the task at hand.";

domkit::CandidateSet ranked(const webenv::SiteSpec& site, const std::string& instruction,
                            const webenv::EnvState& state, int k) {
    const auto& page = site.page(state.current_page_id);
    return domkit::rank_candidates(instruction, domkit::serialize_elements(page, state.form_values), k);
}

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace

// ---------------------------------------------------------------- demos

Demo deconstruct_demo(const webenv::Trajectory& trajectory, const webenv::SiteSpec& site, int k) {
    const auto* task = site.find_task(trajectory.task_id);
    if (!task) throw Error(ErrorCode::ReplayFailure, trajectory.task_id + " is not a task of " + site.site_id);
    Demo demo;
    demo.website_name = site.site_id;
    demo.task_description = task->instruction;
    auto state = webenv::reset(site, *task);
    for (const auto& step : trajectory.steps) {
        if (step.state.current_page_id != state.current_page_id || step.state.form_values != state.form_values) {
            throw Error(ErrorCode::ReplayFailure, trajectory.task_id + ": recorded state diverges from replay");
        }
        DemoSegment seg;
        seg.filtered_elements = ranked(site, task->instruction, state, k);
        seg.filtered_elements.task_id = task->task_id;
        seg.filtered_elements.step_index = state.steps_taken;
        if (!seg.filtered_elements.find(step.action.element_id)) {
            const auto all = domkit::serialize_elements(site.page(state.current_page_id), state.form_values);
            const auto it = std::find_if(all.begin(), all.end(),
                                         [&](const auto& e) { return e.element_id == step.action.element_id; });
            if (it == all.end()) {
                throw Error(ErrorCode::ReplayFailure, step.action.element_id + " is not on " + state.current_page_id);
            }
            seg.filtered_elements.candidates.push_back({*it, 0.0});
            seg.forced_inclusion = true;
        }
        seg.layout = layout::annotate_marks(layout::compute_layout(site.page(state.current_page_id)),
                                            seg.filtered_elements);
        seg.chosen_element_id = step.action.element_id;
        seg.operation = step.action.operation;
        seg.value = step.action.value;
        demo.segments.push_back(std::move(seg));
        try {
            state = webenv::step(state, site, *task, step.action);
        } catch (const Error& e) {
            throw Error(ErrorCode::ReplayFailure, trajectory.task_id + ": " + e.what());
        }
    }
    if (!state.success) throw Error(ErrorCode::ReplayFailure, trajectory.task_id + " does not reach its goal");
    return demo;
}

std::string element_name(const domkit::ElementDescriptor& element) {
    if (!element.text.empty()) return element.text;
    for (const char* key : {"placeholder", "name"}) {
        if (auto it = element.attributes.find(key); it != element.attributes.end() && !it->second.empty()) {
            return it->second;
        }
    }
    return element.element_id;
}

DemoText demo_text(const Demo& demo) {
    DemoText out;
    out.website_name = demo.website_name;
    out.task_description = demo.task_description;
    for (const auto& seg : demo.segments) {
        const auto* chosen = seg.filtered_elements.find(seg.chosen_element_id);
        out.steps.push_back({chosen ? element_name(chosen->element) : seg.chosen_element_id,
                             upper(to_string(seg.operation)), seg.value.value_or("None"), json(seg.layout).dump()});
    }
    return out;
}

// ---------------------------------------------------------------- prompts

std::size_t PromptBundle::image_count() const {
    return static_cast<std::size_t>(
        std::count_if(blocks.begin(), blocks.end(), [](const Block& b) { return b.kind == BlockKind::image_slot; }));
}

PromptBundle build_prompt(const std::string& base, const std::vector<DemoText>& demos, int n, Modality modality) {
    if (n < 0) throw Error(ErrorCode::InvalidArgument, "n must be >= 0");
    if (static_cast<std::size_t>(n) > demos.size()) {
        throw Error(ErrorCode::NotEnoughDemos,
                    "asked for " + std::to_string(n) + " demos, " + std::to_string(demos.size()) + " available");
    }
    PromptBundle bundle;
    bundle.n_demos = n;
    bundle.modality = modality;
    bundle.blocks.push_back({BlockKind::text, base});
    for (int i = 0; i < n; ++i) {
        const auto& d = demos[static_cast<std::size_t>(i)];
        std::string header = i == 0 ? "To begin with, here is a quick example"
                                    : "Next, here is another example";
        header += " of one of the many tasks you could be performing on the website " + d.website_name + ".\n\n";
        header += "Example task's description: " + d.task_description + "\n\n";
        header += "To do this task, you could take the steps shown below.\n\n";
        bundle.blocks.push_back({BlockKind::text, header});
        for (const auto& s : d.steps) {
            if (modality == Modality::multimodal) bundle.blocks.push_back({BlockKind::image_slot, s.image});
            bundle.blocks.push_back(
                {BlockKind::text, "ELEMENT: " + s.element + "\n\nACTION: " + s.action + "\n\nVALUE: " + s.value + "\n\n"});
        }
        const bool last = i + 1 == n;
        bundle.blocks.push_back({BlockKind::text, std::string(kEndOfDemo) + (last ? std::string(kMoveOn) + "\n" : "\n\n")});
    }
    return bundle;
}

PromptBundle build_prompt(const std::string& base, const std::vector<Demo>& demos, int n, Modality modality) {
    std::vector<DemoText> texts;
    for (const auto& d : demos) texts.push_back(demo_text(d));
    return build_prompt(base, texts, n, modality);
}

std::string render(const PromptBundle& bundle) {
    std::string out;
    int image = 0;
    for (const auto& b : bundle.blocks) {
        if (b.kind == BlockKind::text) {
            out += b.payload;
        } else {
            out += "<<IMAGE " + std::to_string(++image) + ">>\n";
        }
    }
    return out;
}

Query make_query(const webenv::SiteSpec& site, const webenv::Task& task, const webenv::EnvState& state,
                 const std::vector<webenv::Action>& previous, int k) {
    Query q;
    q.task_id = task.task_id;
    q.step_index = state.steps_taken;
    q.instruction = task.instruction;
    for (const auto& a : previous) q.previous_actions.push_back(render_action(a));
    q.candidates = ranked(site, task.instruction, state, k);
    q.candidates.task_id = task.task_id;
    q.candidates.step_index = state.steps_taken;
    q.layout = layout::annotate_marks(layout::compute_layout(site.page(state.current_page_id)), q.candidates);
    return q;
}

PromptBundle with_query(const PromptBundle& prompt, const Query& query) {
    auto out = prompt;
    std::string head = "Task: " + query.instruction + "\n\nPrevious actions:\n";
    if (query.previous_actions.empty()) head += "None\n";
    for (const auto& a : query.previous_actions) {
        std::string line = a;
        std::replace(line.begin(), line.end(), '\n', ' ');
        head += "- " + line + "\n";
    }
    head += "\n";
    out.blocks.push_back({BlockKind::text, head});
    if (prompt.modality == Modality::multimodal) out.blocks.push_back({BlockKind::image_slot, json(query.layout).dump()});
    std::string list = "Candidate elements:\n";
    for (const auto& c : query.candidates.candidates) {
        const auto* box = query.layout.find(c.element.element_id);
        const auto mark = box && box->mark ? std::to_string(*box->mark) : std::string("-");
        list += "[" + mark + "] " + c.element.element_id + " <" + std::string(to_string(c.element.tag)) + "> \"" +
                element_name(c.element) + "\"";
        if (auto it = c.element.attributes.find("value"); it != c.element.attributes.end()) {
            list += " value=\"" + it->second + "\"";
        }
        list += "\n";
    }
    list += "\nAnswer with three lines:\nELEMENT: <element id or mark>\nACTION: <CLICK, TYPE or SELECT>\nVALUE: <value, or None>\n";
    out.blocks.push_back({BlockKind::text, list});
    return out;
}

// ---------------------------------------------------------------- clients

MockClient::MockClient(std::vector<std::string> script, bool cyclic) : script_(std::move(script)), cyclic_(cyclic) {}

void MockClient::add_keyed(const std::string& task_id, int step_index, std::string response) {
    keyed_[{task_id, step_index}] = std::move(response);
}

std::string MockClient::complete(const PromptBundle&, const Query& query) {
    if (auto it = keyed_.find({query.task_id, query.step_index}); it != keyed_.end()) return it->second;
    if (script_.empty() || (!cyclic_ && next_ >= script_.size())) {
        throw Error(ErrorCode::ClientFailure, "mock script exhausted");
    }
    const auto& out = script_[next_ % script_.size()];
    ++next_;
    return out;
}

MockClient MockClient::from_script_file(const std::string& path, bool cyclic) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
    MockClient client;
    client.cyclic_ = cyclic;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            const auto j = json::parse(line);
            if (j.is_string()) {
                client.script_.push_back(j.get<std::string>());
            } else if (j.contains("task_id")) {
                client.add_keyed(j.at("task_id").get<std::string>(), j.value("step", 0),
                                 j.at("response").get<std::string>());
            } else {
                client.script_.push_back(j.at("response").get<std::string>());
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedFile, path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return client;
}

namespace {

// Names of the elements demonstrated in the prompt.
std::set<std::string> demonstrated_elements(const PromptBundle& prompt) {
    std::set<std::string> out;
    for (const auto& b : prompt.blocks) {
        if (b.kind != BlockKind::text || b.payload.rfind("ELEMENT: ", 0) != 0) continue;
        const auto end = b.payload.find('\n');
        out.insert(b.payload.substr(9, end - 9));
    }
    return out;
}

std::optional<layout::LayoutObservation> current_snapshot(const PromptBundle& prompt) {
    for (auto it = prompt.blocks.rbegin(); it != prompt.blocks.rend(); ++it) {
        if (it->kind == BlockKind::image_slot) return json::parse(it->payload).get<layout::LayoutObservation>();
        if (it->payload.rfind("Task: ", 0) == 0) break;
    }
    return std::nullopt;
}

// The instruction words right after the element's name, up to a function word.
std::string value_after(const std::vector<std::string>& instruction, const std::vector<std::string>& name) {
    static const std::set<std::string> stop = {"and", "on", "at", "using", "with"};
    for (std::size_t i = 0; i + name.size() <= instruction.size(); ++i) {
        if (!std::equal(name.begin(), name.end(), instruction.begin() + static_cast<std::ptrdiff_t>(i))) continue;
        std::vector<std::string> words;
        for (std::size_t j = i + name.size(); j < instruction.size() && !stop.count(instruction[j]); ++j) {
            words.push_back(instruction[j]);
        }
        if (!words.empty()) return join(words, " ");
    }
    return {};
}

}  // namespace

std::string HeuristicClient::complete(const PromptBundle& prompt, const Query& query) {
    const auto demo_names = demonstrated_elements(prompt);
    const auto snapshot = current_snapshot(prompt);
    const auto unigrams = unigram_set(query.instruction);
    const auto* best = static_cast<const domkit::Candidate*>(nullptr);
    double best_score = -1e9;
    for (const auto& c : query.candidates.candidates) {
        const auto& e = c.element;
        double s = domkit::overlap_fraction(unigrams, e);
        if (demo_names.count(element_name(e))) s += 0.3;
        if (e.tag == Tag::text) s -= 1.0;
        if (e.attributes.count("value")) s -= 0.5;
        if (snapshot) {
            const auto* box = snapshot->find(e.element_id);
            if (box && !box->visible) s -= 1.0;
        }
        if (s > best_score) {
            best_score = s;
            best = &c;
        }
    }
    if (!best) return "ELEMENT: None\nACTION: CLICK\nVALUE: None";
    const auto& e = best->element;
    webenv::Action action = webenv::Action::click(e.element_id);
    const auto words = tokenize(query.instruction);
    if (e.tag == Tag::input) {
        action = webenv::Action::type(e.element_id, value_after(words, tokenize(element_name(e))));
    } else if (e.tag == Tag::select) {
        action = webenv::Action::select(e.element_id, value_after(words, tokenize(element_name(e))));
    }
    return render_action(action);
}

HttpClient::HttpClient(std::string url, int timeout_seconds) : url_(std::move(url)), timeout_seconds_(timeout_seconds) {}

std::string HttpClient::complete(const PromptBundle& prompt, const Query& query) {
    const auto scheme = url_.find("://");
    const auto path_start = url_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    const auto origin = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
    const auto path = path_start == std::string::npos ? std::string("/") : url_.substr(path_start);
    httplib::Client cli(origin);
    cli.set_connection_timeout(timeout_seconds_);
    cli.set_read_timeout(timeout_seconds_);
    json body{{"prompt", render(prompt)}, {"bundle", prompt}, {"task_id", query.task_id}, {"step", query.step_index}};
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res) throw Error(ErrorCode::ClientFailure, "POST " + url_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw Error(ErrorCode::ClientFailure, "POST " + url_ + " returned " + std::to_string(res->status));
    }
    return res->body;
}

std::string query_agent(AgentClient& client, const PromptBundle& prompt, const Query& query) {
    return client.complete(with_query(prompt, query), query);
}

// ---------------------------------------------------------------- responses

std::string render_action(const webenv::Action& action) {
    return "ELEMENT: " + action.element_id + "\nACTION: " + upper(to_string(action.operation)) +
           "\nVALUE: " + action.value.value_or("None");
}

webenv::Action parse_action_response(const std::string& text, const domkit::CandidateSet& candidates,
                                     const layout::LayoutObservation* layout) {
    std::map<std::string, std::string> fields;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        auto key = upper(trim(std::string_view(line).substr(0, colon)));
        key.erase(std::remove(key.begin(), key.end(), '*'), key.end());
        if ((key == "ELEMENT" || key == "ACTION" || key == "VALUE") && !fields.count(key)) {
            auto value = trim(std::string_view(line).substr(colon + 1));
            // markdown bold leaves "**" around the value
            while (value.starts_with("**")) value = trim(std::string_view(value).substr(2));
            while (value.ends_with("**")) value = trim(std::string_view(value).substr(0, value.size() - 2));
            fields[key] = value;
        }
    }
    for (const char* k : {"ELEMENT", "ACTION"}) {
        if (!fields.count(k)) throw Error(ErrorCode::UnparseableResponse, std::string("missing ") + k + " field");
    }
    const auto& ref = fields["ELEMENT"];
    std::string element_id;
    if (candidates.find(ref)) {
        element_id = ref;
    } else {
        if (layout && !ref.empty() && std::all_of(ref.begin(), ref.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            const int mark = std::stoi(ref);
            for (const auto& b : layout->boxes) {
                if (b.mark && *b.mark == mark) element_id = b.element_id;
            }
        }
        if (element_id.empty()) {
            for (const auto& c : candidates.candidates) {
                if (element_name(c.element) == ref) {
                    element_id = c.element.element_id;
                    break;
                }
            }
        }
    }
    if (element_id.empty()) throw Error(ErrorCode::UnknownElement, "no candidate matches '" + ref + "'");
    webenv::Action action;
    action.element_id = element_id;
    action.operation = parse_operation(fields["ACTION"]);
    if (auto it = fields.find("VALUE"); it != fields.end() && !it->second.empty()) {
        std::string lowered = it->second;
        std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
        if (lowered != "none") action.value = it->second;
    }
    return action;
}

void to_json(json& j, const PromptBundle& b) {
    json blocks = json::array();
    for (const auto& bl : b.blocks) {
        blocks.push_back(json{{"kind", bl.kind == BlockKind::text ? "text" : "image_slot"}, {"payload", bl.payload}});
    }
    j = json{{"blocks", blocks}, {"n_demos", b.n_demos}, {"modality", to_string(b.modality)}};
}

}  // namespace adaptagent::icl
