#include "adaptagent/domkit.hpp"

#include <algorithm>

#include "adaptagent/text.hpp"

namespace adaptagent::domkit {

using nlohmann::json;

namespace {
// Filled-in controls carry this token in their hashed embedding so the
// policy can tell them from empty ones.
constexpr const char* kFilledMarker = "@value";
}  // namespace

const Candidate* CandidateSet::find(std::string_view element_id) const {
    for (const auto& c : candidates) {
        if (c.element.element_id == element_id) return &c;
    }
    return nullptr;
}

std::vector<ElementDescriptor> serialize_elements(const webenv::PageSpec& page) {
    return serialize_elements(page, {});
}

std::vector<ElementDescriptor> serialize_elements(const webenv::PageSpec& page, const webenv::FormValues& values) {
    std::vector<ElementDescriptor> out;
    out.reserve(page.elements.size());
    for (std::size_t i = 0; i < page.elements.size(); ++i) {
        const auto& e = page.elements[i];
        ElementDescriptor d;
        d.element_id = e.element_id;
        d.tag = e.tag;
        d.text = e.label;
        d.attributes = e.attributes;
        if (auto it = values.find(e.element_id); it != values.end()) d.attributes["value"] = it->second;
        d.doc_index = i;
        d.depth = e.depth;
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<std::string> label_tokens(const ElementDescriptor& element) {
    auto tokens = tokenize(element.text);
    for (const auto& [key, value] : element.attributes) {
        if (key == "value") continue;
        auto more = tokenize(value);
        tokens.insert(tokens.end(), more.begin(), more.end());
    }
    return tokens;
}

double overlap_fraction(const std::set<std::string>& instruction_unigrams, const ElementDescriptor& element) {
    const auto tokens = label_tokens(element);
    const std::set<std::string> own(tokens.begin(), tokens.end());
    if (own.empty()) return 0.0;
    std::size_t shared = 0;
    for (const auto& t : own) shared += instruction_unigrams.count(t);
    return static_cast<double>(shared) / static_cast<double>(own.size());
}

double tag_prior(Tag tag) {
    switch (tag) {
        case Tag::button:
        case Tag::link: return 1.0;
        case Tag::input:
        case Tag::select: return 0.5;
        case Tag::text: return 0.0;
    }
    return 0.0;
}

CandidateSet rank_candidates(std::string_view instruction, std::span<const ElementDescriptor> elements, int k) {
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "K must be >= 1");
    if (elements.empty()) throw Error(ErrorCode::EmptyElementList, "no elements to rank");
    const auto instr = unigram_set(instruction);
    CandidateSet set;
    set.k = k;
    for (const auto& e : elements) {
        set.candidates.push_back({e, 0.8 * overlap_fraction(instr, e) + 0.2 * tag_prior(e.tag)});
    }
    std::stable_sort(set.candidates.begin(), set.candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.element.doc_index < b.element.doc_index;
    });
    if (set.candidates.size() > static_cast<std::size_t>(k)) set.candidates.resize(static_cast<std::size_t>(k));
    return set;
}

ElementFeatures featurize_element(std::string_view instruction, const ElementDescriptor& element) {
    ElementFeatures f{};
    f[static_cast<std::size_t>(element.tag)] = 1.0;
    f[5] = overlap_fraction(unigram_set(instruction), element);
    f[6] = static_cast<double>(std::min<std::size_t>(element.doc_index, 50)) / 50.0;
    f[7] = static_cast<double>(std::clamp(element.depth, 0, 10)) / 10.0;
    auto tokens = label_tokens(element);
    if (element.attributes.count("value")) tokens.emplace_back(kFilledMarker);
    const auto hashed = hashed_embedding(tokens, kTextHashDims);
    std::copy(hashed.begin(), hashed.end(), f.begin() + 8);
    return f;
}

void to_json(json& j, const ElementDescriptor& e) {
    j = json{{"element_id", e.element_id}, {"tag", to_string(e.tag)}, {"text", e.text},
             {"attributes", e.attributes}, {"doc_index", e.doc_index}, {"depth", e.depth}};
}

void from_json(const json& j, ElementDescriptor& e) {
    e.element_id = j.at("element_id").get<std::string>();
    e.tag = parse_tag(j.at("tag").get<std::string>());
    e.text = j.value("text", "");
    e.attributes = j.value("attributes", std::map<std::string, std::string>{});
    e.doc_index = j.at("doc_index").get<std::size_t>();
    e.depth = j.value("depth", 0);
}

void to_json(json& j, const CandidateSet& c) {
    json cands = json::array();
    for (const auto& cand : c.candidates) cands.push_back(json{{"element", cand.element}, {"score", cand.score}});
    j = json{{"task_id", c.task_id}, {"step_index", c.step_index}, {"candidates", cands}, {"K", c.k}};
}

void from_json(const json& j, CandidateSet& c) {
    c.task_id = j.value("task_id", "");
    c.step_index = j.value("step_index", 0);
    c.k = j.value("K", kDefaultTopK);
    c.candidates.clear();
    for (const auto& cand : j.at("candidates")) {
        c.candidates.push_back({cand.at("element").get<ElementDescriptor>(), cand.at("score").get<double>()});
    }
}

}  // namespace adaptagent::domkit
