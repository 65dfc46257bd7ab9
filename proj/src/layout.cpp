#include "adaptagent/layout.hpp"

#include <algorithm>
#include <set>

namespace adaptagent::layout {

using nlohmann::json;

const Box* LayoutObservation::find(std::string_view element_id) const {
    for (const auto& b : boxes) {
        if (b.element_id == element_id) return &b;
    }
    return nullptr;
}

LayoutObservation compute_layout(const webenv::PageSpec& page, Viewport viewport) {
    if (viewport.width < 100 || viewport.height < 100) {
        throw Error(ErrorCode::ViewportTooSmall, "viewport must be at least 100x100");
    }
    LayoutObservation out;
    out.viewport = viewport;
    int row = 0;
    for (const auto& e : page.elements) {
        Box b;
        b.element_id = e.element_id;
        b.tag = e.tag;
        b.label = e.label;
        if (b.label.empty()) {
            if (auto it = e.attributes.find("placeholder"); it != e.attributes.end()) b.label = it->second;
        }
        b.x = std::min(e.depth * kIndent, viewport.width);
        b.y = row * kRowHeight;
        if (e.hidden) {
            b.w = 0;
            b.h = 0;
            b.visible = false;
        } else {
            b.w = viewport.width - b.x;
            b.h = kRowHeight;
            b.visible = b.y + kRowHeight <= viewport.height;
            ++row;
        }
        out.boxes.push_back(std::move(b));
    }
    return out;
}

LayoutObservation annotate_marks(const LayoutObservation& layout, const domkit::CandidateSet& candidates) {
    if (candidates.candidates.empty()) return layout;
    std::set<std::string> wanted;
    for (const auto& c : candidates.candidates) {
        if (!layout.find(c.element.element_id)) {
            throw Error(ErrorCode::UnknownElement, "candidate " + c.element.element_id + " is not in the layout");
        }
        wanted.insert(c.element.element_id);
    }
    LayoutObservation out = layout;
    int next = 1;
    for (auto& b : out.boxes) {
        b.mark = wanted.count(b.element_id) ? std::optional(next++) : std::nullopt;
    }
    return out;
}

LayoutFeatures layout_features(const LayoutObservation& layout, std::string_view element_id) {
    const auto* b = layout.find(element_id);
    if (!b) throw Error(ErrorCode::UnknownElement, std::string(element_id));
    int max_mark = 0;
    for (const auto& box : layout.boxes) max_mark = std::max(max_mark, box.mark.value_or(0));
    const double w = layout.viewport.width;
    const double h = layout.viewport.height;
    return {b->x / w, b->y / h, b->w / w, b->h / h, b->visible ? 1.0 : 0.0,
            b->mark && max_mark > 0 ? static_cast<double>(*b->mark) / max_mark : 0.0};
}

double visual_complexity(const LayoutObservation& layout) {
    std::set<Tag> tags;
    int invisible = 0;
    for (const auto& b : layout.boxes) {
        tags.insert(b.tag);
        if (!b.visible) ++invisible;
    }
    return static_cast<double>(layout.boxes.size()) + 2.0 * invisible + static_cast<double>(tags.size());
}

void to_json(json& j, const Box& b) {
    j = json{{"element_id", b.element_id}, {"tag", to_string(b.tag)}, {"label", b.label},
             {"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"visible", b.visible}};
    j["mark"] = b.mark ? json(*b.mark) : json(nullptr);
}

void from_json(const json& j, Box& b) {
    b.element_id = j.at("element_id").get<std::string>();
    b.tag = parse_tag(j.at("tag").get<std::string>());
    b.label = j.value("label", "");
    b.x = j.at("x").get<int>();
    b.y = j.at("y").get<int>();
    b.w = j.at("w").get<int>();
    b.h = j.at("h").get<int>();
    b.visible = j.at("visible").get<bool>();
    b.mark = j.contains("mark") && !j["mark"].is_null() ? std::optional(j["mark"].get<int>()) : std::nullopt;
}

void to_json(json& j, const LayoutObservation& l) {
    j = json{{"viewport", {{"width", l.viewport.width}, {"height", l.viewport.height}}}, {"boxes", l.boxes}};
}

void from_json(const json& j, LayoutObservation& l) {
    l.viewport.width = j.at("viewport").at("width").get<int>();
    l.viewport.height = j.at("viewport").at("height").get<int>();
    l.boxes = j.at("boxes").get<std::vector<Box>>();
}

}  // namespace adaptagent::layout
