#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptagent/domkit.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::layout {

inline constexpr int kRowHeight = 24;
inline constexpr int kIndent = 16;
inline constexpr std::size_t kLayoutFeatureDims = 6;

struct Viewport {
    int width = 800;
    int height = 600;

    bool operator==(const Viewport&) const = default;
};

inline constexpr Viewport kDefaultViewport{800, 600};

struct Box {
    std::string element_id;
    Tag tag = Tag::text;
    std::string label;  // what the box displays; the placeholder for empty inputs
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    bool visible = true;
    std::optional<int> mark;

    bool operator==(const Box&) const = default;
};

struct LayoutObservation {
    Viewport viewport;
    std::vector<Box> boxes;

    const Box* find(std::string_view element_id) const;
    bool operator==(const LayoutObservation&) const = default;
};

// (x/W, y/H, w/W, h/H, visible, mark/max_mark or 0)
using LayoutFeatures = std::array<double, kLayoutFeatureDims>;

// Vertical flow: one 24-unit row per displayed element in document order,
// indented by depth * 16. Rows past the viewport bottom are not visible.
// Hidden elements get a zero-size invisible box and consume no row.
LayoutObservation compute_layout(const webenv::PageSpec& page, Viewport viewport = kDefaultViewport);

// Numbers the candidate elements 1..n in document order; all other boxes
// lose their marks. An empty candidate set returns the layout unchanged.
LayoutObservation annotate_marks(const LayoutObservation& layout, const domkit::CandidateSet& candidates);

LayoutFeatures layout_features(const LayoutObservation& layout, std::string_view element_id);

// Proxy for visual difficulty: boxes + 2 * invisible boxes + distinct tags.
double visual_complexity(const LayoutObservation& layout);

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);
void to_json(nlohmann::json& j, const LayoutObservation& l);
void from_json(const nlohmann::json& j, LayoutObservation& l);

}  // namespace adaptagent::layout
