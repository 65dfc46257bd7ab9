#pragma once

#include <array>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "adaptagent/webenv.hpp"

namespace adaptagent::domkit {

inline constexpr int kDefaultTopK = 50;
inline constexpr std::size_t kTextHashDims = 32;
inline constexpr std::size_t kElementFeatureDims = 40;

struct ElementDescriptor {
    std::string element_id;
    Tag tag = Tag::text;
    std::string text;
    std::map<std::string, std::string> attributes;
    std::size_t doc_index = 0;
    int depth = 0;

    bool operator==(const ElementDescriptor&) const = default;
};

struct Candidate {
    ElementDescriptor element;
    double score = 0.0;

    bool operator==(const Candidate&) const = default;
};

struct CandidateSet {
    std::string task_id;
    int step_index = 0;
    std::vector<Candidate> candidates;
    int k = kDefaultTopK;

    const Candidate* find(std::string_view element_id) const;
    bool operator==(const CandidateSet&) const = default;
};

// Layout of the 40-wide element feature vector.
//   [0, 5)   tag one-hot in Tag declaration order
//   5        overlap fraction: share of the element's label tokens found in the instruction
//   6        min(doc_index, 50) / 50
//   7        min(depth, 10) / 10
//   [8, 40)  hashed label embedding (FNV-1a buckets, L2-normalized)
using ElementFeatures = std::array<double, kElementFeatureDims>;

// One descriptor per element in document order. Current form values, when
// given, appear as a "value" attribute the way a live DOM reports them.
std::vector<ElementDescriptor> serialize_elements(const webenv::PageSpec& page);
std::vector<ElementDescriptor> serialize_elements(const webenv::PageSpec& page, const webenv::FormValues& values);

// Tokens that describe what an element is: its text plus attribute values,
// excluding the current "value".
std::vector<std::string> label_tokens(const ElementDescriptor& element);

// Fraction of the element's distinct label tokens that occur in the instruction.
double overlap_fraction(const std::set<std::string>& instruction_unigrams, const ElementDescriptor& element);

double tag_prior(Tag tag);

// score = 0.8 * overlap + 0.2 * tag prior; top-K by score, ties by doc_index.
CandidateSet rank_candidates(std::string_view instruction, std::span<const ElementDescriptor> elements, int k);

ElementFeatures featurize_element(std::string_view instruction, const ElementDescriptor& element);

void to_json(nlohmann::json& j, const ElementDescriptor& e);
void from_json(const nlohmann::json& j, ElementDescriptor& e);
void to_json(nlohmann::json& j, const CandidateSet& c);
void from_json(const nlohmann::json& j, CandidateSet& c);

}  // namespace adaptagent::domkit
