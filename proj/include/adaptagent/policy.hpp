#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adaptagent/domkit.hpp"
#include "adaptagent/layout.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::policy {

inline constexpr std::size_t kInstructionDims = 64;
inline constexpr std::size_t kCandidateDims = domkit::kElementFeatureDims + layout::kLayoutFeatureDims;  // 46
inline constexpr std::size_t kInputDims = kCandidateDims + kInstructionDims;                             // 110
inline constexpr int kDefaultHidden = 32;
inline constexpr int kMaxSpanLength = 5;
inline constexpr int kOperationCount = 3;

// Weights of the scoring network. Input rows are [candidate (46) | instruction (64)].
struct PolicyTensors {
    Eigen::MatrixXd w1;      // hidden x input
    Eigen::VectorXd b1;      // hidden
    Eigen::VectorXd w_elem;  // hidden
    Eigen::MatrixXd w_op;    // 3 x hidden
    Eigen::VectorXd w_val;   // hidden

    static PolicyTensors zeros(int input, int hidden);
    int input_dims() const { return static_cast<int>(w1.cols()); }
    int hidden_dims() const { return static_cast<int>(w1.rows()); }
    std::size_t size() const;
    bool same_shape(const PolicyTensors& other) const;
    // Flat view in checkpoint order: w1 (row-major), b1, w_elem, w_op (row-major), w_val.
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
    bool all_finite() const;
    bool operator==(const PolicyTensors& other) const;
};

struct PolicyParams {
    PolicyTensors tensors;
    std::uint64_t seed = 0;

    bool operator==(const PolicyParams& other) const { return seed == other.seed && tensors == other.tensors; }
};

struct Gradient {
    PolicyTensors tensors;

    Gradient& operator+=(const Gradient& other);
    Gradient& operator*=(double s);
    double max_abs() const;
};

struct CandidateInfo {
    std::string element_id;
    Tag tag = Tag::text;
    std::vector<std::string> label_tokens;
    std::vector<std::string> options;
    layout::LayoutFeatures layout{};  // zero in text-only mode
};

// Everything the policy sees at one step: the hashed instruction and one
// feature row per filtered candidate.
struct StepInput {
    std::vector<std::string> instruction_tokens;
    Eigen::VectorXd instruction;  // 64, hashed unigrams, L2-normalized
    Eigen::MatrixXd candidates;   // n x 46
    std::vector<CandidateInfo> info;
    Modality modality = Modality::multimodal;

    std::size_t size() const { return info.size(); }
    std::optional<std::size_t> index_of(std::string_view element_id) const;
};

// Value choices for one element: instruction n-grams (n <= 5) followed by
// the element's select options that are not already n-grams.
//
// Span feature row (46):
//   [0, 5)   tag one-hot of the element the value is for
//   5        share of the element's label tokens among the 3 instruction tokens before the span
//   6        span length / 5
//   7        1 if the span is one of the element's options
//   [8, 40)  hashed span embedding
//   [40, 46) the element's layout features (zero in text-only mode)
struct ValueSpans {
    std::vector<std::string> texts;
    Eigen::MatrixXd features;  // m x 46

    std::optional<std::size_t> index_of(std::string_view text) const;
};

struct StepExample {
    StepInput input;
    std::size_t gold_element = 0;
    Operation gold_operation = Operation::click;
    ValueSpans spans;  // for the gold element
    std::optional<std::size_t> gold_value;
    std::string task_id;  // provenance only
};

struct ActionDistribution {
    Eigen::VectorXd element;
    Eigen::VectorXd operation;  // conditioned on the gold element
    Eigen::VectorXd value;      // conditioned on the gold element; empty when no value applies
};

struct Prediction {
    webenv::Action action;
    std::size_t element_index = 0;
};

Eigen::VectorXd instruction_features(std::string_view instruction);

// Observation at `state` for `instruction`: filtered top-K candidates with
// their features. `must_include` is force-appended when it falls outside the top-K.
StepInput observe(const webenv::SiteSpec& site, std::string_view instruction, const webenv::EnvState& state,
                  Modality modality, int k = domkit::kDefaultTopK,
                  std::optional<std::string_view> must_include = std::nullopt);

ValueSpans value_spans(const StepInput& input, std::size_t candidate);

StepExample make_example(const webenv::SiteSpec& site, const webenv::Task& task, const webenv::Step& step,
                         Modality modality, int k = domkit::kDefaultTopK);
std::vector<StepExample> make_examples(const webenv::SiteSpec& site, const webenv::Task& task,
                                       const webenv::Trajectory& trajectory, Modality modality,
                                       int k = domkit::kDefaultTopK);

// Entries uniform on (-0.05, 0.05): 0.1 * ((mt19937_64() >> 11) * 2^-53) - 0.05,
// filled in checkpoint order.
PolicyParams init_params(std::uint64_t seed, int hidden = kDefaultHidden);

ActionDistribution forward(const PolicyParams& params, const StepExample& example);
double loss(const PolicyParams& params, const StepExample& example);
double mean_loss(const PolicyParams& params, std::span<const StepExample> batch);
// Gradient of the mean loss over the batch; reduction in ascending example order.
Gradient grad(const PolicyParams& params, std::span<const StepExample> batch);
PolicyParams apply_update(const PolicyParams& params, const Gradient& gradient, double lr);

// Greedy decoding: best element, best operation the element's tag allows,
// best value span when the operation takes one.
Prediction predict(const PolicyParams& params, const StepInput& input);

// Checkpoint: one line of JSON header {"dims":{"input","hidden"},"seed","version"},
// a newline, then the flat parameters as little-endian IEEE-754 float64.
std::string encode_checkpoint(const PolicyParams& params);
PolicyParams decode_checkpoint(const std::string& bytes);
void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace adaptagent::policy
