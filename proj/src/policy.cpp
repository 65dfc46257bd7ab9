#include "adaptagent/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "adaptagent/text.hpp"

namespace adaptagent::policy {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------- tensors

PolicyTensors PolicyTensors::zeros(int input, int hidden) {
    return {MatrixXd::Zero(hidden, input), VectorXd::Zero(hidden), VectorXd::Zero(hidden),
            MatrixXd::Zero(kOperationCount, hidden), VectorXd::Zero(hidden)};
}

std::size_t PolicyTensors::size() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w_elem.size() + w_op.size() + w_val.size());
}

bool PolicyTensors::same_shape(const PolicyTensors& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
           w_elem.size() == o.w_elem.size() && w_op.rows() == o.w_op.rows() && w_op.cols() == o.w_op.cols() &&
           w_val.size() == o.w_val.size();
}

std::vector<double> PolicyTensors::flatten() const {
    std::vector<double> flat;
    flat.reserve(size());
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
        for (Eigen::Index c = 0; c < w1.cols(); ++c) flat.push_back(w1(r, c));
    for (Eigen::Index i = 0; i < b1.size(); ++i) flat.push_back(b1(i));
    for (Eigen::Index i = 0; i < w_elem.size(); ++i) flat.push_back(w_elem(i));
    for (Eigen::Index r = 0; r < w_op.rows(); ++r)
        for (Eigen::Index c = 0; c < w_op.cols(); ++c) flat.push_back(w_op(r, c));
    for (Eigen::Index i = 0; i < w_val.size(); ++i) flat.push_back(w_val(i));
    return flat;
}

void PolicyTensors::assign(std::span<const double> flat) {
    if (flat.size() != size()) throw Error(ErrorCode::ShapeMismatch, "flat parameter length mismatch");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
        for (Eigen::Index c = 0; c < w1.cols(); ++c) w1(r, c) = flat[k++];
    for (Eigen::Index i = 0; i < b1.size(); ++i) b1(i) = flat[k++];
    for (Eigen::Index i = 0; i < w_elem.size(); ++i) w_elem(i) = flat[k++];
    for (Eigen::Index r = 0; r < w_op.rows(); ++r)
        for (Eigen::Index c = 0; c < w_op.cols(); ++c) w_op(r, c) = flat[k++];
    for (Eigen::Index i = 0; i < w_val.size(); ++i) w_val(i) = flat[k++];
}

bool PolicyTensors::all_finite() const {
    return w1.allFinite() && b1.allFinite() && w_elem.allFinite() && w_op.allFinite() && w_val.allFinite();
}

bool PolicyTensors::operator==(const PolicyTensors& o) const {
    return same_shape(o) && w1 == o.w1 && b1 == o.b1 && w_elem == o.w_elem && w_op == o.w_op && w_val == o.w_val;
}

Gradient& Gradient::operator+=(const Gradient& o) {
    if (!tensors.same_shape(o.tensors)) throw Error(ErrorCode::ShapeMismatch, "gradient shapes differ");
    tensors.w1 += o.tensors.w1;
    tensors.b1 += o.tensors.b1;
    tensors.w_elem += o.tensors.w_elem;
    tensors.w_op += o.tensors.w_op;
    tensors.w_val += o.tensors.w_val;
    return *this;
}

Gradient& Gradient::operator*=(double s) {
    tensors.w1 *= s;
    tensors.b1 *= s;
    tensors.w_elem *= s;
    tensors.w_op *= s;
    tensors.w_val *= s;
    return *this;
}

double Gradient::max_abs() const {
    double m = 0;
    for (double v : tensors.flatten()) m = std::max(m, std::abs(v));
    return m;
}

// ---------------------------------------------------------------- observation

std::optional<std::size_t> StepInput::index_of(std::string_view element_id) const {
    for (std::size_t i = 0; i < info.size(); ++i) {
        if (info[i].element_id == element_id) return i;
    }
    return std::nullopt;
}

std::optional<std::size_t> ValueSpans::index_of(std::string_view text) const {
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i] == text) return i;
    }
    return std::nullopt;
}

VectorXd instruction_features(std::string_view instruction) {
    const auto h = hashed_embedding(tokenize(instruction), kInstructionDims);
    return Eigen::Map<const VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
}

StepInput observe(const webenv::SiteSpec& site, std::string_view instruction, const webenv::EnvState& state,
                  Modality modality, int k, std::optional<std::string_view> must_include) {
    const auto& page = site.page(state.current_page_id);
    const auto elements = domkit::serialize_elements(page, state.form_values);
    auto ranked = domkit::rank_candidates(instruction, elements, k);
    if (must_include && !ranked.find(*must_include)) {
        for (const auto& e : elements) {
            if (e.element_id == *must_include) ranked.candidates.push_back({e, 0.0});
        }
    }
    const auto layout = layout::annotate_marks(layout::compute_layout(page), ranked);

    StepInput in;
    in.instruction_tokens = tokenize(instruction);
    in.instruction = instruction_features(instruction);
    in.modality = modality;
    in.candidates = MatrixXd::Zero(static_cast<Eigen::Index>(ranked.candidates.size()), kCandidateDims);
    for (std::size_t i = 0; i < ranked.candidates.size(); ++i) {
        const auto& desc = ranked.candidates[i].element;
        const auto f = domkit::featurize_element(instruction, desc);
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t j = 0; j < f.size(); ++j) in.candidates(row, static_cast<Eigen::Index>(j)) = f[j];
        CandidateInfo info;
        info.element_id = desc.element_id;
        info.tag = desc.tag;
        info.label_tokens = domkit::label_tokens(desc);
        info.options = page.find(desc.element_id)->options;
        if (modality == Modality::multimodal) {
            info.layout = layout::layout_features(layout, desc.element_id);
            for (std::size_t j = 0; j < info.layout.size(); ++j) {
                in.candidates(row, static_cast<Eigen::Index>(domkit::kElementFeatureDims + j)) = info.layout[j];
            }
        }
        in.info.push_back(std::move(info));
    }
    return in;
}

ValueSpans value_spans(const StepInput& input, std::size_t candidate) {
    const auto& info = input.info.at(candidate);
    const auto& toks = input.instruction_tokens;
    ValueSpans out;
    std::vector<std::size_t> starts;
    std::vector<std::size_t> lengths;
    for (std::size_t start = 0; start < toks.size(); ++start) {
        for (std::size_t n = 1; n <= static_cast<std::size_t>(kMaxSpanLength) && start + n <= toks.size(); ++n) {
            std::vector<std::string> words(toks.begin() + static_cast<std::ptrdiff_t>(start),
                                           toks.begin() + static_cast<std::ptrdiff_t>(start + n));
            auto text = join(words, " ");
            if (out.index_of(text)) continue;
            out.texts.push_back(std::move(text));
            starts.push_back(start);
            lengths.push_back(n);
        }
    }
    const std::size_t from_instruction = out.texts.size();
    for (const auto& opt : info.options) {
        if (out.index_of(opt)) continue;
        out.texts.push_back(opt);
        starts.push_back(0);
        lengths.push_back(tokenize(opt).size());
    }

    const std::set<std::string> label(info.label_tokens.begin(), info.label_tokens.end());
    out.features = MatrixXd::Zero(static_cast<Eigen::Index>(out.texts.size()), kCandidateDims);
    for (std::size_t i = 0; i < out.texts.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        out.features(row, static_cast<Eigen::Index>(info.tag)) = 1.0;
        if (i < from_instruction && !label.empty()) {
            const std::size_t begin = starts[i] >= 3 ? starts[i] - 3 : 0;
            std::set<std::string> hit;
            for (std::size_t t = begin; t < starts[i]; ++t) {
                if (label.count(toks[t])) hit.insert(toks[t]);
            }
            out.features(row, 5) = static_cast<double>(hit.size()) / static_cast<double>(label.size());
        }
        out.features(row, 6) = static_cast<double>(std::min<std::size_t>(lengths[i], kMaxSpanLength)) / kMaxSpanLength;
        const bool is_option = std::find(info.options.begin(), info.options.end(), out.texts[i]) != info.options.end();
        out.features(row, 7) = is_option ? 1.0 : 0.0;
        const auto h = hashed_embedding(tokenize(out.texts[i]), domkit::kTextHashDims);
        for (std::size_t j = 0; j < h.size(); ++j) out.features(row, static_cast<Eigen::Index>(8 + j)) = h[j];
        for (std::size_t j = 0; j < info.layout.size(); ++j) {
            out.features(row, static_cast<Eigen::Index>(domkit::kElementFeatureDims + j)) = info.layout[j];
        }
    }
    return out;
}

StepExample make_example(const webenv::SiteSpec& site, const webenv::Task& task, const webenv::Step& step,
                         Modality modality, int k) {
    StepExample ex;
    ex.task_id = task.task_id;
    ex.input = observe(site, task.instruction, step.state, modality, k, step.action.element_id);
    const auto gold = ex.input.index_of(step.action.element_id);
    if (!gold) throw Error(ErrorCode::InvalidElement, "gold element " + step.action.element_id + " not observable");
    ex.gold_element = *gold;
    ex.gold_operation = step.action.operation;
    ex.spans = value_spans(ex.input, ex.gold_element);
    if (step.action.value) {
        ex.gold_value = ex.spans.index_of(*step.action.value);
        if (!ex.gold_value) {
            throw Error(ErrorCode::InvalidOperation, "gold value '" + *step.action.value + "' is outside the value space");
        }
    }
    return ex;
}

std::vector<StepExample> make_examples(const webenv::SiteSpec& site, const webenv::Task& task,
                                       const webenv::Trajectory& trajectory, Modality modality, int k) {
    std::vector<StepExample> out;
    out.reserve(trajectory.size());
    for (const auto& s : trajectory.steps) out.push_back(make_example(site, task, s, modality, k));
    return out;
}

// ---------------------------------------------------------------- network

PolicyParams init_params(std::uint64_t seed, int hidden) {
    if (hidden < 1) throw Error(ErrorCode::InvalidArgument, "hidden must be >= 1");
    PolicyParams p;
    p.seed = seed;
    p.tensors = PolicyTensors::zeros(static_cast<int>(kInputDims), hidden);
    std::mt19937_64 gen(seed);
    std::vector<double> flat(p.tensors.size());
    for (auto& v : flat) v = 0.1 * (static_cast<double>(gen() >> 11) * 0x1.0p-53) - 0.05;
    p.tensors.assign(flat);
    return p;
}

namespace {

struct LogSoftmax {
    VectorXd log_probs;
    VectorXd probs;
};

LogSoftmax log_softmax(const VectorXd& logits) {
    const double m = logits.maxCoeff();
    const VectorXd shifted = logits.array() - m;
    const double lse = std::log(shifted.array().exp().sum());
    LogSoftmax out;
    out.log_probs = shifted.array() - lse;
    out.probs = out.log_probs.array().exp();
    return out;
}

// Forward pass state needed by both the loss and the backward pass.
struct Activations {
    VectorXd shared;  // W1_instr * instruction + b1
    MatrixXd h_cand;  // n x hidden
    LogSoftmax element;
    LogSoftmax operation;
    MatrixXd h_span;  // m x hidden
    LogSoftmax value;
    bool has_value = false;
};

auto candidate_block(const MatrixXd& w1) { return w1.leftCols(static_cast<Eigen::Index>(kCandidateDims)); }
auto instruction_block(const MatrixXd& w1) { return w1.rightCols(static_cast<Eigen::Index>(kInstructionDims)); }

MatrixXd hidden_rows(const PolicyTensors& t, const MatrixXd& rows, const VectorXd& shared) {
    MatrixXd z = rows * candidate_block(t.w1).transpose();
    z.rowwise() += shared.transpose();
    return z.array().tanh();
}

Activations run_forward(const PolicyTensors& t, const StepExample& ex) {
    if (t.input_dims() != static_cast<int>(kInputDims)) throw Error(ErrorCode::ShapeMismatch, "input dims");
    Activations a;
    a.shared = instruction_block(t.w1) * ex.input.instruction + t.b1;
    a.h_cand = hidden_rows(t, ex.input.candidates, a.shared);
    a.element = log_softmax(a.h_cand * t.w_elem);
    a.operation = log_softmax(t.w_op * a.h_cand.row(static_cast<Eigen::Index>(ex.gold_element)).transpose());
    a.has_value = ex.gold_value.has_value() || operation_takes_value(ex.gold_operation);
    if (a.has_value && ex.spans.features.rows() > 0) {
        a.h_span = hidden_rows(t, ex.spans.features, a.shared);
        a.value = log_softmax(a.h_span * t.w_val);
    } else {
        a.has_value = false;
    }
    return a;
}

double example_loss(const Activations& a, const StepExample& ex) {
    double l = -a.element.log_probs(static_cast<Eigen::Index>(ex.gold_element));
    l -= a.operation.log_probs(static_cast<Eigen::Index>(ex.gold_operation));
    if (a.has_value && ex.gold_value) l -= a.value.log_probs(static_cast<Eigen::Index>(*ex.gold_value));
    return l;
}

void accumulate_backward(const PolicyTensors& t, const StepExample& ex, const Activations& a, PolicyTensors& g) {
    const auto gold = static_cast<Eigen::Index>(ex.gold_element);

    VectorXd d_elem = a.element.probs;
    d_elem(gold) -= 1.0;
    g.w_elem += a.h_cand.transpose() * d_elem;
    MatrixXd d_hc = d_elem * t.w_elem.transpose();

    VectorXd d_op = a.operation.probs;
    d_op(static_cast<Eigen::Index>(ex.gold_operation)) -= 1.0;
    g.w_op += d_op * a.h_cand.row(gold);
    d_hc.row(gold) += (t.w_op.transpose() * d_op).transpose();

    const MatrixXd d_zc = d_hc.array() * (1.0 - a.h_cand.array().square());
    MatrixXd d_w1c = d_zc.transpose() * ex.input.candidates;
    VectorXd d_shared = d_zc.colwise().sum().transpose();

    if (a.has_value && ex.gold_value) {
        VectorXd d_val = a.value.probs;
        d_val(static_cast<Eigen::Index>(*ex.gold_value)) -= 1.0;
        g.w_val += a.h_span.transpose() * d_val;
        const MatrixXd d_hs = d_val * t.w_val.transpose();
        const MatrixXd d_zs = d_hs.array() * (1.0 - a.h_span.array().square());
        d_w1c += d_zs.transpose() * ex.spans.features;
        d_shared += d_zs.colwise().sum().transpose();
    }

    g.w1.leftCols(static_cast<Eigen::Index>(kCandidateDims)) += d_w1c;
    g.w1.rightCols(static_cast<Eigen::Index>(kInstructionDims)) += d_shared * ex.input.instruction.transpose();
    g.b1 += d_shared;
}

}  // namespace

ActionDistribution forward(const PolicyParams& params, const StepExample& example) {
    const auto a = run_forward(params.tensors, example);
    ActionDistribution d;
    d.element = a.element.probs;
    d.operation = a.operation.probs;
    if (a.has_value) d.value = a.value.probs;
    return d;
}

double loss(const PolicyParams& params, const StepExample& example) {
    return example_loss(run_forward(params.tensors, example), example);
}

double mean_loss(const PolicyParams& params, std::span<const StepExample> batch) {
    if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "mean_loss of an empty batch");
    double total = 0;
    for (const auto& ex : batch) total += loss(params, ex);
    return total / static_cast<double>(batch.size());
}

Gradient grad(const PolicyParams& params, std::span<const StepExample> batch) {
    if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "gradient of an empty batch");
    const auto& t = params.tensors;
    Gradient g{PolicyTensors::zeros(t.input_dims(), t.hidden_dims())};
    for (const auto& ex : batch) accumulate_backward(t, ex, run_forward(t, ex), g.tensors);
    g *= 1.0 / static_cast<double>(batch.size());
    return g;
}

PolicyParams apply_update(const PolicyParams& params, const Gradient& gradient, double lr) {
    if (!params.tensors.same_shape(gradient.tensors)) {
        throw Error(ErrorCode::ShapeMismatch, "gradient does not match parameter shapes");
    }
    PolicyParams out = params;
    out.tensors.w1 -= lr * gradient.tensors.w1;
    out.tensors.b1 -= lr * gradient.tensors.b1;
    out.tensors.w_elem -= lr * gradient.tensors.w_elem;
    out.tensors.w_op -= lr * gradient.tensors.w_op;
    out.tensors.w_val -= lr * gradient.tensors.w_val;
    return out;
}

Prediction predict(const PolicyParams& params, const StepInput& input) {
    if (input.size() == 0) throw Error(ErrorCode::EmptyElementList, "no candidates to choose from");
    const auto& t = params.tensors;
    const VectorXd shared = instruction_block(t.w1) * input.instruction + t.b1;
    const MatrixXd h = hidden_rows(t, input.candidates, shared);
    const VectorXd scores = h * t.w_elem;
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < scores.size(); ++i) {
        if (scores(i) > scores(best)) best = i;
    }
    const auto& info = input.info[static_cast<std::size_t>(best)];

    const VectorXd op_scores = t.w_op * h.row(best).transpose();
    std::optional<Operation> op;
    for (int o = 0; o < kOperationCount; ++o) {
        const auto cand = static_cast<Operation>(o);
        if (!operation_allowed(info.tag, cand)) continue;
        if (!op || op_scores(o) > op_scores(static_cast<int>(*op))) op = cand;
    }

    Prediction p;
    p.element_index = static_cast<std::size_t>(best);
    p.action.element_id = info.element_id;
    p.action.operation = op.value_or(Operation::click);
    if (operation_takes_value(p.action.operation)) {
        const auto spans = value_spans(input, p.element_index);
        std::optional<std::size_t> pick;
        if (spans.texts.size() > 0) {
            const VectorXd vs = hidden_rows(t, spans.features, shared) * t.w_val;
            for (std::size_t i = 0; i < spans.texts.size(); ++i) {
                // A select only accepts its own options.
                if (p.action.operation == Operation::select &&
                    std::find(info.options.begin(), info.options.end(), spans.texts[i]) == info.options.end()) {
                    continue;
                }
                if (!pick || vs(static_cast<Eigen::Index>(i)) > vs(static_cast<Eigen::Index>(*pick))) pick = i;
            }
        }
        p.action.value = pick ? spans.texts[*pick] : std::string();
    }
    return p;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr int kCheckpointVersion = 1;

void put_le(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_checkpoint(const PolicyParams& params) {
    nlohmann::json header{{"dims", {{"input", params.tensors.input_dims()}, {"hidden", params.tensors.hidden_dims()}}},
                          {"seed", params.seed},
                          {"version", kCheckpointVersion}};
    std::string out = header.dump();
    out.push_back('\n');
    for (double v : params.tensors.flatten()) put_le(out, v);
    return out;
}

PolicyParams decode_checkpoint(const std::string& bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw Error(ErrorCode::MalformedFile, "checkpoint header missing");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("checkpoint header: ") + e.what());
    }
    if (header.value("version", 0) != kCheckpointVersion) throw Error(ErrorCode::SchemaMismatch, "checkpoint version");
    PolicyParams p;
    p.seed = header.at("seed").get<std::uint64_t>();
    p.tensors = PolicyTensors::zeros(header.at("dims").at("input").get<int>(), header.at("dims").at("hidden").get<int>());
    const std::size_t n = p.tensors.size();
    if (bytes.size() - nl - 1 != n * 8) throw Error(ErrorCode::MalformedFile, "checkpoint payload length");
    std::vector<double> flat(n);
    for (std::size_t i = 0; i < n; ++i) flat[i] = get_le(bytes.data() + nl + 1 + 8 * i);
    p.tensors.assign(flat);
    return p;
}

void save_checkpoint(const PolicyParams& params, const std::string& path) {
    const auto tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp);
        out << encode_checkpoint(params);
    }
    std::filesystem::rename(tmp, path);
}

PolicyParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace adaptagent::policy
