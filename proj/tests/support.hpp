#pragma once

// Fixtures and reference implementations shared by the unit tests and the
// acceptance runner. The references are written from the metric and update
// definitions directly and do not call into the library's implementations.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adaptagent/evalkit.hpp"
#include "adaptagent/icl.hpp"
#include "adaptagent/policy.hpp"
#include "adaptagent/webenv.hpp"

namespace testsupport {

using namespace adaptagent;

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("adaptagent_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------- prompt skeleton

inline std::vector<icl::DemoText> skeleton_demos(std::size_t count, std::size_t steps = 2) {
    std::vector<icl::DemoText> out;
    for (std::size_t d = 0; d < count; ++d) {
        icl::DemoText demo;
        demo.website_name = "<website_name>";
        demo.task_description = "<task_description>";
        for (std::size_t k = 1; k <= steps; ++k) {
            const auto i = std::to_string(k);
            demo.steps.push_back({"<element_name_" + i + ">", "<action_type_" + i + ">",
                                  "<value_if_applicable_" + i + ">", "<snapshot_" + i + ">"});
        }
        out.push_back(demo);
    }
    return out;
}

inline std::string golden_name(int n, Modality modality) {
    return "prompt_n" + std::to_string(n) + (modality == Modality::multimodal ? "_multimodal" : "_text") + ".txt";
}

inline std::string skeleton_prompt(int n, Modality modality) {
    return icl::render(icl::build_prompt(icl::kBasePrompt, skeleton_demos(3), n, modality));
}

// ---------------------------------------------------------------- metric references

inline std::vector<std::string> ref_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    // Whitespace-separated words, lowercased, ASCII punctuation dropped.
    std::istringstream words(s);
    std::string word;
    while (words >> word) {
        for (char ch : word) {
            const auto c = static_cast<unsigned char>(ch);
            if (c < 128 && std::ispunct(c)) continue;
            cur += static_cast<char>(std::tolower(c));
        }
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Token F1 over bags, with the conventions: different operations score 0,
// two empty values score 1, one empty value scores 0.
inline double ref_op_f1(const webenv::Action& pred, const webenv::Action& gold) {
    if (pred.operation != gold.operation) return 0.0;
    const auto p = ref_tokens(pred.value.value_or(""));
    const auto g = ref_tokens(gold.value.value_or(""));
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    std::map<std::string, int> pc, gc;
    for (const auto& t : p) ++pc[t];
    for (const auto& t : g) ++gc[t];
    int common = 0;
    for (const auto& [t, c] : pc) {
        auto it = gc.find(t);
        if (it != gc.end()) common += std::min(c, it->second);
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(p.size());
    const double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2 * precision * recall / (precision + recall);
}

struct RefMetrics {
    double ele_acc = 0, op_f1 = 0, step_sr = 0, overall_sr = 0;
};

// Element, operation and, when the gold action takes one, the value all
// match exactly.
inline bool ref_step_correct(const std::optional<webenv::Action>& pred, const webenv::Action& gold) {
    if (!pred || pred->element_id != gold.element_id || pred->operation != gold.operation) return false;
    const bool takes_value = gold.operation == Operation::type || gold.operation == Operation::select;
    return !takes_value || pred->value == gold.value;
}

// Per-task means of the raw step judgements, then the mean over tasks that
// have steps. Recomputes every judgement from pred and gold.
inline RefMetrics ref_metrics(const std::vector<evalkit::TaskReport>& reports, evalkit::SuccessMode mode) {
    RefMetrics m;
    double n_tasks = 0, overall = 0, n_overall = 0;
    for (const auto& r : reports) {
        if (mode == evalkit::SuccessMode::live) {
            overall += r.live_success.value_or(false) ? 1 : 0;
            n_overall += 1;
        }
        if (r.steps.empty()) continue;
        double ele = 0, f1 = 0, ssr = 0;
        bool all = true;
        for (const auto& s : r.steps) {
            const bool ok = ref_step_correct(s.pred, s.gold);
            ele += s.pred && s.pred->element_id == s.gold.element_id ? 1 : 0;
            f1 += s.pred ? ref_op_f1(*s.pred, s.gold) : 0.0;
            ssr += ok ? 1 : 0;
            all = all && ok;
        }
        const double n = static_cast<double>(r.steps.size());
        m.ele_acc += ele / n;
        m.op_f1 += f1 / n;
        m.step_sr += ssr / n;
        n_tasks += 1;
        if (mode == evalkit::SuccessMode::trajectory) {
            overall += all ? 1 : 0;
            n_overall += 1;
        }
    }
    m.ele_acc /= n_tasks;
    m.op_f1 /= n_tasks;
    m.step_sr /= n_tasks;
    m.overall_sr = overall / n_overall;
    return m;
}

// Jaccard of unigram sets, both empty counting as identical.
inline double ref_jaccard(const std::string& a, const std::string& b) {
    const auto ta = ref_tokens(a), tb = ref_tokens(b);
    const std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

// Highest Jaccard between a train task and a cross-task task of the same website.
inline double ref_max_cross_jaccard(const std::vector<evalkit::TaskRef>& train,
                                    const std::vector<evalkit::TaskRef>& cross_task) {
    double best = 0;
    for (const auto& a : train) {
        for (const auto& b : cross_task) {
            if (a.website_id == b.website_id) best = std::max(best, ref_jaccard(a.instruction, b.instruction));
        }
    }
    return best;
}

// ---------------------------------------------------------------- quadratic probe

// L_i(theta) = 0.5 * (theta - c_i)^2, scalar parameters.
struct QuadraticLearner {
    using params_type = double;
    using example_type = double;  // the centre c_i
    using gradient_type = double;

    double gradient(double theta, std::span<const double> batch) const {
        double g = 0;
        for (double c : batch) g += theta - c;
        return g / static_cast<double>(batch.size());
    }
    double update(double theta, double g, double lr) const { return theta - lr * g; }
    double accumulate(double a, double b) const { return a + b; }
};

// ---------------------------------------------------------------- finite differences

// Central differences of the mean batch loss in every parameter.
inline std::vector<double> fd_gradient(const policy::PolicyParams& params, std::span<const policy::StepExample> batch,
                                       double h) {
    auto flat = params.tensors.flatten();
    std::vector<double> out(flat.size());
    auto probe = params;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double keep = flat[i];
        flat[i] = keep + h;
        probe.tensors.assign(flat);
        const double up = policy::mean_loss(probe, batch);
        flat[i] = keep - h;
        probe.tensors.assign(flat);
        const double down = policy::mean_loss(probe, batch);
        flat[i] = keep;
        out[i] = (up - down) / (2 * h);
    }
    return out;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

// Parameters with entries around +-1 so every tanh unit is off its linear range.
inline policy::PolicyParams spread_params(std::uint64_t seed, int hidden) {
    auto p = policy::init_params(seed, hidden);
    auto flat = p.tensors.flatten();
    for (auto& v : flat) v *= 20.0;
    p.tensors.assign(flat);
    return p;
}

}  // namespace testsupport
