#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fractalnet/arch.hpp"

namespace fractalnet {

struct SearchSpace {
    std::vector<int> depth_n_choices;
    std::vector<int> num_columns_choices;
    std::vector<Activation> activation_choices;
    std::vector<Norm> norm_choices;
    std::vector<float> dropout_choices;
    std::vector<std::vector<PostConvOp>> order_choices;
    // fixed across the grid
    int kernel_size = 3;
    int base_channels = 16;
    ChannelGrowth channel_growth = ChannelGrowth::double_per_block;
    int num_classes = 10;
    std::array<int, 3> input_shape{3, 32, 32};
};

inline std::vector<std::vector<PostConvOp>> all_order_permutations() {
    using P = PostConvOp;
    return {
        {P::norm, P::activation, P::dropout}, {P::norm, P::dropout, P::activation},
        {P::activation, P::norm, P::dropout}, {P::activation, P::dropout, P::norm},
        {P::dropout, P::norm, P::activation}, {P::dropout, P::activation, P::norm},
    };
}

// num_columns=1 (the plain single-column network) is part of the grid; it is
// the degenerate fractal and doubles as the plain-network baseline.
inline SearchSpace default_search_space() {
    SearchSpace s;
    s.depth_n_choices = {1, 2, 3, 4};
    s.num_columns_choices = {1, 2, 3, 4};
    s.activation_choices = {Activation::relu, Activation::leaky_relu, Activation::gelu,
                            Activation::silu};
    s.norm_choices = {Norm::batch_norm, Norm::none};
    s.dropout_choices = {0.0f, 0.2f, 0.4f};
    s.order_choices = all_order_permutations();
    return s;
}

inline void validate(const SearchSpace& s) {
    if (s.depth_n_choices.empty() || s.num_columns_choices.empty() ||
        s.activation_choices.empty() || s.norm_choices.empty() || s.dropout_choices.empty() ||
        s.order_choices.empty())
        throw FormatError("search space: all choice sets must be non-empty");
}

// Drop inactive ops from the order; idempotent.
inline ConvUnitSpec canonicalize(const ConvUnitSpec& unit) {
    ConvUnitSpec c = unit;
    c.post_conv_order.clear();
    for (PostConvOp op : unit.post_conv_order) {
        if (op == PostConvOp::norm && unit.norm == Norm::none) continue;
        if (op == PostConvOp::dropout && unit.dropout_p == 0.0f) continue;
        c.post_conv_order.push_back(op);
    }
    return c;
}

// fixed result-name prefix
inline constexpr const char* kModelNamePrefix = "img-classification_cifar-10_acc_FractalNet-";

inline std::string model_name(const ModelSpec& spec) {
    std::ostringstream os;
    os << kModelNamePrefix << "N" << spec.depth_n << "-C" << spec.num_columns << "-"
       << to_string(spec.unit.activation) << "-"
       << (spec.unit.norm == Norm::batch_norm ? "bn" : "nonorm") << "-do";
    os.precision(2);
    os << std::fixed << spec.unit.dropout_p << "-ord_";
    if (spec.unit.post_conv_order.empty()) os << "0";
    for (PostConvOp op : spec.unit.post_conv_order) os << op_letter(op);
    return os.str();
}

struct ManifestEntry {
    ModelSpec spec;
    std::string model_id;
    std::string name;
    bool feasible = true;
    std::string infeasible_reason;

    bool operator==(const ManifestEntry&) const = default;
};

// Lexicographic over (depth, columns, activation, norm, dropout, order)
// choice indices; duplicates after canonicalization keep their first
// occurrence. Infeasible specs are kept and flagged.
inline std::vector<ManifestEntry> enumerate(const SearchSpace& space) {
    validate(space);
    std::vector<ManifestEntry> out;
    std::set<std::string> seen;
    for (int depth : space.depth_n_choices)
        for (int cols : space.num_columns_choices)
            for (Activation act : space.activation_choices)
                for (Norm norm : space.norm_choices)
                    for (float drop : space.dropout_choices)
                        for (const auto& order : space.order_choices) {
                            ModelSpec s;
                            s.depth_n = depth;
                            s.num_columns = cols;
                            s.unit.kernel_size = space.kernel_size;
                            s.unit.norm = norm;
                            s.unit.activation = act;
                            s.unit.dropout_p = drop;
                            s.unit.post_conv_order = order;
                            s.base_channels = space.base_channels;
                            s.channel_growth = space.channel_growth;
                            s.num_classes = space.num_classes;
                            s.input_shape = space.input_shape;
                            s.unit = canonicalize(s.unit);

                            ManifestEntry e;
                            e.spec = s;
                            e.model_id = model_id(s);
                            if (!seen.insert(e.model_id).second) continue;
                            e.name = model_name(s);
                            try {
                                build_model(s);
                            } catch (const ShapeError& ex) {
                                e.feasible = false;
                                e.infeasible_reason = ex.what();
                            }
                            out.push_back(std::move(e));
                        }
    return out;
}

// ---------------------------------------------------------------------------
// manifest / search-space files
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ManifestEntry& e) {
    nlohmann::json j = to_json(e.spec);
    j["name"] = e.name;
    j["feasible"] = e.feasible;
    if (!e.feasible) j["infeasible_reason"] = e.infeasible_reason;
    return j;
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    ManifestEntry e;
    e.spec = spec_from_json(j);
    e.model_id = model_id(e.spec);
    e.name = j.at("name").get<std::string>();
    e.feasible = j.at("feasible").get<bool>();
    if (j.contains("infeasible_reason"))
        e.infeasible_reason = j.at("infeasible_reason").get<std::string>();
    return e;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back(to_json(e));
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open manifest for writing: " + path);
    f << arr.dump(1) << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open manifest: " + path);
    nlohmann::json arr;
    try {
        f >> arr;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("manifest parse error: ") + ex.what());
    }
    std::vector<ManifestEntry> out;
    for (const auto& j : arr) out.push_back(manifest_entry_from_json(j));
    return out;
}

inline SearchSpace search_space_from_json(const nlohmann::json& j) {
    SearchSpace s = default_search_space();
    if (j.contains("depth_n_choices")) s.depth_n_choices = j["depth_n_choices"].get<std::vector<int>>();
    if (j.contains("num_columns_choices"))
        s.num_columns_choices = j["num_columns_choices"].get<std::vector<int>>();
    if (j.contains("activation_choices")) {
        s.activation_choices.clear();
        for (const auto& a : j["activation_choices"])
            s.activation_choices.push_back(activation_from_string(a.get<std::string>()));
    }
    if (j.contains("norm_choices")) {
        s.norm_choices.clear();
        for (const auto& n : j["norm_choices"]) {
            const std::string v = n.get<std::string>();
            if (v == "batch_norm") s.norm_choices.push_back(Norm::batch_norm);
            else if (v == "none") s.norm_choices.push_back(Norm::none);
            else throw FormatError("unknown norm choice: " + v);
        }
    }
    if (j.contains("dropout_choices")) s.dropout_choices = j["dropout_choices"].get<std::vector<float>>();
    if (j.contains("order_choices")) {
        s.order_choices.clear();
        for (const auto& o : j["order_choices"]) {
            std::vector<PostConvOp> order;
            for (char c : o.get<std::string>()) {
                if (c == 'n') order.push_back(PostConvOp::norm);
                else if (c == 'a') order.push_back(PostConvOp::activation);
                else if (c == 'd') order.push_back(PostConvOp::dropout);
                else throw FormatError("unknown op letter in order choice");
            }
            s.order_choices.push_back(std::move(order));
        }
    }
    if (j.contains("kernel_size")) s.kernel_size = j["kernel_size"].get<int>();
    if (j.contains("base_channels")) s.base_channels = j["base_channels"].get<int>();
    if (j.contains("channel_growth")) {
        const std::string g = j["channel_growth"].get<std::string>();
        if (g == "double_per_block") s.channel_growth = ChannelGrowth::double_per_block;
        else if (g == "constant") s.channel_growth = ChannelGrowth::constant;
        else throw FormatError("unknown channel_growth: " + g);
    }
    if (j.contains("num_classes")) s.num_classes = j["num_classes"].get<int>();
    if (j.contains("input_shape")) {
        const auto v = j["input_shape"].get<std::vector<int>>();
        if (v.size() != 3) throw FormatError("input_shape must have 3 entries");
        s.input_shape = {v[0], v[1], v[2]};
    }
    return s;
}

inline SearchSpace read_search_space(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open search space config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("search space parse error: ") + ex.what());
    }
    return search_space_from_json(j);
}

}  // namespace fractalnet
