#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "geta/tensor.hpp"
#include "geta/trace_graph.hpp"

// Quantization-aware dependency analysis: locate quantizer subgraphs
// (attached branches feed a layer's weights, inserted branches sit between an
// activation and its consumer), collapse them so the graph looks like a
// plain network again, then derive the pruning search space of minimally
// removable channel/head groups.

namespace geta::graph {

struct AttachedBranch {
    std::string root;                    // compute vertex consuming the branch
    std::string branch_id;
    std::vector<std::string> vertices;   // branch members, declaration order
};

struct InsertedBranch {
    std::string root;                    // activation producer
    std::string end;                     // consumer after the branch
    std::string branch_id;
    std::vector<std::string> vertices;
};

std::vector<AttachedBranch> find_attached_branches(const TraceGraph& g);
std::vector<InsertedBranch> find_inserted_branches(const TraceGraph& g);

/// Pattern-matching fallback for graphs without quant_tags: recognizes
/// connected chains of quantizer micro-ops (abs/pow/clip/div/round/mul/sign/
/// quant_param) and tags them as branches. No-op when any tag is present.
TraceGraph tag_quant_chains(const TraceGraph& g);

/// Collapses every attached branch into its root vertex and every inserted
/// branch into its end vertex (reconnecting root -> end). The result carries
/// no quant-tagged vertices; weight/bias params move onto the merged vertex
/// and a weight_quant/act_quant attr records the branch id.
TraceGraph build_qadg(const TraceGraph& g);

struct GroupMember {
    std::string vertex;
    std::string param;
    std::size_t begin = 0;  // slice [begin, end) along the prunable dimension
    std::size_t end = 0;
};

struct ParamGroup {
    int group_id = 0;
    bool removable = false;
    std::vector<GroupMember> members;
};

/// The pruning search space over a merged graph, plus the channel-to-group
/// maps needed to physically rebuild a pruned subnetwork.
struct PruningSpace {
    std::vector<ParamGroup> groups;
    TraceGraph graph;
    std::map<std::string, std::vector<int>> out_channel_group;
    std::map<std::string, std::vector<int>> in_channel_group;

    std::size_t removable_count() const;
    const ParamGroup& group(int id) const;
};

/// Dependency analysis over {linear, conv2d, batchnorm, relu, add, concat,
/// flatten, input, output}. Producers feeding a common elementwise add share
/// groups; affine/elementwise vertices inherit their producer's groups;
/// vertices feeding a declared output are not removable; linear vertices with
/// attrs.group_size=h group h consecutive output units.
PruningSpace dependency_groups(const TraceGraph& merged);

nlohmann::json pruning_space_to_json(const PruningSpace& space);

/// Parameter tensors keyed by vertex id and parameter name.
using ParamStore = std::map<std::string, std::map<std::string, Tensor>>;

/// Physically removes the given (already zeroed, removable) groups: slices
/// the owning parameters, drops the matching consumer input slices, and
/// returns the reduced graph plus parameter store.
std::pair<TraceGraph, ParamStore> extract_subnet(const PruningSpace& space,
                                                 const std::set<int>& zero_groups,
                                                 const ParamStore& params);

}  // namespace geta::graph
