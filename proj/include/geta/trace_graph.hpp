#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace geta::graph {

struct QuantTag {
    std::string scope;      // "weight" or "activation"
    std::string branch_id;  // vertices sharing an id form one branch

    bool operator==(const QuantTag&) const = default;
};

struct Vertex {
    std::string id;
    std::string op;
    std::map<std::string, std::vector<std::size_t>> params;  // name -> dims
    std::optional<QuantTag> quant_tag;
    nlohmann::json attrs = nlohmann::json::object();

    std::size_t attr_or(const std::string& key, std::size_t fallback) const;
    std::string attr_or(const std::string& key, const std::string& fallback) const;

    bool operator==(const Vertex& o) const {
        return id == o.id && op == o.op && params == o.params &&
               quant_tag == o.quant_tag && attrs == o.attrs;
    }
};

/// Serialized computation graph of a quantization-aware network.
struct TraceGraph {
    std::vector<Vertex> vertices;
    std::vector<std::pair<std::string, std::string>> edges;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    const Vertex& vertex(const std::string& id) const;
    Vertex& vertex(const std::string& id);
    bool has_vertex(const std::string& id) const;
    std::vector<std::string> predecessors(const std::string& id) const;
    std::vector<std::string> successors(const std::string& id) const;

    /// Vertex ids in a valid evaluation order (edge-stable Kahn ordering).
    std::vector<std::string> topological_order() const;

    /// Checks ids, edges, acyclicity and output reachability; throws a
    /// distinct Graph diagnostic per violation.
    void validate() const;

    bool operator==(const TraceGraph& o) const {
        return vertices == o.vertices && edges == o.edges && inputs == o.inputs &&
               outputs == o.outputs;
    }
};

TraceGraph load_trace_graph(const std::string& json_text);
TraceGraph load_trace_graph_file(const std::string& path);
nlohmann::json to_json(const TraceGraph& g);

}  // namespace geta::graph
