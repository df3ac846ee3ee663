#include "geta/trace_graph.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "geta/error.hpp"

namespace geta::graph {

std::size_t Vertex::attr_or(const std::string& key, std::size_t fallback) const {
    if (attrs.contains(key)) return attrs.at(key).get<std::size_t>();
    return fallback;
}

std::string Vertex::attr_or(const std::string& key,
                            const std::string& fallback) const {
    if (attrs.contains(key)) return attrs.at(key).get<std::string>();
    return fallback;
}

const Vertex& TraceGraph::vertex(const std::string& id) const {
    for (const auto& v : vertices)
        if (v.id == id) return v;
    throw Error(ErrorKind::Graph, "no vertex with id '" + id + "'");
}

Vertex& TraceGraph::vertex(const std::string& id) {
    return const_cast<Vertex&>(static_cast<const TraceGraph*>(this)->vertex(id));
}

bool TraceGraph::has_vertex(const std::string& id) const {
    return std::any_of(vertices.begin(), vertices.end(),
                       [&](const Vertex& v) { return v.id == id; });
}

std::vector<std::string> TraceGraph::predecessors(const std::string& id) const {
    std::vector<std::string> out;
    for (const auto& [src, dst] : edges)
        if (dst == id) out.push_back(src);
    return out;
}

std::vector<std::string> TraceGraph::successors(const std::string& id) const {
    std::vector<std::string> out;
    for (const auto& [src, dst] : edges)
        if (src == id) out.push_back(dst);
    return out;
}

std::vector<std::string> TraceGraph::topological_order() const {
    std::map<std::string, int> indegree;
    for (const auto& v : vertices) indegree[v.id] = 0;
    for (const auto& [src, dst] : edges) {
        (void)src;
        ++indegree[dst];
    }
    // Ready queue keyed by vertex declaration order for determinism.
    std::vector<std::string> order;
    std::vector<std::string> ready;
    for (const auto& v : vertices)
        if (indegree[v.id] == 0) ready.push_back(v.id);
    while (!ready.empty()) {
        const std::string id = ready.front();
        ready.erase(ready.begin());
        order.push_back(id);
        for (const auto& nxt : successors(id)) {
            if (--indegree[nxt] == 0) ready.push_back(nxt);
        }
    }
    return order;
}

void TraceGraph::validate() const {
    std::set<std::string> ids;
    for (const auto& v : vertices) {
        if (!ids.insert(v.id).second) {
            throw Error(ErrorKind::Graph, "duplicate vertex id '" + v.id + "'");
        }
        if (v.quant_tag) {
            if (v.quant_tag->scope != "weight" && v.quant_tag->scope != "activation") {
                throw Error(ErrorKind::Graph,
                            "quant_tag scope must be weight|activation on '" +
                                v.id + "'");
            }
        }
    }
    for (const auto& [src, dst] : edges) {
        if (!ids.count(src) || !ids.count(dst)) {
            throw Error(ErrorKind::Graph, "dangling edge " + src + " -> " + dst);
        }
    }
    for (const auto& id : inputs) {
        if (!ids.count(id))
            throw Error(ErrorKind::Graph, "declared input '" + id + "' missing");
    }
    for (const auto& id : outputs) {
        if (!ids.count(id))
            throw Error(ErrorKind::Graph, "declared output '" + id + "' missing");
    }
    if (topological_order().size() != vertices.size()) {
        throw Error(ErrorKind::Graph, "cycle detected in trace graph");
    }
    // Every output must be reachable from some input.
    std::set<std::string> reach(inputs.begin(), inputs.end());
    for (const auto& id : topological_order()) {
        if (reach.count(id)) {
            for (const auto& nxt : successors(id)) reach.insert(nxt);
        } else {
            for (const auto& pre : predecessors(id)) {
                if (reach.count(pre)) {
                    reach.insert(id);
                    for (const auto& nxt : successors(id)) reach.insert(nxt);
                    break;
                }
            }
        }
    }
    for (const auto& id : outputs) {
        if (!reach.count(id)) {
            throw Error(ErrorKind::Graph,
                        "output '" + id + "' unreachable from inputs");
        }
    }
}

namespace {

TraceGraph parse(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("vertices") || !doc.contains("edges")) {
        throw Error(ErrorKind::Graph,
                    "schema violation: expected object with vertices/edges");
    }
    TraceGraph g;
    for (const auto& jv : doc.at("vertices")) {
        if (!jv.is_object() || !jv.contains("id") || !jv.contains("op")) {
            throw Error(ErrorKind::Graph,
                        "schema violation: vertex needs 'id' and 'op'");
        }
        Vertex v;
        v.id = jv.at("id").get<std::string>();
        v.op = jv.at("op").get<std::string>();
        if (jv.contains("params")) {
            if (!jv.at("params").is_object()) {
                throw Error(ErrorKind::Graph,
                            "schema violation: params must map name -> dims on '" +
                                v.id + "'");
            }
            for (const auto& [name, dims] : jv.at("params").items()) {
                std::vector<std::size_t> d;
                for (const auto& x : dims) {
                    const auto dim = x.get<long long>();
                    if (dim <= 0) {
                        throw Error(ErrorKind::Graph,
                                    "schema violation: nonpositive dim on '" +
                                        v.id + "'");
                    }
                    d.push_back(static_cast<std::size_t>(dim));
                }
                v.params[name] = std::move(d);
            }
        }
        if (jv.contains("quant_tag") && !jv.at("quant_tag").is_null()) {
            const auto& t = jv.at("quant_tag");
            if (!t.contains("scope") || !t.contains("branch_id")) {
                throw Error(ErrorKind::Graph,
                            "schema violation: quant_tag needs scope/branch_id on '" +
                                v.id + "'");
            }
            v.quant_tag = QuantTag{t.at("scope").get<std::string>(),
                                   t.at("branch_id").get<std::string>()};
        }
        if (jv.contains("attrs")) v.attrs = jv.at("attrs");
        g.vertices.push_back(std::move(v));
    }
    for (const auto& je : doc.at("edges")) {
        if (!je.is_array() || je.size() != 2) {
            throw Error(ErrorKind::Graph,
                        "schema violation: edge must be [src, dst]");
        }
        g.edges.emplace_back(je.at(0).get<std::string>(),
                             je.at(1).get<std::string>());
    }
    if (doc.contains("inputs"))
        g.inputs = doc.at("inputs").get<std::vector<std::string>>();
    if (doc.contains("outputs"))
        g.outputs = doc.at("outputs").get<std::vector<std::string>>();
    g.validate();
    return g;
}

}  // namespace

TraceGraph load_trace_graph(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Graph,
                    std::string("schema violation: not valid JSON: ") + e.what());
    }
    return parse(doc);
}

TraceGraph load_trace_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Config, "cannot open trace graph '" + path + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return load_trace_graph(ss.str());
}

nlohmann::json to_json(const TraceGraph& g) {
    nlohmann::json doc;
    doc["vertices"] = nlohmann::json::array();
    for (const auto& v : g.vertices) {
        nlohmann::json jv;
        jv["id"] = v.id;
        jv["op"] = v.op;
        if (!v.params.empty()) {
            nlohmann::json p = nlohmann::json::object();
            for (const auto& [name, dims] : v.params) p[name] = dims;
            jv["params"] = p;
        }
        if (v.quant_tag) {
            jv["quant_tag"] = {{"scope", v.quant_tag->scope},
                               {"branch_id", v.quant_tag->branch_id}};
        }
        if (!v.attrs.empty()) jv["attrs"] = v.attrs;
        doc["vertices"].push_back(jv);
    }
    doc["edges"] = nlohmann::json::array();
    for (const auto& [src, dst] : g.edges) {
        doc["edges"].push_back(nlohmann::json::array({src, dst}));
    }
    doc["inputs"] = g.inputs;
    doc["outputs"] = g.outputs;
    return doc;
}

}  // namespace geta::graph
