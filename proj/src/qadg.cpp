#include "geta/qadg.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>

#include "geta/error.hpp"

namespace geta::graph {

namespace {

const std::set<std::string> kQuantMicroOps = {
    "abs", "pow", "clip", "div", "round", "mul", "sign", "quant_param"};

bool has_any_tag(const TraceGraph& g) {
    return std::any_of(g.vertices.begin(), g.vertices.end(),
                       [](const Vertex& v) { return v.quant_tag.has_value(); });
}

int declaration_index(const TraceGraph& g, const std::string& id) {
    for (std::size_t i = 0; i < g.vertices.size(); ++i)
        if (g.vertices[i].id == id) return static_cast<int>(i);
    return -1;
}

// Branch members grouped by branch id, in declaration order.
std::map<std::string, std::vector<std::string>> collect_branches(
    const TraceGraph& g, const std::string& scope) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& v : g.vertices) {
        if (v.quant_tag && v.quant_tag->scope == scope) {
            out[v.quant_tag->branch_id].push_back(v.id);
        }
    }
    return out;
}

}  // namespace

std::vector<AttachedBranch> find_attached_branches(const TraceGraph& g) {
    g.validate();
    std::vector<AttachedBranch> result;
    for (const auto& [bid, members] : collect_branches(g, "weight")) {
        const std::set<std::string> member_set(members.begin(), members.end());
        std::set<std::string> roots;
        for (const auto& [src, dst] : g.edges) {
            if (member_set.count(src) && !member_set.count(dst)) roots.insert(dst);
            if (!member_set.count(src) && member_set.count(dst)) {
                throw Error(ErrorKind::Graph,
                            "malformed weight branch '" + bid +
                                "': external edge into the branch from '" + src +
                                "'");
            }
        }
        if (roots.size() != 1) {
            throw Error(ErrorKind::Graph,
                        "malformed weight branch '" + bid + "': expected one "
                        "consuming compute vertex, found " +
                            std::to_string(roots.size()));
        }
        result.push_back(AttachedBranch{*roots.begin(), bid, members});
    }
    std::sort(result.begin(), result.end(),
              [&](const AttachedBranch& a, const AttachedBranch& b) {
                  return declaration_index(g, a.vertices.front()) <
                         declaration_index(g, b.vertices.front());
              });
    return result;
}

std::vector<InsertedBranch> find_inserted_branches(const TraceGraph& g) {
    g.validate();
    std::vector<InsertedBranch> result;
    for (const auto& [bid, members] : collect_branches(g, "activation")) {
        const std::set<std::string> member_set(members.begin(), members.end());
        std::set<std::string> roots, ends;
        for (const auto& [src, dst] : g.edges) {
            if (!member_set.count(src) && member_set.count(dst)) roots.insert(src);
            if (member_set.count(src) && !member_set.count(dst)) ends.insert(dst);
        }
        if (roots.size() != 1 || ends.size() != 1) {
            throw Error(ErrorKind::Graph,
                        "malformed activation branch '" + bid +
                            "': chain must connect one producer to one consumer");
        }
        result.push_back(InsertedBranch{*roots.begin(), *ends.begin(), bid, members});
    }
    std::sort(result.begin(), result.end(),
              [&](const InsertedBranch& a, const InsertedBranch& b) {
                  return declaration_index(g, a.vertices.front()) <
                         declaration_index(g, b.vertices.front());
              });
    return result;
}

TraceGraph tag_quant_chains(const TraceGraph& g) {
    if (has_any_tag(g)) return g;
    TraceGraph out = g;

    // Weakly connected components among quantizer micro-ops.
    std::map<std::string, std::string> comp;  // vertex -> component root
    std::function<std::string(const std::string&)> find =
        [&](const std::string& x) -> std::string {
        if (comp[x] == x) return x;
        return comp[x] = find(comp[x]);
    };
    for (const auto& v : out.vertices) {
        if (kQuantMicroOps.count(v.op)) comp[v.id] = v.id;
    }
    for (const auto& [src, dst] : out.edges) {
        if (comp.count(src) && comp.count(dst)) {
            comp[find(src)] = find(dst);
        }
    }
    std::map<std::string, std::vector<std::string>> components;
    for (const auto& v : out.vertices) {
        if (comp.count(v.id)) components[find(v.id)].push_back(v.id);
    }
    // Deterministic order by first declaration.
    std::vector<std::vector<std::string>> ordered;
    for (auto& [root, members] : components) {
        (void)root;
        ordered.push_back(members);
    }
    std::sort(ordered.begin(), ordered.end(),
              [&](const auto& a, const auto& b) {
                  return declaration_index(out, a.front()) <
                         declaration_index(out, b.front());
              });

    int wseq = 0, aseq = 0;
    for (const auto& members : ordered) {
        const std::set<std::string> member_set(members.begin(), members.end());
        std::set<std::string> external_in, external_out;
        for (const auto& [src, dst] : out.edges) {
            if (!member_set.count(src) && member_set.count(dst))
                external_in.insert(src);
            if (member_set.count(src) && !member_set.count(dst))
                external_out.insert(dst);
        }
        QuantTag tag;
        if (external_in.empty() && external_out.size() == 1) {
            tag = QuantTag{"weight", "auto_w" + std::to_string(wseq++)};
        } else if (external_in.size() == 1 && external_out.size() == 1) {
            tag = QuantTag{"activation", "auto_a" + std::to_string(aseq++)};
        } else {
            throw Error(ErrorKind::Graph,
                        "malformed quantizer chain at '" + members.front() +
                            "': cannot classify as attached or inserted");
        }
        for (const auto& id : members) out.vertex(id).quant_tag = tag;
    }
    return out;
}

namespace {

void remove_vertices(TraceGraph& g, const std::set<std::string>& ids) {
    g.vertices.erase(std::remove_if(g.vertices.begin(), g.vertices.end(),
                                    [&](const Vertex& v) {
                                        return ids.count(v.id) > 0;
                                    }),
                     g.vertices.end());
    g.edges.erase(std::remove_if(g.edges.begin(), g.edges.end(),
                                 [&](const auto& e) {
                                     return ids.count(e.first) ||
                                            ids.count(e.second);
                                 }),
                  g.edges.end());
}

void transfer_layer_params(TraceGraph& g, const std::vector<std::string>& members,
                           const std::string& target) {
    Vertex& t = g.vertex(target);
    for (const auto& mid : members) {
        const Vertex& m = g.vertex(mid);
        for (const auto& [name, dims] : m.params) {
            if (name != "weight" && name != "bias") continue;  // quantizer scalars drop
            if (t.params.count(name)) {
                throw Error(ErrorKind::Graph,
                            "merge would overwrite param '" + name + "' on '" +
                                target + "'");
            }
            t.params[name] = dims;
        }
    }
}

}  // namespace

TraceGraph build_qadg(const TraceGraph& g) {
    g.validate();
    TraceGraph work = has_any_tag(g) ? g : tag_quant_chains(g);

    for (const auto& branch : find_attached_branches(work)) {
        transfer_layer_params(work, branch.vertices, branch.root);
        work.vertex(branch.root).attrs["weight_quant"] = branch.branch_id;
        remove_vertices(work, {branch.vertices.begin(), branch.vertices.end()});
    }
    for (const auto& branch : find_inserted_branches(work)) {
        transfer_layer_params(work, branch.vertices, branch.end);
        work.vertex(branch.end).attrs["act_quant"] = branch.branch_id;
        remove_vertices(work, {branch.vertices.begin(), branch.vertices.end()});
        const auto edge = std::make_pair(branch.root, branch.end);
        if (std::find(work.edges.begin(), work.edges.end(), edge) ==
            work.edges.end()) {
            work.edges.push_back(edge);
        }
    }
    work.validate();
    return work;
}

// ---------------------------------------------------------------------------
// Dependency analysis
// ---------------------------------------------------------------------------

namespace {

struct UnitEntry {
    std::string stem;
    std::size_t begin = 0;  // unit range along the stem's prunable dim
    std::size_t end = 0;
    int declaration = 0;
};

struct UnionFind {
    std::vector<int> parent;
    int add() {
        parent.push_back(static_cast<int>(parent.size()));
        return parent.back();
    }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

struct Analysis {
    const TraceGraph& g;
    std::vector<UnitEntry> entries;
    UnionFind uf;
    std::set<int> poisoned;          // classes glued to non-prunable channels
    std::set<int> output_locked;     // classes feeding a declared output
    std::map<std::string, std::vector<int>> labels;   // vertex -> per-channel entry id (-1 = none)
    std::map<std::string, std::vector<int>> in_labels;  // stems and batchnorm
    std::vector<std::pair<int, GroupMember>> pending_members;  // affine followers

    explicit Analysis(const TraceGraph& graph) : g(graph) {}

    int register_units(const std::string& stem, std::size_t begin,
                       std::size_t end) {
        const int id = uf.add();
        entries.push_back(
            UnitEntry{stem, begin, end, declaration_index(g, stem)});
        return id;
    }

    std::vector<int> producer_labels(const std::string& id,
                                     std::size_t want = 0) {
        const auto preds = g.predecessors(id);
        if (preds.size() != 1) {
            throw Error(ErrorKind::Graph,
                        "vertex '" + id + "' expects exactly one producer");
        }
        std::vector<int> lab = labels[preds[0]];
        if (lab.empty() && want > 0) lab.assign(want, -1);
        if (want > 0 && lab.size() != want) {
            throw Error(ErrorKind::Graph,
                        "channel count mismatch into '" + id + "': have " +
                            std::to_string(lab.size()) + ", need " +
                            std::to_string(want));
        }
        return lab;
    }
};

const std::vector<std::size_t>& param_dims(const Vertex& v,
                                           const std::string& name) {
    auto it = v.params.find(name);
    if (it == v.params.end()) {
        throw Error(ErrorKind::Graph,
                    "vertex '" + v.id + "' (" + v.op + ") lacks param '" + name +
                        "'");
    }
    return it->second;
}

}  // namespace

std::size_t PruningSpace::removable_count() const {
    return static_cast<std::size_t>(
        std::count_if(groups.begin(), groups.end(),
                      [](const ParamGroup& g) { return g.removable; }));
}

const ParamGroup& PruningSpace::group(int id) const {
    for (const auto& g : groups)
        if (g.group_id == id) return g;
    throw Error(ErrorKind::Config, "no group with id " + std::to_string(id));
}

PruningSpace dependency_groups(const TraceGraph& merged) {
    merged.validate();
    if (has_any_tag(merged)) {
        throw Error(ErrorKind::Graph,
                    "dependency analysis expects a merged graph (quantizer "
                    "branches still present)");
    }

    Analysis a(merged);
    for (const auto& id : merged.topological_order()) {
        const Vertex& v = merged.vertex(id);
        if (v.op == "input") {
            a.labels[id] = {};
        } else if (v.op == "linear") {
            const auto& wdims = param_dims(v, "weight");
            if (wdims.size() != 2) {
                throw Error(ErrorKind::Graph,
                            "linear weight must be [out,in] on '" + id + "'");
            }
            const std::size_t out = wdims[0], in = wdims[1];
            a.in_labels[id] = a.producer_labels(id, in);
            const std::size_t h = v.attr_or("group_size", std::size_t{1});
            if (h == 0 || out % h != 0) {
                throw Error(ErrorKind::Graph,
                            "group_size must divide output width on '" + id + "'");
            }
            std::vector<int> lab(out);
            for (std::size_t u = 0; u < out; u += h) {
                const int e = a.register_units(id, u, u + h);
                for (std::size_t i = 0; i < h; ++i) lab[u + i] = e;
            }
            a.labels[id] = std::move(lab);
        } else if (v.op == "conv2d") {
            const auto& wdims = param_dims(v, "weight");
            if (wdims.size() != 4) {
                throw Error(ErrorKind::Graph,
                            "conv2d weight must be [f,c,kh,kw] on '" + id + "'");
            }
            a.in_labels[id] = a.producer_labels(id, wdims[1]);
            std::vector<int> lab(wdims[0]);
            for (std::size_t f = 0; f < wdims[0]; ++f) {
                lab[f] = a.register_units(id, f, f + 1);
            }
            a.labels[id] = std::move(lab);
        } else if (v.op == "batchnorm") {
            const auto& wdims = param_dims(v, "weight");
            const std::size_t c = wdims[0];
            auto lab = a.producer_labels(id, c);
            a.in_labels[id] = lab;
            for (std::size_t i = 0; i < c; ++i) {
                if (lab[i] < 0) continue;
                a.pending_members.emplace_back(
                    lab[i], GroupMember{id, "weight", i, i + 1});
                if (v.params.count("bias")) {
                    a.pending_members.emplace_back(
                        lab[i], GroupMember{id, "bias", i, i + 1});
                }
            }
            a.labels[id] = std::move(lab);
        } else if (v.op == "relu") {
            a.labels[id] = a.producer_labels(id);
        } else if (v.op == "add") {
            const auto preds = merged.predecessors(id);
            if (preds.size() < 2) {
                throw Error(ErrorKind::Graph,
                            "add needs at least two producers on '" + id + "'");
            }
            std::vector<std::vector<int>> ins;
            std::size_t width = 0;
            for (const auto& p : preds) {
                ins.push_back(a.labels[p]);
                width = std::max(width, ins.back().size());
            }
            for (auto& lab : ins) {
                if (lab.empty()) lab.assign(width, -1);
                if (lab.size() != width) {
                    throw Error(ErrorKind::Graph,
                                "add with mismatched channel counts on '" + id +
                                    "'");
                }
            }
            std::vector<int> out(width, -1);
            for (std::size_t i = 0; i < width; ++i) {
                int rep = -1;
                bool has_unknown = false;
                for (const auto& lab : ins) {
                    if (lab[i] < 0) {
                        has_unknown = true;
                    } else if (rep < 0) {
                        rep = lab[i];
                    } else {
                        a.uf.unite(rep, lab[i]);
                    }
                }
                if (rep >= 0 && has_unknown) a.poisoned.insert(a.uf.find(rep));
                out[i] = rep;
            }
            a.labels[id] = std::move(out);
        } else if (v.op == "concat") {
            const auto preds = merged.predecessors(id);
            std::vector<int> out;
            for (const auto& p : preds) {
                const auto& lab = a.labels[p];
                out.insert(out.end(), lab.begin(), lab.end());
            }
            a.labels[id] = std::move(out);
        } else if (v.op == "flatten") {
            const std::size_t per = v.attr_or("per_channel", std::size_t{1});
            auto lab = a.producer_labels(id);
            std::vector<int> out;
            out.reserve(lab.size() * per);
            for (int e : lab) {
                out.insert(out.end(), per, e);
            }
            a.labels[id] = std::move(out);
        } else if (v.op == "output") {
            // Everything reaching a declared output stays; lock and lump the
            // producing classes.
            for (const auto& p : merged.predecessors(id)) {
                const auto& lab = a.labels[p];
                int rep = -1;
                for (int e : lab) {
                    if (e < 0) continue;
                    if (rep < 0) {
                        rep = e;
                    } else {
                        a.uf.unite(rep, e);
                    }
                }
                if (rep >= 0) a.output_locked.insert(a.uf.find(rep));
            }
            a.labels[id] = {};
        } else {
            throw Error(ErrorKind::Graph, "unsupported operator '" + v.op +
                                              "' at vertex '" + id + "'");
        }
    }

    // Re-resolve poison/lock markers after all unions.
    auto resolve_marks = [&](std::set<int>& marks) {
        std::set<int> out;
        for (int m : marks) out.insert(a.uf.find(m));
        marks = std::move(out);
    };
    resolve_marks(a.poisoned);
    resolve_marks(a.output_locked);

    // Gather classes.
    std::map<int, std::vector<int>> classes;  // root -> entry ids
    for (std::size_t e = 0; e < a.entries.size(); ++e) {
        classes[a.uf.find(static_cast<int>(e))].push_back(static_cast<int>(e));
    }
    std::vector<int> roots;
    for (const auto& [root, members] : classes) {
        (void)members;
        roots.push_back(root);
    }
    std::sort(roots.begin(), roots.end(), [&](int x, int y) {
        const auto key = [&](int root) {
            int decl = INT32_MAX;
            std::size_t unit = SIZE_MAX;
            for (int e : classes[root]) {
                if (a.entries[e].declaration < decl ||
                    (a.entries[e].declaration == decl &&
                     a.entries[e].begin < unit)) {
                    decl = a.entries[e].declaration;
                    unit = a.entries[e].begin;
                }
            }
            return std::make_pair(decl, unit);
        };
        return key(x) < key(y);
    });

    PruningSpace space;
    space.graph = merged;
    std::map<int, int> root_to_group;
    for (std::size_t gi = 0; gi < roots.size(); ++gi) {
        const int root = roots[gi];
        ParamGroup grp;
        grp.group_id = static_cast<int>(gi);
        grp.removable = !a.poisoned.count(root) && !a.output_locked.count(root);
        std::vector<int> ordered = classes[root];
        std::sort(ordered.begin(), ordered.end(), [&](int x, int y) {
            return std::make_pair(a.entries[x].declaration, a.entries[x].begin) <
                   std::make_pair(a.entries[y].declaration, a.entries[y].begin);
        });
        for (int e : ordered) {
            const UnitEntry& u = a.entries[e];
            const Vertex& stem = merged.vertex(u.stem);
            grp.members.push_back(GroupMember{u.stem, "weight", u.begin, u.end});
            if (stem.params.count("bias")) {
                grp.members.push_back(GroupMember{u.stem, "bias", u.begin, u.end});
            }
        }
        root_to_group[root] = grp.group_id;
        space.groups.push_back(std::move(grp));
    }
    for (const auto& [entry, member] : a.pending_members) {
        space.groups[root_to_group[a.uf.find(entry)]].members.push_back(member);
    }

    auto to_groups = [&](const std::vector<int>& lab) {
        std::vector<int> out(lab.size(), -1);
        for (std::size_t i = 0; i < lab.size(); ++i) {
            if (lab[i] >= 0) out[i] = root_to_group[a.uf.find(lab[i])];
        }
        return out;
    };
    for (const auto& [id, lab] : a.labels) space.out_channel_group[id] = to_groups(lab);
    for (const auto& [id, lab] : a.in_labels) space.in_channel_group[id] = to_groups(lab);
    return space;
}

nlohmann::json pruning_space_to_json(const PruningSpace& space) {
    nlohmann::json doc;
    doc["groups"] = nlohmann::json::array();
    for (const auto& g : space.groups) {
        nlohmann::json jg;
        jg["group_id"] = g.group_id;
        jg["removable"] = g.removable;
        jg["members"] = nlohmann::json::array();
        for (const auto& m : g.members) {
            jg["members"].push_back({{"vertex", m.vertex},
                                     {"param", m.param},
                                     {"slice", {m.begin, m.end}}});
        }
        doc["groups"].push_back(jg);
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Subnet extraction
// ---------------------------------------------------------------------------

namespace {

Tensor keep_axis(const Tensor& t, std::size_t axis,
                 const std::vector<char>& keep) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= t.shape[i];
    for (std::size_t i = axis + 1; i < t.shape.size(); ++i) inner *= t.shape[i];
    const std::size_t mid = t.shape[axis];
    std::size_t kept = 0;
    for (char k : keep) kept += (k != 0);
    std::vector<std::size_t> shape = t.shape;
    shape[axis] = kept;
    Tensor out(shape);
    std::size_t w = 0;
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t m = 0; m < mid; ++m) {
            if (!keep[m]) continue;
            const double* src = t.data.data() + (o * mid + m) * inner;
            std::copy(src, src + inner, out.data.data() + w);
            w += inner;
        }
    }
    return out;
}

std::vector<char> keep_mask(const std::vector<int>& channel_groups,
                            const std::set<int>& zeroed) {
    std::vector<char> keep(channel_groups.size(), 1);
    for (std::size_t i = 0; i < channel_groups.size(); ++i) {
        if (channel_groups[i] >= 0 && zeroed.count(channel_groups[i])) keep[i] = 0;
    }
    return keep;
}

}  // namespace

std::pair<TraceGraph, ParamStore> extract_subnet(const PruningSpace& space,
                                                 const std::set<int>& zero_groups,
                                                 const ParamStore& params) {
    for (int id : zero_groups) {
        if (!space.group(id).removable) {
            throw Error(ErrorKind::Config,
                        "group " + std::to_string(id) + " is not removable");
        }
    }
    // Refuse when slices marked for removal still carry information.
    for (int id : zero_groups) {
        for (const auto& m : space.group(id).members) {
            const Tensor& t = params.at(m.vertex).at(m.param);
            const std::size_t inner = t.numel() / t.shape[0];
            for (std::size_t u = m.begin; u < m.end; ++u) {
                for (std::size_t i = 0; i < inner; ++i) {
                    if (t.data[u * inner + i] != 0.0) {
                        throw Error(ErrorKind::State,
                                    "refusing to extract: group " +
                                        std::to_string(id) +
                                        " has nonzero parameters in '" +
                                        m.vertex + "." + m.param + "'");
                    }
                }
            }
        }
    }

    TraceGraph out_graph = space.graph;
    ParamStore out_params;
    for (auto& v : out_graph.vertices) {
        auto pit = params.find(v.id);
        const bool has_out = space.out_channel_group.count(v.id) &&
                             !space.out_channel_group.at(v.id).empty();
        std::vector<char> out_keep;
        if (has_out) out_keep = keep_mask(space.out_channel_group.at(v.id), zero_groups);
        std::vector<char> in_keep;
        if (space.in_channel_group.count(v.id)) {
            in_keep = keep_mask(space.in_channel_group.at(v.id), zero_groups);
        }

        if (pit == params.end()) continue;
        for (const auto& [name, tensor] : pit->second) {
            Tensor reduced = tensor;
            if ((v.op == "linear" || v.op == "conv2d" || v.op == "batchnorm") &&
                (name == "weight" || name == "bias") && has_out) {
                reduced = keep_axis(reduced, 0, out_keep);
            }
            if (name == "weight" && !in_keep.empty() &&
                (v.op == "linear" || v.op == "conv2d")) {
                reduced = keep_axis(reduced, 1, in_keep);
            }
            if (reduced.shape[0] == 0 ||
                (reduced.rank() > 1 && reduced.shape[1] == 0)) {
                throw Error(ErrorKind::Constraint,
                            "group removal empties '" + v.id + "." + name + "'");
            }
            v.params[name] = reduced.shape;
            out_params[v.id][name] = std::move(reduced);
        }
    }
    return {std::move(out_graph), std::move(out_params)};
}

}  // namespace geta::graph
