#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "geta/error.hpp"
#include "geta/graph_exec.hpp"
#include "geta/qadg.hpp"
#include "geta/trace_graph.hpp"
#include "test_util.hpp"

using namespace geta;
using namespace geta::graph;

namespace {

std::string fixture(const std::string& name) {
    return std::string(GETA_FIXTURE_DIR) + "/" + name;
}

ParamStore random_params(const TraceGraph& g, std::uint64_t seed) {
    testutil::Rng rng(seed);
    ParamStore store;
    for (const auto& v : g.vertices) {
        for (const auto& [name, dims] : v.params) {
            Tensor t(dims);
            for (auto& x : t.data) x = rng.uniform(-1.0, 1.0);
            store[v.id][name] = std::move(t);
        }
    }
    return store;
}

void zero_group(const PruningSpace& space, int id, ParamStore& store) {
    for (const auto& m : space.group(id).members) {
        Tensor& t = store[m.vertex][m.param];
        const std::size_t inner = t.numel() / t.shape[0];
        for (std::size_t u = m.begin; u < m.end; ++u)
            for (std::size_t i = 0; i < inner; ++i) t.data[u * inner + i] = 0.0;
    }
}

double max_output_diff(const std::map<std::string, Tensor>& a,
                       const std::map<std::string, Tensor>& b) {
    double worst = 0.0;
    for (const auto& [id, ta] : a) {
        const Tensor& tb = b.at(id);
        REQUIRE(ta.shape == tb.shape);
        for (std::size_t i = 0; i < ta.numel(); ++i)
            worst = std::max(worst, std::fabs(ta.data[i] - tb.data[i]));
    }
    return worst;
}

// Zero the given groups in a copy of the full params, execute, extract the
// subnet and check both routes agree on `trials` random inputs.
void check_subnet_equivalence(const PruningSpace& space,
                              const std::set<int>& zeroed,
                              const ParamStore& full,
                              const std::map<std::string, std::vector<std::size_t>>&
                                  input_shapes,
                              int trials, std::uint64_t seed) {
    ParamStore zeroed_params = full;
    for (int id : zeroed) zero_group(space, id, zeroed_params);
    const auto [subgraph, subparams] =
        extract_subnet(space, zeroed, zeroed_params);

    testutil::Rng rng(seed);
    for (int t = 0; t < trials; ++t) {
        std::map<std::string, Tensor> inputs;
        for (const auto& [id, shape] : input_shapes) {
            Tensor x(shape);
            for (auto& v : x.data) v = rng.uniform(-1.5, 1.5);
            inputs[id] = std::move(x);
        }
        const auto full_out = execute(space.graph, zeroed_params, inputs);
        const auto sub_out = execute(subgraph, subparams, inputs);
        CHECK(max_output_diff(full_out, sub_out) < 1e-6);
    }
}

}  // namespace

TEST_CASE("loading and validation diagnostics") {
    SUBCASE("mlp2 fixture loads with expected counts") {
        const auto g = load_trace_graph_file(fixture("mlp2.json"));
        CHECK(g.vertices.size() == 5);
        CHECK(g.edges.size() == 4);
    }
    SUBCASE("dangling edge") {
        const char* doc = R"({"vertices": [{"id":"a","op":"input"}],
                              "edges": [["a","ghost"]],
                              "inputs": ["a"], "outputs": ["a"]})";
        CHECK_THROWS_WITH_AS(load_trace_graph(doc),
                             doctest::Contains("dangling edge"), Error);
    }
    SUBCASE("cycle") {
        const char* doc = R"({"vertices": [{"id":"a","op":"input"},
                                            {"id":"b","op":"relu"},
                                            {"id":"c","op":"relu"}],
                              "edges": [["a","b"],["b","c"],["c","b"]],
                              "inputs": ["a"], "outputs": ["c"]})";
        CHECK_THROWS_WITH_AS(load_trace_graph(doc), doctest::Contains("cycle"),
                             Error);
    }
    SUBCASE("duplicate id") {
        const char* doc = R"({"vertices": [{"id":"a","op":"input"},
                                            {"id":"a","op":"relu"}],
                              "edges": [], "inputs": ["a"], "outputs": ["a"]})";
        CHECK_THROWS_WITH_AS(load_trace_graph(doc),
                             doctest::Contains("duplicate"), Error);
    }
    SUBCASE("schema violation") {
        CHECK_THROWS_WITH_AS(load_trace_graph("{\"vertices\": [{}]}"),
                             doctest::Contains("schema"), Error);
        CHECK_THROWS_WITH_AS(load_trace_graph("not json"),
                             doctest::Contains("schema"), Error);
    }
}

TEST_CASE("attached branch detection") {
    const auto g = load_trace_graph_file(fixture("conv_wq.json"));
    CHECK(g.vertices.size() == 9);
    const auto branches = find_attached_branches(g);
    REQUIRE(branches.size() == 1);
    CHECK(branches[0].root == "conv1");
    CHECK(branches[0].vertices.size() == 4);

    const auto plain = load_trace_graph_file(fixture("mlp2.json"));
    CHECK(find_attached_branches(plain).empty());

    const auto res = load_trace_graph_file(fixture("resblock_wq.json"));
    CHECK(find_attached_branches(res).size() == 2);
}

TEST_CASE("malformed weight branch: no single consumer") {
    auto g = load_trace_graph_file(fixture("conv_wq.json"));
    // Give the branch a second consumer.
    g.vertices.push_back(Vertex{"conv_extra", "conv2d", {}, std::nullopt,
                                nlohmann::json::object()});
    g.edges.emplace_back("conv1_wq_mul", "conv_extra");
    g.edges.emplace_back("input", "conv_extra");
    CHECK_THROWS_WITH_AS(find_attached_branches(g),
                         doctest::Contains("malformed weight branch"), Error);
}

TEST_CASE("inserted branch detection") {
    const auto g = load_trace_graph_file(fixture("relu_aq_linear.json"));
    const auto branches = find_inserted_branches(g);
    REQUIRE(branches.size() == 1);
    CHECK(branches[0].root == "relu1");
    CHECK(branches[0].end == "linear2");
    CHECK(branches[0].vertices.size() == 3);

    CHECK(find_inserted_branches(load_trace_graph_file(fixture("mlp2.json")))
              .empty());

    const auto stacked = load_trace_graph_file(fixture("aq_stacked.json"));
    const auto two = find_inserted_branches(stacked);
    REQUIRE(two.size() == 2);
    CHECK(two[0].end == "linear2");
    CHECK(two[1].end == "linear3");
    CHECK(two[0].end != two[1].end);
}

TEST_CASE("merging collapses branches and preserves connectivity") {
    SUBCASE("attached: conv_wq 9 -> 5 vertices") {
        const auto g = load_trace_graph_file(fixture("conv_wq.json"));
        const auto merged = build_qadg(g);
        CHECK(merged.vertices.size() == 5);
        for (const auto& v : merged.vertices) CHECK(!v.quant_tag.has_value());
        CHECK(merged.vertex("conv1").params.count("weight") == 1);
        CHECK(merged.vertex("conv1").attrs.contains("weight_quant"));
    }
    SUBCASE("no quantizers: graph unchanged") {
        const auto g = load_trace_graph_file(fixture("mlp2.json"));
        CHECK(build_qadg(g) == g);
    }
    SUBCASE("inserted: root connects to merged end") {
        const auto g = load_trace_graph_file(fixture("relu_aq_linear.json"));
        const auto merged = build_qadg(g);
        const auto edge = std::make_pair(std::string("relu1"), std::string("linear2"));
        CHECK(std::find(merged.edges.begin(), merged.edges.end(), edge) !=
              merged.edges.end());
        CHECK(merged.vertex("linear2").attrs.contains("act_quant"));
    }
    SUBCASE("idempotence and reachability on all fixtures") {
        for (const char* name :
             {"mlp2.json", "conv_wq.json", "relu_aq_linear.json",
              "resblock_wq.json", "mini_attention.json", "aq_stacked.json"}) {
            const auto g = load_trace_graph_file(fixture(name));
            const auto merged = build_qadg(g);
            CHECK(build_qadg(merged) == merged);
            // Inputs must still reach outputs (validate() checks it).
            CHECK_NOTHROW(merged.validate());
            for (const auto& v : merged.vertices) CHECK(!v.quant_tag.has_value());
        }
    }
    SUBCASE("untagged graphs go through the pattern fallback") {
        const auto tagged = build_qadg(load_trace_graph_file(fixture("conv_wq.json")));
        const auto untagged =
            build_qadg(load_trace_graph_file(fixture("conv_wq_untagged.json")));
        CHECK(untagged.vertices.size() == tagged.vertices.size());
        CHECK(untagged.vertex("conv1").params == tagged.vertex("conv1").params);
        CHECK(untagged.edges == tagged.edges);
    }
}

TEST_CASE("dependency groups: mlp2 has 8 removable hidden units + output") {
    const auto merged = build_qadg(load_trace_graph_file(fixture("mlp2.json")));
    const auto space = dependency_groups(merged);
    CHECK(space.groups.size() == 9);
    CHECK(space.removable_count() == 8);
    for (int i = 0; i < 8; ++i) {
        CHECK(space.group(i).removable);
        REQUIRE(space.group(i).members.size() == 2);
        CHECK(space.group(i).members[0].vertex == "fc1");
        CHECK(space.group(i).members[0].begin == static_cast<std::size_t>(i));
    }
    CHECK(!space.group(8).removable);
    CHECK(space.group(8).members[0].vertex == "fc2");
    // Consumer mapping: fc2 columns follow fc1 groups.
    const auto& incols = space.in_channel_group.at("fc2");
    REQUIRE(incols.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(incols[i] == i);
}

TEST_CASE("dependency groups: residual add fuses producer channels") {
    const auto merged =
        build_qadg(load_trace_graph_file(fixture("resblock_wq.json")));
    const auto space = dependency_groups(merged);
    CHECK(space.groups.size() == 5);
    CHECK(space.removable_count() == 4);
    for (int i = 0; i < 4; ++i) {
        const auto& g = space.group(i);
        CHECK(g.removable);
        std::set<std::string> vertices;
        for (const auto& m : g.members) vertices.insert(m.vertex);
        CHECK(vertices ==
              std::set<std::string>{"conv1", "conv2", "bn1", "bn2"});
    }
}

TEST_CASE("dependency groups: head granularity via group_size") {
    const auto merged =
        build_qadg(load_trace_graph_file(fixture("mini_attention.json")));
    const auto space = dependency_groups(merged);
    CHECK(space.groups.size() == 3);
    CHECK(space.removable_count() == 2);
    CHECK(space.group(0).members[0].begin == 0);
    CHECK(space.group(0).members[0].end == 4);
    CHECK(space.group(1).members[0].begin == 4);
    CHECK(space.group(1).members[0].end == 8);
}

TEST_CASE("dependency groups: unsupported op is rejected explicitly") {
    const char* doc = R"({"vertices": [{"id":"a","op":"input"},
                                        {"id":"b","op":"gelu"},
                                        {"id":"c","op":"output"}],
                          "edges": [["a","b"],["b","c"]],
                          "inputs": ["a"], "outputs": ["c"]})";
    CHECK_THROWS_WITH_AS(dependency_groups(load_trace_graph(doc)),
                         doctest::Contains("unsupported operator"), Error);
}

TEST_CASE("pruning space serialization matches the documented schema") {
    const auto merged = build_qadg(load_trace_graph_file(fixture("mlp2.json")));
    const auto space = dependency_groups(merged);
    const auto doc = pruning_space_to_json(space);
    REQUIRE(doc.contains("groups"));
    CHECK(doc["groups"].size() == 9);
    CHECK(doc["groups"][0]["members"][0]["vertex"] == "fc1");
    CHECK(doc["groups"][0]["members"][0]["slice"][0] == 0);
    CHECK(doc["groups"][0]["members"][0]["slice"][1] == 1);
}

TEST_CASE("subnet extraction: mlp2 halves its hidden width") {
    const auto merged = build_qadg(load_trace_graph_file(fixture("mlp2.json")));
    const auto space = dependency_groups(merged);
    auto params = random_params(merged, 1001);

    std::set<int> zeroed = {1, 3, 5, 7};
    ParamStore zp = params;
    for (int id : zeroed) zero_group(space, id, zp);
    const auto [sub, subparams] = extract_subnet(space, zeroed, zp);
    CHECK(sub.vertex("fc1").params.at("weight") ==
          std::vector<std::size_t>{4, 2});
    CHECK(sub.vertex("fc2").params.at("weight") ==
          std::vector<std::size_t>{3, 4});

    check_subnet_equivalence(space, zeroed, params, {{"input", {32, 2}}}, 1, 7);

    SUBCASE("empty removal set leaves the graph unchanged") {
        const auto [same, sameparams] = extract_subnet(space, {}, params);
        CHECK(same == merged);
        CHECK(sameparams.at("fc1").at("weight").data ==
              params.at("fc1").at("weight").data);
    }
    SUBCASE("non-removable group is a precondition error") {
        CHECK_THROWS_AS(extract_subnet(space, {8}, zp), Error);
    }
    SUBCASE("nonzero parameters in a zeroed group are refused") {
        CHECK_THROWS_WITH_AS(extract_subnet(space, {0}, params),
                             doctest::Contains("refusing"), Error);
    }
}

TEST_CASE("subnet equivalence on the residual and attention fixtures") {
    SUBCASE("resblock_wq") {
        const auto merged =
            build_qadg(load_trace_graph_file(fixture("resblock_wq.json")));
        const auto space = dependency_groups(merged);
        const auto params = random_params(merged, 2002);
        check_subnet_equivalence(space, {0, 2}, params,
                                 {{"input", {4, 2, 4, 4}}}, 8, 11);
    }
    SUBCASE("mini_attention: heads removed whole") {
        const auto merged =
            build_qadg(load_trace_graph_file(fixture("mini_attention.json")));
        const auto space = dependency_groups(merged);
        const auto params = random_params(merged, 2003);
        check_subnet_equivalence(space, {1}, params, {{"input", {16, 4}}}, 8, 12);
    }
    SUBCASE("conv_wq: nothing removable, identity extraction") {
        const auto merged =
            build_qadg(load_trace_graph_file(fixture("conv_wq.json")));
        const auto space = dependency_groups(merged);
        CHECK(space.removable_count() == 0);
        const auto params = random_params(merged, 2004);
        check_subnet_equivalence(space, {}, params, {{"input", {4, 2, 4, 4}}}, 4,
                                 13);
    }
}

TEST_CASE("flatten bookkeeping: conv channels map to linear column blocks") {
    const char* doc = R"({
      "vertices": [
        {"id": "input", "op": "input"},
        {"id": "conv1", "op": "conv2d", "params": {"weight": [3,2,3,3], "bias": [3]}, "attrs": {"padding": "same"}},
        {"id": "flat", "op": "flatten", "attrs": {"per_channel": 4}},
        {"id": "head", "op": "linear", "params": {"weight": [2,12], "bias": [2]}},
        {"id": "output", "op": "output"}
      ],
      "edges": [["input","conv1"],["conv1","flat"],["flat","head"],["head","output"]],
      "inputs": ["input"], "outputs": ["output"]})";
    const auto g = load_trace_graph(doc);
    const auto space = dependency_groups(g);
    CHECK(space.removable_count() == 3);
    const auto params = random_params(g, 3003);

    std::set<int> zeroed = {1};
    ParamStore zp = params;
    for (int id : zeroed) zero_group(space, id, zp);
    const auto [sub, subparams] = extract_subnet(space, zeroed, zp);
    CHECK(sub.vertex("head").params.at("weight") ==
          std::vector<std::size_t>{2, 8});
    check_subnet_equivalence(space, zeroed, params, {{"input", {6, 2, 2, 2}}}, 8,
                             14);
}

TEST_CASE("concat offsets producer groups") {
    const char* doc = R"({
      "vertices": [
        {"id": "input", "op": "input"},
        {"id": "conv_a", "op": "conv2d", "params": {"weight": [2,2,1,1], "bias": [2]}},
        {"id": "conv_b", "op": "conv2d", "params": {"weight": [3,2,1,1], "bias": [3]}},
        {"id": "cat", "op": "concat"},
        {"id": "conv_out", "op": "conv2d", "params": {"weight": [2,5,1,1], "bias": [2]}},
        {"id": "output", "op": "output"}
      ],
      "edges": [["input","conv_a"],["input","conv_b"],["conv_a","cat"],
                 ["conv_b","cat"],["cat","conv_out"],["conv_out","output"]],
      "inputs": ["input"], "outputs": ["output"]})";
    const auto g = load_trace_graph(doc);
    const auto space = dependency_groups(g);
    CHECK(space.removable_count() == 5);
    const auto& incols = space.in_channel_group.at("conv_out");
    REQUIRE(incols.size() == 5);
    CHECK(incols[0] == 0);
    CHECK(incols[2] == 2);

    const auto params = random_params(g, 4004);
    check_subnet_equivalence(space, {1, 2}, params, {{"input", {5, 2, 3, 3}}}, 8,
                             15);
}

TEST_CASE("group partition covers every prunable index exactly once") {
    for (const char* name : {"mlp2.json", "resblock_wq.json",
                             "mini_attention.json", "relu_aq_linear.json"}) {
        const auto merged = build_qadg(load_trace_graph_file(fixture(name)));
        const auto space = dependency_groups(merged);
        // Count per (vertex,param,unit) how many groups claim it.
        std::map<std::string, std::map<std::size_t, int>> claims;
        for (const auto& g : space.groups) {
            for (const auto& m : g.members) {
                for (std::size_t u = m.begin; u < m.end; ++u) {
                    ++claims[m.vertex + "." + m.param][u];
                }
            }
        }
        for (const auto& v : merged.vertices) {
            if (v.op != "linear" && v.op != "conv2d" && v.op != "batchnorm")
                continue;
            for (const auto& [pname, dims] : v.params) {
                auto it = claims.find(v.id + "." + pname);
                REQUIRE(it != claims.end());
                for (std::size_t u = 0; u < dims[0]; ++u) {
                    CHECK(it->second[u] == 1);
                }
            }
        }
    }
}
