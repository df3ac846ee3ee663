#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geta/quantizer.hpp"
#include "geta/tensor.hpp"

// Minimal reverse-mode tape sufficient to train small MLPs and CNNs with
// fake-quantization nodes. Nodes are appended in construction order, which is
// therefore a valid topological order; a session is single-threaded.

namespace geta {

enum class OpKind {
    Input,
    Param,
    Matmul,
    Conv2d,
    Add,
    Relu,
    Reshape,
    Scale,
    Quantize,
    SoftmaxXent,
};

const char* op_name(OpKind op);

enum class Padding { Valid, Same };

/// How Quantize nodes evaluate: `Quantized` applies the full grid snapping
/// (training semantics); `Surrogate` evaluates the continuous shaping map
/// only, which is what finite differences can be checked against.
enum class QuantEvalMode { Quantized, Surrogate };

/// A learnable quantizer attached to one or more Quantize nodes, with
/// accumulated gradients for its three scalars.
struct QuantSlot {
    quant::QuantParams params;
    double grad_step = 0.0;
    double grad_clip_max = 0.0;
    double grad_exponent = 0.0;
};

struct ComputeNode {
    OpKind op;
    std::string name;          // set for Input/Param nodes
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    // op-specific attributes
    bool trans_b = false;                    // Matmul: b is [n,k] instead of [k,n]
    double factor = 1.0;                     // Scale
    Padding padding = Padding::Valid;        // Conv2d
    std::vector<std::size_t> target_shape;   // Reshape ([0] leading = batch)
    int quant_slot = -1;                     // Quantize
    Tensor aux;                              // SoftmaxXent: cached probabilities
};

class AutodiffSession {
  public:
    // Graph construction. Returned ids index into the node tape.
    int add_input(const std::string& name);
    int add_param(const std::string& name, Tensor init);
    int add_quant_slot(quant::QuantParams p);

    int matmul(int a, int b, bool trans_b = false);
    int conv2d(int x, int w, Padding pad);
    int add(int a, int b);
    int relu(int a);
    int reshape(int a, std::vector<std::size_t> shape);
    int scale(int a, double factor);
    int quantize(int x, int slot);
    int softmax_xent(int logits, int labels);

    void set_loss(int node);

    /// Evaluates the tape on the given input binding and returns the loss
    /// (loss node must be scalar). Intermediate values are kept for
    /// backward(). Throws Shape errors naming the offending node and a
    /// Numeric error on any non-finite intermediate.
    double forward(const std::map<std::string, Tensor>& batch,
                   QuantEvalMode mode = QuantEvalMode::Quantized);

    /// Accumulates gradients for every parameter and quant slot reachable
    /// from the loss. Requires a prior forward() on this session.
    void backward();

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    const Tensor& param_grad(const std::string& name) const;
    const std::vector<std::string>& param_names() const { return param_order_; }

    QuantSlot& quant_slot(int id) { return quant_slots_[id]; }
    const QuantSlot& quant_slot(int id) const { return quant_slots_[id]; }
    std::size_t num_quant_slots() const { return quant_slots_.size(); }

    int loss_node() const { return loss_node_; }
    std::size_t num_nodes() const { return nodes_.size(); }
    const ComputeNode& node(int id) const { return nodes_[id]; }

    /// Max over parameter entries of
    /// |analytic - central difference| / max(1, |analytic|),
    /// using the batch from the most recent forward().
    double finite_difference_check(const std::string& name, double step,
                                   QuantEvalMode mode = QuantEvalMode::Quantized);

    enum class QuantVar { Step, ClipMax, Exponent };
    /// Same check for one quantizer scalar. Only meaningful in Surrogate
    /// mode (the grid snapping is piecewise constant in `step`).
    double finite_difference_check_quant(int slot, QuantVar var, double step);

  private:
    int push_node(ComputeNode n);
    void eval_node(int id);
    void backprop_node(int id);
    void check_finite(int id) const;
    const ComputeNode& in(int id, std::size_t i) const {
        return nodes_[nodes_[id].inputs[i]];
    }

    std::vector<ComputeNode> nodes_;
    std::map<std::string, int> by_name_;
    std::vector<std::string> param_order_;
    std::vector<QuantSlot> quant_slots_;
    int loss_node_ = -1;
    bool has_forward_ = false;
    QuantEvalMode mode_ = QuantEvalMode::Quantized;
    std::map<std::string, Tensor> last_batch_;
};

}  // namespace geta
