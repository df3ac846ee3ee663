#include "geta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "geta/error.hpp"
#include "geta/kernels.hpp"

namespace geta {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Matmul: return "matmul";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Add: return "add";
        case OpKind::Relu: return "relu";
        case OpKind::Reshape: return "reshape";
        case OpKind::Scale: return "scale";
        case OpKind::Quantize: return "quantize";
        case OpKind::SoftmaxXent: return "softmax_xent";
    }
    return "?";
}

namespace {

std::string node_label(const ComputeNode& n, int id) {
    std::string s = std::string(op_name(n.op)) + "#" + std::to_string(id);
    if (!n.name.empty()) s += " ('" + n.name + "')";
    return s;
}

void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

struct ConvDims {
    std::size_t n, c, h, w, f, kh, kw, oh, ow, ph, pw;
};

ConvDims conv_dims(const ComputeNode& node, const Tensor& x, const Tensor& wt,
                   int id) {
    if (x.rank() != 4 || wt.rank() != 4) {
        throw Error(ErrorKind::Shape,
                    "conv2d expects NCHW input and FCKK weight at " +
                        node_label(node, id));
    }
    ConvDims d{};
    d.n = x.shape[0];
    d.c = x.shape[1];
    d.h = x.shape[2];
    d.w = x.shape[3];
    d.f = wt.shape[0];
    d.kh = wt.shape[2];
    d.kw = wt.shape[3];
    if (wt.shape[1] != d.c) {
        throw Error(ErrorKind::Shape,
                    "conv2d channel mismatch at " + node_label(node, id));
    }
    if (node.padding == Padding::Same) {
        if (d.kh % 2 == 0 || d.kw % 2 == 0) {
            throw Error(ErrorKind::Shape,
                        "'same' padding requires odd kernels at " +
                            node_label(node, id));
        }
        d.ph = (d.kh - 1) / 2;
        d.pw = (d.kw - 1) / 2;
        d.oh = d.h;
        d.ow = d.w;
    } else {
        d.ph = d.pw = 0;
        if (d.h < d.kh || d.w < d.kw) {
            throw Error(ErrorKind::Shape,
                        "conv2d kernel larger than input at " + node_label(node, id));
        }
        d.oh = d.h - d.kh + 1;
        d.ow = d.w - d.kw + 1;
    }
    return d;
}

// Patch matrix: rows = n*oh*ow, cols = c*kh*kw.
std::vector<double> im2col(const Tensor& x, const ConvDims& d) {
    const std::size_t rows = d.n * d.oh * d.ow;
    const std::size_t cols = d.c * d.kh * d.kw;
    std::vector<double> out(rows * cols, 0.0);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t oh = 0; oh < d.oh; ++oh) {
            for (std::size_t ow = 0; ow < d.ow; ++ow) {
                double* row = out.data() + ((n * d.oh + oh) * d.ow + ow) * cols;
                for (std::size_t c = 0; c < d.c; ++c) {
                    for (std::size_t i = 0; i < d.kh; ++i) {
                        const std::ptrdiff_t ih =
                            static_cast<std::ptrdiff_t>(oh + i) -
                            static_cast<std::ptrdiff_t>(d.ph);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                        for (std::size_t j = 0; j < d.kw; ++j) {
                            const std::ptrdiff_t iw =
                                static_cast<std::ptrdiff_t>(ow + j) -
                                static_cast<std::ptrdiff_t>(d.pw);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w))
                                continue;
                            row[(c * d.kh + i) * d.kw + j] =
                                x.data[((n * d.c + c) * d.h + ih) * d.w + iw];
                        }
                    }
                }
            }
        }
    }
    return out;
}

void col2im_accumulate(const std::vector<double>& cols, const ConvDims& d,
                       Tensor& dx) {
    const std::size_t ncols = d.c * d.kh * d.kw;
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t oh = 0; oh < d.oh; ++oh) {
            for (std::size_t ow = 0; ow < d.ow; ++ow) {
                const double* row =
                    cols.data() + ((n * d.oh + oh) * d.ow + ow) * ncols;
                for (std::size_t c = 0; c < d.c; ++c) {
                    for (std::size_t i = 0; i < d.kh; ++i) {
                        const std::ptrdiff_t ih =
                            static_cast<std::ptrdiff_t>(oh + i) -
                            static_cast<std::ptrdiff_t>(d.ph);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                        for (std::size_t j = 0; j < d.kw; ++j) {
                            const std::ptrdiff_t iw =
                                static_cast<std::ptrdiff_t>(ow + j) -
                                static_cast<std::ptrdiff_t>(d.pw);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w))
                                continue;
                            dx.data[((n * d.c + c) * d.h + ih) * d.w + iw] +=
                                row[(c * d.kh + i) * d.kw + j];
                        }
                    }
                }
            }
        }
    }
}

enum class AddMode { Equal, LastDim, Channel };

AddMode add_mode(const Tensor& a, const Tensor& b, const ComputeNode& n, int id) {
    if (a.shape == b.shape) return AddMode::Equal;
    if (b.rank() == 1 && a.rank() >= 1 && b.shape[0] == a.shape.back())
        return AddMode::LastDim;
    if (b.rank() == 1 && a.rank() == 4 && b.shape[0] == a.shape[1])
        return AddMode::Channel;
    throw Error(ErrorKind::Shape,
                "add shapes " + shape_string(a.shape) + " vs " +
                    shape_string(b.shape) + " at " + node_label(n, id));
}

}  // namespace

int AutodiffSession::push_node(ComputeNode n) {
    for (int in_id : n.inputs) {
        if (in_id < 0 || in_id >= static_cast<int>(nodes_.size())) {
            throw Error(ErrorKind::State, "node input id out of range");
        }
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int AutodiffSession::add_input(const std::string& name) {
    if (by_name_.count(name)) {
        throw Error(ErrorKind::State, "duplicate node name '" + name + "'");
    }
    ComputeNode n;
    n.op = OpKind::Input;
    n.name = name;
    const int id = push_node(std::move(n));
    by_name_[name] = id;
    return id;
}

int AutodiffSession::add_param(const std::string& name, Tensor init) {
    if (by_name_.count(name)) {
        throw Error(ErrorKind::State, "duplicate node name '" + name + "'");
    }
    ComputeNode n;
    n.op = OpKind::Param;
    n.name = name;
    n.value = std::move(init);
    const int id = push_node(std::move(n));
    by_name_[name] = id;
    param_order_.push_back(name);
    return id;
}

int AutodiffSession::add_quant_slot(quant::QuantParams p) {
    p.check();
    quant_slots_.push_back(QuantSlot{std::move(p), 0.0, 0.0, 0.0});
    return static_cast<int>(quant_slots_.size()) - 1;
}

int AutodiffSession::matmul(int a, int b, bool trans_b) {
    ComputeNode n;
    n.op = OpKind::Matmul;
    n.inputs = {a, b};
    n.trans_b = trans_b;
    return push_node(std::move(n));
}

int AutodiffSession::conv2d(int x, int w, Padding pad) {
    ComputeNode n;
    n.op = OpKind::Conv2d;
    n.inputs = {x, w};
    n.padding = pad;
    return push_node(std::move(n));
}

int AutodiffSession::add(int a, int b) {
    ComputeNode n;
    n.op = OpKind::Add;
    n.inputs = {a, b};
    return push_node(std::move(n));
}

int AutodiffSession::relu(int a) {
    ComputeNode n;
    n.op = OpKind::Relu;
    n.inputs = {a};
    return push_node(std::move(n));
}

int AutodiffSession::reshape(int a, std::vector<std::size_t> shape) {
    ComputeNode n;
    n.op = OpKind::Reshape;
    n.inputs = {a};
    n.target_shape = std::move(shape);
    return push_node(std::move(n));
}

int AutodiffSession::scale(int a, double factor) {
    ComputeNode n;
    n.op = OpKind::Scale;
    n.inputs = {a};
    n.factor = factor;
    return push_node(std::move(n));
}

int AutodiffSession::quantize(int x, int slot) {
    if (slot < 0 || slot >= static_cast<int>(quant_slots_.size())) {
        throw Error(ErrorKind::State, "quant slot id out of range");
    }
    ComputeNode n;
    n.op = OpKind::Quantize;
    n.inputs = {x};
    n.quant_slot = slot;
    return push_node(std::move(n));
}

int AutodiffSession::softmax_xent(int logits, int labels) {
    ComputeNode n;
    n.op = OpKind::SoftmaxXent;
    n.inputs = {logits, labels};
    return push_node(std::move(n));
}

void AutodiffSession::set_loss(int node) {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) {
        throw Error(ErrorKind::State, "loss node id out of range");
    }
    loss_node_ = node;
}

void AutodiffSession::check_finite(int id) const {
    const ComputeNode& n = nodes_[id];
    if (!n.value.all_finite()) {
        throw Error(ErrorKind::Numeric,
                    "non-finite intermediate at " + node_label(n, id));
    }
}

void AutodiffSession::eval_node(int id) {
    ComputeNode& n = nodes_[id];
    switch (n.op) {
        case OpKind::Input:
        case OpKind::Param:
            break;
        case OpKind::Matmul: {
            const Tensor& a = in(id, 0).value;
            const Tensor& b = in(id, 1).value;
            if (a.rank() != 2 || b.rank() != 2) {
                throw Error(ErrorKind::Shape,
                            "matmul expects rank-2 operands at " + node_label(n, id));
            }
            const std::size_t m = a.shape[0], k = a.shape[1];
            const std::size_t bn = n.trans_b ? b.shape[0] : b.shape[1];
            const std::size_t bk = n.trans_b ? b.shape[1] : b.shape[0];
            if (bk != k) {
                throw Error(ErrorKind::Shape,
                            "matmul inner dims " + shape_string(a.shape) + " vs " +
                                shape_string(b.shape) + " at " + node_label(n, id));
            }
            n.value = Tensor({m, bn});
            if (n.trans_b) {
                std::vector<double> bt(k * bn);
                transpose(b.data.data(), bt.data(), bn, k);
                kernels::matmul(a.data.data(), bt.data(), n.value.data.data(), m,
                                bn, k);
            } else {
                kernels::matmul(a.data.data(), b.data.data(), n.value.data.data(),
                                m, bn, k);
            }
            break;
        }
        case OpKind::Conv2d: {
            const Tensor& x = in(id, 0).value;
            const Tensor& w = in(id, 1).value;
            const ConvDims d = conv_dims(n, x, w, id);
            const auto cols = im2col(x, d);
            const std::size_t rows = d.n * d.oh * d.ow;
            const std::size_t ckk = d.c * d.kh * d.kw;
            // rows x f = cols (rows x ckk) * w^T (ckk x f)
            std::vector<double> wt(ckk * d.f);
            transpose(w.data.data(), wt.data(), d.f, ckk);
            std::vector<double> out_rows(rows * d.f);
            kernels::matmul(cols.data(), wt.data(), out_rows.data(), rows, d.f, ckk);
            n.value = Tensor({d.n, d.f, d.oh, d.ow});
            for (std::size_t nn = 0; nn < d.n; ++nn)
                for (std::size_t f = 0; f < d.f; ++f)
                    for (std::size_t oh = 0; oh < d.oh; ++oh)
                        for (std::size_t ow = 0; ow < d.ow; ++ow)
                            n.value.data[((nn * d.f + f) * d.oh + oh) * d.ow + ow] =
                                out_rows[((nn * d.oh + oh) * d.ow + ow) * d.f + f];
            break;
        }
        case OpKind::Add: {
            const Tensor& a = in(id, 0).value;
            const Tensor& b = in(id, 1).value;
            const AddMode mode = add_mode(a, b, n, id);
            n.value = Tensor(a.shape);
            if (mode == AddMode::Equal) {
                kernels::add(a.data.data(), b.data.data(), n.value.data.data(),
                             a.numel());
            } else if (mode == AddMode::LastDim) {
                const std::size_t cols = b.shape[0];
                const std::size_t rows = a.numel() / cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    kernels::add(a.data.data() + r * cols, b.data.data(),
                                 n.value.data.data() + r * cols, cols);
                }
            } else {
                const std::size_t c = a.shape[1];
                const std::size_t hw = a.shape[2] * a.shape[3];
                for (std::size_t nn = 0; nn < a.shape[0]; ++nn) {
                    for (std::size_t ci = 0; ci < c; ++ci) {
                        const std::size_t off = (nn * c + ci) * hw;
                        for (std::size_t i = 0; i < hw; ++i)
                            n.value.data[off + i] = a.data[off + i] + b.data[ci];
                    }
                }
            }
            break;
        }
        case OpKind::Relu: {
            const Tensor& a = in(id, 0).value;
            n.value = Tensor(a.shape);
            kernels::relu(a.data.data(), n.value.data.data(), a.numel());
            break;
        }
        case OpKind::Reshape: {
            const Tensor& a = in(id, 0).value;
            std::vector<std::size_t> shape = n.target_shape;
            std::size_t known = 1;
            int infer = -1;
            for (std::size_t i = 0; i < shape.size(); ++i) {
                if (shape[i] == 0) {
                    if (infer >= 0)
                        throw Error(ErrorKind::Shape,
                                    "reshape allows one inferred dim at " +
                                        node_label(n, id));
                    infer = static_cast<int>(i);
                } else {
                    known *= shape[i];
                }
            }
            if (infer >= 0) {
                if (known == 0 || a.numel() % known != 0)
                    throw Error(ErrorKind::Shape,
                                "reshape cannot infer dim at " + node_label(n, id));
                shape[infer] = a.numel() / known;
            } else if (known != a.numel()) {
                throw Error(ErrorKind::Shape,
                            "reshape numel mismatch at " + node_label(n, id));
            }
            n.value = Tensor(std::move(shape), a.data);
            break;
        }
        case OpKind::Scale: {
            const Tensor& a = in(id, 0).value;
            n.value = Tensor(a.shape);
            kernels::scale(a.data.data(), n.factor, n.value.data.data(), a.numel());
            break;
        }
        case OpKind::Quantize: {
            const Tensor& x = in(id, 0).value;
            const quant::QuantParams& p = quant_slots_[n.quant_slot].params;
            n.value = mode_ == QuantEvalMode::Quantized ? quant::quantize(x, p)
                                                        : quant::nonlinear_map(x, p);
            break;
        }
        case OpKind::SoftmaxXent: {
            const Tensor& logits = in(id, 0).value;
            const Tensor& labels = in(id, 1).value;
            if (logits.rank() != 2 || labels.numel() != logits.shape[0]) {
                throw Error(ErrorKind::Shape,
                            "softmax_xent expects [n,c] logits and [n] labels at " +
                                node_label(n, id));
            }
            const std::size_t rows = logits.shape[0], cls = logits.shape[1];
            n.aux = Tensor({rows, cls});
            double loss = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* lrow = logits.data.data() + r * cls;
                double mx = lrow[0];
                for (std::size_t c = 1; c < cls; ++c) mx = std::max(mx, lrow[c]);
                double sum = 0.0;
                for (std::size_t c = 0; c < cls; ++c)
                    sum += std::exp(lrow[c] - mx);
                const double lse = mx + std::log(sum);
                for (std::size_t c = 0; c < cls; ++c)
                    n.aux.data[r * cls + c] = std::exp(lrow[c] - lse);
                const double lab = labels.data[r];
                const auto y = static_cast<std::size_t>(lab);
                if (lab < 0 || y >= cls || static_cast<double>(y) != lab) {
                    throw Error(ErrorKind::Shape,
                                "label out of range at " + node_label(n, id));
                }
                loss -= lrow[y] - lse;
            }
            n.value = Tensor::scalar(loss / static_cast<double>(rows));
            break;
        }
    }
    check_finite(id);
}

double AutodiffSession::forward(const std::map<std::string, Tensor>& batch,
                                QuantEvalMode mode) {
    if (loss_node_ < 0) {
        throw Error(ErrorKind::State, "no loss node set");
    }
    mode_ = mode;
    last_batch_ = batch;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        ComputeNode& n = nodes_[id];
        if (n.op == OpKind::Input) {
            auto it = batch.find(n.name);
            if (it == batch.end()) {
                throw Error(ErrorKind::Config,
                            "batch does not bind input '" + n.name + "'");
            }
            n.value = it->second;
        }
        eval_node(static_cast<int>(id));
    }
    const Tensor& loss = nodes_[loss_node_].value;
    if (loss.numel() != 1) {
        throw Error(ErrorKind::Shape, "loss node must be scalar");
    }
    has_forward_ = true;
    return loss.data[0];
}

void AutodiffSession::backprop_node(int id) {
    ComputeNode& n = nodes_[id];
    const Tensor& g = n.grad;
    switch (n.op) {
        case OpKind::Input:
        case OpKind::Param:
            break;
        case OpKind::Matmul: {
            ComputeNode& na = nodes_[n.inputs[0]];
            ComputeNode& nb = nodes_[n.inputs[1]];
            const Tensor& a = na.value;
            const Tensor& b = nb.value;
            const std::size_t m = a.shape[0], k = a.shape[1];
            const std::size_t cols = n.value.shape[1];
            if (!n.trans_b) {
                // da += g * b^T ; db += a^T * g
                std::vector<double> bt(cols * k);
                transpose(b.data.data(), bt.data(), k, cols);
                std::vector<double> da(m * k);
                kernels::matmul(g.data.data(), bt.data(), da.data(), m, k, cols);
                kernels::add(na.grad.data.data(), da.data(), na.grad.data.data(),
                             m * k);
                std::vector<double> at(k * m);
                transpose(a.data.data(), at.data(), m, k);
                std::vector<double> db(k * cols);
                kernels::matmul(at.data(), g.data.data(), db.data(), k, cols, m);
                kernels::add(nb.grad.data.data(), db.data(), nb.grad.data.data(),
                             k * cols);
            } else {
                // value = a * b^T with b [cols, k]: da += g * b ; db += g^T * a
                std::vector<double> da(m * k);
                kernels::matmul(g.data.data(), b.data.data(), da.data(), m, k, cols);
                kernels::add(na.grad.data.data(), da.data(), na.grad.data.data(),
                             m * k);
                std::vector<double> gt(cols * m);
                transpose(g.data.data(), gt.data(), m, cols);
                std::vector<double> db(cols * k);
                kernels::matmul(gt.data(), a.data.data(), db.data(), cols, k, m);
                kernels::add(nb.grad.data.data(), db.data(), nb.grad.data.data(),
                             cols * k);
            }
            break;
        }
        case OpKind::Conv2d: {
            ComputeNode& nx = nodes_[n.inputs[0]];
            ComputeNode& nw = nodes_[n.inputs[1]];
            const ConvDims d = conv_dims(n, nx.value, nw.value, id);
            const std::size_t rows = d.n * d.oh * d.ow;
            const std::size_t ckk = d.c * d.kh * d.kw;
            // grad as rows x f
            std::vector<double> grows(rows * d.f);
            for (std::size_t nn = 0; nn < d.n; ++nn)
                for (std::size_t f = 0; f < d.f; ++f)
                    for (std::size_t oh = 0; oh < d.oh; ++oh)
                        for (std::size_t ow = 0; ow < d.ow; ++ow)
                            grows[((nn * d.oh + oh) * d.ow + ow) * d.f + f] =
                                g.data[((nn * d.f + f) * d.oh + oh) * d.ow + ow];
            const auto cols = im2col(nx.value, d);
            // dW = grows^T (f x rows) * cols (rows x ckk)
            std::vector<double> gt(d.f * rows);
            transpose(grows.data(), gt.data(), rows, d.f);
            std::vector<double> dw(d.f * ckk);
            kernels::matmul(gt.data(), cols.data(), dw.data(), d.f, ckk, rows);
            kernels::add(nw.grad.data.data(), dw.data(), nw.grad.data.data(),
                         d.f * ckk);
            // dcols = grows (rows x f) * wmat (f x ckk)
            std::vector<double> dcols(rows * ckk);
            kernels::matmul(grows.data(), nw.value.data.data(), dcols.data(), rows,
                            ckk, d.f);
            col2im_accumulate(dcols, d, nx.grad);
            break;
        }
        case OpKind::Add: {
            ComputeNode& na = nodes_[n.inputs[0]];
            ComputeNode& nb = nodes_[n.inputs[1]];
            const AddMode mode = add_mode(na.value, nb.value, n, id);
            kernels::add(na.grad.data.data(), g.data.data(), na.grad.data.data(),
                         g.numel());
            if (mode == AddMode::Equal) {
                kernels::add(nb.grad.data.data(), g.data.data(),
                             nb.grad.data.data(), g.numel());
            } else if (mode == AddMode::LastDim) {
                const std::size_t cols = nb.value.shape[0];
                const std::size_t rows = g.numel() / cols;
                for (std::size_t r = 0; r < rows; ++r)
                    kernels::add(nb.grad.data.data(), g.data.data() + r * cols,
                                 nb.grad.data.data(), cols);
            } else {
                const std::size_t c = na.value.shape[1];
                const std::size_t hw = na.value.shape[2] * na.value.shape[3];
                for (std::size_t nn = 0; nn < na.value.shape[0]; ++nn)
                    for (std::size_t ci = 0; ci < c; ++ci) {
                        const std::size_t off = (nn * c + ci) * hw;
                        for (std::size_t i = 0; i < hw; ++i)
                            nb.grad.data[ci] += g.data[off + i];
                    }
            }
            break;
        }
        case OpKind::Relu: {
            ComputeNode& na = nodes_[n.inputs[0]];
            std::vector<double> masked(g.numel());
            kernels::relu_backward(na.value.data.data(), g.data.data(),
                                   masked.data(), g.numel());
            kernels::add(na.grad.data.data(), masked.data(), na.grad.data.data(),
                         g.numel());
            break;
        }
        case OpKind::Reshape: {
            ComputeNode& na = nodes_[n.inputs[0]];
            kernels::add(na.grad.data.data(), g.data.data(), na.grad.data.data(),
                         g.numel());
            break;
        }
        case OpKind::Scale: {
            ComputeNode& na = nodes_[n.inputs[0]];
            kernels::axpy(n.factor, g.data.data(), na.grad.data.data(), g.numel());
            break;
        }
        case OpKind::Quantize: {
            ComputeNode& nx = nodes_[n.inputs[0]];
            QuantSlot& slot = quant_slots_[n.quant_slot];
            const quant::QuantParams& p = slot.params;
            const Tensor& x = nx.value;
            for (std::size_t i = 0; i < x.numel(); ++i) {
                const double gi = g.data[i];
                nx.grad.data[i] += gi * quant::surrogate_dx_value(x.data[i], p);
                slot.grad_exponent += gi * quant::grad_exponent_value(x.data[i], p);
                slot.grad_clip_max += gi * quant::grad_clip_max_value(x.data[i], p);
                if (mode_ == QuantEvalMode::Quantized) {
                    slot.grad_step += gi * quant::grad_step_value(x.data[i], p);
                }
            }
            break;
        }
        case OpKind::SoftmaxXent: {
            ComputeNode& nl = nodes_[n.inputs[0]];
            const Tensor& labels = in(id, 1).value;
            const std::size_t rows = n.aux.shape[0], cls = n.aux.shape[1];
            const double gs = g.data[0] / static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto y = static_cast<std::size_t>(labels.data[r]);
                for (std::size_t c = 0; c < cls; ++c) {
                    const double delta = (c == y) ? 1.0 : 0.0;
                    nl.grad.data[r * cls + c] +=
                        gs * (n.aux.data[r * cls + c] - delta);
                }
            }
            break;
        }
    }
}

void AutodiffSession::backward() {
    if (!has_forward_) {
        throw Error(ErrorKind::State, "backward() before forward()");
    }
    for (auto& n : nodes_) {
        n.grad = Tensor(n.value.shape);
    }
    for (auto& s : quant_slots_) {
        s.grad_step = s.grad_clip_max = s.grad_exponent = 0.0;
    }
    nodes_[loss_node_].grad.data[0] = 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        backprop_node(id);
    }
}

Tensor& AutodiffSession::param(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end() || nodes_[it->second].op != OpKind::Param) {
        throw Error(ErrorKind::State, "no parameter named '" + name + "'");
    }
    return nodes_[it->second].value;
}

const Tensor& AutodiffSession::param(const std::string& name) const {
    return const_cast<AutodiffSession*>(this)->param(name);
}

const Tensor& AutodiffSession::param_grad(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end() || nodes_[it->second].op != OpKind::Param) {
        throw Error(ErrorKind::State, "no parameter named '" + name + "'");
    }
    return nodes_[it->second].grad;
}

double AutodiffSession::finite_difference_check(const std::string& name,
                                                double step, QuantEvalMode mode) {
    if (!(step > 0.0)) {
        throw Error(ErrorKind::Config, "finite difference step must be positive");
    }
    if (!has_forward_) {
        throw Error(ErrorKind::State, "finite_difference_check before forward()");
    }
    const auto batch = last_batch_;
    forward(batch, mode);
    backward();
    const Tensor analytic = param_grad(name);
    Tensor& value = param(name);
    double worst = 0.0;
    for (std::size_t i = 0; i < value.numel(); ++i) {
        const double saved = value.data[i];
        value.data[i] = saved + step;
        const double up = forward(batch, mode);
        value.data[i] = saved - step;
        const double down = forward(batch, mode);
        value.data[i] = saved;
        const double fd = (up - down) / (2.0 * step);
        const double err = std::fabs(analytic.data[i] - fd) /
                           std::max(1.0, std::fabs(analytic.data[i]));
        worst = std::max(worst, err);
    }
    forward(batch, mode);
    return worst;
}

double AutodiffSession::finite_difference_check_quant(int slot, QuantVar var,
                                                      double step) {
    if (!(step > 0.0)) {
        throw Error(ErrorKind::Config, "finite difference step must be positive");
    }
    if (!has_forward_) {
        throw Error(ErrorKind::State, "finite_difference_check before forward()");
    }
    const auto batch = last_batch_;
    forward(batch, QuantEvalMode::Surrogate);
    backward();
    QuantSlot& s = quant_slots_[slot];
    double* target = nullptr;
    double analytic = 0.0;
    switch (var) {
        case QuantVar::Step:
            throw Error(ErrorKind::Config,
                        "step has no surrogate derivative; check it in closed form");
        case QuantVar::ClipMax:
            target = &s.params.clip_max;
            analytic = s.grad_clip_max;
            break;
        case QuantVar::Exponent:
            target = &s.params.exponent;
            analytic = s.grad_exponent;
            break;
    }
    const double saved = *target;
    *target = saved + step;
    const double up = forward(batch, QuantEvalMode::Surrogate);
    *target = saved - step;
    const double down = forward(batch, QuantEvalMode::Surrogate);
    *target = saved;
    forward(batch, QuantEvalMode::Surrogate);
    const double fd = (up - down) / (2.0 * step);
    return std::fabs(analytic - fd) / std::max(1.0, std::fabs(analytic));
}

}  // namespace geta
