#include "geta/graph_exec.hpp"

#include <algorithm>

#include "geta/error.hpp"

namespace geta::graph {

namespace {

const Tensor& param_tensor(const ParamStore& params, const std::string& vertex,
                           const std::string& name) {
    auto vit = params.find(vertex);
    if (vit == params.end() || !vit->second.count(name)) {
        throw Error(ErrorKind::Config,
                    "missing parameter '" + vertex + "." + name + "'");
    }
    return vit->second.at(name);
}

Tensor run_linear(const Tensor& x, const Tensor& w, const Tensor* b) {
    if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[1]) {
        throw Error(ErrorKind::Shape, "linear shape mismatch: x " +
                                          shape_string(x.shape) + " w " +
                                          shape_string(w.shape));
    }
    const std::size_t n = x.shape[0], in = x.shape[1], out = w.shape[0];
    Tensor y({n, out});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < in; ++i) {
                s += x.data[r * in + i] * w.data[o * in + i];
            }
            if (b) s += b->data[o];
            y.data[r * out + o] = s;
        }
    }
    return y;
}

// Direct convolution loop; deliberately independent of the tensor engine's
// im2col route so the two can be cross-checked.
Tensor run_conv2d(const Tensor& x, const Tensor& w, const Tensor* b, bool same) {
    if (x.rank() != 4 || w.rank() != 4 || x.shape[1] != w.shape[1]) {
        throw Error(ErrorKind::Shape, "conv2d shape mismatch: x " +
                                          shape_string(x.shape) + " w " +
                                          shape_string(w.shape));
    }
    const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2],
                      wd = x.shape[3];
    const std::size_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const std::size_t ph = same ? (kh - 1) / 2 : 0;
    const std::size_t pw = same ? (kw - 1) / 2 : 0;
    if (same && (kh % 2 == 0 || kw % 2 == 0)) {
        throw Error(ErrorKind::Shape, "'same' padding requires odd kernels");
    }
    if (!same && (h < kh || wd < kw)) {
        throw Error(ErrorKind::Shape, "conv2d kernel larger than input");
    }
    const std::size_t oh = same ? h : h - kh + 1;
    const std::size_t ow = same ? wd : wd - kw + 1;
    Tensor y({n, f, oh, ow});
    for (std::size_t nn = 0; nn < n; ++nn) {
        for (std::size_t ff = 0; ff < f; ++ff) {
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t s = 0; s < ow; ++s) {
                    double acc = b ? b->data[ff] : 0.0;
                    for (std::size_t cc = 0; cc < c; ++cc) {
                        for (std::size_t i = 0; i < kh; ++i) {
                            const std::ptrdiff_t ih =
                                static_cast<std::ptrdiff_t>(r + i) -
                                static_cast<std::ptrdiff_t>(ph);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h))
                                continue;
                            for (std::size_t j = 0; j < kw; ++j) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(s + j) -
                                    static_cast<std::ptrdiff_t>(pw);
                                if (iw < 0 ||
                                    iw >= static_cast<std::ptrdiff_t>(wd))
                                    continue;
                                acc += x.data[((nn * c + cc) * h + ih) * wd + iw] *
                                       w.data[((ff * c + cc) * kh + i) * kw + j];
                            }
                        }
                    }
                    y.data[((nn * f + ff) * oh + r) * ow + s] = acc;
                }
            }
        }
    }
    return y;
}

Tensor run_batchnorm(const Tensor& x, const Tensor& w, const Tensor* b) {
    const std::size_t c = w.shape[0];
    Tensor y(x.shape);
    if (x.rank() == 2) {
        if (x.shape[1] != c) throw Error(ErrorKind::Shape, "batchnorm width mismatch");
        for (std::size_t r = 0; r < x.shape[0]; ++r)
            for (std::size_t i = 0; i < c; ++i)
                y.data[r * c + i] =
                    w.data[i] * x.data[r * c + i] + (b ? b->data[i] : 0.0);
    } else if (x.rank() == 4) {
        if (x.shape[1] != c) throw Error(ErrorKind::Shape, "batchnorm channel mismatch");
        const std::size_t hw = x.shape[2] * x.shape[3];
        for (std::size_t nn = 0; nn < x.shape[0]; ++nn)
            for (std::size_t cc = 0; cc < c; ++cc) {
                const std::size_t off = (nn * c + cc) * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    y.data[off + i] =
                        w.data[cc] * x.data[off + i] + (b ? b->data[cc] : 0.0);
            }
    } else {
        throw Error(ErrorKind::Shape, "batchnorm expects rank 2 or 4 input");
    }
    return y;
}

}  // namespace

std::map<std::string, Tensor> execute(const TraceGraph& g,
                                      const ParamStore& params,
                                      const std::map<std::string, Tensor>& inputs) {
    g.validate();
    std::map<std::string, Tensor> values;
    for (const auto& id : g.topological_order()) {
        const Vertex& v = g.vertex(id);
        const auto preds = g.predecessors(id);
        if (v.op == "input") {
            auto it = inputs.find(id);
            if (it == inputs.end()) {
                throw Error(ErrorKind::Config, "no tensor bound to input '" + id + "'");
            }
            values[id] = it->second;
        } else if (v.op == "linear") {
            const Tensor& w = param_tensor(params, id, "weight");
            const Tensor* b =
                params.count(id) && params.at(id).count("bias")
                    ? &params.at(id).at("bias")
                    : nullptr;
            values[id] = run_linear(values.at(preds.at(0)), w, b);
        } else if (v.op == "conv2d") {
            const Tensor& w = param_tensor(params, id, "weight");
            const Tensor* b =
                params.count(id) && params.at(id).count("bias")
                    ? &params.at(id).at("bias")
                    : nullptr;
            const bool same = v.attr_or("padding", std::string("valid")) == "same";
            values[id] = run_conv2d(values.at(preds.at(0)), w, b, same);
        } else if (v.op == "batchnorm") {
            const Tensor& w = param_tensor(params, id, "weight");
            const Tensor* b =
                params.count(id) && params.at(id).count("bias")
                    ? &params.at(id).at("bias")
                    : nullptr;
            values[id] = run_batchnorm(values.at(preds.at(0)), w, b);
        } else if (v.op == "relu") {
            Tensor y = values.at(preds.at(0));
            for (auto& x : y.data) x = x > 0.0 ? x : 0.0;
            values[id] = std::move(y);
        } else if (v.op == "add") {
            Tensor y = values.at(preds.at(0));
            for (std::size_t p = 1; p < preds.size(); ++p) {
                const Tensor& o = values.at(preds[p]);
                if (!y.same_shape(o)) {
                    throw Error(ErrorKind::Shape, "add shape mismatch at '" + id + "'");
                }
                for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += o.data[i];
            }
            values[id] = std::move(y);
        } else if (v.op == "concat") {
            // Channel axis (dim 1).
            std::vector<const Tensor*> xs;
            for (const auto& p : preds) xs.push_back(&values.at(p));
            std::size_t channels = 0;
            for (const auto* t : xs) channels += t->shape.at(1);
            std::vector<std::size_t> shape = xs[0]->shape;
            shape[1] = channels;
            Tensor y(shape);
            const std::size_t n = shape[0];
            std::size_t inner = 1;
            for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
            for (std::size_t nn = 0; nn < n; ++nn) {
                std::size_t coff = 0;
                for (const auto* t : xs) {
                    const std::size_t tc = t->shape[1];
                    std::copy(t->data.begin() +
                                  static_cast<std::ptrdiff_t>(nn * tc * inner),
                              t->data.begin() +
                                  static_cast<std::ptrdiff_t>((nn + 1) * tc * inner),
                              y.data.begin() +
                                  static_cast<std::ptrdiff_t>((nn * channels + coff) *
                                                              inner));
                    coff += tc;
                }
            }
            values[id] = std::move(y);
        } else if (v.op == "flatten") {
            const Tensor& x = values.at(preds.at(0));
            values[id] = Tensor({x.shape[0], x.numel() / x.shape[0]}, x.data);
        } else if (v.op == "output") {
            values[id] = values.at(preds.at(0));
        } else {
            throw Error(ErrorKind::Graph,
                        "unsupported operator '" + v.op + "' in executor at '" +
                            id + "'");
        }
    }
    std::map<std::string, Tensor> out;
    for (const auto& id : g.outputs) out[id] = values.at(id);
    return out;
}

}  // namespace geta::graph
