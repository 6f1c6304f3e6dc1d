#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gtd/numerics/ops.hpp"

namespace gtd::num {

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape for one forward/backward pass. Nodes are appended in
/// execution order, so the node list is already topologically sorted and
/// backward() visits it once in reverse. Gradients accumulate additively when
/// a value fans out. Single-writer: one training step owns one tape.
class GradTape {
public:
    /// Receives the upstream gradient, the input values and the output value;
    /// returns one gradient per input (an empty Tensor means "no gradient").
    using BackwardFn =
        std::function<std::vector<Tensor>(const Tensor& g, const std::vector<const Tensor*>& in, const Tensor& out)>;

    struct Node {
        std::string op;
        std::vector<std::size_t> inputs;
        std::size_t output;
        BackwardFn backward;
    };

    Var constant(Tensor value) { return push_value(std::move(value), false); }
    Var parameter(Tensor value) { return push_value(std::move(value), true); }

    const Tensor& value(Var v) const { return values_.at(v.id); }
    bool requires_grad(Var v) const { return requires_grad_.at(v.id); }

    /// Zero tensor when no gradient reached `v`.
    Tensor grad(Var v) const {
        const auto& g = grads_.at(v.id);
        return g ? *g : Tensor(values_.at(v.id).dims(), 0.0);
    }

    const std::vector<Node>& nodes() const { return nodes_; }

    Var custom(std::string op, std::vector<Var> inputs, Tensor out, BackwardFn fn) {
        bool any = false;
        std::vector<std::size_t> ids;
        for (auto v : inputs) {
            ids.push_back(v.id);
            any = any || requires_grad_.at(v.id);
        }
        Var o = push_value(std::move(out), any);
        if (any) nodes_.push_back(Node{std::move(op), std::move(ids), o.id, std::move(fn)});
        return o;
    }

    Var matmul(Var a, Var b) {
        return custom("matmul", {a, b}, ops::matmul(value(a), value(b)),
                      [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                          auto [ga, gb] = ops::matmul_backward(*in[0], *in[1], g);
                          return std::vector<Tensor>{std::move(ga), std::move(gb)};
                      });
    }

    Var matmul_nt(Var a, Var b) {
        return custom("matmul_nt", {a, b}, ops::matmul_nt(value(a), value(b)),
                      [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                          auto [ga, gb] = ops::matmul_nt_backward(*in[0], *in[1], g);
                          return std::vector<Tensor>{std::move(ga), std::move(gb)};
                      });
    }

    Var add(Var a, Var b) {
        return custom("add", {a, b}, ops::add(value(a), value(b)),
                      [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                          auto [ga, gb] = ops::add_backward(*in[0], *in[1], g);
                          return std::vector<Tensor>{std::move(ga), std::move(gb)};
                      });
    }

    Var scale(Var a, double c) {
        return custom("scale", {a}, ops::scale(value(a), c),
                      [c](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
                          return std::vector<Tensor>{ops::scale(g, c)};
                      });
    }

    Var relu(Var a) {
        return custom("relu", {a}, ops::relu(value(a)),
                      [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                          return std::vector<Tensor>{ops::relu_backward(*in[0], g)};
                      });
    }

    Var sigmoid(Var a) {
        return custom("sigmoid", {a}, ops::sigmoid(value(a)),
                      [](const Tensor& g, const std::vector<const Tensor*>&, const Tensor& out) {
                          return std::vector<Tensor>{ops::sigmoid_backward(out, g)};
                      });
    }

    Var softmax_rows(Var a) {
        return custom("softmax_rows", {a}, ops::softmax_rows(value(a)),
                      [](const Tensor& g, const std::vector<const Tensor*>&, const Tensor& out) {
                          return std::vector<Tensor>{ops::softmax_rows_backward(out, g)};
                      });
    }

    Var mean(Var a) {
        return custom("mean", {a}, ops::mean(value(a)),
                      [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                          return std::vector<Tensor>{ops::mean_backward(*in[0], g)};
                      });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        std::vector<const Tensor*> ptrs;
        for (auto p : parts) ptrs.push_back(&value(p));
        return custom("concat_rows", parts, ops::concat_rows(ptrs),
                      [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
                          return ops::concat_rows_backward(in, g);
                      });
    }

    /// Seeds d(loss)/d(loss) = 1 for a single-element loss and replays the tape.
    void backward(Var loss) {
        if (value(loss).size() != 1)
            throw ContractError("backward: loss must be a single element, got " + dims_string(value(loss).dims()));
        backward(loss, Tensor(value(loss).dims(), 1.0));
    }

    void backward(Var out, Tensor seed) {
        Tensor::require_same(value(out), seed, "backward seed");
        accumulate(out.id, std::move(seed));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto& g = grads_[it->output];
            if (!g) continue;
            std::vector<const Tensor*> in;
            for (auto id : it->inputs) in.push_back(&values_[id]);
            auto gins = it->backward(*g, in, values_[it->output]);
            for (std::size_t k = 0; k < it->inputs.size(); ++k) {
                const auto id = it->inputs[k];
                if (!requires_grad_[id] || gins[k].size() == 0) continue;
                accumulate(id, std::move(gins[k]));
            }
        }
    }

private:
    Var push_value(Tensor t, bool rg) {
        values_.push_back(std::move(t));
        requires_grad_.push_back(rg);
        grads_.emplace_back();
        return Var{values_.size() - 1};
    }

    void accumulate(std::size_t id, Tensor g) {
        if (grads_[id])
            *grads_[id] += g;
        else
            grads_[id] = std::move(g);
    }

    std::vector<Tensor> values_;
    std::vector<bool> requires_grad_;
    std::vector<std::optional<Tensor>> grads_;
    std::vector<Node> nodes_;
};

} // namespace gtd::num
