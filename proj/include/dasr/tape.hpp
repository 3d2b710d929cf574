#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "dasr/tensor.hpp"

namespace dasr {

/// Records traced operations in execution order and replays their
/// backward rules in reverse. Recording only happens while the tape is
/// active on the current thread (see Tape::Scope); operations executed
/// with no active tape are plain forward computations.
///
/// A tape is single-owner and must outlive every tensor it traced.
template <class T>
class Tape {
public:
    // Receives the gradient of the record's output and accumulates into
    // input nodes through Tape::accumulate.
    using BackwardFn = std::function<void(std::span<const T> grad_out, Tape& tape)>;

    struct Record {
        std::string op;
        std::vector<int> inputs;
        int output = -1;
        BackwardFn backward;
    };

    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

    Tape() = default;
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] Scope activate() { return Scope(*this); }
    static Tape* active() noexcept;

    // Returns the tape that should record an op over these inputs, or
    // nullptr when no recording is needed. Throws when a traced input
    // belongs to a tape other than the active one.
    static Tape* recording_for(std::initializer_list<const Tensor<T>*> inputs);

    // Node id for an input: the existing node for traced tensors, a
    // (deduplicated) leaf for requires_grad tensors, -1 for constants.
    int node_for(const Tensor<T>& t);

    Tensor<T> record(std::string op, Shape shape, std::vector<T> values, std::vector<int> inputs,
                     BackwardFn backward);

    // Adds `g` into the gradient buffer of `node`; no-op for node -1.
    void accumulate(int node, std::span<const T> g);
    // Mutable gradient buffer of `node`, zero-allocated on first use.
    std::vector<T>& grad_buffer(int node);

    /// Propagates d(loss)/d(node) for every recorded node, writes the
    /// result into each leaf's grad (zeros for leaves the loss does not
    /// depend on), then resets the tape.
    void backward(const Tensor<T>& loss);
    void reset();

    std::size_t num_records() const noexcept { return records_.size(); }
    std::size_t num_leaves() const noexcept { return leaves_.size(); }
    std::size_t num_nodes() const noexcept { return nodes_.size(); }
    const std::vector<Record>& records() const noexcept { return records_; }

private:
    struct Node {
        Shape shape;
        std::vector<T> grad;
        std::shared_ptr<std::vector<T>> leaf_grad;
    };

    int new_node(const Shape& shape);

    std::vector<Node> nodes_;
    std::vector<Record> records_;
    std::unordered_map<const void*, int> leaves_;
    unsigned epoch_ = 1;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dasr
