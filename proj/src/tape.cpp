#include "headsearch/tape.hpp"

#include <atomic>

#include "headsearch/error.hpp"

namespace headsearch {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* active_tape = nullptr;
thread_local bool grad_enabled = true;

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)), previous_(active_tape) { active_tape = this; }

Tape::~Tape() {
  if (active_tape == this) active_tape = previous_;
}

Tape* Tape::active() { return grad_enabled ? active_tape : nullptr; }

void Tape::record(Tensor& output, BackwardRule rule) {
  output.set_requires_grad(true);
  output.set_graph_ref(GraphRef{id_, nodes_.size()});
  nodes_.push_back(Node{output, std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw RankError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  const GraphRef& ref = loss.graph_ref();
  if (ref.tape_id != id_) throw Error("loss was not recorded on this tape");

  // Intermediate gradients are released so that an allocated buffer marks a
  // node reached by the sweep.
  for (std::size_t i = 0; i <= ref.node; ++i) nodes_[i].output.release_grad();
  Tensor seed = nodes_[ref.node].output;
  seed.grad_buffer()[0] = 1.0f;

  for (std::size_t i = ref.node + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.output.has_grad()) continue;
    node.rule(node.output.grad());
  }
}

void backward(const Tensor& loss) {
  Tape* tape = active_tape;
  if (!tape) throw Error("backward called with no active tape");
  tape->backward(loss);
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

bool grad_mode_enabled() { return grad_enabled; }

}  // namespace headsearch
