#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unidrop/tensor.hpp"

namespace unidrop {

// Handle to a node on a Tape. Plain index; valid only for the tape that
// produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Dynamic reverse-mode tape. Every operation appends a node holding the
// forward value and a closure that scatters the node's adjoint back to its
// inputs. The tape is rebuilt per forward pass; nodes are in topological
// order by construction.
//
// Adjoint storage is allocated lazily by backward(), so forward-only
// evaluation (Monte-Carlo loops, decoding) pays nothing for gradients.
class Tape {
 public:
  // Leaves. input() and constant() build identical nodes; the distinction
  // is documentation at call sites (constants never have their adjoint read).
  Var input(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  // Valid after backward()/backward_seeded(); ∂root/∂node.
  const Tensor& adjoint(Var v) const;

  // Elementwise; shapes must match.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);

  // [m,k] x [k,n] -> [m,n]
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  // a: [m,n], row: [n]; adds row to every row of a.
  Var add_row(Var a, Var row);

  Var relu(Var a);

  // Row-wise softmax / log-softmax over a rank-2 tensor. Masking is done by
  // adding large negative constants to the input beforehand; a row whose
  // entries are all below -1e29 is treated as fully masked and rejected.
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);

  // Row-wise layer norm with affine gain/bias (both rank-1 of width n).
  // eps sits inside the square root; zero-variance rows map to the bias.
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps);

  // table: [V,d]; result: [ids.size(), d]. Backward scatters into the table.
  Var embed_rows(Var table, std::vector<int> ids);

  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var concat_cols(std::span<const Var> parts);

  // Sum of all entries -> scalar.
  Var sum(Var a);

  // Reverse pass from a scalar root: zeroes all adjoints, seeds the root
  // with 1 and runs every node's backward closure in reverse order.
  void backward(Var root);

  // Reverse pass from an arbitrary node with an explicit adjoint seed of the
  // node's own shape. Used for Jacobian assembly.
  void backward_seeded(Var node, const Tensor& seed);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;
    std::function<void(Tape&)> back;  // null for leaves
    const char* op = "leaf";
  };

  friend struct TapeOps;

  int check(Var v) const;
  Var push(const char* op, Tensor value, std::function<void(Tape&)> back);
  Tensor& adj(int id) { return nodes_[id].adjoint; }
  const Tensor& val(int id) const { return nodes_[id].value; }
  void run_backward(int from);

  std::vector<Node> nodes_;
  bool adjoints_live_ = false;
};

}  // namespace unidrop
