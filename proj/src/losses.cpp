#include "maskreid/losses.hpp"

namespace maskreid {

namespace {
Tensor<double> row_tensor(const std::vector<double>& v) {
  Tensor<double> t(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) t(0, i) = v[i];
  return t;
}
}  // namespace

double id_loss(const std::vector<double>& logits, std::size_t label) {
  if (label >= logits.size()) throw std::invalid_argument("id_loss: label out of range");
  Tape<double> tape(false);
  Var l = tape.leaf(row_tensor(logits));
  return tape.val(tape.cross_entropy_rows(l, {label}))[0];
}

double triplet_loss(const std::vector<double>& anchor, const std::vector<double>& positive,
                    const std::vector<double>& negative) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw std::invalid_argument("triplet_loss: dimension mismatch");
  Tape<double> tape(false);
  Tensor<double> rows(3, anchor.size());
  for (std::size_t j = 0; j < anchor.size(); ++j) {
    rows(0, j) = anchor[j];
    rows(1, j) = positive[j];
    rows(2, j) = negative[j];
  }
  Var f = tape.leaf(rows);
  return tape.val(triplet_loss_mean(tape, f, {{0, 1, 2}}))[0];
}

double negative_cosine(const std::vector<double>& p, const std::vector<double>& z) {
  Tape<double> tape(false);
  return tape.val(negative_cosine_mean(tape, tape.leaf(row_tensor(p)),
                                       tape.leaf(row_tensor(z))))[0];
}

double contrastive_value(const std::vector<double>& p1, const std::vector<double>& z1,
                         const std::vector<double>& p2, const std::vector<double>& z2) {
  Tape<double> tape(false);
  return tape.val(contrastive_loss(tape, tape.leaf(row_tensor(p1)), tape.leaf(row_tensor(z1)),
                                   tape.leaf(row_tensor(p2)), tape.leaf(row_tensor(z2))))[0];
}

double joint_value(double supervised, double contrastive, double lambda) {
  Tape<double> tape(false);
  return tape.val(joint_loss(tape, tape.leaf(Tensor<double>(1, 1, supervised)),
                             tape.leaf(Tensor<double>(1, 1, contrastive)), lambda))[0];
}

}  // namespace maskreid
