#include "splineflow/conditioner.hpp"

#include <cmath>
#include <utility>

#include "splineflow/errors.hpp"
#include "splineflow/kernels.hpp"

namespace splineflow::conditioner {

namespace {

Mat uniform_init(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat m(rows, cols, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

ResidualMLP::ResidualMLP(std::string prefix, int in_width, int hidden, int out_width)
    : prefix_(std::move(prefix)), in_(in_width), hidden_(hidden), out_(out_width) {
  if (in_ < 1 || hidden_ < 1 || out_ < 1) {
    throw NumericError("ResidualMLP: widths must be positive (got in=" +
                       std::to_string(in_) + ", hidden=" + std::to_string(hidden_) +
                       ", out=" + std::to_string(out_) + ")");
  }
}

void ResidualMLP::register_params(ParamStore& store, Rng& rng) const {
  const std::size_t H = static_cast<std::size_t>(hidden_);
  store.create(name("W_in"), uniform_init(rng, H, in_, in_));
  store.create(name("b_in"), Mat(1, H, 0.0));
  store.create(name("blk1_W1"), uniform_init(rng, H, H, H));
  store.create(name("blk1_W2"), uniform_init(rng, H, H, H));
  store.create(name("blk2_W1"), uniform_init(rng, H, H, H));
  store.create(name("blk2_W2"), uniform_init(rng, H, H, H));
  store.create(name("W_out"), Mat(out_, H, 0.0));
  store.create(name("b_out"), Mat(1, out_, 0.0));
}

std::vector<std::string> ResidualMLP::param_names() const {
  return {name("W_in"),    name("b_in"),    name("blk1_W1"), name("blk1_W2"),
          name("blk2_W1"), name("blk2_W2"), name("W_out"),   name("b_out")};
}

ad::Value ResidualMLP::forward(ad::Tape& t, ad::Value context) const {
  if (context.cols() != static_cast<std::size_t>(in_)) {
    throw NumericError("ResidualMLP: context width " + std::to_string(context.cols()) +
                       " does not match input width " + std::to_string(in_));
  }
  ad::Value h = ad::add(ad::matmul_nt(context, t.param(name("W_in"))), t.param(name("b_in")));
  for (const char* blk : {"blk1", "blk2"}) {
    ad::Value w1 = t.param(prefix_ + "." + blk + "_W1");
    ad::Value w2 = t.param(prefix_ + "." + blk + "_W2");
    ad::Value branch = ad::matmul_nt(ad::relu(ad::matmul_nt(ad::relu(h), w1)), w2);
    h = ad::add(h, branch);
  }
  return ad::add(ad::matmul_nt(h, t.param(name("W_out"))), t.param(name("b_out")));
}

Mat ResidualMLP::forward_plain(const ParamStore& store, const Mat& context) const {
  if (context.cols() != static_cast<std::size_t>(in_)) {
    throw NumericError("ResidualMLP: context width " + std::to_string(context.cols()) +
                       " does not match input width " + std::to_string(in_));
  }
  const std::size_t N = context.rows();
  const std::size_t H = static_cast<std::size_t>(hidden_);

  Mat h(N, H, 0.0);
  kernels::matmul(context, false, store.get(name("W_in")), true, h);
  kernels::ew_binary(kernels::BinaryOp::add, h, store.get(name("b_in")), h);

  Mat act(N, H, 0.0), mid(N, H, 0.0), branch(N, H, 0.0);
  for (const char* blk : {"blk1", "blk2"}) {
    kernels::ew_unary(kernels::UnaryOp::relu, h, act);
    kernels::matmul(act, false, store.get(prefix_ + "." + blk + "_W1"), true, mid);
    kernels::ew_unary(kernels::UnaryOp::relu, mid, act);
    kernels::matmul(act, false, store.get(prefix_ + "." + blk + "_W2"), true, branch);
    kernels::ew_binary(kernels::BinaryOp::add, h, branch, h);
  }

  Mat out(N, static_cast<std::size_t>(out_), 0.0);
  kernels::matmul(h, false, store.get(name("W_out")), true, out);
  kernels::ew_binary(kernels::BinaryOp::add, out, store.get(name("b_out")), out);
  return out;
}

}  // namespace splineflow::conditioner
