#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "splineflow/autodiff.hpp"
#include "splineflow/flow.hpp"
#include "splineflow/kernels.hpp"
#include "splineflow/mat.hpp"
#include "splineflow/rng.hpp"

// Times each kernel with the OpenMP drivers switched off (serial reference)
// and on, and checks that both paths produce bit-identical output.

using namespace splineflow;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  std::vector<double> times;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

Mat random_mat(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat m(rows, cols, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void bench(const std::string& name, const std::function<void()>& fn,
           const std::function<bool()>& same, int reps = 7) {
  kernels::set_parallel(false);
  const double serial = time_ms(fn, reps);
  kernels::set_parallel(true);
  const double parallel = time_ms(fn, reps);
  const bool identical = same();
  std::printf("%-28s serial %8.3f ms   parallel %8.3f ms   x%.2f   %s\n",
              name.c_str(), serial, parallel, serial / parallel,
              identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  Rng rng(1);
  const std::size_t N = 65536;

  {
    Mat a = random_mat(N, 66, rng);
    Mat b = random_mat(N, 66, rng);
    Mat out_serial(N, 66, 0.0), out_parallel(N, 66, 0.0);
    bench(
        "ew_binary mul 65536x66",
        [&] {
          kernels::ew_binary(kernels::BinaryOp::mul, a, b,
                             kernels::parallel_enabled() ? out_parallel : out_serial);
        },
        [&] {
          for (std::size_t i = 0; i < out_serial.size(); ++i) {
            if (out_serial.data()[i] != out_parallel.data()[i]) return false;
          }
          return true;
        });
  }

  {
    Mat a = random_mat(N, 33, rng);
    Mat out_serial(N, 33, 0.0), out_parallel(N, 33, 0.0);
    bench(
        "softmax_rows 65536x33",
        [&] {
          kernels::softmax_rows(a, kernels::parallel_enabled() ? out_parallel
                                                               : out_serial);
        },
        [&] {
          for (std::size_t i = 0; i < out_serial.size(); ++i) {
            if (out_serial.data()[i] != out_parallel.data()[i]) return false;
          }
          return true;
        });
  }

  {
    Mat a = random_mat(N, 64, rng);
    Mat b = random_mat(64, 64, rng);
    Mat out_serial(N, 64, 0.0), out_parallel(N, 64, 0.0);
    bench(
        "matmul 65536x64 * 64x64",
        [&] {
          kernels::matmul(a, false, b, false,
                          kernels::parallel_enabled() ? out_parallel : out_serial);
        },
        [&] {
          for (std::size_t i = 0; i < out_serial.size(); ++i) {
            if (out_serial.data()[i] != out_parallel.data()[i]) return false;
          }
          return true;
        });
  }

  {
    Mat a = random_mat(N, 66, rng);
    Mat out_serial(N, 1, 0.0), out_parallel(N, 1, 0.0);
    bench(
        "row_sum 65536x66",
        [&] {
          kernels::row_sum(a, kernels::parallel_enabled() ? out_parallel : out_serial);
        },
        [&] {
          for (std::size_t i = 0; i < out_serial.size(); ++i) {
            if (out_serial.data()[i] != out_parallel.data()[i]) return false;
          }
          return true;
        });
  }

  {
    flow::ModelConfig cfg;  // default 2-D model: K = 128, 2 couplings
    flow::FlowModel model(cfg, 7);
    Rng rx(8);
    Mat x(8192, 2, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rx.uniform(0.01, 0.99);
    Mat lp_serial, lp_parallel;
    bench(
        "flow log_prob 8192x2",
        [&] {
          (kernels::parallel_enabled() ? lp_parallel : lp_serial) = model.log_prob(x);
        },
        [&] {
          for (std::size_t i = 0; i < lp_serial.size(); ++i) {
            if (lp_serial.data()[i] != lp_parallel.data()[i]) return false;
          }
          return true;
        },
        3);

    Mat xb(512, 2, 0.0);
    for (std::size_t i = 0; i < xb.size(); ++i) xb.data()[i] = rx.uniform(0.01, 0.99);
    double g_serial = 0.0, g_parallel = 0.0;
    bench(
        "tape step 512x2",
        [&] {
          ad::Tape t(&model.params());
          ad::Value loss = ad::negate(ad::mean_all(model.log_prob_tape(t, xb)));
          t.backward(loss);
          const Mat* g = t.param_grad(model.params().name_at(0));
          (kernels::parallel_enabled() ? g_parallel : g_serial) =
              g ? g->at(0, 0) : 0.0;
        },
        [&] { return g_serial == g_parallel; }, 3);
  }

  kernels::set_parallel(true);
  return 0;
}
