// Serial reference kernels against the OpenMP kernels, plus one training step.
//
//   bench_kernels [--repeats N] [--threads T]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "hybrid/kernels.hpp"
#include "hybrid/model.hpp"
#include "hybrid/ops.hpp"

using namespace hybrid;

namespace {

double seconds_per_call(const std::function<void()>& fn, int repeats) {
  fn();
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / repeats;
}

std::vector<Real> random_values(std::size_t n, Rng& rng) {
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-1, 1));
  return v;
}

void bench_gemm(const char* name, std::size_t m, std::size_t n, std::size_t k, int repeats, Rng& rng) {
  const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
  std::vector<Real> c_serial(m * n, 0), c_parallel(m * n, 0);
  using Gemm = void (*)(std::size_t, std::size_t, std::size_t, std::span<const Real>, std::span<const Real>,
                        std::span<Real>);
  Gemm serial = nullptr, parallel = nullptr;
  if (std::strcmp(name, "gemm_nn") == 0) serial = kernels::serial::gemm_nn, parallel = kernels::gemm_nn;
  if (std::strcmp(name, "gemm_nt") == 0) serial = kernels::serial::gemm_nt, parallel = kernels::gemm_nt;
  if (std::strcmp(name, "gemm_tn") == 0) serial = kernels::serial::gemm_tn, parallel = kernels::gemm_tn;
  const double ts = seconds_per_call([&] { serial(m, n, k, a, b, c_serial); }, repeats);
  const double tp = seconds_per_call([&] { parallel(m, n, k, a, b, c_parallel); }, repeats);
  const double gflop = 2.0 * double(m) * double(n) * double(k) * 1e-9;
  std::printf("%-8s %5zux%5zux%5zu  serial %8.3f ms %6.2f GF/s  openmp %8.3f ms %6.2f GF/s  speedup %.2fx\n", name, m,
              n, k, ts * 1e3, gflop / ts, tp * 1e3, gflop / tp, ts / tp);
}

void bench_step(int repeats) {
  ModelConfig mc;
  mc.encoder.dim = 64;
  mc.encoder.ff_dim = 256;
  mc.classifier_hidden = 128;
  PairModel model(mc, 1);
  Rng rng(2);
  std::vector<logic::LabeledPair> pairs;
  for (int i = 0; i < 32; ++i) {
    pairs.push_back(logic::make_pair(logic::sample_expression(rng, static_cast<int>(rng.below(7))),
                                     logic::sample_expression(rng, static_cast<int>(rng.below(7)))));
  }
  std::vector<const logic::LabeledPair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  const PairBatch batch = make_batch(ptrs, true);
  const double t = seconds_per_call(
      [&] {
        GradTape::current().clear();
        model.params().zero_grad();
        backward(cross_entropy(model.logits(batch), batch.labels));
        GradTape::current().clear();
      },
      repeats);
  std::printf("train step (hybrid d=64, batch 32)  %8.3f ms\n", t * 1e3);
}

}  // namespace

int main(int argc, char** argv) {
  int repeats = 5;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--repeats") repeats = std::stoi(argv[i + 1]);
    else if (flag == "--threads") kernels::set_num_threads(std::stoi(argv[i + 1]));
    else {
      std::fprintf(stderr, "usage: bench_kernels [--repeats N] [--threads T]\n");
      return 1;
    }
  }
  std::printf("threads %d, %s precision\n", kernels::max_threads(), kDoublePrecision ? "double" : "single");
  Rng rng(1);
  for (const char* name : {"gemm_nn", "gemm_nt", "gemm_tn"}) {
    bench_gemm(name, 256, 256, 256, repeats, rng);
    bench_gemm(name, 1024, 256, 64, repeats, rng);
  }
  bench_step(repeats);
  return 0;
}
