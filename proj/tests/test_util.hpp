#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <torch/torch.h>

namespace vemd::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("vemd_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Norm-wise relative error between the autograd gradient of f at x and
// central differences, over at most max_entries coordinates (double precision).
inline double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                             int max_entries = 40, double h = 1e-6) {
  x = x.detach().to(torch::kFloat64).clone().requires_grad_(true);
  auto y = f(x);
  auto g = torch::autograd::grad({y}, {x}, {}, false, false, true)[0];
  if (!g.defined()) g = torch::zeros_like(x);
  auto flat = x.detach().clone().view({-1});
  const int64_t n = flat.numel();
  const int64_t step = std::max<int64_t>(1, n / max_entries);
  double num = 0.0, den_a = 0.0, den_n = 0.0;
  auto gflat = g.contiguous().view({-1});
  torch::NoGradGuard ng;
  for (int64_t i = 0; i < n; i += step) {
    auto xp = flat.clone();
    auto xm = flat.clone();
    xp[i] += h;
    xm[i] -= h;
    const double fp = f(xp.view(x.sizes())).item<double>();
    const double fm = f(xm.view(x.sizes())).item<double>();
    const double fd = (fp - fm) / (2 * h);
    const double an = gflat[i].item<double>();
    num += (an - fd) * (an - fd);
    den_a += an * an;
    den_n += fd * fd;
  }
  const double den = std::sqrt(std::max(den_a, den_n));
  return den < 1e-14 ? std::sqrt(num) : std::sqrt(num) / den;
}

}  // namespace vemd::testing
