// Writes the small example inputs shipped under data/example/.

#include <filesystem>
#include <iostream>
#include <random>

#include "casa/casa.hpp"

namespace {

// B noisy r x r "cross-attention" layers whose mean is the 2x2 block average of m0.
casa::DenseArray cross_stack(const casa::Scenario& s, int layers, std::mt19937_64& rng) {
  const auto big = s.m0.side, r = big / 2;
  casa::Grid m = casa::reshape(s.m0);
  std::normal_distribution<double> jitter(0.0, 0.05);
  std::vector<float> out;
  for (int b = 0; b < layers; ++b)
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < r; ++j) {
        double v = m.block(2 * i, 2 * j, 2, 2).mean() + jitter(rng);
        out.push_back(static_cast<float>(std::max(0.0, v)));
      }
  return casa::DenseArray({static_cast<std::size_t>(layers), static_cast<std::size_t>(r), static_cast<std::size_t>(r)},
                          std::move(out));
}

casa::DenseArray self_matrix(const casa::Scenario& s) {
  const auto n = static_cast<std::size_t>(s.self_attention.rows());
  casa::Grid rm = s.self_attention;
  std::vector<float> v(rm.data(), rm.data() + rm.size());
  return casa::DenseArray({1, n, n}, std::move(v));
}

}  // namespace

int main(int argc, char** argv) {
  std::filesystem::path dir = argc > 1 ? argv[1] : "data/example";
  std::filesystem::create_directories(dir);
  casa::ScenarioParams p;
  p.side = 16;
  p.spill_count = 3;
  auto src = casa::generate(7, p);
  auto tgt = casa::generate(8, p);
  std::mt19937_64 rng(42);
  casa::write_array(cross_stack(src, 3, rng), dir / "cross_src.npy");
  casa::write_array(cross_stack(tgt, 3, rng), dir / "cross_tgt.npy");
  casa::write_array(self_matrix(src), dir / "self_src.npy");
  casa::write_array(self_matrix(tgt), dir / "self_tgt.npy");

  std::normal_distribution<double> g(0.0, 1.0);
  auto latent = [&] {
    std::vector<float> v(4 * 16 * 16);
    for (auto& x : v) x = static_cast<float>(g(rng));
    return casa::DenseArray({4, 16, 16}, std::move(v));
  };
  casa::write_array(latent(), dir / "z_src.npy");
  casa::write_array(latent(), dir / "z_tgt.npy");

  auto embedding = [&] {
    std::vector<float> v(768);
    for (auto& x : v) x = static_cast<float>(0.1 * g(rng));
    return casa::DenseArray({768}, std::move(v));
  };
  casa::write_array(embedding(), dir / "src_img.npy");
  casa::write_array(embedding(), dir / "src_txt.npy");
  casa::write_array(embedding(), dir / "tgt_txt.npy");
  std::cout << "wrote example inputs to " << dir << "\n";
}
