#include <doctest.h>

#include <cmath>
#include <functional>

#include "sdm/errors.hpp"
#include "sdm/ops.hpp"
#include "sdm/rng.hpp"
#include "sdm/tensor.hpp"

using namespace sdm;

namespace {

using RunFn = std::function<Tensor<double>(Tape<double>&,
                                           std::vector<Tensor<double>>&)>;

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

double eval_weighted(const std::vector<Shape5>& shapes,
                     const std::vector<std::vector<double>>& vals,
                     const RunFn& run, const std::vector<double>& w) {
  Tape<double> tape;
  std::vector<Tensor<double>> ins;
  ins.reserve(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    ins.push_back(tape.leaf(shapes[i], vals[i], false));
  }
  Tensor<double> out = run(tape, ins);
  double s = 0.0;
  for (std::size_t j = 0; j < out.numel(); ++j) s += w[j] * (*out.val)[j];
  return s;
}

// Backward of a weighted output sum against central differences over every
// element of every input.
void fd_check(const std::vector<Shape5>& shapes, const RunFn& run, Rng& rng,
              double tol, double h = 1e-6, double lo = -1.0, double hi = 1.0) {
  std::vector<std::vector<double>> vals(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    vals[i].resize(shapes[i].numel());
    for (auto& v : vals[i]) v = rng.uniform(lo, hi);
  }

  Tape<double> tape;
  std::vector<Tensor<double>> ins;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    ins.push_back(tape.leaf(shapes[i], vals[i], true));
  }
  Tensor<double> out = run(tape, ins);
  std::vector<double> w(out.numel());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  tape.backward(out, w);

  for (std::size_t i = 0; i < shapes.size(); ++i) {
    for (std::size_t e = 0; e < vals[i].size(); ++e) {
      const double keep = vals[i][e];
      vals[i][e] = keep + h;
      const double up = eval_weighted(shapes, vals, run, w);
      vals[i][e] = keep - h;
      const double dn = eval_weighted(shapes, vals, run, w);
      vals[i][e] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = (*ins[i].grad)[e];
      CHECK(rel_err(fd, an) < tol);
    }
  }
}

}  // namespace

TEST_CASE("tape leaves validate their buffers") {
  Tape<double> tape;
  CHECK_THROWS_AS((void)tape.leaf({1, 1, 2, 1, 1}, {1.0, 2.0, 3.0}),
                  ValidationError);
  Tensor<double> t = tape.leaf({1, 1, 2, 1, 1}, {1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(t, {1.0}), ValidationError);
  Tensor<double> frozen = tape.leaf({1, 1, 1, 1, 1}, false);
  CHECK_THROWS_AS(tape.backward(frozen, {1.0}), ValidationError);
}

TEST_CASE("identity kernel convolution reproduces its input") {
  Rng rng(701);
  Tape<double> tape;
  Shape5 is{1, 2, 4, 3, 3};
  std::vector<double> in(is.numel());
  for (auto& v : in) v = rng.uniform(-2.0, 2.0);
  Tensor<double> x = tape.leaf(is, in, false);

  Shape5 ks{2, 2, 3, 3, 3};
  std::vector<double> k(ks.numel(), 0.0);
  for (int co = 0; co < 2; ++co) {
    // centre tap of the matching input channel
    k[((std::size_t(co) * 2 + co) * 27) + 13] = 1.0;
  }
  Tensor<double> kernel = tape.leaf(ks, k, false);
  Tensor<double> bias = tape.leaf({1, 2, 1, 1, 1}, {0.0, 0.0}, false);

  Tensor<double> out = conv3d(tape, x, kernel, bias, 1);
  CHECK(out.shape == is);
  for (std::size_t i = 0; i < is.numel(); ++i) CHECK((*out.val)[i] == in[i]);
}

TEST_CASE("all-ones stride-2 kernel counts its window") {
  Tape<double> tape;
  Shape5 is{1, 1, 4, 4, 4};
  std::vector<double> in(is.numel(), 1.0);
  Tensor<double> x = tape.leaf(is, in, false);
  Tensor<double> kernel = tape.leaf({1, 1, 2, 2, 2}, std::vector<double>(8, 1.0), false);
  Tensor<double> bias = tape.leaf({1, 1, 1, 1, 1}, {0.25}, false);
  Tensor<double> out = conv3d(tape, x, kernel, bias, 2);
  CHECK(out.shape == Shape5{1, 1, 2, 2, 2});
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK((*out.val)[i] == 8.25);
}

TEST_CASE("convolution rejects unsupported geometry") {
  Tape<double> tape;
  Tensor<double> x = tape.leaf({1, 2, 4, 4, 4}, false);
  Tensor<double> b2 = tape.leaf({1, 2, 1, 1, 1}, false);
  // 3^3 kernels only at stride 1, 2^3 only at stride 2.
  Tensor<double> k3 = tape.leaf({2, 2, 3, 3, 3}, false);
  CHECK_THROWS_AS((void)conv3d(tape, x, k3, b2, 2), ValidationError);
  Tensor<double> k2 = tape.leaf({2, 2, 2, 2, 2}, false);
  CHECK_THROWS_AS((void)conv3d(tape, x, k2, b2, 1), ValidationError);
  // Channel mismatch.
  Tensor<double> kbad = tape.leaf({2, 3, 3, 3, 3}, false);
  CHECK_THROWS_AS((void)conv3d(tape, x, kbad, b2, 1), ValidationError);
  // Bias shape must match the output channels.
  Tensor<double> b3 = tape.leaf({1, 3, 1, 1, 1}, false);
  CHECK_THROWS_AS((void)conv3d(tape, x, k3, b3, 1), ValidationError);
}

TEST_CASE("convolution gradients match central differences") {
  Rng rng(702);
  SUBCASE("stride 1") {
    fd_check({{1, 2, 3, 3, 3}, {2, 2, 3, 3, 3}, {1, 2, 1, 1, 1}},
             [](Tape<double>& t, std::vector<Tensor<double>>& in) {
               return conv3d(t, in[0], in[1], in[2], 1);
             },
             rng, 1e-4);
  }
  SUBCASE("stride 2") {
    fd_check({{1, 2, 4, 4, 4}, {3, 2, 2, 2, 2}, {1, 3, 1, 1, 1}},
             [](Tape<double>& t, std::vector<Tensor<double>>& in) {
               return conv3d(t, in[0], in[1], in[2], 2);
             },
             rng, 1e-4);
  }
}

TEST_CASE("group norm standardizes each group") {
  Rng rng(703);
  Tape<double> tape;
  Shape5 is{2, 4, 3, 3, 3};
  std::vector<double> in(is.numel());
  for (auto& v : in) v = rng.uniform(-3.0, 3.0);
  Tensor<double> x = tape.leaf(is, in, false);
  Tensor<double> scale = tape.leaf({1, 4, 1, 1, 1}, std::vector<double>(4, 1.0), false);
  Tensor<double> shift = tape.leaf({1, 4, 1, 1, 1}, std::vector<double>(4, 0.0), false);
  Tensor<double> out = group_norm(tape, x, 2, scale, shift);

  const std::size_t sp = is.spatial();
  for (int b = 0; b < 2; ++b) {
    for (int g = 0; g < 2; ++g) {
      double mean = 0.0, var = 0.0;
      const std::size_t m = 2 * sp;
      for (int c = g * 2; c < g * 2 + 2; ++c) {
        const double* p = out.val->data() + (std::size_t(b) * 4 + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) mean += p[i];
      }
      mean /= double(m);
      for (int c = g * 2; c < g * 2 + 2; ++c) {
        const double* p = out.val->data() + (std::size_t(b) * 4 + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= double(m);
      CHECK(std::abs(mean) < 1e-12);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("one group per channel behaves like instance normalization") {
  Rng rng(704);
  Tape<double> tape;
  Shape5 is{1, 3, 2, 2, 2};
  std::vector<double> in(is.numel());
  for (auto& v : in) v = rng.uniform(-2.0, 2.0);
  Tensor<double> x = tape.leaf(is, in, false);
  Tensor<double> scale = tape.leaf({1, 3, 1, 1, 1}, std::vector<double>(3, 1.0), false);
  Tensor<double> shift = tape.leaf({1, 3, 1, 1, 1}, std::vector<double>(3, 0.0), false);
  const double eps = 1e-5;
  Tensor<double> out = group_norm(tape, x, 3, scale, shift, eps);

  const std::size_t sp = is.spatial();
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < sp; ++i) mean += in[c * sp + i];
    mean /= double(sp);
    for (std::size_t i = 0; i < sp; ++i) {
      double d = in[c * sp + i] - mean;
      var += d * d;
    }
    var /= double(sp);
    for (std::size_t i = 0; i < sp; ++i) {
      double expect = (in[c * sp + i] - mean) / std::sqrt(var + eps);
      CHECK((*out.val)[c * sp + i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("group norm rejects indivisible channel counts") {
  Tape<double> tape;
  Tensor<double> x = tape.leaf({1, 6, 2, 2, 2}, false);
  Tensor<double> scale = tape.leaf({1, 6, 1, 1, 1}, false);
  Tensor<double> shift = tape.leaf({1, 6, 1, 1, 1}, false);
  CHECK_THROWS_AS((void)group_norm(tape, x, 4, scale, shift), ValidationError);
}

TEST_CASE("group norm gradients match central differences") {
  Rng rng(705);
  fd_check({{1, 4, 2, 2, 2}, {1, 4, 1, 1, 1}, {1, 4, 1, 1, 1}},
           [](Tape<double>& t, std::vector<Tensor<double>>& in) {
             return group_norm(t, in[0], 2, in[1], in[2]);
           },
           rng, 1e-4);
}

TEST_CASE("activations compute their closed forms") {
  Tape<double> tape;
  Tensor<double> x =
      tape.leaf({1, 1, 5, 1, 1}, {-1.0, -0.5, 0.0, 0.5, 2.0}, false);
  Tensor<double> lr = leaky_relu(tape, x, 0.01);
  CHECK((*lr.val)[0] == -0.01);
  CHECK((*lr.val)[1] == -0.005);
  CHECK((*lr.val)[2] == 0.0);
  CHECK((*lr.val)[3] == 0.5);
  CHECK((*lr.val)[4] == 2.0);

  Tensor<double> th = tanh_op(tape, x);
  CHECK((*th.val)[2] == 0.0);
  for (std::size_t i = 0; i < th.numel(); ++i) {
    CHECK((*th.val)[i] > -1.0);
    CHECK((*th.val)[i] < 1.0);
    CHECK((*th.val)[i] == doctest::Approx(std::tanh((*x.val)[i])).epsilon(1e-15));
  }

  Tensor<double> sg = sigmoid_op(tape, x);
  CHECK((*sg.val)[2] == 0.5);
  CHECK((*sg.val)[4] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));

  Tensor<double> big = tape.leaf({1, 1, 2, 1, 1}, {-1000.0, 1000.0}, false);
  Tensor<double> sgb = sigmoid_op(tape, big);
  CHECK(std::isfinite((*sgb.val)[0]));
  CHECK(std::isfinite((*sgb.val)[1]));
  CHECK((*sgb.val)[0] >= 0.0);
  CHECK((*sgb.val)[1] <= 1.0);
}

TEST_CASE("activation gradients match central differences") {
  Rng rng(706);
  // Keep leaky-relu inputs away from its kink.
  fd_check({{1, 2, 3, 3, 2}},
           [](Tape<double>& t, std::vector<Tensor<double>>& in) {
             return leaky_relu(t, in[0], 0.01);
           },
           rng, 1e-4, 1e-6, 0.05, 1.0);
  fd_check({{1, 2, 3, 3, 2}},
           [](Tape<double>& t, std::vector<Tensor<double>>& in) {
             return leaky_relu(t, in[0], 0.01);
           },
           rng, 1e-4, 1e-6, -1.0, -0.05);
  fd_check({{1, 2, 3, 3, 2}},
           [](Tape<double>& t, std::vector<Tensor<double>>& in) {
             return tanh_op(t, in[0]);
           },
           rng, 1e-4);
  fd_check({{1, 2, 3, 3, 2}},
           [](Tape<double>& t, std::vector<Tensor<double>>& in) {
             return sigmoid_op(t, in[0]);
           },
           rng, 1e-4);
}

TEST_CASE("trilinear upsampling doubles each axis with fixed weights") {
  Tape<double> tape;
  Tensor<double> line = tape.leaf({1, 1, 2, 1, 1}, {1.0, 3.0}, false);
  Tensor<double> up = trilinear_upsample2(tape, line);
  CHECK(up.shape == Shape5{1, 1, 4, 2, 2});
  // Along x: [a, 0.75a+0.25b, 0.25a+0.75b, b]; y and z replicate.
  const double expect[4] = {1.0, 1.5, 2.5, 3.0};
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 4; ++x)
        CHECK((*up.val)[std::size_t(z) * 8 + std::size_t(y) * 4 + x] ==
              doctest::Approx(expect[x]).epsilon(1e-15));
}

TEST_CASE("trilinear upsampling preserves constants and means") {
  Rng rng(707);
  Tape<double> tape;
  Shape5 is{1, 2, 3, 2, 4};
  std::vector<double> in(is.numel(), 0.7);
  Tensor<double> c = tape.leaf(is, in, false);
  Tensor<double> up = trilinear_upsample2(tape, c);
  for (std::size_t i = 0; i < up.numel(); ++i) CHECK((*up.val)[i] == doctest::Approx(0.7).epsilon(1e-15));

  for (auto& v : in) v = rng.uniform(-1.0, 1.0);
  Tensor<double> x = tape.leaf(is, in, false);
  Tensor<double> ux = trilinear_upsample2(tape, x);
  double m_in = 0.0, m_out = 0.0;
  for (double v : in) m_in += v;
  m_in /= double(is.numel());
  for (std::size_t i = 0; i < ux.numel(); ++i) m_out += (*ux.val)[i];
  m_out /= double(ux.numel());
  CHECK(std::abs(m_in - m_out) < 1e-6);
}

TEST_CASE("trilinear upsampling gradients match central differences") {
  Rng rng(708);
  fd_check({{1, 2, 3, 2, 2}},
           [](Tape<double>& t, std::vector<Tensor<double>>& in) {
             return trilinear_upsample2(t, in[0]);
           },
           rng, 1e-4);
}

TEST_CASE("channel concatenation stacks values and splits gradients") {
  Rng rng(709);
  Tape<double> tape;
  Shape5 as{1, 2, 2, 2, 2};
  Shape5 bs{1, 3, 2, 2, 2};
  std::vector<double> av(as.numel()), bv(bs.numel());
  for (auto& v : av) v = rng.uniform(-1.0, 1.0);
  for (auto& v : bv) v = rng.uniform(-1.0, 1.0);
  Tensor<double> a = tape.leaf(as, av, true);
  Tensor<double> b = tape.leaf(bs, bv, true);
  Tensor<double> cat = concat_channels(tape, a, b);
  CHECK(cat.shape == Shape5{1, 5, 2, 2, 2});
  const std::size_t sp = as.spatial();
  for (std::size_t i = 0; i < as.numel(); ++i) CHECK((*cat.val)[i] == av[i]);
  for (std::size_t i = 0; i < bs.numel(); ++i)
    CHECK((*cat.val)[2 * sp + i] == bv[i]);

  std::vector<double> seed(cat.numel());
  for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = double(i) + 1.0;
  tape.backward(cat, seed);
  for (std::size_t i = 0; i < as.numel(); ++i) CHECK((*a.grad)[i] == seed[i]);
  for (std::size_t i = 0; i < bs.numel(); ++i)
    CHECK((*b.grad)[i] == seed[2 * sp + i]);

  // Mismatched spatial dims are rejected.
  Tensor<double> odd = tape.leaf({1, 1, 3, 2, 2}, false);
  CHECK_THROWS_AS((void)concat_channels(tape, a, odd), ValidationError);
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  Tape<double> tape;
  Tensor<double> x = tape.leaf({1, 1, 2, 1, 1}, {0.5, -0.25}, true);
  Tensor<double> both = concat_channels(tape, x, x);
  tape.backward(both, {1.0, 2.0, 3.0, 4.0});
  CHECK((*x.grad)[0] == 4.0);
  CHECK((*x.grad)[1] == 6.0);
}

TEST_CASE("composed pipelines backpropagate end to end") {
  Rng rng(710);
  fd_check({{1, 2, 4, 4, 4}, {2, 2, 2, 2, 2}, {1, 2, 1, 1, 1},
            {1, 2, 1, 1, 1}, {1, 2, 1, 1, 1}},
           [](Tape<double>& t, std::vector<Tensor<double>>& in) {
             Tensor<double> c = conv3d(t, in[0], in[1], in[2], 2);
             Tensor<double> g = group_norm(t, c, 2, in[3], in[4]);
             Tensor<double> a = leaky_relu(t, g, 0.01);
             Tensor<double> u = trilinear_upsample2(t, a);
             return concat_channels(t, u, tanh_op(t, in[0]));
           },
           rng, 2e-4);
}
