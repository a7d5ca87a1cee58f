#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace oracle {

using stylesketch::Shape;

namespace {

struct View4 {
  const std::vector<float>* v;
  int64_t n, c, h, w;
  float at(int64_t a, int64_t b, int64_t y, int64_t x) const { return (*v)[((a * c + b) * h + y) * w + x]; }
};

View4 view(const Tensor& t, std::vector<float>& storage) {
  storage.assign(t.data().begin(), t.data().end());
  return {&storage, t.size(0), t.size(1), t.size(2), t.size(3)};
}

template <typename Reduce>
Tensor scan_windows(const Tensor& x, int oh, int ow, auto row_bounds, auto col_bounds, Reduce reduce) {
  std::vector<float> buf;
  const View4 v = view(x, buf);
  std::vector<float> out;
  for (int64_t n = 0; n < v.n; ++n) {
    for (int64_t c = 0; c < v.c; ++c) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          auto [r0, r1] = row_bounds(i);
          auto [c0, c1] = col_bounds(j);
          std::vector<double> window;
          for (int64_t y = r0; y < r1; ++y) {
            for (int64_t xx = c0; xx < c1; ++xx) window.push_back(v.at(n, c, y, xx));
          }
          out.push_back(static_cast<float>(reduce(window)));
        }
      }
    }
  }
  return Tensor({v.n, v.c, oh, ow}, out);
}

double max_of(const std::vector<double>& w) { return *std::max_element(w.begin(), w.end()); }
double mean_of(const std::vector<double>& w) { return std::accumulate(w.begin(), w.end(), 0.0) / w.size(); }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const int64_t CO = w.size(0), K = w.size(2);
  const int64_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  std::vector<float> out(static_cast<size_t>(N * CO * OH * OW));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < CO; ++co)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double acc = b.data()[co];
          for (int64_t ci = 0; ci < C; ++ci)
            for (int64_t ky = 0; ky < K; ++ky)
              for (int64_t kx = 0; kx < K; ++kx) {
                const int64_t iy = oy * stride + ky - pad;
                const int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += static_cast<double>(x.at({n, ci, iy, ix})) * w.at({co, ci, ky, kx});
              }
          out[((n * CO + co) * OH + oy) * OW + ox] = static_cast<float>(acc);
        }
  return Tensor({N, CO, OH, OW}, out);
}

Tensor max_pool(const Tensor& x, int k, int s) {
  const int oh = static_cast<int>((x.size(2) - k) / s + 1);
  const int ow = static_cast<int>((x.size(3) - k) / s + 1);
  auto rb = [=](int i) { return std::pair<int64_t, int64_t>{i * s, i * s + k}; };
  return scan_windows<double (*)(const std::vector<double>&)>(x, oh, ow, rb, rb, max_of);
}

Tensor avg_pool(const Tensor& x, int k, int s) {
  const int oh = static_cast<int>((x.size(2) - k) / s + 1);
  const int ow = static_cast<int>((x.size(3) - k) / s + 1);
  auto rb = [=](int i) { return std::pair<int64_t, int64_t>{i * s, i * s + k}; };
  return scan_windows<double (*)(const std::vector<double>&)>(x, oh, ow, rb, rb, mean_of);
}

Tensor adaptive_avg(const Tensor& x, int out_h, int out_w) {
  const int64_t H = x.size(2), W = x.size(3);
  auto rb = [=](int i) { return std::pair<int64_t, int64_t>{i * H / out_h, (i + 1) * H / out_h}; };
  auto cb = [=](int j) { return std::pair<int64_t, int64_t>{j * W / out_w, (j + 1) * W / out_w}; };
  return scan_windows<double (*)(const std::vector<double>&)>(x, out_h, out_w, rb, cb, mean_of);
}

Tensor fmt_literal(const Tensor& f, const Tensor& style_sketch, const Tensor& input_sketch) {
  const int64_t N = f.size(0), C = f.size(1), H = f.size(2), W = f.size(3);
  auto mask_at = [](const Tensor& m, int64_t n, int64_t y, int64_t x) {
    return m.at({m.size(0) == 1 ? 0 : n, 0, y, x});
  };
  // A plane of optional values: absent entries are not members of the branch.
  using Plane = std::vector<std::vector<std::optional<double>>>;
  auto pool_set = [](Plane p) {
    while (p.size() > 10) {
      const size_t o = (p.size() - 5) / 3 + 1;
      Plane q(o, std::vector<std::optional<double>>(o));
      for (size_t i = 0; i < o; ++i)
        for (size_t j = 0; j < o; ++j)
          for (size_t y = 3 * i; y < 3 * i + 5; ++y)
            for (size_t x = 3 * j; x < 3 * j + 5; ++x)
              if (p[y][x] && (!q[i][j] || *p[y][x] > *q[i][j])) q[i][j] = p[y][x];
      p = std::move(q);
    }
    const size_t S = p.size();
    Plane q(4, std::vector<std::optional<double>>(4));
    for (size_t i = 0; i < 4; ++i)
      for (size_t j = 0; j < 4; ++j) {
        double acc = 0.0;
        int cnt = 0;
        for (size_t y = i * S / 4; y < (i + 1) * S / 4; ++y)
          for (size_t x = j * S / 4; x < (j + 1) * S / 4; ++x)
            if (p[y][x]) acc += *p[y][x], ++cnt;
        if (cnt > 0) q[i][j] = acc / cnt;
      }
    return q;
  };
  // Empty cells take the mean of populated ones; nullopt if none are.
  auto fill = [](const Plane& q) -> std::optional<Plane> {
    double acc = 0.0;
    int cnt = 0;
    for (const auto& row : q)
      for (const auto& e : row)
        if (e) acc += *e, ++cnt;
    if (cnt == 0) return std::nullopt;
    Plane r = q;
    for (auto& row : r)
      for (auto& e : row)
        if (!e) e = acc / cnt;
    return r;
  };
  std::vector<float> out(f.data().size());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      Plane contour(H, std::vector<std::optional<double>>(W)), plain = contour;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const double v = f.at({n, c, y, x});
          (mask_at(style_sketch, n, y, x) > 0.5f ? contour : plain)[y][x] = v;
        }
      auto pc = fill(pool_set(contour));
      auto pp = fill(pool_set(plain));
      if (!pc) pc = pp;
      if (!pp) pp = pc;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const bool on = mask_at(input_sketch, n, y, x) > 0.5f;
          out[((n * C + c) * H + y) * W + x] = static_cast<float>(*(on ? *pc : *pp)[y / (H / 4)][x / (W / 4)]);
        }
    }
  return Tensor(f.shape(), out);
}

double gradient_match(const Tensor& a, const Tensor& b, double eps) {
  const int64_t N = a.size(0), C = a.size(1), H = a.size(2), W = a.size(3);
  const int64_t ph = H / 8, pw = W / 8;
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    const int64_t gh = dir == 0 ? H : H - 1;  // dir 0 differences along width
    const int64_t gw = dir == 0 ? W - 1 : W;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t pi = 0; pi < 8; ++pi)
          for (int64_t pj = 0; pj < 8; ++pj) {
            std::vector<double> ga, gb;
            for (int64_t y = 0; y < gh; ++y)
              for (int64_t x = 0; x < gw; ++x) {
                if (y / ph != pi || x / pw != pj) continue;
                const int64_t y2 = dir == 0 ? y : y + 1;
                const int64_t x2 = dir == 0 ? x + 1 : x;
                ga.push_back(static_cast<double>(a.at({n, c, y2, x2})) - a.at({n, c, y, x}));
                gb.push_back(static_cast<double>(b.at({n, c, y2, x2})) - b.at({n, c, y, x}));
              }
            auto stats = [eps](const std::vector<double>& g) {
              const double m = mean_of(g);
              double v = 0.0;
              for (double e : g) v += (e - m) * (e - m);
              return std::pair<double, double>{m, std::sqrt(v / g.size() + eps)};
            };
            const auto [ma, sa] = stats(ga);
            const auto [mb, sb] = stats(gb);
            total += (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb);
          }
  }
  return total / (64.0 * N);
}

double gram_l2(const Tensor& a, const Tensor& b) {
  const int64_t C = a.size(1), H = a.size(2), W = a.size(3);
  double fro = 0.0;
  for (int64_t i = 0; i < C; ++i)
    for (int64_t j = 0; j < C; ++j) {
      double ga = 0.0, gb = 0.0;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          ga += static_cast<double>(a.at({0, i, y, x})) * a.at({0, j, y, x});
          gb += static_cast<double>(b.at({0, i, y, x})) * b.at({0, j, y, x});
        }
      const double d = (ga - gb) / static_cast<double>(C * H * W);
      fro += d * d;
    }
  return 1000.0 * std::sqrt(fro);
}

std::vector<uint8_t> dog_sketch(const Tensor& image, double sigma, double k, double tau) {
  const int64_t H = image.size(1), W = image.size(2);
  std::vector<double> gray(static_cast<size_t>(H * W));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      gray[y * W + x] = 0.299 * image.at({0, y, x}) + 0.587 * image.at({1, y, x}) + 0.114 * image.at({2, y, x});
  auto blur2d = [&](double s) {
    const int r = static_cast<int>(std::ceil(3.0 * s));
    std::vector<double> out(gray.size());
    double norm = 0.0;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) norm += std::exp(-(dy * dy + dx * dx) / (2.0 * s * s));
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int64_t yy = std::clamp<int64_t>(y + dy, 0, H - 1);
            const int64_t xx = std::clamp<int64_t>(x + dx, 0, W - 1);
            acc += std::exp(-(dy * dy + dx * dx) / (2.0 * s * s)) * gray[yy * W + xx];
          }
        out[y * W + x] = acc / norm;
      }
    return out;
  };
  const auto g1 = blur2d(sigma);
  const auto g2 = blur2d(k * sigma);
  std::vector<uint8_t> mask(gray.size());
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = (g1[i] - g2[i]) < -tau ? 1 : 0;
  return mask;
}

Tensor separated_values(const Shape& shape, float gap, stylesketch::Rng& rng) {
  const int64_t n = stylesketch::numel_of(shape);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<float> v(order.size());
  // Ranks map onto +-(0.05 + rank * gap), alternating sign by rank parity.
  for (size_t i = 0; i < order.size(); ++i) {
    const int64_t r = order[i];
    const float mag = 0.05f + static_cast<float>(r / 2) * gap * 2.0f;
    v[i] = (r % 2 == 0) ? mag : -mag - gap;
  }
  return Tensor(shape, v);
}

Tensor random_mask(const Shape& shape, double p, stylesketch::Rng& rng) {
  std::bernoulli_distribution bit(p);
  std::vector<float> v(static_cast<size_t>(stylesketch::numel_of(shape)));
  for (float& e : v) e = bit(rng) ? 1.0f : 0.0f;
  return Tensor(shape, v);
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<float>::infinity();
  float m = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace oracle
