#include "pathaudit/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <thread>

#include "pathaudit/error.hpp"

namespace pathaudit::projection {

namespace {

// mt19937_64 is fully specified; the conversions below avoid the
// implementation-defined std:: distributions so layouts match across builds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0;
  bool has_spare_ = false;
};

// Undirected skeleton over a node subset, local indices, rows sorted.
struct Skeleton {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> targets;

  std::span<const std::uint32_t> row(std::uint32_t v) const {
    return {targets.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }
  bool adjacent(std::uint32_t a, std::uint32_t b) const {
    auto r = row(a);
    return std::binary_search(r.begin(), r.end(), b);
  }
};

Skeleton build_skeleton(const kg::KnowledgeGraph& g, std::span<const kg::NodeIndex> nodes) {
  const std::uint32_t none = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> local(g.entity_count(), none);
  for (std::size_t i = 0; i < nodes.size(); ++i) local[nodes[i]] = static_cast<std::uint32_t>(i);
  Skeleton s;
  s.offsets.push_back(0);
  std::vector<std::uint32_t> row;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    row.clear();
    for (auto w : g.successors(nodes[i])) {
      if (local[w] != none && w != nodes[i]) row.push_back(local[w]);
    }
    for (auto w : g.predecessors(nodes[i])) {
      if (local[w] != none && w != nodes[i]) row.push_back(local[w]);
    }
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    s.targets.insert(s.targets.end(), row.begin(), row.end());
    s.offsets.push_back(s.targets.size());
  }
  return s;
}

// Second-order walks by rejection sampling against max(1/p, 1, 1/q).
std::vector<std::vector<std::uint32_t>> generate_walks(const Skeleton& s, std::size_t n,
                                                       const Node2VecParams& params, Rng& rng) {
  const double wp = 1.0 / params.return_p;
  const double wq = 1.0 / params.inout_q;
  const double bound = std::max({wp, 1.0, wq});
  std::vector<std::vector<std::uint32_t>> walks;
  walks.reserve(n * params.walks_per_node);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t r = 0; r < params.walks_per_node; ++r) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (auto start : order) {
      std::vector<std::uint32_t> walk{start};
      walk.reserve(params.walk_length);
      while (walk.size() < params.walk_length) {
        const auto cur = walk.back();
        auto nbrs = s.row(cur);
        if (nbrs.empty()) break;
        if (walk.size() == 1) {
          walk.push_back(nbrs[rng.below(nbrs.size())]);
          continue;
        }
        const auto prev = walk[walk.size() - 2];
        for (;;) {
          const auto x = nbrs[rng.below(nbrs.size())];
          const double w = x == prev ? wp : (s.adjacent(prev, x) ? 1.0 : wq);
          if (rng.uniform() * bound < w) {
            walk.push_back(x);
            break;
          }
        }
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

struct Sgns {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<float> syn0, syn1;
  std::vector<double> cumulative;  // unigram^0.75
};

std::uint32_t sample_negative(const Sgns& m, Rng& rng) {
  const double u = rng.uniform() * m.cumulative.back();
  auto it = std::upper_bound(m.cumulative.begin(), m.cumulative.end(), u);
  if (it == m.cumulative.end()) --it;
  return static_cast<std::uint32_t>(it - m.cumulative.begin());
}

void train_range(Sgns& m, const std::vector<std::vector<std::uint32_t>>& walks, std::size_t begin,
                 std::size_t end, const Node2VecParams& params, std::size_t total_tokens,
                 std::size_t token_offset, Rng& rng) {
  std::vector<float> grad(m.dim);
  std::size_t processed = token_offset;
  const double total = static_cast<double>(total_tokens * params.epochs) + 1.0;
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    for (std::size_t wi = begin; wi < end; ++wi) {
      const auto& walk = walks[wi];
      for (std::size_t pos = 0; pos < walk.size(); ++pos, ++processed) {
        const float alpha = static_cast<float>(
            params.learning_rate * std::max(1e-4, 1.0 - static_cast<double>(processed) / total));
        const std::size_t shrink = rng.below(params.window);
        const std::size_t reach = params.window - shrink;
        const std::size_t lo = pos >= reach ? pos - reach : 0;
        const std::size_t hi = std::min(walk.size() - 1, pos + reach);
        for (std::size_t c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          float* in = &m.syn0[static_cast<std::size_t>(walk[c]) * m.dim];
          std::fill(grad.begin(), grad.end(), 0.0f);
          for (std::size_t d = 0; d <= params.negative; ++d) {
            std::uint32_t target;
            float label;
            if (d == 0) {
              target = walk[pos];
              label = 1.0f;
            } else {
              target = sample_negative(m, rng);
              if (target == walk[pos]) continue;
              label = 0.0f;
            }
            float* out = &m.syn1[static_cast<std::size_t>(target) * m.dim];
            float f = 0;
            for (std::size_t k = 0; k < m.dim; ++k) f += in[k] * out[k];
            f = std::clamp(f, -6.0f, 6.0f);
            const float g = (label - 1.0f / (1.0f + std::exp(-f))) * alpha;
            for (std::size_t k = 0; k < m.dim; ++k) grad[k] += g * out[k];
            for (std::size_t k = 0; k < m.dim; ++k) out[k] += g * in[k];
          }
          for (std::size_t k = 0; k < m.dim; ++k) in[k] += grad[k];
        }
      }
    }
  }
}

}  // namespace

NodeEmbeddings node2vec_embed(const kg::KnowledgeGraph& g, const Node2VecParams& params, std::uint64_t seed) {
  std::vector<kg::NodeIndex> all(g.entity_count());
  std::iota(all.begin(), all.end(), 0u);
  return node2vec_embed(g, all, params, seed);
}

NodeEmbeddings node2vec_embed(const kg::KnowledgeGraph& g, std::span<const kg::NodeIndex> nodes,
                              const Node2VecParams& params, std::uint64_t seed) {
  if (params.dimension < 2) throw PreconditionError("node2vec: dimension must be at least 2");
  if (nodes.empty()) throw PreconditionError("node2vec: empty graph");
  if (params.window == 0 || params.walk_length == 0) throw PreconditionError("node2vec: window and walk_length must be positive");
  if (!(params.return_p > 0) || !(params.inout_q > 0)) throw PreconditionError("node2vec: p and q must be positive");

  Rng rng(seed);
  const auto skeleton = build_skeleton(g, nodes);
  const auto walks = generate_walks(skeleton, nodes.size(), params, rng);

  Sgns m;
  m.n = nodes.size();
  m.dim = params.dimension;
  m.syn0.resize(m.n * m.dim);
  m.syn1.assign(m.n * m.dim, 0.0f);
  for (auto& x : m.syn0) x = static_cast<float>((rng.uniform() - 0.5) / static_cast<double>(m.dim));
  std::vector<std::size_t> counts(m.n, 0);
  std::size_t tokens = 0;
  for (const auto& w : walks) {
    for (auto v : w) ++counts[v];
    tokens += w.size();
  }
  m.cumulative.resize(m.n);
  double acc = 0;
  for (std::size_t i = 0; i < m.n; ++i) {
    acc += std::pow(static_cast<double>(counts[i]), 0.75);
    m.cumulative[i] = acc;
  }

  if (acc > 0) {
    if (!params.parallel) {
      train_range(m, walks, 0, walks.size(), params, tokens, 0, rng);
    } else {
      std::size_t threads = params.threads ? params.threads : std::max(1u, std::thread::hardware_concurrency());
      threads = std::min(threads, std::max<std::size_t>(1, walks.size()));
      std::vector<std::thread> pool;
      const std::size_t chunk = (walks.size() + threads - 1) / threads;
      for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t b = t * chunk;
        const std::size_t e = std::min(walks.size(), b + chunk);
        if (b >= e) break;
        std::size_t offset = 0;
        for (std::size_t i = 0; i < b; ++i) offset += walks[i].size();
        pool.emplace_back([&, b, e, offset, t] {
          Rng local(seed ^ (0x9e3779b97f4a7c15ULL * (t + 1)));
          train_range(m, walks, b, e, params, tokens, offset, local);
        });
      }
      for (auto& th : pool) th.join();
    }
  }

  NodeEmbeddings out;
  out.dimension = m.dim;
  out.seed = seed;
  out.params = params;
  for (std::size_t i = 0; i < m.n; ++i) {
    const float* v = &m.syn0[i * m.dim];
    out.vectors.emplace(g.entity(nodes[i]).id, std::vector<double>(v, v + m.dim));
  }
  return out;
}

// ---------------------------------------------------------------------------
// t-SNE

namespace {

// Row-wise Gaussian conditional probabilities over the given squared
// distances, bandwidth found by bisection on the entropy.
void fit_row(const double* dist, std::size_t count, std::size_t skip, double perplexity, double* out) {
  const double target = std::log(perplexity);
  double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200; ++iter) {
    double min_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < count; ++j) {
      if (j != skip) min_d = std::min(min_d, dist[j]);
    }
    double sum = 0;
    for (std::size_t j = 0; j < count; ++j) {
      out[j] = j == skip ? 0.0 : std::exp(-beta * (dist[j] - min_d));
      sum += out[j];
    }
    double h = 0;
    for (std::size_t j = 0; j < count; ++j) {
      if (j == skip) continue;
      out[j] /= sum;
      h += beta * (dist[j] - min_d) * out[j];
    }
    h += std::log(sum);
    const double diff = h - target;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
    } else {
      hi = beta;
      beta = std::isinf(lo) ? beta / 2 : (beta + lo) / 2;
    }
  }
}

struct SparseP {
  std::vector<std::size_t> row;
  std::vector<std::uint32_t> col;
  std::vector<double> val;
};

class QuadTree {
 public:
  QuadTree(const std::vector<double>& y, std::size_t n) : y_(y) {
    double minx = y[0], maxx = y[0], miny = y[1], maxy = y[1];
    for (std::size_t i = 0; i < n; ++i) {
      minx = std::min(minx, y[2 * i]);
      maxx = std::max(maxx, y[2 * i]);
      miny = std::min(miny, y[2 * i + 1]);
      maxy = std::max(maxy, y[2 * i + 1]);
    }
    const double hw = std::max((maxx - minx) / 2, 1e-5) + 1e-5;
    const double hh = std::max((maxy - miny) / 2, 1e-5) + 1e-5;
    nodes_.push_back(Node{(minx + maxx) / 2, (miny + maxy) / 2, hw, hh});
    for (std::size_t i = 0; i < n; ++i) insert(0, static_cast<std::uint32_t>(i));
  }

  void repulsion(std::size_t i, double theta, double& fx, double& fy, double& sum_q) const {
    const double px = y_[2 * i], py = y_[2 * i + 1];
    std::vector<std::uint32_t> stack{0};
    while (!stack.empty()) {
      const Node& nd = nodes_[stack.back()];
      stack.pop_back();
      if (nd.count == 0) continue;
      const double dx = px - nd.comx, dy = py - nd.comy;
      const double d2 = dx * dx + dy * dy;
      const double width = std::max(nd.hw, nd.hh) * 2;
      if (nd.leaf || width < theta * std::sqrt(d2)) {
        double count = static_cast<double>(nd.count);
        if (nd.leaf && dx == 0 && dy == 0) count -= 1;  // i and its duplicates share the leaf
        if (count <= 0) continue;
        const double q = 1.0 / (1.0 + d2);
        const double mult = count * q;
        sum_q += mult;
        fx += mult * q * dx;
        fy += mult * q * dy;
      } else {
        for (int c = 3; c >= 0; --c) {
          if (nd.child[c]) stack.push_back(nd.child[c]);
        }
      }
    }
  }

 private:
  struct Node {
    double cx, cy, hw, hh;
    double comx = 0, comy = 0;
    std::size_t count = 0;
    bool leaf = true;
    std::uint32_t point = 0;
    std::uint32_t child[4] = {0, 0, 0, 0};
  };

  void insert(std::uint32_t node, std::uint32_t p) {
    const double px = y_[2 * p], py = y_[2 * p + 1];
    for (;;) {
      Node& nd = nodes_[node];
      const double c = static_cast<double>(nd.count);
      nd.comx = (nd.comx * c + px) / (c + 1);
      nd.comy = (nd.comy * c + py) / (c + 1);
      ++nd.count;
      if (nd.leaf) {
        if (nd.count == 1) {
          nd.point = p;
          return;
        }
        const std::uint32_t q = nd.point;
        if (y_[2 * q] == px && y_[2 * q + 1] == py) return;  // duplicate: stays in this leaf
        if (nd.hw < 1e-12) return;
        subdivide(node);
        // re-home the old point (its mass is already counted here)
        Node& cn = nodes_[nodes_[node].child[quadrant(node, q)]];
        cn.comx = y_[2 * q];
        cn.comy = y_[2 * q + 1];
        cn.count = 1;
        cn.point = q;
      }
      node = nodes_[node].child[quadrant(node, p)];
    }
  }

  int quadrant(std::uint32_t node, std::uint32_t p) const {
    const Node& nd = nodes_[node];
    return (y_[2 * p] > nd.cx ? 1 : 0) + (y_[2 * p + 1] > nd.cy ? 2 : 0);
  }

  void subdivide(std::uint32_t node) {
    const Node nd = nodes_[node];
    for (int c = 0; c < 4; ++c) {
      const double cx = nd.cx + (c & 1 ? 0.5 : -0.5) * nd.hw;
      const double cy = nd.cy + (c & 2 ? 0.5 : -0.5) * nd.hh;
      nodes_.push_back(Node{cx, cy, nd.hw / 2, nd.hh / 2});
      nodes_[node].child[c] = static_cast<std::uint32_t>(nodes_.size() - 1);
    }
    nodes_[node].leaf = false;
  }

  const std::vector<double>& y_;
  std::vector<Node> nodes_;
};

ProjectionLayout normalize_layout(const std::vector<EntityId>& ids, const std::vector<double>& y,
                                  std::uint64_t seed, bool fallback) {
  ProjectionLayout out;
  out.seed = seed;
  out.grid_fallback = fallback;
  const std::size_t n = ids.size();
  double minx = std::numeric_limits<double>::infinity(), miny = minx;
  double maxx = -minx, maxy = -minx;
  for (std::size_t i = 0; i < n; ++i) {
    minx = std::min(minx, y[2 * i]);
    maxx = std::max(maxx, y[2 * i]);
    miny = std::min(miny, y[2 * i + 1]);
    maxy = std::max(maxy, y[2 * i + 1]);
  }
  const double span = std::max(maxx - minx, maxy - miny);
  for (std::size_t i = 0; i < n; ++i) {
    Point p{0.5, 0.5};
    if (span > 0) {
      p.x = (y[2 * i] - minx) / span + (1.0 - (maxx - minx) / span) / 2;
      p.y = (y[2 * i + 1] - miny) / span + (1.0 - (maxy - miny) / span) / 2;
      p.x = std::clamp(p.x, 0.0, 1.0);
      p.y = std::clamp(p.y, 0.0, 1.0);
    }
    out.coordinates.emplace(ids[i], p);
  }
  return out;
}

}  // namespace

ProjectionLayout project_2d(const NodeEmbeddings& emb, std::uint64_t seed, const TsneParams& params) {
  const std::size_t n = emb.vectors.size();
  if (n < 2) throw PreconditionError("project_2d: need at least 2 embedded nodes");
  if (!(params.perplexity > 0) || params.perplexity >= static_cast<double>(n)) {
    throw PreconditionError("project_2d: perplexity must be positive and below the node count");
  }
  const std::size_t dim = emb.dimension;
  std::vector<EntityId> ids;
  std::vector<double> x;
  x.reserve(n * dim);
  for (const auto& [id, v] : emb.vectors) {
    if (v.size() != dim) throw PreconditionError("project_2d: vector dimension mismatch for " + id);
    ids.push_back(id);
    x.insert(x.end(), v.begin(), v.end());
  }

  // centre and scale
  double max_abs = 0;
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * dim + d];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i * dim + d] -= mean;
      max_abs = std::max(max_abs, std::abs(x[i * dim + d]));
    }
  }
  if (max_abs == 0) {
    const std::size_t side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::vector<double> y(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] = static_cast<double>(i % side);
      y[2 * i + 1] = static_cast<double>(i / side);
    }
    return normalize_layout(ids, y, seed, true);
  }
  for (auto& v : x) v /= max_abs;

  auto sqdist = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double t = x[i * dim + d] - x[j * dim + d];
      s += t * t;
    }
    return s;
  };

  const bool exact = n <= params.exact_limit;
  std::vector<double> P;  // exact: dense n*n
  SparseP sp;
  if (exact) {
    P.assign(n * n, 0.0);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) row[j] = sqdist(i, j);
      fit_row(row.data(), n, i, params.perplexity, &P[i * n]);
    }
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double s = P[i * n + j] + P[j * n + i];
        P[i * n + j] = P[j * n + i] = s;
        sum += 2 * s;
      }
    }
    for (auto& p : P) p /= sum;
  } else {
    const std::size_t k = std::min(n - 1, static_cast<std::size_t>(3 * params.perplexity));
    std::vector<std::map<std::uint32_t, double>> rows(n);
    std::vector<std::pair<double, std::uint32_t>> cand(n);
    std::vector<double> dist(k), prob(k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) cand[j] = {j == i ? std::numeric_limits<double>::infinity() : sqdist(i, j), static_cast<std::uint32_t>(j)};
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
      for (std::size_t j = 0; j < k; ++j) dist[j] = cand[j].first;
      fit_row(dist.data(), k, k, params.perplexity, prob.data());
      for (std::size_t j = 0; j < k; ++j) {
        rows[i][cand[j].second] += prob[j];
        rows[cand[j].second][static_cast<std::uint32_t>(i)] += prob[j];
      }
    }
    double sum = 0;
    for (const auto& r : rows) {
      for (const auto& [j, v] : r) sum += v;
    }
    sp.row.push_back(0);
    for (const auto& r : rows) {
      for (const auto& [j, v] : r) {
        sp.col.push_back(j);
        sp.val.push_back(v / sum);
      }
      sp.row.push_back(sp.col.size());
    }
  }

  Rng rng(seed);
  std::vector<double> y(2 * n), update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n);
  for (auto& v : y) v = rng.normal() * 1e-4;

  for (std::size_t iter = 0; iter < params.iterations; ++iter) {
    const double exag = iter < params.exaggeration_iterations ? params.early_exaggeration : 1.0;
    const double momentum = iter < params.exaggeration_iterations ? 0.5 : 0.8;
    std::fill(grad.begin(), grad.end(), 0.0);
    if (exact) {
      std::vector<double> num(n * n, 0.0);
      double z = 0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
          const double q = 1.0 / (1.0 + dx * dx + dy * dy);
          num[i * n + j] = num[j * n + i] = q;
          z += 2 * q;
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        double gx = 0, gy = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const double q = num[i * n + j];
          const double mult = (exag * P[i * n + j] - q / z) * q;
          gx += mult * (y[2 * i] - y[2 * j]);
          gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = 4 * gx;
        grad[2 * i + 1] = 4 * gy;
      }
    } else {
      QuadTree tree(y, n);
      std::vector<double> neg(2 * n, 0.0);
      double sum_q = 0;
      for (std::size_t i = 0; i < n; ++i) tree.repulsion(i, params.theta, neg[2 * i], neg[2 * i + 1], sum_q);
      for (std::size_t i = 0; i < n; ++i) {
        double px = 0, py = 0;
        for (std::size_t e = sp.row[i]; e < sp.row[i + 1]; ++e) {
          const std::size_t j = sp.col[e];
          const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
          const double mult = exag * sp.val[e] / (1.0 + dx * dx + dy * dy);
          px += mult * dx;
          py += mult * dy;
        }
        grad[2 * i] = 4 * (px - neg[2 * i] / sum_q);
        grad[2 * i + 1] = 4 * (py - neg[2 * i + 1] / sum_q);
      }
    }
    for (std::size_t k = 0; k < 2 * n; ++k) {
      gains[k] = (grad[k] > 0) != (update[k] > 0) ? gains[k] + 0.2 : gains[k] * 0.8;
      gains[k] = std::max(gains[k], 0.01);
      update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw PreconditionError("project_2d: optimisation diverged");
  }
  return normalize_layout(ids, y, seed, false);
}

// ---------------------------------------------------------------------------
// Heat grid and selection

double HeatGrid::sum() const {
  double s = 0;
  for (double v : values) s += v;
  return s;
}

HeatGrid heat_grid(const ProjectionLayout& layout, const std::map<EntityId, std::size_t>& intensity,
                   std::size_t width, std::size_t height, double bandwidth,
                   std::optional<errors::ErrorKind> kind_filter) {
  if (width == 0 || height == 0) throw PreconditionError("heat_grid: empty resolution");
  if (!(bandwidth > 0)) throw PreconditionError("heat_grid: bandwidth must be positive");
  HeatGrid grid{width, height, std::vector<double>(width * height, 0.0), bandwidth, kind_filter};
  const double radius = 3 * bandwidth;
  const double inv2s2 = 1.0 / (2 * bandwidth * bandwidth);
  std::vector<std::pair<std::size_t, double>> cells;
  for (const auto& [id, count] : intensity) {
    auto it = layout.coordinates.find(id);
    if (it == layout.coordinates.end()) throw PreconditionError("heat_grid: no coordinates for " + id);
    if (count == 0) continue;
    const Point p = it->second;
    const double w = static_cast<double>(width), h = static_cast<double>(height);
    auto clampi = [](double v, std::size_t hi) {
      return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi - 1)));
    };
    const std::size_t x0 = clampi(std::floor((p.x - radius) * w), width);
    const std::size_t x1 = clampi(std::ceil((p.x + radius) * w), width);
    const std::size_t y0 = clampi(std::floor((p.y - radius) * h), height);
    const std::size_t y1 = clampi(std::ceil((p.y + radius) * h), height);
    cells.clear();
    double total = 0;
    for (std::size_t cy = y0; cy <= y1; ++cy) {
      const double dy = (static_cast<double>(cy) + 0.5) / h - p.y;
      for (std::size_t cx = x0; cx <= x1; ++cx) {
        const double dx = (static_cast<double>(cx) + 0.5) / w - p.x;
        const double d2 = dx * dx + dy * dy;
        if (d2 > radius * radius) continue;
        const double k = std::exp(-d2 * inv2s2);
        if (k <= 0) continue;
        cells.emplace_back(cy * width + cx, k);
        total += k;
      }
    }
    const double mass = static_cast<double>(count);
    if (total <= 0) {
      grid.values[clampi(std::floor(p.y * h), height) * width + clampi(std::floor(p.x * w), width)] += mass;
      continue;
    }
    for (const auto& [cell, k] : cells) grid.values[cell] += mass * k / total;
  }
  return grid;
}

std::vector<std::pair<EntityId, std::size_t>> top_k_nodes(const std::map<EntityId, std::size_t>& intensity,
                                                          std::size_t k) {
  std::vector<std::pair<EntityId, std::size_t>> all;
  for (const auto& [id, n] : intensity) {
    if (n > 0) all.emplace_back(id, n);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (all.size() > k) all.resize(k);
  return all;
}

std::set<EntityId> brush_select(const ProjectionLayout& layout, const Rect& r) {
  if (r.x0 > r.x1 || r.y0 > r.y1) throw PreconditionError("brush_select: inverted rectangle");
  std::set<EntityId> out;
  for (const auto& [id, p] : layout.coordinates) {
    if (p.x >= r.x0 && p.x <= r.x1 && p.y >= r.y0 && p.y <= r.y1) out.insert(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline helpers

std::vector<kg::NodeIndex> active_nodes(const kg::KnowledgeGraph& g, std::span<const grounding::Case> cases) {
  std::set<kg::NodeIndex> out;
  auto add = [&](const EntityId& id) {
    auto idx = g.find(id);
    if (!idx) return;
    const auto kind = g.entity(*idx).kind;
    if (kind == kg::EntityKind::Disease || kind == kg::EntityKind::Symptom) out.insert(*idx);
  };
  for (const auto& c : cases) {
    for (const auto& p : c.model_paths) {
      for (const auto& s : p.steps) add(s.entity);
    }
    for (const auto& p : c.reference_paths) {
      for (const auto& id : p.nodes) add(id);
    }
  }
  return {out.begin(), out.end()};
}

std::vector<kg::NodeIndex> training_nodes(const kg::KnowledgeGraph& g, std::span<const kg::NodeIndex> active,
                                          std::size_t hops, std::size_t max_nodes) {
  std::vector<std::uint32_t> dist(g.entity_count(), std::numeric_limits<std::uint32_t>::max());
  std::vector<kg::NodeIndex> chosen(active.begin(), active.end());
  std::vector<kg::NodeIndex> frontier(active.begin(), active.end());
  for (auto v : active) dist[v] = 0;
  for (std::size_t h = 1; h <= hops && chosen.size() < max_nodes && !frontier.empty(); ++h) {
    std::vector<kg::NodeIndex> next;
    for (auto u : frontier) {
      for (auto list : {g.successors(u), g.predecessors(u)}) {
        for (auto w : list) {
          if (dist[w] != std::numeric_limits<std::uint32_t>::max()) continue;
          dist[w] = static_cast<std::uint32_t>(h);
          next.push_back(w);
        }
      }
    }
    std::sort(next.begin(), next.end());
    if (chosen.size() + next.size() > max_nodes) next.resize(max_nodes - chosen.size());
    chosen.insert(chosen.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

ProjectionLayout compute_projection(const kg::KnowledgeGraph& g, std::span<const grounding::Case> cases,
                                    const ProjectionConfig& config) {
  const auto active = active_nodes(g, cases);
  ProjectionLayout layout;
  layout.seed = config.seed;
  if (active.empty()) return layout;
  if (active.size() == 1) {
    layout.coordinates.emplace(g.entity(active[0]).id, Point{0.5, 0.5});
    return layout;
  }
  const auto scope = training_nodes(g, active, config.context_hops, config.max_training_nodes);
  auto emb = node2vec_embed(g, scope, config.node2vec, config.seed);
  NodeEmbeddings shown;
  shown.dimension = emb.dimension;
  shown.seed = emb.seed;
  shown.params = emb.params;
  for (auto v : active) {
    const auto& id = g.entity(v).id;
    shown.vectors.emplace(id, emb.vectors.at(id));
  }
  TsneParams tsne = config.tsne;
  const double n = static_cast<double>(active.size());
  tsne.perplexity = std::max(1.0, std::min(tsne.perplexity, (n - 1) / 3));
  if (tsne.perplexity >= n) tsne.perplexity = n - 1;
  return project_2d(shown, config.seed, tsne);
}

}  // namespace pathaudit::projection
