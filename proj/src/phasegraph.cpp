#include "cvnn/phasegraph.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <stdexcept>

#include "cvnn/activations.hpp"
#include "cvnn/init.hpp"
#include "cvnn/layers.hpp"

namespace cvnn::graph {

using std::numbers::pi;

double wrap_phase(double a) {
  double r = std::remainder(a, 2 * pi);  // [-pi, pi]
  if (r <= -pi) r += 2 * pi;
  return r;
}

double mean_abs_phase_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("mean_abs_phase_diff: lengths " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  }
  if (a.empty()) throw std::invalid_argument("mean_abs_phase_diff: empty input");
  double s = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) s += std::fabs(wrap_phase(a[t] - b[t]));
  return s / static_cast<double>(a.size());
}

GraphMode parse_graph_mode(std::string_view s) {
  if (s == "unweighted") return GraphMode::unweighted;
  if (s == "phase_weighted") return GraphMode::phase_weighted;
  throw std::invalid_argument("unknown graph mode '" + std::string(s) + "'");
}

std::string graph_mode_name(GraphMode m) {
  return m == GraphMode::unweighted ? "unweighted" : "phase_weighted";
}

EdgeWeighting parse_edge_weighting(std::string_view s) {
  if (s == "direct") return EdgeWeighting::direct;
  if (s == "inverse") return EdgeWeighting::inverse;
  throw std::invalid_argument("unknown edge weighting '" + std::string(s) + "'");
}

std::string edge_weighting_name(EdgeWeighting w) { return w == EdgeWeighting::direct ? "direct" : "inverse"; }

PhaseGraph build_mfcc_graph(const RealTensor& features, const RealTensor* phase, GraphMode mode,
                            EdgeWeighting weighting, int label) {
  if (features.rank() != 2) throw ShapeError("build_mfcc_graph: features must be (nodes, T)");
  if (mode == GraphMode::phase_weighted && phase == nullptr) {
    throw std::invalid_argument("build_mfcc_graph: phase_weighted mode needs a phase matrix");
  }
  if (mode == GraphMode::unweighted && phase != nullptr) {
    throw std::invalid_argument("build_mfcc_graph: unweighted mode takes no phase matrix");
  }
  if (phase && phase->shape() != features.shape()) {
    throw ShapeError("build_mfcc_graph: phase " + shape_str(phase->shape()) + " vs features " +
                     shape_str(features.shape()));
  }
  const std::size_t n = features.dim(0), t = features.dim(1);
  PhaseGraph g;
  g.node_features = features;
  g.edge_weights = RealTensor({n, n});
  g.label = label;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      double w = 1.0;
      if (mode == GraphMode::phase_weighted) {
        const auto p = phase->data();
        const double d = mean_abs_phase_diff(p.subspan(u * t, t), p.subspan(v * t, t));
        w = weighting == EdgeWeighting::direct ? d : 1.0 / (1.0 + d);
      }
      g.edge_weights[u * n + v] = w;
      g.edge_weights[v * n + u] = w;
    }
  }
  return g;
}

RealTensor normalized_adjacency(const RealTensor& w) {
  if (w.rank() != 2 || w.dim(0) != w.dim(1)) throw ShapeError("normalized_adjacency: expected (n, n)");
  const std::size_t n = w.dim(0);
  RealTensor a({n, n});
  for (std::size_t u = 0; u < n; ++u) {
    double total = 0.0;
    for (std::size_t v = 0; v < n; ++v) total += w[u * n + v];
    if (total == 0.0) continue;  // isolated node: no neighbour term
    for (std::size_t v = 0; v < n; ++v) a[u * n + v] = w[u * n + v] / total;
  }
  return a;
}

GnnModel init_gnn(const GnnConfig& cfg, ParamSet& params, Rng& rng) {
  if (cfg.in_dim == 0 || cfg.hidden == 0 || cfg.layers == 0 || cfg.classes < 2) {
    throw std::invalid_argument("init_gnn: dims must be positive and classes >= 2");
  }
  GnnModel m;
  m.cfg = cfg;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::size_t d_in = l == 0 ? cfg.in_dim : cfg.hidden;
    const std::string p = "gnn.layer" + std::to_string(l) + ".";
    m.w_self.push_back(params.add(p + "w_self", real_he_normal({cfg.hidden, d_in}, rng), true));
    m.w_neigh.push_back(params.add(p + "w_neigh", real_he_normal({cfg.hidden, d_in}, rng), true));
    m.bias.push_back(params.add(p + "bias", ComplexTensor::zeros({cfg.hidden}), true));
  }
  m.readout_w = params.add("gnn.readout.w", real_he_normal({cfg.classes, cfg.hidden}, rng), true);
  m.readout_b = params.add("gnn.readout.b", ComplexTensor::zeros({cfg.classes}), true);
  return m;
}

namespace {

// dst[g] += P[g] src[g] (or P[g]^T src[g]) for row blocks of n rows.
void apply_blocks(const RealTensor& p, std::span<const double> src, std::span<double> dst, bool transpose) {
  const std::size_t graphs = p.dim(0), n = p.dim(1), d = src.size() / (graphs * n);
  for (std::size_t g = 0; g < graphs; ++g) {
    const double* pg = p.data().data() + g * n * n;
    for (std::size_t u = 0; u < n; ++u) {
      double* out = dst.data() + (g * n + u) * d;
      for (std::size_t v = 0; v < n; ++v) {
        const double w = transpose ? pg[v * n + u] : pg[u * n + v];
        if (w == 0.0) continue;
        const double* in = src.data() + (g * n + v) * d;
        for (std::size_t k = 0; k < d; ++k) out[k] += w * in[k];
      }
    }
  }
}

}  // namespace

Var aggregate(const Var& h, const RealTensor& p) {
  if (p.rank() != 3 || p.dim(1) != p.dim(2)) throw ShapeError("aggregate: P must be (G, n, n)");
  const auto& x = h.value();
  const std::size_t graphs = p.dim(0), n = p.dim(1);
  if (x.rank() != 2 || x.dim(0) != graphs * n) {
    throw ShapeError("aggregate: h " + shape_str(x.shape()) + " does not match P " + shape_str(p.shape()));
  }
  ComplexTensor y(x.shape());
  apply_blocks(p, x.re(), y.re(), false);
  apply_blocks(p, x.im(), y.im(), false);
  return h.tape()->record("aggregate", {h}, std::move(y), [p](const ComplexTensor& gr, GradRefs in) {
    if (!in[0]) return;
    apply_blocks(p, gr.re(), in[0]->re(), true);
    apply_blocks(p, gr.im(), in[0]->im(), true);
  });
}

Var mean_pool(const Var& h, std::size_t nodes) {
  const auto& x = h.value();
  if (x.rank() != 2 || nodes == 0 || x.dim(0) % nodes != 0) {
    throw ShapeError("mean_pool: rows of " + shape_str(x.shape()) + " are not a multiple of " +
                     std::to_string(nodes));
  }
  const std::size_t graphs = x.dim(0) / nodes, d = x.dim(1);
  const double inv = 1.0 / static_cast<double>(nodes);
  ComplexTensor y({graphs, d});
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    const std::size_t g = r / nodes;
    for (std::size_t k = 0; k < d; ++k) {
      y.re()[g * d + k] += inv * x.re()[r * d + k];
      y.im()[g * d + k] += inv * x.im()[r * d + k];
    }
  }
  return h.tape()->record("mean_pool", {h}, std::move(y), [nodes, d, inv](const ComplexTensor& gr, GradRefs in) {
    if (!in[0]) return;
    const std::size_t rows = in[0]->dim(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t g = r / nodes;
      for (std::size_t k = 0; k < d; ++k) {
        in[0]->re()[r * d + k] += inv * gr.re()[g * d + k];
        in[0]->im()[r * d + k] += inv * gr.im()[g * d + k];
      }
    }
  });
}

Var gnn_forward(const GnnModel& m, const std::vector<Var>& leaves, const Var& features,
                const RealTensor& adjacency) {
  if (features.value().rank() != 2 || features.value().dim(1) != m.cfg.in_dim) {
    throw ShapeError("gnn_forward: features " + shape_str(features.shape()) + ", expected (G n, " +
                     std::to_string(m.cfg.in_dim) + ")");
  }
  const Var zero_bias = features.tape()->constant(ComplexTensor::zeros({m.cfg.hidden}));
  Var h = features;
  for (std::size_t l = 0; l < m.cfg.layers; ++l) {
    const Var self = real_linear(h, leaves.at(m.w_self[l]), leaves.at(m.bias[l]));
    const Var neigh = real_linear(aggregate(h, adjacency), leaves.at(m.w_neigh[l]), zero_bias);
    h = crelu(add(self, neigh));
  }
  return real_linear(mean_pool(h, adjacency.dim(1)), leaves.at(m.readout_w), leaves.at(m.readout_b));
}

GraphBatch make_batch(const std::vector<PhaseGraph>& graphs, std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t n = graphs.at(idx[0]).nodes(), t = graphs.at(idx[0]).node_features.dim(1);
  GraphBatch b;
  b.features = ComplexTensor({idx.size() * n, t});
  b.adjacency = RealTensor({idx.size(), n, n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& g = graphs.at(idx[i]);
    if (g.node_features.shape() != Shape{n, t}) throw ShapeError("make_batch: graphs differ in shape");
    const auto f = g.node_features.data();
    std::copy(f.begin(), f.end(), b.features.re().begin() + static_cast<std::ptrdiff_t>(i * n * t));
    const auto a = normalized_adjacency(g.edge_weights);
    std::copy(a.data().begin(), a.data().end(), b.adjacency.data().begin() + static_cast<std::ptrdiff_t>(i * n * n));
    b.labels.push_back(g.label);
  }
  return b;
}

void write_graph_csv(const std::string& dir, const std::vector<PhaseGraph>& graphs) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto dump = [](const fs::path& path, const RealTensor& t) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os << std::setprecision(17);
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << t[r * cols + c];
      os << '\n';
    }
  };
  std::ofstream labels(fs::path(dir) / "labels.csv");
  if (!labels) throw FormatError("cannot write labels.csv in '" + dir + "'");
  labels << "graph,label\n";
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const std::string stem = "graph_" + std::to_string(i);
    dump(fs::path(dir) / (stem + "_nodes.csv"), graphs[i].node_features);
    dump(fs::path(dir) / (stem + "_edges.csv"), graphs[i].edge_weights);
    labels << i << ',' << graphs[i].label << '\n';
  }
}

}  // namespace cvnn::graph
