#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvnn/autodiff.hpp"
#include "cvnn/optim.hpp"
#include "cvnn/tensor.hpp"

namespace cvnn {

class Rng;

namespace graph {

/// Maps an angle to (-pi, pi]; wrap(-pi) == pi.
double wrap_phase(double a);

/// mean_t |wrap(a[t] - b[t])|, in [0, pi].
double mean_abs_phase_diff(std::span<const double> a, std::span<const double> b);

enum class GraphMode { unweighted, phase_weighted };
/// direct: w = d. inverse: w = 1 / (1 + d), so nodes in phase talk most.
enum class EdgeWeighting { direct, inverse };

GraphMode parse_graph_mode(std::string_view s);
std::string graph_mode_name(GraphMode m);
EdgeWeighting parse_edge_weighting(std::string_view s);
std::string edge_weighting_name(EdgeWeighting w);

struct PhaseGraph {
  RealTensor node_features;  // (nodes, T); row u is node u's feature vector
  RealTensor edge_weights;   // (nodes, nodes), symmetric, zero diagonal
  int label = 0;

  std::size_t nodes() const { return node_features.dim(0); }
};

/// Complete graph with one node per row of `features`. Unweighted graphs
/// have weight 1 on every edge; phase_weighted graphs need `phase` with the
/// same shape and weight edge (u, v) by the mean absolute phase difference
/// of rows u and v.
PhaseGraph build_mfcc_graph(const RealTensor& features, const RealTensor* phase, GraphMode mode,
                            EdgeWeighting weighting = EdgeWeighting::direct, int label = 0);

/// Row-normalised weights w_uv / sum_v w_uv; rows with zero total are zero.
RealTensor normalized_adjacency(const RealTensor& edge_weights);

struct GnnConfig {
  std::size_t in_dim = 126;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t classes = 2;
};

/// Indices into a ParamSet. Layer l has W_self, W_neigh (hidden, d_l) and a
/// bias; the readout is a dense layer (classes, hidden).
struct GnnModel {
  GnnConfig cfg;
  std::vector<std::size_t> w_self, w_neigh, bias;
  std::size_t readout_w = 0, readout_b = 0;
};

/// Adds real He-normal weights and zero biases to `params` (prefix "gnn.").
GnnModel init_gnn(const GnnConfig& cfg, ParamSet& params, Rng& rng);

/// out[g] = P[g] h[g] for each graph g: P (G, n, n) real constant, h (G n, d).
Var aggregate(const Var& h, const RealTensor& p);
/// Mean over the n nodes of each graph: h (G n, d) -> (G, d).
Var mean_pool(const Var& h, std::size_t nodes);

/// Logits (G, classes) for a batch of graphs with identical node counts.
/// `leaves` are the parameter Vars aligned with the ParamSet. Per layer:
///   h <- ReLU(h W_self^T + (A h) W_neigh^T + b)
/// with A the normalised adjacency, then mean pool and the readout.
Var gnn_forward(const GnnModel& m, const std::vector<Var>& leaves, const Var& features,
                const RealTensor& adjacency);

/// Stacks node features into (G n, T) and normalised adjacencies into (G, n, n).
struct GraphBatch {
  ComplexTensor features;
  RealTensor adjacency;
  std::vector<int> labels;
};
GraphBatch make_batch(const std::vector<PhaseGraph>& graphs, std::span<const std::size_t> idx);

/// Per graph i: <dir>/graph_<i>_nodes.csv and graph_<i>_edges.csv, plus
/// <dir>/labels.csv (graph,label).
void write_graph_csv(const std::string& dir, const std::vector<PhaseGraph>& graphs);

}  // namespace graph
}  // namespace cvnn
