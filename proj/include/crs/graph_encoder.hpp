// Relation-aware entity representations from a single (or stacked) R-GCN
// update with a constant normalization factor of 1:
//
//   h_e' = ReLU( sum_{r in R'} sum_{e' in N_r(e)} W_r h_e' )
//
// where R' includes the self loop (N_self(e) = {e}). Aggregation is sparse
// per relation: gather neighbor rows with the adjacency, then one dense
// product with W_r.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "crs/kg.hpp"
#include "crs/tensor.hpp"

namespace crs {

struct RgcnParams {
  int dim = 128;
  ad::Tensor entity_embeddings;  // |E| x d
  // weights[layer][r], r over R' with the self loop last. Empty when bases are used.
  std::vector<std::vector<ad::Tensor>> weights;
  // Basis decomposition: bases[layer] is (d*d) x B, coefficients[layer] is |R'| x B.
  std::vector<ad::Tensor> bases;
  std::vector<ad::Tensor> coefficients;

  int layers() const { return static_cast<int>(uses_bases() ? bases.size() : weights.size()); }
  bool uses_bases() const { return !bases.empty(); }

  std::vector<ad::Tensor> tensors() const {
    std::vector<ad::Tensor> out{entity_embeddings};
    for (const auto& layer : weights) out.insert(out.end(), layer.begin(), layer.end());
    out.insert(out.end(), bases.begin(), bases.end());
    out.insert(out.end(), coefficients.begin(), coefficients.end());
    return out;
  }
};

struct EntityEmbeddingTable {
  ad::Matrix values;  // |E| x d

  int num_entities() const { return static_cast<int>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }
};

namespace detail {

inline ad::Matrix uniform_matrix(ad::Index rows, ad::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Matrix m(rows, cols);
  for (ad::Index j = 0; j < cols; ++j)
    for (ad::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

}  // namespace detail

// Entries drawn uniformly from [-1/sqrt(d), 1/sqrt(d)]; deterministic per seed.
inline RgcnParams init_params(const KnowledgeGraph& kg, int d, std::uint64_t seed, int layers = 1, int num_bases = 0) {
  if (d <= 0) throw Error("init_params: d must be positive");
  if (layers < 1) throw Error("init_params: layers must be >= 1");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  RgcnParams p;
  p.dim = d;
  p.entity_embeddings = ad::Tensor::parameter(detail::uniform_matrix(kg.num_entities(), d, bound, rng));
  const int rels = kg.num_relations_with_self();
  for (int l = 0; l < layers; ++l) {
    if (num_bases > 0) {
      p.bases.push_back(ad::Tensor::parameter(detail::uniform_matrix(static_cast<ad::Index>(d) * d, num_bases, bound, rng)));
      p.coefficients.push_back(ad::Tensor::parameter(
          detail::uniform_matrix(rels, num_bases, 1.0 / std::sqrt(static_cast<double>(num_bases)), rng)));
    } else {
      std::vector<ad::Tensor> layer;
      for (int r = 0; r < rels; ++r) layer.push_back(ad::Tensor::parameter(detail::uniform_matrix(d, d, bound, rng)));
      p.weights.push_back(std::move(layer));
    }
  }
  return p;
}

inline void check_rgcn_config(const KnowledgeGraph& kg, const RgcnParams& params, int layers) {
  if (layers < 1) throw Error("rgcn: layers must be >= 1");
  if (params.layers() != layers) {
    throw Error("rgcn: params hold " + std::to_string(params.layers()) + " layer(s), requested " + std::to_string(layers));
  }
  const auto d = static_cast<ad::Index>(params.dim);
  if (params.entity_embeddings.rows() != kg.num_entities() || params.entity_embeddings.cols() != d) {
    throw Error("rgcn: entity embedding table must be |E| x d");
  }
  const int rels = kg.num_relations_with_self();
  for (int l = 0; l < layers; ++l) {
    if (params.uses_bases()) {
      const auto& b = params.bases[static_cast<std::size_t>(l)];
      const auto& c = params.coefficients[static_cast<std::size_t>(l)];
      if (b.rows() != d * d || c.rows() != rels || c.cols() != b.cols()) throw Error("rgcn: basis shape mismatch");
    } else {
      const auto& w = params.weights[static_cast<std::size_t>(l)];
      if (static_cast<int>(w.size()) != rels) throw Error("rgcn: need one weight matrix per relation plus self loop");
      for (const auto& m : w)
        if (m.rows() != d || m.cols() != d) throw Error("rgcn: relation weights must be d x d");
    }
  }
}

// Differentiable forward pass; gradients reach embeddings and weights.
inline ad::Tensor rgcn_forward_tensor(const KnowledgeGraph& kg, const RgcnParams& params, int layers) {
  check_rgcn_config(kg, params, layers);
  const int rels = kg.num_relations_with_self();
  const auto d = static_cast<ad::Index>(params.dim);
  ad::Tensor h = params.entity_embeddings;
  for (int l = 0; l < layers; ++l) {
    ad::Tensor flat;
    if (params.uses_bases()) {
      flat = ad::matmul_nt(params.bases[static_cast<std::size_t>(l)], params.coefficients[static_cast<std::size_t>(l)]);
    }
    std::vector<ad::Tensor> parts;
    for (int r = 0; r < rels; ++r) {
      const auto A = kg.adjacency(r);
      if (A->nonZeros() == 0) continue;
      ad::Tensor w = params.uses_bases() ? ad::reshape(ad::slice_cols(flat, r, 1), d, d)
                                         : params.weights[static_cast<std::size_t>(l)][static_cast<std::size_t>(r)];
      ad::Tensor gathered = r == kg.self_loop_relation() ? h : ad::spmm(A, h);
      parts.push_back(ad::matmul_nt(gathered, w));
    }
    h = ad::relu(parts.empty() ? ad::scale(h, 0.0) : ad::add_n(parts));
  }
  return h;
}

inline EntityEmbeddingTable rgcn_forward(const KnowledgeGraph& kg, const RgcnParams& params, int layers = 1) {
  ad::NoGradGuard guard;
  return {rgcn_forward_tensor(kg, params, layers).value()};
}

}  // namespace crs
