#pragma once

// Graph encoders (GCN, R-GCN with basis decomposition, StarE-lite) and the
// per-item / pooled Q-heads over short-term memory items.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "kgmem/autodiff.hpp"
#include "kgmem/errors.hpp"
#include "kgmem/kg_core.hpp"
#include "kgmem/rng.hpp"

namespace kgmem {

enum class EncoderKind : std::uint8_t { gcn, rgcn, stare_lite };
enum class HeadMode : std::uint8_t { local, global };

inline const char* to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::gcn: return "gcn";
    case EncoderKind::rgcn: return "rgcn";
    case EncoderKind::stare_lite: return "stare_lite";
  }
  return "?";
}

inline EncoderKind encoder_from_string(const std::string& s) {
  if (s == "gcn") return EncoderKind::gcn;
  if (s == "rgcn") return EncoderKind::rgcn;
  if (s == "stare_lite" || s == "stare") return EncoderKind::stare_lite;
  throw ConfigError("unknown encoder kind '" + s + "'");
}

struct ModelShape {
  EncoderKind kind = EncoderKind::gcn;
  int num_entities = 0;
  int num_relations = 0;
  int dim = 16;
  int layers = 2;
  int bases = 20;
  int hidden = 16;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

template <typename Scalar>
struct LayerParams {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix node_weight;       // d x d; the self transform for rgcn
  Matrix node_bias;         // 1 x d
  Matrix relation_weight;   // d x d
  Matrix relation_bias;     // 1 x d
  Matrix basis_coeffs;      // rgcn: 2|R| x bases (forward and inverse relations)
  Matrix bases;             // rgcn: bases x d*d, each row a row-major d x d basis
  Matrix qualifier_weight;  // stare_lite: 3 x d
};

template <typename Scalar>
struct ParameterSet {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  ModelShape shape;
  Matrix entity_embeddings;    // |V| x d
  Matrix relation_embeddings;  // |R| x d
  std::vector<LayerParams<Scalar>> layers;
  Matrix head_hidden_weight;  // 2d x hidden
  Matrix head_hidden_bias;    // 1 x hidden
  Matrix head_out_weight;     // hidden x 2
  Matrix head_out_bias;       // 1 x 2

  // Visits every tensor in a fixed order; unused tensors are 0 x 0.
  template <class F>
  void for_each(F&& f) {
    f(std::string("entity_embeddings"), entity_embeddings);
    f(std::string("relation_embeddings"), relation_embeddings);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto& L = layers[l];
      f(p + "node_weight", L.node_weight);
      f(p + "node_bias", L.node_bias);
      f(p + "relation_weight", L.relation_weight);
      f(p + "relation_bias", L.relation_bias);
      f(p + "basis_coeffs", L.basis_coeffs);
      f(p + "bases", L.bases);
      f(p + "qualifier_weight", L.qualifier_weight);
    }
    f(std::string("head_hidden_weight"), head_hidden_weight);
    f(std::string("head_hidden_bias"), head_hidden_bias);
    f(std::string("head_out_weight"), head_out_weight);
    f(std::string("head_out_bias"), head_out_bias);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<ParameterSet*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  // Same shapes, all zeros.
  ParameterSet zeros_like() const {
    ParameterSet z = *this;
    z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }

  template <typename T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    out.shape = shape;
    out.layers.resize(layers.size());
    std::vector<const Matrix*> src;
    for_each([&](const std::string&, const Matrix& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, typename ParameterSet<T>::Matrix& m) {
      m = src[i++]->template cast<T>();
    });
    return out;
  }

  // Uniform(-1/sqrt(d), 1/sqrt(d)) weights and embeddings, zero biases.
  static ParameterSet initialize(const ModelShape& s, std::uint64_t seed) {
    if (s.dim < 1 || s.layers < 0 || s.hidden < 1 || s.num_entities < 1 || s.num_relations < 1) {
      throw ConfigError("invalid model shape");
    }
    if (s.kind == EncoderKind::rgcn && s.bases < 1) throw ConfigError("encoder.bases must be >= 1");
    Rng rng(mix_seed(seed, 101));
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(s.dim));
    auto uniform = [&](int rows, int cols) {
      Matrix m(rows, cols);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
      return m;
    };
    const int d = s.dim;
    ParameterSet p;
    p.shape = s;
    p.entity_embeddings = uniform(s.num_entities, d);
    p.relation_embeddings = uniform(s.num_relations, d);
    p.layers.resize(static_cast<std::size_t>(s.layers));
    for (auto& L : p.layers) {
      L.node_weight = uniform(d, d);
      L.node_bias = Matrix::Zero(1, d);
      L.relation_weight = uniform(d, d);
      L.relation_bias = Matrix::Zero(1, d);
      if (s.kind == EncoderKind::rgcn) {
        L.basis_coeffs = uniform(2 * s.num_relations, s.bases);
        L.bases = uniform(s.bases, d * d);
      }
      if (s.kind == EncoderKind::stare_lite) L.qualifier_weight = uniform(3, d);
    }
    p.head_hidden_weight = uniform(2 * d, s.hidden);
    p.head_hidden_bias = Matrix::Zero(1, s.hidden);
    p.head_out_weight = uniform(s.hidden, 2);
    p.head_out_bias = Matrix::Zero(1, 2);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Forward pass on a tape

template <typename Scalar>
struct EncodedGraph {
  typename Tape<Scalar>::Var nodes;      // |V_t| x d, rows follow GraphView::nodes
  typename Tape<Scalar>::Var relations;  // |R| x d
};

namespace detail {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
void normalize_rows(Mat<Scalar>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Scalar s = m.row(i).sum();
    if (s > Scalar(0)) m.row(i) /= s;
  }
}

template <typename Scalar>
struct Binder {
  Tape<Scalar>& tape;
  ParameterSet<Scalar>* grads;

  typename Tape<Scalar>::Var operator()(const Mat<Scalar>& value, Mat<Scalar>* grad) const {
    return tape.parameter(value, grads ? grad : nullptr);
  }
};

}  // namespace detail

template <typename Scalar>
EncodedGraph<Scalar> encode(Tape<Scalar>& tape, const GraphView& g,
                            const ParameterSet<Scalar>& p, ParameterSet<Scalar>* grads = nullptr) {
  using Var = typename Tape<Scalar>::Var;
  using Matrix = detail::Mat<Scalar>;
  using Index = Eigen::Index;
  const ModelShape& s = p.shape;
  const detail::Binder<Scalar> bind{tape, grads};
  auto gp = [grads](auto member) -> Matrix* { return grads ? &(grads->*member) : nullptr; };

  for (EntityId e : g.nodes) {
    if (e.value >= static_cast<std::uint32_t>(s.num_entities)) {
      throw VocabularyError("entity id " + std::to_string(e.value) + " outside parameter vocabulary");
    }
  }
  for (const auto& e : g.edges) {
    if (e.relation.value >= static_cast<std::uint32_t>(s.num_relations)) {
      throw VocabularyError("relation id " + std::to_string(e.relation.value) +
                            " outside parameter vocabulary");
    }
    if (g.node_index(e.head) < 0 || g.node_index(e.tail) < 0) {
      throw UsageError("graph edge endpoint missing from node set");
    }
  }

  const Index n = static_cast<Index>(g.nodes.size());
  const Index num_edges = static_cast<Index>(g.edges.size());
  std::vector<Index> node_rows;
  for (EntityId e : g.nodes) node_rows.push_back(static_cast<Index>(e.value));
  std::vector<Index> src(g.edges.size()), dst(g.edges.size()), rel(g.edges.size());
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    src[i] = g.node_index(g.edges[i].head);
    dst[i] = g.node_index(g.edges[i].tail);
    rel[i] = static_cast<Index>(g.edges[i].relation.value);
  }

  Var h = tape.gather_rows(bind(p.entity_embeddings, gp(&ParameterSet<Scalar>::entity_embeddings)),
                           node_rows);
  Var r = bind(p.relation_embeddings, gp(&ParameterSet<Scalar>::relation_embeddings));

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    LayerParams<Scalar>* G = grads ? &grads->layers[l] : nullptr;
    auto lg = [G](auto member) -> Matrix* { return G ? &(G->*member) : nullptr; };
    const Var w = bind(L.node_weight, lg(&LayerParams<Scalar>::node_weight));
    const Var b = bind(L.node_bias, lg(&LayerParams<Scalar>::node_bias));

    Var pre;
    switch (s.kind) {
      case EncoderKind::gcn: {
        // Mean over undirected neighbors plus a self-loop.
        Matrix a = Matrix::Identity(n, n);
        for (Index e = 0; e < num_edges; ++e) {
          a(dst[e], src[e]) += 1;
          a(src[e], dst[e]) += 1;
        }
        detail::normalize_rows(a);
        pre = tape.matmul(tape.left_multiply(std::move(a), h), w);
        break;
      }
      case EncoderKind::rgcn: {
        // W_r = sum_b coeff[r,b] * basis_b; per-relation mean, summed, plus self.
        const Var coeffs = bind(L.basis_coeffs, lg(&LayerParams<Scalar>::basis_coeffs));
        const Var bases = bind(L.bases, lg(&LayerParams<Scalar>::bases));
        const Var weights = tape.matmul(coeffs, bases);
        pre = tape.matmul(h, w);
        const Index num_rel = s.num_relations;
        std::vector<bool> present(static_cast<std::size_t>(2 * num_rel), false);
        for (Index e = 0; e < num_edges; ++e) {
          present[static_cast<std::size_t>(rel[e])] = true;
          present[static_cast<std::size_t>(rel[e] + num_rel)] = true;
        }
        for (Index slot = 0; slot < 2 * num_rel; ++slot) {
          if (!present[static_cast<std::size_t>(slot)]) continue;
          const bool inverse = slot >= num_rel;
          Matrix c = Matrix::Zero(n, n);
          for (Index e = 0; e < num_edges; ++e) {
            if (rel[e] != slot % num_rel) continue;
            if (inverse) c(src[e], dst[e]) += 1;
            else c(dst[e], src[e]) += 1;
          }
          detail::normalize_rows(c);
          const Var wr = tape.reshape_row(weights, slot, s.dim, s.dim);
          pre = tape.add(pre, tape.matmul(tape.left_multiply(std::move(c), h), wr));
        }
        break;
      }
      case EncoderKind::stare_lite: {
        // Relation vector plus a linear map of the edge's annotation features,
        // composed additively with the source (subtractively for the inverse).
        std::vector<Var> parts;
        Matrix agg = Matrix::Zero(n, 2 * num_edges + n);
        if (num_edges > 0) {
          Matrix q(num_edges, 3);
          for (Index e = 0; e < num_edges; ++e)
            for (Index k = 0; k < 3; ++k)
              q(e, k) = static_cast<Scalar>(g.edges[static_cast<std::size_t>(e)].features[k]);
          const Var wq = bind(L.qualifier_weight, lg(&LayerParams<Scalar>::qualifier_weight));
          const Var comp = tape.add(tape.gather_rows(r, rel), tape.matmul(tape.constant(q), wq));
          parts.push_back(tape.add(tape.gather_rows(h, src), comp));
          parts.push_back(tape.sub(tape.gather_rows(h, dst), comp));
          for (Index e = 0; e < num_edges; ++e) {
            agg(dst[e], e) += 1;
            agg(src[e], num_edges + e) += 1;
          }
        }
        parts.push_back(h);
        for (Index v = 0; v < n; ++v) agg(v, 2 * num_edges + v) += 1;
        detail::normalize_rows(agg);
        if (num_edges == 0) agg = agg.rightCols(n).eval();
        pre = tape.matmul(tape.left_multiply(std::move(agg), tape.concat_rows(parts)), w);
        break;
      }
    }
    h = tape.relu(tape.add_row(pre, b));

    const Var wr = bind(L.relation_weight, lg(&LayerParams<Scalar>::relation_weight));
    const Var br = bind(L.relation_bias, lg(&LayerParams<Scalar>::relation_bias));
    r = tape.relu(tape.add_row(tape.matmul(r, wr), br));
  }
  return {h, r};
}

// z_i = [h_head || h_tail] for every item.
template <typename Scalar>
typename Tape<Scalar>::Var item_representations(Tape<Scalar>& tape, const EncodedGraph<Scalar>& enc,
                                                const GraphView& g,
                                                std::span<const MemoryItem> items) {
  std::vector<Eigen::Index> heads, tails;
  for (const auto& item : items) {
    const int hi = g.node_index(item.triple.head);
    const int ti = g.node_index(item.triple.tail);
    if (hi < 0 || ti < 0) throw UsageError("item endpoint missing from graph");
    heads.push_back(hi);
    tails.push_back(ti);
  }
  return tape.concat_cols(tape.gather_rows(enc.nodes, std::move(heads)),
                          tape.gather_rows(enc.nodes, std::move(tails)));
}

template <typename Scalar>
typename Tape<Scalar>::Var q_head(Tape<Scalar>& tape, typename Tape<Scalar>::Var z,
                                  const ParameterSet<Scalar>& p, ParameterSet<Scalar>* grads) {
  const detail::Binder<Scalar> bind{tape, grads};
  auto gp = [grads](auto member) -> detail::Mat<Scalar>* { return grads ? &(grads->*member) : nullptr; };
  using P = ParameterSet<Scalar>;
  auto hidden = tape.relu(tape.add_row(
      tape.matmul(z, bind(p.head_hidden_weight, gp(&P::head_hidden_weight))),
      bind(p.head_hidden_bias, gp(&P::head_hidden_bias))));
  return tape.add_row(tape.matmul(hidden, bind(p.head_out_weight, gp(&P::head_out_weight))),
                      bind(p.head_out_bias, gp(&P::head_out_bias)));
}

// Q-values on the tape: n x 2 (local) or 1 x 2 (global). Column 0 = drop,
// column 1 = keep.
template <typename Scalar>
typename Tape<Scalar>::Var forward_q(Tape<Scalar>& tape, const GraphView& g,
                                     std::span<const MemoryItem> items,
                                     const ParameterSet<Scalar>& p, HeadMode mode,
                                     ParameterSet<Scalar>* grads = nullptr) {
  if (items.empty()) throw UsageError("forward_q needs at least one item");
  const auto enc = encode(tape, g, p, grads);
  auto z = item_representations(tape, enc, g, items);
  if (mode == HeadMode::global) z = tape.mean_rows(z);
  return q_head(tape, z, p, grads);
}

template <typename Scalar>
detail::Mat<Scalar> q_values_local(const GraphView& g, std::span<const MemoryItem> items,
                                   const ParameterSet<Scalar>& p) {
  if (items.empty()) return detail::Mat<Scalar>(0, 2);
  Tape<Scalar> tape;
  return tape.value(forward_q(tape, g, items, p, HeadMode::local));
}

template <typename Scalar>
detail::Mat<Scalar> q_values_global(const GraphView& g, std::span<const MemoryItem> items,
                                    const ParameterSet<Scalar>& p) {
  if (items.empty()) throw UsageError("q_values_global needs at least one item");
  Tape<Scalar> tape;
  return tape.value(forward_q(tape, g, items, p, HeadMode::global));
}

template <typename Scalar>
detail::Mat<Scalar> q_values(const GraphView& g, std::span<const MemoryItem> items,
                             const ParameterSet<Scalar>& p, HeadMode mode) {
  return mode == HeadMode::local ? q_values_local(g, items, p) : q_values_global(g, items, p);
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON with shapes, seed, encoder kind and vocabulary.

inline constexpr int kCheckpointVersion = 1;

template <typename Scalar>
nlohmann::json checkpoint_to_json(const ParameterSet<Scalar>& p, const Vocabulary& vocab,
                                  std::uint64_t seed) {
  nlohmann::json j;
  j["format"] = "kgmem-checkpoint";
  j["version"] = kCheckpointVersion;
  j["encoder"] = to_string(p.shape.kind);
  j["dim"] = p.shape.dim;
  j["layers"] = p.shape.layers;
  j["bases"] = p.shape.bases;
  j["hidden"] = p.shape.hidden;
  j["seed"] = seed;
  j["entities"] = vocab.entities.labels();
  j["relations"] = vocab.relations.labels();
  j["parameter_count"] = p.parameter_count();
  auto& tensors = j["tensors"];
  p.for_each([&](const std::string& name, const auto& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(static_cast<double>(m(i, k)));
    tensors[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
  });
  return j;
}

// Loads into the shape implied by `expected`; rejects any mismatch.
template <typename Scalar>
ParameterSet<Scalar> checkpoint_from_json(const nlohmann::json& j, const Vocabulary& vocab,
                                          const ModelShape& expected) {
  try {
    if (j.at("format") != "kgmem-checkpoint") throw FormatError("not a kgmem checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + j.at("version").dump());
    }
    if (j.at("entities").get<std::vector<std::string>>() != vocab.entities.labels() ||
        j.at("relations").get<std::vector<std::string>>() != vocab.relations.labels()) {
      throw VocabularyError("checkpoint vocabulary does not match the world vocabulary");
    }
    ModelShape shape = expected;
    shape.kind = encoder_from_string(j.at("encoder").get<std::string>());
    shape.dim = j.at("dim").get<int>();
    shape.layers = j.at("layers").get<int>();
    shape.bases = j.at("bases").get<int>();
    shape.hidden = j.at("hidden").get<int>();
    if (!(shape == expected)) throw FormatError("checkpoint model shape does not match config");

    auto p = ParameterSet<Scalar>::initialize(shape, 0);
    const auto& tensors = j.at("tensors");
    p.for_each([&](const std::string& name, auto& m) {
      const auto& t = tensors.at(name);
      if (t.at("rows").template get<Eigen::Index>() != m.rows() ||
          t.at("cols").template get<Eigen::Index>() != m.cols()) {
        throw FormatError("tensor '" + name + "' shape mismatch");
      }
      const auto data = t.at("data").template get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != m.size()) {
        throw FormatError("tensor '" + name + "' data size mismatch");
      }
      std::size_t at = 0;
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = static_cast<Scalar>(data[at++]);
    });
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace kgmem
