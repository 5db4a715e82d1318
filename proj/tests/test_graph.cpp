#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "qisicgm/graph.hpp"

using namespace qisicgm;

namespace {

graph::Embeddings embeddings_from(const Mat& m) {
  graph::Embeddings e;
  e.matrix = m;
  return e;
}

/// Two disjoint k-cliques encoded as a directed neighbor structure whose
/// symmetrization is exactly the clique edges.
graph::ConceptGraph two_cliques(int size) {
  graph::ConceptGraph g;
  g.k = size - 1;
  g.neighbors.resize(static_cast<std::size_t>(2 * size));
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < size; ++i) {
      auto& out = g.neighbors[static_cast<std::size_t>(c * size + i)];
      for (int j = 0; j < size; ++j) {
        if (j != i) out.push_back(c * size + j);
      }
    }
  }
  return g;
}

}  // namespace

TEST_CASE("autoencoder: shapes, descent, divergence-free trace") {
  auto rng = make_rng(61);
  const Mat X = oracles::random_matrix(40, 6, rng);
  graph::AutoencoderConfig cfg;
  cfg.hidden1 = 16;
  cfg.hidden2 = 12;
  cfg.embedding = 8;
  cfg.epochs = 40;
  const auto result = graph::train_autoencoder(X, 5, cfg);
  CHECK(result.embeddings.matrix.rows() == 40);
  CHECK(result.embeddings.matrix.cols() == 8);
  CHECK(result.embeddings.matrix.allFinite());
  REQUIRE(result.loss_trace.size() == 41);  // pre-training entry + one per epoch
  CHECK(result.loss_trace.back() <= result.loss_trace.front());

  CHECK_THROWS(static_cast<void>(graph::train_autoencoder(X.topRows(5), 5, cfg)));
}

TEST_CASE("autoencoder: default width is 128") {
  auto rng = make_rng(62);
  const Mat X = oracles::random_matrix(30, 10, rng);
  graph::AutoencoderConfig cfg;
  cfg.epochs = 1;
  const auto result = graph::train_autoencoder(X, 5, cfg);
  CHECK(result.embeddings.matrix.cols() == 128);
}

TEST_CASE("autoencoder: gradients match finite differences on a 5-sample batch") {
  auto rng = make_rng(63);
  const Mat X = oracles::random_matrix(5, 4, rng);
  graph::AutoencoderConfig cfg;
  cfg.hidden1 = 6;
  cfg.hidden2 = 5;
  cfg.embedding = 3;
  graph::Autoencoder ae(4, cfg, 99);
  for (auto* p : ae.params()) p->zero_grad();
  ae.loss_and_grad(X, true);
  auto loss = [&]() { return ae.loss_and_grad(X, false); };
  const auto report = oracles::check_gradients(ae.params(), loss);
  INFO(report.worst);
  CHECK(report.ok);
}

TEST_CASE("build_knn: collinear geometry, degree, brute-force equality") {
  {
    Mat pts(3, 1);
    pts << 0.0, 1.0, 3.0;
    const auto g = graph::build_knn(embeddings_from(pts), 1);
    CHECK(g.neighbors[1][0] == 0);  // middle point's nearer endpoint
  }
  auto rng = make_rng(67);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 20 + trial * 15;
    const Mat pts = oracles::random_matrix(n, 8, rng);
    const auto g = graph::build_knn(embeddings_from(pts), 5);
    for (const auto& nb : g.neighbors) CHECK(nb.size() == 5);
    const auto expected = oracles::brute_knn(pts, 5);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(g.neighbors[i] == expected[i]);
    }
    for (std::size_t i = 0; i < g.neighbors.size(); ++i) {
      for (int j : g.neighbors[i]) CHECK(j != static_cast<int>(i));
    }
  }
  Mat tiny(3, 2);
  tiny.setZero();
  CHECK_THROWS(static_cast<void>(graph::build_knn(embeddings_from(tiny), 5)));
}

TEST_CASE("knn_lookup matches graph tie rule") {
  auto rng = make_rng(68);
  const Mat stored = oracles::random_matrix(50, 6, rng);
  const Mat queries = oracles::random_matrix(5, 6, rng);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const auto got = graph::knn_lookup(stored, queries.row(q), 4);
    // brute force with the same metric
    std::vector<std::pair<double, int>> all;
    for (int j = 0; j < 50; ++j) {
      double s = 0.0;
      for (int c = 0; c < 6; ++c) {
        const double d = queries(q, c) - stored(j, c);
        s += d * d;
      }
      all.emplace_back(s, j);
    }
    std::sort(all.begin(), all.end());
    for (int j = 0; j < 4; ++j) CHECK(got[static_cast<std::size_t>(j)] == all[static_cast<std::size_t>(j)].second);
  }
}

TEST_CASE("modularity: cliques, single community, bounds, oracle equality") {
  const auto g = two_cliques(5);
  std::vector<int> communities(10, 0);
  for (int i = 5; i < 10; ++i) communities[static_cast<std::size_t>(i)] = 1;
  CHECK(graph::modularity(g, communities) == doctest::Approx(0.5));

  CHECK(graph::modularity(g, std::vector<int>(10, 7)) == doctest::Approx(0.0));

  auto rng = make_rng(71);
  std::uniform_int_distribution<int> comm(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 12;
    const Mat pts = oracles::random_matrix(n, 3, rng);
    const auto kg = graph::build_knn(embeddings_from(pts), 3);
    std::vector<int> part(static_cast<std::size_t>(n));
    for (auto& c : part) c = comm(rng);
    const double q = graph::modularity(kg, part);
    CHECK(q >= -0.5);
    CHECK(q <= 1.0);
    CHECK(q == doctest::Approx(oracles::modularity_double_sum(kg.neighbors, part)).epsilon(1e-9));
  }
}

TEST_CASE("modularity: union of equal cliques under component partition") {
  for (int cliques = 2; cliques <= 4; ++cliques) {
    graph::ConceptGraph g;
    const int size = 4;
    g.k = size - 1;
    g.neighbors.resize(static_cast<std::size_t>(cliques * size));
    std::vector<int> part(static_cast<std::size_t>(cliques * size));
    for (int c = 0; c < cliques; ++c) {
      for (int i = 0; i < size; ++i) {
        part[static_cast<std::size_t>(c * size + i)] = c;
        for (int j = 0; j < size; ++j) {
          if (i != j) g.neighbors[static_cast<std::size_t>(c * size + i)].push_back(c * size + j);
        }
      }
    }
    CHECK(graph::modularity(g, part) ==
          doctest::Approx(oracles::modularity_double_sum(g.neighbors, part)).epsilon(1e-12));
    // closed form: c communities, each e_s/m = 1/c, (d_s/2m)^2 = 1/c^2
    CHECK(graph::modularity(g, part) == doctest::Approx(1.0 - 1.0 / cliques - 0.0).epsilon(1e-12));
  }
}

TEST_CASE("average degree of symmetrized graph is in (0, 2k]") {
  auto rng = make_rng(73);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat pts = oracles::random_matrix(30, 4, rng);
    const auto g = graph::build_knn(embeddings_from(pts), 4);
    const double deg = graph::average_degree(g);
    CHECK(deg > 0.0);
    CHECK(deg <= 8.0);
  }
}

TEST_CASE("refine: rebuild cadence, descent on separable data, lr=0 no-op") {
  auto rng = make_rng(79);
  const int n = 40;
  Mat emb(n, 6);
  std::vector<int> y(static_cast<std::size_t>(n));
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    for (int j = 0; j < 6; ++j) emb(i, j) = (pos ? 2.0 : -2.0) + noise(rng);
    y[static_cast<std::size_t>(i)] = pos ? 1 : 0;
  }
  const auto g0 = graph::build_knn(embeddings_from(emb), 5);

  graph::RefineOptions opt;
  opt.iterations = 50;
  opt.rebuild_every = 10;
  const auto result = graph::refine(g0, embeddings_from(emb), y, 5, opt);
  CHECK(result.rebuilds == 5);
  CHECK(result.stats.size() == 50);
  CHECK(result.stats.back().bce < result.stats.front().bce);
  CHECK(result.embeddings.source == graph::EmbeddingSource::kRefined);
  for (const auto& nb : result.graph.neighbors) CHECK(nb.size() == 5);

  graph::RefineOptions frozen = opt;
  frozen.lr = 0.0;
  const auto still = graph::refine(g0, embeddings_from(emb), y, 5, frozen);
  CHECK(still.embeddings.matrix == emb);  // bit-identical
  CHECK(still.stats.front().bce == doctest::Approx(still.stats.back().bce));
}

TEST_CASE("refine: classifier gradient matches finite differences on a toy graph") {
  auto rng = make_rng(83);
  const int n = 5, d = 3, k = 2;
  const Mat emb = oracles::random_matrix(n, d, rng);
  const auto g = graph::build_knn(embeddings_from(emb), k);
  const auto yi = oracles::random_labels(n, rng);

  Vec w = oracles::random_matrix(d, 1, rng).col(0);
  double b = 0.2;

  auto loss_at = [&](const Vec& w_, double b_) {
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      Vec m = Vec::Zero(d);
      for (int j : g.neighbors[static_cast<std::size_t>(i)]) m += emb.row(j).transpose();
      m /= static_cast<double>(k);
      const double z = m.dot(w_) + b_;
      loss += softplus(z) - yi[static_cast<std::size_t>(i)] * z;
    }
    return loss / n;
  };

  // analytic
  Vec dw = Vec::Zero(d);
  double db = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec m = Vec::Zero(d);
    for (int j : g.neighbors[static_cast<std::size_t>(i)]) m += emb.row(j).transpose();
    m /= static_cast<double>(k);
    const double z = m.dot(w) + b;
    const double gi = (sigmoid(z) - yi[static_cast<std::size_t>(i)]) / n;
    dw += gi * m;
    db += gi;
  }

  const double h = 1e-5;
  for (int j = 0; j < d; ++j) {
    Vec wp = w, wm = w;
    wp(j) += h;
    wm(j) -= h;
    const double fd = (loss_at(wp, b) - loss_at(wm, b)) / (2 * h);
    CHECK(std::abs(fd - dw(j)) / std::max({std::abs(fd), std::abs(dw(j)), 1e-6}) < 1e-4);
  }
  const double fd_b = (loss_at(w, b + h) - loss_at(w, b - h)) / (2 * h);
  CHECK(std::abs(fd_b - db) / std::max({std::abs(fd_b), std::abs(db), 1e-6}) < 1e-4);
}

TEST_CASE("neighbor_sequences: shape, first row, membership") {
  auto rng = make_rng(89);
  const Mat emb = oracles::random_matrix(15, 4, rng);
  const auto g = graph::build_knn(embeddings_from(emb), 5);
  const auto seqs = graph::neighbor_sequences(g, embeddings_from(emb));
  REQUIRE(seqs.shape == std::vector<int>({15, 5, 4}));
  for (int i = 0; i < 15; ++i) {
    const int nearest = g.neighbors[static_cast<std::size_t>(i)][0];
    for (int c = 0; c < 4; ++c) {
      CHECK(seqs.data[(static_cast<std::size_t>(i) * 5 + 0) * 4 + static_cast<std::size_t>(c)] ==
            emb(nearest, c));
    }
    // every row of the sequence appears verbatim in the embedding matrix
    for (int j = 0; j < 5; ++j) {
      const int nb = g.neighbors[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      for (int c = 0; c < 4; ++c) {
        CHECK(seqs.data[(static_cast<std::size_t>(i) * 5 + static_cast<std::size_t>(j)) * 4 +
                        static_cast<std::size_t>(c)] == emb(nb, c));
      }
    }
  }
}

TEST_CASE("export_dot: structure, colors, determinism") {
  Mat pts(2, 1);
  pts << 0.0, 1.0;
  const auto g = graph::build_knn(embeddings_from(pts), 1);
  const std::string dot = graph::to_dot(g, {1, 0});

  int node_lines = 0, edge_lines = 0;
  std::istringstream stream(dot);
  std::string line;
  while (std::getline(stream, line)) {
    if (line.find("->") != std::string::npos) ++edge_lines;
    else if (line.find("color=") != std::string::npos) ++node_lines;
  }
  CHECK(node_lines == 2);
  CHECK(edge_lines == 2);
  CHECK(dot.find("n0 [color=\"red\"]") != std::string::npos);
  CHECK(dot.find("n1 [color=\"blue\"]") != std::string::npos);

  const std::string path = "test_graph_tmp.dot";
  graph::export_dot(g, {1, 0}, path);
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(buf.str() == dot);
  graph::export_dot(g, {1, 0}, path);  // re-export must be byte-identical
  std::ifstream in2(path, std::ios::binary);
  std::stringstream buf2;
  buf2 << in2.rdbuf();
  CHECK(buf2.str() == buf.str());
  std::remove(path.c_str());

  CHECK_THROWS(graph::export_dot(g, {1, 0}, "no_such_dir/x.dot"));
}
