#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "matadapt/losses.hpp"
#include "matadapt/rng.hpp"

using namespace matadapt;

namespace {

Matrix random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (auto& v : m.data) v = rng.gaussian();
  return m;
}

// Independent reference for the pairwise loss: plain double loops, its own
// cosine, no shared helpers.
double reference_pairwise(const Matrix& orig, const Matrix& adapted,
                          const std::vector<std::uint32_t>& dims) {
  auto cosine = [](std::span<const double> a, std::span<const double> b, std::size_t m) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < m; ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double total = 0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < orig.rows; ++i)
    for (std::size_t j = i + 1; j < orig.rows; ++j)
      for (std::uint32_t m : dims) {
        total += std::abs(cosine(orig.row(i), orig.row(j), orig.cols) -
                          cosine(adapted.row(i), adapted.row(j), m));
        ++terms;
      }
  return total / static_cast<double>(terms);
}

// Central finite differences of `loss_value` with respect to one matrix.
void check_grad_fd(Matrix& wrt, const Matrix& analytic, const std::function<double()>& loss_value) {
  const double h = 1e-5;
  for (std::size_t i = 0; i < wrt.data.size(); ++i) {
    const double keep = wrt.data[i];
    wrt.data[i] = keep + h;
    const double up = loss_value();
    wrt.data[i] = keep - h;
    const double down = loss_value();
    wrt.data[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double got = analytic.data[i];
    const double tol = 1e-4 * std::max({1e-3, std::abs(fd), std::abs(got)});
    REQUIRE(std::abs(fd - got) <= tol);
  }
}

const DimSchedule kDims24{{2, 4}};

}  // namespace

TEST_CASE("dim schedule validation and parsing") {
  REQUIRE_THROWS_AS(DimSchedule{}.validate(), Error);
  REQUIRE_THROWS_AS((DimSchedule{{4, 4}}).validate(), Error);
  REQUIRE_THROWS_AS((DimSchedule{{4, 2}}).validate(), Error);
  REQUIRE_THROWS_AS((DimSchedule{{2, 8}}).validate(4), PrefixOutOfRange);

  auto parsed = DimSchedule::parse("8,16,32");
  REQUIRE(parsed.dims == std::vector<std::uint32_t>{8, 16, 32});
  REQUIRE_THROWS_AS(DimSchedule::parse("8,,16"), FormatError);

  REQUIRE(DimSchedule::defaults_for(128).dims == std::vector<std::uint32_t>{8, 16, 32, 64, 128});
  REQUIRE(DimSchedule::defaults_for(768).dims ==
          std::vector<std::uint32_t>{8, 16, 32, 64, 128, 256, 512, 768});
  REQUIRE(DimSchedule::defaults_for(6).dims == std::vector<std::uint32_t>{6});
}

TEST_CASE("pairwise loss is zero for untouched embeddings at full dim") {
  auto orig = random_batch(5, 4, 1);
  Matrix adapted = orig;
  DimSchedule full{{4}};
  auto lg = pairwise_loss(orig, adapted, full);
  REQUIRE(lg.value == 0.0);
  for (double g : lg.grad.data) REQUIRE(g == 0.0);
}

TEST_CASE("pairwise loss hand example: orthogonal pair, prefix one") {
  const double s = 1.0 / std::sqrt(2.0);
  Matrix orig(2, 2);
  orig.at(0, 0) = s;
  orig.at(0, 1) = s;
  orig.at(1, 0) = s;
  orig.at(1, 1) = -s;
  Matrix adapted = orig;
  DimSchedule one{{1}};
  auto lg = pairwise_loss(orig, adapted, one);
  // full-dim similarity 0, prefix-1 similarity 1
  REQUIRE(lg.value == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pairwise loss matches the double-loop reference") {
  auto orig = random_batch(8, 6, 2);
  auto adapted = random_batch(8, 6, 3);
  auto lg = pairwise_loss(orig, adapted, kDims24);
  REQUIRE(lg.value == Catch::Approx(reference_pairwise(orig, adapted, kDims24.dims)).margin(1e-6));
}

TEST_CASE("pairwise loss rejects tiny batches and shape mismatches") {
  auto one = random_batch(1, 4, 4);
  REQUIRE_THROWS_AS(pairwise_loss(one, one, kDims24), BatchTooSmall);
  auto a = random_batch(3, 4, 5);
  auto b = random_batch(3, 5, 6);
  REQUIRE_THROWS_AS(pairwise_loss(a, b, kDims24), DimMismatch);
}

TEST_CASE("topk loss equals pairwise loss when every row neighbours every other") {
  auto orig = random_batch(6, 4, 7);
  auto adapted = random_batch(6, 4, 8);
  std::vector<std::vector<std::uint32_t>> all(6);
  for (std::uint32_t i = 0; i < 6; ++i)
    for (std::uint32_t j = 0; j < 6; ++j)
      if (i != j) all[i].push_back(j);
  auto topk = topk_loss(orig, adapted, all, kDims24);
  auto pair = pairwise_loss(orig, adapted, kDims24);
  REQUIRE(topk.value == Catch::Approx(pair.value).margin(1e-6));
}

TEST_CASE("topk loss: three-point hand enumeration at prefix one") {
  // points (1,0), (0.9,0.1), (0,1) with k=1 neighbour lists {1},{0},{1}
  Matrix orig(3, 2);
  orig.at(0, 0) = 1.0;
  orig.at(1, 0) = 0.9;
  orig.at(1, 1) = 0.1;
  orig.at(2, 1) = 1.0;
  Matrix adapted = orig;
  std::vector<std::vector<std::uint32_t>> nbrs{{1}, {0}, {1}};
  DimSchedule one{{1}};
  auto lg = topk_loss(orig, adapted, nbrs, one);

  auto cos_full = [&](std::size_t i, std::size_t j) {
    double dot = 0, ni = 0, nj = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      dot += orig.at(i, c) * orig.at(j, c);
      ni += orig.at(i, c) * orig.at(i, c);
      nj += orig.at(j, c) * orig.at(j, c);
    }
    return dot / std::sqrt(ni * nj);
  };
  // prefix-1 sims: (0,1)=1, (1,0)=1, (2,1)=0 (zero-norm guard on row 2)
  const double expected =
      (std::abs(cos_full(0, 1) - 1.0) + std::abs(cos_full(1, 0) - 1.0) +
       std::abs(cos_full(2, 1) - 0.0)) /
      3.0;
  REQUIRE(lg.value == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("topk loss validates neighbour indices") {
  auto orig = random_batch(3, 4, 9);
  std::vector<std::vector<std::uint32_t>> bad{{5}, {}, {}};
  REQUIRE_THROWS_AS(topk_loss(orig, orig, bad, kDims24), InvalidNeighborIndex);
  std::vector<std::vector<std::uint32_t>> self{{0}, {}, {}};
  REQUIRE_THROWS_AS(topk_loss(orig, orig, self, kDims24), InvalidNeighborIndex);
}

TEST_CASE("reconstruction loss basics") {
  auto orig = random_batch(4, 3, 10);
  auto same = rec_loss(orig, orig);
  REQUIRE(same.value == 0.0);

  Matrix o(1, 2), a(1, 2);
  a.at(0, 0) = 1.0;
  a.at(0, 1) = -1.0;
  auto lg = rec_loss(o, a);
  REQUIRE(lg.value == Catch::Approx(1.0).epsilon(1e-15));
  REQUIRE(lg.grad.at(0, 0) == Catch::Approx(0.5).epsilon(1e-15));
  REQUIRE(lg.grad.at(0, 1) == Catch::Approx(-0.5).epsilon(1e-15));

  Matrix doubled = a;
  for (auto& v : doubled.data) v *= 2;
  REQUIRE(rec_loss(o, doubled).value == Catch::Approx(2.0 * lg.value).epsilon(1e-12));
}

TEST_CASE("rank loss vanishes when all grades tie") {
  auto q = random_batch(3, 4, 11);
  auto c = random_batch(5, 4, 12);
  Matrix grades(3, 5);  // all zero
  auto lg = rank_loss(q, c, grades, kDims24);
  REQUIRE(lg.value == 0.0);
  for (double g : lg.grad_queries.data) REQUIRE(g == 0.0);
  for (double g : lg.grad_corpus.data) REQUIRE(g == 0.0);
}

TEST_CASE("rank loss hand values") {
  // One query, two docs with identical embeddings: all prefix sims equal,
  // grades 1 vs 0 -> log 2 per term.
  Matrix q(1, 2);
  q.at(0, 0) = 1.0;
  Matrix c(2, 2);
  c.at(0, 0) = 1.0;
  c.at(1, 0) = 1.0;
  Matrix grades(1, 2);
  grades.at(0, 0) = 1.0;
  DimSchedule one{{1}};
  auto lg = rank_loss(q, c, grades, one);
  REQUIRE(lg.value == Catch::Approx(std::log(2.0)).epsilon(1e-12));

  // Large positive margin: loss ~ exp(-margin), monotone decreasing.
  Matrix c2(2, 2);
  c2.at(0, 0) = 1.0;          // relevant doc aligned with the query
  c2.at(1, 0) = -1.0;         // irrelevant doc opposite
  auto strong = rank_loss(q, c2, grades, one);
  // s_ij = 1, s_ik = -1, z = -2
  REQUIRE(strong.value == Catch::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
  REQUIRE(strong.value < lg.value);
  REQUIRE(std::log1p(std::exp(-10.0)) == Catch::Approx(4.5399e-5).epsilon(1e-3));
}

TEST_CASE("rank loss is invariant to shifting one query's grades") {
  auto q = random_batch(2, 6, 13);
  auto c = random_batch(4, 6, 14);
  Matrix grades(2, 4);
  Rng rng(15);
  for (auto& g : grades.data) g = static_cast<double>(rng.index(3));
  auto base = rank_loss(q, c, grades, kDims24);

  Matrix shifted = grades;
  for (std::size_t j = 0; j < 4; ++j) shifted.at(1, j) += 5.0;
  auto moved = rank_loss(q, c, shifted, kDims24);
  REQUIRE(moved.value == Catch::Approx(base.value).epsilon(1e-12));
}

TEST_CASE("similarity losses ignore positive rescaling of an original row") {
  auto orig = random_batch(5, 4, 16);
  auto adapted = random_batch(5, 4, 17);
  std::vector<std::vector<std::uint32_t>> nbrs{{1, 2}, {0}, {3}, {4}, {0}};
  auto p0 = pairwise_loss(orig, adapted, kDims24);
  auto t0 = topk_loss(orig, adapted, nbrs, kDims24);

  Matrix scaled = orig;
  for (std::size_t j = 0; j < 4; ++j) scaled.at(2, j) *= 7.5;
  auto p1 = pairwise_loss(scaled, adapted, kDims24);
  auto t1 = topk_loss(scaled, adapted, nbrs, kDims24);
  REQUIRE(p1.value == Catch::Approx(p0.value).margin(1e-6));
  REQUIRE(t1.value == Catch::Approx(t0.value).margin(1e-6));
}

TEST_CASE("losses are non-negative on random instances") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto orig = random_batch(6, 8, 100 + seed);
    auto adapted = random_batch(6, 8, 200 + seed);
    DimSchedule dims{{2, 4, 8}};
    REQUIRE(pairwise_loss(orig, adapted, dims).value >= 0.0);
    REQUIRE(rec_loss(orig, adapted).value >= 0.0);
  }
}

TEST_CASE("pairwise gradient matches finite differences") {
  for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
    auto orig = random_batch(5, 8, seed);
    auto adapted = random_batch(5, 8, seed + 50);
    DimSchedule dims{{2, 4, 8}};
    auto lg = pairwise_loss(orig, adapted, dims);
    check_grad_fd(adapted, lg.grad, [&] { return pairwise_loss(orig, adapted, dims).value; });
  }
}

TEST_CASE("topk gradient matches finite differences") {
  auto orig = random_batch(6, 8, 31);
  auto adapted = random_batch(6, 8, 32);
  std::vector<std::vector<std::uint32_t>> nbrs{{1, 2}, {0, 3}, {1}, {4, 5}, {0}, {2}};
  DimSchedule dims{{2, 4, 8}};
  auto lg = topk_loss(orig, adapted, nbrs, dims);
  check_grad_fd(adapted, lg.grad, [&] { return topk_loss(orig, adapted, nbrs, dims).value; });
}

TEST_CASE("rec gradient matches finite differences") {
  auto orig = random_batch(4, 6, 41);
  auto adapted = random_batch(4, 6, 42);
  auto lg = rec_loss(orig, adapted);
  check_grad_fd(adapted, lg.grad, [&] { return rec_loss(orig, adapted).value; });
}

TEST_CASE("rank gradients match finite differences for both batches") {
  auto q = random_batch(3, 8, 51);
  auto c = random_batch(4, 8, 52);
  Matrix grades(3, 4);
  Rng rng(53);
  for (auto& g : grades.data) g = static_cast<double>(rng.index(3));
  DimSchedule dims{{2, 4, 8}};
  auto lg = rank_loss(q, c, grades, dims);
  check_grad_fd(q, lg.grad_queries, [&] { return rank_loss(q, c, grades, dims).value; });
  check_grad_fd(c, lg.grad_corpus, [&] { return rank_loss(q, c, grades, dims).value; });
}

TEST_CASE("unsupervised aggregate: weight zeroing and linearity") {
  auto orig = random_batch(5, 6, 61);
  auto adapted = random_batch(5, 6, 62);
  std::vector<std::vector<std::uint32_t>> nbrs{{1}, {2}, {3}, {4}, {0}};
  DimSchedule dims{{2, 4}};
  auto topk = topk_loss(orig, adapted, nbrs, dims);
  auto pair = pairwise_loss(orig, adapted, dims);
  auto rec = rec_loss(orig, adapted);

  ObjectiveWeights zeroed{0.0, 0.0, 1.0};
  auto only_topk = unsup_objective(topk, pair, rec, zeroed);
  REQUIRE(only_topk.value == topk.value);
  REQUIRE(only_topk.grad.data == topk.grad.data);

  ObjectiveWeights w{0.7, 1.3, 1.0};
  auto combo = unsup_objective(topk, pair, rec, w);
  REQUIRE(combo.value ==
          Catch::Approx(topk.value + 0.7 * pair.value + 1.3 * rec.value).epsilon(1e-15));
  for (std::size_t i = 0; i < combo.grad.data.size(); ++i) {
    const double expect =
        topk.grad.data[i] + 0.7 * pair.grad.data[i] + 1.3 * rec.grad.data[i];
    REQUIRE(std::abs(combo.grad.data[i] - expect) <= 1e-12);
  }
}

TEST_CASE("supervised aggregate adds the scaled ranking term") {
  auto orig = random_batch(4, 6, 71);
  auto adapted = random_batch(4, 6, 72);
  auto q = random_batch(2, 6, 73);
  auto c = random_batch(3, 6, 74);
  Matrix grades(2, 3);
  grades.at(0, 0) = 2.0;
  grades.at(1, 2) = 1.0;
  DimSchedule dims{{2, 4}};

  std::vector<std::vector<std::uint32_t>> nbrs{{1}, {0}, {3}, {2}};
  auto topk = topk_loss(orig, adapted, nbrs, dims);
  auto pair = pairwise_loss(orig, adapted, dims);
  auto rec = rec_loss(orig, adapted);
  auto rank = rank_loss(q, c, grades, dims);

  ObjectiveWeights no_rank{1.0, 1.0, 0.0};
  auto unsup = unsup_objective(topk, pair, rec, no_rank);
  auto sup0 = sup_objective(topk, pair, rec, rank, no_rank);
  REQUIRE(sup0.value == unsup.value);
  for (double g : sup0.rank_query_grad.data) REQUIRE(g == 0.0);

  ObjectiveWeights w{0.5, 0.25, 2.0};
  auto sup = sup_objective(topk, pair, rec, rank, w);
  REQUIRE(sup.value == Catch::Approx(topk.value + 0.5 * pair.value + 0.25 * rec.value +
                                     2.0 * rank.value)
                           .epsilon(1e-15));
  for (std::size_t i = 0; i < sup.rank_query_grad.data.size(); ++i)
    REQUIRE(std::abs(sup.rank_query_grad.data[i] - 2.0 * rank.grad_queries.data[i]) <= 1e-12);
}
