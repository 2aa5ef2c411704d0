#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <thread>

#include "matadapt/gateway.hpp"
#include "matadapt/numeric.hpp"
#include "support/tmpdir.hpp"

using namespace matadapt;
using testsupport::TmpDir;

namespace {

ProviderSpec mock_spec(std::uint32_t dim, std::uint64_t seed) {
  ProviderSpec spec;
  spec.kind = ProviderSpec::Kind::Mock;
  spec.dim = dim;
  spec.mock_seed = seed;
  return spec;
}

// In-process embedding endpoint; `fail_first` requests return 500 before it
// starts answering.
class TestServer {
 public:
  explicit TestServer(std::uint32_t dim, int fail_first = 0, bool wrong_dim = false)
      : dim_(dim), fail_budget_(fail_first), wrong_dim_(wrong_dim) {
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      requests_.fetch_add(1);
      if (fail_budget_.fetch_sub(1) > 0) {
        res.status = 500;
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      nlohmann::json vectors = nlohmann::json::array();
      for (const auto& text : body["texts"]) {
        const std::uint32_t d = wrong_dim_ ? dim_ + 1 : dim_;
        std::vector<double> v(d, 0.0);
        v[0] = static_cast<double>(text.get<std::string>().size());
        v[d - 1] = 1.0;
        vectors.push_back(v);
      }
      res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~TestServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/embed"; }
  int requests() const { return requests_.load(); }

 private:
  httplib::Server server_;
  std::uint32_t dim_;
  std::atomic<int> fail_budget_;
  bool wrong_dim_;
  std::atomic<int> requests_{0};
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("mock provider is deterministic and unit-norm") {
  EmbeddingProvider p1(mock_spec(24, 5));
  EmbeddingProvider p2(mock_spec(24, 5));
  auto a = p1.embed({"hello"});
  auto b = p2.embed({"hello"});
  REQUIRE(a.data == b.data);  // pure function of (seed, string)

  double norm = 0;
  for (float v : a.row(0)) norm += double(v) * double(v);
  REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-6));

  auto again = p1.embed({"hello"});
  REQUIRE(again.data == a.data);
}

TEST_CASE("mock provider separates distinct strings and seeds") {
  EmbeddingProvider p(mock_spec(32, 9));
  auto m = p.embed({"alpha", "beta"});
  REQUIRE(m.size() == 2);
  const double sim = cosine_prefix(m.row(0), m.row(1), 32);
  REQUIRE(sim < 1.0);

  EmbeddingProvider other(mock_spec(32, 10));
  auto o = other.embed({"alpha"});
  REQUIRE(o.row(0)[0] != m.row(0)[0]);
}

TEST_CASE("embed rejects empty input and dedupes items") {
  EmbeddingProvider p(mock_spec(8, 1));
  REQUIRE_THROWS_AS(p.embed({}), EmptyInput);
  auto m = p.embed({"x", "y", "x"});
  REQUIRE(m.size() == 2);
  REQUIRE(m.ids == std::vector<std::string>{"x", "y"});
}

TEST_CASE("file provider serves rows by id") {
  TmpDir dir("file_provider");
  EmbeddingProvider mock(mock_spec(12, 3));
  auto stored = mock.embed({"a", "b", "c"});
  save_embeddings(stored, dir / "store.bin", EmbeddingFormat::Binary);

  ProviderSpec spec;
  spec.kind = ProviderSpec::Kind::File;
  spec.dim = 12;
  spec.source_path = (dir / "store.bin").string();
  EmbeddingProvider p(spec);
  auto m = p.embed({"c", "a"});
  REQUIRE(m.ids == std::vector<std::string>{"c", "a"});
  REQUIRE(std::equal(m.row(0).begin(), m.row(0).end(), stored.row(2).begin()));
  REQUIRE_THROWS_AS(p.embed({"ghost"}), UnknownId);

  ProviderSpec wrong = spec;
  wrong.dim = 13;
  EmbeddingProvider pw(wrong);
  REQUIRE_THROWS_AS(pw.embed({"a"}), DimMismatch);
}

TEST_CASE("remote provider round-trips vectors in batches") {
  TestServer server(6);
  ProviderSpec spec;
  spec.kind = ProviderSpec::Kind::Remote;
  spec.dim = 6;
  spec.endpoint = server.endpoint();
  spec.remote_batch = 2;
  EmbeddingProvider p(spec);

  auto m = p.embed({"aa", "bbbb", "c", "dd", "eeeee"});
  REQUIRE(m.size() == 5);
  REQUIRE(m.dim == 6);
  REQUIRE(m.row(0)[0] == 2.0f);
  REQUIRE(m.row(1)[0] == 4.0f);
  REQUIRE(m.row(4)[0] == 5.0f);
  REQUIRE(server.requests() == 3);  // ceil(5 / 2) batches
}

TEST_CASE("remote provider retries and then succeeds") {
  TestServer server(4, /*fail_first=*/2);
  ProviderSpec spec;
  spec.kind = ProviderSpec::Kind::Remote;
  spec.dim = 4;
  spec.endpoint = server.endpoint();
  EmbeddingProvider p(spec);
  auto m = p.embed({"zz"});
  REQUIRE(m.size() == 1);
  REQUIRE(server.requests() == 3);  // two failures, one success
}

TEST_CASE("remote provider surfaces hard failures") {
  TestServer down(4, /*fail_first=*/1000000);
  ProviderSpec spec;
  spec.kind = ProviderSpec::Kind::Remote;
  spec.dim = 4;
  spec.endpoint = down.endpoint();
  spec.remote_attempts = 2;
  EmbeddingProvider p(spec);
  REQUIRE_THROWS_AS(p.embed({"zz"}), RemoteError);
  REQUIRE(down.requests() == 2);

  TestServer wrong(4, 0, /*wrong_dim=*/true);
  ProviderSpec ws = spec;
  ws.endpoint = wrong.endpoint();
  EmbeddingProvider pw(ws);
  REQUIRE_THROWS_AS(pw.embed({"zz"}), DimMismatch);
}

TEST_CASE("cache bypasses the provider on a warm hit") {
  TmpDir dir("cache");
  EmbeddingProvider p(mock_spec(16, 44));
  std::vector<std::string> items{"one", "two", "three"};

  auto cold = cache_embeddings(p, items, dir.path());
  REQUIRE(p.calls() == 1);
  auto warm = cache_embeddings(p, items, dir.path());
  REQUIRE(p.calls() == 1);  // zero new provider invocations
  REQUIRE(warm.data == cold.data);
  REQUIRE(warm.ids == cold.ids);

  // different item list is a different batch
  cache_embeddings(p, {"four"}, dir.path());
  REQUIRE(p.calls() == 2);
}

TEST_CASE("cache round-trips a large batch bit-exactly") {
  TmpDir dir("cache_large");
  EmbeddingProvider p(mock_spec(32, 45));
  std::vector<std::string> items;
  for (int i = 0; i < 1000; ++i) items.push_back("item-" + std::to_string(i));
  auto cold = cache_embeddings(p, items, dir.path());
  auto warm = cache_embeddings(p, items, dir.path());
  REQUIRE(p.calls() == 1);
  REQUIRE(warm.data == cold.data);
}

TEST_CASE("poisoned cache entries are rejected") {
  TmpDir dir("cache_poison");
  EmbeddingProvider p(mock_spec(8, 46));
  std::vector<std::string> items{"x", "y"};
  cache_embeddings(p, items, dir.path());

  // overwrite the cached entry with a wrong-dimension matrix
  const std::string digest = detail::batch_digest(p.spec().fingerprint(), items);
  EmbeddingProvider other(mock_spec(9, 46));
  auto bad = other.embed(items);
  save_embeddings(bad, dir.path() / (digest + ".bin"), EmbeddingFormat::Binary);

  REQUIRE_THROWS_AS(cache_embeddings(p, items, dir.path()), DimMismatch);
}
