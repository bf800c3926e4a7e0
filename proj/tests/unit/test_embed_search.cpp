#include <cmath>

#include <gtest/gtest.h>

#include "claimlab/embed_search.hpp"
#include "claimlab/random.hpp"
#include "fake_server.hpp"
#include "support.hpp"

using namespace claimlab;

namespace {

EmbeddingVector vec(std::vector<double> v, Modality m = Modality::Text) { return EmbeddingVector(std::move(v), m); }

std::vector<double> random_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Reference cosine computed independently in long double.
double cosine_ref(const std::vector<double>& a, std::span<const double> b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(dot / std::sqrt(na * nb));
}

}  // namespace

TEST(Fusion, WeightZeroAndOneReturnTheInputsExactly) {
  const auto t = vec({0.3, -1.2, 2.5}), i = vec({1.0, 0.25, -0.75}, Modality::Image);
  const auto f0 = fuse({t, i, 0.0});
  const auto f1 = fuse({t, i, 1.0});
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(f0[d], t[d]);
    EXPECT_EQ(f1[d], i[d]);
  }
}

TEST(Fusion, HalfWeightIsTheMidpoint) {
  const auto f = fuse({vec({1.0, 0.0}), vec({0.0, 1.0}, Modality::Image), 0.5});
  EXPECT_DOUBLE_EQ(f[0], 0.5);
  EXPECT_DOUBLE_EQ(f[1], 0.5);
  EXPECT_EQ(f.modality(), Modality::Fused);
}

TEST(Fusion, SingleModalityIgnoresWeight) {
  const auto f = fuse({vec({2.0, 3.0}), std::nullopt, 0.9});
  EXPECT_EQ(f[0], 2.0);
  EXPECT_EQ(f[1], 3.0);
}

TEST(Fusion, RejectsBadQueries) {
  EXPECT_THROW(fuse({std::nullopt, std::nullopt, 0.0}), ValidationError);
  EXPECT_THROW(fuse({vec({1.0}), vec({1.0}, Modality::Image), 1.5}), ValidationError);
  EXPECT_THROW(fuse({vec({1.0}), vec({1.0}, Modality::Image), -0.1}), ValidationError);
  EXPECT_THROW(fuse({vec({1.0}), vec({1.0, 2.0}, Modality::Image), 0.5}), ValidationError);
  EXPECT_THROW(vec({}), ValidationError);
  EXPECT_THROW(vec({NAN}), ValidationError);
}

TEST(Fusion, LinearInWeight) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_vector(rng, 8), im = random_vector(rng, 8);
    const double w = rng.uniform();
    const auto f = fuse({vec(t), vec(im, Modality::Image), w});
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(f[d], t[d] + w * (im[d] - t[d]), 1e-12);
  }
}

TEST(Cosine, KnownValues) {
  EXPECT_DOUBLE_EQ(cosine(vec({1, 0}), vec({0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(cosine(vec({1, 0}), vec({1, 1})), 1.0 / std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(cosine(vec({1, 2, 3}), vec({-1, -2, -3})), -1.0);
  EXPECT_DOUBLE_EQ(cosine(vec({1, 2, 3}), vec({2, 4, 6})), 1.0);
}

TEST(Cosine, RejectsZeroNormAndDimensionMismatch) {
  EXPECT_THROW(cosine(vec({0, 0}), vec({1, 0})), DomainError);
  EXPECT_THROW(cosine(vec({1, 0}), vec({1, 0, 0})), ValidationError);
}

TEST(Cosine, StaysWithinUnitInterval) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_vector(rng, 16);
    const auto c = cosine(vec(a), vec(a));
    EXPECT_LE(c, 1.0);
    EXPECT_NEAR(c, 1.0, 1e-12);
  }
}

TEST(HashProvider, DeterministicUnitVectorsWithSeparateModalities) {
  HashEmbeddingProvider p(32);
  const auto a = p.embed(EmbedInput::text("Hydrates skin"));
  const auto b = p.embed(EmbedInput::text("Hydrates skin"));
  const auto c = p.embed(EmbedInput::image_ref("Hydrates skin"));
  EXPECT_EQ(a, b);
  EXPECT_NE(a.values()[0], c.values()[0]);
  double n = 0;
  for (double x : a.values()) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_EQ(a.dim(), 32u);
}

TEST(HttpProvider, UnreachableEndpointIsTransportError) {
  HttpEndpoint e{"http://127.0.0.1:" + std::to_string(testing_support::dead_port()) + "/v1/embeddings", "m", "", 2.0};
  HttpEmbeddingProvider p(e, 3);
  EXPECT_THROW(p.embed(EmbedInput::text("x")), TransportError);
}

TEST(HttpProvider, ParsesReplySendsBearerAndChecksDimension) {
  std::string auth, model;
  testing_support::FakeServer server("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    model = nlohmann::json::parse(req.body).at("model");
    res.set_content(R"({"data":[{"embedding":[0.5,-0.5,1.0]}]})", "application/json");
  });
  HttpEmbeddingProvider ok({server.url("/v1/embeddings"), "emb-small", "tok", 5.0}, 3);
  const auto v = ok.embed(EmbedInput::text("hello"));
  EXPECT_EQ(v.dim(), 3u);
  EXPECT_EQ(v[2], 1.0);
  EXPECT_EQ(auth, "Bearer tok");
  EXPECT_EQ(model, "emb-small");
  HttpEmbeddingProvider wrong({server.url("/v1/embeddings"), "m", "", 5.0}, 4);
  EXPECT_THROW(wrong.embed(EmbedInput::text("hello")), TransportError);
  EXPECT_THROW(ok.embed(EmbedInput::image_ref("img")), ValidationError);
}

TEST(HttpProvider, ServerErrorIsTransportError) {
  testing_support::FakeServer server("/e", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  HttpEmbeddingProvider p({server.url("/e"), "m", "", 5.0}, 3);
  EXPECT_THROW(p.embed(EmbedInput::text("x")), TransportError);
}

namespace {

SearchIndex random_index(Rng& rng, std::size_t n, std::size_t dim, std::vector<std::vector<double>>& text,
                         std::vector<std::vector<double>>& image) {
  std::vector<SearchIndex::Entry> entries;
  const char* lines[] = {"hydra", "derma", "glow"};
  for (std::size_t i = 0; i < n; ++i) {
    text.push_back(random_vector(rng, dim));
    image.push_back(random_vector(rng, dim));
    char id[16];
    std::snprintf(id, sizeof id, "id%03zu", i);
    entries.push_back({id, i % 2 ? ClaimSource::Generated : ClaimSource::ClaimLog, {{"line", lines[i % 3]}},
                       vec(text.back()), vec(image.back(), Modality::Image)});
  }
  return SearchIndex::from_entries(std::move(entries));
}

}  // namespace

TEST(Search, MatchesBruteForceSortOnRandomFixtures) {
  Rng rng(2024);
  for (int fixture = 0; fixture < 50; ++fixture) {
    const std::size_t n = 1 + rng.below(40), dim = 2 + rng.below(10), k = 1 + rng.below(n + 3);
    std::vector<std::vector<double>> text, image;
    const auto index = random_index(rng, n, dim, text, image);
    const auto qt = random_vector(rng, dim), qi = random_vector(rng, dim);
    const double w = rng.uniform();
    const auto hits = index.search_top_k({vec(qt), vec(qi, Modality::Image), w}, k);

    std::vector<double> q(dim);
    for (std::size_t d = 0; d < dim; ++d) q[d] = (1 - w) * qt[d] + w * qi[d];
    std::vector<std::pair<double, std::string>> expected;
    for (std::size_t i = 0; i < n; ++i) expected.emplace_back(-cosine_ref(q, text[i]), index.entries()[i].id);
    std::sort(expected.begin(), expected.end());
    ASSERT_EQ(hits.size(), std::min(k, n));
    for (std::size_t r = 0; r < hits.size(); ++r) {
      EXPECT_EQ(hits[r].claim_id, expected[r].second) << "fixture " << fixture << " rank " << r;
      EXPECT_NEAR(hits[r].similarity, -expected[r].first, 1e-12);
    }
  }
}

TEST(Search, OwnEmbeddingComesFirstWithSimilarityOne) {
  Rng rng(77);
  std::vector<std::vector<double>> text, image;
  const auto index = random_index(rng, 30, 12, text, image);
  for (std::size_t i = 0; i < 30; ++i) {
    const auto hits = index.search_top_k({vec(text[i]), std::nullopt, 0.0}, 1);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].claim_id, index.entries()[i].id);
    EXPECT_NEAR(hits[0].similarity, 1.0, 1e-9);
    const auto img = index.search_top_k({std::nullopt, vec(image[i], Modality::Image), 1.0}, 1, {}, std::nullopt,
                                        SearchTarget::ClaimImage);
    EXPECT_EQ(img[0].claim_id, index.entries()[i].id);
  }
}

TEST(Search, TiesBreakByAscendingIdAndKSaturates) {
  std::vector<SearchIndex::Entry> entries;
  for (auto id : {"b", "c", "a"}) entries.push_back({id, ClaimSource::Manual, {}, vec({1.0, 0.0}), std::nullopt});
  const auto index = SearchIndex::from_entries(std::move(entries));
  const auto hits = index.search_top_k({vec({2.0, 0.0}), std::nullopt, 0.0}, 10);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].claim_id, "a");
  EXPECT_EQ(hits[1].claim_id, "b");
  EXPECT_EQ(hits[2].claim_id, "c");
  EXPECT_THROW(index.search_top_k({vec({1.0, 0.0}), std::nullopt, 0.0}, 0), ValidationError);
}

TEST(Search, FiltersAndSourceRestrictCandidates) {
  Rng rng(3);
  std::vector<std::vector<double>> text, image;
  const auto index = random_index(rng, 12, 4, text, image);
  const auto hits = index.search_top_k({vec(text[0]), std::nullopt, 0.0}, 12, {{"line", "glow"}}, ClaimSource::ClaimLog);
  for (const auto& h : hits) {
    const auto i = static_cast<std::size_t>(std::stoi(h.claim_id.substr(2)));
    EXPECT_EQ(i % 3, 2u);
    EXPECT_EQ(i % 2, 0u);
  }
  EXPECT_EQ(hits.size(), 2u);  // ids 2 and 8
}

TEST(Search, BuildsFromClaimsWithImageTable) {
  std::istringstream lines(R"({"claim_id":"a","vector":[1,0]})" "\n" R"({"claim_id":"b","vector":[0,1]})" "\n");
  const auto table = ImageEmbeddingTable::load(lines);
  HashEmbeddingProvider provider(2);
  std::vector<Claim> claims{{"a", "alpha", ClaimSource::Manual, {}, {}, {}, {}, {}},
                            {"b", "beta", ClaimSource::Manual, {}, {}, {}, {}, {}},
                            {"c", "gamma", ClaimSource::Manual, {}, {}, {}, {}, {}}};
  const auto index = SearchIndex::build(claims, provider, &table);
  const auto hits = index.search_top_k({std::nullopt, vec({0.1, 1.0}, Modality::Image), 1.0}, 5, {}, std::nullopt,
                                       SearchTarget::ClaimImage);
  ASSERT_EQ(hits.size(), 2u);  // "c" has no image embedding
  EXPECT_EQ(hits[0].claim_id, "b");
}

TEST(Search, ImageTableRejectsInconsistentDimensions) {
  std::istringstream lines(R"({"claim_id":"a","vector":[1,0]})" "\n" R"({"claim_id":"b","vector":[0,1,2]})" "\n");
  EXPECT_THROW(ImageEmbeddingTable::load(lines), ValidationError);
}

TEST(Search, HandleSwapsWholeIndex) {
  IndexHandle h;
  EXPECT_TRUE(h.snapshot()->empty());
  auto before = h.snapshot();
  h.replace(SearchIndex::from_entries({{"a", ClaimSource::Manual, {}, vec({1.0}), std::nullopt}}));
  EXPECT_TRUE(before->empty());
  EXPECT_EQ(h.snapshot()->size(), 1u);
}
