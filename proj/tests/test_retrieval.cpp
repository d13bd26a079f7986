#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "rankstack/polyfit.hpp"
#include "rankstack/retrieval.hpp"

using namespace rankstack;
using nn::Tape;
using nn::Tensor;
using nn::Value;

TEST_CASE("log-uniform distribution shape") {
  // normalization telescopes to log(num_classes + 1)
  double total = 0;
  for (int i = 0; i < 4; ++i) total += log_uniform_prob(i, 4);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(log_uniform_prob(0, 4) ==
        doctest::Approx(std::log(2.0) / std::log(5.0)).epsilon(1e-12));
  CHECK(negative_sample_count(10000) == 42);
  CHECK(negative_sample_count(2000) == 9);
  CHECK(negative_sample_count(10) == 1);
}

TEST_CASE("log_uniform_sample honors exclusions and feasibility") {
  Rng rng(3);
  SUBCASE("forced single remaining class") {
    std::unordered_set<int> exclude = {0, 1, 3};
    auto got = log_uniform_sample(4, 1, exclude, rng);
    REQUIRE(got.size() == 1);
    CHECK(got[0] == 2);
  }
  SUBCASE("without replacement, none excluded appear") {
    std::unordered_set<int> exclude = {5, 17};
    auto got = log_uniform_sample(100, 40, exclude, rng);
    REQUIRE(got.size() == 40);
    std::unordered_set<int> seen;
    for (int r : got) {
      CHECK(exclude.count(r) == 0);
      CHECK(seen.insert(r).second);  // no duplicates
      CHECK(r >= 0);
      CHECK(r < 100);
    }
  }
  SUBCASE("infeasible request throws") {
    std::unordered_set<int> exclude = {0, 1};
    CHECK_THROWS_AS(log_uniform_sample(4, 3, exclude, rng),
                    std::invalid_argument);
  }
}

TEST_CASE("sampler empirical distribution matches analytic") {
  SUBCASE("num_classes=4, 100k draws pins P(rank 0)") {
    Rng rng(12345);
    int hits = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
      auto got = log_uniform_sample(4, 1, {}, rng);
      if (got[0] == 0) ++hits;
    }
    double p0 = static_cast<double>(hits) / draws;
    CHECK(std::abs(p0 - std::log(2.0) / std::log(5.0)) < 0.01);
  }
  SUBCASE("total variation over 100k draws below 0.01") {
    const int num_classes = 64;
    Rng rng(999);
    std::vector<int> counts(num_classes, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i)
      counts[static_cast<size_t>(log_uniform_sample(num_classes, 1, {}, rng)[0])]++;
    double tv = 0;
    for (int c = 0; c < num_classes; ++c)
      tv += std::abs(static_cast<double>(counts[static_cast<size_t>(c)]) / draws -
                     log_uniform_prob(c, num_classes));
    tv *= 0.5;
    CHECK(tv < 0.01);
  }
}

TEST_CASE("sampled softmax loss values") {
  SUBCASE("one negative with equal corrected logits gives ln 2") {
    Tape t;
    Value u = t.input(Tensor::row_vector({1.0, 0.0}));
    Tensor rows({2, 2}, {0.5, 0.0, 0.5, 0.0});  // equal dot products
    std::vector<double> probs = {0.25, 0.25};   // equal correction
    Value loss = sampled_softmax_loss(t, u, t.input(rows), probs, true);
    CHECK(t.val(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("dominant positive logit drives loss to zero") {
    Tape t;
    Value u = t.input(Tensor::row_vector({40.0}));
    Tensor rows({3, 1}, {1.0, 0.0, -1.0});
    std::vector<double> probs = {0.3, 0.4, 0.3};
    Value loss = sampled_softmax_loss(t, u, t.input(rows), probs, false);
    CHECK(t.val(loss)[0] < 1e-12);
  }
  SUBCASE("three classes match a hand-computed corrected softmax") {
    Tape t;
    Value u = t.input(Tensor::row_vector({1.0, 2.0}));
    Tensor rows({3, 2}, {0.5, 0.25,   // logit 1.0
                         -0.5, 0.5,   // logit 0.5
                         1.0, -1.0}); // logit -1.0
    std::vector<double> probs = {0.2, 0.5, 0.3};
    Value loss = sampled_softmax_loss(t, u, t.input(rows), probs, true);
    double l0 = 1.0 - std::log(0.2), l1 = 0.5 - std::log(0.5),
           l2 = -1.0 - std::log(0.3);
    double z = std::exp(l0) + std::exp(l1) + std::exp(l2);
    double expected = -std::log(std::exp(l0) / z);
    CHECK(t.val(loss)[0] == doctest::Approx(expected).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Item> tiny_catalog(int n, int d_pre, Rng& rng) {
  std::vector<Item> items;
  for (int i = 0; i < n; ++i) {
    Item it;
    it.item_id = 1000 + i;
    it.brand_id = 1 + static_cast<int32_t>(rng.uniform_index(3));
    it.category_id = 1 + static_cast<int32_t>(rng.uniform_index(2));
    it.color_id = 1;
    it.material_id = 1;
    it.pattern_id = 1;
    for (int j = 0; j < d_pre; ++j) it.visual_vector.push_back(rng.normal());
    it.popularity_rank = i;
    it.activation_time = 0;
    items.push_back(it);
  }
  return items;
}

TwoTowerConfig tiny_two_tower_config(uint64_t seed, int epochs = 10,
                                     double lr = 0.01) {
  TwoTowerConfig cfg;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.d_model = 16;
  cfg.encoder.max_seq_len = 19;
  cfg.d_emb = 8;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.batch_size = 16;
  cfg.num_threads = 2;
  cfg.seed = seed;
  return cfg;
}

// customers that always click item A then item B
std::vector<RetrievalExample> transition_dataset(ItemId a, ItemId b, int n) {
  std::vector<RetrievalExample> out;
  for (int i = 0; i < n; ++i) {
    RetrievalExample ex;
    ex.customer_id = i + 1;
    ex.global = {1, 1};
    ex.history = {{a, ActionType::kClick, 100}};
    ex.targets = {{b, ActionType::kClick, 200}};
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST_CASE("training learns a deterministic transition") {
  Rng rng(7);
  CatalogIndex catalog(tiny_catalog(3, 4, rng));
  auto cfg = tiny_two_tower_config(11, 40, 0.02);
  TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 4, 4, 2), "v1");
  Rng init_rng(13);
  model.init(catalog, init_rng);
  auto examples = transition_dataset(1000, 1001, 32);
  auto report = model.train(examples, catalog);
  REQUIRE(static_cast<int>(report.epoch_losses.size()) == cfg.epochs);
  CHECK(report.epoch_losses.back() < report.epoch_losses.front());

  CustomerSequence seq;
  seq.customer_id = 99;
  seq.actions = {{1000, ActionType::kClick, 100}};
  auto scores = model.score_catalog(seq, {1, 1}, {}, catalog);
  // item 1001 (dense row 1) must outrank the alternatives
  int argmax = 0;
  for (int i = 1; i < 3; ++i)
    if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(argmax)])
      argmax = i;
  CHECK(catalog.by_dense(argmax + 1).item_id == 1001);
}

TEST_CASE("fixed seed reproduces the loss curve exactly") {
  Rng rng(17);
  CatalogIndex catalog(tiny_catalog(5, 4, rng));
  auto examples = transition_dataset(1000, 1002, 20);
  auto run = [&]() {
    auto cfg = tiny_two_tower_config(5, 2);
    TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 4, 4, 2), "v1");
    Rng init_rng(21);
    model.init(catalog, init_rng);
    return model.train(examples, catalog).epoch_losses;
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("frozen item tower trains only the customer tower") {
  Rng rng(19);
  CatalogIndex catalog(tiny_catalog(4, 4, rng));
  auto cfg = tiny_two_tower_config(23, 3);
  cfg.trainable_item_tower = false;
  cfg.popularity_logit_bias = true;
  TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 4, 4, 2), "vfrozen");
  Rng init_rng(29);
  model.init(catalog, init_rng);
  Tensor before = model.store().value("item/emb");
  Tensor cust_before = model.store().value("cust/out/w");
  auto examples = transition_dataset(1000, 1001, 16);
  model.train(examples, catalog);
  const Tensor& after = model.store().value("item/emb");
  for (size_t i = 0; i < after.numel(); ++i) CHECK(after[i] == before[i]);
  const Tensor& cust_after = model.store().value("cust/out/w");
  bool moved = false;
  for (size_t i = 0; i < cust_after.numel(); ++i)
    moved = moved || cust_after[i] != cust_before[i];
  CHECK(moved);
}

TEST_CASE("embed_customer handles cold start and reacts to local context") {
  Rng rng(31);
  CatalogIndex catalog(tiny_catalog(6, 4, rng));
  auto cfg = tiny_two_tower_config(37, 1);
  TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 4, 4, 2), "v1");
  Rng init_rng(41);
  model.init(catalog, init_rng);

  CustomerSequence empty;
  Tensor cold = model.embed_customer(empty, {1, 1}, {}, catalog);
  REQUIRE(cold.numel() == 8);
  for (size_t i = 0; i < cold.numel(); ++i) CHECK(std::isfinite(cold[i]));

  CustomerSequence seq;
  seq.actions = {{1000, ActionType::kClick, 50}};
  LocalContext browse_a, browse_b;
  browse_a.browse_category_id = 1;
  browse_b.browse_category_id = 2;
  Tensor ua = model.embed_customer(seq, {1, 1}, browse_a, catalog);
  Tensor ub = model.embed_customer(seq, {1, 1}, browse_b, catalog);
  Tensor ua2 = model.embed_customer(seq, {1, 1}, browse_a, catalog);
  bool differ = false;
  for (size_t i = 0; i < ua.numel(); ++i) {
    differ = differ || ua[i] != ub[i];
    CHECK(ua[i] == ua2[i]);
  }
  CHECK(differ);

  SUBCASE("context-free variant ignores local context") {
    auto cfg2 = tiny_two_tower_config(37, 1);
    cfg2.use_local_context = false;
    TwoTowerModel blind(cfg2, VocabSpec::from_catalog(catalog, 4, 4, 2), "v2");
    Rng r2(41);
    blind.init(catalog, r2);
    Tensor x = blind.embed_customer(seq, {1, 1}, browse_a, catalog);
    Tensor y = blind.embed_customer(seq, {1, 1}, browse_b, catalog);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(x[i] == y[i]);
  }
}

TEST_CASE("embedding export is complete, stable, and append-only") {
  namespace fs = std::filesystem;
  Rng rng(43);
  auto items = tiny_catalog(5, 4, rng);
  CatalogIndex catalog(items);
  auto cfg = tiny_two_tower_config(47, 1);
  TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 4, 4, 2), "v7");
  Rng init_rng(53);
  model.init(catalog, init_rng);

  auto set = model.export_item_embeddings(catalog);
  CHECK(set.model_version == "v7");
  CHECK(set.count() == 5);
  CHECK(set.d_emb == 8);

  auto dir = fs::temp_directory_path() / "rankstack_rke_test";
  fs::create_directories(dir);
  auto p1 = (dir / "a.rke").string(), p2 = (dir / "b.rke").string();
  set.save(p1);
  model.export_item_embeddings(catalog).save(p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), {});
  std::string c2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(c1 == c2);
  CHECK(c1.substr(0, 4) == "RKE1");

  auto loaded = EmbeddingSet::load(p1);
  CHECK(loaded.model_version == "v7");
  REQUIRE(loaded.count() == set.count());
  for (size_t i = 0; i < set.data.size(); ++i) CHECK(loaded.data[i] == set.data[i]);

  // add one item to the catalog: one more row, existing rows unchanged
  Item extra;
  extra.item_id = 2000;
  extra.brand_id = 1;
  extra.category_id = 1;
  extra.color_id = 1;
  extra.material_id = 1;
  extra.pattern_id = 1;
  extra.visual_vector = {0.1, -0.2, 0.3, 0.4};
  extra.popularity_rank = 5;
  auto items2 = items;
  items2.push_back(extra);
  CatalogIndex catalog2(items2);
  auto set2 = model.export_item_embeddings(catalog2);
  CHECK(set2.count() == 6);
  for (size_t i = 0; i < set.count(); ++i) {
    CHECK(set2.ids[i] == set.ids[i]);
    for (int j = 0; j < set.d_emb; ++j)
      CHECK(set2.row(i)[j] == set.row(i)[j]);
  }
  fs::remove_all(dir);
}

TEST_CASE("model save/load round-trips scoring behavior") {
  namespace fs = std::filesystem;
  Rng rng(61);
  CatalogIndex catalog(tiny_catalog(4, 4, rng));
  auto cfg = tiny_two_tower_config(67, 2);
  TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 4, 4, 2), "v3");
  Rng init_rng(71);
  model.init(catalog, init_rng);
  model.train(transition_dataset(1000, 1001, 12), catalog);

  auto dir = fs::temp_directory_path() / "rankstack_model_test";
  fs::create_directories(dir);
  auto ckpt = (dir / "m.rkf").string(), meta = (dir / "m.json").string();
  model.save(ckpt, meta);
  auto loaded = TwoTowerModel::load(ckpt, meta);
  CHECK(loaded.version() == "v3");
  CHECK(loaded.train_origin() == model.train_origin());

  CustomerSequence seq;
  seq.actions = {{1000, ActionType::kClick, 100}};
  auto s1 = model.score_catalog(seq, {1, 1}, {}, catalog);
  auto s2 = loaded.score_catalog(seq, {1, 1}, {}, catalog);
  REQUIRE(s1.size() == s2.size());
  // checkpoint rounds through f32; scores agree to that precision
  for (size_t i = 0; i < s1.size(); ++i)
    CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-4));
  fs::remove_all(dir);
}

TEST_CASE("build_retrieval_examples splits history and session targets") {
  std::vector<Event> events = {
      {1, {10, ActionType::kClick, 100}},
      {1, {11, ActionType::kClick, 200}},
      {1, {12, ActionType::kPurchase, 350}},
  };
  RequestRecord req;
  req.customer_id = 1;
  req.timestamp = 300;
  req.global = {2, 1};
  req.local.browse_category_id = 5;
  PageImpression hit;
  hit.item_id = 12;
  hit.position = 0;
  hit.labels = {1, 0, 0, 1};
  PageImpression miss;
  miss.item_id = 13;
  miss.position = 1;
  auto req2 = req;
  req.page = {hit, miss};
  auto examples = build_retrieval_examples(events, {req, req2});
  REQUIRE(examples.size() == 1);  // req2 has no positives
  const auto& ex = examples[0];
  CHECK(ex.history.size() == 2);  // only pre-request actions
  CHECK(ex.history[1].item_id == 11);
  REQUIRE(ex.targets.size() == 1);
  CHECK(ex.targets[0].item_id == 12);
  CHECK(ex.targets[0].action_type == ActionType::kPurchase);  // strongest label
  CHECK(*ex.local.browse_category_id == 5);
}

TEST_CASE("retrieval loss gradients match finite differences") {
  Rng rng(73);
  CatalogIndex catalog(tiny_catalog(6, 4, rng));
  auto cfg = tiny_two_tower_config(79, 1);
  TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 4, 4, 2), "v1");
  Rng init_rng(83);
  model.init(catalog, init_rng);
  RetrievalExample ex;
  ex.customer_id = 1;
  ex.global = {1, 1};
  ex.local.browse_category_id = 1;
  ex.history = {{1000, ActionType::kClick, 10},
                {1002, ActionType::kAddToCart, 40}};
  ex.targets = {{1001, ActionType::kClick, 60},
                {1003, ActionType::kClick, 80}};
  auto build = [&](Tape& t, nn::ParameterStore& s) {
    Rng fixed(123);
    return model.build_example_loss(t, s, ex, catalog, fixed);
  };
  CHECK(nn::grad_check(build, model.store(), 1e-5, 3, 5) < 1e-4);
}

// --- expressiveness demo -------------------------------------------------------

TEST_CASE("polynomial two-tower fit reproduces exact polynomials") {
  auto bilinear = [](double c, double a) { return c * a; };
  auto fit1 = polynomial_two_tower_fit(bilinear, 1);
  CHECK(fit1.max_abs_error <= 1e-10);

  auto square = [](double c, double a) { return (c + a) * (c + a); };
  auto fit2 = polynomial_two_tower_fit(square, 2);
  CHECK(fit2.max_abs_error <= 1e-8);

  // score really is an inner product of the two feature maps
  auto phi = fit2.phi(0.3);
  auto psi = fit2.psi(0.7);
  double dot = 0;
  for (size_t i = 0; i < phi.size(); ++i) dot += phi[i] * psi[i];
  CHECK(dot == doctest::Approx(fit2.predict(0.3, 0.7)).epsilon(1e-12));
}

TEST_CASE("fit error decreases with degree for a smooth target") {
  auto target = [](double c, double a) {
    return std::sin(std::numbers::pi * c) * std::cos(std::numbers::pi * a);
  };
  auto e1 = polynomial_two_tower_fit(target, 1).max_abs_error;
  auto e2 = polynomial_two_tower_fit(target, 2).max_abs_error;
  auto e4 = polynomial_two_tower_fit(target, 4).max_abs_error;
  auto e6 = polynomial_two_tower_fit(target, 6).max_abs_error;
  CHECK(e2 < e1);
  CHECK(e4 < e2);
  CHECK(e6 < e4);
  CHECK(e6 < 1e-2);
}

TEST_CASE("degenerate grid falls back to a regularized solve") {
  auto constant = [](double, double) { return 2.5; };
  auto fit = polynomial_two_tower_fit(constant, 0, 3);
  CHECK(fit.max_abs_error <= 1e-10);
}
