#include <atomic>
#include <filesystem>
#include <thread>
#include <unordered_set>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "rankstack/http_service.hpp"
#include "rankstack/platform.hpp"

using namespace rankstack;
using namespace rankstack::platform;

namespace {

synth::GeneratorConfig tiny_world(uint64_t seed = 5) {
  synth::GeneratorConfig cfg;
  cfg.num_customers = 300;
  cfg.num_items = 300;
  cfg.num_brands = 12;
  cfg.num_categories = 6;
  cfg.seed = seed;
  return cfg;
}

TwoTowerConfig tiny_retrieval_cfg() {
  TwoTowerConfig cfg;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.d_model = 16;
  cfg.encoder.max_seq_len = 23;
  cfg.d_emb = 8;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.num_threads = 2;
  return cfg;
}

RankerConfig tiny_ranker_cfg() {
  RankerConfig cfg;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.d_model = 16;
  cfg.encoder.max_seq_len = 15;
  cfg.head_hidden = 16;
  cfg.pos_hidden = 4;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.num_threads = 2;
  cfg.max_examples = 400;
  return cfg;
}

struct World {
  synth::SyntheticCorpus corpus;
  CatalogIndex catalog;
  TwoTowerModel retrieval;
  RankerModel ranker;
  EmbeddingSet embeddings;

  explicit World(uint64_t seed = 5, const std::string& version = "m1")
      : corpus(synth::generate(tiny_world(seed))),
        catalog(corpus.catalog),
        retrieval(tiny_retrieval_cfg(),
                  VocabSpec::from_catalog(catalog, 6, 4, 64), version),
        ranker(tiny_ranker_cfg(), VocabSpec::from_catalog(catalog, 6, 4, 64),
               version) {
    Rng r1(seed + 1), r2(seed + 2);
    retrieval.init(catalog, r1);
    ranker.init(catalog, r2);
    auto examples = build_retrieval_examples(corpus.events, corpus.requests);
    retrieval.train(examples, catalog);
    auto rank_examples =
        build_ranking_examples(corpus.events, corpus.requests, 4, seed);
    ranker.train(rank_examples, catalog);
    embeddings = retrieval.export_item_embeddings(catalog);
  }
};

PlatformConfig test_config() {
  PlatformConfig cfg;
  cfg.page_size = 12;
  cfg.retrieval_depth = 60;
  cfg.index_mode = ann::IndexMode::kExact;
  cfg.policy.epsilon = 0.0;  // deterministic pages in most tests
  return cfg;
}

}  // namespace

TEST_CASE("config file round-trips") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "rankstack_cfg_test";
  fs::create_directories(dir);
  auto path = (dir / "platform.conf").string();
  PlatformConfig cfg;
  cfg.page_size = 42;
  cfg.retrieval_depth = 99;
  cfg.policy.epsilon = 0.25;
  cfg.head_weights.w = {1, 5, 2, 9};
  cfg.index_params.ef_search = 77;
  cfg.catalog_path = "/data/catalog.jsonl";
  cfg.save(path);
  auto loaded = PlatformConfig::from_file(path);
  CHECK(loaded.page_size == 42);
  CHECK(loaded.retrieval_depth == 99);
  CHECK(loaded.policy.epsilon == doctest::Approx(0.25));
  CHECK(loaded.head_weights.w[3] == doctest::Approx(9));
  CHECK(loaded.index_params.ef_search == 77);
  CHECK(loaded.catalog_path == "/data/catalog.jsonl");

  std::ofstream bad(path);
  bad << "page_size 42\n";
  bad.close();
  CHECK_THROWS_AS(PlatformConfig::from_file(path), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("sequence cache: ring buffer, ordering, read-your-writes") {
  SequenceCache cache;
  SUBCASE("eviction keeps the most recent hundred") {
    for (int i = 0; i < 101; ++i)
      cache.ingest(1, {100 + i, ActionType::kClick, 1000 + i});
    auto seq = cache.snapshot(1);
    REQUIRE(seq.actions.size() == 100);
    CHECK(seq.actions.front().timestamp == 1001);  // oldest evicted
    CHECK(seq.actions.back().timestamp == 1100);
  }
  SUBCASE("unknown customers appear on first ingest") {
    CHECK(cache.snapshot(77).actions.empty());
    cache.ingest(77, {5, ActionType::kPurchase, 10});
    CHECK(cache.snapshot(77).actions.size() == 1);
  }
  SUBCASE("out-of-order arrivals are inserted in timestamp order") {
    cache.ingest(2, {1, ActionType::kClick, 100});
    cache.ingest(2, {2, ActionType::kClick, 50});
    cache.ingest(2, {3, ActionType::kClick, 75});
    auto seq = cache.snapshot(2);
    REQUIRE(seq.actions.size() == 3);
    CHECK(seq.actions[0].timestamp == 50);
    CHECK(seq.actions[1].timestamp == 75);
    CHECK(seq.actions[2].timestamp == 100);
  }
  SUBCASE("malformed actions are rejected with a reason") {
    CHECK_THROWS_AS(cache.ingest(0, {1, ActionType::kClick, 5}),
                    std::invalid_argument);
    CHECK_THROWS_AS(cache.ingest(1, {-4, ActionType::kClick, 5}),
                    std::invalid_argument);
    CHECK_THROWS_AS(cache.ingest(1, {4, ActionType::kClick, -5}),
                    std::invalid_argument);
  }
}

TEST_CASE("engine deployment and rank pipeline") {
  World world;
  Engine engine(test_config());

  SUBCASE("no deployment yields unavailable") {
    RankRequest req;
    req.customer_id = 1;
    req.category_id = 1;
    CHECK(engine.handle_rank(req).status == RankStatus::kServiceUnavailable);
  }

  auto report = engine.deploy(world.retrieval, world.ranker, world.embeddings,
                              world.catalog);
  CHECK(report.previous_version.empty());
  CHECK(report.new_version == "m1");

  SUBCASE("version mismatch between embeddings and tower is rejected") {
    auto bad = world.embeddings;
    bad.model_version = "other";
    CHECK_THROWS_AS(
        engine.deploy(world.retrieval, world.ranker, bad, world.catalog),
        std::invalid_argument);
  }
  SUBCASE("redeploying the active version is rejected") {
    CHECK_THROWS_AS(engine.deploy(world.retrieval, world.ranker,
                                  world.embeddings, world.catalog),
                    std::invalid_argument);
  }

  SUBCASE("cold start returns a full page, deterministic under epsilon zero") {
    RankRequest req;
    req.customer_id = 999999;  // never seen
    req.global = {1, 1};
    req.category_id = 1;
    req.now = 1'700'000'000;
    auto a = engine.handle_rank(req);
    REQUIRE(a.status == RankStatus::kOk);
    CHECK(a.model_version == "m1");
    CHECK(a.items.size() == 12);
    auto b = engine.handle_rank(req);
    REQUIRE(b.items.size() == a.items.size());
    for (size_t i = 0; i < a.items.size(); ++i) {
      CHECK(a.items[i].item_id == b.items[i].item_id);
      CHECK(a.items[i].blended_score == b.items[i].blended_score);
    }
    std::unordered_set<ItemId> seen;
    for (const auto& s : a.items) CHECK(seen.insert(s.item_id).second);
  }

  SUBCASE("unknown category gives an explanatory empty page") {
    RankRequest req;
    req.customer_id = 1;
    req.category_id = 4242;
    auto resp = engine.handle_rank(req);
    CHECK(resp.status == RankStatus::kUnknownCategory);
    CHECK(resp.items.empty());
  }

  SUBCASE("pagination slices the composed list") {
    RankRequest req;
    req.customer_id = 5;
    req.global = {1, 1};
    req.category_id = 1;
    req.now = 1'700'000'000;
    req.page_size = 7;
    auto page0 = engine.handle_rank(req);
    req.page_index = 1;
    auto page1 = engine.handle_rank(req);
    REQUIRE(page0.items.size() == 7);
    REQUIRE(!page1.items.empty());
    // page 1 continues exactly where page 0 ended
    req.page_index = 0;
    req.page_size = 14;
    auto both = engine.handle_rank(req);
    REQUIRE(both.items.size() >= page0.items.size() + 1);
    for (size_t i = 0; i < 7; ++i)
      CHECK(both.items[i].item_id == page0.items[i].item_id);
    CHECK(both.items[7].item_id == page1.items[0].item_id);
  }

  SUBCASE("ingested events are visible to the next rank request") {
    RankRequest req;
    req.customer_id = 31;
    req.global = {1, 1};
    req.category_id = 1;
    req.now = 1'700'000'000;
    auto before = engine.handle_rank(req);
    // a purchase within the window must be down-ranked afterwards
    REQUIRE(before.items.size() > 2);
    ItemId top = before.items[0].item_id;
    engine.ingest_event(31, {top, ActionType::kPurchase,
                             *req.now - 24 * 3600});
    auto after = engine.handle_rank(req);
    REQUIRE(!after.items.empty());
    CHECK(after.items[0].item_id != top);
    bool still_there = false;
    for (const auto& s : after.items) still_there |= s.item_id == top;
    (void)still_there;  // may have moved beyond the first page entirely
  }
}

TEST_CASE("blue-green deployment keeps responses internally consistent") {
  World blue(5, "blue");
  World green(6, "green");
  Engine engine(test_config());
  engine.deploy(blue.retrieval, blue.ranker, blue.embeddings, blue.catalog);

  std::atomic<bool> stop{false};
  std::atomic<int> inconsistent{0};
  std::atomic<int> failures{0};
  std::thread requester([&]() {
    RankRequest req;
    req.global = {1, 1};
    req.category_id = 1;
    req.now = 1'700'000'000;
    int customer = 0;
    while (!stop) {
      req.customer_id = 1 + (customer++ % 50);
      auto resp = engine.handle_rank(req);
      if (resp.status != RankStatus::kOk) failures++;
      if (resp.model_version != "blue" && resp.model_version != "green")
        inconsistent++;
    }
  });
  for (int i = 0; i < 3; ++i) {
    auto& world = (i % 2 == 0) ? green : blue;
    try {
      engine.deploy(world.retrieval, world.ranker, world.embeddings,
                    world.catalog);
    } catch (const std::invalid_argument&) {
      // same-version redeploys rejected, old version keeps serving
    }
  }
  stop = true;
  requester.join();
  CHECK(inconsistent == 0);
  CHECK(failures == 0);
}

TEST_CASE("http endpoints") {
  World world;
  Engine engine(test_config());
  engine.deploy(world.retrieval, world.ranker, world.embeddings, world.catalog);
  HttpService service(engine);
  int port = service.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto version = client.Get("/v1/version");
  REQUIRE(version);
  auto vj = nlohmann::json::parse(version->body);
  CHECK(vj["model_version"] == "m1");

  nlohmann::json ev;
  ev["customer_id"] = 12;
  ev["item_id"] = world.catalog.items().front().item_id;
  ev["action_type"] = "click";
  ev["timestamp"] = 1'700'000'000;
  auto posted = client.Post("/v1/events", ev.dump(), "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 200);

  nlohmann::json bad_ev = ev;
  bad_ev["action_type"] = "view";
  auto rejected = client.Post("/v1/events", bad_ev.dump(), "application/json");
  REQUIRE(rejected);
  CHECK(rejected->status == 400);

  nlohmann::json rank;
  rank["customer_id"] = 12;
  rank["country_id"] = 1;
  rank["device_type_id"] = 1;
  rank["premise"] = "browse";
  rank["category_id"] = 1;
  rank["now"] = 1'700'000'000;
  auto ranked = client.Post("/v1/rank", rank.dump(), "application/json");
  REQUIRE(ranked);
  CHECK(ranked->status == 200);
  auto rj = nlohmann::json::parse(ranked->body);
  CHECK(rj["status"] == "ok");
  CHECK(rj["model_version"] == "m1");
  CHECK(rj["items"].size() == 12);

  rank["category_id"] = 4242;
  auto unknown = client.Post("/v1/rank", rank.dump(), "application/json");
  REQUIRE(unknown);
  auto uj = nlohmann::json::parse(unknown->body);
  CHECK(uj["status"] == "unknown_category");
  service.stop();
}

TEST_CASE("offline systems run through the protocol") {
  World world;
  Timestamp split = synth::GeneratorConfig{}.start_time + 60LL * 24 * 3600;
  auto sp = eval::temporal_split(world.corpus.events, world.corpus.requests,
                                 split);
  auto evals = eval::build_eval_requests(world.corpus.events, sp.test_requests);
  evals.resize(std::min<size_t>(evals.size(), 150));
  eval::PopularityTable pop(sp.train_events, split, 0);
  PlatformConfig cfg = test_config();
  auto bundle = build_systems(&world.retrieval, &world.ranker, world.catalog,
                              &pop, cfg, &world.corpus.truth, 60);
  REQUIRE(bundle.systems.count("popularity"));
  REQUIRE(bundle.systems.count("retrieval"));
  REQUIRE(bundle.systems.count("full"));
  REQUIRE(bundle.systems.count("oracle"));

  eval::ProtocolConfig pcfg;
  pcfg.ks = {6, 20};
  pcfg.num_threads = 2;
  auto scope = make_scope_provider(world.catalog);
  auto brand_of = [&world](ItemId id) {
    const Item* item = world.catalog.find(id);
    return item ? item->brand_id : kUnknownCode;
  };
  auto activation = [&world](ItemId id) {
    const Item* item = world.catalog.find(id);
    return item ? item->activation_time : Timestamp{0};
  };
  auto reports =
      eval::run_protocol(bundle.systems, evals, scope, brand_of, activation, pcfg);
  REQUIRE(reports.size() == 4);
  for (const auto& [name, rep] : reports) {
    CHECK(rep.requests_evaluated > 0);
    CHECK(rep.ndcg.at(6) >= 0.0);
    CHECK(rep.ndcg.at(6) <= 1.0);
  }
  // oracle dominates the popularity baseline even at tiny scale
  CHECK(reports.at("oracle").ndcg.at(20) >
        reports.at("popularity").ndcg.at(20));
  // identical rerun gives identical means (ordered reduction)
  auto reports2 =
      eval::run_protocol(bundle.systems, evals, scope, brand_of, activation, pcfg);
  CHECK(reports2.at("full").ndcg.at(6) == reports.at("full").ndcg.at(6));
}
