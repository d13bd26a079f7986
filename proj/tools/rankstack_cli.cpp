#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

#include "CLI11.hpp"
#include "json.hpp"
#include "rankstack/http_service.hpp"
#include "rankstack/platform.hpp"
#include "rankstack/polyfit.hpp"

using namespace rankstack;
namespace fs = std::filesystem;

namespace {

struct Paths {
  std::string data_dir = "data";
  std::string catalog() const { return data_dir + "/catalog.jsonl"; }
  std::string events() const { return data_dir + "/events.jsonl"; }
  std::string requests() const { return data_dir + "/requests.jsonl"; }
  std::string truth() const { return data_dir + "/ground_truth.rkt"; }
};

Timestamp split_time(const synth::GeneratorConfig& gen, int split_days) {
  return gen.start_time + static_cast<Timestamp>(split_days) * 24 * 3600;
}

int cmd_generate(const synth::GeneratorConfig& cfg, const std::string& out_dir,
                 bool json_out) {
  fs::create_directories(out_dir);
  auto corpus = synth::generate(cfg);
  synth::write_corpus(corpus, synth::corpus_paths(out_dir));
  auto stats = synth::corpus_stats(corpus.events);
  if (json_out) {
    nlohmann::json j;
    j["customers"] = stats.num_customers;
    j["events"] = stats.num_events;
    j["requests"] = corpus.requests.size();
    j["mean_sequence_length"] = stats.mean_sequence_length;
    j["action_counts"] = {{"click", stats.type_counts[0]},
                          {"a2w", stats.type_counts[1]},
                          {"a2c", stats.type_counts[2]},
                          {"cc", stats.type_counts[3]}};
    j["power_law_slope"] = stats.fitted_power_exponent;
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("wrote corpus to %s\n", out_dir.c_str());
    std::printf("customers: %zu   events: %zu   requests: %zu\n",
                stats.num_customers, stats.num_events, corpus.requests.size());
    std::printf("mean sequence length: %.2f\n", stats.mean_sequence_length);
    std::printf("action histogram (log-scaled volumes):\n");
    const char* names[] = {"click", "a2w  ", "a2c  ", "cc   "};
    for (int t = 0; t < kNumActionTypes; ++t) {
      int64_t count = stats.type_counts[static_cast<size_t>(t)];
      int bars = count > 0 ? static_cast<int>(4.0 * std::log10(
                                 static_cast<double>(count)))
                           : 0;
      std::printf("  %s %10lld ", names[t], static_cast<long long>(count));
      for (int b = 0; b < bars; ++b) std::printf("#");
      std::printf("\n");
    }
    std::printf("popularity power-law slope: %.3f (configured %.2f)\n",
                stats.fitted_power_exponent, cfg.popularity_exponent);
  }
  return 0;
}

int cmd_train_retrieval(const Paths& paths, TwoTowerConfig cfg,
                        const std::string& out_prefix,
                        const std::string& version, int split_days,
                        bool json_out) {
  auto catalog_items = load_catalog_jsonl(paths.catalog());
  CatalogIndex catalog(catalog_items);
  auto events = load_events_jsonl(paths.events());
  auto requests = load_requests_jsonl(paths.requests());
  synth::GeneratorConfig gen;
  auto sp = eval::temporal_split(events, requests, split_time(gen, split_days));
  if (sp.train_requests.empty()) {
    std::fprintf(stderr, "no training requests before the split\n");
    return 1;
  }
  auto examples = build_retrieval_examples(sp.train_events, sp.train_requests);
  int queries = 1;
  for (const auto& r : requests)
    if (r.local.search_query_id)
      queries = std::max(queries, *r.local.search_query_id + 1);
  TwoTowerModel model(cfg, VocabSpec::from_catalog(catalog, 8, 8, queries),
                      version);
  Rng rng(cfg.seed);
  model.init(catalog, rng);
  auto t0 = std::chrono::steady_clock::now();
  auto report = model.train(examples, catalog, [&](int epoch, double loss) {
    if (!json_out) std::printf("epoch %2d  loss %.4f\n", epoch, loss);
  });
  auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            t0)
                  .count();
  fs::create_directories(fs::path(out_prefix).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(out_prefix).parent_path());
  model.save(out_prefix + ".rkf", out_prefix + ".json");
  model.export_item_embeddings(catalog).save(out_prefix + ".rke");
  if (json_out) {
    nlohmann::json j;
    j["version"] = version;
    j["epochs"] = report.epoch_losses.size();
    j["final_loss"] = report.epoch_losses.back();
    j["train_seconds"] = secs;
    j["checkpoint"] = out_prefix + ".rkf";
    j["embeddings"] = out_prefix + ".rke";
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("trained %s in %.1fs, final loss %.4f\n", version.c_str(), secs,
                report.epoch_losses.back());
    std::printf("wrote %s.rkf / .json / .rke\n", out_prefix.c_str());
  }
  return 0;
}

int cmd_train_ranker(const Paths& paths, RankerConfig cfg,
                     const std::string& out_prefix, const std::string& version,
                     int split_days, bool json_out) {
  CatalogIndex catalog(load_catalog_jsonl(paths.catalog()));
  auto events = load_events_jsonl(paths.events());
  auto requests = load_requests_jsonl(paths.requests());
  synth::GeneratorConfig gen;
  auto sp = eval::temporal_split(events, requests, split_time(gen, split_days));
  auto examples =
      build_ranking_examples(sp.train_events, sp.train_requests,
                             cfg.neg_ratio, cfg.seed);
  if (examples.empty()) {
    std::fprintf(stderr, "no pages with positives before the split\n");
    return 1;
  }
  int queries = 1;
  for (const auto& r : requests)
    if (r.local.search_query_id)
      queries = std::max(queries, *r.local.search_query_id + 1);
  RankerModel model(cfg, VocabSpec::from_catalog(catalog, 8, 8, queries),
                    version);
  Rng rng(cfg.seed + 1);
  model.init(catalog, rng);
  auto t0 = std::chrono::steady_clock::now();
  auto report = model.train(examples, catalog, [&](int epoch, double loss) {
    if (!json_out) std::printf("epoch %2d  loss %.4f\n", epoch, loss);
  });
  auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            t0)
                  .count();
  model.save(out_prefix + ".rkf", out_prefix + ".json");
  if (json_out) {
    nlohmann::json j;
    j["version"] = version;
    j["final_loss"] = report.epoch_losses.back();
    j["train_seconds"] = secs;
    j["checkpoint"] = out_prefix + ".rkf";
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("trained %s in %.1fs, final loss %.4f\n", version.c_str(), secs,
                report.epoch_losses.back());
  }
  return 0;
}

int cmd_build_index(const std::string& embeddings_path,
                    const std::string& catalog_path, const std::string& out,
                    const std::string& mode, ann::HnswParams params,
                    bool json_out) {
  auto set = EmbeddingSet::load(embeddings_path);
  std::unordered_map<ItemId, int32_t> categories;
  if (!catalog_path.empty()) {
    for (const auto& item : load_catalog_jsonl(catalog_path))
      categories[item.item_id] = item.category_id;
  }
  auto index = ann::EmbeddingIndexVersion::build(
      set,
      mode == "exact" ? ann::IndexMode::kExact : ann::IndexMode::kApproximate,
      params, categories);
  if (index->mode() == ann::IndexMode::kApproximate) index->save_graph(out);
  if (json_out) {
    nlohmann::json j;
    j["model_version"] = index->model_version();
    j["items"] = index->size();
    j["mode"] = mode;
    if (index->mode() == ann::IndexMode::kApproximate) j["graph"] = out;
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("indexed %zu items (version %s, %s mode)\n", index->size(),
                index->model_version().c_str(), mode.c_str());
    if (index->mode() == ann::IndexMode::kApproximate)
      std::printf("graph written to %s\n", out.c_str());
  }
  return 0;
}

int cmd_evaluate(const Paths& paths, const std::string& retrieval_prefix,
                 const std::string& ranker_prefix,
                 const std::string& systems_csv, std::vector<int> ks,
                 int depth, int split_days, const std::string& report_path,
                 bool json_out) {
  CatalogIndex catalog(load_catalog_jsonl(paths.catalog()));
  auto events = load_events_jsonl(paths.events());
  auto requests = load_requests_jsonl(paths.requests());
  synth::GeneratorConfig gen;
  Timestamp split = split_time(gen, split_days);
  auto sp = eval::temporal_split(events, requests, split);
  if (sp.test_requests.empty()) {
    std::fprintf(stderr, "warning: empty test side after the split\n");
  }
  auto evals = eval::build_eval_requests(events, sp.test_requests);
  eval::PopularityTable popularity(sp.train_events, split, 0);

  std::optional<TwoTowerModel> retrieval;
  std::optional<RankerModel> ranker;
  if (!retrieval_prefix.empty())
    retrieval = TwoTowerModel::load(retrieval_prefix + ".rkf",
                                    retrieval_prefix + ".json");
  if (!ranker_prefix.empty())
    ranker = RankerModel::load(ranker_prefix + ".rkf", ranker_prefix + ".json");
  std::optional<synth::GroundTruth> truth;
  if (systems_csv.find("oracle") != std::string::npos &&
      fs::exists(paths.truth()))
    truth = synth::GroundTruth::load(paths.truth());

  platform::PlatformConfig cfg;
  cfg.retrieval_depth = depth;
  auto bundle = platform::build_systems(
      retrieval ? &*retrieval : nullptr, ranker ? &*ranker : nullptr, catalog,
      &popularity, cfg, truth ? &*truth : nullptr, depth);

  std::map<std::string, eval::System> selected;
  std::stringstream ss(systems_csv);
  std::string name;
  while (std::getline(ss, name, ',')) {
    auto it = bundle.systems.find(name);
    if (it == bundle.systems.end()) {
      std::fprintf(stderr, "unknown or unavailable system '%s'\n",
                   name.c_str());
      return 1;
    }
    selected.emplace(it->first, it->second);
  }

  eval::ProtocolConfig pcfg;
  pcfg.ks = ks;
  pcfg.depth = depth;
  auto scope = platform::make_scope_provider(catalog);
  auto brand_of = [&catalog](ItemId id) {
    const Item* item = catalog.find(id);
    return item ? item->brand_id : kUnknownCode;
  };
  auto activation = [&catalog](ItemId id) {
    const Item* item = catalog.find(id);
    return item ? item->activation_time : Timestamp{0};
  };
  auto reports =
      eval::run_protocol(selected, evals, scope, brand_of, activation, pcfg);
  std::string jsonl = eval::report_jsonl(reports);
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    out << jsonl;
  }
  if (json_out)
    std::cout << jsonl;
  else
    std::cout << eval::report_table(reports, ks);
  // paired significance between the first two selected systems
  if (selected.size() >= 2 && !json_out) {
    auto first = reports.begin();
    auto second = std::next(first);
    if (first->second.per_request_ndcg.size() ==
            second->second.per_request_ndcg.size() &&
        first->second.per_request_ndcg.size() >= 2) {
      auto t = eval::paired_t_test(first->second.per_request_ndcg,
                                   second->second.per_request_ndcg);
      std::printf("paired t-test (%s vs %s, ndcg@%d): t=%.3f p=%.4g\n",
                  first->first.c_str(), second->first.c_str(), ks.front(), t.t,
                  t.p);
    }
  }
  return 0;
}

int cmd_serve(const std::string& config_path, const std::string& host,
              int port, const std::string& warm_events) {
  auto cfg = platform::PlatformConfig::from_file(config_path);
  platform::Engine engine(cfg);
  if (!warm_events.empty()) engine.cache().warm(load_events_jsonl(warm_events));
  auto report = engine.deploy_from_paths();
  std::printf("deployed version %s\n", report.new_version.c_str());
  platform::HttpService service(engine);
  int bound = service.start(host, port);
  std::printf("serving on %s:%d\n", host.c_str(), bound);
  std::printf("endpoints: POST /v1/rank, POST /v1/events, GET /v1/version, GET /health\n");
  // serve until interrupted
  while (true) std::this_thread::sleep_for(std::chrono::seconds(3600));
  return 0;
}

int cmd_gradcheck(bool json_out) {
  Rng rng(2718);
  auto safe_random = [&rng](std::vector<int> shape) {
    nn::Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) {
      double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      t[i] = sign * rng.uniform(0.05, 1.0);
    }
    return t;
  };
  double worst = 0;
  std::map<std::string, double> errors;

  auto check = [&](const std::string& name, auto builder,
                   nn::ParameterStore& store) {
    double err = nn::grad_check(builder, store, 1e-5, 4, rng.next_u64());
    errors[name] = err;
    worst = std::max(worst, err);
  };

  {
    nn::ParameterStore s;
    s.get_or_create("a", safe_random({3, 4}));
    s.get_or_create("b", safe_random({4, 5}));
    s.get_or_create("bias", safe_random({5}));
    check("matmul+bias", [](nn::Tape& t, nn::ParameterStore& s) {
      return t.sum(t.bias_add(t.matmul(t.param(s, "a"), t.param(s, "b")),
                              t.param(s, "bias")));
    }, s);
  }
  {
    nn::ParameterStore s;
    s.get_or_create("q", safe_random({5, 8}));
    s.get_or_create("k", safe_random({5, 8}));
    s.get_or_create("v", safe_random({5, 8}));
    s.get_or_create("w", safe_random({5, 8}));
    check("attention", [](nn::Tape& t, nn::ParameterStore& s) {
      return t.sum(t.mul(t.attention(t.param(s, "q"), t.param(s, "k"),
                                     t.param(s, "v"), 2, true),
                         t.param(s, "w")));
    }, s);
  }
  {
    nn::ParameterStore s;
    s.get_or_create("x", safe_random({3, 8}));
    s.get_or_create("g", safe_random({8}));
    s.get_or_create("b", safe_random({8}));
    check("layer_norm", [](nn::Tape& t, nn::ParameterStore& s) {
      return t.sum(t.layer_norm(t.param(s, "x"), t.param(s, "g"),
                                t.param(s, "b")));
    }, s);
  }
  {
    nn::ParameterStore s;
    s.get_or_create("x", safe_random({2, 6}));
    check("activations", [](nn::Tape& t, nn::ParameterStore& s) {
      nn::Value x = t.param(s, "x");
      return t.sum(t.add(t.relu(x), t.add(t.gelu(x), t.sigmoid(x))));
    }, s);
  }
  {
    nn::ParameterStore s;
    s.get_or_create("logits", safe_random({6}));
    check("softmax+ce", [](nn::Tape& t, nn::ParameterStore& s) {
      return t.cross_entropy_with_logits(t.param(s, "logits"), 1);
    }, s);
  }

  if (json_out) {
    nlohmann::json j;
    for (const auto& [name, err] : errors) j["errors"][name] = err;
    j["max_relative_error"] = worst;
    j["pass"] = worst < 1e-4;
    std::cout << j.dump(2) << '\n';
  } else {
    for (const auto& [name, err] : errors)
      std::printf("%-12s max relative error %.3g\n", name.c_str(), err);
    std::printf("overall max relative error: %.3g (%s)\n", worst,
                worst < 1e-4 ? "pass" : "FAIL");
  }
  return worst < 1e-4 ? 0 : 1;
}

int cmd_theorem_demo(const std::vector<int>& degrees, bool json_out) {
  auto target = [](double c, double a) {
    return std::sin(std::numbers::pi * c) * std::cos(std::numbers::pi * a);
  };
  std::vector<std::pair<int, double>> table;
  for (int d : degrees)
    table.emplace_back(d, polynomial_two_tower_fit(target, d).max_abs_error);
  auto exact = polynomial_two_tower_fit(
      [](double c, double a) { return c * a; }, 1);
  bool decreasing = true;
  for (size_t i = 1; i < table.size(); ++i)
    decreasing = decreasing && table[i].second < table[i - 1].second;
  if (json_out) {
    nlohmann::json j;
    for (const auto& [d, e] : table)
      j["grid_error"][std::to_string(d)] = e;
    j["bilinear_exact_error"] = exact.max_abs_error;
    j["strictly_decreasing"] = decreasing;
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("inner-product approximation of sin(pi c)cos(pi a):\n");
    std::printf("degree  max grid error\n");
    for (const auto& [d, e] : table) std::printf("%5d   %.3e\n", d, e);
    std::printf("bilinear target at degree 1: %.3e\n", exact.max_abs_error);
    std::printf("errors strictly decreasing: %s\n", decreasing ? "yes" : "NO");
  }
  return decreasing && exact.max_abs_error <= 1e-10 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rankstack: layered retrieval, ranking, and policy platform"};
  app.require_subcommand(1);
  bool json_out = false;
  app.add_flag("--json", json_out, "machine readable output");

  // generate-data
  auto* gen = app.add_subcommand("generate-data",
                                 "synthesize a journey corpus with planted "
                                 "preference structure");
  synth::GeneratorConfig gen_cfg;
  std::string out_dir = "data";
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--customers", gen_cfg.num_customers);
  gen->add_option("--items", gen_cfg.num_items);
  gen->add_option("--brands", gen_cfg.num_brands);
  gen->add_option("--categories", gen_cfg.num_categories);
  gen->add_option("--seed", gen_cfg.seed);
  gen->add_option("--intent-drift", gen_cfg.intent_drift);
  gen->add_option("--fresh-fraction", gen_cfg.fresh_item_fraction);
  gen->add_option("--popularity-exponent", gen_cfg.popularity_exponent);

  // train-retrieval
  auto* tret = app.add_subcommand("train-retrieval",
                                  "train the two-tower candidate generator");
  Paths tret_paths;
  TwoTowerConfig tret_cfg;
  std::string tret_out = "models/retrieval";
  std::string tret_version = "rcg-v1";
  int tret_split = 60;
  bool no_context = false, frozen_items = false, no_logq = false;
  tret->add_option("--data", tret_paths.data_dir);
  tret->add_option("--out", tret_out, "output prefix (.rkf/.json/.rke)");
  tret->add_option("--version", tret_version);
  tret->add_option("--epochs", tret_cfg.epochs);
  tret->add_option("--lr", tret_cfg.lr);
  tret->add_option("--batch", tret_cfg.batch_size);
  tret->add_option("--threads", tret_cfg.num_threads);
  tret->add_option("--seed", tret_cfg.seed);
  tret->add_option("--split-days", tret_split);
  tret->add_flag("--no-context", no_context,
                 "drop local context (category, search flag, query)");
  tret->add_flag("--frozen-items", frozen_items,
                 "freeze item embeddings at their visual initialization");
  tret->add_flag("--no-logq", no_logq, "disable the logQ sampling correction");

  // train-ranker
  auto* trank = app.add_subcommand("train-ranker",
                                   "train the multi-task pointwise ranker");
  Paths trank_paths;
  RankerConfig trank_cfg;
  std::string trank_out = "models/ranker";
  std::string trank_version = "rl-v1";
  int trank_split = 60;
  bool no_position = false;
  trank->add_option("--data", trank_paths.data_dir);
  trank->add_option("--out", trank_out);
  trank->add_option("--version", trank_version);
  trank->add_option("--epochs", trank_cfg.epochs);
  trank->add_option("--lr", trank_cfg.lr);
  trank->add_option("--neg-ratio", trank_cfg.neg_ratio);
  trank->add_option("--max-examples", trank_cfg.max_examples);
  trank->add_option("--threads", trank_cfg.num_threads);
  trank->add_option("--seed", trank_cfg.seed);
  trank->add_option("--split-days", trank_split);
  trank->add_flag("--no-position-branch", no_position);

  // build-index
  auto* bidx = app.add_subcommand("build-index",
                                  "build the versioned vector index");
  std::string bidx_embeddings, bidx_catalog, bidx_out = "models/index.rkg";
  std::string bidx_mode = "approximate";
  ann::HnswParams bidx_params;
  bidx->add_option("--embeddings", bidx_embeddings)->required();
  bidx->add_option("--catalog", bidx_catalog);
  bidx->add_option("--out", bidx_out);
  bidx->add_option("--mode", bidx_mode)
      ->check(CLI::IsMember({"exact", "approximate"}));
  bidx->add_option("--M", bidx_params.M);
  bidx->add_option("--ef-construction", bidx_params.ef_construction);
  bidx->add_option("--ef-search", bidx_params.ef_search);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "offline evaluation protocol");
  Paths ev_paths;
  std::string ev_retrieval = "models/retrieval", ev_ranker = "models/ranker";
  std::string ev_systems = "popularity,retrieval,full";
  std::string ev_report;
  std::vector<int> ev_ks = {6, 84, 500};
  int ev_depth = 500, ev_split = 60;
  ev->add_option("--data", ev_paths.data_dir);
  ev->add_option("--retrieval", ev_retrieval, "model prefix, empty to skip");
  ev->add_option("--ranker", ev_ranker, "model prefix, empty to skip");
  ev->add_option("--systems", ev_systems);
  ev->add_option("--ks", ev_ks)->delimiter(',');
  ev->add_option("--depth", ev_depth);
  ev->add_option("--split-days", ev_split);
  ev->add_option("--report", ev_report, "write line-delimited JSON here");

  // serve
  auto* srv = app.add_subcommand("serve", "run the HTTP serving endpoint");
  std::string srv_config = "platform.conf", srv_host = "0.0.0.0";
  std::string srv_warm;
  int srv_port = 8080;
  srv->add_option("--config", srv_config)->required();
  srv->add_option("--host", srv_host);
  srv->add_option("--port", srv_port);
  srv->add_option("--warm-events", srv_warm,
                  "events file to preload into the sequence cache");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference check of every primitive");

  // theorem-demo
  auto* td = app.add_subcommand(
      "theorem-demo", "two-tower polynomial approximation demonstration");
  std::vector<int> td_degrees = {1, 2, 4, 6};
  td->add_option("--degrees", td_degrees)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_cfg, out_dir, json_out);
    if (tret->parsed()) {
      tret_cfg.use_local_context = !no_context;
      tret_cfg.trainable_item_tower = !frozen_items;
      tret_cfg.popularity_logit_bias = frozen_items;
      tret_cfg.logq_correction = !no_logq;
      return cmd_train_retrieval(tret_paths, tret_cfg, tret_out, tret_version,
                                 tret_split, json_out);
    }
    if (trank->parsed()) {
      trank_cfg.position_branch = !no_position;
      return cmd_train_ranker(trank_paths, trank_cfg, trank_out, trank_version,
                              trank_split, json_out);
    }
    if (bidx->parsed())
      return cmd_build_index(bidx_embeddings, bidx_catalog, bidx_out,
                             bidx_mode, bidx_params, json_out);
    if (ev->parsed())
      return cmd_evaluate(ev_paths, ev_retrieval, ev_ranker, ev_systems, ev_ks,
                          ev_depth, ev_split, ev_report, json_out);
    if (srv->parsed()) return cmd_serve(srv_config, srv_host, srv_port, srv_warm);
    if (gc->parsed()) return cmd_gradcheck(json_out);
    if (td->parsed()) return cmd_theorem_demo(td_degrees, json_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
