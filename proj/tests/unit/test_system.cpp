#include <thread>

#include <gtest/gtest.h>

#include "../support.hpp"

using namespace pmt2i;
using namespace testsupport;

namespace {

template <typename F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no pmt2i::Error thrown";
  return Errc::interrupted;
}

BackendEndpoint fast_endpoint(const std::string& url = "mock://unit") {
  BackendEndpoint e;
  e.base_url = url;
  e.retry.base_backoff_s = 0.001;
  return e;
}

RunConfig small_config(const fs::path& dataset, const fs::path& out, const std::string& mock) {
  RunConfig config = planted_config(dataset, out, mock);
  config.languages = {"de", "fr"};
  config.seeds = {1};
  config.image = {8, 8};
  return config;
}

}  // namespace

// --- client ----------------------------------------------------------------

TEST(Client, RetriesTransientFailures) {
  auto mock = std::make_shared<MockBackend>();
  BackendClient client(fast_endpoint(), mock);
  mock->fail_next(kRouteTranslate, 2, 503);
  EXPECT_EQ(client.translate("hi", "en", "de"), "«de» hi");
  EXPECT_EQ(client.upstream_requests(), 3u);

  mock->fail_next(kRouteEmbedText, 3, 429);
  EXPECT_EQ(code_of([&] { client.embed_text("x"); }), Errc::http);
  EXPECT_EQ(mock->calls(kRouteEmbedText), 3u);
}

TEST(Client, DoesNotRetryClientErrors) {
  auto mock = std::make_shared<MockBackend>();
  BackendClient client(fast_endpoint(), mock);
  mock->fail_next(kRouteTranslate, 1, 400);
  try {
    client.translate("hi", "en", "de");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::http);
    EXPECT_EQ(e.http_status(), 400);
    EXPECT_FALSE(e.retryable());
  }
  EXPECT_EQ(mock->calls(kRouteTranslate), 1u);
  EXPECT_EQ(code_of([&] { client.generate_image("XREFUSE", 1, {8, 8}); }), Errc::content_refused);
  EXPECT_EQ(mock->calls(kRouteGenerate), 1u);
}

TEST(Client, ValidatesBeforeSending) {
  auto mock = std::make_shared<MockBackend>();
  BackendClient client(fast_endpoint(), mock);
  EXPECT_EQ(code_of([&] { client.translate("hi", "en", "en"); }), Errc::invalid_argument);
  EXPECT_EQ(code_of([&] { client.translate("  ", "en", "de"); }), Errc::invalid_argument);
  EXPECT_EQ(code_of([&] { client.generate_image("p", 1, {0, 8}); }), Errc::invalid_argument);
  EXPECT_EQ(code_of([&] { client.generate_image("p", 1, {5000, 8}); }), Errc::invalid_argument);
  EXPECT_EQ(code_of([&] { client.paraphrase("p", 0); }), Errc::invalid_argument);
  EXPECT_EQ(mock->total_calls(), 0u);
}

TEST(Client, RejectsMalformedResponses) {
  auto mock = std::make_shared<MockBackend>();
  BackendClient client(fast_endpoint(), mock);
  mock->set_override(kRouteTranslate, [](const json&) { return protocol_ok({{"txt", "x"}}); });
  EXPECT_EQ(code_of([&] { client.translate("a", "en", "de"); }), Errc::schema);
  mock->set_override(kRouteTranslate, [](const json&) { return protocol_ok({{"text", ""}}); });
  EXPECT_EQ(code_of([&] { client.translate("b", "en", "de"); }), Errc::empty_result);
  mock->set_override(kRouteEmbedText, [](const json&) {
    return protocol_ok({{"embedding", {1.0, 2.0}}, {"dim", 3}, {"model_id", "m"}});
  });
  EXPECT_EQ(code_of([&] { client.embed_text("a"); }), Errc::dim_mismatch);
  mock->set_override(kRouteReward, [](const json&) { return protocol_ok({{"score", "high"}}); });
  const auto image = GeneratedImage::from_png(mock->render_image("p", 1, 4, 4));
  EXPECT_EQ(code_of([&] { client.reward("a", image); }), Errc::schema);
}

TEST(Client, ParaphraseAndScores) {
  auto mock = std::make_shared<MockBackend>();
  BackendClient client(fast_endpoint(), mock);
  EXPECT_EQ(client.paraphrase("a cat", 2), std::vector<std::string>({"a cat ¶1", "a cat ¶2"}));
  const auto image = GeneratedImage::from_png(mock->render_image("p", 1, 4, 4));
  EXPECT_EQ(client.judge("a cat", image), Verdict::correct);
  EXPECT_EQ(client.judge("XFAIL cat", image), Verdict::incorrect);
  const double p = client.vqa("is it a cat?", image);
  EXPECT_GE(p, 0.0);
  EXPECT_LE(p, 1.0);
  EXPECT_TRUE(std::holds_alternative<RewardScore>(client.score_image(ScoreKind::reward, "a cat", image)));
}

TEST(Client, EndpointConfigJson) {
  const auto e = endpoint_from_json(json::parse(R"({"base_url":"http://h:1","max_in_flight":2})"));
  EXPECT_EQ(e.max_in_flight, 2);
  EXPECT_EQ(endpoint_from_json(to_json(e)), e);
  EXPECT_EQ(endpoint_from_json(json("mock://x")).base_url, "mock://x");
  EXPECT_EQ(code_of([] { endpoint_from_json(json::parse(R"({"base_url":"http://h","bogus":1})")); }),
            Errc::config);
  EXPECT_EQ(code_of([] { endpoint_from_json(json::parse(R"({"base_url":"ftp://h"})")); }), Errc::config);
  EXPECT_EQ(code_of([] { validate_capability_name("draw"); }), Errc::config);
  validate_capability_name("translate.de");
}

TEST(Client, MissingAuthTokenIsConfigError) {
  BackendEndpoint e = fast_endpoint("http://127.0.0.1:9");
  e.auth_token_ref = "PMT2I_TEST_TOKEN_THAT_IS_NOT_SET";
  EXPECT_EQ(code_of([&] { make_transport(e); }), Errc::config);
}

TEST(Client, UnreachableHostIsNetworkError) {
  BackendEndpoint e = fast_endpoint("http://127.0.0.1:9");
  e.retry.max_attempts = 2;
  e.timeout_s = 2;
  BackendClient client(e, make_transport(e));
  const auto code = code_of([&] { client.translate("x", "en", "de"); });
  EXPECT_TRUE(code == Errc::network || code == Errc::timeout);
}

// --- cache -----------------------------------------------------------------

TEST(Cache, PersistsAcrossClients) {
  TempDir dir("cache");
  auto mock = std::make_shared<MockBackend>();
  {
    BackendClient client(fast_endpoint(), mock, std::make_shared<ResponseCache>(dir.path()));
    client.translate("a cat", "en", "de");
    client.embed_text("a cat");
  }
  BackendClient again(fast_endpoint(), mock, std::make_shared<ResponseCache>(dir.path()));
  EXPECT_EQ(again.translate("a cat", "en", "de"), "«de» a cat");
  EXPECT_EQ(mock->calls(kRouteTranslate), 1u);
  ResponseCache cache(dir.path());
  const auto stats = cache.stats();
  EXPECT_EQ(stats.entries, 2u);
  EXPECT_EQ(stats.per_operation.at("translate"), 1u);
  EXPECT_EQ(cache.clear(), 2u);
  EXPECT_EQ(cache.stats().entries, 0u);
}

TEST(Cache, ModelIdSeparatesEntries) {
  auto mock = std::make_shared<MockBackend>();
  auto cache = std::make_shared<ResponseCache>();
  BackendEndpoint a = fast_endpoint(), b = fast_endpoint();
  a.model_id = "v1";
  b.model_id = "v2";
  BackendClient ca(a, mock, cache), cb(b, mock, cache);
  ca.translate("x", "en", "de");
  cb.translate("x", "en", "de");
  EXPECT_EQ(mock->calls(kRouteTranslate), 2u);
}

TEST(Cache, FailuresAreNotCached) {
  auto mock = std::make_shared<MockBackend>();
  BackendEndpoint e = fast_endpoint();
  e.retry.max_attempts = 1;
  BackendClient client(e, mock);
  mock->fail_next(kRouteTranslate, 1, 500);
  EXPECT_THROW(client.translate("x", "en", "de"), Error);
  EXPECT_EQ(client.translate("x", "en", "de"), "«de» x");
}

TEST(Cache, ConcurrentIdenticalRequestsShareOneCall) {
  MockOptions slow;
  slow.latency = std::chrono::milliseconds(20);
  auto mock = std::make_shared<MockBackend>(slow);
  BackendClient client(fast_endpoint(), mock);
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 12; ++i) threads.emplace_back([&] { client.embed_text("same text"); });
  }
  EXPECT_EQ(mock->calls(kRouteEmbedText), 1u);
}

TEST(Cache, GenerationCachingIsOptIn) {
  auto mock = std::make_shared<MockBackend>();
  BackendClient plain(fast_endpoint(), mock);
  plain.generate_image("p", 1, {4, 4});
  plain.generate_image("p", 1, {4, 4});
  EXPECT_EQ(mock->calls(kRouteGenerate), 2u);
  BackendEndpoint e = fast_endpoint();
  e.cache_generation = true;
  BackendClient cached(e, mock);
  const auto a = cached.generate_image("q", 1, {4, 4});
  const auto b = cached.generate_image("q", 1, {4, 4});
  EXPECT_EQ(a.png_bytes, b.png_bytes);
  EXPECT_EQ(mock->calls(kRouteGenerate), 3u);
}

// --- mock and HTTP ---------------------------------------------------------

TEST(Mock, DeterministicOutputs) {
  MockBackend mock;
  EXPECT_EQ(mock.render_image("p", 1, 8, 8), mock.render_image("p", 1, 8, 8));
  EXPECT_NE(mock.render_image("p", 1, 8, 8), mock.render_image("p", 2, 8, 8));
  const auto r = mock.handle(kRouteTranslate, {{"text", "x"}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(mock.handle("/v1/unknown", json::object()).status, 404);
}

TEST(Http, ServesProtocolAndHealth) {
  auto backend = std::make_shared<MockBackend>();
  MockServer server(backend);
  const int port = server.start();
  httplib::Client http("127.0.0.1", port);
  auto health = http.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");
  auto bad = http.Post("/v1/translate", "{oops", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["error"]["code"], "bad_request");

  BackendEndpoint e = fast_endpoint("http://127.0.0.1:" + std::to_string(port) + "/");
  BackendClient client(e, make_transport(e));
  const auto image = client.generate_image("a cat", 1, {8, 8});
  EXPECT_EQ(client.embed_image(image).dim(), 16u);
  EXPECT_EQ(client.judge("XFAIL", image), Verdict::incorrect);
  backend->fail_next(kRouteVqa, 1, 400);
  EXPECT_EQ(code_of([&] { client.vqa("q?", image); }), Errc::http);
  server.stop();
}

// --- config ----------------------------------------------------------------

TEST(Config, JsonRoundTripAndStrictKeys) {
  RunConfig c;
  c.dataset_path = "d.jsonl";
  c.languages = {"de", "fr"};
  c.variant_strategy = parse_variant_strategy("first:3");
  c.seeds = {1, 5};
  c.endpoints = cli::detail::mock_routing();
  EXPECT_EQ(run_config_from_json(to_json(c)), c);
  json j = to_json(c);
  j["typo"] = 1;
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), Errc::config);
}

TEST(Config, DigestIgnoresPlacementOnly) {
  RunConfig c;
  c.dataset_path = "d.jsonl";
  c.languages = {"de"};
  c.endpoints = cli::detail::mock_routing();
  const std::vector<DatasetRecord> data{{"a", "x", {}, {}, {}}};
  RunConfig moved = c;
  moved.output_dir = "elsewhere";
  moved.cache_dir = "other";
  moved.fail_fast = true;
  EXPECT_EQ(config_digest(c, data), config_digest(moved, data));
  RunConfig reseeded = c;
  reseeded.seeds = {2};
  EXPECT_NE(config_digest(c, data), config_digest(reseeded, data));
  RunConfig other_model = c;
  other_model.endpoints["generate"].model_id = "v2";
  EXPECT_NE(config_digest(c, data), config_digest(other_model, data));
  const std::vector<DatasetRecord> edited{{"a", "y", {}, {}, {}}};
  EXPECT_NE(config_digest(c, data), config_digest(c, edited));
}

TEST(Config, ValidationErrors) {
  RunConfig c;
  c.dataset_path = "d.jsonl";
  c.languages = {"de"};
  c.endpoints = cli::detail::mock_routing();
  c.validate();
  RunConfig dup = c;
  dup.seeds = {1, 1};
  EXPECT_EQ(code_of([&] { dup.validate(); }), Errc::config);
  RunConfig no_gen = c;
  no_gen.endpoints.erase("generate");
  EXPECT_EQ(code_of([&] { no_gen.validate(); }), Errc::config);
  RunConfig empty_langs = c;
  empty_langs.languages.clear();
  EXPECT_EQ(code_of([&] { empty_langs.validate(); }), Errc::config);
}

// --- pipeline --------------------------------------------------------------

TEST(Pipeline, PlansLabelsAndPaths) {
  TempDir dir("plan");
  write_text(dir / "d.jsonl", "{\"id\":\"a/b\",\"text\":\"x\"}\n");
  auto config = small_config(dir / "d.jsonl", dir / "run", "plan");
  config.seeds = {3, 4};
  const auto plan = plan_run(config, load_run_dataset(config));
  ASSERT_EQ(plan.variants.size(), 4u);
  EXPECT_EQ(plan.generations.size(), 8u);
  EXPECT_EQ(plan.generations.back().image_path, "images/a_b/3_4.png");
  EXPECT_EQ(plan.translations.size(), 2u);

  config.ablation = AblationKind::single_language;
  EXPECT_EQ(plan_variants(config).front().label, "only-de");
  config.ablation = AblationKind::english_only;
  EXPECT_EQ(plan_variants(config).front().label, "en");
  config.ablation = AblationKind::reduplication;
  EXPECT_EQ(plan_variants(config).front().label, "dup2");
  config.ablation = AblationKind::pmt2i;
  config.variants = {{"fr", "de"}, {"de"}};
  const auto explicit_variants = plan_variants(config);
  EXPECT_EQ(explicit_variants[0].label, "3");
  EXPECT_EQ(explicit_variants[1].label, "0");
}

TEST(Pipeline, MissingTranslationRouteFailsBeforeRequests) {
  TempDir dir("route");
  write_text(dir / "d.jsonl", planted_dataset());
  auto mock = MockRegistry::instance().reset("route");
  auto config = small_config(dir / "d.jsonl", dir / "run", "route");
  config.endpoints.erase("translate");
  config.endpoints["translate.de"] = config.endpoints["generate"];
  const auto plan = plan_run(config, load_run_dataset(config));
  try {
    execute_run(plan, backends_for(config));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
    EXPECT_NE(std::string(e.what()).find("'fr'"), std::string::npos);
  }
  EXPECT_EQ(mock->total_calls(), 0u);
}

TEST(Pipeline, PreTranslatedDatasetSkipsTranslation) {
  TempDir dir("pre");
  write_text(dir / "d.jsonl", "{\"id\":\"a\",\"text\":\"x\",\"translations\":{\"de\":\"X\",\"fr\":\"Y\"}}\n");
  auto mock = MockRegistry::instance().reset("pre");
  auto config = small_config(dir / "d.jsonl", dir / "run", "pre");
  const auto m = execute_run(plan_run(config, load_run_dataset(config)), backends_for(config));
  EXPECT_EQ(mock->calls(kRouteTranslate), 0u);
  EXPECT_EQ(m.candidates.front().prompt, "English: x\nGerman: X");
}

TEST(Pipeline, FailuresAreTalliedOrFatal) {
  TempDir dir("fail");
  write_text(dir / "d.jsonl",
             "{\"id\":\"ok\",\"text\":\"a cat\"}\n{\"id\":\"bad\",\"text\":\"XREFUSE a cat\"}\n");
  MockRegistry::instance().reset("fail");
  auto config = small_config(dir / "d.jsonl", dir / "run", "fail");
  const auto m = execute_run(plan_run(config, load_run_dataset(config)), backends_for(config));
  EXPECT_EQ(m.failures.candidates, 4u);
  EXPECT_EQ(m.failures.samples, 1u);
  ASSERT_EQ(m.selections.size(), 2u);
  EXPECT_TRUE(m.selections[0].ok);
  EXPECT_FALSE(m.selections[1].ok);
  EXPECT_TRUE(fs::exists(dir / "run" / "manifest.json"));

  config.output_dir = (dir / "run_ff").string();
  config.fail_fast = true;
  EXPECT_EQ(code_of([&] { execute_run(plan_run(config, load_run_dataset(config)), backends_for(config)); }),
            Errc::content_refused);
}

TEST(Pipeline, ResumeRetriesFailedAndToleratesTornLine) {
  TempDir dir("resume");
  write_text(dir / "d.jsonl", planted_dataset());
  auto mock = MockRegistry::instance().reset("resume");
  auto config = small_config(dir / "d.jsonl", dir / "run", "resume");
  ExecuteOptions stop;
  stop.stop_after = 3;
  EXPECT_EQ(code_of([&] { execute_run(plan_run(config, load_run_dataset(config)), backends_for(config), stop); }),
            Errc::interrupted);
  const auto done = mock->calls(kRouteGenerate);
  std::ofstream(dir / "run" / "checkpoint.jsonl", std::ios::app) << "{\"kind\":\"gener";
  mock->reset_counters();
  const auto m = resume_run(dir / "run", backends_for(config));
  EXPECT_EQ(mock->calls(kRouteGenerate), 20u - done);
  EXPECT_EQ(mock->calls(kRouteTranslate), 0u);
  EXPECT_EQ(m.candidates.size(), 20u);
  EXPECT_EQ(m.failures.candidates, 0u);
}

TEST(Pipeline, ResumeRefusesChangedConfig) {
  TempDir dir("digest");
  write_text(dir / "d.jsonl", planted_dataset());
  MockRegistry::instance().reset("digest");
  auto config = small_config(dir / "d.jsonl", dir / "run", "digest");
  ExecuteOptions stop;
  stop.stop_after = 2;
  EXPECT_THROW(execute_run(plan_run(config, load_run_dataset(config)), backends_for(config), stop), Error);

  RunConfig changed = config;
  changed.seeds = {1, 2};
  EXPECT_EQ(code_of([&] { resume_run(dir / "run", backends_for(config), changed); }), Errc::digest_mismatch);

  auto run_json = json::parse(read_text(dir / "run" / "run.json"));
  run_json["config"]["seeds"] = {7};
  write_text(dir / "run" / "run.json", run_json.dump());
  EXPECT_EQ(code_of([&] { resume_run(dir / "run", backends_for(config)); }), Errc::digest_mismatch);
}

TEST(Pipeline, RerankWithAnotherEmbedder) {
  TempDir dir("rerank");
  write_text(dir / "d.jsonl", planted_dataset());
  install_planted_mock("rerank-a");
  auto config = planted_config(dir / "d.jsonl", dir / "run", "rerank-a");
  const auto first = execute_run(plan_run(config, load_run_dataset(config)), backends_for(config));

  // A plain mock prefers whatever the hash vectors favour; the planted one is restored after.
  auto other = MockRegistry::instance().reset("rerank-b");
  BackendClient embedder(fast_endpoint("mock://rerank-b"), other);
  const auto second = rerank_run(dir / "run", embedder);
  EXPECT_EQ(second.candidates, first.candidates);
  EXPECT_EQ(read_manifest(dir / "run").selections, second.selections);
  for (const auto& s : second.selections) {
    std::vector<double> scores;
    for (const auto& c : s.selection->scores) scores.push_back(c.score);
    EXPECT_EQ(s.selection->chosen_index, select_best(scores));
  }
}

// --- evaluation ------------------------------------------------------------

TEST(Eval, ClipTOfSelectionIsMaxCandidateScore) {
  TempDir dir("eval");
  write_text(dir / "d.jsonl", planted_dataset());
  install_planted_mock("eval");
  auto config = planted_config(dir / "d.jsonl", dir / "run", "eval");
  execute_run(plan_run(config, load_run_dataset(config)), backends_for(config));

  auto backends = backends_for(config);
  EvalOptions options;
  options.metrics = {Metric::clip_t, Metric::l1_diversity};
  const auto report = evaluate_run(dir / "run", backends, options);
  EXPECT_NEAR(*report.metrics.at(Metric::clip_t).mean, 1.0, 1e-12);
  EXPECT_EQ(report.metrics.at(Metric::clip_t).count, 5u);
  // Diversity always looks at every candidate of a sample.
  const double diversity = *report.metrics.at(Metric::l1_diversity).mean;
  EXPECT_GT(diversity, 0.0);

  options.all_candidates = true;
  const auto all = evaluate_run(dir / "run", backends, options);
  EXPECT_NEAR(*all.metrics.at(Metric::clip_t).mean, (1.0 + 29 * 0.6) / 30.0, 1e-12);
  EXPECT_DOUBLE_EQ(*all.metrics.at(Metric::l1_diversity).mean, diversity);

  options.metrics = {Metric::clip_i};
  EXPECT_EQ(code_of([&] { evaluate_run(dir / "run", backends, options); }), Errc::config);
}

TEST(Eval, ScoringMetricsAndReportFiles) {
  TempDir dir("score");
  write_text(dir / "d.jsonl",
             "{\"id\":\"a\",\"text\":\"a cat\",\"questions\":[\"cat?\",\"red?\"]}\n"
             "{\"id\":\"b\",\"text\":\"XFAIL a dog\",\"questions\":[\"dog?\"]}\n");
  auto mock = MockRegistry::instance().reset("score");
  auto config = small_config(dir / "d.jsonl", dir / "run", "score");
  for (const auto& cap : {"judge", "reward", "vqa"}) config.endpoints[cap] = config.endpoints["generate"];
  execute_run(plan_run(config, load_run_dataset(config)), backends_for(config));

  EvalOptions options;
  options.metrics = {Metric::correct_proportion, Metric::reward, Metric::bvqa};
  const auto report = evaluate_run(dir / "run", backends_for(config), options);
  EXPECT_DOUBLE_EQ(*report.metrics.at(Metric::correct_proportion).mean, 0.5);

  // Independent recomputation from the mock's scores.
  auto inputs = EvalInputs::load(dir / "run");
  BackendClient client(fast_endpoint("mock://score"), mock);
  std::vector<double> rewards, bvqa;
  for (const auto& r : inputs.dataset) {
    const auto* c = inputs.scored_candidates(r.id).at(0);
    const auto image = inputs.image_of(*c);
    rewards.push_back(client.reward(r.text, image));
    double product = 1;
    for (const auto& q : r.questions) product *= client.vqa(q, image);
    bvqa.push_back(product);
  }
  EXPECT_NEAR(*report.metrics.at(Metric::reward).mean, (rewards[0] + rewards[1]) / 2, 1e-12);
  EXPECT_NEAR(*report.metrics.at(Metric::bvqa).mean, (bvqa[0] + bvqa[1]) / 2, 1e-12);

  write_report_files(dir / "run", report, "mock");
  for (const auto* f : {"report.md", "report.csv", "report.json", "details.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  const auto back = read_report(dir / "run");
  EXPECT_EQ(back.metrics.at(Metric::reward).mean, report.metrics.at(Metric::reward).mean);
}

TEST(Eval, ReportTableCells) {
  EvalReport a, b;
  a.metrics[Metric::clip_t] = {0.298, 5, 0};
  a.metrics[Metric::reward] = {-0.205, 5, 0};
  b.metrics[Metric::clip_t] = {0.3044, 5, 0};
  const std::vector<EvalReport> reports{a, b};
  const std::vector<std::string> labels{"baseline", "pmt2i"};
  const auto table = report_table(reports, labels);
  EXPECT_EQ(table.markdown,
            "| System | CLIP-T | Reward |\n|:--|--:|--:|\n| baseline | 29.8 | -0.205 |\n"
            "| pmt2i | 30.4 | — |\n");
  EXPECT_EQ(table.csv, "system,CLIP-T,Reward\nbaseline,29.8,-0.205\npmt2i,30.4,—\n");
}

// --- cli -------------------------------------------------------------------

TEST(Cli, HelpMatchesGolden) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, read_text(data_dir() / "golden" / "cli_help.txt"));
}

TEST(Cli, ExitCodes) {
  TempDir dir("cli");
  write_text(dir / "d.jsonl", planted_dataset());
  const auto d = (dir / "d.jsonl").string(), out = (dir / "run").string();
  EXPECT_EQ(run_cli({"run", "--bogus"}).code, 2);
  EXPECT_EQ(run_cli({"run", "--mock", "--dataset", d, "--out", out, "--seeds", "1,x"}).code, 2);
  EXPECT_EQ(run_cli({"run", "--mock", "--dataset", d, "--out", out, "--variant-strategy", "top"}).code, 2);
  EXPECT_EQ(run_cli({"run", "--mock", "--dataset", (dir / "none.jsonl").string(), "--out", out}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--out", out, "--metrics", "fid"}).code, 2);
  EXPECT_EQ(run_cli({"report", "--compare", out}).code, 2);

  write_text(dir / "cfg.json", json{{"dataset", "d.jsonl"},
                                    {"languages", {"de", "zh"}},
                                    {"endpoints",
                                     {{"translate.de", "mock://cli"}, {"generate", "mock://cli"},
                                      {"embed", "mock://cli"}}}}
                                   .dump());
  auto mock = MockRegistry::instance().reset("cli");
  const auto missing = run_cli({"run", "--config", (dir / "cfg.json").string(), "--out", out});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("'zh'"), std::string::npos) << missing.err;
  EXPECT_EQ(mock->total_calls(), 0u);

  mock->fail_next(kRouteTranslate, 100, 503);
  const auto down = run_cli({"translate", "--config", (dir / "cfg.json").string(), "--languages", "de",
                             "--out", (dir / "t.jsonl").string(), "--cache-dir", (dir / "c").string()});
  EXPECT_EQ(down.code, 3) << down.err;
}

TEST(Cli, RunEvalReportRoundTrip) {
  TempDir dir("cliflow");
  write_text(dir / "d.jsonl", planted_dataset());
  const auto d = (dir / "d.jsonl").string(), a = (dir / "a").string(), b = (dir / "b").string(),
             cache = (dir / "cache").string();
  auto run = run_cli({"run", "--mock", "--dataset", d, "--languages", "de,fr", "--seeds", "1,2",
                      "--out", a, "--cache-dir", cache});
  ASSERT_EQ(run.code, 0) << run.err;
  EXPECT_NE(run.out.find("samples=5 candidates=40"), std::string::npos) << run.out;
  auto stopped = run_cli({"run", "--mock", "--dataset", d, "--ablation", "english_only", "--out", b,
                          "--cache-dir", cache, "--stop-after", "2"});
  ASSERT_EQ(stopped.code, 0) << stopped.err;
  EXPECT_NE(stopped.out.find("stopped"), std::string::npos);
  ASSERT_EQ(run_cli({"resume", "--out", b, "--cache-dir", cache}).code, 0);

  auto eval = run_cli({"eval", "--mock", "--compare", a, b, "--labels", "pmt2i,english", "--cache-dir", cache});
  ASSERT_EQ(eval.code, 0) << eval.err;
  auto report = run_cli({"report", "--compare", a, b, "--labels", "pmt2i,english", "--format", "csv"});
  ASSERT_EQ(report.code, 0) << report.err;
  EXPECT_EQ(report.out.rfind("system,CLIP-T\npmt2i,", 0), 0u) << report.out;

  auto stats = run_cli({"cache", "stats", "--cache-dir", cache});
  EXPECT_EQ(stats.code, 0);
  EXPECT_NE(stats.out.find("translate: 10"), std::string::npos) << stats.out;
}

TEST(Cli, ReportMatchesGolden) {
  TempDir dir("golden");
  EvalReport a, b;
  a.metrics[Metric::clip_t] = {0.298, 5, 0};
  a.metrics[Metric::reward] = {-0.205, 5, 0};
  a.metrics[Metric::correct_proportion] = {0.625, 8, 0};
  b.metrics[Metric::clip_t] = {0.3041, 5, 0};
  b.metrics[Metric::reward] = {0.117, 5, 0};
  b.metrics[Metric::correct_proportion] = {std::nullopt, 0, 8};
  write_report_files(dir / "a", a, "a");
  write_report_files(dir / "b", b, "b");
  const auto r = run_cli({"report", "--compare", (dir / "a").string(), (dir / "b").string(), "--labels",
                          "English only,PMT2I"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, read_text(data_dir() / "golden" / "report_compare.md"));
}
