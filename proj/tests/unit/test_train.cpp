#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "quadgfm/numerics/finite_diff.hpp"
#include "quadgfm/train.hpp"
#include "synthetic.hpp"
#include "tempdir.hpp"

using namespace quadgfm;
using namespace quadgfm::train;
using graph::NodeId;
using graph::NodeType;

namespace {

std::vector<double> random_probs(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

QuerySample sample_with(std::vector<NodeId> positives) {
    QuerySample s;
    s.id = "q";
    s.positives = std::move(positives);
    return s;
}

bool same_params(const gfm::GfmParams<float>& a, const gfm::GfmParams<float>& b) {
    const auto x = a.blocks(), y = b.blocks();
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::equal(x[i].values.begin(), x[i].values.end(), y[i].values.begin(), y[i].values.end())) return false;
    return true;
}

}  // namespace

TEST_CASE("positive_loglik") {
    const std::vector<double> s{1 - 1e-7, 0.5, 0.25, 0.0};
    CHECK(positive_loglik(s, std::vector<NodeId>{0}) == doctest::Approx(-1e-7).epsilon(1e-3));
    CHECK(positive_loglik(s, std::vector<NodeId>{1}) == doctest::Approx(-0.693147).epsilon(1e-6));
    CHECK(positive_loglik(s, std::vector<NodeId>{1, 2}) == doctest::Approx(-2.079442).epsilon(1e-6));
    CHECK(positive_loglik(s, std::vector<NodeId>{3}) == doctest::Approx(std::log(1e-7)));  // clamped
    CHECK_THROWS_AS(positive_loglik(s, std::vector<NodeId>{}), TrainingError);
    CHECK_THROWS_AS(positive_loglik(s, std::vector<NodeId>{4}), TrainingError);
}

TEST_CASE("bernoulli_kl") {
    const std::vector<double> t{1 - 1e-7}, st{0.5};
    CHECK(bernoulli_kl(t, st) == doctest::Approx(0.693145).epsilon(1e-6));
    CHECK(bernoulli_kl(std::vector<double>{0.3}, std::vector<double>{0.7}) ==
          doctest::Approx(0.3 * std::log(3.0 / 7) + 0.7 * std::log(7.0 / 3)));
    CHECK(bernoulli_kl(std::vector<double>{0.3}, std::vector<double>{0.7}) == doctest::Approx(0.338919).epsilon(1e-6));
    CHECK_THROWS_AS(bernoulli_kl(t, std::vector<double>{0.1, 0.2}), TrainingError);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_probs(7, rng), b = random_probs(7, rng);
        CHECK(bernoulli_kl(a, a) == 0.0);
        CHECK(bernoulli_kl(a, b) > 0.0);
    }
    // Gradient against central differences.
    const auto a = random_probs(5, rng);
    auto b = random_probs(5, rng);
    std::vector<double> g;
    bernoulli_kl(a, b, &g);
    for (std::size_t v = 0; v < b.size(); ++v) {
        const double h = 1e-6, o = b[v];
        b[v] = o + h;
        const double up = bernoulli_kl(a, b);
        b[v] = o - h;
        const double down = bernoulli_kl(a, b);
        b[v] = o;
        CHECK(g[v] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("ranking loss") {
    std::mt19937_64 rng(2);
    const std::vector<double> flat(10, 0.4);
    CHECK(ranking_loss(flat, std::vector<NodeId>{0, 3}, 32, rng) == doctest::Approx(std::log(2.0)));

    std::vector<double> sep(10, 1e-6);
    sep[0] = 1 - 1e-6;
    CHECK(ranking_loss(sep, std::vector<NodeId>{0}, 32, rng) < 1e-9);

    std::mt19937_64 r1(9), r2(9);
    const auto probs = random_probs(30, rng);
    CHECK(ranking_loss(probs, std::vector<NodeId>{1, 5}, 32, r1) == ranking_loss(probs, std::vector<NodeId>{1, 5}, 32, r2));

    const auto pairs = sample_negatives(30, std::vector<NodeId>{1, 5}, 32, rng);
    CHECK(pairs.size() == 64);
    for (const auto& p : pairs) {
        CHECK((p.positive == 1 || p.positive == 5));
        CHECK(p.negative != 1);
        CHECK(p.negative != 5);
    }
    CHECK_THROWS_AS(sample_negatives(2, std::vector<NodeId>{0, 1}, 4, rng), TrainingError);

    // Brute-force mean over the given pairs.
    double want = 0;
    for (const auto& p : pairs) {
        const double x = std::log(probs[p.negative] / (1 - probs[p.negative])) -
                         std::log(probs[p.positive] / (1 - probs[p.positive]));
        want += std::log(1 + std::exp(x));
    }
    CHECK(ranking_loss(probs, pairs) == doctest::Approx(want / 64));
}

TEST_CASE("total_loss") {
    std::mt19937_64 rng(3);
    const auto s = random_probs(40, rng), t = random_probs(40, rng);
    const auto sample = sample_with({2, 9, 17});
    TrainingConfig c;
    c.lambda = 0.37;
    for (bool ranking : {false, true}) {
        c.ranking = ranking;
        std::mt19937_64 r(5);
        const auto lb = total_loss(s, t, sample, c, r);
        CHECK(lb.total == doctest::Approx(lb.nll + c.lambda * lb.kl + lb.ranking).epsilon(1e-12));
        CHECK(lb.nll == doctest::Approx(-positive_loglik(s, sample.positives)));
        CHECK(lb.kl == doctest::Approx(bernoulli_kl(t, s)));
        CHECK((lb.ranking > 0) == ranking);
    }
    c.lambda = 0;
    c.ranking = false;
    std::mt19937_64 r(5);
    CHECK(total_loss(s, t, sample, c, r).total == doctest::Approx(-positive_loglik(s, sample.positives)));

    std::vector<double> perfect = t;
    for (NodeId v : sample.positives) perfect[v] = 1 - 1e-7;
    c.lambda = 0.5;
    CHECK(total_loss(perfect, perfect, sample, c, r).total == doctest::Approx(0.0).epsilon(1e-6));

    auto unlabeled = sample;
    unlabeled.labeled = false;
    c.ranking = true;
    const auto u = total_loss(s, t, unlabeled, c, r);
    CHECK(u.nll == 0.0);
    CHECK(u.ranking == 0.0);
    CHECK(u.total == doctest::Approx(0.5 * bernoulli_kl(t, s)));

    // Score gradient against central differences, ranking included.
    c.ranking = true;
    const auto pairs = sample_negatives(s.size(), sample.positives, 32, r);
    std::vector<double> g;
    total_loss(s, t, sample, c, pairs, &g);
    auto x = s;
    for (std::size_t v = 0; v < x.size(); ++v) {
        const double h = 1e-6, o = x[v];
        x[v] = o + h;
        const double up = total_loss(x, t, sample, c, pairs).total;
        x[v] = o - h;
        const double down = total_loss(x, t, sample, c, pairs).total;
        x[v] = o;
        CHECK(g[v] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("gradient through the model") {
    std::mt19937_64 rng(4);
    const auto g = testing::random_graph(20, 40, 3, rng);
    const embed::HashProvider provider(8, 1);
    const auto tg = prepare_graph<double>(g, embed::embed_graph(g, provider));
    const auto sample = sample_with({3, 11});
    const auto q = provider.query("q", "where is it");
    const auto ps = prepare_sample(sample, tg, q, 3);
    auto params = gfm::GfmParams<double>::create(2, 8, 3);
    TrainingConfig c;
    c.lambda = 0.2;
    const auto pairs = sample_negatives(g.node_count(), sample.positives, 8, rng);

    SUBCASE("full objective matches finite differences") {
        const auto res = loss_and_gradients(params, tg, ps, c, pairs);
        auto grads = res.grads;
        const auto report = numerics::finite_diff_check(
            [&] {
                const gfm::QueryInputs<double> in{tg.nodes, tg.relations, ps.query, ps.seeds};
                const auto s = gfm::forward(params, tg.view, in).scores;
                return total_loss(s, ps.teacher, sample, c, pairs).total;
            },
            params.blocks(), grads.blocks());
        CHECK(report.max_rel_error < 1e-4);
    }
    SUBCASE("lambda = 0 with one positive gives dlogit = p - 1") {
        c.lambda = 0;
        c.ranking = false;
        const auto one = sample_with({7});
        const gfm::QueryInputs<double> in{tg.nodes, tg.relations, ps.query, ps.seeds};
        const auto fwd = gfm::forward(params, tg.view, in);
        std::vector<double> dscores;
        total_loss(fwd.scores, ps.teacher, one, c, {}, &dscores);
        for (std::size_t v = 0; v < dscores.size(); ++v) {
            const double p = fwd.scores[v];
            const double dlogit = dscores[v] * p * (1 - p);
            CHECK(dlogit == doctest::Approx(v == 7 ? p - 1 : 0.0));
        }
    }
}

TEST_CASE("select_seed_nodes") {
    const auto g = graph::QuadGraph::build(
        {{0, NodeType::Entity, "", "Hammerfest"}, {1, NodeType::Entity, "", "oslo"}, {2, NodeType::Document, "", "x"},
         {3, NodeType::Attribute, "", "bergen"}, {4, NodeType::Entity, "", ""}},
        {}, {});
    std::mt19937_64 rng(6);
    Matrix<float> emb(5, 4);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& x : emb.values()) x = u(rng);
    std::vector<float> q{0.3f, -0.2f, 0.9f, 0.1f};
    const auto teacher = embed::teacher_scores(emb, q);
    std::vector<NodeId> order{0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) { return teacher[a] > teacher[b]; });

    auto top2 = std::vector<NodeId>(order.begin(), order.begin() + 2);
    std::sort(top2.begin(), top2.end());
    CHECK(select_seed_nodes("nothing to see", q, g, emb, 2) == top2);

    const auto with = select_seed_nodes("how cold is HAMMERFEST in winter and bergen", q, g, emb, 1);
    CHECK(std::find(with.begin(), with.end(), 0u) != with.end());
    CHECK((std::find(with.begin(), with.end(), 3u) == with.end() || order[0] == 3));  // attributes are not string-matched
    CHECK(std::is_sorted(with.begin(), with.end()));

    CHECK(select_seed_nodes("", q, g, emb, 50) == std::vector<NodeId>{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(select_seed_nodes("", q, g, emb, 0), TrainingError);

    // Ties go to the lower id.
    Matrix<float> flat(5, 4);
    CHECK(select_seed_nodes("", q, g, flat, 2) == std::vector<NodeId>{0, 1});
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(TrainingConfig{}.validate());
    const auto desk = TrainingConfig::desk();
    CHECK(desk.dim == 64);
    CHECK(desk.layers == 4);
    CHECK(TrainingConfig::full().dim == 1024);
    CHECK(TrainingConfig::full().layers == 6);
    auto bad = desk;
    bad.lambda = -1;
    CHECK_THROWS_AS(bad.validate(), TrainingError);
    bad = desk;
    bad.lr = 0;
    CHECK_THROWS_AS(bad.validate(), TrainingError);
    bad = desk;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), TrainingError);
}

TEST_CASE("fit") {
    testing::PlantedOptions po;
    po.entities = 40;
    po.documents = 16;
    po.attributes = 6;
    po.communities = 4;
    po.queries = 6;
    po.random_edges = 60;
    const auto task = testing::planted_task(po);
    const embed::HashProvider provider(16, 0);
    const std::vector<TrainingGraph<float>> graphs{prepare_graph(task.graph, provider)};
    auto c = TrainingConfig::desk();
    c.dim = 16;
    c.layers = 2;
    c.epochs = 3;
    c.lr = 5e-3;

    SUBCASE("zero epochs keeps the initialization") {
        c.epochs = 0;
        const auto r = fit(task.samples, graphs, c, provider);
        CHECK(r.history.empty());
        CHECK(same_params(r.params, gfm::GfmParams<float>::create(c.layers, c.dim, c.seed)));
    }
    SUBCASE("fixed seed gives identical histories") {
        testing::TempDir dir;
        c.checkpoint_dir = dir.path();
        const auto a = fit(task.samples, graphs, c, provider);
        const auto b = fit(task.samples, graphs, c, provider);
        REQUIRE(a.history.size() == 3);
        for (std::size_t e = 0; e < 3; ++e) {
            CHECK(a.history[e].epoch == e + 1);
            CHECK(a.history[e].mean.total == b.history[e].mean.total);
            CHECK(a.history[e].mean.grad_norm == b.history[e].mean.grad_norm);
            const auto& m = a.history[e].mean;
            CHECK(m.total == doctest::Approx(m.nll + c.lambda * m.kl + m.ranking).epsilon(1e-9));
        }
        CHECK(same_params(a.params, b.params));
        CHECK(std::filesystem::exists(dir / "epoch-001.gfm"));
        CHECK(same_params(gfm::load_checkpoint(dir / "epoch-003.gfm"), a.params));
    }
    SUBCASE("early stop through the callback") {
        std::size_t seen = 0;
        FitOptions opt;
        opt.on_epoch = [&](const EpochReport&, const gfm::GfmParams<float>&) { return ++seen < 2; };
        CHECK(fit(task.samples, graphs, c, provider, opt).history.size() == 2);
    }
    SUBCASE("non-finite loss names the sample") {
        auto poisoned = gfm::GfmParams<float>::create(c.layers, c.dim, 0);
        for (auto& p : poisoned.predictor) p.layers[0].bias[0] = std::nanf("");
        FitOptions opt;
        opt.initial = poisoned;
        c.batch_size = 1;
        CHECK_THROWS_WITH_AS(fit(task.samples, graphs, c, provider, opt), doctest::Contains("sample q"), TrainingError);
    }
    SUBCASE("mismatched inputs") {
        auto s = task.samples;
        s[0].graph = 3;
        CHECK_THROWS_AS(fit(s, graphs, c, provider), TrainingError);
        c.dim = 8;
        CHECK_THROWS_AS(fit(task.samples, graphs, c, provider), TrainingError);
    }
}

TEST_CASE("mean loss mostly decreases on the planted task") {
    const auto task = testing::planted_task();
    const embed::HashProvider provider(32, 0);
    const std::vector<TrainingGraph<float>> graphs{prepare_graph(task.graph, provider)};
    int monotone = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto c = TrainingConfig::desk();
        c.dim = 32;
        c.epochs = 10;
        c.seed = seed;
        const auto r = fit(task.samples, graphs, c, provider);
        bool ok = true;
        for (std::size_t e = 1; e < r.history.size(); ++e) ok = ok && r.history[e].mean.total <= r.history[e - 1].mean.total;
        monotone += ok;
    }
    CHECK(monotone >= 9);
}

TEST_CASE("load_manifest") {
    testing::TempDir dir;
    const auto p = dir.write("train.jsonl",
                             R"({"query_id":"a","query":"who?","graph":"g/layers.jsonl","positives":[1,2]})"
                             "\n"
                             R"({"query_id":"b","query":"what?","graph":"/abs/x.jsonl","positives":[0],"seeds":[4]})"
                             "\n");
    const auto m = load_manifest(p);
    REQUIRE(m.size() == 2);
    CHECK(m[0].sample.id == "a");
    CHECK(m[0].graph_path == dir / "g/layers.jsonl");
    CHECK(m[0].sample.positives == std::vector<NodeId>{1, 2});
    CHECK(m[0].sample.seeds.empty());
    CHECK(m[1].graph_path == "/abs/x.jsonl");
    CHECK(m[1].sample.seeds == std::vector<NodeId>{4});

    const auto bad = dir.write("bad.jsonl", R"({"query_id":"a","query":"who?","graph":"g"})"
                                            "\n");
    CHECK_THROWS(load_manifest(bad));
}
