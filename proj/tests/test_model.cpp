#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "racr/model.hpp"

using namespace racr;
namespace op = racr::ops;

namespace {

Bag random_bag(int n, int d_f, int grade, uint64_t seed, int num_classes = 4) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Bag bag;
    bag.bag_id = "m" + std::to_string(seed);
    bag.num_classes = num_classes;
    bag.grade.value = grade;
    bag.features = MatrixXf(n, d_f);
    for (int p = 0; p < n; ++p) {
        bag.coords.emplace_back(p / 4, p % 4);
        for (int c = 0; c < d_f; ++c) bag.features(p, c) = static_cast<float>(g(rng) + 0.1);
    }
    return bag;
}

BagForward run_forward(const Bag& bag, const TrainConfig& cfg, const ModelParams& params,
                       double lambda1) {
    HybridGraph graph = build_hybrid_graph(bag, cfg.diffusion());
    Tape tape;
    auto vars = push_params(tape, params);
    Rng pair_rng(1);
    return forward_bag(tape, vars, params, cfg, bag, graph, lambda1, nullptr, &pair_rng);
}

}  // namespace

TEST_CASE("edge attention logits: bilinear-form oracles") {
    DirectedEdges edges;
    edges.n = 2;
    edges.target = {0};
    edges.source = {1};

    SUBCASE("orthogonal key and query give zero") {
        Tape t;
        MatrixXd h(2, 2);
        h << 1, 0, 0, 1;  // keys row0 = (1,0), queries row1 = (0,1) under identity maps
        Var keys = t.push(h), queries = t.push(h);
        Var logits = op::edge_dot(t, keys, queries, edges);
        CHECK(t.value(logits)(0, 0) == doctest::Approx(0.0));
    }
    SUBCASE("random instance matches a scalar loop") {
        Rng rng(3);
        std::normal_distribution<double> g;
        int d = 5;
        MatrixXd h(4, d), wk(d, d), wq(d, d), watt(d, d);
        for (auto* m : {&h, &wk, &wq, &watt})
            for (int i = 0; i < m->rows(); ++i)
                for (int j = 0; j < d; ++j) (*m)(i, j) = g(rng);
        DirectedEdges e4;
        e4.n = 4;
        e4.target = {0, 1, 2, 3};
        e4.source = {1, 2, 3, 0};

        Tape t;
        Var keys = op::matmul(t, t.push(h), t.push(wk));
        Var queries = op::matmul(t, op::matmul(t, t.push(h), t.push(wq)),
                                 op::transpose(t, t.push(watt)));
        Var logits = op::edge_dot(t, keys, queries, e4);
        for (size_t e = 0; e < e4.count(); ++e) {
            Eigen::RowVectorXd k = h.row(e4.target[e]) * wk;
            Eigen::RowVectorXd q = h.row(e4.source[e]) * wq;
            double expected = 0;
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) expected += k(a) * watt(a, b) * q(b);
            expected /= std::sqrt(double(d));
            CHECK(t.value(logits)(e, 0) == doctest::Approx(expected).epsilon(1e-10));
        }
    }
}

TEST_CASE("neighbor softmax oracles") {
    DirectedEdges edges;
    edges.n = 1;
    edges.target = {0, 0};
    edges.source = {0, 0};
    Tape t;
    MatrixXd logits(2, 1);
    logits << 0.0, std::log(3.0);
    Var coeff = op::edge_softmax(t, t.push(logits), edges);
    CHECK(t.value(coeff)(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t.value(coeff)(1, 0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("message aggregation: single neighbor with identity values") {
    DirectedEdges edges;
    edges.n = 2;
    edges.target = {0};
    edges.source = {1};
    Tape t;
    MatrixXd h(2, 3);
    h << 0, 0, 0, 4, 5, 6;
    MatrixXd one(1, 1);
    one << 1.0;
    Var messages = op::edge_weighted_sum(t, t.push(one), t.push(h), edges);
    CHECK(t.value(messages)(0, 0) == 4.0);
    CHECK(t.value(messages)(0, 2) == 6.0);
    CHECK(t.value(messages)(1, 1) == 0.0);  // isolated target row stays zero
}

TEST_CASE("layer normalization of an all-zero message row is zero") {
    Tape t;
    Var zero = t.push(MatrixXd::Zero(2, 4));
    Var scale = t.push(MatrixXd::Ones(1, 4));
    Var shift = t.push(MatrixXd::Zero(1, 4));
    Var y = op::row_layernorm(t, zero, scale, shift);
    CHECK(t.value(y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("diversity loss endpoints") {
    Rng rng(5);
    std::normal_distribution<double> g;
    MatrixXd w(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) w(i, j) = g(rng);

    Tape t;
    Var same = op::frobenius_cosine(t, t.push(w), t.push(w));
    CHECK(t.value(same)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    // decorrelate mode squares the cosine: 1; literal mode: 1 - cos = 0

    MatrixXd a = MatrixXd::Zero(2, 2), b = MatrixXd::Zero(2, 2);
    a(0, 0) = 1;
    b(1, 1) = 1;  // Frobenius-orthogonal
    Var ortho = op::frobenius_cosine(t, t.push(a), t.push(b));
    CHECK(t.value(ortho)(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("patch attention oracles") {
    SUBCASE("single patch gets weight 1") {
        Tape t;
        Var w = op::softmax_vec(t, t.push(MatrixXd::Constant(1, 1, 0.37)));
        CHECK(t.value(w)(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("identical rows give the uniform distribution") {
        Tape t;
        Var w = op::softmax_vec(t, t.push(MatrixXd::Constant(5, 1, -1.2)));
        for (int i = 0; i < 5; ++i)
            CHECK(t.value(w)(i, 0) == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("scalar pooling example") {
        // d_h = 1, U = 1, a = 1, h = (0, atanh(0.5)) -> logits (0, 0.5)
        Tape t;
        MatrixXd h(2, 1);
        h << 0.0, std::atanh(0.5);
        Var logits = op::matmul(t, op::tanh_(t, t.push(h)), t.push(MatrixXd::Ones(1, 1)));
        Var w = op::softmax_vec(t, logits);
        CHECK(t.value(w)(0, 0) == doctest::Approx(1 / (1 + std::exp(0.5))).epsilon(1e-9));
        CHECK(t.value(w)(1, 0) == doctest::Approx(0.6225).epsilon(1e-3));
    }
}

TEST_CASE("cosine-softmax class scores") {
    Tape t;
    MatrixXd z(3, 4);
    z << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, -1, 0;
    MatrixXd h(1, 4);
    h << 2, 0, 0, 0;  // aligned with z0, orthogonal to z1, opposed to z2
    Var scores = op::relu(
        t, op::scale(t, op::matmul(t, op::row_l2_normalize(t, t.push(h)),
                                   op::transpose(t, t.push(z))),
                     1.0 / 0.1));
    CHECK(t.value(scores)(0, 0) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(t.value(scores)(0, 1) == doctest::Approx(0.0));
    CHECK(t.value(scores)(0, 2) == doctest::Approx(0.0));  // ReLU clips the negative cosine
}

TEST_CASE("bag likelihood convexity and one-hot selection") {
    Tape t;
    MatrixXd s(3, 2);
    s << 1, 2, 1, 2, 1, 2;  // identical patch scores
    Var uniform = t.push(MatrixXd::Constant(3, 1, 1.0 / 3));
    Var p = op::matmul(t, op::transpose(t, t.push(s)), uniform);
    CHECK(t.value(p)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.value(p)(1, 0) == doctest::Approx(2.0).epsilon(1e-12));

    MatrixXd varied(3, 2);
    varied << 1, 2, 3, 4, 5, 6;
    MatrixXd onehot = MatrixXd::Zero(3, 1);
    onehot(1, 0) = 1.0;
    Var picked = op::matmul(t, op::transpose(t, t.push(varied)), t.push(onehot));
    CHECK(t.value(picked)(0, 0) == 3.0);
    CHECK(t.value(picked)(1, 0) == 4.0);
}

TEST_CASE("grade loss endpoints") {
    Tape t;
    Var even = op::cross_entropy_logits(t, t.push(MatrixXd::Constant(4, 1, 0.7)), 1);
    CHECK(t.value(even)(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    MatrixXd dominant = MatrixXd::Zero(4, 1);
    dominant(2, 0) = 20.0;
    Var easy = op::cross_entropy_logits(t, t.push(dominant), 2);
    CHECK(t.value(easy)(0, 0) < 1e-8);
}

TEST_CASE("inter-grade ranking loss oracles") {
    Tape t;
    SUBCASE("equal prototype attentions cost ln 2 per adjacent pair") {
        Var loss = op::pairwise_softplus(t, t.push(MatrixXd::Constant(2, 1, 0.4)), {{0, 1}},
                                         false);
        CHECK(t.value(loss)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("well-ordered margin of 20 is nearly free") {
        MatrixXd w(2, 1);
        w << 0.0, 20.0;
        Var loss = op::pairwise_softplus(t, t.push(w), {{0, 1}}, false);
        CHECK(t.value(loss)(0, 0) == doctest::Approx(2.06e-9).epsilon(0.01));
    }
    SUBCASE("(0.7, 0.3) violation costs ln(1+e^0.4)") {
        MatrixXd w(2, 1);
        w << 0.7, 0.3;
        Var loss = op::pairwise_softplus(t, t.push(w), {{0, 1}}, false);
        CHECK(t.value(loss)(0, 0) == doctest::Approx(0.9130).epsilon(1e-3));
    }
    SUBCASE("strictly decreasing in the ordering margin") {
        double previous = 1e9;
        for (double margin = -3; margin <= 3; margin += 0.25) {
            MatrixXd w(2, 1);
            w << 0.0, margin;
            Var loss = op::pairwise_softplus(t, t.push(w), {{0, 1}}, false);
            CHECK(t.value(loss)(0, 0) < previous);
            previous = t.value(loss)(0, 0);
        }
    }
}

TEST_CASE("full forward pass: normalization and composition invariants") {
    TrainConfig cfg;
    cfg.d_h = 12;
    Bag bag = random_bag(14, 10, 3, 21);
    ModelParams params = ModelParams::init(cfg, 10, 5);
    BagForward fwd = run_forward(bag, cfg, params, cfg.lambda1);

    CHECK(fwd.attention.sum() == doctest::Approx(1.0).epsilon(1e-9));
    for (int p = 0; p < fwd.patch_probs.rows(); ++p)
        CHECK(fwd.patch_probs.row(p).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fwd.bag_scores.minCoeff() >= 0.0);  // ReLU scores under a convex combination

    SUBCASE("zero lambdas reduce the total to the grade loss") {
        TrainConfig bare = cfg;
        bare.lambda1 = 0;
        bare.lambda2 = 0;
        BagForward plain = run_forward(bag, bare, params, 0.0);
        CHECK(plain.total == doctest::Approx(plain.loss_grade).epsilon(1e-12));
    }
    SUBCASE("forward is deterministic in eval mode") {
        BagForward again = run_forward(bag, cfg, params, cfg.lambda1);
        CHECK(again.total == fwd.total);
        CHECK(again.attention == fwd.attention);
    }
    SUBCASE("graph mode none keeps only the residual path") {
        TrainConfig none = cfg;
        none.graph_mode = "none";
        BagForward plain = run_forward(bag, none, params, cfg.lambda1);
        CHECK(plain.loss_div == 0.0);
        CHECK(std::isfinite(plain.total));
    }
}

TEST_CASE("ranking warm-up schedule") {
    TrainConfig cfg;
    cfg.lambda1 = 0.2;
    cfg.warmup_epochs = 10;
    CHECK(lambda1_at_epoch(cfg, 0) == 0.0);
    CHECK(lambda1_at_epoch(cfg, 5) == doctest::Approx(0.1));
    CHECK(lambda1_at_epoch(cfg, 10) == doctest::Approx(0.2));
    CHECK(lambda1_at_epoch(cfg, 50) == doctest::Approx(0.2));
    cfg.warmup_epochs = 0;
    CHECK(lambda1_at_epoch(cfg, 0) == doctest::Approx(0.2));
}

TEST_CASE("checkpoint save/load is byte-exact") {
    TrainConfig cfg;
    cfg.d_h = 16;
    cfg.tau = 0.3;
    ModelParams params = ModelParams::init(cfg, 24, 9);
    fs::path dir1 = fs::temp_directory_path() / "racr_ckpt1";
    fs::path dir2 = fs::temp_directory_path() / "racr_ckpt2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    save_checkpoint(params, cfg, dir1);
    auto [loaded, loaded_cfg] = load_checkpoint(dir1);
    CHECK(config_to_json(loaded_cfg) == config_to_json(cfg));
    // float32 payload: loading loses double precision, so compare after one
    // round-trip through the format
    save_checkpoint(loaded, loaded_cfg, dir2);
    auto [twice, _] = load_checkpoint(dir2);
    CHECK(twice == loaded);
    for (const auto& file : {"manifest.json", "params.f32"}) {
        std::ifstream a(dir1 / file, std::ios::binary), b(dir2 / file, std::ios::binary);
        std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(ca == cb);
    }
}

TEST_CASE("hyperparameter defaults match the published table") {
    TrainConfig skin = TrainConfig::defaults("skin");
    CHECK(skin.num_classes == 4);
    CHECK(skin.d_h == 64);
    CHECK(skin.layers == 1);
    CHECK(skin.dropout == 0.5);
    CHECK(skin.alpha == 0.25);
    CHECK(skin.top_m == 5);
    CHECK(skin.delta == 0.02);
    CHECK(skin.k_latent == 8);
    CHECK(skin.k_spatial == 8);
    CHECK(skin.tau == 0.1);
    CHECK(skin.lambda1 == 0.2);
    CHECK(skin.lambda2 == 0.1);
    CHECK(skin.learning_rate == 1e-4);
    CHECK(skin.weight_decay == 1e-3);
    CHECK(skin.batch_size == 16);
    CHECK(skin.early_stop_patience == 9);
    CHECK(skin.warmup_epochs == 10);
    CHECK(skin.top_k == 16);
    CHECK(skin.bin_width == 0.1);

    TrainConfig head_neck = TrainConfig::defaults("head_neck");
    CHECK(head_neck.lambda1 == 0.1);
    CHECK(head_neck.max_epochs == 100);

    TrainConfig lung = TrainConfig::defaults("lung");
    CHECK(lung.num_classes == 3);
    CHECK(lung.tau == 0.3);
    CHECK(lung.lambda1 == 0.3);

    SUBCASE("config json round-trips and rejects unknown keys") {
        TrainConfig reparsed = config_from_json(config_to_json(lung));
        CHECK(config_to_json(reparsed) == config_to_json(lung));
        CHECK_THROWS_AS(config_from_json("{\"lambda_3\": 1.0}"), ValidationError);
    }
}
