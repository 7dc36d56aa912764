#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "meshtok/hash.hpp"
#include "meshtok/io.hpp"
#include "meshtok/mesh.hpp"
#include "meshtok/metrics.hpp"
#include "meshtok/rng.hpp"
#include "test_util.hpp"

using namespace meshtok;
using testutil::make_tube;
using testutil::make_tube_topology;
using testutil::random_mat;
using testutil::random_rotation;

TEST_CASE("rng: deterministic and stream-forked") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng f1 = base.fork(1), f2 = base.fork(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += (f1.next_u64() == f2.next_u64());
    CHECK(same == 0);

    Rng u(3);
    for (int i = 0; i < 1000; ++i) {
        double x = u.uniform();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        int k = u.uniform_int(-2, 5);
        CHECK(k >= -2);
        CHECK(k <= 5);
    }

    Rng n(11);
    double mean = 0.0, sq = 0.0;
    const int trials = 20000;
    for (int i = 0; i < trials; ++i) {
        double x = n.normal();
        mean += x;
        sq += x * x;
    }
    mean /= trials;
    double var = sq / trials - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("hash: content-sensitive and stable") {
    Hasher empty;
    CHECK(empty.digest() == 0xcbf29ce484222325ULL);  // FNV-1a offset basis

    Hasher h1, h2;
    h1.update(std::string("ab"));
    h2.update(std::string("ba"));
    CHECK(h1.digest() != h2.digest());

    Rng mrng(5);
    Mat m = random_mat(mrng, 3, 4);
    Hasher hm1, hm2;
    hm1.update(m);
    hm2.update(m);
    CHECK(hm1.digest() == hm2.digest());
    m(1, 2) += 1e-12;
    Hasher hm3;
    hm3.update(m);
    CHECK(hm3.digest() != hm1.digest());

    CHECK(to_hex(0xdeadbeefULL) == "00000000deadbeef");
}

TEST_CASE("vertex_adjacency: self first, symmetric") {
    std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {1, 2, 3}};
    auto adj = vertex_adjacency(4, faces);
    REQUIRE(adj.size() == 4);
    for (int i = 0; i < 4; ++i) {
        REQUIRE(!adj[i].empty());
        CHECK(adj[i][0] == i);
    }
    for (int i = 0; i < 4; ++i)
        for (size_t k = 1; k < adj[i].size(); ++k) {
            int j = adj[i][k];
            bool back = false;
            for (size_t q = 1; q < adj[j].size(); ++q) back |= (adj[j][q] == i);
            CHECK(back);
        }
    CHECK(adj[0].size() == 3);  // 0 with {1, 2}
    CHECK(adj[1].size() == 4);  // 1 with {0, 2, 3}
}

TEST_CASE("build_topology: hierarchy invariants hold") {
    auto topo = make_tube_topology(10, 10, {24, 6});
    CHECK(topo->vertex_count == 102);
    CHECK(topo->level_count() == 3);
    CHECK(topo->level_vertex_count(0) == 102);
    CHECK(topo->level_vertex_count(1) == 24);
    CHECK(topo->level_vertex_count(2) == 6);
    CHECK_NOTHROW(topo->validate());

    for (const auto& level : topo->level_maps) {
        std::set<int> covered;
        for (size_t c = 0; c < level.cells.size(); ++c) {
            REQUIRE(!level.cells[c].empty());
            double wsum = 0.0;
            for (double w : level.weights[c]) wsum += w;
            CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
            for (int f : level.cells[c]) {
                CHECK(covered.count(f) == 0);
                covered.insert(f);
            }
        }
    }

    const auto& n0 = topo->neighborhoods[0];
    for (int i = 0; i < topo->vertex_count; ++i) {
        CHECK(n0[i][0] == i);
        for (size_t k = 1; k < n0[i].size(); ++k) {
            int j = n0[i][k];
            bool back = false;
            for (size_t q = 1; q < n0[j].size(); ++q) back |= (n0[j][q] == i);
            CHECK(back);
        }
    }

    MeshTopology broken = *topo;
    broken.level_maps[0].weights[0][0] += 0.5;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);

    MeshTopology bad_face = *topo;
    bad_face.faces[0][1] = topo->vertex_count + 3;
    CHECK_THROWS_AS(bad_face.validate(), std::invalid_argument);
}

namespace {

RegisteredMesh tube_mesh(TopologyPtr topo, const Mat& verts) {
    RegisteredMesh m;
    m.topology = std::move(topo);
    m.vertices = verts;
    return m;
}

}  // namespace

TEST_CASE("canonicalize: centering and rotation removal") {
    auto topo = make_tube_topology(6, 6, {8});
    testutil::TubeMesh tube = make_tube(6, 6);
    Mat centered = tube.vertices.rowwise() - tube.vertices.colwise().mean();
    RegisteredMesh m = tube_mesh(topo, centered);

    CanonicalMesh c = canonicalize(m, Mat3::Identity());
    CHECK((c.vertices - centered).cwiseAbs().maxCoeff() < 1e-12);

    RegisteredMesh shifted = m;
    shifted.vertices.rowwise() += Eigen::RowVector3d(1.0, 0.0, 0.0);
    CanonicalMesh c2 = canonicalize(shifted, Mat3::Identity());
    CHECK((c2.vertices - centered).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(c2.vertices.colwise().mean().norm() < 1e-6);

    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        Mat3 r = random_rotation(rng);
        RegisteredMesh rotated = tube_mesh(topo, centered * r.transpose());
        CanonicalMesh back = canonicalize(rotated, r);
        CHECK((back.vertices - centered).cwiseAbs().maxCoeff() < 1e-6);
    }

    RegisteredMesh bad = m;
    bad.vertices(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(canonicalize(bad, Mat3::Identity()), std::invalid_argument);
}

TEST_CASE("apply_orientation: rotation semantics and round trip") {
    auto topo = make_tube_topology(6, 6, {8});
    Mat verts = make_tube(6, 6).vertices;
    Mat centered = verts.rowwise() - verts.colwise().mean();
    CanonicalMesh c;
    c.topology = topo;
    c.vertices = centered;

    RegisteredMesh same = apply_orientation(c, Mat3::Identity());
    CHECK((same.vertices - centered).cwiseAbs().maxCoeff() == 0.0);

    Mat3 flip;
    flip << -1, 0, 0, 0, -1, 0, 0, 0, 1;  // 180 degrees about z
    RegisteredMesh flipped = apply_orientation(c, flip);
    CHECK((flipped.vertices.col(0) + centered.col(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((flipped.vertices.col(1) + centered.col(1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((flipped.vertices.col(2) - centered.col(2)).cwiseAbs().maxCoeff() < 1e-12);

    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        Mat3 r = random_rotation(rng);
        RegisteredMesh m = tube_mesh(topo, random_mat(rng, topo->vertex_count, 3));
        CanonicalMesh canon = canonicalize(m, r);
        RegisteredMesh redone = apply_orientation(canon, r);
        Mat expected = m.vertices.rowwise() - m.vertices.colwise().mean();
        CHECK((redone.vertices - expected).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("regress_joints: selection, centroid, oracle, linearity") {
    auto topo = make_tube_topology(6, 6, {8});
    Rng rng(31);
    RegisteredMesh m = tube_mesh(topo, random_mat(rng, topo->vertex_count, 3));

    JointRegressor onehot;
    onehot.layout = "custom";
    onehot.matrix = Mat::Zero(3, topo->vertex_count);
    onehot.matrix(0, 4) = 1.0;
    onehot.matrix(1, 17) = 1.0;
    onehot.matrix(2, 30) = 1.0;
    JointSet sel = regress_joints(m, onehot);
    CHECK((sel.joints.row(0) - m.vertices.row(4)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sel.joints.row(1) - m.vertices.row(17)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sel.joints.row(2) - m.vertices.row(30)).cwiseAbs().maxCoeff() == 0.0);

    JointRegressor uniform;
    uniform.layout = "custom";
    uniform.matrix = Mat::Constant(1, topo->vertex_count, 1.0 / topo->vertex_count);
    JointSet centroid = regress_joints(m, uniform);
    CHECK((centroid.joints.row(0) - m.vertices.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

    JointRegressor convex;
    convex.layout = "custom";
    convex.matrix = Mat::Zero(5, topo->vertex_count);
    for (int j = 0; j < 5; ++j) {
        double total = 0.0;
        for (int v = 0; v < topo->vertex_count; ++v) {
            double w = rng.uniform();
            convex.matrix(j, v) = w;
            total += w;
        }
        convex.matrix.row(j) /= total;
    }
    JointSet got = regress_joints(m, convex);
    Mat oracle = Mat::Zero(5, 3);
    for (int j = 0; j < 5; ++j)
        for (int v = 0; v < topo->vertex_count; ++v)
            for (int c = 0; c < 3; ++c) oracle(j, c) += convex.matrix(j, v) * m.vertices(v, c);
    CHECK((got.joints - oracle).cwiseAbs().maxCoeff() < 1e-6);

    RegisteredMesh m2 = tube_mesh(topo, random_mat(rng, topo->vertex_count, 3));
    RegisteredMesh blend = tube_mesh(topo, 0.3 * m.vertices + 0.7 * m2.vertices);
    Mat lin = 0.3 * regress_joints(m, convex).joints + 0.7 * regress_joints(m2, convex).joints;
    CHECK((regress_joints(blend, convex).joints - lin).cwiseAbs().maxCoeff() < 1e-6);

    JointRegressor wrong;
    wrong.layout = "custom";
    wrong.matrix = Mat::Constant(2, topo->vertex_count + 1, 1.0 / (topo->vertex_count + 1));
    CHECK_THROWS_AS(regress_joints(m, wrong), std::invalid_argument);
}

TEST_CASE("pve and mpjpe: anchors and loop oracles") {
    auto topo = make_tube_topology(6, 6, {8});
    Rng rng(43);
    RegisteredMesh gt = tube_mesh(topo, random_mat(rng, topo->vertex_count, 3));

    CHECK(pve(gt, gt) == 0.0);

    RegisteredMesh off = gt;
    off.vertices.col(0).array() += 0.001;
    CHECK(pve(off, gt) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pve(off, gt) == pve(gt, off));

    RegisteredMesh noisy = gt;
    noisy.vertices += random_mat(rng, topo->vertex_count, 3, 0.01);
    double expect = 0.0;
    for (int v = 0; v < topo->vertex_count; ++v) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) {
            double diff = noisy.vertices(v, c) - gt.vertices(v, c);
            d += diff * diff;
        }
        expect += std::sqrt(d);
    }
    expect = expect / topo->vertex_count * 1000.0;
    CHECK(pve(noisy, gt) == doctest::Approx(expect).epsilon(1e-9));

    JointSet a{random_mat(rng, 12, 3)};
    JointSet same = a;
    CHECK(mpjpe(a, same) == 0.0);
    JointSet b = a;
    b.joints.col(2).array() += 0.02;
    CHECK(mpjpe(b, a) == doctest::Approx(20.0).epsilon(1e-12));

    JointSet c{a.joints + random_mat(rng, 12, 3, 0.05)};
    double jexpect = 0.0;
    for (int j = 0; j < 12; ++j) jexpect += (c.joints.row(j) - a.joints.row(j)).norm();
    jexpect = jexpect / 12 * 1000.0;
    CHECK(mpjpe(c, a) == doctest::Approx(jexpect).epsilon(1e-9));

    auto other = make_tube_topology(6, 6, {8});
    RegisteredMesh foreign = tube_mesh(other, gt.vertices);
    foreign.vertices.resize(topo->vertex_count - 1, 3);
    CHECK_THROWS_AS(pve(foreign, gt), std::invalid_argument);
}

TEST_CASE("procrustes_align: recovery, optimality, degeneracy") {
    Rng rng(57);

    JointSet x{random_mat(rng, 10, 3)};
    Similarity ident = procrustes_align(x, x);
    CHECK(ident.scale == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((ident.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(ident.translation.norm() < 1e-9);
    CHECK(!ident.degenerate);

    Mat3 r0 = random_rotation(rng);
    Vec3 t0(0.3, -0.2, 0.9);
    JointSet y{(2.0 * (x.joints * r0.transpose())).rowwise() + t0.transpose()};
    Similarity rec = procrustes_align(x, y);
    CHECK(rec.scale == doctest::Approx(2.0).epsilon(1e-6));
    CHECK((rec.rotation - r0).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((rec.translation - t0).norm() < 1e-6);

    JointSet p{random_mat(rng, 8, 3)};
    JointSet q{random_mat(rng, 8, 3)};
    Similarity best = procrustes_align(p, q);
    double best_obj = (best.apply(p.joints) - q.joints).squaredNorm();
    for (int trial = 0; trial < 10000; ++trial) {
        Similarity s;
        s.scale = rng.uniform(0.2, 3.0);
        s.rotation = random_rotation(rng);
        s.translation = Vec3(rng.normal(), rng.normal(), rng.normal());
        double obj = (s.apply(p.joints) - q.joints).squaredNorm();
        CHECK(best_obj <= obj + 1e-9);
    }

    JointSet coincident{Mat::Zero(4, 3)};
    JointSet target{Mat::Ones(4, 3)};
    Similarity degen = procrustes_align(coincident, target);
    CHECK(degen.degenerate);
    CHECK(degen.scale == 1.0);
    CHECK((degen.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((degen.translation - Vec3::Ones()).norm() < 1e-12);

    Mat line(5, 3);
    for (int i = 0; i < 5; ++i) line.row(i) << i * 0.1, 0.0, 0.0;
    Similarity collinear = procrustes_align(JointSet{line}, JointSet{line});
    CHECK(collinear.degenerate);
}

TEST_CASE("pa_mpjpe: similarity removal and dominance") {
    Rng rng(71);
    JointSet gt{random_mat(rng, 14, 3)};

    CHECK(pa_mpjpe(gt, gt) < 1e-6);

    for (int trial = 0; trial < 100; ++trial) {
        Similarity s;
        s.scale = rng.uniform(0.5, 2.0);
        s.rotation = random_rotation(rng);
        s.translation = Vec3(rng.normal(), rng.normal(), rng.normal());
        JointSet moved{s.apply(gt.joints)};
        CHECK(pa_mpjpe(moved, gt) < 1e-6);
        JointSet noisy{moved.joints + random_mat(rng, 14, 3, 0.01)};
        CHECK(pa_mpjpe(noisy, gt) <= mpjpe(noisy, gt) + 1e-9);
    }
}

TEST_CASE("obj io: write/read round trip") {
    auto dir = testutil::scratch_dir("core_obj");
    testutil::TubeMesh tube = make_tube(5, 7);
    auto path = dir / "tube.obj";
    write_obj(path, tube.vertices, tube.faces);
    ObjData back = read_obj(path);
    REQUIRE(back.vertices.rows() == tube.vertices.rows());
    REQUIRE(back.faces.size() == tube.faces.size());
    CHECK((back.vertices - tube.vertices).cwiseAbs().maxCoeff() < 1e-8);
    for (size_t f = 0; f < tube.faces.size(); ++f)
        for (int k = 0; k < 3; ++k) CHECK(back.faces[f][k] == tube.faces[f][k]);
}

TEST_CASE("pfm io: float32 image round trip") {
    auto dir = testutil::scratch_dir("core_pfm");
    Rng rng(5);
    int w = 9, h = 6;
    Mat img = random_mat(rng, w * h, 1);
    auto path = dir / "img.pfm";
    write_pfm(path, img, w, h);
    int rw = 0, rh = 0;
    Mat back = read_pfm(path, &rw, &rh);
    CHECK(rw == w);
    CHECK(rh == h);
    REQUIRE(back.rows() == img.rows());
    for (int i = 0; i < img.rows(); ++i)
        CHECK(back(i, 0) == static_cast<double>(static_cast<float>(img(i, 0))));
}

TEST_CASE("topology and regressor json round trips") {
    auto dir = testutil::scratch_dir("core_json");
    auto topo = make_tube_topology(8, 8, {16, 4});
    auto tpath = dir / "topo.json";
    write_topology_json(tpath, *topo);
    MeshTopology back = read_topology_json(tpath);
    CHECK_NOTHROW(back.validate());
    CHECK(back.hash() == topo->hash());

    JointRegressor reg;
    reg.layout = "h36m17";
    Rng rng(9);
    reg.matrix = Mat::Zero(4, topo->vertex_count);
    for (int j = 0; j < 4; ++j) {
        for (int v = 0; v < 6; ++v) reg.matrix(j, (j * 11 + v) % topo->vertex_count) += 1.0 / 6;
    }
    auto rpath = dir / "reg.json";
    write_regressor_json(rpath, reg);
    JointRegressor rback = read_regressor_json(rpath);
    CHECK(rback.layout == "h36m17");
    CHECK((rback.matrix - reg.matrix).cwiseAbs().maxCoeff() == 0.0);
    CHECK_NOTHROW(rback.validate());
}

TEST_CASE("token file round trip") {
    auto dir = testutil::scratch_dir("core_tok");
    TokenFile tf;
    tf.n = 16;
    tf.s = 512;
    tf.codec_fingerprint = "00ff00ff00ff00ff";
    tf.tokens = {0, 5, 511, 3, 16, 2, 9, 1, 0, 0, 7, 8, 200, 100, 50, 25};
    auto path = dir / "tokens.json";
    write_tokens_json(path, tf);
    TokenFile back = read_tokens_json(path);
    CHECK(back.n == tf.n);
    CHECK(back.s == tf.s);
    CHECK(back.codec_fingerprint == tf.codec_fingerprint);
    CHECK(back.tokens == tf.tokens);
}
