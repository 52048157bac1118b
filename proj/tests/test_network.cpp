#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dlpr/network.hpp"
#include "test_util.hpp"

using namespace dlpr;
using namespace dlpr::net;
using testutil::random_tensor;

namespace {

constexpr double kPi = 3.14159265358979323846;
namespace fs = std::filesystem;

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("dlpr_net_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.input_size = 16;
  s.down_blocks = 1;
  s.up_blocks = 1;
  s.tail_blocks = 0;
  s.base_channels = 4;
  s.channel_growth = 2;
  s.dilations = {1};
  s.skip_pairs = {};
  return s;
}

}  // namespace

TEST_CASE("spec validation names the failing constraint") {
  NetworkSpec bad;
  bad.input_size = 64;
  bad.down_blocks = 3;
  bad.up_blocks = 2;  // cannot restore 64
  CHECK_THROWS_WITH_AS(bad.validate(),
                       doctest::Contains("do not restore the input extent"),
                       UsageError);

  NetworkSpec odd;
  odd.input_size = 50;
  odd.down_blocks = 2;
  odd.up_blocks = 2;
  odd.skip_pairs = {};
  CHECK_THROWS_WITH_AS(odd.validate(), doctest::Contains("not divisible"),
                       UsageError);

  NetworkSpec skip;
  skip.input_size = 64;
  skip.skip_pairs = {{0, 0}};  // 32 vs 16: incompatible extents
  CHECK_THROWS_WITH_AS(skip.validate(), doctest::Contains("skip pair"),
                       UsageError);
}

TEST_CASE("spec text round trip") {
  NetworkSpec s;  // desk defaults
  auto text = s.serialize();
  auto back = NetworkSpec::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.skip_pairs == s.skip_pairs);
  CHECK(back.dilations == s.dilations);
  CHECK_THROWS_AS(NetworkSpec::parse("nonsense = 1\n"), UsageError);
}

TEST_CASE("shape contract: small spec and desk spec") {
  auto small = tiny_spec();
  auto m = ModelF::build(small, 1);
  Graph<float> g;
  std::mt19937 rng(2);
  auto x = random_tensor<float>({2, 1, 16, 16}, rng);
  auto y = m.forward(g, x);
  CHECK(y->shape == Shape{2, 1, 16, 16});

  NetworkSpec desk;
  auto dm = ModelF::build(desk, 1);
  Graph<float> g2;
  auto x2 = random_tensor<float>({1, 1, 64, 64}, rng);
  auto y2 = dm.forward(g2, x2);
  CHECK(y2->shape == Shape{1, 1, 64, 64});
}

TEST_CASE("paper-scale block counts remain constructible") {
  NetworkSpec paper;
  paper.input_size = 128;
  paper.down_blocks = 7;
  paper.up_blocks = 6;
  paper.tail_blocks = 2;
  paper.base_channels = 2;
  paper.channel_growth = 2;
  paper.dilations = {1, 1, 2, 2, 4, 4, 8};
  paper.skip_pairs = {{5, 0}, {4, 1}, {3, 2}};
  paper.head = "up2-logistic";
  paper.validate();
  auto m = ModelF::build(paper, 3);
  Graph<float> g;
  std::mt19937 rng(4);
  auto x = random_tensor<float>({1, 1, 128, 128}, rng);
  auto y = m.forward(g, x);
  CHECK(y->shape == Shape{1, 1, 128, 128});
  for (float v : y->val) {
    CHECK(v <= 0.0f);
    CHECK(v >= static_cast<float>(-kPi));
  }
}

TEST_CASE("deterministic initialization") {
  NetworkSpec desk;
  auto a = ModelF::build(desk, 42);
  auto b = ModelF::build(desk, 42);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->val == pb[i]->val);

  auto c = ModelF::build(desk, 43);
  bool all_same = true;
  auto pc = c.parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->val != pc[i]->val) all_same = false;
  CHECK(!all_same);
}

TEST_CASE("desk parameter count equals the closed-form sum") {
  // Hand-computed from the declared layer shapes of the default spec
  // (3/3/2 blocks, base 16, growth 2, skips (1,0) and (0,1), 1x1 head):
  //   down0: 16*1*9+16 + 16*16*9+16 + 16*1+16              = 2512
  //   down1: 32*16*9+32 + 32*32*9+32 + 32*16+32            = 14432
  //   down2: 64*32*9+64 + 64*64*9+64 + 64*32+64            = 57536
  //   up0:   64*32*16+32 + 32*32*9+32 + 64*32*4+32         = 50272
  //   proj0: 32*64+32                                      = 2080
  //   up1:   32*16*16+16 + 16*16*9+16 + 32*16*4+16         = 12592
  //   proj1: 16*32+16                                      = 528
  //   up2:   16*16*16+16 + 16*16*9+16 + 16*16*4+16         = 7472
  //   tail0/tail1: 2*(16*16*9+16) each                     = 4640 + 4640
  //   head:  16+1                                          = 17
  const long expected = 2512 + 14432 + 57536 + 50272 + 2080 + 12592 + 528 +
                        7472 + 4640 + 4640 + 17;
  NetworkSpec desk;
  auto m = ModelF::build(desk, 0);
  CHECK(m.parameter_count() == expected);
  CHECK(m.parameter_count() == 156721);
}

TEST_CASE("output range and zero-initialized head") {
  NetworkSpec desk;
  auto m = ModelF::build(desk, 5);
  Graph<float> g;
  std::mt19937 rng(6);
  auto x = random_tensor<float>({1, 1, 64, 64}, rng, -3.0f, 3.0f);
  auto y = m.forward(g, x);
  for (float v : y->val) {
    CHECK(v <= 0.0f);
    CHECK(v >= static_cast<float>(-kPi));
  }
  // the head layer starts at zero, so the untrained output is uniformly
  // -pi/2
  for (float v : y->val)
    CHECK(v == doctest::Approx(-kPi / 2).epsilon(1e-6));
}

TEST_CASE("forward rejects wrong input size") {
  auto m = ModelF::build(tiny_spec(), 1);
  Graph<float> g;
  std::mt19937 rng(7);
  auto x = random_tensor<float>({1, 1, 8, 8}, rng);
  CHECK_THROWS_AS(m.forward(g, x), UsageError);
}

TEST_CASE("checkpoint save/load round trip is bit-identical") {
  auto dir = temp_dir("ckpt");
  NetworkSpec desk;
  auto m = ModelF::build(desk, 11);
  m.meta().epoch = 7;
  m.meta().optics_digest = "0123456789abcdef";
  m.save_checkpoint(dir / "m.ckpt");
  auto back = ModelF::load_checkpoint(dir / "m.ckpt");
  CHECK(back.meta().epoch == 7);
  CHECK(back.meta().seed == 11);
  CHECK(back.meta().optics_digest == "0123456789abcdef");
  CHECK(back.parameter_digest() == m.parameter_digest());

  Graph<float> g1, g2;
  std::mt19937 rng(8);
  auto x = random_tensor<float>({1, 1, 64, 64}, rng);
  auto y1 = m.forward(g1, x);
  auto y2 = back.forward(g2, x);
  CHECK(y1->val == y2->val);
}

TEST_CASE("checkpoint corruption and spec mismatch are distinct errors") {
  auto dir = temp_dir("ckpt_bad");
  auto m = ModelF::build(tiny_spec(), 1);
  m.save_checkpoint(dir / "m.ckpt");

  {
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    auto bytes = ss.str();
    std::ofstream(dir / "trunc.ckpt", std::ios::binary)
        << bytes.substr(0, bytes.size() / 2);
    bytes[0] = 'X';
    std::ofstream(dir / "magic.ckpt", std::ios::binary) << bytes;
  }
  CHECK_THROWS_AS(ModelF::load_checkpoint(dir / "magic.ckpt"), ArtifactMismatch);
  CHECK_THROWS_AS(ModelF::load_checkpoint(dir / "trunc.ckpt"), IoError);

  auto other = tiny_spec();
  other.base_channels = 8;
  CHECK_THROWS_WITH_AS(
      ModelF::load_checkpoint(dir / "m.ckpt", other),
      doctest::Contains("down0.conv1"), ArtifactMismatch);
}

TEST_CASE("gradients through the full model pass finite differences") {
  auto spec = tiny_spec();
  spec.skip_pairs = {};
  auto m = ModelD::build(spec, 21);
  std::mt19937 rng(22);
  auto x = random_tensor<double>({1, 1, 16, 16}, rng, -1.0, 1.0);
  auto t = make_tensor<double>({1, 1, 16, 16}, -1.5);
  auto params = m.parameters();
  auto build = [&](bool with_grad) {
    Graph<double> g;
    auto y = m.forward(g, x);
    auto l = l1_loss(g, y, t);
    if (with_grad) g.backward(l);
    return l->val[0];
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 3;
  const double err = grad_check(build, params, 1e-5, opt);
  CHECK(err < 1e-4);
}

TEST_CASE("dilation growth widens the empirical receptive field") {
  // Perturb one input pixel and measure the affected output radius at the
  // second conv of the deepest down block, with dilation 1 vs 2.
  auto probe = [](int dil) {
    NetworkSpec s;
    s.input_size = 32;
    s.down_blocks = 2;
    s.up_blocks = 2;
    s.tail_blocks = 0;
    s.base_channels = 4;
    s.dilations = {1, dil};
    s.skip_pairs = {};
    auto m = ModelD::build(s, 31);
    auto x0 = make_tensor<double>({1, 1, 32, 32}, 0.1);
    auto x1 = make_tensor<double>({1, 1, 32, 32}, 0.1);
    x1->at4(0, 0, 16, 16) += 1.0;
    // conv index 4 = down1.conv2 output (8x8)
    Graph<double> ga, gb;
    auto ya = m.forward_to_conv(ga, x0, 4);
    auto yb = m.forward_to_conv(gb, x1, 4);
    int max_r = 0;
    const int oh = ya->shape[2], ow = ya->shape[3];
    for (int c = 0; c < ya->shape[1]; ++c)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          if (std::abs(ya->at4(0, c, i, j) - yb->at4(0, c, i, j)) > 1e-12) {
            const int r = std::max(std::abs(i - oh / 2), std::abs(j - ow / 2));
            max_r = std::max(max_r, r);
          }
    return max_r;
  };
  CHECK(probe(2) > probe(1));
}

TEST_CASE("float/double casts preserve values") {
  auto m = ModelF::build(tiny_spec(), 9);
  auto d = m.cast<double>();
  auto back = d.cast<float>();
  CHECK(back.parameter_digest() == m.parameter_digest());
}
