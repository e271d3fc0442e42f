#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vemd/common.hpp"
#include "vemd/config.hpp"
#include "vemd/emotion_head.hpp"
#include "vemd/encoder.hpp"
#include "vemd/skeleton.hpp"
#include "vemd/sr_decoders.hpp"

using namespace vemd;
using vemd::testing::gradient_error;
namespace nn = torch::nn;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.latent_channels = 8;
  c.width = 4;
  c.context_dim = 16;
  return c;
}

HeatmapDecoderOptions tiny_heatmap(int c_out = 18) {
  HeatmapDecoderOptions o;
  o.latent_channels = 4;
  o.out_channels = c_out;
  o.widths = {8, 6, 4, 4};
  o.limbs_width = 4;
  o.stages = 2;
  o.convs_per_stage = 2;
  return o;
}

PersonQueryOptions tiny_query(int limbs, int q) {
  PersonQueryOptions o;
  o.latent_channels = 4;
  o.num_limbs = limbs;
  o.num_queries = q;
  o.model_dim = 16;
  o.heads = 4;
  o.encoder_layers = 1;
  o.decoder_layers = 1;
  return o;
}

}  // namespace

TEST(ResidualBlock, HalvesSpatialDims) {
  torch::manual_seed(0);
  ResidualBlock block(64, 128);
  auto y = block(torch::randn({1, 64, 56, 56}));
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 128, 28, 28}));
  EXPECT_THROW(block(torch::randn({1, 64, 7, 8})), ShapeError);
}

TEST(ResidualBlock, ZeroInputFinite) {
  torch::manual_seed(0);
  ResidualBlock block(4, 6);
  block->eval();
  auto y = block(torch::zeros({2, 4, 8, 8}));
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
  // Spatially constant: only biases reach the output.
  auto centre = y.index({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(1, 3),
                         torch::indexing::Slice(1, 3)});
  EXPECT_TRUE(torch::allclose(centre, centre.select(2, 0).select(2, 0).unsqueeze(-1).unsqueeze(-1).expand_as(centre)));
}

TEST(ResidualBlock, GradientMatchesFiniteDifferences) {
  torch::manual_seed(1);
  ResidualBlock block(2, 3);
  block->to(torch::kFloat64);
  auto w = torch::randn({2, 3, 2, 2}, torch::kFloat64);
  auto f = [&](const torch::Tensor& x) { return (block(x) * w).sum(); };
  EXPECT_LT(gradient_error(f, torch::randn({2, 2, 4, 4})), 1e-4);
}

TEST(Encoder, FullWidthLatentShape) {
  torch::manual_seed(0);
  EncoderConfig cfg;
  cfg.width = 4;
  cfg.context_dim = 16;
  VariationalEncoder enc(cfg);
  enc->eval();
  torch::NoGradGuard ng;
  auto z = enc(torch::rand({5, 3, 224, 224}));
  EXPECT_EQ(z.z1.sizes(), (std::vector<int64_t>{5, 512, 7, 7}));
  EXPECT_EQ(z.z2.sizes(), (std::vector<int64_t>{5, 512, 7, 7}));
  EXPECT_EQ(torch::cat({z.z1, z.z2}, 1).sizes(), (std::vector<int64_t>{5, 1024, 7, 7}));
}

TEST(Encoder, BothBackbonesAndBadInput) {
  torch::manual_seed(0);
  for (auto ctx : {ContextBackbone::ToyPatchTransformer, ContextBackbone::ToyConv})
    for (auto mt : {MultitaskBackbone::CustomResidual, MultitaskBackbone::StandardResidualCnn}) {
      auto cfg = tiny_encoder();
      cfg.context_backbone = ctx;
      cfg.multitask_backbone = mt;
      VariationalEncoder enc(cfg);
      auto z = enc(torch::rand({2, 3, 224, 224}));
      EXPECT_EQ(z.z1.sizes(), z.z2.sizes());
      EXPECT_EQ(z.z2.sizes(), (std::vector<int64_t>{2, 8, 7, 7}));
      EXPECT_THROW(enc(torch::rand({2, 3, 112, 112})), ShapeError);
    }
}

TEST(Encoder, FrozenContextUnchangedAfterStep) {
  torch::manual_seed(0);
  VariationalEncoder enc(tiny_encoder());
  enc->freeze_context();
  enc->train();
  std::vector<torch::Tensor> before;
  for (const auto& p : enc->context->parameters()) before.push_back(p.detach().clone());
  std::vector<torch::Tensor> before_buffers;
  for (const auto& b : enc->context->buffers()) before_buffers.push_back(b.detach().clone());
  torch::optim::Adam opt(enc->parameters(), 1e-2);
  auto z = enc(torch::rand({2, 3, 224, 224}));
  auto loss = z.z1.pow(2).mean() + z.z2.pow(2).mean();
  opt.zero_grad();
  loss.backward();
  for (const auto& p : enc->multitask->parameters()) {
    if (p.grad().defined()) {
      EXPECT_GT(p.grad().norm().item<double>(), 0.0);
      break;
    }
  }
  opt.step();
  auto params = enc->context->parameters();
  for (size_t i = 0; i < params.size(); ++i) EXPECT_TRUE(torch::equal(params[i], before[i]));
  auto buffers = enc->context->buffers();
  for (size_t i = 0; i < buffers.size(); ++i) EXPECT_TRUE(torch::equal(buffers[i], before_buffers[i]));
}

TEST(Encoder, Z2ReceivesGradient) {
  torch::manual_seed(0);
  VariationalEncoder enc(tiny_encoder());
  enc->freeze_context();
  auto z = enc(torch::rand({2, 3, 224, 224}));
  z.z2.retain_grad();
  (z.z2.sum() * 0.5 + z.z1.sum()).backward();
  EXPECT_GT(z.z2.grad().norm().item<double>(), 0.0);
}

TEST(Encoder, DeterministicInEval) {
  torch::manual_seed(0);
  VariationalEncoder enc(tiny_encoder());
  enc->eval();
  torch::NoGradGuard ng;
  auto x = torch::rand({2, 3, 224, 224});
  auto a = enc(x), b = enc(x);
  EXPECT_TRUE(torch::equal(a.z1, b.z1));
  EXPECT_TRUE(torch::equal(a.z2, b.z2));
}

TEST(Mmd, IdenticalSamplesGiveZero) {
  torch::manual_seed(0);
  auto x = torch::randn({64, 8}, torch::kFloat64);
  EXPECT_NEAR(mmd_loss(x, x).item<double>(), 0.0, 1e-6);
}

TEST(Mmd, SymmetricAndNonNegative) {
  torch::manual_seed(0);
  for (int t = 0; t < 10; ++t) {
    auto x = torch::randn({32, 5}, torch::kFloat64);
    auto y = torch::randn({32, 5}, torch::kFloat64) * 1.5 + 0.3;
    const double xy = mmd_loss(x, y).item<double>();
    EXPECT_GE(xy, -1e-12);
    EXPECT_NEAR(xy, mmd_loss(y, x).item<double>(), 1e-9);
  }
}

TEST(Mmd, JointPermutationInvariant) {
  torch::manual_seed(2);
  auto x = torch::randn({40, 6}, torch::kFloat64);
  auto y = torch::randn({40, 6}, torch::kFloat64) + 1.0;
  auto p = torch::randperm(40);
  auto q = torch::randperm(40);
  EXPECT_NEAR(mmd_loss(x, y, 1.3).item<double>(), mmd_loss(x.index_select(0, p), y.index_select(0, q), 1.3).item<double>(),
              1e-12);
}

TEST(Mmd, ShiftedDistributionIsTenfoldLarger) {
  double same = 0.0, shifted = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    torch::manual_seed(seed);
    auto x = torch::randn({512, 8}, torch::kFloat64);
    auto y0 = torch::randn({512, 8}, torch::kFloat64);
    auto y5 = torch::randn({512, 8}, torch::kFloat64) + 5.0;
    same += mmd_loss(x, y0).item<double>();
    shifted += mmd_loss(x, y5).item<double>();
  }
  EXPECT_GE(shifted / 20, 10 * same / 20);
}

TEST(Mmd, Errors) {
  EXPECT_THROW(mmd_loss(torch::randn({1, 4}), torch::randn({1, 4})), ArgumentError);
  EXPECT_THROW(mmd_loss(torch::randn({4, 4}), torch::randn({4, 3})), ShapeError);
}

TEST(PersonQuery, BodyShapesQ100) {
  torch::manual_seed(0);
  PersonQueryOptions o;
  o.latent_channels = 512;
  o.num_queries = 100;
  o.num_limbs = 18;
  PersonQueryDecoder dec(o);
  dec->eval();
  torch::NoGradGuard ng;
  auto out = dec->decode(torch::randn({512, 7, 7}), body_skeleton());
  ASSERT_EQ(out.limbs.sizes(), (std::vector<int64_t>{1, 100, 72}));
  ASSERT_EQ(out.adjacency.sizes(), (std::vector<int64_t>{1, 100, 18, 18}));
  for (const auto& t : {out.limbs, out.adjacency}) {
    EXPECT_GE(t.min().item<float>(), 0.0f);
    EXPECT_LE(t.max().item<float>(), 1.0f);
  }
}

TEST(PersonQuery, FaceSingleQueryAndMismatch) {
  torch::manual_seed(0);
  PersonQueryDecoder dec(tiny_query(20, 1));
  auto out = dec->decode(torch::randn({4, 7, 7}), face_query_skeleton());
  EXPECT_EQ(out.limbs.sizes(), (std::vector<int64_t>{1, 1, 80}));
  EXPECT_EQ(out.adjacency.sizes(), (std::vector<int64_t>{1, 1, 20, 20}));
  EXPECT_THROW(dec->decode(torch::randn({4, 7, 7}), body_skeleton()), ShapeError);
}

TEST(PersonQuery, MultiscaleFeatures) {
  torch::manual_seed(0);
  PersonQueryDecoder dec(tiny_query(18, 3));
  auto f = dec->multiscale_features(torch::randn({2, 4, 7, 7}));
  EXPECT_EQ(f[0].size(-1), 7);
  EXPECT_EQ(f[1].size(-1), 14);
  EXPECT_EQ(f[2].size(-1), 28);
}

TEST(PersonQuery, ParameterCountGrowsWithQ) {
  torch::manual_seed(0);
  PersonQueryDecoder a(tiny_query(18, 10)), b(tiny_query(18, 50));
  EXPECT_LT(count_parameters(*a), count_parameters(*b));
  EXPECT_EQ(count_parameters(*b) - count_parameters(*a), 40 * 16);
}

TEST(PersonQuery, BoundedForExtremeInputs) {
  torch::manual_seed(0);
  PersonQueryDecoder dec(tiny_query(18, 4));
  dec->eval();
  torch::NoGradGuard ng;
  for (double scale : {0.0, 1.0, 1e3}) {
    auto out = dec(torch::randn({2, 4, 7, 7}) * scale);
    EXPECT_TRUE(torch::isfinite(out.limbs).all().item<bool>());
    EXPECT_GE(out.limbs.min().item<float>(), 0.0f);
    EXPECT_LE(out.limbs.max().item<float>(), 1.0f);
    EXPECT_GE(out.adjacency.min().item<float>(), 0.0f);
    EXPECT_LE(out.adjacency.max().item<float>(), 1.0f);
  }
}

TEST(PersonQuery, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  PersonQueryDecoder dec(tiny_query(3, 2));
  dec->to(torch::kFloat64);
  dec->eval();
  auto wl = torch::randn({2, 2, 12}, torch::kFloat64);
  auto wa = torch::randn({2, 2, 3, 3}, torch::kFloat64);
  auto f = [&](const torch::Tensor& z) {
    auto out = dec(z);
    return (out.limbs * wl).sum() + (out.adjacency * wa).sum();
  };
  EXPECT_LT(gradient_error(f, torch::randn({2, 4, 7, 7})), 1e-4);
}

TEST(TokenEncoderLayer, MatchesReferenceLayer) {
  torch::manual_seed(0);
  TokenEncoderLayer mine(8, 2, 16);
  nn::TransformerEncoderLayer ref(nn::TransformerEncoderLayerOptions(8, 2).dim_feedforward(16).dropout(0.0));
  {
    torch::NoGradGuard ng;
    ref->self_attn->in_proj_weight.copy_(mine->in_proj->weight);
    ref->self_attn->in_proj_bias.copy_(mine->in_proj->bias);
    ref->self_attn->out_proj->weight.copy_(mine->out_proj->weight);
    ref->self_attn->out_proj->bias.copy_(mine->out_proj->bias);
    ref->linear1->weight.copy_(mine->linear1->weight);
    ref->linear1->bias.copy_(mine->linear1->bias);
    ref->linear2->weight.copy_(mine->linear2->weight);
    ref->linear2->bias.copy_(mine->linear2->bias);
  }
  ref->eval();
  auto x = torch::randn({11, 3, 8});
  EXPECT_TRUE(torch::allclose(mine(x), ref(x), 1e-5, 1e-5));
}

TEST(Stgcn, SingleFrameShape) {
  torch::manual_seed(0);
  Stgcn g(StgcnOptions{});
  auto out = g(torch::rand({1, 5, 72}), torch::rand({1, 5, 18, 18}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 5, g->feat_dim()}));
  EXPECT_THROW(g(torch::rand({0, 5, 72}), torch::rand({0, 5, 18, 18})), ArgumentError);
  EXPECT_THROW(g(torch::rand({1, 5, 72}), torch::rand({1, 5, 17, 17})), ShapeError);
}

TEST(Stgcn, SingleFrameIsPerFrameTransform) {
  torch::manual_seed(0);
  Stgcn g(StgcnOptions{});
  auto limbs = torch::rand({3, 2, 72});
  auto adj = torch::rand({3, 2, 18, 18});
  auto all = g(limbs, adj);
  // With one frame the temporal conv only sees its centre tap.
  auto first = g(limbs.slice(0, 0, 1), adj.slice(0, 0, 1));
  EXPECT_EQ(first.sizes(), (std::vector<int64_t>{1, 2, 72}));
  EXPECT_TRUE(torch::isfinite(first).all().item<bool>());
}

TEST(Stgcn, IdentityAdjacencyIsPerNodeLinear) {
  torch::manual_seed(0);
  StgcnBlock block(4, 6, 3, true);
  auto x = torch::randn({1, 2, 3, 5, 4});
  auto eye = torch::eye(5).expand({1, 2, 3, 5, 5});
  auto got = block->spatial(x, eye);
  auto w = block->node_map->weight, b = block->node_map->bias;
  for (int n = 0; n < 5; ++n) {
    auto node = x.select(3, n);
    auto expect = torch::matmul(node, w.t()) + b;
    EXPECT_TRUE(torch::allclose(got.select(3, n), expect, 1e-5, 1e-6));
  }
}

TEST(Stgcn, AllOnesAdjacencyEqualsMeanPool) {
  torch::manual_seed(0);
  StgcnBlock block(4, 6, 3, true);
  auto x = torch::randn({1, 1, 2, 5, 4});
  auto ones = torch::ones({1, 1, 2, 5, 5});
  auto got = block->spatial(x, ones);
  auto pooled = x.mean(3, true).expand_as(x);
  auto expect = block->node_map(pooled);
  EXPECT_TRUE(torch::allclose(got, expect, 1e-5, 1e-6));
  for (int n = 1; n < 5; ++n) EXPECT_TRUE(torch::allclose(got.select(3, n), got.select(3, 0)));
}

TEST(HeatmapDecoder, FullWidthTraceAndShape) {
  torch::manual_seed(0);
  HeatmapDecoderOptions o;
  o.latent_channels = 512;
  o.out_channels = 18;
  HeatmapDecoder dec(o);
  dec->eval();
  torch::NoGradGuard ng;
  std::vector<TraceRow> trace;
  auto y = dec->forward_traced(torch::randn({512, 7, 7}), &trace);
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 18, 56, 56}));
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
  const std::vector<std::pair<std::string, std::vector<int64_t>>> expected{
      {"up5", {2048, 7, 7}},    {"up4", {512, 14, 14}},  {"dec4", {512, 14, 14}}, {"up3", {256, 28, 28}},
      {"dec3", {256, 28, 28}},  {"up2", {128, 56, 56}},  {"dec2", {128, 56, 56}}, {"up1", {128, 56, 56}},
      {"dec1", {128, 56, 56}},  {"final", {18, 56, 56}}, {"limbs", {18, 56, 56}}};
  ASSERT_EQ(trace.size(), expected.size());
  for (size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(trace[i].stage, expected[i].first);
    EXPECT_EQ(trace[i].shape, expected[i].second) << trace[i].stage;
  }
}

TEST(HeatmapDecoder, FaceHeadAndBadSpatial) {
  torch::manual_seed(0);
  auto o = tiny_heatmap(83);
  o.latent_channels = 512;
  HeatmapDecoder dec(o);
  dec->eval();
  torch::NoGradGuard ng;
  EXPECT_EQ(dec(torch::randn({512, 7, 7})).sizes(), (std::vector<int64_t>{1, 83, 56, 56}));
  EXPECT_THROW(dec(torch::randn({1, 512, 8, 8})), ShapeError);
}

TEST(HeatmapDecoder, GradientMatchesFiniteDifferences) {
  torch::manual_seed(4);
  auto o = tiny_heatmap(2);
  o.widths = {3, 2, 2, 2};
  o.limbs_width = 2;
  o.stages = 1;
  o.convs_per_stage = 1;
  HeatmapDecoder dec(o);
  dec->to(torch::kFloat64);
  dec->eval();
  auto w = torch::randn({1, 2, 56, 56}, torch::kFloat64);
  auto f = [&](const torch::Tensor& z) { return (dec(z) * w).sum(); };
  EXPECT_LT(gradient_error(f, torch::randn({1, 4, 7, 7}), 30), 1e-4);
}

TEST(FuseLatent, FullWidthAndIdentity) {
  FuseLatent fuse(512, 1);
  EXPECT_EQ(fuse(torch::randn({2, 512, 1, 1}), torch::randn({2, 512, 1, 1})).sizes(),
            (std::vector<int64_t>{2, 1024}));
  FuseLatent square(3, 1);
  square->identity_init();
  square->phi->bias.data().copy_(torch::tensor({1.f, 2.f, 3.f, 4.f, 5.f, 6.f}));
  auto y = square(torch::zeros({1, 3, 1, 1}), torch::zeros({1, 3, 1, 1}));
  EXPECT_TRUE(torch::equal(y[0], square->phi->bias.detach()));
  auto a = torch::randn({1, 3, 1, 1});
  auto b = torch::randn({1, 3, 1, 1});
  square->phi->bias.data().zero_();
  EXPECT_TRUE(torch::allclose(square(a, b), torch::cat({a.flatten(1), b.flatten(1)}, 1)));
  EXPECT_THROW(square(torch::zeros({1, 3, 1, 1}), torch::zeros({1, 2, 1, 1})), ShapeError);
}

TEST(FuseLatent, GradientReachesBothInputs) {
  torch::manual_seed(0);
  FuseLatent fuse(4, 7);
  auto z1 = torch::randn({2, 4, 7, 7}, torch::requires_grad());
  auto z2 = torch::randn({2, 4, 7, 7}, torch::requires_grad());
  fuse(z1, z2).pow(2).sum().backward();
  EXPECT_GT(z1.grad().norm().item<double>(), 0.0);
  EXPECT_GT(z2.grad().norm().item<double>(), 0.0);
}

TEST(FrameVector, ReferenceDimensions) {
  EXPECT_EQ(frame_vector_dim(512, SrMode::Raw, {56 * 56}), 4160);
  EXPECT_EQ(frame_vector_dim(512, SrMode::Projected, {56 * 56}, 1.0), 1536);
  EXPECT_EQ(frame_vector_dim(512, SrMode::Raw, {4 * 50 * 18}), 4624);
  EXPECT_EQ(frame_vector_dim(512, SrMode::None, {}), 1024);
  EXPECT_EQ(frame_vector_dim(512, SrMode::Raw, {56 * 56, 56 * 56}), 1024 + 2 * 3136);
  EXPECT_EQ(frame_vector_dim(512, SrMode::Projected, {56 * 56, 56 * 56}, 0.5), 1024 + 512);
  EXPECT_THROW(projected_sr_dim(512, 0.0), ConfigError);
  EXPECT_THROW(projected_sr_dim(512, -1.0), ConfigError);
}

TEST(FrameVector, AblationGridDimensionsExhaustive) {
  const int cz = 512;
  const int q = 7;
  for (auto dec : {DecoderKind::None, DecoderKind::PersonQuery, DecoderKind::Heatmap})
    for (auto mod : {SrModality::Body, SrModality::Face, SrModality::BodyFace})
      for (bool raw : {true, false})
        for (double factor : kProjectionFactors) {
          if (raw && factor != 1.0) continue;
          ExperimentConfig cfg;
          cfg.encoder.latent_channels = cz;
          cfg.decoder = dec;
          cfg.sr_modality = mod;
          cfg.sr_to_decoder = dec != DecoderKind::None;
          cfg.projection = {raw, factor};
          const auto skels = sr_skeletons(dec, mod);
          std::vector<int> queries(skels.size(), q);
          int64_t delta = 0;
          if (cfg.sr_to_decoder) {
            for (const auto& s : skels) {
              const int limbs = SkeletonRegistry::builtin().get(s).num_limbs();
              const int64_t raw_dim = dec == DecoderKind::Heatmap ? 56 * 56 : 4 * q * limbs;
              delta += raw ? raw_dim : std::lround(factor * cz);
            }
          }
          EXPECT_EQ(embedding_size(cfg, queries), 2 * cz + delta)
              << to_string(dec) << " " << to_string(mod) << " " << cfg.projection.label();
        }
}

TEST(Fap, UniformWeightsGiveMean) {
  auto f = torch::randn({6, 4}, torch::kFloat64);
  torch::Tensor alpha;
  auto out = frames_attention_pool(f, torch::zeros({4}, torch::kFloat64), torch::zeros({}, torch::kFloat64), &alpha);
  EXPECT_TRUE(torch::allclose(out, f.mean(0)));
  EXPECT_TRUE(torch::allclose(alpha, torch::full({6}, 1.0 / 6, torch::kFloat64)));
}

TEST(Fap, SingleFrameExact) {
  auto f = torch::randn({1, 5});
  EXPECT_TRUE(torch::equal(frames_attention_pool(f, torch::randn({5}), torch::randn({})), f[0]));
}

TEST(Fap, HandComputedSoftmax) {
  auto f = torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, torch::kFloat64);
  auto w = torch::tensor({std::log(3.0), 0.0}, torch::kFloat64);
  torch::Tensor alpha;
  auto out = frames_attention_pool(f, w, torch::zeros({}, torch::kFloat64), &alpha);
  EXPECT_NEAR(alpha[0].item<double>(), 0.75, 1e-12);
  EXPECT_NEAR(alpha[1].item<double>(), 0.25, 1e-12);
  EXPECT_NEAR(out[0].item<double>(), 0.75, 1e-12);
  EXPECT_NEAR(out[1].item<double>(), 0.25, 1e-12);
}

TEST(Fap, WeightsAreConvexAndPermutationEquivariant) {
  torch::manual_seed(0);
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + t % 9;
    auto f = torch::randn({n, 3}, torch::kFloat64) * 4;
    auto w = torch::randn({3}, torch::kFloat64);
    auto b = torch::randn({}, torch::kFloat64);
    torch::Tensor alpha, alpha_p;
    auto out = frames_attention_pool(f, w, b, &alpha);
    EXPECT_NEAR(alpha.sum().item<double>(), 1.0, 1e-6);
    EXPECT_GT(alpha.min().item<double>(), 0.0);
    EXPECT_LT(alpha.max().item<double>(), n == 1 ? 1.0 + 1e-12 : 1.0);
    auto perm = torch::randperm(n);
    auto out_p = frames_attention_pool(f.index_select(0, perm), w, b, &alpha_p);
    EXPECT_TRUE(torch::allclose(out, out_p, 1e-10, 1e-12));
    EXPECT_TRUE(torch::allclose(alpha_p, alpha.index_select(0, perm)));
  }
  EXPECT_THROW(frames_attention_pool(torch::zeros({0, 3}), torch::zeros({3}), torch::zeros({})), ArgumentError);
}

TEST(EmotionHead, ZeroInitClassifierTiesToLowestIndex) {
  torch::manual_seed(0);
  EmotionHeadOptions o;
  o.latent_channels = 4;
  o.temporal_heads = 4;
  o.zero_init_classifier = true;
  EmotionHead head(o);
  head->eval();
  auto out = head->forward(torch::randn({6, 4, 7, 7}), torch::randn({6, 4, 7, 7}), {}, 3);
  ASSERT_EQ(out.logits.sizes(), (std::vector<int64_t>{2, 3}));
  EXPECT_TRUE(torch::equal(out.logits[0], out.logits[0][0].expand({3})));
  EXPECT_EQ(argmax_lowest(out.logits[0]), 0);
  EXPECT_EQ(argmax_lowest(torch::tensor({0.5, 2.0, 2.0})), 1);
}

TEST(EmotionHead, SoftmaxShiftInvariance) {
  auto logits = torch::randn({3}, torch::kFloat64);
  EXPECT_TRUE(torch::allclose(torch::softmax(logits, 0), torch::softmax(logits + 17.5, 0), 0, 1e-9));
}

TEST(EmotionHead, ShapesPerMode) {
  torch::manual_seed(0);
  for (auto mode : {SrMode::None, SrMode::Raw, SrMode::Projected}) {
    EmotionHeadOptions o;
    o.latent_channels = 4;
    o.temporal_heads = 2;
    o.sr_mode = mode;
    if (mode != SrMode::None) o.sr_raw_dims = {64, 72};
    EmotionHead head(o);
    std::vector<torch::Tensor> sr;
    if (mode != SrMode::None) sr = {torch::rand({10, 64}), torch::rand({10, 72})};
    auto out = head->forward(torch::randn({10, 4, 7, 7}), torch::randn({10, 4, 7, 7}), sr, 5);
    EXPECT_EQ(out.logits.sizes(), (std::vector<int64_t>{2, 3}));
    EXPECT_EQ(out.frame_vectors.size(2), frame_vector_dim(4, mode, o.sr_raw_dims));
    EXPECT_NEAR(out.alpha.sum(1)[0].item<double>(), 1.0, 1e-6);
    EXPECT_TRUE(torch::isfinite(out.logits).all().item<bool>());
    if (mode != SrMode::None) { EXPECT_THROW(head->forward(torch::randn({10, 4, 7, 7}), torch::randn({10, 4, 7, 7}), {sr[0]}, 5), ShapeError); }
  }
}

TEST(EmotionHead, NoSrMatchesBaselineParameterCount) {
  EmotionHeadOptions none;
  none.latent_channels = 4;
  none.temporal_heads = 2;
  // SR widths are ignored when nothing is fed to the head.
  EmotionHeadOptions with_dims = none;
  with_dims.sr_raw_dims = {3136, 3136};
  EmotionHead a(none), b(with_dims);
  EXPECT_EQ(count_parameters(*a), count_parameters(*b));
  EXPECT_EQ(a->frame_dim(), 8);
}

TEST(EmotionHead, DetachStopsSrGradient) {
  torch::manual_seed(0);
  for (bool detach : {false, true}) {
    EmotionHeadOptions o;
    o.latent_channels = 4;
    o.temporal_heads = 2;
    o.sr_mode = SrMode::Raw;
    o.sr_raw_dims = {8};
    o.detach_sr = detach;
    EmotionHead head(o);
    auto sr = torch::rand({4, 8}, torch::requires_grad());
    auto out = head->forward(torch::randn({4, 4, 7, 7}), torch::randn({4, 4, 7, 7}), {sr}, 2);
    out.logits.pow(2).sum().backward();
    const bool has = sr.grad().defined() && sr.grad().norm().item<double>() > 0;
    EXPECT_EQ(has, !detach);
  }
}

TEST(EmotionHead, GradientMatchesFiniteDifferences) {
  torch::manual_seed(5);
  EmotionHeadOptions o;
  o.latent_channels = 2;
  o.latent_size = 2;
  o.temporal_heads = 2;
  o.temporal_layers = 1;
  EmotionHead head(o);
  head->to(torch::kFloat64);
  head->eval();
  auto z1 = torch::randn({3, 2, 2, 2}, torch::kFloat64);
  auto f = [&](const torch::Tensor& z2) { return head->forward(z1, z2, {}, 3).logits.pow(2).sum(); };
  EXPECT_LT(gradient_error(f, torch::randn({3, 2, 2, 2})), 1e-4);
}
