#include <doctest.h>

#include <cmath>
#include <random>

#include "alchemy/error.hpp"
#include "alchemy/model.hpp"

using namespace alchemy;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.n_heads = 2;
  c.dropout = 0.0F;
  c.max_seq_len = 40;
  return c;
}

EncodedEpisode random_encoded(std::mt19937_64& rng, int len, int max_len) {
  EncodedEpisode e;
  e.tokens.assign(static_cast<std::size_t>(max_len), tok::kPad);
  for (int i = max_len - len; i < max_len; ++i) e.tokens[static_cast<std::size_t>(i)] = static_cast<TokenId>(rng() % 22);
  e.length = len;
  e.label = static_cast<int>(rng() % 108);
  return e;
}

double loss_of(const Transformer& m, const std::vector<const EncodedEpisode*>& batch,
               std::optional<std::uint64_t> seed) {
  std::vector<float> scratch(m.parameter_count(), 0.0F);
  return m.loss_and_gradient(batch, scratch, 0.0F, seed).loss_sum;
}

}  // namespace

TEST_CASE("parameter count matches a per-tensor sum") {
  const ModelConfig c;
  const std::size_t d = 256, ff = 512, L = 4, V = 23, S = 192, C = 108;
  const std::size_t per_layer = 2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * ff + ff + ff * d + d;
  const std::size_t oracle = V * d + S * d + L * per_layer + 2 * d + d * C + C;
  CHECK(c.parameter_count() == oracle);
  CHECK(oracle == 2191724);
  const Transformer m(c, 1);
  CHECK(m.parameter_count() == oracle);
  std::size_t sum = 0;
  for (const auto& t : m.tensors()) sum += t.size;
  CHECK(sum == oracle);

  ModelConfig sin = c;
  sin.positional = PositionalEncoding::kSinusoidal;
  CHECK(sin.parameter_count() == oracle - S * d);
}

TEST_CASE("config validation and strict json") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  auto j = ModelConfig{}.to_json();
  CHECK(ModelConfig::from_json(j).parameter_count() == ModelConfig{}.parameter_count());
  j["d_modell"] = 3;
  CHECK_THROWS_AS(ModelConfig::from_json(j), Error);
}

TEST_CASE("initial loss is close to uniform") {
  const ModelConfig c;
  const Transformer m(c, 3);
  std::mt19937_64 rng(5);
  std::vector<EncodedEpisode> eps;
  for (int i = 0; i < 32; ++i) eps.push_back(random_encoded(rng, 183, 192));
  std::vector<const EncodedEpisode*> batch;
  for (auto& e : eps) batch.push_back(&e);
  const double mean = loss_of(m, batch, std::nullopt) / 32.0;
  CHECK(std::abs(mean - std::log(108.0)) / std::log(108.0) < 0.01);
}

TEST_CASE("forward is causal") {
  const Transformer m(small_config(), 7);
  std::mt19937_64 rng(11);
  std::vector<TokenId> a(30);
  for (auto& t : a) t = static_cast<TokenId>(rng() % 22);
  auto b = a;
  for (std::size_t i = 20; i < b.size(); ++i) b[i] = static_cast<TokenId>((b[i] + 5) % 22);
  const auto la = m.forward({a});
  const auto lb = m.forward({b});
  for (std::size_t i = 0; i < 20 * 108; ++i) CHECK(std::abs(la[i] - lb[i]) <= 1e-5F);
  bool changed = false;
  for (std::size_t i = 20 * 108; i < la.size(); ++i) changed |= std::abs(la[i] - lb[i]) > 1e-5F;
  CHECK(changed);
}

TEST_CASE("padding does not change the final logits") {
  const Transformer m(small_config(), 7);
  std::mt19937_64 rng(12);
  const EncodedEpisode e = random_encoded(rng, 25, 40);
  std::vector<TokenId> unpadded(e.tokens.begin() + e.first_content(), e.tokens.end());
  const auto padded_logits = m.forward({e.tokens});
  const EncodedEpisode* p = &e;
  const auto fin = m.final_logits(std::span<const EncodedEpisode* const>(&p, 1));
  for (int c = 0; c < 108; ++c) CHECK(std::abs(padded_logits[39 * 108 + static_cast<std::size_t>(c)] - fin[static_cast<std::size_t>(c)]) <= 1e-5F);
  CHECK_THROWS_AS(m.forward({std::vector<TokenId>(41, 0)}), Error);
  CHECK_THROWS_AS(m.forward({{0, 1}, {0}}), Error);
  CHECK_THROWS_AS(m.forward({{0, 23}}), Error);
}

TEST_CASE("analytic gradient matches central differences") {
  for (float dropout : {0.0F, 0.2F}) {
    ModelConfig c = small_config();
    c.dropout = dropout;
    Transformer m(c, 21);
    std::mt19937_64 rng(31);
    std::vector<EncodedEpisode> eps;
    for (int len : {40, 33, 17}) eps.push_back(random_encoded(rng, len, 40));
    std::vector<const EncodedEpisode*> batch;
    for (auto& e : eps) batch.push_back(&e);
    const std::optional<std::uint64_t> seed = dropout > 0 ? std::optional<std::uint64_t>(77) : std::nullopt;

    std::vector<float> grad(m.parameter_count(), 0.0F);
    m.loss_and_gradient(batch, grad, 1.0F, seed);

    auto params = m.parameters();
    double num2 = 0.0, diff2 = 0.0;
    const float h = 1e-3F;
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t i = rng() % params.size();
      const float saved = params[i];
      params[i] = saved + h;
      const double up = loss_of(m, batch, seed);
      params[i] = saved - h;
      const double down = loss_of(m, batch, seed);
      params[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      num2 += fd * fd;
      diff2 += (fd - grad[i]) * (fd - grad[i]);
    }
    CHECK(std::sqrt(diff2 / num2) <= 1e-3);
  }
}

TEST_CASE("pad embedding and unused positions receive no gradient") {
  Transformer m(small_config(), 5);
  std::mt19937_64 rng(8);
  std::vector<EncodedEpisode> eps;
  for (int len : {30, 25}) eps.push_back(random_encoded(rng, len, 40));
  std::vector<const EncodedEpisode*> batch{&eps[0], &eps[1]};
  std::vector<float> grad(m.parameter_count(), 0.0F);
  m.loss_and_gradient(batch, grad, 1.0F, std::nullopt);
  const int d = m.config().d_model;
  for (const auto& t : m.tensors()) {
    if (t.name == "tok_emb") {
      for (int j = 0; j < d; ++j) CHECK(grad[t.offset + static_cast<std::size_t>(tok::kPad * d + j)] == 0.0F);
    }
    if (t.name == "pos_emb") {
      for (int p = 0; p < 10; ++p) {
        for (int j = 0; j < d; ++j) CHECK(grad[t.offset + static_cast<std::size_t>(p * d + j)] == 0.0F);
      }
      float any = 0.0F;
      for (int j = 0; j < d; ++j) any += std::abs(grad[t.offset + static_cast<std::size_t>(39 * d + j)]);
      CHECK(any > 0.0F);
    }
  }
}

TEST_CASE("same seed gives identical parameters and gradients") {
  ModelConfig c = small_config();
  c.dropout = 0.1F;
  const Transformer a(c, 9), b(c, 9), other(c, 10);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  CHECK_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), other.parameters().begin()));

  std::mt19937_64 rng(4);
  const EncodedEpisode e = random_encoded(rng, 35, 40);
  const EncodedEpisode* p = &e;
  std::vector<float> g1(a.parameter_count(), 0.0F), g2(a.parameter_count(), 0.0F);
  const auto r1 = a.loss_and_gradient(std::span<const EncodedEpisode* const>(&p, 1), g1, 1.0F, 42);
  const auto r2 = b.loss_and_gradient(std::span<const EncodedEpisode* const>(&p, 1), g2, 1.0F, 42);
  CHECK(r1.loss_sum == r2.loss_sum);
  CHECK(g1 == g2);
  const auto r3 = a.loss_and_gradient(std::span<const EncodedEpisode* const>(&p, 1), g2, 0.0F, 43);
  CHECK(r3.loss_sum != r1.loss_sum);
}

TEST_CASE("argmax ties resolve to the lowest class") {
  ModelConfig c = small_config();
  Transformer m(c, 1);
  for (auto& w : m.parameters()) w = 0.0F;
  for (const auto& t : m.tensors()) {
    if (t.name == "lnf_g") for (std::size_t i = 0; i < t.size; ++i) m.parameters()[t.offset + i] = 1.0F;
  }
  std::mt19937_64 rng(2);
  const EncodedEpisode e = random_encoded(rng, 10, 40);
  const EncodedEpisode* p = &e;
  CHECK(m.evaluate(std::span<const EncodedEpisode* const>(&p, 1)).predictions[0] == 0);
}
