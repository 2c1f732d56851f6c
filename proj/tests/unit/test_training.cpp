#include <doctest.h>

#include <cmath>
#include <sstream>

#include "stare/error.hpp"
#include "stare/training.hpp"

using namespace stare;

namespace {

std::vector<Record> records() {
  return {{"a", "book a table for two", ""}, {"b", "reserve a table for four", ""},
          {"c", "weather in paris", ""},     {"d", "weather in rome today", ""},
          {"e", "play some jazz", ""},       {"f", "play the news", ""}};
}

std::vector<ContrastiveGroup> groups() {
  return {{"a", "b", {"c"}, {"e"}, 1.0, false, false},
          {"c", "d", {"a"}, {"f"}, 1.0, false, false},
          {"e", "f", {"d"}, {"b"}, 1.0, false, false}};
}

Encoder encoder() {
  EncoderConfig c;
  c.dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.ffn_dim = 32;
  c.max_len = 16;
  std::vector<std::string> texts;
  for (const auto& r : records()) texts.push_back(r.utterance);
  return Encoder(c, Vocabulary::build(texts));
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.epochs = 4;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("training.epochs"), Error);
    c = TrainConfig{};
    c.lr = 0.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("training.lr"), Error);
    c = TrainConfig{};
    c.temperature = -1.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("training.temperature"), Error);
  }

  TEST_CASE("adamw first step") {
    TrainConfig c;
    c.lr = 0.1;
    c.weight_decay = 0.5;
    AdamW opt(2, c);
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.5, -0.25};
    opt.step(p, g);
    // Bias-corrected first step moves each coordinate by lr * (sign(g) + wd * p).
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.5 * 1.0)).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(-2.0 - 0.1 * (-0.25 / (0.25 + 1e-8) + 0.5 * -2.0)).epsilon(1e-12));
    CHECK(opt.steps() == 1);
  }

  TEST_CASE("zero epochs leave parameters at init") {
    auto enc = encoder();
    const std::vector<double> before(enc.params().begin(), enc.params().end());
    TrainConfig c;
    c.epochs = 0;
    const auto r = train(enc, groups(), records(), c);
    CHECK(std::vector<double>(enc.params().begin(), enc.params().end()) == before);
    CHECK(r.final_loss == r.initial_loss);
    CHECK(r.steps == 0);
  }

  TEST_CASE("training lowers the loss and is reproducible") {
    TrainConfig c;
    c.lr = 3e-3;
    c.seed = 2;
    auto a = encoder();
    auto b = encoder();
    const auto ra = train(a, groups(), records(), c);
    const auto rb = train(b, groups(), records(), c);
    CHECK(ra.final_loss < ra.initial_loss);
    CHECK(ra.epoch_losses.size() == 3);
    CHECK(ra.steps == 9);
    CHECK(ra.epoch_losses == rb.epoch_losses);
    CHECK(a.fingerprint() == b.fingerprint());
  }

  TEST_CASE("errors") {
    auto enc = encoder();
    CHECK_THROWS_AS(train(enc, std::vector<ContrastiveGroup>{}, records(), TrainConfig{}), Error);
    const std::vector<ContrastiveGroup> unknown{{"a", "zz", {}, {}, 1.0, false, false}};
    CHECK_THROWS_AS(train(enc, unknown, records(), TrainConfig{}), Error);
    const UtteranceTable table(records());
    CHECK(group_loss(enc, groups()[0], table, 0.07) > 0.0);
  }

  TEST_CASE("loss csv") {
    std::ostringstream out;
    write_loss_csv(out, std::vector<double>{0.5, 0.25});
    CHECK(out.str() == "epoch,mean_loss\n1,0.5\n2,0.25\n");
  }
}
