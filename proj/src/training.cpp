#include "stare/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "stare/error.hpp"
#include "stare/log.hpp"
#include "stare/rng.hpp"

namespace stare {

void TrainConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidConfig, "training." + field + " " + why);
  };
  if (epochs > 3) bad("epochs", "must be at most 3");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr", "must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) bad("weight_decay", "must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) bad("eps", "must be positive");
  if (batch == 0) bad("batch", "must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) bad("temperature", "must be positive");
}

AdamW::AdamW(std::size_t size, const TrainConfig& config)
    : lr_(config.lr),
      wd_(config.weight_decay),
      b1_(config.beta1),
      b2_(config.beta2),
      eps_(config.eps),
      m_(size, 0.0),
      v_(size, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "optimizer state does not match parameters");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * params[i]);
  }
}

UtteranceTable::UtteranceTable(std::span<const Record> records) {
  for (const auto& r : records) text_.emplace(r.id, r.utterance);
}

const std::string& UtteranceTable::at(std::string_view id) const {
  const auto it = text_.find(std::string(id));
  if (it == text_.end()) {
    throw Error(ErrorCode::UnknownId, "group refers to unknown id '" + std::string(id) + "'");
  }
  return it->second;
}

double group_loss(const Encoder& encoder, const ContrastiveGroup& group,
                  const UtteranceTable& texts, double temperature, std::span<double> grad) {
  std::vector<const std::string*> negatives;
  for (const auto& id : group.hard_negative_ids) negatives.push_back(&texts.at(id));
  for (const auto& id : group.random_negative_ids) negatives.push_back(&texts.at(id));
  const std::string& anchor = texts.at(group.anchor_id);
  const std::string& positive = texts.at(group.positive_id);

  const auto a = encoder.embed(anchor);
  const auto p = encoder.embed(positive);
  std::vector<std::vector<double>> n;
  n.reserve(negatives.size());
  for (const auto* text : negatives) n.push_back(encoder.embed(*text));

  if (grad.empty()) return infonce_loss(a, p, n, temperature);

  const auto r = infonce_loss_and_grad(a, p, n, temperature);
  if (!std::isfinite(r.loss)) return r.loss;
  encoder.embed_backward(anchor, r.d_anchor, grad);
  encoder.embed_backward(positive, r.d_positive, grad);
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    encoder.embed_backward(*negatives[i], r.d_negatives[i], grad);
  }
  return r.loss;
}

double mean_group_loss(const Encoder& encoder, std::span<const ContrastiveGroup> groups,
                       const UtteranceTable& texts, double temperature) {
  if (groups.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : groups) total += group_loss(encoder, g, texts, temperature);
  return total / static_cast<double>(groups.size());
}

TrainResult train(Encoder& encoder, std::span<const ContrastiveGroup> groups,
                  std::span<const Record> records, const TrainConfig& config) {
  config.validate();
  if (groups.empty()) throw Error(ErrorCode::InvalidArgument, "no training groups");
  const UtteranceTable texts(records);

  TrainResult result;
  result.initial_loss = mean_group_loss(encoder, groups, texts, config.temperature);
  if (config.epochs == 0) {
    result.final_loss = result.initial_loss;
    return result;
  }

  AdamW optimizer(encoder.params().size(), config);
  std::vector<double> grad(encoder.params().size());
  std::vector<std::size_t> order(groups.size());
  Rng rng(config.seed);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t j = start; j < end; ++j) {
        const auto& group = groups[order[j]];
        const double loss = group_loss(encoder, group, texts, config.temperature, grad);
        if (!std::isfinite(loss)) {
          throw Error(ErrorCode::NonFiniteLoss,
                      "non-finite loss on group anchored at '" + group.anchor_id + "'");
        }
        epoch_total += loss;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : grad) g *= inv;
      optimizer.step(encoder.mutable_params(), grad);
    }
    result.epoch_losses.push_back(epoch_total / static_cast<double>(groups.size()));
    logger()->info("epoch {}/{}: mean loss {:.6f}", epoch + 1, config.epochs,
                   result.epoch_losses.back());
  }
  result.steps = optimizer.steps();
  result.final_loss = mean_group_loss(encoder, groups, texts, config.temperature);
  return result;
}

void write_loss_csv(std::ostream& out, std::span<const double> epoch_losses) {
  out << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t i = 0; i < epoch_losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, epoch_losses[i]);
    out << buf;
  }
}

}  // namespace stare
