#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stare/corpus.hpp"
#include "stare/encoder.hpp"
#include "stare/pair_mining.hpp"

namespace stare {

struct TrainConfig {
  std::size_t epochs = 3;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch = 1;  // groups per optimizer step
  double temperature = 0.07;
  std::uint64_t seed = 0;  // shuffling order

  // Throws InvalidConfig naming the field. epochs is capped at 3.
  void validate() const;
};

// Adam with decoupled weight decay:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
 public:
  AdamW(std::size_t size, const TrainConfig& config);
  void step(std::span<double> params, std::span<const double> grad);
  std::uint64_t steps() const noexcept { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

// id -> utterance lookup for the records a group refers to.
class UtteranceTable {
 public:
  explicit UtteranceTable(std::span<const Record> records);
  // Throws UnknownId.
  const std::string& at(std::string_view id) const;

 private:
  std::unordered_map<std::string, std::string> text_;
};

// InfoNCE of one group (anchor vs positive against hard + random negatives).
// When `grad` is non-empty, d(loss)/d(params) is accumulated into it.
double group_loss(const Encoder& encoder, const ContrastiveGroup& group,
                  const UtteranceTable& texts, double temperature, std::span<double> grad = {});

// Mean group loss without updating anything.
double mean_group_loss(const Encoder& encoder, std::span<const ContrastiveGroup> groups,
                       const UtteranceTable& texts, double temperature);

struct TrainResult {
  std::vector<double> epoch_losses;  // running mean over each epoch's steps
  double initial_loss = 0.0;         // mean group loss before the first step
  double final_loss = 0.0;           // mean group loss after the last step
  std::uint64_t steps = 0;
};

// Minimizes mean InfoNCE over the groups with AdamW. Group order is
// reshuffled every epoch from config.seed, so runs are reproducible.
// Throws NonFiniteLoss naming the anchor of the offending group.
TrainResult train(Encoder& encoder, std::span<const ContrastiveGroup> groups,
                  std::span<const Record> records, const TrainConfig& config);

// "epoch,mean_loss" rows, epochs numbered from 1.
void write_loss_csv(std::ostream& out, std::span<const double> epoch_losses);

}  // namespace stare
