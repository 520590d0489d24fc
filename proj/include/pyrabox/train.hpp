#ifndef PYRABOX_TRAIN_HPP_
#define PYRABOX_TRAIN_HPP_

#include <cmath>
#include <memory>
#include <thread>
#include <vector>

#include "pyrabox/anchors.hpp"
#include "pyrabox/config.hpp"
#include "pyrabox/loss.hpp"
#include "pyrabox/network.hpp"
#include "pyrabox/sampling.hpp"

namespace pyrabox {

inline double lr_at(int64_t step, const std::vector<LrSegment>& schedule) {
  if (schedule.empty()) throw contract_error("lr_at: empty schedule");
  int64_t acc = 0;
  for (const auto& seg : schedule) {
    acc += seg.steps;
    if (step < acc) return seg.lr;
  }
  return schedule.back().lr;  // held past the end
}

// (v - 127.5) / 127.5 normalized NCHW float tensor of one crop.
template <class T>
Tensor<T> crop_to_tensor(const Raster& img) {
  Tensor<T> x({1, 3, img.h, img.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int z = 0; z < img.w; ++z)
        x.at(0, c, y, z) = static_cast<T>((img.at(z, y, c) - 127.5) / 127.5);
  return x;
}

struct StepStats {
  double total = 0;
  std::vector<LossTerm> per_k;  // summed over the batch
};

// Owns the model, momentum buffers, and step counter. Each crop's gradient is
// computed into freshly zeroed buffers and the per-crop gradients are summed
// in batch-index order, so a step is bit-identical for any thread count.
// (Accumulating several crops through one beta=1 gemm rounds differently than
// product-then-add, which is why per-crop snapshots are required.)
class Trainer {
public:
  Trainer(const NetworkConfig& cfg, int num_threads = 1)
      : cfg_(cfg), model_(cfg), num_threads_(std::max(1, num_threads)) {
    // one BLAS thread per call: keeps in-call reduction order identical
    // whether gemms run on the main thread or on batch workers
    openblas_set_num_threads(1);
    auto sizes = tap_sizes(cfg_);
    grid_ = build_grid(sizes, sizes);
    for (const auto& [name, t] : model_.params())
      momentum_[name].assign(static_cast<size_t>(t.size()), 0.f);
    for (int i = 1; i < num_threads_; ++i) workers_.push_back(std::make_unique<Model<float>>(cfg_));
  }

  Model<float>& model() { return model_; }
  const AnchorGrid& grid() const { return grid_; }
  int64_t step() const { return step_; }
  double momentum_coef = 0.9;
  double weight_decay = 5e-4;

  // forward, loss, backward, SGD-with-momentum update; gradients averaged
  // over the batch.
  StepStats train_step(const std::vector<TrainCrop>& batch) {
    if (batch.empty()) throw contract_error("train_step: empty batch");
    for (auto& [name, t] : model_.params()) t.zero_grad();

    StepStats stats;
    stats.per_k.resize(cfg_.pyramid.lambda_k.size());
    std::vector<GradSnapshot> per_crop(batch.size());
    std::vector<StepStats> per_crop_stats(batch.size());
    for (auto& s : per_crop_stats) s.per_k.resize(stats.per_k.size());
    if (num_threads_ == 1 || batch.size() == 1) {
      for (size_t b = 0; b < batch.size(); ++b)
        accumulate(model_, batch[b], per_crop_stats[b], per_crop[b]);
    } else {
      // round-robin split; each worker runs crops on its own clone
      for (auto& w : workers_)
        for (auto& [name, t] : w->params()) t.values() = model_.param(name).values();
      std::vector<Model<float>*> models = {&model_};
      for (auto& w : workers_) models.push_back(w.get());
      std::vector<std::thread> threads;
      for (size_t wi = 1; wi < models.size(); ++wi)
        threads.emplace_back([&, wi]() {
          for (size_t b = wi; b < batch.size(); b += models.size())
            accumulate(*models[wi], batch[b], per_crop_stats[b], per_crop[b]);
        });
      for (size_t b = 0; b < batch.size(); b += models.size())
        accumulate(*models[0], batch[b], per_crop_stats[b], per_crop[b]);
      for (auto& t : threads) t.join();
    }
    for (auto& [name, t] : model_.params()) t.zero_grad();
    for (size_t b = 0; b < batch.size(); ++b) {
      merge_stats(stats, per_crop_stats[b]);
      for (auto& [name, g] : per_crop[b]) {
        auto& dst = model_.param(name).grad();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
      }
    }

    if (!std::isfinite(stats.total)) throw numeric_error("non-finite total loss at step " + std::to_string(step_));
    for (size_t k = 0; k < stats.per_k.size(); ++k) {
      const auto& t = stats.per_k[k];
      if (!std::isfinite(t.cls_sum))
        throw numeric_error("non-finite cls loss (k=" + std::to_string(k) + ") at step " + std::to_string(step_));
      if (!std::isfinite(t.reg_sum))
        throw numeric_error("non-finite reg loss (k=" + std::to_string(k) + ") at step " + std::to_string(step_));
    }

    double lr = lr_at(step_, cfg_.lr_schedule);
    double inv_b = 1.0 / static_cast<double>(batch.size());
    for (auto& [name, t] : model_.params()) {
      auto& v = momentum_[name];
      auto& g = t.grad();
      for (size_t i = 0; i < v.size(); ++i) {
        float grad = static_cast<float>(g[i] * inv_b + weight_decay * t[static_cast<int64_t>(i)]);
        v[i] = static_cast<float>(momentum_coef) * v[i] + grad;
        t[static_cast<int64_t>(i)] -= static_cast<float>(lr) * v[i];
      }
    }
    ++step_;
    stats.total *= inv_b;
    return stats;
  }

private:
  void merge_stats(StepStats& into, const StepStats& from) {
    into.total += from.total;
    for (size_t k = 0; k < into.per_k.size() && k < from.per_k.size(); ++k) {
      into.per_k[k].cls_sum += from.per_k[k].cls_sum;
      into.per_k[k].reg_sum += from.per_k[k].reg_sum;
      into.per_k[k].n_cls += from.per_k[k].n_cls;
      into.per_k[k].n_reg += from.per_k[k].n_reg;
      into.per_k[k].value += from.per_k[k].value;
    }
  }

  using GradSnapshot = std::map<std::string, std::vector<float>>;

  void accumulate(Model<float>& m, const TrainCrop& crop, StepStats& stats, GradSnapshot& snap) {
    for (auto& [name, t] : m.params()) t.zero_grad();
    PyramidLabelSet labels = label_pyramid(grid_, crop.faces, cfg_.pyramid);
    Tensor<float> x = crop_to_tensor<float>(crop.image);
    Graph<float> g;
    std::vector<Tensor<float>> heads = m.forward(x);
    LossBreakdown<float> lb = pyramid_loss(heads, grid_, labels, cfg_.pyramid, cfg_.head);
    g.backward(lb.total);
    for (auto& [name, t] : m.params()) snap[name] = t.grad();
    stats.total += lb.total_value();
    for (size_t k = 0; k < lb.per_k.size() && k < stats.per_k.size(); ++k) {
      stats.per_k[k].cls_sum += lb.per_k[k].cls_sum;
      stats.per_k[k].reg_sum += lb.per_k[k].reg_sum;
      stats.per_k[k].n_cls += lb.per_k[k].n_cls;
      stats.per_k[k].n_reg += lb.per_k[k].n_reg;
      stats.per_k[k].value += lb.per_k[k].value;
    }
  }

  NetworkConfig cfg_;
  Model<float> model_;
  AnchorGrid grid_;
  std::map<std::string, std::vector<float>> momentum_;
  int64_t step_ = 0;
  int num_threads_;
  std::vector<std::unique_ptr<Model<float>>> workers_;
};

}  // namespace pyrabox

#endif  // PYRABOX_TRAIN_HPP_
