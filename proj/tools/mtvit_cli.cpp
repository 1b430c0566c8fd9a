#include <chrono>
#include <cstdio>
#include "mtvit/harness.hpp"
using namespace mtvit;
int main() {
  RunConfig cfg;
  cfg.epochs_pretrain = 1;
  cfg.epochs_finetune = 1;
  Dataset train = make_synth_dataset(1, 0, 256);
  Dataset val = make_synth_dataset(1, 256, 64);
  Rng rng(cfg.seed);
  MtvitModel<float> model = make_model<float>(cfg, rng);
  auto t0 = std::chrono::steady_clock::now();
  pretrain(cfg, model, train, val, nullptr);
  auto t1 = std::chrono::steady_clock::now();
  finetune(cfg, model, train, val, nullptr);
  auto t2 = std::chrono::steady_clock::now();
  auto ev = evaluate_model(model, val, cfg);
  auto t3 = std::chrono::steady_clock::now();
  printf("pretrain 256 imgs: %.2fs\nfinetune 256 imgs: %.2fs\neval 64 imgs: %.3fs\nacc=%.3f\n",
         std::chrono::duration<double>(t1-t0).count(),
         std::chrono::duration<double>(t2-t1).count(),
         std::chrono::duration<double>(t3-t2).count(), ev.accuracy);
  return 0;
}
