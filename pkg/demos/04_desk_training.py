#!/usr/bin/env python3
# overfit 8 synthetic scenes with the desk preset, then score the fit
# usage: python demos/04_desk_training.py [steps] [out_dir]

import sys
import time

import numpy as np

from edgedepth.config import load_config
from edgedepth.data import save_raster, synthetic_dataset
from edgedepth.train import evaluate, predict, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
out = sys.argv[2] if len(sys.argv) > 2 else None

cfg = load_config(preset="desk", overrides={"train.max_steps": str(steps)})
samples = synthetic_dataset(8, seed=0)

start = time.time()
result = train(cfg, samples, out_dir=out, on_step=lambda s, lr, l: s % 100 or print(f"step {s:4d} lr {lr:.2e} silog {l:.4f}"))
print(f"{len(result.step_losses)} steps in {time.time() - start:.0f}s")

report, _ = evaluate(result.model, samples, (cfg.eval.cap_min, cfg.eval.cap_max))
print(report.to_kv())
print(f"rmse {report.rmse:.3f} m against a bar of {0.05 * cfg.model.max_depth:.2f} m")

pred = predict(result.model, samples[0].rgb)
print("abs error on scene 0: mean", np.abs(pred - samples[0].depth).mean())
if out:
    save_raster(f"{out}/scene0_pred.drf", pred)
