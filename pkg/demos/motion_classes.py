#!/usr/bin/env python3
"""Walk through the motion-only benchmark and train STOP on it.

Usage: python3 demos/motion_classes.py [steps]   (default 200; the acceptance
suite uses 800)
"""

import sys
import time

import stopvid as sv
from stopvid.synthdata import CLASS_NAMES, build_action_dataset, gen_video, single_frame_probe
from stopvid.training import TrainSettings, evaluate_action, train_action

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200

# The frozen "pretrained" model is a seeded random init.
cfg = sv.ModelConfig()
model = sv.FrozenClipModel.from_seed(cfg)
hyper = sv.StopHyper()
print(f"frozen model: {sum(t.size for t in model.weights.values())} weights, hash {model.content_hash()[:12]}")

# Four classes that differ only in direction of motion.
for name in CLASS_NAMES[:4]:
    v = gen_video(name, seed=7, cfg=cfg).video
    print(f"  {name:<6} video {v.shape}, first-frame mean {v[0].mean():.4f}, last-frame mean {v[-1].mean():.4f}")

train, test = build_action_dataset(K=4, n_per_class=40, seed=0, cfg=cfg)
print(f"train {len(train)}  test {len(test)}")

# Single frames carry no class information by construction.
print(f"single-frame logistic probe accuracy: {single_frame_probe(train, test):.3f} (chance 0.25)")

zero = sv.StopParams.zeros(cfg.d_v, hyper.max_prompts)
print("frozen baseline:", evaluate_action(model, zero, hyper, test, 4, intra_on=False, inter_on=False))

params = sv.StopParams.init(cfg.d_v, hyper.max_prompts, seed=0)
print(f"trainable prompt parameters: {params.num_parameters()}")
t0 = time.perf_counter()


def progress(step, loss):
    if step % 50 == 0:
        print(f"  step {step:4d}  loss {loss:.4f}  ({time.perf_counter() - t0:.0f}s)")


result = train_action(model, params, hyper, train, 4, TrainSettings(steps=steps), on_step=progress)
print("STOP after training:", evaluate_action(model, result.params, hyper, test, 4))
print("frozen weights untouched:", sv.verify_frozen(model))
