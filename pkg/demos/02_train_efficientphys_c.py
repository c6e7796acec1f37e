"""
Training EfficientPhys-C from raw frames
========================================

A short run on a small synthetic corpus. The network sees raw frames; the
difference layer and batchnorm inside the model replace hand-crafted
preprocessing. Expect a couple of minutes on one core.
"""

import numpy as np

from pulseforge.inference import baseline_hr, model_hr
from pulseforge.synth import CorpusSpec, gen_corpus
from pulseforge.train import TrainConfig, fit

spec = CorpusSpec(n_clips=60, size=18, seed=1)
clips = {"train": [], "val": [], "test": []}
for _, split, item in gen_corpus(spec):
    clips[split].append(item)
print({k: len(v) for k, v in clips.items()})

# 18x18 inputs keep the run short; the default model resolution is 36x36
config = TrainConfig(model="conv", epochs=3, seed=0, model_options={"input_size": 18})
result = fit(config, train_clips=clips["train"], val_clips=clips["val"])
print(result.log_csv())

# held-out clips: the trained model next to POS on the same frames
for item in clips["test"]:
    print(f"gt {item.hr_gt:6.1f}  model {model_hr(result.model, item):6.1f}  pos {baseline_hr('pos', item):6.1f}")
err = [abs(model_hr(result.model, c) - c.hr_gt) for c in clips["test"]]
print("model MAE:", round(float(np.mean(err)), 2), "BPM")
