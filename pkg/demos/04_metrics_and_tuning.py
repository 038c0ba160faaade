"""
Scoring and threshold tuning
============================

DER adds false alarm, missed speech and speaker confusion under the best
one-to-one speaker mapping. A forgiveness collar removes a band around every
reference boundary. Detection thresholds are tuned per dev set with a
seeded search.
"""

from speakerseg.annotation import Annotation
from speakerseg.metrics import DevItem, ParamSpace, der, tune
from speakerseg.synth import SynthConfig, generate_reference, oracle_activations

ref = Annotation.from_triples("m", [(0, 5, "A"), (5, 10, "B")])
hyp = Annotation.from_triples("m", [(0, 6, "x"), (6, 10, "y")])
for collar in (0.0, 0.5, 1.0):
    r = der(ref, hyp, collar=collar)
    print(f"collar {collar:.1f}s  confusion {r.confusion:.2f}s of {r.total:.2f}s  DER {r.der:.2f}%")

# labels do not matter, only the mapping
print("relabelled hypothesis DER:", der(ref, hyp.relabel({"x": "B", "y": "A"})).der)

dev = []
for seed in range(3):
    cfg = SynthConfig(num_speakers=2, duration=60.0, seed=seed)
    r = generate_reference(cfg, f"dev{seed}")
    dev.append(DevItem(r, oracle_activations(r, cfg.grid, 0.3, seed)))

result = tune(ParamSpace(), "detection-error", dev, seed=0)
print("tuned parameters:", result.params)
print(f"dev detection error {result.value:.2f}% after {result.evaluations} evaluations")
