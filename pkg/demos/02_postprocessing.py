"""
From activations to segments: VAD and overlap detection
=======================================================

A single set of speaker activations serves several tasks. Taking the maximum
over speakers gives a speech score; the second largest value gives an
overlap score. Each score stream is binarized with hysteresis thresholds,
then short gaps are filled and short regions removed, in that order.
"""

import numpy as np

from speakerseg.annotation import overlap_timeline
from speakerseg.metrics import detection_error, frames_to_timeline, precision_recall_f1
from speakerseg.postprocess import PostProcessingParams, binarize_scores, osd_scores, vad_scores
from speakerseg.synth import SynthConfig, generate_reference, oracle_activations

cfg = SynthConfig(num_speakers=3, duration=120.0, seed=1)
ref = generate_reference(cfg, "demo")
acts = oracle_activations(ref, cfg.grid, noise_level=0.3, seed=1)

params = PostProcessingParams(theta_on=0.6, theta_off=0.4, delta_on=0.1, delta_off=0.1)

# speech: max over speakers
speech = frames_to_timeline(binarize_scores(vad_scores(acts), params, acts.grid.step), acts.grid)
report = detection_error(ref.support(), speech)
print(f"VAD  false alarm {report.fa_rate:.2f}%  miss {report.miss_rate:.2f}%")

# overlap: second highest activation
overlap = frames_to_timeline(binarize_scores(osd_scores(acts), params, acts.grid.step), acts.grid)
f1 = precision_recall_f1(overlap_timeline(ref), overlap)
print(f"OSD  precision {f1.precision:.1f}%  recall {f1.recall:.1f}%  F1 {f1.f1:.1f}%")

# hysteresis keeps a region open while the score stays above theta_off
scores = np.array([0.2, 0.7, 0.5, 0.45, 0.3, 0.65, 0.2])
print("hysteresis:", binarize_scores(scores, PostProcessingParams(0.6, 0.4), 0.016).astype(int))
print("threshold: ", (scores >= 0.5).astype(int))
