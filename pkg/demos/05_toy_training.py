"""
Training a small model with the permutation-invariant loss
==========================================================

A frame-context MLP learns to map synthetic features (a sum of fixed speaker
embeddings plus noise) to speaker activity. Its output columns are free to
settle on any speaker order; the loss only scores the best ordering per
chunk. Adam drives the updates and the learning rate halves when the dev
loss stalls.
"""

from speakerseg.toy import TrainConfig, dev_frame_accuracy, make_dev_set, make_toy_data, train

train_frames, dev_frames = make_toy_data(num_speakers=2, train_duration=300.0, dev_duration=60.0, seed=0)

# a short run; 50 epochs on 600 s of training data reaches about 99% accuracy
cfg = TrainConfig(max_epochs=15, seed=0)
result = train(train_frames, dev_frames, cfg)
print(result.log_tsv())

acc = dev_frame_accuracy(result.model, make_dev_set(dev_frames, cfg, cfg.seed + 1))
print(f"best epoch {result.best_epoch}: dev frame accuracy {100 * acc:.1f}%")
