"""Train a small residual bidirectional LSTM on a synthetic two-class task.

The label of each window is the sign of channel 0 at the last time step,
so a working recurrent network should reach perfect test accuracy.

    python3 demos/toy_walkthrough.py
"""
import numpy as np

from harlstm import metrics
from harlstm.data import make_toy_dataset
from harlstm.network import NetworkArchitecture, init_params
from harlstm.training import TrainConfig, train

train_set = make_toy_dataset(200, window=8, channels=2, seed=101)
test_set = make_toy_dataset(200, window=8, channels=2, seed=102)

arch = NetworkArchitecture(residual_blocks=1, bidir_layers_per_block=2, hidden_width=12,
                           input_channels=2, num_classes=2, window_length=8)
print(f"{arch.num_cells} LSTM cells, {init_params(arch).num_scalars()} parameters")

cfg = TrainConfig(epochs=15, batch_size=20, learning_rate=0.005, seed=0)
result = train(arch, init_params(arch, seed=0), train_set, test_set, cfg,
               on_epoch=lambda r, _: print(f"epoch {r.epoch:2d}  loss {r.train_loss:.4f}"
                                           f"  train acc {r.train_accuracy:.3f}  test acc {r.test_accuracy:.3f}"))

best = result.best_report
print(f"\nbest epoch {best.epoch}: test weighted F1 {best.test_f1:.4f}")
print(metrics.to_delimited(best.test_confusion))

# the decision rule the network had to discover
rule = (test_set.samples[:, -1, 0] > 0).astype(int)
print("threshold rule accuracy:", np.mean(rule == test_set.labels))
