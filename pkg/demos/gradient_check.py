"""Compare backpropagated gradients with central finite differences.

    python3 demos/gradient_check.py
"""
import numpy as np

from harlstm.network import NetworkArchitecture, init_params, network_forward
from harlstm.params import grad_check
from harlstm.tensor import Tensor
from harlstm.training import classification_loss

arch = NetworkArchitecture(1, 1, hidden_width=3, input_channels=2, num_classes=2, window_length=4,
                           dropout_keep_prob=1.0)
rng = np.random.default_rng(42)
X = rng.normal(size=(2, 4, 2))
y = np.eye(2)[rng.integers(0, 2, 2)]
store = init_params(arch, seed=42)


def loss(p):
    return classification_loss(network_forward(arch, p, Tensor(X), "train"), y, p, l2_lambda=0.0015)


report = grad_check(loss, store, epsilon=1e-5)
print(f"checked {report.checked} scalars")
print(f"max relative error {report.max_relative_error:.2e} at {report.worst_parameter_path}")
