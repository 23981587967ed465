"""Deep residual bidirectional LSTM classifier for windowed sensor data,
built on a small reverse-mode autodiff core over numpy."""

__version__ = "0.1.0"
