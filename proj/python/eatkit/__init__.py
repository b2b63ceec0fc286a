"""Energy-aware training toolkit.

Trains small networks with a differentiable activation-sparsity penalty and
quantifies the result with a zero-skipping accelerator energy model.
"""

from eatkit._core import (
    ConfigError,
    IoError,
    Model,
    ShapeError,
    __version__,
    augment,
    energy_decrease,
    energy_ratio,
    evaluate_accuracy,
    exact_l0,
    firing_stats,
    gen_synthetic,
    l0_approx,
    l0_approx_grad,
    load_cifar10,
    objective,
    simulate_energy,
    train,
)

__all__ = [
    "ConfigError",
    "IoError",
    "Model",
    "ShapeError",
    "__version__",
    "augment",
    "energy_decrease",
    "energy_ratio",
    "evaluate_accuracy",
    "exact_l0",
    "firing_stats",
    "gen_synthetic",
    "l0_approx",
    "l0_approx_grad",
    "load_cifar10",
    "objective",
    "simulate_energy",
    "train",
]
