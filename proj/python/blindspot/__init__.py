from ._blindspot import (
    AdversarialResult,
    Error,
    FormatError,
    InvalidInput,
    Layer,
    LayerKind,
    Network,
    conv_bound,
    distortion,
    load_model,
    minimal_perturbation,
    network_bound,
    run_cli,
    save_model,
    synthetic_blobs,
    train,
)

__all__ = [
    "AdversarialResult",
    "Error",
    "FormatError",
    "InvalidInput",
    "Layer",
    "LayerKind",
    "Network",
    "conv_bound",
    "distortion",
    "load_model",
    "minimal_perturbation",
    "network_bound",
    "run_cli",
    "save_model",
    "synthetic_blobs",
    "train",
]
