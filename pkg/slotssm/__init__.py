__all__ = [
    "baselines",
    "bench",
    "checkpoint",
    "config",
    "dataset_io",
    "decoders",
    "errors",
    "evaluate",
    "feed",
    "gradcheck",
    "metrics",
    "models",
    "nn",
    "ops",
    "optim",
    "output",
    "palette",
    "render",
    "slots",
    "ssm",
    "synth",
    "tensor",
    "tokenizers",
    "train",
    "util",
]
