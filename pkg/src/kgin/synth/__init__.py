from .generate import SynthData, SynthSpec, SynthSpecError, generate
from .oracles import (
    FDResult,
    PathExplosion,
    dcor_oracle,
    enumerate_paths_oracle,
    fd_gradient_check,
)

__all__ = [
    "FDResult",
    "PathExplosion",
    "SynthData",
    "SynthSpec",
    "SynthSpecError",
    "dcor_oracle",
    "enumerate_paths_oracle",
    "fd_gradient_check",
    "generate",
]
