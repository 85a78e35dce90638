from docattr.zoo.models import (
    ModelConfig,
    ModelContractError,
    ModelGraph,
    TaskOutputs,
    build,
    forward_concat,
    forward_single,
    forward_weighted,
)
from docattr.zoo.registry import (
    ArchitectureId,
    RegistryError,
    all_architectures,
    architecture_spec,
    catalog,
    parse_arch,
)

__all__ = [
    "ArchitectureId",
    "ModelConfig",
    "ModelContractError",
    "ModelGraph",
    "RegistryError",
    "TaskOutputs",
    "all_architectures",
    "architecture_spec",
    "build",
    "catalog",
    "forward_concat",
    "forward_single",
    "forward_weighted",
    "parse_arch",
]
