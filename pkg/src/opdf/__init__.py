"""MPO over-parameterization and auxiliary-core distillation for small MLPs."""

__version__ = "0.1.0"
