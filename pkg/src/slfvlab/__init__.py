"""Spatial Lambda-Fleming-Viot simulation: environments, coalescent ancestry, lookdown particles, bridges."""
__version__ = "0.1.0"

from .environment import Environment, EventModel, generate_environment, read_environment, write_environment
from .geometry import Domain
from .lookdown import TypeKernel
from .mutation import MutationModel
from .seeding import SeedKey

__all__ = ["Domain", "Environment", "EventModel", "MutationModel", "SeedKey", "TypeKernel", "__version__",
           "generate_environment", "read_environment", "write_environment"]
