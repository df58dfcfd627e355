from dataclasses import asdict, dataclass
from enum import Enum

from src.errors import ConfigurationError


class Mode(str, Enum):
    DEFAMATION = "defamation"
    PROMOTION = "promotion"


class Phase(Enum):
    PRODUCTS = "products"
    USERS = "users"
    END_ITERATION = "endIteration"


@dataclass(frozen=True)
class DetectionParams:
    """(n, m, rho, delta_t, kappa, mode, n_seeds, rng_seed) of one detection run."""

    n: int
    m: int
    rho: float
    delta_t: int
    kappa: int
    mode: Mode
    n_seeds: int
    rng_seed: int = 0
    initial_users_per_seed: int = 3

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigurationError(f"unknown mode {self.mode!r}") from None
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        if self.m < 1:
            raise ConfigurationError(f"m must be >= 1, got {self.m}")
        if not 0 < self.rho <= 1:
            raise ConfigurationError(f"rho must be in (0, 1], got {self.rho}")
        if self.delta_t <= 0:
            raise ConfigurationError(f"delta_t must be positive, got {self.delta_t}")
        if self.n_seeds < 1:
            raise ConfigurationError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if self.initial_users_per_seed < 1:
            raise ConfigurationError(
                f"initial_users_per_seed must be >= 1, got {self.initial_users_per_seed}"
            )

    def as_dict(self):
        values = asdict(self)
        values["mode"] = self.mode.value
        return values
