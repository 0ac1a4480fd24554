"""Flat ``key = value`` text files and the solver hyperparameter record."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .psf import DEFAULT_KERNEL_SHAPE, DEFAULT_SMOOTH_SIGMA


def read_kv(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def write_kv(path, items: dict, header: str | None = None) -> None:
    with open(path, "w") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for key, value in items.items():
            fh.write(f"{key} = {format_value(value)}\n")


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_optional_int(text):
    if text is None:
        return None
    if isinstance(text, int):
        return text
    if text.strip().lower() in ("none", "auto", ""):
        return None
    return int(text)


def _parse_shape(text):
    if isinstance(text, tuple):
        return text
    parts = str(text).lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected KZxKX, got {text!r}")
    return (int(parts[0]), int(parts[1]))


# file key -> (attribute, parser)
_FIELDS = {
    "lambda": ("lam", float),
    "rho": ("rho", float),
    "mu": ("mu", float),
    "r_f": ("r_f", _parse_optional_int),
    "rank": ("r_f", _parse_optional_int),
    "t_c": ("t_c", _parse_optional_int),
    "t_b": ("t_b", _parse_optional_int),
    "r_g": ("r_g", _parse_optional_int),
    "tau_g": ("tau_g", float),
    "epsilon": ("epsilon", float),
    "max_outer": ("max_outer", int),
    "max_inner": ("max_inner", int),
    "lasso_mu": ("lasso_mu", float),
    "lasso_tol": ("lasso_tol", float),
    "psf_shape": ("psf_shape", _parse_shape),
    "smooth_sigma": ("smooth_sigma", float),
    "magnitude_source": ("magnitude_source", str),
    "phase_source": ("phase_source", str),
    "godec_power": ("godec_power", int),
    "seed": ("seed", int),
}


@dataclass
class SolverConfig:
    """Hyperparameters for every decomposition method.

    Each solver reads only the fields it needs. ``epsilon`` is relative:
    iterations stop once ``||X_new - X||_F <= epsilon * ||S||_F``.
    """

    lam: float = 0.3
    rho: float = 1.0
    mu: float = 1.0
    r_f: int | None = None
    t_c: int | None = None
    t_b: int | None = None
    r_g: int | None = None
    tau_g: float = 0.0
    epsilon: float = 1e-6
    max_outer: int = 50
    max_inner: int = 200
    lasso_mu: float = 0.03
    lasso_tol: float = 1e-6
    psf_shape: tuple = DEFAULT_KERNEL_SHAPE
    smooth_sigma: float = DEFAULT_SMOOTH_SIGMA
    magnitude_source: str = "frames"
    phase_source: str = "frames"
    godec_power: int = 2
    seed: int = 0
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("lam", "rho", "tau_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("mu", "epsilon", "lasso_mu", "lasso_tol", "smooth_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.t_c is not None and self.t_b is not None and not self.t_c < self.t_b:
            raise ValueError(f"need t_c < t_b, got t_c={self.t_c}, t_b={self.t_b}")
        for name in ("magnitude_source", "phase_source"):
            if getattr(self, name) not in ("frames", "mean"):
                raise ValueError(f"{name} must be 'frames' or 'mean', got {getattr(self, name)!r}")
        self.psf_shape = tuple(self.psf_shape)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    def update_from_mapping(self, mapping: dict, method: str | None = None) -> "SolverConfig":
        """Apply ``key = value`` pairs; ``method.key`` entries apply to one method only.

        Method-scoped keys override unscoped ones regardless of order.
        """
        plain, scoped = {}, {}
        for key, value in mapping.items():
            if "." in key:
                prefix, name = key.split(".", 1)
                if method is not None and prefix == method:
                    scoped[name] = value
            else:
                plain[key] = value
        changes = {}
        for key, value in {**plain, **scoped}.items():
            if key not in _FIELDS:
                raise ValueError(f"unknown config key {key!r}")
            attr, parse = _FIELDS[key]
            changes[attr] = parse(value) if isinstance(value, str) else value
        return self.replace(**changes)

    @classmethod
    def from_file(cls, path, method: str | None = None) -> "SolverConfig":
        return cls().update_from_mapping(read_kv(path), method)

    def to_mapping(self) -> dict:
        out = {}
        for key, (attr, _) in _FIELDS.items():
            if key == "rank":
                continue
            out[key] = getattr(self, attr)
        return out

    def to_file(self, path) -> None:
        write_kv(path, self.to_mapping())
