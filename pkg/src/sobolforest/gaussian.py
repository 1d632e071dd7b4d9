"""Centered Gaussian covariate simulators with calibrated noise.

The response is m(X) + eps with eps Gaussian and its variance chosen so that
Var[eps] / Var[Y] equals the requested noise ratio, using the analytic
variance of m when a closed form exists and a large pilot sample otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import ConfigError, Dataset, Rng

_PILOT_N = 100_000


def example1_regression(x: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """alpha * x1 * x2 when x3 > 0, beta * x4 * x5 when x3 < 0."""
    return alpha * x[:, 0] * x[:, 1] * (x[:, 2] > 0) + beta * x[:, 3] * x[:, 4] * (
        x[:, 2] < 0
    )


@dataclass(frozen=True)
class GaussianSpec:
    """Simulation law: X ~ N(0, cov), Y = m(X) + eps.

    kind selects m: "example1" uses the two-regime interaction function above
    (params: alpha, beta), "linear" uses coefficients `coefs`, and "custom"
    takes a callable under params["fn"] (not JSON-serializable) with an
    optional known variance params["var_m"].
    """

    cov: np.ndarray
    kind: str = "linear"
    params: dict = field(default_factory=dict)
    noise_ratio: float = 0.1

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ConfigError("cov must be a square matrix")
        if not np.allclose(cov, cov.T):
            raise ConfigError("cov must be symmetric")
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ConfigError("noise_ratio must be in [0, 1)")
        if self.kind not in ("example1", "linear", "custom"):
            raise ConfigError(f"unknown regression kind: {self.kind!r}")
        if self.kind == "linear":
            c = np.asarray(self.params.get("coefs", ()), dtype=np.float64)
            if c.shape != (cov.shape[0],):
                raise ConfigError("linear spec needs a length-p 'coefs' entry")
        object.__setattr__(self, "cov", cov)

    @property
    def p(self) -> int:
        return self.cov.shape[0]

    def regression(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "example1":
            return example1_regression(
                x, self.params.get("alpha", 1.5), self.params.get("beta", 1.0)
            )
        if self.kind == "linear":
            return x @ np.asarray(self.params["coefs"], dtype=np.float64)
        return self.params["fn"](x)

    def var_m(self, rng: Rng | None = None) -> float:
        """Analytic Var[m(X)] when known, pilot-sample plug-in otherwise."""
        if self.kind == "linear":
            c = np.asarray(self.params["coefs"], dtype=np.float64)
            return float(c @ self.cov @ c)
        if self.kind == "example1":
            from .analytic import example1_var_m

            s = np.sqrt(np.diag(self.cov))
            rho12 = self.cov[0, 1] / (s[0] * s[1])
            rho45 = self.cov[3, 4] / (s[3] * s[4])
            return example1_var_m(
                self.params.get("alpha", 1.5),
                self.params.get("beta", 1.0),
                s,
                rho12,
                rho45,
            )
        if "var_m" in self.params:
            return float(self.params["var_m"])
        gen = (rng or Rng(0)).child(977).generator()
        chol = self._chol()
        xs = gen.standard_normal((_PILOT_N, self.p)) @ chol.T
        return float(np.var(self.regression(xs), ddof=1))

    def var_y(self, rng: Rng | None = None) -> float:
        return self.var_m(rng) / (1.0 - self.noise_ratio)

    def _chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ConfigError(f"cov is not positive-definite: {exc}") from exc

    def to_json(self) -> dict:
        if self.kind == "custom":
            raise ConfigError("custom regression functions are not serializable")
        params = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.params.items()
        }
        return {
            "kind": self.kind,
            "cov": self.cov.tolist(),
            "params": params,
            "noise_ratio": self.noise_ratio,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GaussianSpec":
        return cls(
            cov=np.asarray(obj["cov"], dtype=np.float64),
            kind=obj.get("kind", "linear"),
            params=dict(obj.get("params", {})),
            noise_ratio=float(obj.get("noise_ratio", 0.1)),
        )

    @classmethod
    def load(cls, path) -> "GaussianSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def example1_spec(
    alpha: float = 1.5,
    beta: float = 1.0,
    sigma=(1.0, 1.0, 1.0, 1.0, 1.0),
    rho12: float = 0.9,
    rho45: float = 0.6,
    noise_ratio: float = 0.1,
) -> GaussianSpec:
    """Five correlated Gaussians with the two-regime interaction response."""
    s = np.asarray(sigma, dtype=np.float64)
    if s.shape != (5,):
        raise ConfigError("sigma must have length 5")
    if not (abs(rho12) < 1 and abs(rho45) < 1):
        raise ConfigError("correlations must be in (-1, 1)")
    cov = np.diag(s**2)
    cov[0, 1] = cov[1, 0] = rho12 * s[0] * s[1]
    cov[3, 4] = cov[4, 3] = rho45 * s[3] * s[4]
    return GaussianSpec(
        cov=cov,
        kind="example1",
        params={"alpha": alpha, "beta": beta},
        noise_ratio=noise_ratio,
    )


def example2_spec(
    n_groups: int = 5,
    group_size: int = 40,
    rho: float = 0.8,
    coefs=(2.0, 1.0, 1.0, 1.0, 1.0),
    noise_ratio: float = 0.1,
) -> GaussianSpec:
    """Independent blocks of equicorrelated unit-variance Gaussians; the
    response is linear in the first covariate of each block."""
    if len(coefs) != n_groups:
        raise ConfigError("need one coefficient per group")
    p = n_groups * group_size
    cov = np.zeros((p, p))
    block = np.full((group_size, group_size), rho)
    np.fill_diagonal(block, 1.0)
    c = np.zeros(p)
    for g in range(n_groups):
        sl = slice(g * group_size, (g + 1) * group_size)
        cov[sl, sl] = block
        c[g * group_size] = coefs[g]
    return GaussianSpec(
        cov=cov, kind="linear", params={"coefs": c}, noise_ratio=noise_ratio
    )


def independent_linear_spec(coefs, noise_ratio: float = 0.1) -> GaussianSpec:
    """Independent standard Gaussians with a linear response."""
    c = np.asarray(coefs, dtype=np.float64)
    return GaussianSpec(
        cov=np.eye(c.size), kind="linear", params={"coefs": c}, noise_ratio=noise_ratio
    )


def sample_gaussian(spec: GaussianSpec, n: int, rng: Rng) -> Dataset:
    """Draw a Dataset of n rows from the spec's law."""
    chol = spec._chol()
    gen = rng.generator()
    x = gen.standard_normal((n, spec.p)) @ chol.T
    m = spec.regression(x)
    var_m = spec.var_m(rng)
    var_eps = var_m * spec.noise_ratio / (1.0 - spec.noise_ratio)
    y = m + gen.standard_normal(n) * np.sqrt(var_eps)
    return Dataset(x, y)
