"""Finite-dimensional embeddings of per-sample log-likelihood functions.

Each sample's log-likelihood curve theta -> log L(x, y; theta) is projected
onto D parameter draws theta_1..theta_D from a weighting distribution:

    vectors[i, d] = log L(x_i, y_i; theta_d) / sqrt(D)

so Euclidean geometry on the rows approximates the function-space geometry
that coreset construction needs. The weighting distribution defaults to a
diagonal Laplace approximation of the posterior fitted on a pilot dataset,
with an isotropic prior fallback for cheap or degenerate cases.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError
from .inference import WeightedBLRModel, fit_map, laplace_scales, log_sigmoid

logger = logging.getLogger(__name__)

MODEL_BLR = "blr"
WEIGHTING_LAPLACE = "laplace"
WEIGHTING_PRIOR = "prior"


@dataclass(frozen=True)
class ProjectionBasis:
    """Parameter draws that define the projection.

    Attributes:
        theta_draws: shape (d, f), one parameter vector per dimension.
        model_family: likelihood family tag, currently only "blr".
        weighting: which distribution produced the draws.
        rng_seed: seed the draws came from.
    """

    theta_draws: np.ndarray
    model_family: str
    weighting: str
    rng_seed: int

    def __post_init__(self):
        draws = np.ascontiguousarray(np.asarray(self.theta_draws, dtype=np.float64))
        if draws.ndim != 2 or draws.shape[0] < 1:
            raise DataError("theta_draws must be a nonempty 2-d array")
        if not np.all(np.isfinite(draws)):
            raise DataError("theta_draws contain non-finite values")
        draws.flags.writeable = False
        object.__setattr__(self, "theta_draws", draws)

    @property
    def d(self) -> int:
        return self.theta_draws.shape[0]

    @property
    def f(self) -> int:
        return self.theta_draws.shape[1]


@dataclass(frozen=True)
class LikelihoodEmbedding:
    """Embedded log-likelihood rows for one dataset under one basis."""

    vectors: np.ndarray
    norms: np.ndarray
    basis: ProjectionBasis

    def __post_init__(self):
        vectors = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64))
        norms = np.asarray(self.norms, dtype=np.float64)
        vectors.flags.writeable = False
        norms.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "norms", norms)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def zero_norm(self) -> np.ndarray:
        """Mask of rows whose embedded likelihood is identically zero.

        Such rows carry no information at any basis draw and are excluded
        from coreset candidacy.
        """
        return self.norms == 0.0

    @property
    def total_vector(self) -> np.ndarray:
        return self.vectors.sum(axis=0)


def build_projection_basis(
    model_family: str,
    pilot: Dataset,
    d: int,
    rng_seed: int,
    weighting: str = WEIGHTING_LAPLACE,
) -> ProjectionBasis:
    """Draw d parameter vectors from the weighting distribution.

    With weighting="laplace" the draws come from N(theta_map, diag scales)
    where the mode and curvature are fitted on the pilot dataset by a
    deterministic optimizer. With weighting="prior" they come from the
    standard normal prior and the pilot only fixes the dimension.

    Args:
        model_family: likelihood family tag; only "blr" is supported.
        pilot: dataset the weighting distribution is tuned on.
        d: number of draws, >= 1.
        rng_seed: seed for the draws.
        weighting: "laplace" or "prior".
    """
    if model_family != MODEL_BLR:
        raise ConfigError(f"unsupported model family {model_family!r}")
    if d < 1:
        raise ConfigError("projection dimension must be at least 1")
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(size=(d, pilot.f))
    if weighting == WEIGHTING_PRIOR:
        draws = noise
    elif weighting == WEIGHTING_LAPLACE:
        pilot_model = WeightedBLRModel.from_dataset(pilot)
        theta_map = fit_map(pilot_model)
        scales = laplace_scales(pilot_model, theta_map)
        draws = theta_map + noise * scales
    else:
        raise ConfigError(f"unknown weighting {weighting!r}")
    logger.info(
        "projection basis: d=%d f=%d weighting=%s seed=%d",
        d, pilot.f, weighting, rng_seed,
    )
    return ProjectionBasis(
        theta_draws=draws,
        model_family=model_family,
        weighting=weighting,
        rng_seed=rng_seed,
    )


def embed_log_likelihoods(
    data: Dataset, model_family: str, basis: ProjectionBasis
) -> LikelihoodEmbedding:
    """Embed every sample's log-likelihood under the basis draws.

    Raises:
        DataError: the dataset dimension or family does not match the basis.
    """
    if model_family != basis.model_family:
        raise DataError(
            f"family mismatch: data embedded as {model_family!r}, "
            f"basis built for {basis.model_family!r}"
        )
    if data.f != basis.f:
        raise DataError(
            f"feature dimension {data.f} does not match basis dimension {basis.f}"
        )
    margins = data.y[:, None] * (data.x @ basis.theta_draws.T)
    vectors = log_sigmoid(margins) / np.sqrt(basis.d)
    norms = np.linalg.norm(vectors, axis=1)
    return LikelihoodEmbedding(vectors=vectors, norms=norms, basis=basis)


def save_embedding(embedding: LikelihoodEmbedding, stem: str | Path):
    """Persist as <stem>.npz (vectors and basis draws) plus a JSON header."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        stem.with_suffix(".npz"),
        vectors=embedding.vectors,
        theta_draws=embedding.basis.theta_draws,
    )
    header = {
        "n": embedding.n,
        "d": embedding.d,
        "model_family": embedding.basis.model_family,
        "weighting": embedding.basis.weighting,
        "rng_seed": embedding.basis.rng_seed,
    }
    stem.with_suffix(".json").write_text(json.dumps(header) + "\n")


def load_embedding(stem: str | Path) -> LikelihoodEmbedding:
    stem = Path(stem)
    arrays = np.load(stem.with_suffix(".npz"))
    header = json.loads(stem.with_suffix(".json").read_text())
    basis = ProjectionBasis(
        theta_draws=arrays["theta_draws"],
        model_family=header["model_family"],
        weighting=header["weighting"],
        rng_seed=header["rng_seed"],
    )
    vectors = arrays["vectors"]
    return LikelihoodEmbedding(
        vectors=vectors, norms=np.linalg.norm(vectors, axis=1), basis=basis
    )
