"""Coreset construction over embedded log-likelihood vectors.

A coreset is a small weighted subset of samples whose weighted
log-likelihood sum approximates the full-data sum. All constructions work
on a LikelihoodEmbedding, where sample n is a vector v_n and the target is
L = sum_n v_n.

Two geometric constructions are provided. The greedy geodesic one (giga)
walks on the unit sphere: it keeps a unit iterate y, picks the candidate
direction best aligned with the residual of the normalized target, and
takes a closed-form step that maximizes post-step alignment. Repeat picks
merge into one entry, which is why entry counts stay well under the
iteration budget. The Frank-Wolfe one minimizes the reconstruction error
over a scaled simplex whose vertices are single-sample solutions. A
uniform random subsampler provides the baseline both are measured against.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import LikelihoodEmbedding
from .errors import DataError, NumericalError

# Degenerate denominators and residuals below this end construction early.
_EPS = 1e-14


@dataclass(frozen=True)
class CoresetDiagnostics:
    """How a construction went: effort, error, and the alignment path."""

    method: str
    iterations_run: int
    residual_norm: float | None
    relative_error: float | None
    alignment_trace: list[float] = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    early_stop: str | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iterations_run": self.iterations_run,
            "residual_norm": self.residual_norm,
            "relative_error": self.relative_error,
            "alignment_trace": list(self.alignment_trace),
            "wall_clock_seconds": self.wall_clock_seconds,
            "early_stop": self.early_stop,
        }

    @staticmethod
    def from_dict(d: dict) -> "CoresetDiagnostics":
        return CoresetDiagnostics(
            method=d["method"],
            iterations_run=d["iterations_run"],
            residual_norm=d["residual_norm"],
            relative_error=d["relative_error"],
            alignment_trace=list(d["alignment_trace"]),
            wall_clock_seconds=d["wall_clock_seconds"],
            early_stop=d.get("early_stop"),
        )


@dataclass(frozen=True)
class Coreset:
    """Weighted sample references, with per-entry batch provenance.

    Entries reference rows of the batch they were constructed from, so a
    coreset stays valid after batches are unioned. Weights are strictly
    positive; zero-weight candidates are never stored.
    """

    batch_ids: tuple[str, ...]
    row_indices: np.ndarray
    weights: np.ndarray
    model_family: str
    construction: CoresetDiagnostics | None = None

    def __post_init__(self):
        rows = np.asarray(self.row_indices, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        ids = tuple(self.batch_ids)
        if not (len(ids) == rows.shape[0] == weights.shape[0]):
            raise DataError("entry arrays must have matching lengths")
        if not self.model_family:
            raise DataError("model_family must be nonempty")
        if weights.size:
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise DataError("weights must be finite and strictly positive")
        if len({(b, int(r)) for b, r in zip(ids, rows)}) != rows.shape[0]:
            raise DataError("duplicate (batch, row) entries in coreset")
        rows.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "batch_ids", ids)
        object.__setattr__(self, "row_indices", rows)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            "model_family": self.model_family,
            "entries": [
                {"batch_id": b, "row_index": int(r), "weight": float(w)}
                for b, r, w in zip(self.batch_ids, self.row_indices, self.weights)
            ],
            "construction": (
                self.construction.to_dict() if self.construction else None
            ),
        }

    @staticmethod
    def from_dict(d: dict) -> "Coreset":
        entries = d["entries"]
        diag = d.get("construction")
        return Coreset(
            batch_ids=tuple(e["batch_id"] for e in entries),
            row_indices=np.array([e["row_index"] for e in entries], dtype=np.int64),
            weights=np.array([e["weight"] for e in entries], dtype=np.float64),
            model_family=d["model_family"],
            construction=CoresetDiagnostics.from_dict(diag) if diag else None,
        )


def geodesic_step_size(zeta0: float, zeta1: float, zeta2: float) -> float:
    """Closed-form step that maximizes post-step alignment on the sphere.

    For unit vectors ell (target), y (iterate), ell_n (selected candidate)
    with zeta0 = <ell, y>, zeta1 = <ell, ell_n>, zeta2 = <y, ell_n>, the
    alignment of (1 - g) y + g ell_n with ell after renormalization has a
    single interior critical point, returned here clipped to [0, 1]. It is
    the maximizer over [0, 1] whenever zeta0 >= 0 and the candidate
    improves on the iterate (zeta1 > zeta0 * zeta2), which the greedy
    selection guarantees; callers stepping outside that regime get the
    critical point, not necessarily the maximum.

    Raises:
        NumericalError: the denominator is numerically zero, meaning no
            direction of travel is defined.
    """
    denom = (zeta1 - zeta0 * zeta2) + (zeta0 - zeta1 * zeta2)
    if abs(denom) < _EPS:
        raise NumericalError(
            "degenerate geodesic step",
            diagnostics={"zeta0": zeta0, "zeta1": zeta1, "zeta2": zeta2},
        )
    return float(np.clip((zeta1 - zeta0 * zeta2) / denom, 0.0, 1.0))


def _embedding_geometry(embedding: LikelihoodEmbedding):
    """Shared setup: candidate directions and the normalized target."""
    sigma = embedding.norms
    candidates = np.flatnonzero(sigma > 0.0)
    if candidates.size == 0:
        raise DataError("every embedded row has zero norm; nothing to select")
    total = embedding.total_vector
    total_norm = float(np.linalg.norm(total))
    if total_norm < _EPS:
        raise DataError("total embedded log-likelihood is numerically zero")
    ell = total / total_norm
    directions = embedding.vectors[candidates] / sigma[candidates, None]
    return candidates, directions, sigma, total, total_norm, ell


def _finish(
    method, embedding, batch_id, model_family, candidates, weights_on_candidates,
    iterations, trace, started, early_stop,
):
    """Prune zero weights, measure reconstruction error, assemble Coreset."""
    support = np.flatnonzero(weights_on_candidates > 0.0)
    rows = candidates[support]
    weights = weights_on_candidates[support]
    total = embedding.total_vector
    total_norm = float(np.linalg.norm(total))
    approx = weights @ embedding.vectors[rows]
    residual = float(np.linalg.norm(total - approx))
    diag = CoresetDiagnostics(
        method=method,
        iterations_run=iterations,
        residual_norm=residual,
        relative_error=residual / total_norm,
        alignment_trace=trace,
        wall_clock_seconds=time.perf_counter() - started,
        early_stop=early_stop,
    )
    return Coreset(
        batch_ids=(batch_id,) * rows.shape[0],
        row_indices=rows,
        weights=weights,
        model_family=model_family,
        construction=diag,
    )


def giga_construct(
    embedding: LikelihoodEmbedding,
    m: int,
    model_family: str | None = None,
    batch_id: str = "batch0",
) -> Coreset:
    """Greedy geodesic construction with iteration budget m.

    Each iteration selects the candidate direction most aligned with the
    current residual direction and moves the unit iterate toward it by the
    closed-form geodesic step. Ties go to the lowest index. Construction
    stops early when the residual direction degenerates or no step
    improves alignment; entry count never exceeds the number of distinct
    picks, so it is at most m.
    """
    if m < 1:
        raise DataError("iteration budget m must be at least 1")
    model_family = model_family or embedding.basis.model_family
    if model_family != embedding.basis.model_family:
        raise DataError("model family does not match the embedding")
    started = time.perf_counter()
    candidates, dirs, sigma, total, total_norm, ell = _embedding_geometry(embedding)

    base_scores = dirs @ ell
    y = np.zeros(embedding.d)
    u = np.zeros(candidates.size)
    trace: list[float] = []
    zeta0 = 0.0
    early_stop = None
    iterations = 0

    for _ in range(m):
        residual = ell - zeta0 * y
        res_norm = float(np.linalg.norm(residual))
        if res_norm < _EPS:
            early_stop = "aligned"
            break
        scores = dirs @ (residual / res_norm)
        n = int(np.argmax(scores))
        if scores[n] <= 0.0:
            # Every candidate points away from the residual, so the step
            # formula would leave its valid regime. Stop with what we have.
            early_stop = "no improving direction"
            break
        zeta1 = float(base_scores[n])
        zeta2 = float(y @ dirs[n])
        try:
            gamma = geodesic_step_size(zeta0, zeta1, zeta2)
        except NumericalError:
            early_stop = "degenerate step"
            break
        if gamma == 0.0:
            early_stop = "no improving direction"
            break
        stepped = (1.0 - gamma) * y + gamma * dirs[n]
        nu = float(np.linalg.norm(stepped))
        if nu < _EPS:
            early_stop = "iterate collapsed"
            break
        y = stepped / nu
        u *= 1.0 - gamma
        u[n] += gamma
        u /= nu
        zeta0 = float(ell @ y)
        trace.append(zeta0)
        iterations += 1

    # Back to likelihood scale: the best multiple of y approximating the
    # total is (total_norm * <ell, y>) y, and y = sum_n u_n v_n / ||v_n||.
    alpha = total_norm * max(zeta0, 0.0)
    weights = alpha * u / sigma[candidates]
    return _finish(
        "giga", embedding, batch_id, model_family, candidates, weights,
        iterations, trace, started, early_stop,
    )


def frankwolfe_construct(
    embedding: LikelihoodEmbedding,
    m: int,
    model_family: str | None = None,
    batch_id: str = "batch0",
) -> Coreset:
    """Frank-Wolfe construction with iteration budget m.

    Minimizes the reconstruction error over the simplex scaled so that
    sum_n w_n ||v_n|| is preserved; vertices put all of that mass on one
    sample. Initialization at the best-aligned vertex counts as the first
    iteration, so m=1 returns a single-sample coreset.
    """
    if m < 1:
        raise DataError("iteration budget m must be at least 1")
    model_family = model_family or embedding.basis.model_family
    if model_family != embedding.basis.model_family:
        raise DataError("model family does not match the embedding")
    started = time.perf_counter()
    candidates, dirs, sigma, total, total_norm, ell = _embedding_geometry(embedding)

    sigma_total = float(sigma[candidates].sum())
    weights = np.zeros(candidates.size)
    n0 = int(np.argmax(dirs @ ell))
    weights[n0] = sigma_total / sigma[candidates[n0]]
    approx = sigma_total * dirs[n0]
    trace = [float(ell @ approx / np.linalg.norm(approx))]
    early_stop = None
    iterations = 1

    for _ in range(1, m):
        residual = total - approx
        if float(np.linalg.norm(residual)) < _EPS * total_norm:
            early_stop = "converged"
            break
        n = int(np.argmax(dirs @ residual))
        vertex = sigma_total * dirs[n]
        step_dir = vertex - approx
        denom = float(step_dir @ step_dir)
        if denom < _EPS:
            early_stop = "degenerate direction"
            break
        gamma = float(np.clip((residual @ step_dir) / denom, 0.0, 1.0))
        if gamma == 0.0:
            early_stop = "no improving step"
            break
        weights *= 1.0 - gamma
        weights[n] += gamma * sigma_total / sigma[candidates[n]]
        approx = (1.0 - gamma) * approx + gamma * vertex
        trace.append(float(ell @ approx / np.linalg.norm(approx)))
        iterations += 1

    return _finish(
        "frankwolfe", embedding, batch_id, model_family, candidates, weights,
        iterations, trace, started, early_stop,
    )


def random_construct(
    data_size: int,
    m: int,
    rng_seed: int,
    model_family: str = "any",
    batch_id: str = "batch0",
) -> Coreset:
    """Uniform random baseline: m distinct rows, each weighted n/m.

    The weight makes the subset's likelihood sum an unbiased estimate of
    the full sum. No embedding is consulted, so diagnostics carry no
    residual; use reconstruction_residual to measure one.
    """
    if data_size < 1:
        raise DataError("data_size must be at least 1")
    if not 1 <= m <= data_size:
        raise DataError(f"m must lie in [1, {data_size}], got {m}")
    started = time.perf_counter()
    rng = np.random.default_rng(rng_seed)
    rows = np.sort(rng.choice(data_size, size=m, replace=False))
    diag = CoresetDiagnostics(
        method="random",
        iterations_run=0,
        residual_norm=None,
        relative_error=None,
        alignment_trace=[],
        wall_clock_seconds=time.perf_counter() - started,
    )
    return Coreset(
        batch_ids=(batch_id,) * m,
        row_indices=rows,
        weights=np.full(m, data_size / m),
        model_family=model_family,
        construction=diag,
    )


def reconstruction_residual(
    coreset: Coreset, embedding: LikelihoodEmbedding
) -> tuple[float, float]:
    """Residual of a coreset against an embedding of its source batch.

    Returns (residual_norm, relative_error). Only valid when every entry
    references rows of the embedded dataset.
    """
    if np.any(coreset.row_indices >= embedding.n):
        raise DataError("coreset references rows outside the embedding")
    total = embedding.total_vector
    approx = coreset.weights @ embedding.vectors[coreset.row_indices]
    residual = float(np.linalg.norm(total - approx))
    return residual, residual / float(np.linalg.norm(total))


def aggregate(coresets: list[Coreset]) -> Coreset:
    """Union coresets from disjoint batches; weights pass through unchanged.

    Raises:
        DataError: empty input, mixed model families, or colliding
            (batch, row) entries.
    """
    if not coresets:
        raise DataError("nothing to aggregate")
    family = coresets[0].model_family
    for c in coresets[1:]:
        if c.model_family != family:
            raise DataError(
                f"cannot aggregate model families {family!r} and "
                f"{c.model_family!r}"
            )
    return Coreset(
        batch_ids=tuple(b for c in coresets for b in c.batch_ids),
        row_indices=np.concatenate([c.row_indices for c in coresets]),
        weights=np.concatenate([c.weights for c in coresets]),
        model_family=family,
        construction=None,
    )


def materialize(coreset: Coreset, batches: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gather (x, y, weights) for the referenced rows from their batches.

    Args:
        coreset: entries referencing rows by (batch_id, row_index).
        batches: batch_id -> Dataset.
    """
    if not batches:
        raise DataError("no batches supplied")
    xs, ys = [], []
    for batch_id, row in zip(coreset.batch_ids, coreset.row_indices):
        if batch_id not in batches:
            raise DataError(f"coreset references unknown batch {batch_id!r}")
        batch = batches[batch_id]
        if not 0 <= row < batch.n:
            raise DataError(
                f"coreset references row {row} outside batch {batch_id!r}"
            )
        xs.append(batch.x[row])
        ys.append(batch.y[row])
    x = np.vstack(xs) if xs else np.empty((0, next(iter(batches.values())).f))
    return x, np.asarray(ys), coreset.weights.copy()


def save_coreset(coreset: Coreset, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(coreset.to_dict(), indent=2) + "\n")


def load_coreset(path: str | Path) -> Coreset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such coreset file")
    return Coreset.from_dict(json.loads(path.read_text()))
