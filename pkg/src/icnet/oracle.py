"""Exact verification substrate on a discretized 2D domain.

Every distribution involved in the pseudo-negative update (the reference
prior, each round's p_t-, the analytic positive density) becomes a discrete
measure over grid-cell centers. The update rule, its normalizer Z_t, KL
divergences and the round-to-round ratio normalizer H are then plain finite
sums, so the convergence identity can be checked to near machine precision.

All internal bookkeeping is in log space; exponentials happen only after
subtracting the running max.
"""

from dataclasses import dataclass

import numpy as np

from . import network as N

Array = np.ndarray

DEFAULT_BOUNDS = ((-3.0, 3.0), (-3.0, 3.0))
DEFAULT_RESOLUTION = (128, 128)


class OracleError(Exception):
    pass


class GridMismatchError(OracleError):
    pass


def _logsumexp(values: Array) -> float:
    m = values.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(values - m).sum()))


@dataclass
class GridDensity:
    """Normalized discrete measure over an axis-aligned cell grid.

    log_mass is canonical (cells with zero mass carry -inf); mass is derived
    and sums to 1 within 1e-12.
    """

    bounds: tuple
    resolution: tuple
    log_mass: Array  # shape (nx, ny)

    def __post_init__(self):
        nx, ny = self.resolution
        if nx < 2 or ny < 2:
            raise OracleError(f"resolution {self.resolution} below 2 per axis")
        if self.log_mass.shape != (nx, ny):
            raise OracleError(f"log_mass shape {self.log_mass.shape} vs {self.resolution}")
        if np.any(np.isnan(self.log_mass)) or np.any(self.log_mass == np.inf):
            raise OracleError("log_mass must be finite or -inf")

    @classmethod
    def from_log_unnormalized(cls, bounds, resolution, log_u: Array) -> "GridDensity":
        total = _logsumexp(log_u.reshape(-1))
        if not np.isfinite(total):
            raise OracleError("grid carries no mass")
        return cls(tuple(bounds), tuple(resolution), log_u - total)

    @classmethod
    def from_mass(cls, bounds, resolution, mass) -> "GridDensity":
        mass = np.asarray(mass, dtype=np.float64)
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise OracleError("cell masses must be finite and nonnegative")
        with np.errstate(divide="ignore"):
            return cls.from_log_unnormalized(bounds, resolution, np.log(mass))

    @property
    def mass(self) -> Array:
        return np.exp(self.log_mass)

    def cell_centers(self) -> Array:
        """(nx*ny, 2) centers, x-major to match flattened mass ordering."""
        (x0, x1), (y0, y1) = self.bounds
        nx, ny = self.resolution
        xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
        ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)

    def cell_area(self) -> float:
        (x0, x1), (y0, y1) = self.bounds
        nx, ny = self.resolution
        return (x1 - x0) / nx * ((y1 - y0) / ny)

    def same_grid(self, other: "GridDensity") -> bool:
        return (self.resolution == other.resolution
                and np.allclose(self.bounds, other.bounds, atol=0))


def _require_same_grid(a: GridDensity, b: GridDensity) -> None:
    if not a.same_grid(b):
        raise GridMismatchError(f"grids differ: {a.bounds}/{a.resolution} vs "
                                f"{b.bounds}/{b.resolution}")


def build_grid(bounds, resolution, density_fn, log_density_fn=None) -> GridDensity:
    """Discretize a density: cell mass = density(center) * area, normalized."""
    nx, ny = resolution
    probe = GridDensity(tuple(bounds), tuple(resolution),
                        np.zeros((nx, ny)) - np.log(nx * ny))
    centers = probe.cell_centers()
    if log_density_fn is not None:
        log_d = np.asarray(log_density_fn(centers), dtype=np.float64)
    else:
        d = np.asarray(density_fn(centers), dtype=np.float64)
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise OracleError("density must be finite and nonnegative on the grid")
        with np.errstate(divide="ignore"):
            log_d = np.log(d)
    log_u = (log_d + np.log(probe.cell_area())).reshape(nx, ny)
    return GridDensity.from_log_unnormalized(bounds, resolution, log_u)


def reference_grid(sigma: float = 0.3, bounds=DEFAULT_BOUNDS,
                   resolution=DEFAULT_RESOLUTION) -> GridDensity:
    """Discretized isotropic zero-mean Gaussian reference p_r-."""

    def log_density(pts):
        return -0.5 * (pts ** 2).sum(axis=1) / sigma ** 2 - np.log(2 * np.pi * sigma ** 2)

    return build_grid(bounds, resolution, None, log_density_fn=log_density)


def _grid_logits(grid: GridDensity, classifier: N.BinaryClassifier) -> Array:
    return N.logit_binary(classifier, grid.cell_centers()).reshape(grid.resolution)


def density_update(prior: GridDensity,
                   classifier: N.BinaryClassifier) -> tuple[GridDensity, float]:
    """One pseudo-negative update on the grid.

    New cell mass is prior mass times the probability ratio
    q(+1|x)/q(-1|x) = exp(logit), divided by the explicit normalizer
    Z = sum(exp(logit) * prior mass). Returns (p_t-, Z); Z is evaluated
    after max-logit subtraction so large logits cannot overflow.
    """
    logits = _grid_logits(prior, classifier)
    log_u = prior.log_mass + logits
    log_z = _logsumexp(log_u.reshape(-1))
    updated = GridDensity(prior.bounds, prior.resolution, log_u - log_z)
    return updated, float(np.exp(log_z))


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    """Sum over cells of p * ln(p/q); +inf when q misses mass p carries."""
    _require_same_grid(p, q)
    lp, lq = p.log_mass.reshape(-1), q.log_mass.reshape(-1)
    support = lp > -np.inf
    if np.any(lq[support] == -np.inf):
        return float("inf")
    terms = np.exp(lp[support]) * (lp[support] - lq[support])
    return float(terms.sum())


def round_ratio_normalizer(p_t: GridDensity, c_t: N.BinaryClassifier,
                           c_next: N.BinaryClassifier) -> float:
    """H = sum over cells of exp(logit_next - logit_t) * p_t mass.

    Equal classifiers give H = 1 exactly. H <= 1 signals that the newer
    classifier scores the current pseudo-negatives lower on average, the
    premise of the convergence argument; callers report H > 1 rounds rather
    than asserting the premise.
    """
    diff = _grid_logits(p_t, c_t)
    diff = _grid_logits(p_t, c_next) - diff
    log_h = _logsumexp((p_t.log_mass + diff).reshape(-1))
    return float(np.exp(log_h))


def update_identity_sides(p_plus: GridDensity, prior: GridDensity,
                          c_t: N.BinaryClassifier,
                          c_next: N.BinaryClassifier) -> tuple[float, float]:
    """Both sides of the per-round KL identity, assembled independently.

    Left: KL[p+ || p_t-] - KL[p+ || p_next-] via two density updates.
    Right: ln(1/H) + sum over cells of p+ * (logit_next - logit_t).
    """
    _require_same_grid(p_plus, prior)
    p_t, _ = density_update(prior, c_t)
    p_next, _ = density_update(prior, c_next)
    left = kl_divergence(p_plus, p_t) - kl_divergence(p_plus, p_next)
    h = round_ratio_normalizer(p_t, c_t, c_next)
    diff = _grid_logits(prior, c_next) - _grid_logits(prior, c_t)
    support = p_plus.log_mass > -np.inf
    gain = float((np.exp(p_plus.log_mass[support]) * diff[support]).sum())
    right = -np.log(h) + gain
    return left, right


def exact_grid_sample(p: GridDensity, count: int, rng: np.random.Generator) -> Array:
    """Exact draw: multinomial over cells, uniform jitter inside each cell,
    then one shuffle so sample order carries no cell structure."""
    if count < 1:
        raise OracleError("need at least one sample")
    flat = p.mass.reshape(-1)
    cell_counts = rng.multinomial(count, flat / flat.sum())
    centers = p.cell_centers()
    (x0, x1), (y0, y1) = p.bounds
    nx, ny = p.resolution
    half = np.array([(x1 - x0) / nx, (y1 - y0) / ny]) / 2.0
    occupied = np.flatnonzero(cell_counts)
    reps = np.repeat(occupied, cell_counts[occupied])
    jitter = rng.uniform(-1.0, 1.0, size=(count, 2)) * half
    samples = centers[reps] + jitter
    return samples[rng.permutation(count)]


def exact_synthesizer(prior: GridDensity):
    """Drop-in synthesis source for the trainer that bypasses gradient-based
    chains: each round computes p_t- exactly on the grid and samples it."""

    def synthesize(classifier, count, rng, class_index=None):
        if class_index is not None:
            raise OracleError("the grid oracle covers the binary 2D setting only")
        p_t, _ = density_update(prior, classifier)
        return exact_grid_sample(p_t, count, rng), None

    return synthesize


def cell_mass_at(p: GridDensity, points) -> Array:
    """Mass of the cell containing each point (0 outside the bounds)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    (x0, x1), (y0, y1) = p.bounds
    nx, ny = p.resolution
    ix = np.floor((pts[:, 0] - x0) / (x1 - x0) * nx).astype(np.intp)
    iy = np.floor((pts[:, 1] - y0) / (y1 - y0) * ny).astype(np.intp)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    out = np.zeros(pts.shape[0])
    out[inside] = p.mass[ix[inside], iy[inside]]
    return out


def grid_to_csv(p: GridDensity, path) -> None:
    centers = p.cell_centers()
    flat = p.mass.reshape(-1)
    with open(path, "w", newline="") as fh:
        fh.write("x,y,mass\r\n")
        for (x, y), m in zip(centers, flat):
            fh.write(f"{x:.9g},{y:.9g},{m:.9g}\r\n")


def heatmap_gray(p: GridDensity) -> Array:
    """Per-cell 8-bit gray levels, linear in mass with the peak at 255."""
    m = p.mass
    peak = m.max()
    if peak <= 0:
        return np.zeros(p.resolution, dtype=np.uint8)
    return np.floor(m / peak * 255.0 + 0.5).astype(np.uint8)
