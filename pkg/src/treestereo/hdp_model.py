"""Statistical model linking disparities across adjacent pyramid levels.

When a pixel at level l carries disparity j, its parent block pixel at level
l+1 carries i = floor(j / S) plus a small integer offset o.  Those offsets
concentrate tightly around zero, so a 1-D Gaussian mixture per level
transition captures them well:

    P(parent = i | child = j) ~ GMM_l(i - floor(j / S)),   column-normalized.

Combining that conditional with a prior over child disparities estimated
from the images themselves gives, via Bayes' rule, the distribution of the
child disparity given the parent's:

    P(child = j | parent = i)  proportional to  P(i | j) * P(j),

row-normalized.  Thresholding each row then yields, per coarse disparity, a
small set of fine disparities worth searching: scanning candidates j in
descending posterior order, a candidate joins the set while its probability
P stays significant relative to the mass c already collected,
P / (c + P) >= delta.  Because the scan is ordered, the first failure would
also fail every later candidate, so stopping there is exact.  Larger delta
means thinner intervals; the threshold grows geometrically with the level
(delta_l = delta_0 * S^l) since coarse errors are cheaper to keep than fine
ones are to search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .cost_volume import CostParams, PreparedLayer, prepare_layer
from .errors import ConfigError, DataError, InternalError
from .pyramid import PyramidLayer
from .raster_io import DisparityMap

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 0.25
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Mixture1D:
    """A 1-D Gaussian mixture: weights, means, and floored deviations."""

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    loglik_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        k = self.weights.shape[0]
        if self.means.shape != (k,) or self.sigmas.shape != (k,):
            raise ConfigError("mixture parameter arrays disagree in length")
        if np.any(self.sigmas <= 0):
            raise ConfigError("mixture sigmas must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def density(self, x: np.ndarray) -> np.ndarray:
        """Mixture pdf evaluated elementwise."""
        x = np.asarray(x, dtype=np.float64)
        z = (x[..., None] - self.means) / self.sigmas
        comp = np.exp(-0.5 * z * z) / (self.sigmas * np.sqrt(2.0 * np.pi))
        return comp @ self.weights


@dataclass(frozen=True)
class GmmModel:
    """One offset mixture per pyramid transition; layers[l] links level l to l+1."""

    layers: tuple[Mixture1D, ...]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def save(self, path: str | Path, comments: tuple[str, ...] = ()) -> None:
        lines = ["# offset mixture model: one 1-D GMM per pyramid level transition"]
        lines += [f"# {c}" for c in comments]
        lines += ["version 1", f"layers {self.n_layers}"]
        for idx, mix in enumerate(self.layers):
            lines.append(f"layer {idx}")
            lines.append(f"components {mix.n_components}")
            lines.append("pi " + " ".join(repr(float(w)) for w in mix.weights))
            lines.append("mu " + " ".join(repr(float(m)) for m in mix.means))
            lines.append("sigma " + " ".join(repr(float(s)) for s in mix.sigmas))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GmmModel":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read model {path}: {exc}") from exc
        return cls.parse(text, source=str(path))

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "GmmModel":
        rows = [
            ln.strip()
            for ln in text.splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")
        ]

        def fail(msg: str) -> DataError:
            return DataError(f"{source}: malformed model file: {msg}")

        it = iter(rows)

        def take(prefix: str) -> str:
            try:
                line = next(it)
            except StopIteration:
                raise fail(f"missing '{prefix}' line") from None
            if not line.startswith(prefix + " "):
                raise fail(f"expected '{prefix} ...', got {line!r}")
            return line[len(prefix) + 1 :]

        if take("version") != "1":
            raise fail("unsupported version")
        try:
            n_layers = int(take("layers"))
        except ValueError as exc:
            raise fail("bad layer count") from exc
        layers = []
        for idx in range(n_layers):
            if take("layer") != str(idx):
                raise fail(f"expected layer {idx}")
            try:
                k = int(take("components"))
                pi = np.array([float(t) for t in take("pi").split()])
                mu = np.array([float(t) for t in take("mu").split()])
                sigma = np.array([float(t) for t in take("sigma").split()])
            except ValueError as exc:
                raise fail(f"bad numeric field in layer {idx}") from exc
            if not (len(pi) == len(mu) == len(sigma) == k):
                raise fail(f"layer {idx} parameter lengths disagree with K={k}")
            layers.append(Mixture1D(weights=pi, means=mu, sigmas=sigma))
        return cls(layers=tuple(layers))


def coarsen_ground_truth(
    gt: DisparityMap, block_size: int, levels: int
) -> list[DisparityMap]:
    """Derive per-level ground truth: parent = floor(median of valid children / S).

    Returns [level 0 .. level `levels`].  A parent whose block holds no valid
    child is invalid.
    """
    maps = [gt]
    for _ in range(levels):
        child = maps[-1]
        s = block_size
        ph = -(-child.height // s)
        pw = -(-child.width // s)
        vals = np.full((ph * s, pw * s), np.inf)
        ok = np.zeros((ph * s, pw * s), dtype=bool)
        vals[: child.height, : child.width] = np.where(child.valid, child.values, np.inf)
        ok[: child.height, : child.width] = child.valid
        blocks = vals.reshape(ph, s, pw, s).transpose(0, 2, 1, 3).reshape(ph * pw, s * s)
        okb = ok.reshape(ph, s, pw, s).transpose(0, 2, 1, 3).reshape(ph * pw, s * s)
        counts = okb.sum(axis=1)
        ordered = np.sort(blocks, axis=1)  # invalid entries (inf) sort to the end
        rows = np.arange(ph * pw)
        safe = np.maximum(counts, 1)
        lo = ordered[rows, (safe - 1) // 2]
        hi = ordered[rows, safe // 2]
        median = (lo + hi) / 2.0
        valid = counts > 0
        values = np.zeros(ph * pw, dtype=np.int32)
        values[valid] = np.floor(median[valid] / s).astype(np.int32)
        maps.append(
            DisparityMap(
                values=values.reshape(ph, pw),
                valid=valid.reshape(ph, pw),
                scale=gt.scale,
            )
        )
    return maps


def collect_offsets(
    child_gt: DisparityMap, parent_gt: DisparityMap, block_size: int
) -> np.ndarray:
    """Offsets o = parent - floor(child / S) wherever both levels are valid."""
    s = block_size
    rows = np.arange(child_gt.height) // s
    cols = np.arange(child_gt.width) // s
    parent_vals = parent_gt.values[np.ix_(rows, cols)]
    parent_ok = parent_gt.valid[np.ix_(rows, cols)]
    both = child_gt.valid & parent_ok
    return (parent_vals[both] - child_gt.values[both] // s).astype(np.float64)


def _init_means(samples: np.ndarray, k: int) -> np.ndarray:
    qs = np.quantile(samples, (np.arange(k) + 0.5) / k)
    # Identical quantiles (integer-lattice samples) would collapse components;
    # nudge them apart deterministically.
    if np.unique(qs).size < k:
        qs = qs + np.linspace(-0.25, 0.25, k)
    return qs


def train_mixture(
    samples: np.ndarray,
    n_components: int = 3,
    max_iters: int = 100,
    tol: float = 1e-6,
    sigma_floor: float = SIGMA_FLOOR,
) -> Mixture1D:
    """Fit a 1-D GMM by EM with a deviation floor.

    The floor keeps integer-valued offset samples from driving a component's
    deviation to zero (a density singularity).  Flooring can in principle dip
    the log-likelihood, so each iteration is accepted only if the likelihood
    did not decrease; a decreasing step reverts and stops.  The recorded
    history is therefore non-decreasing.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise DataError("cannot fit a mixture to zero offset samples")
    if n_components < 1:
        raise ConfigError(f"n_components must be >= 1, got {n_components}")
    k = n_components
    weights = np.full(k, 1.0 / k)
    means = _init_means(samples, k)
    sigmas = np.full(k, max(float(samples.std()), sigma_floor))

    history: list[float] = []
    prev = (weights, means, sigmas)
    for _ in range(max_iters):
        log_comp = (
            -0.5 * ((samples[:, None] - means) / sigmas) ** 2
            - np.log(sigmas)
            - LOG_SQRT_2PI
            + np.log(np.maximum(weights, 1e-300))
        )
        log_norm = logsumexp(log_comp, axis=1)
        ll = float(log_norm.sum())
        if history and ll < history[-1] - 1e-9:
            weights, means, sigmas = prev  # flooring overshot; keep last good fit
            break
        converged = bool(history) and abs(ll - history[-1]) <= tol * (
            1.0 + abs(history[-1])
        )
        history.append(ll)
        if converged:
            break
        prev = (weights, means, sigmas)
        resp = np.exp(log_comp - log_norm[:, None])
        mass = resp.sum(axis=0)
        alive = mass > 1e-12
        weights = mass / samples.size
        new_means = means.copy()
        new_sigmas = sigmas.copy()
        new_means[alive] = (resp[:, alive] * samples[:, None]).sum(axis=0) / mass[alive]
        var = (resp[:, alive] * (samples[:, None] - new_means[alive]) ** 2).sum(
            axis=0
        ) / mass[alive]
        new_sigmas[alive] = np.maximum(np.sqrt(var), sigma_floor)
        means, sigmas = new_means, new_sigmas
    return Mixture1D(
        weights=weights,
        means=means,
        sigmas=sigmas,
        loglik_history=tuple(history),
    )


def train_gmm(
    samples_per_layer: list[np.ndarray],
    n_components: int = 3,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> GmmModel:
    """Fit one offset mixture per pyramid transition.

    Requires at least 10 * n_components samples per transition; fewer
    indicate an unusable training set rather than a tuning issue.
    """
    for level, samples in enumerate(samples_per_layer):
        if np.asarray(samples).size < 10 * n_components:
            raise DataError(
                f"level {level} transition has {np.asarray(samples).size} offset "
                f"samples; need at least {10 * n_components}"
            )
    return GmmModel(
        layers=tuple(
            train_mixture(s, n_components, max_iters, tol) for s in samples_per_layer
        )
    )


@dataclass(frozen=True)
class ConditionalMatrix:
    """A conditional probability table between adjacent levels.

    direction 'parent_given_child': matrix[i, j] = P(parent=i | child=j),
    columns sum to 1.  direction 'child_given_parent': matrix[i, j] =
    P(child=j | parent=i), rows sum to 1.  Rows always index the parent
    (coarse) disparity and columns the child (fine) one.
    """

    matrix: np.ndarray
    direction: str

    def __post_init__(self) -> None:
        if self.direction not in ("parent_given_child", "child_given_parent"):
            raise ConfigError(f"unknown direction {self.direction!r}")


def conditional_parent_given_child(
    mixture: Mixture1D, d_child: int, d_parent: int, block_size: int
) -> ConditionalMatrix:
    """P(parent = i | child = j) = GMM(i - floor(j / S)), column-normalized."""
    i = np.arange(d_parent + 1)
    j = np.arange(d_child + 1)
    offsets = i[:, None] - (j // block_size)[None, :]
    dens = mixture.density(offsets)
    col_sum = dens.sum(axis=0)
    if np.any(col_sum <= 0):
        raise InternalError("conditional column vanished; mixture degenerated")
    return ConditionalMatrix(matrix=dens / col_sum, direction="parent_given_child")


def bayes_child_given_parent(
    conditional: ConditionalMatrix, prior: np.ndarray
) -> ConditionalMatrix:
    """Invert P(parent | child) against a child prior; rows normalized.

    A row whose mass underflows to zero falls back to the uniform
    distribution (with a warning) rather than poisoning the pipeline.
    """
    if conditional.direction != "parent_given_child":
        raise ConfigError("bayes inversion expects a parent_given_child matrix")
    prior = np.asarray(prior, dtype=np.float64)
    n_parent, n_child = conditional.matrix.shape
    if prior.shape != (n_child,):
        raise ConfigError(
            f"prior length {prior.shape} does not match child range {n_child}"
        )
    if np.any(prior < 0):
        raise ConfigError("prior has negative entries")
    joint = conditional.matrix * prior[None, :]
    row_sum = joint.sum(axis=1, keepdims=True)
    dead = row_sum[:, 0] <= 0.0
    if np.any(dead):
        logger.warning(
            "%d of %d posterior rows had zero mass; using uniform fallback",
            int(dead.sum()),
            n_parent,
        )
        joint[dead] = 1.0
        row_sum = joint.sum(axis=1, keepdims=True)
    return ConditionalMatrix(matrix=joint / row_sum, direction="child_given_parent")


def _window_indices(
    centers_r: np.ndarray, centers_c: np.ndarray, h: int, w: int, window: int
) -> tuple[np.ndarray, np.ndarray]:
    half = window // 2
    span = np.arange(-half, half + 1)
    rows = np.clip(centers_r[:, None, None] + span[None, :, None], 0, h - 1)
    cols = np.clip(centers_c[:, None, None] + span[None, None, :], 0, w - 1)
    rows, cols = np.broadcast_arrays(rows, cols)
    return rows.reshape(len(centers_r), -1), cols.reshape(len(centers_c), -1)


def _matched_window_cost(
    src: PreparedLayer,
    dst: PreparedLayer,
    rows: np.ndarray,
    src_cols: np.ndarray,
    dst_cols: np.ndarray,
    params: CostParams,
) -> np.ndarray:
    """Window-summed truncated cost between explicit pixel correspondences."""
    w = src.gray.shape[1]
    inside = (dst_cols >= 0) & (dst_cols < w)
    safe = np.clip(dst_cols, 0, w - 1)
    color = np.abs(src.unit[rows, src_cols] - dst.unit[rows, safe]).mean(axis=-1)
    grad = np.abs(src.grad[rows, src_cols] - dst.grad[rows, safe])
    cost = (1.0 - params.alpha) * np.minimum(params.tau_color, color)
    cost += params.alpha * np.minimum(params.tau_grad, grad)
    cost = np.where(inside, cost, params.border_cost)
    return cost.mean(axis=-1)


def _windowed_wta(
    src: PreparedLayer,
    dst: PreparedLayer,
    centers_r: np.ndarray,
    centers_c: np.ndarray,
    d_max: int,
    params: CostParams,
    sign: int,
    window: int,
) -> np.ndarray:
    """Winner-takes-all over window-aggregated costs at sample centers.

    sign -1 matches src pixels against dst at col - x (left image as source);
    sign +1 matches against col + x (right image as source).  Ties pick the
    smallest disparity.
    """
    h, w = src.gray.shape
    rows, cols = _window_indices(centers_r, centers_c, h, w, window)
    best = np.full(len(centers_r), np.inf)
    winner = np.zeros(len(centers_r), dtype=np.int64)
    for x in range(d_max + 1):
        cost = _matched_window_cost(src, dst, rows, cols, cols + sign * x, params)
        better = cost < best
        winner[better] = x
        best[better] = cost[better]
    return winner


def estimate_prior(
    left_layer: PyramidLayer,
    right_layer: PyramidLayer,
    params: CostParams | None = None,
    sample_stride: int = 5,
    window: int = 7,
    max_offset: int = 1,
) -> np.ndarray:
    """Histogram prior over child disparities from a sparse, cheap matching.

    The layer is tiled into sample_stride x sample_stride squares; at each
    square's center pixel a window-aggregated winner-takes-all disparity is
    computed in both matching directions, and a sample survives only if the
    two directions agree within max_offset (a cross-check that rejects
    occlusions and flat failures).  Surviving disparities are histogrammed
    with add-one smoothing, so the prior is strictly positive and sums to 1.
    """
    params = params or CostParams()
    if sample_stride < 1 or window < 1 or window % 2 == 0:
        raise ConfigError("sample_stride must be >= 1 and window odd and positive")
    h, w, d_max = left_layer.height, left_layer.width, left_layer.d_max
    left = prepare_layer(left_layer)
    right = prepare_layer(right_layer)

    r_starts = np.arange(0, h, sample_stride)
    c_starts = np.arange(0, w, sample_stride)
    r_centers = (r_starts + np.minimum(r_starts + sample_stride, h) - 1) // 2
    c_centers = (c_starts + np.minimum(c_starts + sample_stride, w) - 1) // 2
    rr, cc = np.meshgrid(r_centers, c_centers, indexing="ij")
    rr = rr.ravel()
    cc = cc.ravel()

    d_left = _windowed_wta(left, right, rr, cc, d_max, params, -1, window)
    match_c = cc - d_left
    feasible = match_c >= 0
    d_right = _windowed_wta(
        right, left, rr[feasible], match_c[feasible], d_max, params, +1, window
    )
    stable = np.abs(d_left[feasible] - d_right) <= max_offset
    kept = d_left[feasible][stable]
    if kept.size == 0:
        logger.warning("no cross-checked samples survived; prior falls back to uniform")
        return np.full(d_max + 1, 1.0 / (d_max + 1))
    hist = np.bincount(kept, minlength=d_max + 1).astype(np.float64)
    hist += 1.0  # add-one smoothing keeps every disparity reachable
    return hist / hist.sum()


@dataclass(frozen=True)
class DisparityIntervalTable:
    """Per coarse disparity i, the predicted set of fine disparities."""

    intervals: tuple[np.ndarray, ...]
    delta: float

    @property
    def n_rows(self) -> int:
        return len(self.intervals)

    def sizes(self) -> np.ndarray:
        return np.array([iv.size for iv in self.intervals], dtype=np.int64)

    def masks(self) -> list[int]:
        """Each row as a disparity bitset (bit j set iff j is in the row)."""
        out = []
        for iv in self.intervals:
            m = 0
            for j in iv.tolist():
                m |= 1 << j
            out.append(m)
        return out


def predict_intervals(
    bayes: ConditionalMatrix, delta: float
) -> DisparityIntervalTable:
    """Threshold each posterior row into a candidate set of fine disparities.

    Candidates are taken in descending probability (ties toward the smaller
    disparity).  The most probable one always enters; each further candidate
    with probability P joins while P / (c + P) >= delta, where c is the mass
    already accepted.  The ratio only shrinks as the scan proceeds, so the
    scan stops at the first failure.
    """
    if bayes.direction != "child_given_parent":
        raise ConfigError("interval prediction expects a child_given_parent matrix")
    if delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    intervals = []
    for row in bayes.matrix:
        order = np.argsort(-row, kind="stable")  # descending, ties ascending j
        chosen = [int(order[0])]
        c = float(row[order[0]])
        for j in order[1:].tolist():
            p = float(row[j])
            if p / (c + p) < delta:
                break
            chosen.append(j)
            c += p
        intervals.append(np.array(sorted(chosen), dtype=np.int64))
    return DisparityIntervalTable(intervals=tuple(intervals), delta=delta)
