"""Kaleidoscopic sampling: repeatedly feed a trained model its own output.

A chain starts from random noise ``x0`` and iterates
``x[t+1] = f(x[t]) + eps * noise[t]``. With ``eps = 0`` this is the plain
``B``-fold composition of ``f``. Every chain draws its randomness from its
own generator, seeded by ``(seed, chain_index)``, so chains are independent
of each other and of how many chains are requested.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DivergenceError, EmptyDatasetError, ShapeError
from .mlp import forward, input_gradient

NOISE_KINDS = ("normal", "uniform")


@dataclass(frozen=True)
class InitDistribution:
    """Entrywise start distribution: ``uniform(a=lo, b=hi)`` or ``normal(a=mean, b=std)``."""

    kind: str = "uniform"
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise ConfigError(f"unknown init distribution {self.kind!r}")
        if self.kind == "uniform" and not self.a < self.b:
            raise ConfigError(f"uniform init needs lo < hi, got ({self.a}, {self.b})")
        if self.kind == "normal" and not self.b > 0:
            raise ConfigError(f"normal init needs std > 0, got {self.b}")

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0):
        return cls("uniform", lo, hi)

    @classmethod
    def normal(cls, mean=0.0, std=1.0):
        return cls("normal", mean, std)

    def sample(self, rng, size):
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size=size)
        return rng.normal(self.a, self.b, size=size)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class SamplerConfig:
    init: InitDistribution = InitDistribution.uniform(0.0, 1.0)
    iterations: int = 50
    noise_scale: float = 0.0
    noise_dist: str = "normal"
    burn_in_tol: float = 1e-3
    burn_in_patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not self.noise_scale >= 0:
            raise ConfigError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if self.noise_dist not in NOISE_KINDS:
            raise ConfigError(f"noise_dist must be one of {NOISE_KINDS}, got {self.noise_dist!r}")
        if not self.burn_in_tol > 0:
            raise ConfigError("burn_in_tol must be > 0")
        if self.burn_in_patience < 1:
            raise ConfigError("burn_in_patience must be >= 1")


@dataclass
class SampleTrajectory:
    """One recorded chain.

    Attributes:
        iterates: ``(K+1, D)`` array, ``x0 .. xK``.
        mapped: ``(K+1, D)`` array of noise-free images ``f(x_t)``; ``None``
            for trajectories that were not produced by iterating ``f``.
        self_loss: ``(K+1,)`` array of ``||x_t - f(x_t)||^2 / D``.
        burn_in: First iteration after which successive steps stay below the
            tolerance, or ``None``.
        nearest_index, nearest_distance: Closest training row per iterate,
            when a dataset was supplied.
        objective: Per-step objective for gradient-based trajectories.
    """

    iterates: np.ndarray
    mapped: np.ndarray = None
    self_loss: np.ndarray = None
    burn_in: int = None
    chain: int = 0
    noise_scale: float = 0.0
    nearest_index: np.ndarray = None
    nearest_distance: np.ndarray = None
    objective: np.ndarray = None
    extras: dict = field(default_factory=dict)

    @property
    def n_iterations(self):
        return self.iterates.shape[0] - 1

    @property
    def final(self):
        """Final reported state ``xK`` (after noise, if any)."""
        return self.iterates[-1]

    @property
    def final_pre_noise(self):
        """``f(x[K-1])``: the final state before noise was added."""
        if self.mapped is None:
            return self.iterates[-1]
        return self.mapped[-2]

    def step_sizes(self):
        """Distances ``||f(x_s) - x_s||`` for ``s = 0 .. K-1``.

        With zero noise ``f(x_s)`` is ``x[s+1]``, so this is the distance
        between successive iterates.
        """
        if self.mapped is None:
            nxt = self.iterates[1:]
        else:
            nxt = self.mapped[:-1]
        return np.sqrt(np.sum((nxt - self.iterates[:-1]) ** 2, axis=1))


def _apply(params, x):
    return forward(params, x[None, :])[0][0]


def compose_apply(params, x, b):
    """Apply the model ``b`` times to vector ``x`` without noise."""
    if b < 0:
        raise ValueError("b must be >= 0")
    x = np.array(x, dtype=np.float64).ravel()
    for _ in range(b):
        x = _apply(params, x)
    return x


def chain_rng(seed, chain):
    """Independent generator for one chain."""
    return np.random.default_rng([int(seed), int(chain)])


def burn_in_index(step_sizes, tol, patience):
    """First ``t`` with ``step_sizes[t : t + patience]`` all below ``tol``, else ``None``."""
    below = np.asarray(step_sizes) < tol
    run = 0
    for s, ok in enumerate(below):
        run = run + 1 if ok else 0
        if run >= patience:
            return s - patience + 1
    return None


def detect_burn_in(traj, tol, patience):
    """Burn-in index of a trajectory, judged on noise-free step sizes."""
    if traj.iterates.shape[0] < patience + 1:
        raise ValueError(
            f"trajectory of {traj.iterates.shape[0]} iterates is too short for patience {patience}"
        )
    return burn_in_index(traj.step_sizes(), tol, patience)


def nearest_training_point(x, data):
    """Index of and Euclidean distance to the closest row; ties go to the lowest index."""
    values = data.values if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, float))
    if values.shape[0] == 0:
        raise EmptyDatasetError("nearest_training_point needs a non-empty dataset")
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != values.shape[1]:
        raise ShapeError(f"point has D={x.shape[0]}, dataset has D={values.shape[1]}")
    d = np.sqrt(np.sum((values - x) ** 2, axis=1))
    i = int(np.argmin(d))
    return i, float(d[i])


def _nearest_all(points, values):
    idx = np.empty(points.shape[0], dtype=np.int64)
    dist = np.empty(points.shape[0])
    for t, p in enumerate(points):
        idx[t], dist[t] = nearest_training_point(p, values)
    return idx, dist


def run_chain(params, cfg, chain, data=None, x0=None):
    """Run a single chain; see :func:`kaleidoscopic_sample`."""
    d = params.input_dim
    rng = chain_rng(cfg.seed, chain)
    x = cfg.init.sample(rng, d) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    k = cfg.iterations
    iterates = np.empty((k + 1, d))
    mapped = np.empty((k + 1, d))
    iterates[0] = x
    for t in range(k + 1):
        fx = _apply(params, iterates[t])
        mapped[t] = fx
        if t == k:
            break
        if cfg.noise_scale > 0:
            if cfg.noise_dist == "normal":
                eta = rng.standard_normal(d)
            else:
                eta = rng.uniform(-1.0, 1.0, size=d)
            iterates[t + 1] = fx + cfg.noise_scale * eta
        else:
            iterates[t + 1] = fx
    r = iterates - mapped
    traj = SampleTrajectory(
        iterates=iterates,
        mapped=mapped,
        self_loss=np.sum(r * r, axis=1) / d,
        chain=chain,
        noise_scale=cfg.noise_scale,
    )
    if k + 1 >= cfg.burn_in_patience + 1:
        traj.burn_in = detect_burn_in(traj, cfg.burn_in_tol, cfg.burn_in_patience)
    if data is not None:
        traj.nearest_index, traj.nearest_distance = _nearest_all(
            iterates, data.values if isinstance(data, Dataset) else data
        )
    return traj


def kaleidoscopic_sample(params, cfg, n_chains, data=None):
    """Run ``n_chains`` independent sampling chains.

    Args:
        params: Frozen model parameters.
        cfg: Sampler settings.
        n_chains: Number of chains; chain ``c`` uses generator ``(cfg.seed, c)``.
        data: Optional training set; when given, every iterate is annotated
            with its nearest training row.

    Returns:
        List of :class:`SampleTrajectory`, one per chain, in chain order.
    """
    if n_chains < 1:
        raise ConfigError("n_chains must be >= 1")
    return [run_chain(params, cfg, c, data) for c in range(n_chains)]


def gradient_input_sampler(params, init, steps, lr, seed, data=None, chain=0, x0=None):
    """Gradient descent on the input of a frozen model.

    Minimises ``||x - f(x)||^2 / D`` over ``x`` with plain gradient steps
    ``x <- x - lr * grad``, the gradient being back-propagated exactly
    through the network.

    Returns:
        A :class:`SampleTrajectory` with ``steps + 1`` iterates whose
        ``objective`` (and ``self_loss``) holds the objective at each iterate.

    Raises:
        DivergenceError: the objective or iterate became non-finite.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    d = params.input_dim
    rng = chain_rng(seed, chain)
    x = init.sample(rng, d) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    iterates = np.empty((steps + 1, d))
    objective = np.empty(steps + 1)
    for t in range(steps + 1):
        obj, grad = input_gradient(params, x[None, :])
        if not (math.isfinite(obj[0]) and np.all(np.isfinite(x))):
            raise DivergenceError(f"input objective became non-finite at step {t}", last_good_epoch=t - 1)
        iterates[t] = x
        objective[t] = obj[0]
        if t < steps:
            x = x - lr * grad[0]
    traj = SampleTrajectory(iterates=iterates, self_loss=objective.copy(), objective=objective, chain=chain)
    if data is not None:
        traj.nearest_index, traj.nearest_distance = _nearest_all(
            iterates, data.values if isinstance(data, Dataset) else data
        )
    return traj


TRAJECTORY_COLUMNS = ("chain", "iteration", "self_loss", "nearest_index", "nearest_distance")


def trajectory_header(d, objective=False):
    cols = list(TRAJECTORY_COLUMNS)
    if objective:
        cols.append("objective")
    return cols + [f"x_{i}" for i in range(d)]


def write_trajectories_csv(trajectories, path, objective=False):
    """Write chains as long-format CSV, one row per (chain, iteration).

    Missing nearest-point annotations are written as empty cells.
    """
    if not trajectories:
        raise ValueError("no trajectories to write")
    d = trajectories[0].iterates.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(trajectory_header(d, objective)) + "\n")
        for traj in trajectories:
            for t, x in enumerate(traj.iterates):
                cells = [str(traj.chain), str(t), format(float(traj.self_loss[t]), ".17g")]
                if traj.nearest_index is not None:
                    cells += [str(int(traj.nearest_index[t])), format(float(traj.nearest_distance[t]), ".17g")]
                else:
                    cells += ["", ""]
                if objective:
                    cells.append(format(float(traj.objective[t]), ".17g"))
                cells += [format(float(v), ".17g") for v in x]
                fh.write(",".join(cells) + "\n")
