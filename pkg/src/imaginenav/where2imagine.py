"""Waypoint regression from single views, trained on oracle demonstrations.

Relative waypoints live in the body frame of the observing view: ``dy`` is
the displacement along the view heading, ``dx`` the displacement to its
right and ``dtheta`` the counter-clockwise heading change.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .control import plan_to_cell
from .percept import encode_view, feature_dim, mean_depth
from .world import HEADING_STEP, GridWorld, Pose, normalize_angle, raycast_view

log = logging.getLogger(__name__)

MAX_DTHETA = math.radians(30.0)
MIN_MEAN_DEPTH = 0.3
DEFAULT_HORIZON = 11
DEFAULT_MAX_STEP_RADIUS = 3.0
CHECKPOINT_VERSION = 1


class TrainingDivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class RelativeWaypoint:
    dx: float
    dy: float
    dtheta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"dx": self.dx, "dy": self.dy, "dtheta": self.dtheta}

    @classmethod
    def from_dict(cls, d: dict) -> "RelativeWaypoint":
        return cls(float(d["dx"]), float(d["dy"]), float(d["dtheta"]))


def body_to_world(pose: Pose, wp: RelativeWaypoint) -> Pose:
    """Compose ``wp`` onto ``pose`` without any collision handling."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    x = pose.x + wp.dy * c + wp.dx * s
    y = pose.y + wp.dy * s - wp.dx * c
    return Pose(x, y, normalize_angle(pose.theta + wp.dtheta))


def relative_waypoint(origin: Pose, target: Pose) -> RelativeWaypoint:
    """Inverse of :func:`body_to_world`."""
    c, s = math.cos(origin.theta), math.sin(origin.theta)
    ex, ey = target.x - origin.x, target.y - origin.y
    dth = math.fmod(target.theta - origin.theta + math.pi, 2 * math.pi)
    if dth < 0:
        dth += 2 * math.pi
    return RelativeWaypoint(ex * s - ey * c, ex * c + ey * s, dth - math.pi)


@dataclass(frozen=True)
class DemoSample:
    feature: np.ndarray = field(compare=False)
    label: RelativeWaypoint
    world_seed: int
    timestep: int
    source_mean_depth: float = field(default=math.inf, compare=False)

    def to_json(self) -> str:
        return json.dumps({
            "feature": [float(v) for v in self.feature],
            "label": self.label.to_dict(),
            "world_seed": self.world_seed,
            "timestep": self.timestep,
        })

    @classmethod
    def from_json(cls, line: str) -> "DemoSample":
        d = json.loads(line)
        return cls(np.asarray(d["feature"], dtype=np.float64), RelativeWaypoint.from_dict(d["label"]),
                   int(d["world_seed"]), int(d["timestep"]))


class DemoSet(list):
    """A list of :class:`DemoSample` that also carries collection metadata."""

    def __init__(self, samples=(), skipped_worlds: int = 0, dropped: dict | None = None):
        super().__init__(samples)
        self.skipped_worlds = skipped_worlds
        self.dropped = dropped or {"depth": 0, "angle": 0}


def save_demos(path, demos) -> None:
    with open(path, "w") as fh:
        for d in demos:
            fh.write(d.to_json() + "\n")


def load_demos(path) -> DemoSet:
    with open(path) as fh:
        return DemoSet(DemoSample.from_json(l) for l in fh if l.strip())


def keep_sample(view_mean_depth: float, label: RelativeWaypoint) -> bool:
    return view_mean_depth >= MIN_MEAN_DEPTH and abs(label.dtheta) <= MAX_DTHETA + 1e-12


def walk_samples(world: GridWorld, poses: list[Pose], horizon: int, world_seed: int,
                 dropped: dict | None = None):
    """Yield filtered (view feature at t, pose t+T in frame t) pairs along a walk."""
    for t in range(len(poses) - horizon):
        view = raycast_view(world, poses[t], 0.0, timestep=t)
        md = mean_depth(view)
        label = relative_waypoint(poses[t], poses[t + horizon])
        if md < MIN_MEAN_DEPTH:
            if dropped is not None:
                dropped["depth"] += 1
            continue
        if abs(label.dtheta) > MAX_DTHETA + 1e-12:
            if dropped is not None:
                dropped["angle"] += 1
            continue
        yield DemoSample(encode_view(view, world.n_classes), label, world_seed, t, md)


def collect_demos(worlds, horizon_T: int = DEFAULT_HORIZON, n_per_world: int = 100, seed: int = 0,
                  max_walks: int = 200, min_separation: float = 2.0) -> DemoSet:
    """Oracle shortest-path walks between random free cells, cut into pairs.

    Collection stops per world once ``n_per_world`` samples are kept.  Worlds
    without any reachable start/goal pair are skipped and counted.
    """
    if horizon_T < 1:
        raise ValueError("horizon_T must be >= 1")
    worlds = list(worlds)
    if not worlds:
        raise ValueError("need at least one world")
    rng = np.random.default_rng(seed)
    out = DemoSet()
    for world in worlds:
        free = world.free_cells()
        got: list[DemoSample] = []
        for _ in range(max_walks):
            if len(got) >= n_per_world or len(free) < 2:
                break
            a, b = rng.choice(len(free), size=2, replace=False)
            start, goal = free[int(a)], free[int(b)]
            d = world.distance_field([goal])[start[1], start[0]]
            if d < 0 or d * world.resolution < min_separation:
                continue
            x, y = world.cell_center(start)
            pose = Pose(x, y, int(rng.integers(12)) * HEADING_STEP)
            budget = 4 * int(d) + 24
            _, poses, _ = plan_to_cell(world, pose, goal, budget, prefer_doors=True)
            got.extend(walk_samples(world, [pose] + poses, horizon_T, world.rng_seed, out.dropped))
        if not got:
            out.skipped_worlds += 1
            log.warning("world %d yielded no demonstrations", world.rng_seed)
        out.extend(got[:n_per_world])
    return out


# ---------------------------------------------------------------------------
# regressor


OUTPUT_INIT_SCALE = 0.1


@dataclass(frozen=True)
class TrainHyper:
    hidden: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 60
    max_step_radius: float = DEFAULT_MAX_STEP_RADIUS


class Regressor:
    """``D -> H (tanh) -> 3`` perceptron with hand-written backprop."""

    def __init__(self, W1, b1, W2, b2, max_step_radius: float = DEFAULT_MAX_STEP_RADIUS):
        self.W1 = np.asarray(W1)
        self.b1 = np.asarray(b1)
        self.W2 = np.asarray(W2)
        self.b2 = np.asarray(b2)
        if self.W2.shape[0] != 3:
            raise ValueError("regressor output dimension must be 3")
        self.max_step_radius = max_step_radius

    @classmethod
    def init(cls, in_dim: int, hidden: int = 32, seed: int = 0,
             max_step_radius: float = DEFAULT_MAX_STEP_RADIUS) -> "Regressor":
        rng = np.random.default_rng(seed)
        W1 = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(hidden, in_dim))
        # small output layer: the untrained prediction starts near zero
        W2 = rng.normal(0.0, OUTPUT_INIT_SCALE / math.sqrt(hidden), size=(3, hidden))
        return cls(W1, np.zeros(hidden), W2, np.zeros(3), max_step_radius)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.W1.shape[1], self.W1.shape[0], 3)

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self, dtype=None) -> "Regressor":
        conv = (lambda a: a.astype(dtype)) if dtype is not None else (lambda a: a.copy())
        return Regressor(*(conv(p) for p in self.params()), max_step_radius=self.max_step_radius)

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        A = np.tanh(X @ self.W1.T + self.b1)
        return A @ self.W2.T + self.b2, A

    def loss_and_grads(self, X: np.ndarray, P: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Batch-mean squared L2 error and its parameter gradients."""
        B = X.shape[0]
        Y, A = self.forward(X)
        R = Y - P
        loss = float(np.sum(R * R) / B)
        dY = 2.0 * R / B
        dW2 = dY.T @ A
        db2 = dY.sum(axis=0)
        dZ = (dY @ self.W2) * (1.0 - A * A)
        dW1 = dZ.T @ X
        db1 = dZ.sum(axis=0)
        return loss, [dW1, db1, dW2, db2]

    def loss(self, X, P) -> float:
        Y, _ = self.forward(X)
        R = Y - P
        return float(np.sum(R * R) / X.shape[0])

    # -- checkpoints ------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({
            "version": CHECKPOINT_VERSION,
            "dims": list(self.dims),
            "max_step_radius": self.max_step_radius,
            "W1": self.W1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.ravel().tolist(),
            "b2": self.b2.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Regressor":
        d = json.loads(text)
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        D, H, _ = d["dims"]
        return cls(np.asarray(d["W1"]).reshape(H, D), np.asarray(d["b1"]),
                   np.asarray(d["W2"]).reshape(3, H), np.asarray(d["b2"]),
                   float(d["max_step_radius"]))


def demo_arrays(demos) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray([d.feature for d in demos], dtype=np.float64)
    P = np.asarray([d.label.as_array() for d in demos], dtype=np.float64)
    return X, P


def train_regressor(demos, hyper: TrainHyper | None = None, seed: int = 0) -> tuple[Regressor, list[float]]:
    """Momentum minibatch gradient descent on the waypoint MSE.

    ``loss_curve[0]`` is the loss of the freshly initialised model on the
    whole set; entry ``e`` is the mean minibatch loss of epoch ``e``.
    """
    hyper = hyper or TrainHyper()
    if len(demos) < 10 * hyper.batch_size:
        raise ValueError(f"need at least {10 * hyper.batch_size} demos, got {len(demos)}")
    X, P = demo_arrays(demos)
    init_seed, shuffle_seed = np.random.SeedSequence(seed).spawn(2)
    model = Regressor.init(X.shape[1], hyper.hidden, int(init_seed.generate_state(1)[0]),
                           hyper.max_step_radius)
    rng = np.random.default_rng(shuffle_seed)
    velocity = [np.zeros_like(p) for p in model.params()]
    curve = [model.loss(X, P)]
    n = X.shape[0]
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for s in range(0, n - hyper.batch_size + 1, hyper.batch_size):
            idx = order[s : s + hyper.batch_size]
            loss, grads = model.loss_and_grads(X[idx], P[idx])
            if not math.isfinite(loss):
                raise TrainingDivergenceError(epoch)
            for p, v, g in zip(model.params(), velocity, grads):
                v *= hyper.momentum
                v -= hyper.lr * g
                p += v
            total += loss
            batches += 1
        mean = total / batches
        if not math.isfinite(mean) or not all(np.all(np.isfinite(p)) for p in model.params()):
            raise TrainingDivergenceError(epoch)
        curve.append(mean)
    return model, curve


def clamp_waypoint(raw, max_step_radius: float = DEFAULT_MAX_STEP_RADIUS) -> RelativeWaypoint:
    dx, dy, dth = (float(v) for v in raw)
    dth = min(MAX_DTHETA, max(-MAX_DTHETA, dth))
    r = math.hypot(dx, dy)
    if r > max_step_radius:
        dx, dy = dx * max_step_radius / r, dy * max_step_radius / r
    return RelativeWaypoint(dx, dy, dth)


def predict_waypoint(model: Regressor, feature) -> RelativeWaypoint:
    x = np.asarray(feature, dtype=np.float64)
    if x.shape != (model.dims[0],):
        raise ValueError(f"feature dimension {x.shape} does not match model input {model.dims[0]}")
    y, _ = model.forward(x[None, :])
    return clamp_waypoint(y[0], model.max_step_radius)


def gradient_check(model: Regressor, sample: DemoSample, step: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    Differences are taken on an extended-precision copy so that round-off
    stays far below the truncation error.
    """
    X = np.asarray(sample.feature, dtype=np.float64)[None, :]
    P = sample.label.as_array()[None, :]
    _, analytic = model.loss_and_grads(X, P)
    ref = model.copy(np.longdouble)
    Xr, Pr = X.astype(np.longdouble), P.astype(np.longdouble)
    h = np.longdouble(step)

    def ref_loss() -> np.longdouble:
        Y = np.tanh(Xr @ ref.W1.T + ref.b1) @ ref.W2.T + ref.b2
        R = Y - Pr
        return np.sum(R * R)

    worst = 0.0
    for p, g in zip(ref.params(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = ref_loss()
            flat[i] = orig - h
            down = ref_loss()
            flat[i] = orig
            num = float((up - down) / (2 * h))
            a = float(gflat[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def feature_size_for(world: GridWorld) -> int:
    return feature_dim(world.n_classes)
