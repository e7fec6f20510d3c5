"""Best-view selection over six imagined views.

Three decision makers share one output type: the built-in heuristic
scorer, a remote chat-completion model speaking the ``{"Reason", "Choice"}``
JSON protocol, and a uniform random baseline.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import httpx
import numpy as np

from .memory import Keyframe
from .percept import N_VIEWS, encode_view
from .world import GoalSpec, ViewObservation

log = logging.getLogger(__name__)

LETTERS = "ABCDEF"
DEFAULT_LAMBDA = 0.3
# scores this close to the best count as tied; ties go to the lowest option
DEFAULT_TIE_TOL = 0.03
DEFAULT_API_KEY_ENV = "IMAGINENAV_API_KEY"

CLASS_NAMES = ["wall", "floor", "sofa", "chair", "bed", "table", "plant", "tv", "toilet", "sink"]


def class_name(k: int) -> str:
    return CLASS_NAMES[k] if k < len(CLASS_NAMES) else f"object{k}"


class PlannerParseError(ValueError):
    pass


class PlannerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GoalDescriptor:
    kind: str
    vector: np.ndarray = field(compare=False)
    category_id: int = -1


@dataclass(frozen=True)
class PlannerDecision:
    choice: int  # 1..6
    reason: str
    source: str  # heuristic | remote | random | fallback | oracle

    def __post_init__(self):
        if not 1 <= self.choice <= N_VIEWS:
            raise ValueError(f"choice {self.choice} outside 1..{N_VIEWS}")

    @property
    def letter(self) -> str:
        return LETTERS[self.choice - 1]


def goal_descriptor(goal: GoalSpec, n_classes: int) -> GoalDescriptor:
    if goal.kind == "category":
        v = np.zeros(n_classes + 4)
        v[goal.category_id] = 1.0
        return GoalDescriptor("category", v, goal.category_id)
    return GoalDescriptor("instance", encode_view(goal.instance_view, n_classes), goal.category_id)


def _unit_rows(M: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(M, axis=-1, keepdims=True)
    return np.where(n > 0, M / np.where(n > 0, n, 1.0), 0.0)


def argmax_first(scores: Sequence[float], tol: float = 0.0) -> int:
    """Lowest index whose score is within ``tol`` of the maximum."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    top = max(scores)
    return next(i for i, s in enumerate(scores) if s >= top - tol)


def _as_view(v) -> ViewObservation:
    return v.view if hasattr(v, "view") else v


def score_views(features: np.ndarray, goal: GoalDescriptor, memory_features: np.ndarray | None,
                lam: float = DEFAULT_LAMBDA) -> tuple[np.ndarray, np.ndarray]:
    """(goal term, revisit term) per candidate view."""
    F = _unit_rows(np.asarray(features, dtype=np.float64))
    gvec = goal.vector / (np.linalg.norm(goal.vector) or 1.0)
    goal_term = F @ gvec
    if memory_features is None or len(memory_features) == 0:
        rev = np.zeros(len(F))
    else:
        rev = (F @ _unit_rows(np.asarray(memory_features, dtype=np.float64)).T).max(axis=1)
    return goal_term, rev


def choose_heuristic(imagined: Sequence, goal: GoalDescriptor, memory_snapshot: Sequence = (),
                     lam: float = DEFAULT_LAMBDA, n_classes: int | None = None,
                     tie_tol: float = DEFAULT_TIE_TOL) -> PlannerDecision:
    """Pick the view most similar to the goal and least similar to memory.

    Scores within ``tie_tol`` of the best are ties and resolve to the lowest
    option, so the forward view wins when nothing separates the candidates.
    """
    if len(imagined) != N_VIEWS:
        raise ValueError(f"expected {N_VIEWS} views, got {len(imagined)}")
    nc = n_classes if n_classes is not None else len(goal.vector) - 4
    feats = np.array([encode_view(_as_view(v), nc) for v in imagined])
    mem = [kf.feature if isinstance(kf, Keyframe) else kf[1].feature for kf in memory_snapshot]
    goal_term, rev = score_views(feats, goal, np.array(mem) if mem else None, lam)
    scores = goal_term - lam * rev
    best = argmax_first(list(scores), tie_tol)
    terms = "; ".join(f"{LETTERS[i]}: goal={goal_term[i]:.4f} revisit={rev[i]:.4f}" for i in range(N_VIEWS))
    return PlannerDecision(best + 1, f"max score {scores[best]:.4f} ({terms})", "heuristic")


def choose_random(rng: np.random.Generator) -> PlannerDecision:
    k = int(rng.integers(N_VIEWS)) + 1
    return PlannerDecision(k, "uniform random choice", "random")


# ---------------------------------------------------------------------------
# prompt protocol

SYSTEM_PROMPT = (
    "You are a navigation planner for a mobile robot searching an indoor scene. "
    "You are given the navigation goal, a tiered memory of past keyframes and six "
    "imagined future views labelled A-F. Pick the view most likely to lead to the goal "
    "while avoiding areas already explored. Answer with a single JSON object with exactly "
    'the keys "Reason" (a short string) and "Choice" (one letter from A to F).'
)


def dominant_classes(feature: np.ndarray, n_classes: int, k: int = 3) -> list[str]:
    hist = np.asarray(feature[:n_classes])
    order = sorted((i for i in range(n_classes) if hist[i] > 0), key=lambda i: (-hist[i], i))
    return [class_name(i) for i in order[:k]]


@dataclass(frozen=True)
class PromptPayload:
    goal: str
    memory: tuple[str, ...]
    options: tuple[str, ...]

    def __post_init__(self):
        if len(self.options) != N_VIEWS:
            raise ValueError("prompt needs exactly six options")

    @property
    def text(self) -> str:
        lines = ["# Goal", self.goal, "", "# Memory (oldest first)"]
        lines += list(self.memory) if self.memory else ["no prior observations"]
        lines += ["", "# Imagined views"]
        lines += list(self.options)
        lines += ["", 'Respond with JSON: {"Reason": "...", "Choice": "A".."F"}']
        return "\n".join(lines)

    def messages(self) -> list[dict]:
        return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": self.text}]


def _goal_text(goal: GoalSpec | GoalDescriptor) -> str:
    if goal.kind == "category":
        return f"Find a {class_name(goal.category_id)}."
    return f"Find the specific {class_name(goal.category_id)} shown in the reference observation."


def build_prompt(goal, memory_snapshot: Sequence, imagined: Sequence, n_classes: int) -> PromptPayload:
    if len(imagined) != N_VIEWS:
        raise ValueError(f"expected {N_VIEWS} views, got {len(imagined)}")
    mem_lines = []
    for tier, kf in memory_snapshot:
        dom = ", ".join(dominant_classes(kf.feature, n_classes)) or "nothing"
        mem_lines.append(f"[{tier}] t={kf.timestep}: {dom}")
    opts = []
    for letter, v in zip(LETTERS, imagined):
        view = _as_view(v)
        feat = encode_view(view, n_classes)
        dom = ", ".join(dominant_classes(feat, n_classes)) or "nothing"
        d = np.asarray(view.depths)
        opts.append(f"{letter}: sees {dom}; depth mean {d.mean():.2f} m, min {d.min():.2f} m, max {d.max():.2f} m")
    return PromptPayload(_goal_text(goal), tuple(mem_lines), tuple(opts))


def render_decision(decision: PlannerDecision) -> str:
    return json.dumps({"Reason": decision.reason, "Choice": decision.letter})


def parse_decision(text: str, source: str = "remote") -> PlannerDecision:
    """Extract the first JSON object in ``text`` and map its Choice letter to 1..6."""
    dec = json.JSONDecoder()
    obj = None
    i = text.find("{")
    while i != -1:
        try:
            cand, _ = dec.raw_decode(text, i)
        except json.JSONDecodeError:
            cand = None
        if isinstance(cand, dict):
            obj = cand
            break
        i = text.find("{", i + 1)
    if obj is None:
        raise PlannerParseError("no JSON object in reply")
    if "Reason" not in obj or "Choice" not in obj:
        raise PlannerParseError("reply must contain Reason and Choice")
    choice = obj["Choice"]
    if not isinstance(choice, str) or choice.strip().upper() not in LETTERS or len(choice.strip()) != 1:
        raise PlannerParseError(f"Choice {choice!r} is not a letter A-F")
    reason = obj["Reason"] if isinstance(obj["Reason"], str) else json.dumps(obj["Reason"])
    return PlannerDecision(LETTERS.index(choice.strip().upper()) + 1, reason, source)


# ---------------------------------------------------------------------------
# remote transport


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = ""
    model: str = "gpt-4o-mini"
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    max_inflight: int = 4


@dataclass
class Telemetry:
    requests: int = 0
    successes: int = 0
    fallbacks: int = 0
    retries: int = 0
    errors: list = field(default_factory=list)

    @property
    def fallback_rate(self) -> float:
        cycles = self.successes + self.fallbacks
        return self.fallbacks / cycles if cycles else 0.0

    def merge(self, other: "Telemetry") -> None:
        self.requests += other.requests
        self.successes += other.successes
        self.fallbacks += other.fallbacks
        self.retries += other.retries
        self.errors.extend(other.errors)

    def to_dict(self) -> dict:
        return {"requests": self.requests, "successes": self.successes, "fallbacks": self.fallbacks,
                "retries": self.retries, "fallback_rate": self.fallback_rate}


_global_caps: dict[int, threading.BoundedSemaphore] = {}
_caps_lock = threading.Lock()


def _global_cap(n: int) -> threading.BoundedSemaphore:
    with _caps_lock:
        if n not in _global_caps:
            _global_caps[n] = threading.BoundedSemaphore(n)
        return _global_caps[n]


class RemotePlanner:
    """Chat-completion client with bounded retries and a heuristic fallback.

    Construct one per episode: it serialises that episode's requests, while
    the process-wide semaphore caps concurrent requests across episodes.
    """

    def __init__(self, config: EndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if not config.base_url:
            raise PlannerConfigError("remote planner needs an endpoint base_url")
        key = os.environ.get(config.api_key_env)
        if key is None:
            raise PlannerConfigError(f"credential environment variable {config.api_key_env} is not set")
        if config.retries < 0 or config.timeout <= 0:
            raise PlannerConfigError("retries must be >= 0 and timeout positive")
        self.config = config
        self.telemetry = Telemetry()
        self._sleep = sleep
        self._lock = threading.Lock()
        self._cap = _global_cap(max(1, config.max_inflight))
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.timeout,
            headers={"Authorization": f"Bearer {key}"} if key else {},
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, payload: PromptPayload) -> str:
        body = {
            "model": self.config.model,
            "messages": payload.messages(),
            "response_format": {"type": "json_object"},
            "temperature": 0,
        }
        with self._cap:
            resp = self._client.post("/chat/completions", json=body)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]

    def decide(self, payload: PromptPayload, fallback: Callable[[], PlannerDecision]) -> PlannerDecision:
        attempts = 1 + self.config.retries
        with self._lock:
            for attempt in range(attempts):
                if attempt:
                    self.telemetry.retries += 1
                    self._sleep(self.config.backoff * 2 ** (attempt - 1))
                self.telemetry.requests += 1
                try:
                    return self._succeed(parse_decision(self._request(payload), "remote"))
                except (httpx.HTTPError, PlannerParseError, KeyError, IndexError, TypeError, ValueError) as exc:
                    log.info("remote planner attempt %d failed: %s", attempt + 1, exc)
                    self.telemetry.errors.append(type(exc).__name__)
            self.telemetry.fallbacks += 1
            base = fallback()
            return PlannerDecision(base.choice, base.reason, "fallback")

    def _succeed(self, decision: PlannerDecision) -> PlannerDecision:
        self.telemetry.successes += 1
        return decision


def query_remote(config: EndpointConfig, payload: PromptPayload, fallback: Callable[[], PlannerDecision],
                 transport: httpx.BaseTransport | None = None) -> PlannerDecision:
    """One-shot convenience wrapper around :class:`RemotePlanner`."""
    with RemotePlanner(config, transport) as rp:
        return rp.decide(payload, fallback)
