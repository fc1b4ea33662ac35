"""Hyper-parameter search: random baseline and a tree-structured Parzen
estimator over independent per-dimension densities.

TPE splits completed trials at the gamma-quantile of the objective
(maximization: the top fraction is "good"), fits kernel densities l(x) to the
good and g(x) to the bad assignments per dimension, draws candidates from l,
and proposes the candidate maximizing sum(log l - log g). Trials are persisted
one JSON record per line so searches are crash-resumable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .rng import Rng


class SearchSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float


@dataclass(frozen=True)
class LogUniform:
    low: float
    high: float


@dataclass(frozen=True)
class Integer:
    low: int
    high: int  # inclusive


@dataclass(frozen=True)
class Categorical:
    options: tuple


Dimension = Uniform | LogUniform | Integer | Categorical


class SearchSpace:
    def __init__(self, dims: dict[str, Dimension]):
        for name, dim in dims.items():
            if isinstance(dim, (Uniform, LogUniform, Integer)):
                if not dim.low < dim.high:
                    raise SearchSpaceError(f"dimension {name!r}: min must be < max")
                if isinstance(dim, LogUniform) and dim.low <= 0:
                    raise SearchSpaceError(f"dimension {name!r}: log-uniform needs min > 0")
            elif isinstance(dim, Categorical):
                if not dim.options:
                    raise SearchSpaceError(f"dimension {name!r}: no categorical options")
            else:
                raise SearchSpaceError(f"dimension {name!r}: unknown kind {type(dim).__name__}")
        self.dims = dict(dims)

    def contains(self, assignment: dict) -> bool:
        for name, dim in self.dims.items():
            v = assignment.get(name)
            if isinstance(dim, Categorical):
                if v not in dim.options:
                    return False
            elif v is None or not dim.low <= v <= dim.high:
                return False
        return True


@dataclass
class Trial:
    id: int
    assignment: dict
    objective: float | None
    status: str  # pending | complete | failed


# -- sampling -------------------------------------------------------------------


def _draw(dim: Dimension, rng: Rng):
    if isinstance(dim, Uniform):
        return float(rng.uniform(dim.low, dim.high))
    if isinstance(dim, LogUniform):
        return float(math.exp(rng.uniform(math.log(dim.low), math.log(dim.high))))
    if isinstance(dim, Integer):
        return int(rng.integers(dim.low, dim.high + 1))
    return dim.options[int(rng.integers(0, len(dim.options)))]


def suggest_random(space: SearchSpace, rng: Rng) -> dict:
    """Independent draw from each dimension's prior."""
    return {name: _draw(dim, rng) for name, dim in space.dims.items()}


class _Parzen:
    """Adaptive-bandwidth Gaussian mixture over [low, high].

    One kernel per observation with a bandwidth set by the distance to its
    neighbors (clipped to [width/min(100, n+1), width]), plus the uniform
    prior as an extra full-width component. The per-point bandwidths matter:
    repeated near-identical observations sharpen the density there, which is
    what steers proposals away from over-exploited points.
    """

    def __init__(self, xs, low: float, high: float):
        self.low = low
        self.high = high
        width = high - low
        prior_mu = 0.5 * (low + high)
        mus = np.sort(np.append(np.asarray(xs, dtype=np.float64), prior_mu))
        n = len(mus)
        if n == 1:
            sigmas = np.array([width])
        else:
            gaps = np.diff(mus)
            left = np.concatenate([[gaps[0]], gaps])
            right = np.concatenate([gaps, [gaps[-1]]])
            sigmas = np.clip(np.maximum(left, right), width / min(100.0, 1.0 + n), width)
        sigmas[np.searchsorted(mus, prior_mu)] = width  # prior keeps full width
        self.mus = mus
        self.sigmas = sigmas

    def sample(self, rng: Rng, count: int) -> np.ndarray:
        idx = rng.integers(0, len(self.mus), size=count)
        draws = self.mus[idx] + rng.normal(0.0, 1.0, size=count) * self.sigmas[idx]
        return np.clip(draws, self.low, self.high)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        z = -0.5 * ((x[:, None] - self.mus[None, :]) / self.sigmas[None, :]) ** 2
        z -= np.log(self.sigmas[None, :] * math.sqrt(2.0 * math.pi))
        return logsumexp(z, axis=1) - math.log(len(self.mus))


def _to_line(dim: Dimension, values):
    """Map assignment values onto the modeling line (log space for log-uniform)."""
    arr = np.asarray(values, dtype=np.float64)
    if isinstance(dim, LogUniform):
        return np.log(arr)
    return arr


def _line_bounds(dim: Dimension) -> tuple[float, float]:
    if isinstance(dim, LogUniform):
        return math.log(dim.low), math.log(dim.high)
    return float(dim.low), float(dim.high)


def suggest_tpe(space: SearchSpace, history: list[Trial], rng: Rng, gamma: float = 0.25,
                n_candidates: int = 24, n_startup: int = 20) -> dict:
    """Propose an assignment; falls back to the prior until ``n_startup``
    trials have completed."""
    complete = [t for t in history if t.status == "complete"]
    if len(complete) < n_startup:
        return suggest_random(space, rng)
    ranked = sorted(complete, key=lambda t: -t.objective)
    n_good = max(1, math.ceil(gamma * len(ranked)))
    good, bad = ranked[:n_good], ranked[n_good:]

    candidate_values: dict[str, list] = {}
    scores = np.zeros(n_candidates)
    for name, dim in space.dims.items():
        if isinstance(dim, Categorical):
            k = len(dim.options)
            index = {opt: i for i, opt in enumerate(dim.options)}

            def counts(trials):
                c = np.ones(k)  # add-one smoothing
                for t in trials:
                    c[index[t.assignment[name]]] += 1
                return c / c.sum()

            pl = counts(good)
            pg = counts(bad) if bad else np.full(k, 1.0 / k)
            drawn = [
                int(np.searchsorted(np.cumsum(pl), rng.uniform()))
                for _ in range(n_candidates)
            ]
            drawn = [min(d, k - 1) for d in drawn]
            candidate_values[name] = [dim.options[d] for d in drawn]
            scores += np.log(pl[drawn]) - np.log(pg[drawn])
        else:
            low, high = _line_bounds(dim)
            l_kde = _Parzen(_to_line(dim, [t.assignment[name] for t in good]), low, high)
            g_kde = _Parzen(_to_line(dim, [t.assignment[name] for t in bad]), low, high)
            g_logpdf = g_kde.logpdf
            line = l_kde.sample(rng, n_candidates)
            if isinstance(dim, Integer):
                vals = np.clip(np.round(line), dim.low, dim.high).astype(int)
                line = vals.astype(np.float64)
                candidate_values[name] = [int(v) for v in vals]
            elif isinstance(dim, LogUniform):
                candidate_values[name] = [float(v) for v in np.exp(line)]
            else:
                candidate_values[name] = [float(v) for v in line]
            scores += l_kde.logpdf(line) - g_logpdf(line)
    best = int(np.argmax(scores))
    return {name: vals[best] for name, vals in candidate_values.items()}


# -- search loop ---------------------------------------------------------------------


def trial_to_json(t: Trial) -> str:
    return json.dumps(
        {"id": t.id, "assignment": t.assignment, "objective": t.objective, "status": t.status}
    )


def trial_from_json(line: str) -> Trial:
    d = json.loads(line)
    return Trial(
        id=int(d["id"]),
        assignment=d["assignment"],
        objective=d["objective"],
        status=d["status"],
    )


def load_history(path) -> list[Trial]:
    path = Path(path)
    if not path.exists():
        return []
    return [trial_from_json(line) for line in path.read_text().splitlines() if line.strip()]


def ranked_trials(trials: list[Trial]) -> list[Trial]:
    """Complete trials best-first, then failed ones."""
    complete = sorted(
        (t for t in trials if t.status == "complete"), key=lambda t: (-t.objective, t.id)
    )
    failed = [t for t in trials if t.status != "complete"]
    return complete + failed


def run_search(space: SearchSpace, objective_runner, budget: int = 400,
               rng: Rng | None = None, history_path=None, gamma: float = 0.25,
               n_candidates: int = 24, n_startup: int = 20,
               on_trial=None) -> list[Trial]:
    """Sequential suggest -> evaluate -> record loop, resumable from a
    persisted history. Runner failures mark the trial failed and the search
    continues. Returns all trials, best-first."""
    rng = rng if rng is not None else Rng(0)
    trials = load_history(history_path) if history_path else []
    while len(trials) < budget:
        tid = len(trials)
        assignment = suggest_tpe(
            space, trials, rng.derive("trial", tid),
            gamma=gamma, n_candidates=n_candidates, n_startup=n_startup,
        )
        try:
            value = float(objective_runner(assignment))
            if math.isfinite(value):
                trial = Trial(tid, assignment, value, "complete")
            else:
                trial = Trial(tid, assignment, None, "failed")
        except Exception:
            trial = Trial(tid, assignment, None, "failed")
        trials.append(trial)
        if history_path:
            with open(history_path, "a") as f:
                f.write(trial_to_json(trial) + "\n")
        if on_trial is not None:
            on_trial(trial)
    return ranked_trials(trials)
