"""Exact Bayesian semantics of (epsilon, delta)-differential privacy on finite domains.

Databases are vectors in ``domain ** n``, enumerated in lexicographic order
(the order of :func:`itertools.product`). A mechanism is an explicit table
``prob[D, t] = Pr[A(D) = t]``. Everything below is computed exactly by
enumeration, in float64, with a 1e-12 slack on inequality checks.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from compattack.errors import BudgetError, ConditioningError, DomainError

MAX_DATABASES = 10**6
NORM_TOL = 1e-9
SLACK = 1e-12


@dataclass(frozen=True)
class DatabaseSpace:
    domain: tuple
    n: int
    default_row: object = None

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(self.domain))
        if not self.domain:
            raise DomainError("domain", None, "row domain must be non-empty")
        if len(set(self.domain)) != len(self.domain):
            raise DomainError("domain", None, "row domain has duplicates")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.default_row is None:
            object.__setattr__(self, "default_row", self.domain[0])
        elif self.default_row not in self.domain:
            raise DomainError("default_row", self.default_row)
        if len(self.domain) ** self.n > MAX_DATABASES:
            raise BudgetError(f"|D|^n = {len(self.domain)}^{self.n} exceeds the enumeration cap {MAX_DATABASES}")

    @property
    def size(self) -> int:
        return len(self.domain) ** self.n

    @cached_property
    def positions(self) -> np.ndarray:
        """(size, n) matrix of domain positions for every database."""
        m = len(self.domain)
        idx = np.arange(self.size)
        weights = m ** np.arange(self.n - 1, -1, -1)
        return (idx[:, None] // weights[None, :]) % m

    @cached_property
    def databases(self) -> list[tuple]:
        return list(itertools.product(self.domain, repeat=self.n))

    def index_of(self, database: Sequence) -> int:
        m = len(self.domain)
        idx = 0
        for v in database:
            idx = idx * m + self.domain.index(v)
        return idx

    def with_default(self, default_row) -> "DatabaseSpace":
        return DatabaseSpace(self.domain, self.n, default_row)

    def replaced_index(self, i: int) -> np.ndarray:
        """Index of D_{-i} (coordinate i, 1-based, set to the default row) for every D."""
        if not 1 <= i <= self.n:
            raise ValueError(f"individual index {i} outside 1..{self.n}")
        m = len(self.domain)
        weight = m ** (self.n - i)
        pos = self.positions[:, i - 1]
        default = self.domain.index(self.default_row)
        return np.arange(self.size) + (default - pos) * weight

    @cached_property
    def neighbor_pairs(self) -> np.ndarray:
        """All unordered pairs (a, b), a < b, of databases differing in exactly one row."""
        m = len(self.domain)
        chunks = []
        for j in range(self.n):
            weight = m ** (self.n - 1 - j)
            pos = self.positions[:, j]
            for u in range(m):
                a = np.flatnonzero(pos == u)
                for v in range(u + 1, m):
                    chunks.append(np.stack([a, a + (v - u) * weight], axis=1))
        if not chunks:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate(chunks)


@dataclass(frozen=True, eq=False)
class Mechanism:
    space: DatabaseSpace
    transcripts: tuple
    prob: np.ndarray
    name: str = "mechanism"

    def __post_init__(self):
        prob = np.array(self.prob, dtype=float)
        object.__setattr__(self, "transcripts", tuple(self.transcripts))
        if prob.shape != (self.space.size, len(self.transcripts)):
            raise ValueError(f"probability table has shape {prob.shape}, expected {(self.space.size, len(self.transcripts))}")
        if (prob < 0).any():
            raise ValueError("negative probability in mechanism table")
        if not np.allclose(prob.sum(axis=1), 1.0, rtol=0, atol=NORM_TOL):
            raise ValueError("mechanism rows must sum to 1")
        prob.flags.writeable = False
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "_tindex", {t: j for j, t in enumerate(self.transcripts)})

    @classmethod
    def from_function(cls, space: DatabaseSpace, transcripts: Sequence, fn: Callable, name: str = "mechanism") -> "Mechanism":
        """Build the table from ``fn(database) -> {transcript: probability}``."""
        transcripts = tuple(transcripts)
        tindex = {t: j for j, t in enumerate(transcripts)}
        prob = np.zeros((space.size, len(transcripts)))
        for d, database in enumerate(space.databases):
            for t, p in fn(database).items():
                prob[d, tindex[t]] += p
        return cls(space, transcripts, prob, name)

    def transcript_index(self, t) -> int:
        if isinstance(t, list):
            t = tuple(t)
        try:
            return self._tindex[t]  # type: ignore[attr-defined]
        except KeyError:
            raise ValueError(f"unknown transcript {t!r}") from None

    def distribution(self, database: Sequence) -> np.ndarray:
        return self.prob[self.space.index_of(database)]

    def with_space(self, space: DatabaseSpace) -> "Mechanism":
        """Same table over a space that differs only in its default row."""
        if space.domain != self.space.domain or space.n != self.space.n:
            raise ValueError("spaces differ in domain or n")
        return Mechanism(space, self.transcripts, self.prob, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": list(self.space.domain),
            "n": self.space.n,
            "default_row": self.space.default_row,
            "database_order": "lexicographic",
            "transcripts": [_jsonable(t) for t in self.transcripts],
            "prob": self.prob.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mechanism":
        space = DatabaseSpace(tuple(_hashable(v) for v in doc["domain"]), int(doc["n"]), _hashable(doc.get("default_row")))
        return cls(space, tuple(_hashable(t) for t in doc["transcripts"]), np.array(doc["prob"], dtype=float), doc.get("name", "mechanism"))


@dataclass(frozen=True, eq=False)
class Belief:
    space: DatabaseSpace
    prior: np.ndarray
    name: str = "belief"

    def __post_init__(self):
        prior = np.array(self.prior, dtype=float).reshape(-1)
        if prior.shape != (self.space.size,):
            raise ValueError(f"belief has {prior.size} entries, space has {self.space.size}")
        if (prior < 0).any():
            raise ValueError("negative probability in belief")
        if abs(prior.sum() - 1.0) > NORM_TOL:
            raise ValueError("belief must sum to 1")
        prior.flags.writeable = False
        object.__setattr__(self, "prior", prior)

    @classmethod
    def uniform(cls, space: DatabaseSpace) -> "Belief":
        return cls(space, np.full(space.size, 1.0 / space.size), "uniform")

    @classmethod
    def dirichlet(cls, space: DatabaseSpace, seed: int) -> "Belief":
        rng = np.random.default_rng(seed)
        return cls(space, rng.dirichlet(np.ones(space.size)), f"dirichlet(seed={seed})")

    @classmethod
    def point_mixture(cls, space: DatabaseSpace) -> "Belief":
        """Half the mass on the all-first-value database, half on its neighbour differing in the last row.

        The adversary is certain about everyone except one individual.
        """
        prior = np.zeros(space.size)
        first = (space.domain[0],) * space.n
        other = first[:-1] + (space.domain[-1],)
        prior[space.index_of(first)] += 0.5
        prior[space.index_of(other)] += 0.5
        return cls(space, prior, "point-mixture")

    @classmethod
    def point_mass(cls, space: DatabaseSpace, database: Sequence) -> "Belief":
        prior = np.zeros(space.size)
        prior[space.index_of(database)] = 1.0
        return cls(space, prior, f"point{tuple(database)}")

    def mass(self, database: Sequence) -> float:
        return float(self.prior[self.space.index_of(database)])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": list(self.space.domain),
            "n": self.space.n,
            "default_row": self.space.default_row,
            "database_order": "lexicographic",
            "prior": self.prior.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Belief":
        space = DatabaseSpace(tuple(_hashable(v) for v in doc["domain"]), int(doc["n"]), _hashable(doc.get("default_row")))
        return cls(space, np.array(doc["prior"], dtype=float), doc.get("name", "belief"))


def prior_battery(space: DatabaseSpace, seed: int = 0) -> list[Belief]:
    return [Belief.uniform(space), Belief.dirichlet(space, seed), Belief.point_mixture(space)]


def _jsonable(t):
    if isinstance(t, tuple):
        return [_jsonable(v) for v in t]
    return t


def _hashable(t):
    if isinstance(t, list):
        return tuple(_hashable(v) for v in t)
    return t


# --------------------------------------------------------------------- mechanisms


def _require_binary(space: DatabaseSpace) -> None:
    if set(space.domain) != {0, 1}:
        raise DomainError("domain", space.domain, "mechanism requires the binary row domain {0, 1}")


def build_randomized_response(space: DatabaseSpace, p: float) -> Mechanism:
    """Each bit is reported truthfully with probability 1-p and flipped with probability p."""
    _require_binary(space)
    if not 0 < p <= 0.5:
        raise ValueError("flip probability must lie in (0, 1/2]")
    transcripts = tuple(itertools.product((0, 1), repeat=space.n))
    bits = np.array([[space.domain[c] for c in row] for row in space.positions])
    outs = np.array(transcripts)
    flips = (bits[:, None, :] != outs[None, :, :]).sum(axis=2)
    prob = p**flips * (1 - p) ** (space.n - flips)
    return Mechanism(space, transcripts, prob, f"randomized-response(n={space.n}, p={p:g})")


def randomized_response_epsilon(p: float) -> float:
    return math.log((1 - p) / p)


def build_truncated_geometric_counter(space: DatabaseSpace, epsilon: float) -> Mechanism:
    """Noisy count of ones: two-sided geometric noise with ratio e^-epsilon, clamped to [0, n].

    ``epsilon = inf`` gives the exact (noiseless) count.
    """
    _require_binary(space)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n = space.n
    alpha = math.exp(-epsilon) if math.isfinite(epsilon) else 0.0
    table = np.zeros((n + 1, n + 1))
    for c in range(n + 1):
        for j in range(n + 1):
            if n == 0:
                table[c, j] = 1.0
            elif j == 0:
                table[c, j] = alpha**c / (1 + alpha)
            elif j == n:
                table[c, j] = alpha ** (n - c) / (1 + alpha)
            else:
                table[c, j] = (1 - alpha) / (1 + alpha) * alpha ** abs(j - c)
    if alpha == 0.0:
        table = np.eye(n + 1)
    counts = np.array([sum(space.domain[c] for c in row) for row in space.positions])
    return Mechanism(space, tuple(range(n + 1)), table[counts], f"truncated-geometric(n={n}, eps={epsilon:g})")


def build_exact_count(space: DatabaseSpace) -> Mechanism:
    return build_truncated_geometric_counter(space, math.inf)


def build_publish_one_record(space: DatabaseSpace) -> Mechanism:
    """Pick i uniformly and publish (i, D_i): private under total variation, useless in reality."""
    n = space.n
    transcripts = tuple((i, v) for i in range(1, n + 1) for v in space.domain)
    return Mechanism.from_function(
        space, transcripts, lambda db: {(i, db[i - 1]): 1.0 / n for i in range(1, n + 1)}, f"publish-one-record(n={n})"
    )


def build_constant(space: DatabaseSpace, transcripts: Sequence = (0, 1)) -> Mechanism:
    """Output distribution independent of the data (uniform over ``transcripts``)."""
    transcripts = tuple(transcripts)
    prob = np.full((space.size, len(transcripts)), 1.0 / len(transcripts))
    return Mechanism(space, transcripts, prob, "constant")


# ------------------------------------------------------------- indistinguishability


def indistinguishability_gap(P, Q, epsilon: float) -> float:
    """Smallest delta for which P and Q are (epsilon, delta)-indistinguishable.

    For a fixed direction the worst event is {t : P[t] > e^eps Q[t]}, so
    max_S (P[S] - e^eps Q[S]) equals the sum of the positive gaps.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    factor = math.exp(epsilon)
    forward = np.maximum(P - factor * Q, 0.0).sum(axis=-1)
    backward = np.maximum(Q - factor * P, 0.0).sum(axis=-1)
    return np.maximum(forward, backward) if np.ndim(forward) else float(max(forward, backward))


def indistinguishability_check(P, Q, epsilon: float, delta: float) -> bool:
    return bool(indistinguishability_gap(P, Q, epsilon) <= delta + SLACK)


def neighbor_gaps(mech: Mechanism, epsilon: float) -> np.ndarray:
    """Indistinguishability gap for every neighbouring pair of ``mech.space.neighbor_pairs``."""
    pairs = mech.space.neighbor_pairs
    if len(pairs) == 0:
        return np.zeros(0)
    out = np.empty(len(pairs))
    step = max(1, 2_000_000 // max(1, len(mech.transcripts)))
    for start in range(0, len(pairs), step):
        chunk = pairs[start:start + step]
        out[start:start + step] = indistinguishability_gap(mech.prob[chunk[:, 0]], mech.prob[chunk[:, 1]], epsilon)
    return out


def dp_min_delta(mech: Mechanism, epsilon: float) -> tuple[float, tuple | None]:
    """Smallest delta making ``mech`` (epsilon, delta)-DP, with a worst neighbouring pair."""
    gaps = neighbor_gaps(mech, epsilon)
    if gaps.size == 0:
        return 0.0, None
    worst = int(np.argmax(gaps))
    a, b = mech.space.neighbor_pairs[worst]
    dbs = mech.space.databases
    return float(gaps[worst]), (dbs[a], dbs[b])


def dp_check(mech: Mechanism, epsilon: float, delta: float) -> bool:
    gaps = neighbor_gaps(mech, epsilon)
    return bool((gaps <= delta + SLACK).all())


# ------------------------------------------------------------------- posteriors


def _condition(space: DatabaseSpace, likelihood: np.ndarray, prior: np.ndarray) -> np.ndarray:
    joint = likelihood * prior
    total = joint.sum()
    if total <= 0:
        raise ConditioningError("transcript has zero probability under this belief")
    return joint / total


def posterior(belief: Belief, mech: Mechanism, t) -> Belief:
    """Bayes update of ``belief`` after observing transcript ``t`` of A(D)."""
    lik = mech.prob[:, mech.transcript_index(t)]
    return Belief(belief.space, _condition(belief.space, lik, belief.prior), f"posterior[{t}]")


def posterior_game(belief: Belief, mech: Mechanism, i: int, t) -> Belief:
    """Posterior in game i, where the adversary interacts with A(D_{-i})."""
    lik = mech.prob[mech.space.replaced_index(i), mech.transcript_index(t)]
    return Belief(belief.space, _condition(belief.space, lik, belief.prior), f"posterior_{i}[{t}]")


def statistical_difference(P, Q) -> float:
    """Total variation distance, max_S |P[S] - Q[S]| = 1/2 sum |P - Q|."""
    p = P.prior if isinstance(P, Belief) else np.asarray(P, dtype=float)
    q = Q.prior if isinstance(Q, Belief) else np.asarray(Q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions have different supports")
    return float(min(1.0, max(0.0, 0.5 * np.abs(p - q).sum())))


# -------------------------------------------------------------- semantic privacy


def epsilon_prime(epsilon: float, delta: float) -> float:
    return math.exp(3 * epsilon) - 1 + 2 * math.sqrt(delta)


def pure_dp_bound(epsilon: float) -> float:
    return math.exp(epsilon) - 1


def nominal_delta_prime(n: int, epsilon: float, delta: float) -> float:
    """Union bound n * (sqrt(delta) + 2 delta / (eps e^eps)) + delta, capped at 1.

    The asymptotic budget O(n sqrt(delta)) hides a constant; this is the explicit value
    suggested by the proof outline and is used only for the reported verdict.
    """
    if delta == 0:
        return 0.0
    if epsilon <= 0:
        return 1.0
    return min(1.0, n * (math.sqrt(delta) + 2 * delta / (epsilon * math.exp(epsilon))) + delta)


@dataclass
class SemanticPrivacyReport:
    mechanism: str
    belief: str
    epsilon: float
    delta: float
    n: int
    default_row: object
    worst_sd: float | None
    witness: dict | None
    # max_i SD(b0, b_i) and Pr[t] per transcript with positive probability
    per_transcript: list[dict]
    epsilon_prime: float
    exceedance_mass: float | None
    exceedance_ratio: float | None
    pure_bound: float
    pure_exceedance_mass: float | None
    undefined_games: int
    delta_prime: float = 0.0
    good_set_mass: float | None = None
    good_set_size: int | None = None
    good_set_applicable: bool | None = None
    good_set_verdict: bool | None = None
    extras: dict = field(default_factory=dict)

    @property
    def pure_bound_holds(self) -> bool:
        """Worst-case SD within e^eps - 1 (meaningful for delta = 0)."""
        if self.worst_sd is None:
            return False
        return self.worst_sd <= self.pure_bound + SLACK and self.pure_exceedance_mass <= SLACK

    @property
    def budget_verdict(self) -> bool:
        """Failure mass at epsilon' is within the nominal delta' budget."""
        if self.exceedance_mass is None:
            return False
        return self.exceedance_mass <= self.delta_prime + SLACK

    def mass_exceeding(self, bound: float) -> float:
        return float(sum(row["prob"] for row in self.per_transcript if row["max_sd"] > bound + SLACK))

    def to_dict(self) -> dict:
        doc = {k: v for k, v in self.__dict__.items() if k != "extras"}
        doc["pure_bound_holds"] = self.pure_bound_holds
        doc["budget_verdict"] = self.budget_verdict
        doc.update(self.extras)
        return json.loads(json.dumps(doc, default=_jsonable_default))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _jsonable_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def game_differences(mech: Mechanism, belief: Belief) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SD(b0[.|t], b_i[.|t]) for every game i and transcript t.

    Returns ``(sd, pt, undefined)`` with ``sd`` of shape (n, T), ``pt`` the
    transcript marginal Pr[t], and ``undefined`` marking (i, t) where t has
    positive probability in the real world but zero probability in game i.
    Such a transcript proves i's row was used, so its SD is set to 1.
    """
    space = mech.space
    prior = belief.prior
    joint = prior[:, None] * mech.prob
    pt = joint.sum(axis=0)
    live = pt > 0
    b0 = np.divide(joint, pt, out=np.zeros_like(joint), where=live)
    sd = np.zeros((space.n, len(mech.transcripts)))
    undefined = np.zeros_like(sd, dtype=bool)
    for i in range(1, space.n + 1):
        joint_i = prior[:, None] * mech.prob[space.replaced_index(i)]
        zi = joint_i.sum(axis=0)
        ok = zi > 0
        bi = np.divide(joint_i, zi, out=np.zeros_like(joint_i), where=ok)
        sd[i - 1] = np.clip(0.5 * np.abs(b0 - bi).sum(axis=0), 0.0, 1.0)
        undefined[i - 1] = live & ~ok
        sd[i - 1, undefined[i - 1]] = 1.0
        sd[i - 1, ~live] = 0.0
    return sd, pt, undefined


def semantic_privacy_eval(mech: Mechanism, belief: Belief, epsilon: float, delta: float) -> SemanticPrivacyReport:
    """Enumerate all (D, t) and measure max_i SD(b0, b_i) against the semantic-privacy bounds."""
    if belief.space.size != mech.space.size:
        raise ValueError("belief and mechanism live on different spaces")
    space = mech.space
    sd, pt, undefined = game_differences(mech, belief)
    max_sd = sd.max(axis=0)
    arg_i = sd.argmax(axis=0) + 1
    live = np.flatnonzero(pt > 0)
    per_t = [
        {"t": mech.transcripts[j], "prob": float(pt[j]), "max_sd": float(max_sd[j]), "i": int(arg_i[j])}
        for j in live
    ]
    witness = None
    worst = 0.0
    if len(live):
        tj = int(live[np.argmax(max_sd[live])])
        worst = float(max_sd[tj])
        joint_col = belief.prior * mech.prob[:, tj]
        d = int(np.argmax(joint_col))
        witness = {"D": space.databases[d], "t": mech.transcripts[tj], "i": int(arg_i[tj]), "sd": worst,
                   "game_undefined": bool(undefined[arg_i[tj] - 1, tj])}
    eps_p = epsilon_prime(epsilon, delta)
    pure = pure_dp_bound(epsilon)
    exceed = float(pt[max_sd > eps_p + SLACK].sum())
    pure_exceed = float(pt[max_sd > pure + SLACK].sum())
    ratio = exceed / (space.n * math.sqrt(delta)) if delta > 0 else None
    return SemanticPrivacyReport(
        mechanism=mech.name,
        belief=belief.name,
        epsilon=float(epsilon),
        delta=float(delta),
        n=space.n,
        default_row=space.default_row,
        worst_sd=worst,
        witness=witness,
        per_transcript=per_t,
        epsilon_prime=eps_p,
        exceedance_mass=exceed,
        exceedance_ratio=ratio,
        pure_bound=pure,
        pure_exceedance_mass=pure_exceed,
        undefined_games=int(undefined.sum()),
        delta_prime=nominal_delta_prime(space.n, epsilon, delta),
    )


def good_set(mech: Mechanism, epsilon: float, delta: float) -> np.ndarray:
    """Boolean mask of databases whose every neighbour yields an (eps, delta)-indistinguishable output."""
    gaps = neighbor_gaps(mech, epsilon)
    bad = gaps > delta + SLACK
    mask = np.ones(mech.space.size, dtype=bool)
    pairs = mech.space.neighbor_pairs[bad]
    mask[pairs[:, 0]] = False
    mask[pairs[:, 1]] = False
    return mask


def good_set_semantic_eval(mech: Mechanism, belief: Belief, epsilon: float, delta: float) -> SemanticPrivacyReport:
    """Semantic privacy for priors concentrated on databases where indistinguishability holds.

    When the prior puts mass at least 1 - delta on the good set, the full
    semantic evaluation runs and its verdict is attached; otherwise only the
    good-set mass is reported.
    """
    mask = good_set(mech, epsilon, delta)
    mass = float(belief.prior[mask].sum())
    applicable = mass >= 1 - delta - SLACK
    if applicable:
        report = semantic_privacy_eval(mech, belief, epsilon, delta)
        report.good_set_verdict = report.budget_verdict
    else:
        space = mech.space
        report = SemanticPrivacyReport(
            mechanism=mech.name, belief=belief.name, epsilon=float(epsilon), delta=float(delta), n=space.n,
            default_row=space.default_row, worst_sd=None, witness=None, per_transcript=[],
            epsilon_prime=epsilon_prime(epsilon, delta), exceedance_mass=None, exceedance_ratio=None,
            pure_bound=pure_dp_bound(epsilon), pure_exceedance_mass=None, undefined_games=0,
            delta_prime=nominal_delta_prime(space.n, epsilon, delta),
        )
    report.good_set_mass = mass
    report.good_set_size = int(mask.sum())
    report.good_set_applicable = applicable
    report.extras["good_set"] = [mech.space.databases[d] for d in np.flatnonzero(mask)]
    return report
