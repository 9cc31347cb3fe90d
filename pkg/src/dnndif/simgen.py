"""Multigroup 2PL response simulation with planted measurement non-invariance.

A replication is produced in two stages.  :func:`sample_design` draws one set
of item parameters shared by all groups, the group latent distributions, and
the non-invariant (group, item) cells with their bias.  :func:`generate_responses`
then draws latent traits and binary responses from the operative parameters.

Cell ordering everywhere is item-fast within group: ``(g1, i1), (g1, i2), ...,
(g1, iI), (g2, i1), ...``, i.e. row-major ravel of a ``(n_groups, n_items)``
array.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError

# skew-normal parameters fitted on the ESS round 7 political participation scale
LOADING_DIST = (2.946, 1.223, 10.0, 1.0, 7.0)
THRESHOLD_DIST = (-0.2095, 0.6391, 0.7176, -2.0, 1.0)


@dataclass(frozen=True)
class ItemParams:
    loading: float
    threshold: float


@dataclass(frozen=True)
class GroupSpec:
    mean: float
    sd: float


@dataclass(frozen=True)
class DesignCell:
    group_index: int
    item_index: int
    true_params: ItemParams
    operative_params: ItemParams
    flag_threshold: bool
    flag_loading: bool
    bias_threshold: float
    bias_loading: float


@dataclass
class SimulationConfig:
    """Distributions and dimensions for a simulation condition.

    Distribution tuples are ``(mean, sd, xi, lower, upper)`` for the skew-normal
    item parameters, ``(mean, sd)`` for the normal group means, and
    ``(lower, upper)`` for every uniform range.
    """

    n_groups: int = 4
    n_items: int = 5
    n_per_group: int = 400
    loading_dist: tuple = LOADING_DIST
    threshold_dist: tuple = THRESHOLD_DIST
    group_mean_dist: tuple = (0.0, 0.2)
    group_sd_range: tuple = (0.75, 1.25)
    bias_threshold_range: tuple = (0.3, 1.0)
    bias_loading_range: tuple = (0.3, 2.0)
    max_biased_items: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("loading_dist", "threshold_dist", "group_mean_dist", "group_sd_range",
                     "bias_threshold_range", "bias_loading_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.max_biased_items is None:
            self.max_biased_items = default_max_biased_items(self.n_items)
        self.validate()

    def validate(self) -> None:
        if self.n_groups < 2:
            raise ConfigError(f"n_groups must be >= 2, got {self.n_groups}")
        if self.n_items < 2:
            raise ConfigError(f"n_items must be >= 2, got {self.n_items}")
        if self.n_per_group <= 0:
            raise ConfigError(f"n_per_group must be > 0, got {self.n_per_group}")
        for name in ("loading_dist", "threshold_dist"):
            dist = getattr(self, name)
            if len(dist) != 5:
                raise ConfigError(f"{name} must be (mean, sd, xi, lower, upper)")
            _check_skew_params(dist[1], dist[2], dist[3], dist[4], name)
        if len(self.group_mean_dist) != 2 or self.group_mean_dist[1] < 0:
            raise ConfigError("group_mean_dist must be (mean, sd) with sd >= 0")
        for name in ("group_sd_range", "bias_threshold_range", "bias_loading_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} is empty: ({lo}, {hi})")
        if self.group_sd_range[0] <= 0:
            raise ConfigError("group_sd_range must be strictly positive")
        if not 1 <= self.max_biased_items <= self.n_items - 1:
            raise ConfigError(
                f"max_biased_items must lie in [1, {self.n_items - 1}], got {self.max_biased_items}")
        if self.loading_dist[3] <= 0:
            raise ConfigError("true loadings must be bounded below by a positive value")

    @property
    def n_cells(self) -> int:
        return self.n_groups * self.n_items

    @property
    def input_dim(self) -> int:
        return self.n_groups * self.n_items * self.n_per_group

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (seed excluded)."""
        payload = self.to_dict()
        payload.pop("seed")
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def default_max_biased_items(n_items: int) -> int:
    # 3 of 5 items, 2 of 3 items; never all items
    return max(1, min(3, n_items - 1))


def _check_skew_params(sd, xi, lower, upper, what="skew normal"):
    if not sd > 0:
        raise ConfigError(f"{what}: sd must be > 0, got {sd}")
    if not xi > 0:
        raise ConfigError(f"{what}: xi must be > 0, got {xi}")
    if not lower < upper:
        raise ConfigError(f"{what}: need lower < upper, got ({lower}, {upper})")


def skew_normal(mean, sd, xi, size, rng: np.random.Generator) -> np.ndarray:
    """Draw from the Fernandez-Steel skew normal standardized to ``mean``/``sd``.

    The sampling routine follows the ``rsnorm`` construction: a uniform picks the
    side of the mode, a half-normal supplies the magnitude scaled by ``xi`` on
    the right and ``1/xi`` on the left, and the result is shifted and scaled by
    the analytic mean and SD of the unstandardized two-piece variable.
    """
    if not sd > 0:
        raise ConfigError(f"sd must be > 0, got {sd}")
    if not xi > 0:
        raise ConfigError(f"xi must be > 0, got {xi}")
    weight = xi / (xi + 1.0 / xi)
    z = rng.uniform(-weight, 1.0 - weight, size)
    sign = np.sign(z)
    scale = xi ** sign
    draws = -np.abs(rng.standard_normal(size)) / scale * sign
    m1 = 2.0 / np.sqrt(2.0 * np.pi)
    mu = m1 * (xi - 1.0 / xi)
    sigma = np.sqrt((1.0 - m1 ** 2) * (xi ** 2 + 1.0 / xi ** 2) + 2.0 * m1 ** 2 - 1.0)
    return (draws - mu) / sigma * sd + mean


def sample_truncated_skew_normal(mean, sd, xi, lower, upper, rng, size=None):
    """Skew-normal draws with out-of-range values set to the violated bound."""
    _check_skew_params(sd, xi, lower, upper)
    draws = np.clip(skew_normal(mean, sd, xi, size, rng), lower, upper)
    return float(draws) if size is None else draws


def irf(theta, threshold, loading):
    """Probability of a positive response, ``1 / (1 + exp(threshold - loading * theta))``."""
    return 1.0 / (1.0 + np.exp(np.subtract(threshold, np.multiply(loading, theta))))


@dataclass
class DesignMatrix:
    """True and operative item parameters for every (group, item) cell.

    Per-cell arrays have shape ``(n_groups, n_items)``.
    """

    true_loading: np.ndarray
    true_threshold: np.ndarray
    loading: np.ndarray
    threshold: np.ndarray
    flag_threshold: np.ndarray
    flag_loading: np.ndarray
    bias_threshold: np.ndarray
    bias_loading: np.ndarray
    group_mean: np.ndarray
    group_sd: np.ndarray

    @property
    def n_groups(self) -> int:
        return self.loading.shape[0]

    @property
    def n_items(self) -> int:
        return self.loading.shape[1]

    @property
    def groups(self) -> list[GroupSpec]:
        return [GroupSpec(float(m), float(s)) for m, s in zip(self.group_mean, self.group_sd)]

    def cells(self) -> Iterator[DesignCell]:
        for g in range(self.n_groups):
            for i in range(self.n_items):
                yield DesignCell(
                    group_index=g,
                    item_index=i,
                    true_params=ItemParams(float(self.true_loading[i]), float(self.true_threshold[i])),
                    operative_params=ItemParams(float(self.loading[g, i]), float(self.threshold[g, i])),
                    flag_threshold=bool(self.flag_threshold[g, i]),
                    flag_loading=bool(self.flag_loading[g, i]),
                    bias_threshold=float(self.bias_threshold[g, i]),
                    bias_loading=float(self.bias_loading[g, i]),
                )

    def labels(self) -> np.ndarray:
        """Threshold flags then loading flags, each item-fast within group."""
        return np.concatenate([self.flag_threshold.ravel(), self.flag_loading.ravel()]).astype(np.uint8)

    def tobytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(getattr(self, f.name)).tobytes()
                        for f in dataclasses.fields(self))

    @classmethod
    def invariant(cls, loading, threshold, group_mean, group_sd) -> "DesignMatrix":
        """Design with no bias: every group uses the given item parameters."""
        loading = np.asarray(loading, dtype=float)
        threshold = np.asarray(threshold, dtype=float)
        group_mean = np.asarray(group_mean, dtype=float)
        group_sd = np.asarray(group_sd, dtype=float)
        shape = (len(group_mean), len(loading))
        zeros = np.zeros(shape)
        return cls(
            true_loading=loading.copy(),
            true_threshold=threshold.copy(),
            loading=np.broadcast_to(loading, shape).copy(),
            threshold=np.broadcast_to(threshold, shape).copy(),
            flag_threshold=np.zeros(shape, dtype=bool),
            flag_loading=np.zeros(shape, dtype=bool),
            bias_threshold=zeros.copy(),
            bias_loading=zeros.copy(),
            group_mean=group_mean,
            group_sd=group_sd,
        )

    def with_bias(self, group: int, item: int, threshold_bias: float = 0.0,
                  loading_bias: float = 0.0) -> "DesignMatrix":
        """Copy with one extra biased cell, applying the nonpositive-loading repair."""
        out = dataclasses.replace(self, **{f.name: np.array(getattr(self, f.name))
                                           for f in dataclasses.fields(self)})
        if threshold_bias != 0.0:
            out.flag_threshold[group, item] = True
            out.bias_threshold[group, item] = threshold_bias
            out.threshold[group, item] = out.true_threshold[item] + threshold_bias
        if loading_bias != 0.0:
            out.flag_loading[group, item] = True
            out.bias_loading[group, item] = loading_bias
            biased = out.true_loading[item] + loading_bias
            if biased <= 0:
                biased = out.true_loading[item] + abs(loading_bias)
            out.loading[group, item] = biased
        return out


def sample_design(config: SimulationConfig, rng: np.random.Generator) -> DesignMatrix:
    """Draw one random non-invariance design.

    Draw order (part of the determinism contract): true loadings, true
    thresholds, group means, group SDs, number of affected groups, biased items
    per affected group, bias type per cell, threshold bias magnitudes, loading
    bias magnitudes, signs.  The affected groups are the last ``k`` groups.
    """
    G, I = config.n_groups, config.n_items
    true_loading = sample_truncated_skew_normal(*config.loading_dist, rng=rng, size=I)
    true_threshold = sample_truncated_skew_normal(*config.threshold_dist, rng=rng, size=I)
    group_mean = rng.normal(config.group_mean_dist[0], config.group_mean_dist[1], G)
    group_sd = rng.uniform(*config.group_sd_range, G)

    n_affected = int(rng.integers(1, G + 1))
    biased = np.zeros((G, I), dtype=bool)
    for g in range(G - n_affected, G):
        k = int(rng.integers(1, config.max_biased_items + 1))
        biased[g, rng.choice(I, size=k, replace=False)] = True

    # 1 threshold only, 2 loading only, 3 both
    kind = rng.integers(1, 4, size=(G, I))
    flag_threshold = biased & (kind != 2)
    flag_loading = biased & (kind != 1)

    mag_threshold = rng.uniform(*config.bias_threshold_range, size=(G, I))
    mag_loading = rng.uniform(*config.bias_loading_range, size=(G, I))
    sign = rng.choice(np.array([-1.0, 1.0]), size=(G, I))
    bias_threshold = np.where(flag_threshold, mag_threshold * sign, 0.0)
    bias_loading = np.where(flag_loading, mag_loading * sign, 0.0)

    threshold = true_threshold[None, :] + bias_threshold
    loading = true_loading[None, :] + bias_loading
    # nonpositive loadings are reflected: true loading + |bias|
    repair = loading <= 0
    loading = np.where(repair, true_loading[None, :] + np.abs(bias_loading), loading)

    return DesignMatrix(
        true_loading=true_loading,
        true_threshold=true_threshold,
        loading=loading,
        threshold=threshold,
        flag_threshold=flag_threshold,
        flag_loading=flag_loading,
        bias_threshold=bias_threshold,
        bias_loading=bias_loading,
        group_mean=group_mean,
        group_sd=group_sd,
    )


@dataclass
class ResponseDataset:
    """Binary responses, rows blocked by group in group order."""

    responses: np.ndarray
    n_groups: int
    n_per_group: int = field(default=0)

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=np.uint8)
        if self.responses.ndim != 2:
            raise ValueError("responses must be a 2-d matrix")
        if self.n_per_group == 0:
            self.n_per_group = self.responses.shape[0] // self.n_groups
        if self.responses.shape[0] != self.n_groups * self.n_per_group:
            raise ValueError(
                f"{self.responses.shape[0]} rows is not {self.n_groups} groups x {self.n_per_group}")

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    @property
    def group_of_row(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_groups), self.n_per_group)

    def group_block(self, g: int) -> np.ndarray:
        return self.responses[g * self.n_per_group:(g + 1) * self.n_per_group]

    def flatten(self) -> np.ndarray:
        """Column-major vector: item slowest, then group, then respondent."""
        return self.responses.T.ravel()

    @classmethod
    def from_flat(cls, vector, n_groups: int, n_items: int, n_per_group: int) -> "ResponseDataset":
        vector = np.asarray(vector, dtype=np.uint8)
        return cls(vector.reshape(n_items, n_groups * n_per_group).T.copy(), n_groups, n_per_group)

    def __eq__(self, other):
        if not isinstance(other, ResponseDataset):
            return NotImplemented
        return (self.n_groups == other.n_groups and self.n_per_group == other.n_per_group
                and np.array_equal(self.responses, other.responses))


def generate_responses(design: DesignMatrix, n_per_group: int,
                       rng: np.random.Generator) -> tuple[ResponseDataset, np.ndarray]:
    """Simulate responses from the operative parameters; return data and labels."""
    G, I = design.n_groups, design.n_items
    theta = design.group_mean[:, None] + design.group_sd[:, None] * rng.standard_normal((G, n_per_group))
    prob = irf(theta[:, :, None], design.threshold[:, None, :], design.loading[:, None, :])
    u = rng.random((G, n_per_group, I))
    responses = (u < prob).astype(np.uint8).reshape(G * n_per_group, I)
    return ResponseDataset(responses, G, n_per_group), design.labels()


def replication_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for replication ``index`` of a corpus seeded by ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),)))


def simulate_replication(config: SimulationConfig, rng: np.random.Generator):
    """Design plus responses for one replication, drawn from a single stream."""
    design = sample_design(config, rng)
    data, labels = generate_responses(design, config.n_per_group, rng)
    return design, data, labels
