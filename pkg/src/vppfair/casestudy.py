"""Field-data pipeline: filtering, response estimation, clustering.

Reproduces the calibration chain from raw experiment exports to a weighted
cluster population:

1. keep households that joined the experiments, in phase 2 only, in the
   price treatment group, and answered the final survey;
2. regress incentive price on consumption per hour of day over experiment
   observations (a record is an experiment observation iff it carries a
   price) and pick the analysis hour from the longest run of hours with a
   significant slope;
3. estimate each household's capacity as its mean consumption during
   non-experiment observations at that hour;
4. cluster capacities with one-dimensional k-means and hand the cluster
   means and counts to the pricing solvers as a weighted population.

Bulk data moves through pandas frames; the record dataclasses are the
schema contract and are used directly for small inputs and tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.cluster import KMeans

from .model import ConsumerParams, CostParams, MarketParams, Population

PARTICIPANT_COLUMNS = (
    "ID",
    "Participation_Experiments",
    "Participation_Phase",
    "Control_Price_Phase2",
    "Survey3_answered",
)
HOURLY_COLUMNS = ("ID", "timestamp", "consumption_kwh", "price_nok_per_kwh")


class DataSchemaError(ValueError):
    """A record does not match the expected schema."""


class InsufficientDataError(ValueError):
    """Not enough observations for the requested estimate."""


class ClusteringError(ValueError):
    """Clustering preconditions violated."""


@dataclass(frozen=True)
class ParticipantRecord:
    id: str
    participated_experiments: bool
    phase: str
    treatment_group: str  # "price" | "control" | other
    survey3_answered: bool

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "ParticipantRecord":
        def norm(key: str) -> str:
            value = row.get(key)
            if value is None:
                raise DataSchemaError(f"missing column {key!r}")
            return str(value).strip().lower()

        group = norm("Control_Price_Phase2")
        if "price" in group:
            group = "price"
        elif "control" in group:
            group = "control"
        return cls(
            id=str(row["ID"]).strip(),
            participated_experiments=norm("Participation_Experiments") == "yes",
            phase=norm("Participation_Phase"),
            treatment_group=group,
            survey3_answered=norm("Survey3_answered") == "yes",
        )


@dataclass(frozen=True)
class HourlyRecord:
    participant_id: str
    timestamp: pd.Timestamp
    hour_of_day: int
    consumption: float
    price: float | None  # None marks a non-experiment hour

    def __post_init__(self) -> None:
        if self.consumption < 0:
            raise DataSchemaError(
                f"{self.participant_id}: consumption {self.consumption} < 0"
            )
        if self.timestamp.hour != self.hour_of_day:
            raise DataSchemaError(
                f"{self.participant_id}: hour {self.hour_of_day} does not match "
                f"timestamp {self.timestamp}"
            )


@dataclass(frozen=True)
class HourEstimate:
    hour: int
    a_hat: float
    b_hat: float
    p_value: float
    n_obs: int


@dataclass(frozen=True)
class ClusterSummary:
    cluster_id: int
    mean_capacity: float
    count: int
    member_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class FilterResult:
    ids: frozenset[str]
    stage_counts: tuple[int, int, int, int, int]
    errors: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Stage 1: sample filtering
# ---------------------------------------------------------------------------

def filter_sample(participants: Iterable[ParticipantRecord]) -> FilterResult:
    """Apply the four sample predicates, reporting per-stage counts.

    The predicates are independent set filters, so the resulting id set does
    not depend on their order; the stage counts follow the canonical order
    (experiments, phase 2, price group, survey answered).
    """
    records = list(participants)
    stage0 = len(records)
    s1 = [r for r in records if r.participated_experiments]
    s2 = [r for r in s1 if r.phase == "2"]
    s3 = [r for r in s2 if r.treatment_group == "price"]
    s4 = [r for r in s3 if r.survey3_answered]
    return FilterResult(
        ids=frozenset(r.id for r in s4),
        stage_counts=(stage0, len(s1), len(s2), len(s3), len(s4)),
    )


def load_participants_csv(path: str) -> tuple[list[ParticipantRecord], list[str]]:
    """Read a participants export; malformed rows are collected, not fatal."""
    frame = pd.read_csv(path, dtype=str)
    records: list[ParticipantRecord] = []
    errors: list[str] = []
    for idx, row in frame.iterrows():
        try:
            records.append(ParticipantRecord.from_row(row))
        except (DataSchemaError, KeyError) as exc:
            errors.append(f"row {idx}: {exc}")
    return records, errors


# ---------------------------------------------------------------------------
# Stage 2: hourly response estimation
# ---------------------------------------------------------------------------

def load_hourly_csv(path: str, ids: Iterable[str] | None = None) -> pd.DataFrame:
    """Read hourly observations; an empty price cell marks a non-experiment
    hour.  Optionally restricts to the given participant ids."""
    frame = pd.read_csv(
        path,
        dtype={"ID": str},
        parse_dates=["timestamp"],
    )
    missing = [c for c in HOURLY_COLUMNS if c not in frame.columns]
    if missing:
        raise DataSchemaError(f"hourly file missing columns {missing}")
    frame = frame.rename(
        columns={"consumption_kwh": "consumption", "price_nok_per_kwh": "price"}
    )
    if ids is not None:
        wanted = frozenset(str(i) for i in ids)
        frame = frame[frame["ID"].isin(wanted)]
    frame = frame.assign(hour=frame["timestamp"].dt.hour)
    if (frame["consumption"] < 0).any():
        raise DataSchemaError("negative consumption values present")
    return frame.reset_index(drop=True)


def frame_from_records(records: Sequence[HourlyRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "ID": [r.participant_id for r in records],
            "timestamp": [r.timestamp for r in records],
            "consumption": [r.consumption for r in records],
            "price": [np.nan if r.price is None else r.price for r in records],
            "hour": [r.hour_of_day for r in records],
        }
    )


def estimate_hourly(frame: pd.DataFrame, hour: int) -> HourEstimate:
    """Pooled OLS of price on consumption over experiment observations.

    The linear response implies price = -a * consumption + b at a given
    hour, so the response curvature is minus the fitted slope.  The p-value
    is the two-sided t-test of the slope with n - 2 degrees of freedom.
    """
    sel = frame[(frame["hour"] == hour) & frame["price"].notna()]
    n = len(sel)
    if n < 3:
        raise InsufficientDataError(f"hour {hour}: {n} experiment observations (< 3)")
    q = sel["consumption"].to_numpy(dtype=float)
    p = sel["price"].to_numpy(dtype=float)
    if np.allclose(q, q[0]):
        raise InsufficientDataError(f"hour {hour}: consumption has zero variance")
    fit = stats.linregress(q, p)
    return HourEstimate(
        hour=hour,
        a_hat=-float(fit.slope),
        b_hat=float(fit.intercept),
        p_value=float(fit.pvalue),
        n_obs=n,
    )


def estimate_all_hours(frame: pd.DataFrame) -> list[HourEstimate]:
    """Per-hour estimates for every hour with enough experiment data."""
    out = []
    for hour in sorted(frame.loc[frame["price"].notna(), "hour"].unique()):
        try:
            out.append(estimate_hourly(frame, int(hour)))
        except InsufficientDataError:
            continue
    return out


def select_hour(estimates: Sequence[HourEstimate], significance: float = 0.05) -> int:
    """Pick the analysis hour.

    Restrict to hours with a significant slope, find the longest run of
    consecutive hours, and return the hour with the largest response
    coefficient inside that run.  Equal-length runs are broken toward the
    run holding the largest coefficient overall, then toward the earliest
    run; coefficient ties inside a run go to the earliest hour.
    """
    significant = sorted(
        (e for e in estimates if e.p_value < significance), key=lambda e: e.hour
    )
    if not significant:
        raise InsufficientDataError("no hour with a significant response estimate")
    runs: list[list[HourEstimate]] = [[significant[0]]]
    for est in significant[1:]:
        if est.hour == runs[-1][-1].hour + 1:
            runs[-1].append(est)
        else:
            runs.append([est])
    longest = max(len(r) for r in runs)
    candidates = [r for r in runs if len(r) == longest]
    best_run = max(
        candidates, key=lambda r: (max(e.a_hat for e in r), -r[0].hour)
    )
    best = max(best_run, key=lambda e: (e.a_hat, -e.hour))
    return best.hour


# ---------------------------------------------------------------------------
# Stage 3: capacity estimation and clustering
# ---------------------------------------------------------------------------

def estimate_capacity(frame: pd.DataFrame, hour: int, participant_id: str) -> float:
    """Mean consumption over non-experiment observations at the hour."""
    sel = frame[
        (frame["hour"] == hour)
        & frame["price"].isna()
        & (frame["ID"] == str(participant_id))
    ]
    if sel.empty:
        raise InsufficientDataError(
            f"{participant_id}: no non-experiment observations at hour {hour}"
        )
    return float(sel["consumption"].mean())


def estimate_capacities(frame: pd.DataFrame, hour: int) -> dict[str, float]:
    """Capacities for every household with non-experiment data at the hour."""
    sel = frame[(frame["hour"] == hour) & frame["price"].isna()]
    grouped = sel.groupby("ID")["consumption"].mean()
    return {str(k): float(v) for k, v in grouped.items()}


def cluster_households(
    capacities: Mapping[str, float],
    k: int = 3,
    seed: int = 0,
    n_restarts: int = 50,
    elbow_max_k: int = 8,
) -> tuple[list[ClusterSummary], dict[int, float]]:
    """One-dimensional k-means over capacities.

    Uses k-means++ seeding with a fixed seed and ``n_restarts`` restarts
    (lowest inertia wins), so results are deterministic.  Returns cluster
    summaries ordered by ascending mean capacity together with the elbow
    diagnostic (within-cluster sum of squares for k = 1..elbow_max_k); the
    choice of k itself stays a reviewed configuration input.
    """
    ids = sorted(capacities)
    values = np.array([capacities[i] for i in ids], dtype=float).reshape(-1, 1)
    distinct = np.unique(values).size
    if distinct < k:
        raise ClusteringError(f"{distinct} distinct capacity values < k={k}")

    def fit(kk: int) -> KMeans:
        return KMeans(
            n_clusters=kk, init="k-means++", n_init=n_restarts, random_state=seed
        ).fit(values)

    model = fit(k)
    labels = model.labels_
    order = np.argsort(model.cluster_centers_.ravel(), kind="stable")
    remap = {int(old): rank for rank, old in enumerate(order)}
    summaries = []
    for rank in range(k):
        members = [ids[j] for j in range(len(ids)) if remap[int(labels[j])] == rank]
        member_values = [capacities[m] for m in members]
        summaries.append(
            ClusterSummary(
                cluster_id=rank + 1,
                mean_capacity=float(np.mean(member_values)),
                count=len(members),
                member_ids=tuple(members),
            )
        )
    elbow = {}
    for kk in range(1, min(elbow_max_k, distinct) + 1):
        elbow[kk] = float(fit(kk).inertia_)
    return summaries, elbow


def build_population(
    clusters: Sequence[ClusterSummary], a: float, b: float
) -> Population:
    """One weighted consumer per cluster, sharing the fitted cost curve."""
    if not clusters:
        raise ClusteringError("no clusters given")
    worst = max(clusters, key=lambda c: c.mean_capacity)
    if not (b / a > worst.mean_capacity):
        raise ClusteringError(
            f"cluster {worst.cluster_id}: mean capacity {worst.mean_capacity:.6g} "
            f"violates b/a = {b / a:.6g}"
        )
    return Population.from_consumers(
        CostParams(a=a, b=b),
        [
            ConsumerParams(
                id=f"cluster{c.cluster_id}", capacity=c.mean_capacity, weight=c.count
            )
            for c in clusters
        ],
    )


def market_from_fraction(pop: Population, pi: float, fraction: float) -> MarketParams:
    """Aggregation cap as a fraction of total weighted capacity."""
    return MarketParams(pi=pi, d_s=fraction * pop.total_capacity)


# ---------------------------------------------------------------------------
# Cluster summary files
# ---------------------------------------------------------------------------

def write_cluster_csv(path: str, clusters: Sequence[ClusterSummary]) -> None:
    frame = pd.DataFrame(
        {
            "cluster_id": [c.cluster_id for c in clusters],
            "mean_capacity": [c.mean_capacity for c in clusters],
            "count": [c.count for c in clusters],
        }
    )
    frame.to_csv(path, index=False)


def read_cluster_csv(path: str) -> list[ClusterSummary]:
    frame = pd.read_csv(path)
    needed = {"cluster_id", "mean_capacity", "count"}
    if not needed.issubset(frame.columns):
        raise DataSchemaError(f"cluster file needs columns {sorted(needed)}")
    return [
        ClusterSummary(
            cluster_id=int(row.cluster_id),
            mean_capacity=float(row.mean_capacity),
            count=int(row.count),
        )
        for row in frame.itertuples()
    ]
