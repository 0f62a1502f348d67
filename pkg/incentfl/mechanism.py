"""
Server-side logic: ranking uploaded models by validation accuracy, FedAvg
aggregation, the incentivized nested aggregation, and the round loop.

In the incentive mechanism every client receives the mean of the uploaded
models ranked at or below its own position. Position 1 is the worst
model, so the best contributor receives the mean of all models, and there
is no single global model.
"""

from __future__ import annotations

import io
import csv
import math
import logging
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from ._coreutils import str_to_enum_value
from ._diagnostics import diagnostics
from .enums import MechanismMode, RankingMetric, Weighting
from .learner import TrainConfig, evaluate, init_model, local_train
from .synthdata import Dataset


__all__ = [
    "ClientRecord",
    "RankAssignment",
    "RoundEntry",
    "RoundLog",
    "MechanismConfig",
    "FederationState",
    "TrainingResult",
    "make_clients",
    "rank_by_accuracy",
    "aggregate_weighted",
    "aggregate_unweighted",
    "incentive_aggregate",
    "run_round",
    "run_training",
    "check_nestedness",
    "performance_tradeoff",
    "contribution_accuracy_correlation",
    "ROUNDS_CSV_HEADER",
    "rounds_to_csv",
]

logger = logging.getLogger("incentfl")

ROUNDS_CSV_HEADER = ["t", "client_id", "d_i", "acc_uploaded", "position", "D_others", "acc_distributed"]


@dataclass
class ClientRecord:
    """A client: its id, the data it contributes (``d_i`` points) and its cap ``d^t_i``."""

    id: int
    dataset: Dataset
    contributed_size: int
    cap: int

    def __post_init__(self):
        if self.cap < 1:
            raise ValueError(f"Client {self.id}: cap must be positive.")
        if not 0 <= self.contributed_size <= self.cap:
            raise ValueError(f"Client {self.id}: contribution must be within [0, cap].")
        if len(self.dataset) != self.contributed_size:
            raise ValueError(f"Client {self.id}: dataset size differs from its contribution.")


def make_clients(local_datasets, contributions=None):
    """Create ClientRecords from local datasets. Each client contributes a
    prefix of its local data; by default all of it. The cap is the local size.
    """
    records = []
    for k, local in enumerate(local_datasets):
        d = len(local) if contributions is None else int(contributions[k])
        records.append(ClientRecord(k, local.take(d), d, max(1, len(local))))
    return records


@dataclass
class RankAssignment:
    """The rank position (1..n) of each client, with the validation
    accuracies and the scores the ranking is based on. The scores equal the
    accuracies unless the server ranks by another metric.
    """

    position: Dict[int, int]
    accuracies: Dict[int, float]
    scores: Optional[Dict[int, float]] = None

    def __post_init__(self):
        if self.scores is None:
            self.scores = dict(self.accuracies)
        if sorted(self.position.values()) != list(range(1, len(self.position) + 1)):
            raise ValueError("Rank positions must form a permutation of 1..n.")

    @property
    def order(self):
        """Client ids from position 1 (worst) to position n (best)."""
        return sorted(self.position, key=self.position.__getitem__)

    def aggregation_set(self, client_id):
        """The ids of the clients whose models are averaged for the given client."""
        return self.order[: self.position[client_id]]


def rank_by_accuracy(accuracies, scores=None):
    """Rank clients by ascending accuracy: position 1 is the lowest accuracy.

    Equal accuracies are ordered by ascending client id. When ``scores`` is
    given (e.g. negated validation losses) the clients are ranked by those
    instead, and the accuracies are only recorded.
    """
    if not accuracies:
        raise ValueError("Cannot rank an empty set of clients.")
    if scores is None:
        scores = accuracies
    elif set(scores) != set(accuracies):
        raise ValueError("Scores and accuracies must cover the same client ids.")
    for k, score in scores.items():
        if not math.isfinite(score):
            raise ValueError(f"Client {k} has a non-finite score: {score}")
    order = sorted(scores, key=lambda k: (scores[k], k))
    position = {k: i + 1 for i, k in enumerate(order)}
    return RankAssignment(
        position,
        {k: float(accuracies[k]) for k in order},
        {k: float(scores[k]) for k in order},
    )


def _stack(models):
    stack = np.array([np.asarray(m, dtype=np.float64) for m in models])
    if stack.ndim != 2:
        raise ValueError("Models must be 1D and of equal length.")
    return stack


def _exact_sum(stack):
    # Correctly rounded per component, so the result does not depend on the
    # order of the models.
    return np.array([math.fsum(column) for column in stack.T])


def aggregate_weighted(models, sizes):
    """Average the models weighted by their data sizes (FedAvg)."""
    stack = _stack(models)
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.shape != (len(stack),):
        raise ValueError("Need exactly one size per model.")
    if np.any(sizes < 0):
        raise ValueError("Sizes must be non-negative.")
    total = math.fsum(sizes)
    if total <= 0:
        raise ValueError("Cannot aggregate with weights when all sizes are zero.")
    return _exact_sum(stack * (sizes / total)[:, None])


def aggregate_unweighted(models):
    """The component-wise mean of the models."""
    if len(models) == 0:
        raise ValueError("Cannot aggregate an empty list of models.")
    stack = _stack(models)
    return _exact_sum(stack) / len(stack)


def incentive_aggregate(models, rank):
    """Give each client the mean of the models ranked at positions ``1..r(k)``.

    Arguments:
        models (dict): client id -> uploaded model.
        rank (RankAssignment): the ranking of the same clients.

    Returns a dict client id -> distributed model.
    """
    if set(models) != set(rank.position):
        raise ValueError("Models and rank must cover the same client ids.")
    order = rank.order
    return {
        k: aggregate_unweighted([models[j] for j in order[: rank.position[k]]])
        for k in sorted(models)
    }


@dataclass(frozen=True)
class MechanismConfig:
    """Server settings.

    Attributes:
        mode: vanilla (one global model) or incentive (per-client models).
        participation: fraction q of clients sampled each round, in (0, 1].
        weighting: vanilla aggregation weights; unweighted by default since
            the server does not trust reported data sizes.
        ranking: rank uploads by validation accuracy (default) or loss.
        threads: number of threads for client updates.
    """

    mode: str = MechanismMode.incentive
    participation: float = 1.0
    weighting: str = Weighting.unweighted
    ranking: str = RankingMetric.accuracy
    threads: int = 1

    def __post_init__(self):
        # Accept strings in any case, store the canonical enum values
        object.__setattr__(self, "mode", str_to_enum_value(MechanismMode, self.mode))
        object.__setattr__(self, "weighting", str_to_enum_value(Weighting, self.weighting))
        object.__setattr__(self, "ranking", str_to_enum_value(RankingMetric, self.ranking))
        if not 0 < self.participation <= 1:
            raise ValueError("Participation fraction must be in (0, 1].")
        if self.threads < 1:
            raise ValueError("Thread count must be at least 1.")

    def num_participants(self, n_clients):
        m = int(round(self.participation * n_clients))
        if m < 1:
            raise ValueError(f"Participation {self.participation} selects no client out of {n_clients}.")
        return m


@dataclass
class RoundEntry:
    """What happened to one client in one round.

    Non-participating clients have ``acc_uploaded`` None and position 0.
    """

    client_id: int
    d_i: int
    acc_uploaded: Optional[float]
    position: int
    d_others: int
    acc_distributed: float
    score: Optional[float] = None


@dataclass
class RoundLog:
    """Telemetry of one round, one entry per client in client-id order."""

    t: int
    mode: str
    entries: List[RoundEntry] = field(default_factory=list)

    def _column(self, name):
        return {e.client_id: getattr(e, name) for e in self.entries}

    @property
    def accuracies(self):
        return self._column("acc_uploaded")

    @property
    def positions(self):
        return self._column("position")

    @property
    def d_others(self):
        return self._column("d_others")

    @property
    def distributed_accuracies(self):
        return self._column("acc_distributed")

    def participants(self):
        """The entries of participating clients, ordered by rank position."""
        return sorted((e for e in self.entries if e.position > 0), key=lambda e: e.position)


@dataclass
class FederationState:
    """The clients, the server's validation set, and the models the clients hold."""

    clients: List[ClientRecord]
    validation: Dataset
    models: Dict[int, np.ndarray]
    t: int = 0


@dataclass
class TrainingResult:
    logs: List[RoundLog]
    models: Dict[int, np.ndarray]


def _select_participants(state, train_cfg, mechanism_cfg):
    ids = [c.id for c in state.clients]
    m = mechanism_cfg.num_participants(len(ids))
    if m == len(ids):
        return ids
    rng = np.random.default_rng([int(train_cfg.seed), state.t, 1])
    return sorted(int(k) for k in rng.choice(ids, size=m, replace=False))


def _client_update(client, model, train_cfg, t):
    # A client without data runs no batches, and uploads what it received
    if len(client.dataset) == 0:
        return np.array(model, dtype=np.float64)
    return local_train(model, client.dataset, train_cfg, stream=(client.id, t))


def run_round(state, train_cfg, mechanism_cfg):
    """Run one round: local training, validation scoring, ranking, aggregation.

    Returns ``(new_models, round_log)``; ``new_models`` maps client id to the
    model the server distributes to it. The state is not modified.
    """
    if len(state.validation) == 0:
        raise ValueError("The server needs a non-empty validation set.")
    timer = diagnostics.timings.timer
    clients = {c.id: c for c in state.clients}
    participants = _select_participants(state, train_cfg, mechanism_cfg)

    # ClientUpdate, possibly in parallel; results are collected in id order
    with timer.phase("client_update"):
        jobs = [(clients[k], state.models[k], train_cfg, state.t) for k in participants]
        if mechanism_cfg.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=mechanism_cfg.threads) as pool:
                uploads = list(pool.map(lambda job: _client_update(*job), jobs))
        else:
            uploads = [_client_update(*job) for job in jobs]
    uploads = dict(zip(participants, uploads))

    with timer.phase("server_update"):
        evaluations = {k: evaluate(uploads[k], state.validation) for k in participants}
        accuracies = {k: evaluations[k][0] for k in participants}
        if mechanism_cfg.ranking == RankingMetric.loss:
            rank = rank_by_accuracy(accuracies, {k: -evaluations[k][1] for k in participants})
        else:
            rank = rank_by_accuracy(accuracies)
        scores = rank.scores
        sizes = {k: clients[k].contributed_size for k in participants}

        new_models = {k: np.array(m) for k, m in state.models.items()}
        d_others = {}
        if mechanism_cfg.mode == MechanismMode.incentive:
            new_models.update(incentive_aggregate(uploads, rank))
            for k in participants:
                lower = rank.order[: rank.position[k] - 1]
                d_others[k] = sum(sizes[j] for j in lower)
        else:
            models = [uploads[k] for k in participants]
            if mechanism_cfg.weighting == Weighting.weighted:
                global_model = aggregate_weighted(models, [sizes[k] for k in participants])
            else:
                global_model = aggregate_unweighted(models)
            new_models = {k: global_model.copy() for k in state.models}
            total = sum(sizes.values())
            d_others = {k: total - sizes[k] for k in participants}

        # Score what every client receives; one evaluation suffices for a global model
        distributed_acc = {}
        if mechanism_cfg.mode == MechanismMode.vanilla:
            acc, _ = evaluate(global_model, state.validation)
            distributed_acc = dict.fromkeys(new_models, acc)
        else:
            for k in sorted(new_models):
                distributed_acc[k] = evaluate(new_models[k], state.validation)[0]

    log = RoundLog(state.t, mechanism_cfg.mode)
    for k in sorted(clients):
        participating = k in uploads
        log.entries.append(
            RoundEntry(
                client_id=k,
                d_i=clients[k].contributed_size,
                acc_uploaded=evaluations[k][0] if participating else None,
                position=rank.position[k] if participating else 0,
                d_others=d_others.get(k, 0),
                acc_distributed=distributed_acc[k],
                score=scores.get(k),
            )
        )
    return new_models, log


def run_training(clients, validation, rounds, train_cfg=None, mechanism_cfg=None):
    """Run ``rounds`` rounds from a common initial model.

    Returns a TrainingResult with one RoundLog per round and the final
    per-client models.
    """
    train_cfg = train_cfg or TrainConfig()
    mechanism_cfg = mechanism_cfg or MechanismConfig()
    if rounds < 1:
        raise ValueError("Need at least one round.")
    if not clients:
        raise ValueError("Need at least one client.")
    w0 = init_model(validation.feature_dim, validation.num_classes, train_cfg.seed)
    state = FederationState(list(clients), validation, {c.id: w0.copy() for c in clients})

    logs = []
    for t in range(1, rounds + 1):
        state.t = t
        state.models, log = run_round(state, train_cfg, mechanism_cfg)
        logs.append(log)
        best = max(log.distributed_accuracies.values())
        logger.info(f"Round {t}/{rounds} ({mechanism_cfg.mode}): best distributed accuracy {best:.4f}")
    return TrainingResult(logs, state.models)


def check_nestedness(log):
    """Check one round against the nested-aggregation property.

    A client with a higher score is aggregated with a superset of the models
    of a lower-scored client, so its D_others is at least as large. Returns
    a list of violation messages (empty when all is well).
    """
    violations = []
    ranked = log.participants()
    positions = [e.position for e in ranked]
    if positions != list(range(1, len(ranked) + 1)):
        violations.append(f"round {log.t}: positions {positions} are not a permutation of 1..n")
    if log.mode != MechanismMode.incentive:
        return violations

    below = 0
    for i, e in enumerate(ranked):
        if e.d_others != below:
            violations.append(
                f"round {log.t}: client {e.client_id} at position {e.position} has "
                f"D_others {e.d_others}, expected {below} from the clients ranked below"
            )
        if i > 0:
            prev = ranked[i - 1]
            if (prev.score, prev.client_id) > (e.score, e.client_id):
                violations.append(
                    f"round {log.t}: client {prev.client_id} ranked below client "
                    f"{e.client_id} despite a higher score"
                )
            if prev.d_others > e.d_others:
                violations.append(f"round {log.t}: D_others decreases at position {e.position}")
        below += e.d_i
    return violations


def performance_tradeoff(incentive_log, vanilla_log):
    """Compare the final distributed accuracy per client under both mechanisms.

    Only the top contributor can match the vanilla global model; the others
    trade model quality for the incentive to contribute.
    """
    vanilla_acc = vanilla_log.distributed_accuracies
    result = {}
    for e in incentive_log.entries:
        result[e.client_id] = {
            "d_i": e.d_i,
            "position": e.position,
            "acc_incentive": e.acc_distributed,
            "acc_vanilla": vanilla_acc[e.client_id],
            "gap": vanilla_acc[e.client_id] - e.acc_distributed,
        }
    return result


def contribution_accuracy_correlation(log):
    """Spearman correlation between d_i and the distributed accuracy in a round."""
    sizes = [e.d_i for e in log.entries]
    accs = [e.acc_distributed for e in log.entries]
    if len(set(sizes)) < 2 or len(set(accs)) < 2:
        return float("nan")
    return float(stats.spearmanr(sizes, accs)[0])


def _format_float(value):
    # repr gives the shortest string that round-trips, independent of locale
    return "" if value is None else repr(float(value))


def rounds_to_csv(logs):
    """Serialize round logs to CSV text, one row per (round, client)."""
    f = io.StringIO()
    writer = csv.writer(f, lineterminator="\n")
    writer.writerow(ROUNDS_CSV_HEADER)
    for log in logs:
        for e in log.entries:
            writer.writerow(
                [
                    log.t,
                    e.client_id,
                    e.d_i,
                    _format_float(e.acc_uploaded),
                    e.position,
                    e.d_others,
                    _format_float(e.acc_distributed),
                ]
            )
    return f.getvalue()
