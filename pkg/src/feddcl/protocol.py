"""The federated data-collaboration protocol and its baselines.

Three roles cooperate through the message bus: user institutions build
private dimensionality-reduced representations of their data and of a shared
anchor set; per-group servers fuse the anchor representations into masked
low-rank bases; the central server fuses those bases into one alignment
target. Each institution's representations are then mapped into the common
collaboration space, a model is trained by federated averaging across group
servers, and every institution receives the alignment map plus the shared
model — two cross-institutional transfers per institution in total.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bus import (
    CENTRAL_SERVER_ID,
    KIND_ALIGN_MAP,
    KIND_ANCHOR_REP,
    KIND_COLLAB_TARGET,
    KIND_DATA_REP,
    KIND_GROUP_BASIS,
    KIND_MODEL,
    KIND_TARGETS,
    CommLedger,
    MessageBus,
    group_server_id,
    user_id,
)
from .datahub import (
    AnchorSet,
    PartitionedDataset,
    Task,
    feature_ranges,
    generate_anchor,
)
from .errors import ConfigError, NumericError, ParameterError, ProtocolError
from .nnet import MlpModel, TrainConfig, evaluate, fedavg_aggregate, forward, init_model, train_local
from .numkit import lstsq_multi, pca_basis, random_orthogonal, singular_values, truncated_svd
from .rng import RngStream

PCA_MAPPING = "pca"
SHARED_RANGE_MAPPING = "shared_range"


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything a protocol run needs besides the partitioned data.

    Seeds left as ``None`` are derived from ``master_seed`` by labeled child
    streams, so a single integer pins the whole run.
    """

    m_tilde: int
    layers: tuple[int, ...]
    m_hat: int | None = None
    group_ranks: tuple[int, ...] | None = None
    r: int = 2000
    rounds: int = 20
    epochs_per_round: int = 4
    baseline_epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.01
    master_seed: int = 0
    anchor_seed: int | None = None
    mapping_seed: int | None = None
    e1_seed: int | None = None
    e2_seed: int | None = None
    donor_seed: int | None = None
    init_seed: int | None = None
    shuffle_seed: int | None = None
    mapping: str = PCA_MAPPING
    f0: np.ndarray | None = field(default=None, repr=False)
    condition_limit: float = 1e12
    mask_retries: int = 3

    @property
    def m_hat_effective(self) -> int:
        return self.m_tilde if self.m_hat is None else self.m_hat

    def group_rank(self, i: int) -> int:
        if self.group_ranks is None:
            return self.m_hat_effective
        return self.group_ranks[i]

    def _base(self, label: str, explicit: int | None) -> RngStream:
        if explicit is not None:
            return RngStream(explicit)
        return RngStream(self.master_seed).child(label)

    def anchor_stream(self) -> RngStream:
        return self._base("anchor", self.anchor_seed)

    def map_stream(self, i: int, j: int) -> RngStream:
        return self._base("map", self.mapping_seed).child(i, j)

    def mask_stream(self, scope: object) -> RngStream:
        return self._base("e1", self.e1_seed).child(scope)

    def central_mask_stream(self) -> RngStream:
        return self._base("e2", self.e2_seed)

    def donor_stream(self, scope: object) -> RngStream:
        return self._base("donor", self.donor_seed).child(scope)

    def init_seed_for(self, scope: str) -> int:
        return self._base("init", self.init_seed).child(scope).seed

    def shuffle_seed_for(self, scope: str) -> int:
        return self._base("shuffle", self.shuffle_seed).child(scope).seed

    def validate(self, parts: PartitionedDataset) -> None:
        m = parts.n_features
        min_rows = min(block.n_rows for _, _, block in parts.iter_blocks())
        if not 1 <= self.m_tilde <= min(min_rows, m):
            raise ConfigError(
                f"m_tilde={self.m_tilde} out of range [1, {min(min_rows, m)}] "
                f"for blocks of >= {min_rows} rows and {m} features"
            )
        if self.r < 1:
            raise ConfigError(f"anchor count r must be >= 1, got {self.r}")
        if self.rounds < 1 or self.epochs_per_round < 1:
            raise ConfigError("rounds and epochs_per_round must be >= 1")
        if self.baseline_epochs < 1:
            raise ConfigError("baseline_epochs must be >= 1")
        if len(self.layers) < 2:
            raise ConfigError(f"layers must name input and output, got {self.layers}")
        if self.layers[0] != self.m_hat_effective:
            raise ConfigError(
                f"layers[0]={self.layers[0]} must equal the collaboration "
                f"dimension m_hat={self.m_hat_effective}"
            )
        if self.layers[-1] != parts.n_outputs:
            raise ConfigError(
                f"layers[-1]={self.layers[-1]} must equal the target width {parts.n_outputs}"
            )
        if self.mapping not in (PCA_MAPPING, SHARED_RANGE_MAPPING):
            raise ConfigError(f"unknown mapping mode {self.mapping!r}")
        if self.mapping == SHARED_RANGE_MAPPING:
            if self.f0 is None:
                raise ConfigError("shared_range mapping needs the common basis f0")
            if self.f0.shape != (m, self.m_tilde):
                raise ConfigError(
                    f"f0 must be {m}-by-{self.m_tilde}, got {self.f0.shape}"
                )
            if self.m_hat_effective != self.m_tilde:
                raise ConfigError("shared_range mapping requires m_hat == m_tilde")
        if self.group_ranks is not None and len(self.group_ranks) != parts.d:
            raise ConfigError("group_ranks must have one entry per group")

    def echo(self) -> dict:
        """JSON-friendly view of the configuration."""
        out = dataclasses.asdict(self)
        out["f0"] = None if self.f0 is None else {"shape": list(self.f0.shape)}
        out["layers"] = list(self.layers)
        out["group_ranks"] = None if self.group_ranks is None else list(self.group_ranks)
        return out


@dataclass(frozen=True)
class UserMapping:
    """One institution's private reducer and its intermediate representations.

    ``mean`` and ``projection`` never leave the institution; only
    ``data_rep``, ``anchor_rep`` and the targets are uploaded.
    """

    group: int
    inst: int
    mean: np.ndarray
    projection: np.ndarray
    data_rep: np.ndarray
    anchor_rep: np.ndarray
    map_seed: int


@dataclass(frozen=True)
class GroupBasis:
    """Masked rank-``m_hat_i`` basis of a group's stacked anchor representations."""

    group: int
    basis: np.ndarray            # r-by-k, orthonormal columns
    sing_values: np.ndarray      # k, non-increasing
    right_vectors: np.ndarray    # (sum of widths)-by-k
    mask: np.ndarray             # k-by-k, nonsingular
    masked_basis: np.ndarray     # basis @ mask; the only thing shared upward
    mask_seed: int
    donor: int                   # institution whose right-vector block built the mask
    widths: tuple[int, ...]
    effective_rank: int


@dataclass(frozen=True)
class CentralTarget:
    """Alignment target built from the stacked masked group bases."""

    basis: np.ndarray
    sing_values: np.ndarray
    right_vectors: np.ndarray
    mask: np.ndarray
    target: np.ndarray           # basis @ mask; broadcast to group servers
    mask_seed: int
    donor: int                   # donor group index
    widths: tuple[int, ...]
    effective_rank: int


@dataclass(frozen=True)
class Alignment:
    """Per-institution map into the collaboration space."""

    group: int
    inst: int
    align_map: np.ndarray
    residual: float
    collab: np.ndarray


@dataclass(frozen=True)
class IntegratedModel:
    """Shared model composed with one institution's private mapping."""

    group: int
    inst: int
    mean: np.ndarray
    projection: np.ndarray
    align_map: np.ndarray
    model: MlpModel

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.mean.shape[0]:
            raise ParameterError(
                f"input must be n-by-{self.mean.shape[0]}, got shape {x.shape}"
            )
        return ((x - self.mean) @ self.projection) @ self.align_map

    def predict(self, x) -> np.ndarray:
        return forward(self.model, self.transform(x))


@dataclass(frozen=True)
class RoundSnapshot:
    index: int
    kind: str
    mean: float
    min: float
    max: float
    per_unit: tuple[float, ...]


def build_user_mapping(x, anchor: AnchorSet, m_tilde: int, stream: RngStream,
                       group: int, inst: int, mode: str = PCA_MAPPING,
                       f0: np.ndarray | None = None) -> UserMapping:
    """Per-institution reducer: PCA times a random rotation (default mode).

    In ``shared_range`` mode every institution uses the same basis ``f0`` times
    its own random rotation, which keeps all ranges identical — the regime in
    which alignment is exact.
    """
    x = np.asarray(x, dtype=np.float64)
    if anchor.a.shape[1] != x.shape[1]:
        raise ParameterError(
            f"anchor has {anchor.a.shape[1]} features, data block has {x.shape[1]}"
        )
    rotation = random_orthogonal(m_tilde, stream)
    if mode == PCA_MAPPING:
        if m_tilde > min(x.shape):
            raise ParameterError(
                f"m_tilde={m_tilde} exceeds min(block shape)={min(x.shape)}"
            )
        mean, w = pca_basis(x, m_tilde, center=True)
        projection = w @ rotation
    elif mode == SHARED_RANGE_MAPPING:
        if f0 is None or f0.shape != (x.shape[1], m_tilde):
            raise ParameterError("shared_range mode needs f0 of shape (m, m_tilde)")
        mean = np.zeros(x.shape[1])
        projection = f0 @ rotation
    else:
        raise ParameterError(f"unknown mapping mode {mode!r}")
    return UserMapping(
        group=group,
        inst=inst,
        mean=mean,
        projection=projection,
        data_rep=(x - mean) @ projection,
        anchor_rep=(anchor.a - mean) @ projection,
        map_seed=stream.seed,
    )


def _masked_truncation(blocks: Sequence[np.ndarray], rank: int, mask_stream: RngStream,
                       donor_stream: RngStream, role: str, condition_limit: float,
                       retries: int):
    """Shared machinery for the two fusion levels.

    Concatenates ``blocks`` left-to-right, truncates to ``rank`` (reduced to
    the numerical rank with a warning when the data cannot support it), picks
    a donor block whose width matches, and builds the square nonsingular mask
    sigma * donor_right_vectors^T * random_rotation.
    """
    widths = tuple(b.shape[1] for b in blocks)
    rows = blocks[0].shape[0]
    if any(b.shape[0] != rows for b in blocks):
        raise ParameterError(f"{role}: all blocks must share their row count")
    concat = np.hstack(blocks)
    if not 1 <= rank <= min(concat.shape):
        raise ParameterError(
            f"{role}: rank {rank} out of range [1, {min(concat.shape)}]"
        )
    fac = truncated_svd(concat, rank, role=role)
    tol = max(concat.shape) * np.finfo(np.float64).eps * fac.sigma[0]
    effective = int(np.count_nonzero(fac.sigma > tol))
    if effective < rank:
        warnings.warn(
            f"{role}: requested rank {rank} exceeds numerical rank {effective}; truncating",
            RuntimeWarning,
            stacklevel=3,
        )
        u = fac.u[:, :effective]
        sigma = fac.sigma[:effective]
        v = fac.v[:, :effective]
    else:
        effective = rank
        u, sigma, v = fac.u, fac.sigma, fac.v

    candidates = [idx for idx, w in enumerate(widths) if w == effective]
    if not candidates:
        raise ConfigError(
            f"{role}: no donor block of width {effective} among widths {widths}; "
            "the square-mask construction needs one"
        )
    donor = candidates[int(donor_stream.generator().integers(len(candidates)))]
    offset = sum(widths[:donor])
    v_donor = v[offset:offset + widths[donor], :]

    # the rotation never changes the mask's singular values, so a retry can
    # only matter through the numerical-rank warning path; kept bounded anyway
    mask = None
    for attempt in range(retries + 1):
        rotation = random_orthogonal(effective, mask_stream.child("attempt", attempt))
        candidate = (sigma[:, None] * v_donor.T) @ rotation
        sv = np.linalg.svd(candidate, compute_uv=False)
        condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        if condition <= condition_limit:
            mask = candidate
            break
    if mask is None:
        raise NumericError(
            f"{role}: mask is numerically singular (condition > {condition_limit:g}) "
            f"after {retries + 1} attempts; donor block {donor} is rank-deficient"
        )
    return u, sigma, v, mask, donor, widths, effective


def build_group_basis(anchor_reps: Sequence[np.ndarray], m_hat_i: int,
                      mask_stream: RngStream, donor_stream: RngStream, group: int,
                      condition_limit: float = 1e12, retries: int = 3) -> GroupBasis:
    """Fuse a group's anchor representations into a masked low-rank basis."""
    u, sigma, v, mask, donor, widths, effective = _masked_truncation(
        anchor_reps, m_hat_i, mask_stream, donor_stream,
        role=f"group {group} anchor concatenation",
        condition_limit=condition_limit, retries=retries,
    )
    return GroupBasis(
        group=group, basis=u, sing_values=sigma, right_vectors=v, mask=mask,
        masked_basis=u @ mask, mask_seed=mask_stream.seed, donor=donor,
        widths=widths, effective_rank=effective,
    )


def build_central_target(masked_bases: Sequence[np.ndarray], m_hat: int,
                         mask_stream: RngStream, donor_stream: RngStream,
                         condition_limit: float = 1e12, retries: int = 3) -> CentralTarget:
    """Fuse the masked group bases into the shared alignment target."""
    u, sigma, v, mask, donor, widths, effective = _masked_truncation(
        masked_bases, m_hat, mask_stream, donor_stream,
        role="central basis concatenation",
        condition_limit=condition_limit, retries=retries,
    )
    return CentralTarget(
        basis=u, sing_values=sigma, right_vectors=v, mask=mask, target=u @ mask,
        mask_seed=mask_stream.seed, donor=donor, widths=widths, effective_rank=effective,
    )


def compute_alignment(anchor_reps: Sequence[np.ndarray], data_reps: Sequence[np.ndarray],
                      target: np.ndarray, group: int) -> list[Alignment]:
    """Least-squares map of each institution's representations onto the target."""
    if len(anchor_reps) != len(data_reps):
        raise ParameterError("need one data representation per anchor representation")
    out = []
    for j, (a_rep, x_rep) in enumerate(zip(anchor_reps, data_reps)):
        if a_rep.shape[0] != target.shape[0]:
            raise ParameterError(
                f"anchor representation of institution ({group},{j}) has "
                f"{a_rep.shape[0]} rows, target has {target.shape[0]}"
            )
        sol = lstsq_multi(a_rep, target)
        out.append(Alignment(group=group, inst=j, align_map=sol.g,
                             residual=sol.residual, collab=x_rep @ sol.g))
    return out


def run_federated(client_xs: Sequence[np.ndarray], client_ys: Sequence[np.ndarray],
                  layers: Sequence[int], rounds: int, cfg: TrainConfig, head: str,
                  init_seed: int, *, bus: MessageBus | None = None,
                  client_ids: Sequence[str] | None = None,
                  on_round: Callable[[int, MlpModel], object] | None = None):
    """FedAvg loop: broadcast, train locally, aggregate by sample count.

    With a bus, every model transfer is serialized and ledgered between the
    central server and ``client_ids``. Per-round shuffles derive from
    ``cfg.shuffle_seed + round`` so a single round replays plain local
    training exactly. Returns ``(model, history)`` where ``history`` collects
    ``on_round`` results.
    """
    if rounds < 1:
        raise ParameterError(f"rounds must be >= 1, got {rounds}")
    if len(client_xs) != len(client_ys) or not client_xs:
        raise ParameterError("need matching, non-empty client data lists")
    for k, x in enumerate(client_xs):
        if x.shape[1] != layers[0]:
            raise ParameterError(
                f"client {k} has {x.shape[1]} features, layers expect {layers[0]}"
            )
    if bus is not None and (client_ids is None or len(client_ids) != len(client_xs)):
        raise ParameterError("bus transport needs one client id per client")

    weights = [x.shape[0] for x in client_xs]
    model = init_model(layers, head, init_seed)
    history: list[object] = []
    for t in range(rounds):
        updated = []
        round_cfg = dataclasses.replace(cfg, shuffle_seed=cfg.shuffle_seed + t)
        for k in range(len(client_xs)):
            if bus is not None:
                local = bus.send(CENTRAL_SERVER_ID, client_ids[k], "model-broadcast",
                                 {KIND_MODEL: model})[KIND_MODEL]
            else:
                local = model.copy()
            trained = train_local(local, client_xs[k], client_ys[k], round_cfg)
            if bus is not None:
                trained = bus.send(client_ids[k], CENTRAL_SERVER_ID, "model-update",
                                   {KIND_MODEL: trained})[KIND_MODEL]
            updated.append(trained)
        model = fedavg_aggregate(updated, weights)
        if on_round is not None:
            history.append(on_round(t, model))
    return model, history


@dataclass
class FedDclRun:
    """Everything a protocol run produces, for prediction, auditing, and tests."""

    models: dict[tuple[int, int], IntegratedModel]
    history: list[RoundSnapshot]
    ledger: CommLedger
    group_bases: dict[int, GroupBasis]
    central: CentralTarget
    alignments: dict[tuple[int, int], Alignment]
    anchor: AnchorSet
    config: ProtocolConfig
    shared_model: MlpModel

    def collab_stacked(self) -> np.ndarray:
        return np.vstack([self.alignments[key].collab for key in sorted(self.alignments)])

    def report(self) -> dict:
        return {
            "config": self.config.echo(),
            "anchor": {"r": self.anchor.r, "seed": self.anchor.seed},
            "donors": {
                "groups": {str(i): gb.donor for i, gb in sorted(self.group_bases.items())},
                "central": self.central.donor,
            },
            "effective_ranks": {
                "groups": {str(i): gb.effective_rank for i, gb in sorted(self.group_bases.items())},
                "central": self.central.effective_rank,
            },
            "alignment_residuals": {
                f"{i}:{j}": self.alignments[(i, j)].residual
                for i, j in sorted(self.alignments)
            },
            "rounds": [
                {"index": s.index, "kind": s.kind, "mean": s.mean,
                 "min": s.min, "max": s.max}
                for s in self.history
            ],
            "ledger": self.ledger.summary(),
        }


def _integrated_eval(holdout, task: Task, users: dict, alignments: dict,
                     model: MlpModel, index: int) -> RoundSnapshot:
    vals = []
    for key in sorted(users):
        um = users[key]
        rep = ((holdout.x - um.mean) @ um.projection) @ alignments[key].align_map
        vals.append(evaluate(model, rep, holdout.y, task).value)
    kind = "rmse" if task.kind == "regression" else "accuracy"
    return RoundSnapshot(index=index, kind=kind, mean=float(np.mean(vals)),
                         min=float(np.min(vals)), max=float(np.max(vals)),
                         per_unit=tuple(vals))


def _check_shared_range_rank(anchor: AnchorSet, f0: np.ndarray, m_tilde: int) -> None:
    sv = singular_values(anchor.a @ f0, role="anchor through shared basis")
    tol = max(anchor.a.shape[0], f0.shape[0]) * np.finfo(np.float64).eps * sv[0]
    if sv.size < m_tilde or sv[m_tilde - 1] <= tol:
        raise ParameterError(
            "shared basis violates the rank condition: the mapped anchor set "
            f"has numerical rank below m_tilde={m_tilde}"
        )


def run_feddcl(parts: PartitionedDataset, config: ProtocolConfig,
               record_history: bool = True) -> FedDclRun:
    """Execute the full protocol over the message bus.

    Deterministic in ``(parts, config)``: identical inputs give identical
    models, histories, and ledgers. Any stage failure raises
    :class:`ProtocolError` carrying the stage label and the ledger so far.
    """
    bus = MessageBus()
    stage = "validate-config"
    try:
        config.validate(parts)

        stage = "anchor-generation"
        ranges = feature_ranges(parts)
        anchor = generate_anchor(ranges, config.r, config.anchor_stream().seed)
        if config.mapping == SHARED_RANGE_MAPPING:
            _check_shared_range_rank(anchor, config.f0, config.m_tilde)

        stage = "intermediate-representations"
        users: dict[tuple[int, int], UserMapping] = {}
        inbox: dict[int, dict[int, dict[str, np.ndarray]]] = {i: {} for i in range(parts.d)}
        for i, j, block in parts.iter_blocks():
            um = build_user_mapping(block.x, anchor, config.m_tilde,
                                    config.map_stream(i, j), i, j,
                                    mode=config.mapping, f0=config.f0)
            users[(i, j)] = um
            inbox[i][j] = bus.send(
                user_id(i, j), group_server_id(i), "upload-intermediate",
                {KIND_DATA_REP: um.data_rep, KIND_ANCHOR_REP: um.anchor_rep,
                 KIND_TARGETS: block.y},
            )

        stage = "group-basis"
        group_bases: dict[int, GroupBasis] = {}
        central_inbox: list[np.ndarray] = []
        for i in range(parts.d):
            reps = [inbox[i][j][KIND_ANCHOR_REP] for j in sorted(inbox[i])]
            gb = build_group_basis(reps, config.group_rank(i), config.mask_stream(i),
                                   config.donor_stream(("group", i)), group=i,
                                   condition_limit=config.condition_limit,
                                   retries=config.mask_retries)
            group_bases[i] = gb
            delivered = bus.send(group_server_id(i), CENTRAL_SERVER_ID,
                                 "group-basis-share", {KIND_GROUP_BASIS: gb.masked_basis})
            central_inbox.append(delivered[KIND_GROUP_BASIS])

        stage = "central-target"
        central = build_central_target(central_inbox, config.m_hat_effective,
                                       config.central_mask_stream(),
                                       config.donor_stream("central"),
                                       condition_limit=config.condition_limit,
                                       retries=config.mask_retries)
        targets_at_group: dict[int, np.ndarray] = {}
        for i in range(parts.d):
            delivered = bus.send(CENTRAL_SERVER_ID, group_server_id(i),
                                 "target-broadcast", {KIND_COLLAB_TARGET: central.target})
            targets_at_group[i] = delivered[KIND_COLLAB_TARGET]

        stage = "alignment"
        alignments: dict[tuple[int, int], Alignment] = {}
        collab_xs: list[np.ndarray] = []
        collab_ys: list[np.ndarray] = []
        for i in range(parts.d):
            order = sorted(inbox[i])
            aligned = compute_alignment(
                [inbox[i][j][KIND_ANCHOR_REP] for j in order],
                [inbox[i][j][KIND_DATA_REP] for j in order],
                targets_at_group[i], group=i,
            )
            for al in aligned:
                alignments[(i, al.inst)] = al
            collab_xs.append(np.vstack([al.collab for al in aligned]))
            collab_ys.append(np.vstack([inbox[i][j][KIND_TARGETS] for j in order]))

        stage = "federated-training"
        on_round = None
        if record_history and parts.holdout.n_rows > 0:
            def on_round(t, model):
                return _integrated_eval(parts.holdout, parts.task, users,
                                        alignments, model, t)
        train_cfg = TrainConfig(epochs=config.epochs_per_round,
                                learning_rate=config.learning_rate,
                                batch_size=config.batch_size,
                                shuffle_seed=config.shuffle_seed_for("feddcl"))
        shared_model, history = run_federated(
            collab_xs, collab_ys, config.layers, config.rounds, train_cfg,
            parts.task.kind, config.init_seed_for("feddcl"), bus=bus,
            client_ids=[group_server_id(i) for i in range(parts.d)],
            on_round=on_round,
        )

        stage = "result-return"
        models: dict[tuple[int, int], IntegratedModel] = {}
        for i, j, _ in parts.iter_blocks():
            delivered = bus.send(group_server_id(i), user_id(i, j), "result-return",
                                 {KIND_ALIGN_MAP: alignments[(i, j)].align_map,
                                  KIND_MODEL: shared_model})
            um = users[(i, j)]
            models[(i, j)] = IntegratedModel(
                group=i, inst=j, mean=um.mean, projection=um.projection,
                align_map=delivered[KIND_ALIGN_MAP], model=delivered[KIND_MODEL],
            )
    except ProtocolError:
        raise
    except Exception as exc:
        raise ProtocolError(stage, str(exc), bus.ledger) from exc

    return FedDclRun(models=models, history=history, ledger=bus.ledger,
                     group_bases=group_bases, central=central, alignments=alignments,
                     anchor=anchor, config=config, shared_model=shared_model)


@dataclass
class DcRun:
    """Result of the single-server data-collaboration baseline."""

    models: dict[tuple[int, int], IntegratedModel]
    history: list[RoundSnapshot]
    alignments: dict[tuple[int, int], Alignment]
    anchor: AnchorSet
    target: np.ndarray
    donor: tuple[int, int]
    config: ProtocolConfig
    shared_model: MlpModel

    def collab_stacked(self) -> np.ndarray:
        return np.vstack([self.alignments[key].collab for key in sorted(self.alignments)])


def run_dc_baseline(parts: PartitionedDataset, config: ProtocolConfig,
                    record_history: bool = True) -> DcRun:
    """One central server collects every anchor representation and trains alone.

    Uses the same per-user mapping seeds as :func:`run_feddcl`, so with one
    group the two constructions span the same collaboration space.
    """
    config.validate(parts)
    ranges = feature_ranges(parts)
    anchor = generate_anchor(ranges, config.r, config.anchor_stream().seed)
    if config.mapping == SHARED_RANGE_MAPPING:
        _check_shared_range_rank(anchor, config.f0, config.m_tilde)

    keys: list[tuple[int, int]] = []
    users: dict[tuple[int, int], UserMapping] = {}
    for i, j, block in parts.iter_blocks():
        users[(i, j)] = build_user_mapping(block.x, anchor, config.m_tilde,
                                           config.map_stream(i, j), i, j,
                                           mode=config.mapping, f0=config.f0)
        keys.append((i, j))

    m_hat = config.m_hat_effective
    u, sigma, v, mask, donor_idx, widths, effective = _masked_truncation(
        [users[k].anchor_rep for k in keys], m_hat,
        config.mask_stream("dc"), config.donor_stream("dc"),
        role="dc anchor concatenation",
        condition_limit=config.condition_limit, retries=config.mask_retries,
    )
    target = u @ mask

    alignments: dict[tuple[int, int], Alignment] = {}
    for i, j in keys:
        sol = lstsq_multi(users[(i, j)].anchor_rep, target)
        alignments[(i, j)] = Alignment(group=i, inst=j, align_map=sol.g,
                                       residual=sol.residual,
                                       collab=users[(i, j)].data_rep @ sol.g)

    collab_all = np.vstack([alignments[k].collab for k in keys])
    y_all = np.vstack([parts.groups[i][j].y for i, j in keys])

    history: list[RoundSnapshot] = []
    on_epoch = None
    if record_history and parts.holdout.n_rows > 0:
        def on_epoch(epoch, model):
            history.append(_integrated_eval(parts.holdout, parts.task, users,
                                            alignments, model, epoch))
    train_cfg = TrainConfig(epochs=config.baseline_epochs,
                            learning_rate=config.learning_rate,
                            batch_size=config.batch_size,
                            shuffle_seed=config.shuffle_seed_for("dc"))
    shared_model = train_local(
        init_model(config.layers, parts.task.kind, config.init_seed_for("dc")),
        collab_all, y_all, train_cfg, on_epoch=on_epoch,
    )

    models = {
        (i, j): IntegratedModel(group=i, inst=j, mean=users[(i, j)].mean,
                                projection=users[(i, j)].projection,
                                align_map=alignments[(i, j)].align_map,
                                model=shared_model)
        for i, j in keys
    }
    return DcRun(models=models, history=history, alignments=alignments, anchor=anchor,
                 target=target, donor=keys[donor_idx], config=config,
                 shared_model=shared_model)


@dataclass(frozen=True)
class Theorem1Report:
    """Exactness report for the common-range linear-mapping regime."""

    max_residual: float
    fit_error: float
    max_angle: float
    angles: np.ndarray
    recovered: np.ndarray
    residuals: dict[tuple[int, int], float]
    group_donors: dict[int, int]
    central_donor: int


def verify_theorem1(parts: PartitionedDataset, f0, config: ProtocolConfig) -> Theorem1Report:
    """Check that common-range linear mappings make alignment exact.

    Every institution is forced to the linear map ``f0 @ rotation``; the report
    carries the worst alignment residual, the single recovered reduction that
    reproduces all collaboration blocks from the raw data, its relative fit
    error, and the principal angles between its range and ``f0``'s.
    """
    from .numkit import principal_angles  # local import keeps module load light

    f0 = np.asarray(f0, dtype=np.float64)
    config = dataclasses.replace(config, mapping=SHARED_RANGE_MAPPING, f0=f0)
    config.validate(parts)

    ranges = feature_ranges(parts)
    anchor = generate_anchor(ranges, config.r, config.anchor_stream().seed)
    _check_shared_range_rank(anchor, f0, config.m_tilde)

    users: dict[tuple[int, int], UserMapping] = {}
    for i, j, block in parts.iter_blocks():
        users[(i, j)] = build_user_mapping(block.x, anchor, config.m_tilde,
                                           config.map_stream(i, j), i, j,
                                           mode=SHARED_RANGE_MAPPING, f0=f0)

    group_bases: dict[int, GroupBasis] = {}
    for i in range(parts.d):
        reps = [users[(i, j)].anchor_rep for j in range(len(parts.groups[i]))]
        group_bases[i] = build_group_basis(reps, config.group_rank(i),
                                           config.mask_stream(i),
                                           config.donor_stream(("group", i)), group=i,
                                           condition_limit=config.condition_limit,
                                           retries=config.mask_retries)
    central = build_central_target([group_bases[i].masked_basis for i in range(parts.d)],
                                   config.m_hat_effective, config.central_mask_stream(),
                                   config.donor_stream("central"),
                                   condition_limit=config.condition_limit,
                                   retries=config.mask_retries)

    residuals: dict[tuple[int, int], float] = {}
    collab_blocks = []
    raw_blocks = []
    for i, j, block in parts.iter_blocks():
        sol = lstsq_multi(users[(i, j)].anchor_rep, central.target)
        residuals[(i, j)] = sol.residual
        collab_blocks.append(users[(i, j)].data_rep @ sol.g)
        raw_blocks.append(block.x)

    x_stack = np.vstack(raw_blocks)
    collab_stack = np.vstack(collab_blocks)
    fit = lstsq_multi(x_stack, collab_stack)
    denom = np.linalg.norm(collab_stack)
    fit_error = fit.residual / denom if denom > 0 else fit.residual
    angles = principal_angles(fit.g, f0)
    return Theorem1Report(
        max_residual=max(residuals.values()),
        fit_error=float(fit_error),
        max_angle=float(angles.max()),
        angles=angles,
        recovered=fit.g,
        residuals=residuals,
        group_donors={i: gb.donor for i, gb in group_bases.items()},
        central_donor=central.donor,
    )
