"""In-process message bus with a communication ledger.

Every transfer between protocol roles goes through :class:`MessageBus.send`,
which byte-serializes each payload part (so ledger byte counts are
meaningful) and delivers decoded copies to the receiver — no object is ever
shared between roles. The ledger records one row per message and classifies
each edge as cross-institutional (a user on either end) or server-tier
(group server <-> central server).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParameterError
from .nnet import MlpModel, model_from_bytes, model_to_bytes

CENTRAL_SERVER_ID = "fl"

CROSS_INSTITUTIONAL = "cross-institutional"
SERVER_TIER = "server-tier"

# payload vocabulary used by the protocol; the privacy tests assert that a
# user only ever ships the first three and that the forbidden kinds below
# never appear anywhere in a ledger
KIND_DATA_REP = "data-rep"
KIND_ANCHOR_REP = "anchor-rep"
KIND_TARGETS = "targets"
KIND_GROUP_BASIS = "group-basis"
KIND_COLLAB_TARGET = "collab-target"
KIND_MODEL = "model"
KIND_ALIGN_MAP = "align-map"

USER_UPLOAD_KINDS = frozenset({KIND_DATA_REP, KIND_ANCHOR_REP, KIND_TARGETS})
FORBIDDEN_KINDS = frozenset({"raw-data", "mapping-function", "mean"})


def user_id(group: int, inst: int) -> str:
    return f"user:{group}:{inst}"


def group_server_id(group: int) -> str:
    return f"dc:{group}"


def is_user(role: str) -> bool:
    return role.startswith("user:")


def is_server(role: str) -> bool:
    return role.startswith("dc:") or role == CENTRAL_SERVER_ID


def edge_class(sender: str, receiver: str) -> str:
    """Total classification of a bus edge."""
    su, ru = is_user(sender), is_user(receiver)
    if su and ru:
        raise ParameterError(f"users never talk to each other: {sender} -> {receiver}")
    if su or ru:
        return CROSS_INSTITUTIONAL
    if is_server(sender) and is_server(receiver):
        return SERVER_TIER
    raise ParameterError(f"unknown roles on edge {sender} -> {receiver}")


@dataclass(frozen=True)
class LedgerRecord:
    index: int
    step: str
    sender: str
    receiver: str
    kinds: tuple[str, ...]
    n_bytes: int

    @property
    def edge(self) -> str:
        return edge_class(self.sender, self.receiver)


class CommLedger:
    """Ordered record of every message that crossed the bus."""

    def __init__(self):
        self.records: list[LedgerRecord] = []

    def append(self, step: str, sender: str, receiver: str,
               kinds: tuple[str, ...], n_bytes: int) -> LedgerRecord:
        rec = LedgerRecord(len(self.records), step, sender, receiver, kinds, n_bytes)
        self.records.append(rec)
        return rec

    def cross_institutional_counts(self) -> dict[str, int]:
        """user id -> number of cross-institutional messages touching it."""
        counts: dict[str, int] = {}
        for rec in self.records:
            if rec.edge != CROSS_INSTITUTIONAL:
                continue
            peer = rec.sender if is_user(rec.sender) else rec.receiver
            counts[peer] = counts.get(peer, 0) + 1
        return counts

    def kinds_sent_by_users(self) -> set[str]:
        out: set[str] = set()
        for rec in self.records:
            if is_user(rec.sender):
                out.update(rec.kinds)
        return out

    def all_kinds(self) -> set[str]:
        out: set[str] = set()
        for rec in self.records:
            out.update(rec.kinds)
        return out

    def summary(self) -> dict:
        """Message and byte totals per edge class."""
        out = {
            CROSS_INSTITUTIONAL: {"messages": 0, "bytes": 0},
            SERVER_TIER: {"messages": 0, "bytes": 0},
        }
        for rec in self.records:
            bucket = out[rec.edge]
            bucket["messages"] += 1
            bucket["bytes"] += rec.n_bytes
        return out

    def to_csv(self, path) -> None:
        """One row per message: step, sender, receiver, kind, bytes."""
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "sender", "receiver", "kind", "bytes"])
            for rec in self.records:
                writer.writerow(
                    [rec.step, rec.sender, rec.receiver, "+".join(rec.kinds), rec.n_bytes]
                )


def encode_payload(obj) -> bytes:
    if isinstance(obj, MlpModel):
        return b"M" + model_to_bytes(obj)
    if isinstance(obj, np.ndarray):
        buf = io.BytesIO()
        np.save(buf, obj)
        return b"A" + buf.getvalue()
    raise ParameterError(f"cannot serialize payload of type {type(obj).__name__}")


def decode_payload(data: bytes):
    tag, body = data[:1], data[1:]
    if tag == b"M":
        return model_from_bytes(body)
    if tag == b"A":
        return np.load(io.BytesIO(body), allow_pickle=False)
    raise ParameterError(f"unknown payload tag {tag!r}")


class MessageBus:
    """Simulated transport: serialize, ledger, deliver decoded copies."""

    def __init__(self):
        self.ledger = CommLedger()

    def send(self, sender: str, receiver: str, step: str,
             parts: Mapping[str, object]) -> dict[str, object]:
        if not parts:
            raise ParameterError("a message needs at least one payload part")
        edge_class(sender, receiver)  # validate roles up front
        kinds = tuple(sorted(parts))
        encoded = {kind: encode_payload(parts[kind]) for kind in kinds}
        n_bytes = sum(len(b) for b in encoded.values())
        self.ledger.append(step, sender, receiver, kinds, n_bytes)
        return {kind: decode_payload(b) for kind, b in encoded.items()}
