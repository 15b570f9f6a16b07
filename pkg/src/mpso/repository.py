"""Shared ciphertext repository with per-vector write locks and an audit log.

The repository is the only place parties exchange protocol state.  It is a
trusted store in the narrow sense that it applies ciphertext-space updates
(overwrite, modular multiply, permute) and appends every action to a log;
it never holds key material and cannot read anything it stores.

Access control is by actor: party indices 1..n may read and write, the
decider (and any unknown actor) is rejected on every call.  Writes happen
inside a session holding the vector's lock; a session that raises leaves
the vector untouched.  Log entries keep the operand ciphertexts, so a
replay of the log reproduces the stored values bit for bit; the hardening
checks lean on that.

Timestamps are a monotone per-repository counter rather than wall-clock
time, so that a seeded run produces an identical log on every replay.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .he import Ciphertext, PublicKey

DECIDER = "decider"

ACTIONS = ("init", "replace_cell", "multiply_cell", "permute", "read", "finalize")


class AccessDeniedError(PermissionError):
    """Actor is not one of the registered parties."""


class LockContentionError(TimeoutError):
    """A vector write lock could not be acquired in time."""


class PoolExhaustedError(RuntimeError):
    """A precomputed ciphertext pool ran out."""


@dataclass(frozen=True)
class LogEntry:
    seq: int
    actor: int | str
    label: str
    action: str
    index: int | None
    version: int
    timestamp: int
    operand: tuple | None = None    # ciphertext values / permutation involved

    def as_line(self) -> str:
        idx = "-" if self.index is None else str(self.index)
        return f"{self.seq}|{self.actor}|{self.label}|{self.action}|{idx}|{self.version}|{self.timestamp}"


@dataclass
class _Vector:
    label: str
    cells: list[Ciphertext]
    version: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


class WriteSession:
    """Mutation handle passed to the callable under ``with_write_lock``.

    Cell edits are staged on a copy; nothing is visible (or logged) until
    the session callable returns without raising.
    """

    def __init__(self, repo: "SharedRepository", vector: _Vector, actor: int):
        self._repo = repo
        self._vector = vector
        self._actor = actor
        self.cells = list(vector.cells)
        self._staged: list[tuple[str, int | None, tuple]] = []

    def replace_cell(self, index: int, ct: Ciphertext) -> None:
        self._check_index(index)
        self.cells[index] = ct
        self._staged.append(("replace_cell", index, (ct.value,)))

    def multiply_cell(self, index: int, ct: Ciphertext) -> None:
        self._check_index(index)
        old = self.cells[index]
        if old.key_id != ct.key_id:
            raise ValueError("operand ciphertext under a different key")
        n_sq = self._repo._public_key.n_sq
        self.cells[index] = Ciphertext(old.value * ct.value % n_sq, old.key_id)
        self._repo._count_multiplication()
        self._staged.append(("multiply_cell", index, (ct.value,)))

    def permute(self, order: Iterable[int]) -> None:
        order = tuple(order)
        if sorted(order) != list(range(len(self.cells))):
            raise ValueError("not a permutation of the cell indices")
        self.cells = [self.cells[i] for i in order]
        self._staged.append(("permute", None, order))

    def _check_index(self, index: int) -> None:
        if not 0 <= index < len(self.cells):
            raise IndexError(f"cell index {index} out of range")


class SharedRepository:
    def __init__(self, parties: Iterable[int], cell_count: int,
                 public_key: PublicKey, lock_timeout: float = 5.0,
                 on_multiply: Callable[[], None] | None = None):
        self._parties = frozenset(parties)
        if DECIDER in self._parties:
            raise ValueError("the decider cannot be registered as a party")
        self.cell_count = cell_count
        self._public_key = public_key
        self._lock_timeout = lock_timeout
        self._vectors: dict[str, _Vector] = {}
        self._log: list[LogEntry] = []
        self._log_lock = threading.Lock()
        self._clock = 0
        self._on_multiply = on_multiply
        self._held: dict[int, str] = {}     # actor -> label currently locked

    # -- access control ------------------------------------------------------

    def _check_actor(self, actor) -> None:
        if actor not in self._parties:
            raise AccessDeniedError(f"actor {actor!r} has no repository access")

    # -- logging ---------------------------------------------------------------

    def _append(self, actor, label, action, index, version, operand=None) -> None:
        with self._log_lock:
            self._clock += 1
            self._log.append(LogEntry(
                seq=len(self._log), actor=actor, label=label, action=action,
                index=index, version=version, timestamp=self._clock,
                operand=operand))

    # -- vector lifecycle ------------------------------------------------------

    def create_vector(self, label: str, cells: list[Ciphertext], actor) -> None:
        self._check_actor(actor)
        if label in self._vectors:
            raise ValueError(f"vector {label!r} already exists")
        if len(cells) != self.cell_count:
            raise ValueError(
                f"vector {label!r} must have {self.cell_count} cells, got {len(cells)}")
        for ct in cells:
            if ct.key_id != self._public_key.key_id:
                raise ValueError("cell ciphertext under a different key")
        self._vectors[label] = _Vector(label, list(cells))
        self._append(actor, label, "init", None, 0,
                     operand=tuple(ct.value for ct in cells))

    def _vector(self, label: str) -> _Vector:
        try:
            return self._vectors[label]
        except KeyError:
            raise KeyError(f"no vector {label!r}") from None

    def with_write_lock(self, label: str, actor,
                        mutation: Callable[[WriteSession], None]) -> int:
        """Run ``mutation`` on a session holding the vector's write lock.

        Returns the new version.  On any exception from the mutation the
        vector and the log are left exactly as before.
        """
        self._check_actor(actor)
        if actor in self._held:
            raise LockContentionError(
                f"party {actor} already holds the lock on {self._held[actor]!r}")
        vector = self._vector(label)
        if not vector.lock.acquire(timeout=self._lock_timeout):
            raise LockContentionError(f"timed out waiting for lock on {label!r}")
        self._held[actor] = label
        try:
            session = WriteSession(self, vector, actor)
            mutation(session)
            vector.version += 1
            vector.cells = session.cells
            for action, index, operand in session._staged:
                self._append(actor, label, action, index, vector.version, operand)
            return vector.version
        finally:
            del self._held[actor]
            vector.lock.release()

    def read(self, label: str, actor) -> list[Ciphertext]:
        self._check_actor(actor)
        vector = self._vector(label)
        self._append(actor, label, "read", None, vector.version)
        return list(vector.cells)

    def finalize(self, label: str, actor) -> list[Ciphertext]:
        """Read for hand-off to the decider; logged as its own action."""
        self._check_actor(actor)
        vector = self._vector(label)
        self._append(actor, label, "finalize", None, vector.version)
        return list(vector.cells)

    def version(self, label: str) -> int:
        return self._vector(label).version

    def labels(self) -> list[str]:
        return sorted(self._vectors)

    # -- audit -----------------------------------------------------------------

    def audit(self, actor, label: str | None = None) -> list[LogEntry]:
        self._check_actor(actor)
        if label is None:
            return list(self._log)
        return [e for e in self._log if e.label == label]

    def export_log(self, actor) -> list[str]:
        self._check_actor(actor)
        return [e.as_line() for e in self._log]

    def replay(self, label: str, actor) -> list[Ciphertext]:
        """Rebuild a vector purely from its log entries.

        The result must match the stored cells bit for bit; anything else
        means the log and the store have diverged.
        """
        self._check_actor(actor)
        key_id = self._public_key.key_id
        n_sq = self._public_key.n_sq
        cells: list[Ciphertext] | None = None
        for entry in self._log:
            if entry.label != label:
                continue
            if entry.action == "init":
                cells = [Ciphertext(v, key_id) for v in entry.operand]
            elif entry.action == "replace_cell":
                cells[entry.index] = Ciphertext(entry.operand[0], key_id)
            elif entry.action == "multiply_cell":
                old = cells[entry.index]
                cells[entry.index] = Ciphertext(
                    old.value * entry.operand[0] % n_sq, key_id)
            elif entry.action == "permute":
                cells = [cells[i] for i in entry.operand]
        if cells is None:
            raise KeyError(f"no init entry for {label!r}")
        return cells

    def _count_multiplication(self) -> None:
        if self._on_multiply is not None:
            self._on_multiply()

    # -- pools -------------------------------------------------------------------


class CiphertextPool:
    """Single-use stock of precomputed ciphertexts for one party and vector."""

    def __init__(self, party: int, label: str, kind: str,
                 ciphertexts: list[Ciphertext]):
        self.party = party
        self.label = label
        self.kind = kind
        self._items = list(ciphertexts)
        self.initial_size = len(self._items)

    def take(self) -> Ciphertext:
        if not self._items:
            raise PoolExhaustedError(
                f"party {self.party} ran out of {self.kind} ciphertexts for {self.label!r}")
        return self._items.pop()

    def remaining(self) -> int:
        return len(self._items)
