"""Finite-size teacher-student instances with random features.

A teacher with D binary weights labels P Gaussian patterns; the student
sees each pattern through a fixed D x N Gaussian feature matrix and the
sign activation, ending up with binary projected patterns in {-1, +1}^N.
Everything is derived from a seed via fixed Philox streams, so instances
are bit-reproducible and serializable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .rng import (
    STREAM_FEATURES,
    STREAM_PATTERNS,
    STREAM_TEACHER,
    STREAM_TEST_PATTERNS,
    stream,
)
from .special import NonlinearityMoments, SIGN_MOMENTS

_MAGIC = b"RFTS"
_VERSION = 1


def sign_pm(x) -> np.ndarray:
    """sign with the tie rule sign(0) := +1, returned as int8."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


@dataclass
class TeacherStudentInstance:
    """Immutable-by-convention problem instance.

    labels[mu] = sign((1/sqrt(D)) patterns[mu] . teacher), and the student
    works on projected patterns sign((1/sqrt(D)) patterns @ features).
    """

    D: int
    N: int
    P: int
    teacher: np.ndarray          # (D,) int8
    features: np.ndarray         # (D, N) float64
    patterns: np.ndarray         # (P, D) float64
    labels: np.ndarray           # (P,) int8
    seed: int
    _projected: np.ndarray = field(default=None, repr=False)
    _row_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def generate(cls, D: int, N: int, P: int, seed: int,
                 materialize: bool = True,
                 teacher: np.ndarray = None) -> "TeacherStudentInstance":
        """Draw teacher, features and patterns from the documented streams.

        ``materialize=False`` skips the P x N projected-pattern matrix for
        memory-constrained runs; rows are then computed (and cached) on
        demand.  ``teacher`` overrides the random teacher, e.g. for gauge
        experiments.
        """
        if min(D, N, P) < 1:
            raise DomainError("D, N, P must all be >= 1")
        if teacher is None:
            teacher = sign_pm(stream(seed, STREAM_TEACHER).standard_normal(D))
        else:
            teacher = np.asarray(teacher, dtype=np.int8)
            if teacher.shape != (D,) or not np.all(np.abs(teacher) == 1):
                raise DomainError("teacher override must be a +-1 vector of length D")
        features = stream(seed, STREAM_FEATURES).standard_normal((D, N))
        patterns = stream(seed, STREAM_PATTERNS).standard_normal((P, D))
        labels = sign_pm(patterns @ teacher.astype(float) / np.sqrt(D))
        inst = cls(D=D, N=N, P=P, teacher=teacher, features=features,
                   patterns=patterns, labels=labels, seed=seed)
        if materialize:
            inst._projected = inst._project_all()
        return inst

    def _project_all(self) -> np.ndarray:
        return sign_pm(self.patterns @ self.features / np.sqrt(self.D))

    @property
    def projected(self) -> np.ndarray:
        """(P, N) int8 matrix of projected patterns (cached)."""
        if self._projected is None:
            self._projected = self._project_all()
        return self._projected

    def project_pattern(self, mu: int) -> np.ndarray:
        """Projected pattern row mu; cached after first computation."""
        if not 0 <= mu < self.P:
            raise IndexError(f"pattern index {mu} out of range [0, {self.P})")
        if self._projected is not None:
            return self._projected[mu]
        row = self._row_cache.get(mu)
        if row is None:
            row = sign_pm(self.patterns[mu] @ self.features / np.sqrt(self.D))
            self._row_cache[mu] = row
        return row

    def signed_projections(self) -> np.ndarray:
        """(N, P) int8, C-contiguous: label-signed projected patterns.

        Column mu is labels[mu] * projected[mu]; the margin constraint for
        weights w reads (1/sqrt(N)) w . z[:, mu] >= kappa.
        """
        return np.ascontiguousarray((self.projected * self.labels[:, None]).T)

    def test_patterns(self, n_test: int) -> tuple[np.ndarray, np.ndarray]:
        """Fresh patterns and teacher labels from the test stream."""
        pats = stream(self.seed, STREAM_TEST_PATTERNS).standard_normal((n_test, self.D))
        labels = sign_pm(pats @ self.teacher.astype(float) / np.sqrt(self.D))
        return pats, labels

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        """Flat binary container plus a JSON sidecar; round-trips bit-exactly."""
        path = Path(path)
        header = struct.pack("<4sBxxxIIIQ", _MAGIC, _VERSION,
                             self.D, self.N, self.P, self.seed)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.teacher.astype(np.int8).tobytes())
            fh.write(np.ascontiguousarray(self.features, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(self.patterns, dtype=np.float64).tobytes())
            fh.write(self.labels.astype(np.int8).tobytes())
        sidecar = {"magic": _MAGIC.decode(), "version": _VERSION,
                   "D": self.D, "N": self.N, "P": self.P, "seed": self.seed}
        with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "TeacherStudentInstance":
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sBxxxIIIQ"))
            magic, version, D, N, P, seed = struct.unpack("<4sBxxxIIIQ", head)
            if magic != _MAGIC:
                raise DomainError(f"bad magic {magic!r}; not an instance file")
            if version != _VERSION:
                raise DomainError(f"unsupported container version {version}")
            teacher = np.frombuffer(fh.read(D), dtype=np.int8).copy()
            features = np.frombuffer(fh.read(8 * D * N), dtype=np.float64).reshape(D, N).copy()
            patterns = np.frombuffer(fh.read(8 * P * D), dtype=np.float64).reshape(P, D).copy()
            labels = np.frombuffer(fh.read(P), dtype=np.int8).copy()
        return cls(D=D, N=N, P=P, teacher=teacher, features=features,
                   patterns=patterns, labels=labels, seed=seed)


def gauge_transform(inst: TeacherStudentInstance) -> TeacherStudentInstance:
    """Flip pattern and feature rows by the teacher signs.

    The transformed instance has an all-ones teacher and identical labels
    and projected patterns (the sign flips cancel inside the projection).
    """
    t = inst.teacher.astype(float)
    return TeacherStudentInstance(
        D=inst.D, N=inst.N, P=inst.P,
        teacher=np.ones(inst.D, dtype=np.int8),
        features=inst.features * t[:, None],
        patterns=inst.patterns * t[None, :],
        labels=inst.labels.copy(), seed=inst.seed)


# ---------------------------------------------------------------------------
# Evaluation of weight vectors
# ---------------------------------------------------------------------------

def check_weights(w, N: int) -> np.ndarray:
    w = np.asarray(w)
    if w.shape != (N,):
        raise DomainError(f"weight vector has shape {w.shape}, expected ({N},)")
    if not np.all(np.abs(w) == 1):
        raise DomainError("weights must be +-1 valued")
    return w.astype(np.int8)


def stabilities(w, inst: TeacherStudentInstance) -> np.ndarray:
    """Per-pattern stabilities y * (projected . w) / sqrt(N)."""
    w = check_weights(w, inst.N)
    lam = inst.projected.astype(np.float64) @ w.astype(np.float64) / np.sqrt(inst.N)
    return inst.labels * lam


def train_error(w, inst: TeacherStudentInstance, kappa: float = 0.0) -> float:
    """Fraction of patterns with stability strictly below kappa."""
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    return float(np.mean(stabilities(w, inst) < kappa))


def empirical_overlaps(w, inst: TeacherStudentInstance) -> tuple[float, float]:
    """(r_emp, p_d_emp): projected teacher overlap and self-overlap."""
    w = check_weights(w, inst.N)
    s = inst.features @ w.astype(np.float64) / np.sqrt(inst.N)
    r_emp = float(s @ inst.teacher / inst.D)
    p_d_emp = float(s @ s / inst.D)
    return r_emp, p_d_emp


def generalization_error_closed_form(w, inst: TeacherStudentInstance,
                                     moments: NonlinearityMoments = SIGN_MOMENTS) -> float:
    """Deterministic arccos estimate of the test error from empirical
    overlaps (no sampling noise)."""
    r_emp, p_d_emp = empirical_overlaps(w, inst)
    m_eff = moments.mu1 * r_emp
    qd_eff = moments.mu_star_sq + moments.mu1 ** 2 * p_d_emp
    if qd_eff <= 0:
        raise DomainError(f"degenerate effective norm {qd_eff}")
    ratio = np.clip(m_eff / np.sqrt(qd_eff), -1.0, 1.0)
    return float(np.arccos(ratio) / np.pi)


def test_error_sampled(w, inst: TeacherStudentInstance, n_test: int) -> float:
    """Monte Carlo test error on fresh patterns (validation mode)."""
    w = check_weights(w, inst.N)
    pats, labels = inst.test_patterns(n_test)
    proj = sign_pm(pats @ inst.features / np.sqrt(inst.D))
    preds = sign_pm(proj.astype(np.float64) @ w.astype(np.float64))
    return float(np.mean(preds != labels))


def overlap(w1, w2) -> float:
    """Normalized dot product of two weight vectors."""
    w1, w2 = np.asarray(w1), np.asarray(w2)
    if w1.shape != w2.shape:
        raise DomainError(f"length mismatch: {w1.shape} vs {w2.shape}")
    return float(w1.astype(np.float64) @ w2.astype(np.float64) / w1.size)
