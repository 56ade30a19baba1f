"""Orthonormal frames, projectors and principal angles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InfeasibleAngles, NotOrthonormal, RankDeficient

ORTHO_TOL = 1e-10
PINV_RTOL = 1e-10
TAN_COS_FLOOR = 1e-8


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Frame:
    """A D x m matrix with orthonormal columns."""

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise DimensionMismatch(f"frame must be 2-D, got shape {a.shape}")
        D, m = a.shape
        if not 1 <= m <= D:
            raise DimensionMismatch(f"need 1 <= m <= D, got D={D}, m={m}")
        err = np.abs(a.T @ a - np.eye(m)).max()
        if err > ORTHO_TOL:
            raise NotOrthonormal(f"max |F^T F - I| = {err:.3e}")
        object.__setattr__(self, "data", _readonly(a))

    @property
    def ambient_dim(self) -> int:
        return self.data.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.data.shape[1]

    @property
    def T(self):
        return self.data.T

    def projector(self) -> np.ndarray:
        return self.data @ self.data.T

    def perp_projector(self) -> np.ndarray:
        return np.eye(self.ambient_dim) - self.projector()

    def to_dict(self) -> dict:
        return {
            "ambient_dim": self.ambient_dim,
            "latent_dim": self.latent_dim,
            "columns": self.data.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Frame":
        D, m = int(d["ambient_dim"]), int(d["latent_dim"])
        cols = np.asarray(d["columns"], dtype=float)
        if cols.size != D * m:
            raise DimensionMismatch(f"expected {D * m} entries, got {cols.size}")
        return cls(cols.reshape(D, m))


def _qr_positive(a):
    q, r = np.linalg.qr(a)
    s = np.sign(np.diagonal(r, axis1=-2, axis2=-1)).copy()
    s[s == 0] = 1.0
    return q * s[..., None, :]


def make_frame(matrix) -> Frame:
    """Orthonormalize the columns of ``matrix`` (QR, positive diagonal)."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0 or s[-1] <= 1e-10 * s[0]:
        raise RankDeficient(f"singular values {s} fail the 1e-10 relative rank test")
    return Frame(_qr_positive(a))


def axis_frame(D: int, idx) -> Frame:
    """Frame spanned by the coordinate axes listed in ``idx``."""
    return Frame(np.eye(D)[:, list(idx)])


def haar_frame(D: int, m: int, rng: np.random.Generator, size=None):
    """Haar-distributed frame(s) on the Stiefel manifold.

    With ``size`` given, returns a raw ``(size, D, m)`` array instead of a
    Frame; that path exists for brute-force searches.
    """
    if size is None:
        return Frame(_qr_positive(rng.standard_normal((D, m))))
    return _qr_positive(rng.standard_normal((size, D, m)))


def pinv(B: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    return np.linalg.pinv(np.asarray(B, dtype=float), rcond=rtol)


def numerical_rank(B: np.ndarray, rtol: float = PINV_RTOL) -> int:
    s = np.linalg.svd(np.atleast_2d(B), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True, eq=False)
class SubspaceReport:
    angles: np.ndarray
    cosines: np.ndarray
    cos2_sum: float
    B: np.ndarray
    B_pinv: np.ndarray
    B_rank: int
    B_opnorm: float
    residual_V_of_A: float
    perp_trace: float
    tan2_sum: float
    n_excluded: int
    dims: tuple = field(default=(0, 0, 0))

    @property
    def excluded(self) -> bool:
        """True if some angle was too close to pi/2 to enter ``tan2_sum``."""
        return self.n_excluded > 0


def _check_same_ambient(*frames):
    dims = {f.ambient_dim for f in frames}
    if len(dims) != 1:
        raise DimensionMismatch(f"frames live in different ambient dims {sorted(dims)}")


def subspace_report(V: Frame, A: Frame) -> SubspaceReport:
    """Principal-angle geometry of col(V) against col(A).

    Cosines are the singular values of ``B = V^T A``.  Angles with
    ``cos^2 >= 1/2`` are recovered from the sines (singular values of
    ``P_V^perp A``) to keep small angles accurate.
    """
    _check_same_ambient(V, A)
    D, dV, dA = V.ambient_dim, V.latent_dim, A.latent_dim
    r = min(dV, dA)
    B = V.data.T @ A.data
    cos = np.clip(np.linalg.svd(B, compute_uv=False)[:r], 0.0, 1.0)
    resid = A.data - V.data @ B
    sin = np.sort(np.clip(np.linalg.svd(resid, compute_uv=False), 0.0, 1.0))[:r]
    angles = np.where(cos**2 < 0.5, np.arccos(cos), np.arcsin(sin))
    cos2 = float(np.sum(cos**2))
    keep = cos > TAN_COS_FLOOR
    tan2 = float(np.sum((1.0 - cos[keep] ** 2) / cos[keep] ** 2))
    PV_perp_A2 = float(np.sum(resid**2))
    # Tr(P_V^perp P_A^perp) = D - dV - dA + ||V^T A||_F^2
    perp_trace = float(D - dV - dA + np.sum(B**2))
    return SubspaceReport(
        angles=_readonly(angles),
        cosines=_readonly(cos),
        cos2_sum=cos2,
        B=_readonly(B),
        B_pinv=_readonly(pinv(B)),
        B_rank=numerical_rank(B),
        B_opnorm=float(cos[0]) if r else 0.0,
        residual_V_of_A=PV_perp_A2,
        perp_trace=perp_trace,
        tan2_sum=tan2,
        n_excluded=int(np.sum(~keep)),
        dims=(D, dV, dA),
    )


def principal_angles(V: Frame, A: Frame) -> np.ndarray:
    return subspace_report(V, A).angles


def rotate_frame(A: Frame, angles, seed: int, latent_dim: int | None = None) -> Frame:
    """A frame whose principal angles to ``A`` are the requested ones.

    The result has ``latent_dim`` columns (default ``A.latent_dim``).  When
    fewer than ``min(m, latent_dim)`` angles are given the list is padded
    with zeros; when ``latent_dim > m`` the extra columns are orthogonal to
    ``A``.  Principal vectors inside col(A) are drawn at random from
    ``seed``.
    """
    from .rng import make_rng

    D, m = A.ambient_dim, A.latent_dim
    m_out = m if latent_dim is None else int(latent_dim)
    r = min(m, m_out)
    th = np.asarray(angles, dtype=float).reshape(-1)
    if th.size > r:
        raise InfeasibleAngles(f"{th.size} angles requested but at most {r} exist")
    if np.any(th < 0) or np.any(th > np.pi / 2 + 1e-15):
        raise InfeasibleAngles("angles must lie in [0, pi/2]")
    th = np.concatenate([th, np.zeros(r - th.size)])
    n_moving = int(np.sum(th > 0))
    n_extra = max(0, m_out - m)
    if n_moving + n_extra > D - m:
        raise InfeasibleAngles(
            f"need {n_moving + n_extra} directions orthogonal to col(A), only {D - m} exist"
        )
    rng = make_rng(seed, "rotate_frame")
    inside = A.data @ _qr_positive(rng.standard_normal((m, m)))
    comp = np.linalg.svd(np.eye(D) - A.projector())[0][:, : D - m]
    if D - m:
        comp = comp @ _qr_positive(rng.standard_normal((D - m, D - m)))
    cols = []
    k = 0
    for j in range(r):
        if th[j] > 0:
            cols.append(np.cos(th[j]) * inside[:, j] + np.sin(th[j]) * comp[:, k])
            k += 1
        else:
            cols.append(inside[:, j])
    for _ in range(n_extra):
        cols.append(comp[:, k])
        k += 1
    out = np.stack(cols, axis=1)
    # re-orthonormalize away rounding without changing the span
    return Frame(_qr_positive(out))
