"""Singular values of equal-neighbor matrices and their degree-based bounds."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .topology import ClusterDigraph, DegreeSummary, degree_summary, equal_neighbor_matrix


OK = "ok"
INAPPLICABLE = "inapplicable"
DEGENERATE = "degenerate-fallback"

# |eps_net - alpha_minus + 1/(alpha n)| at or below this is treated as zero
DENOM_ATOL = 1e-9


class BoundFallbackWarning(UserWarning):
    """A cluster fell back to exact singular values for its psi term."""


class ConvergenceError(ArithmeticError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


def jacobi_eigh(S: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi for a real symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending order
    and eigenvectors as columns. Sweeps stop once the Frobenius norm of the
    off-diagonal part is at most ``tol`` times the norm of the whole matrix.
    """
    S = np.array(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError("jacobi_eigh needs a square symmetric matrix")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    V = np.eye(n)
    scale = np.linalg.norm(S) or 1.0
    off = _offdiag_norm(S)
    for _ in range(max_sweeps):
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = S[p, q]
                if apq == 0.0:
                    continue
                h = S[q, q] - S[p, p]
                if abs(h) + 100.0 * abs(apq) == abs(h):
                    t = apq / h  # theta would overflow; tan of the small angle
                else:
                    theta = h / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(1.0, theta))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                # S <- J^T S J on rows/cols p, q
                sp, sq = S[:, p].copy(), S[:, q].copy()
                S[:, p] = c * sp - s * sq
                S[:, q] = s * sp + c * sq
                sp, sq = S[p, :].copy(), S[q, :].copy()
                S[p, :] = c * sp - s * sq
                S[q, :] = s * sp + c * sq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        off = _offdiag_norm(S)
    else:
        if off > tol * scale:
            raise ConvergenceError("Jacobi eigensolver did not converge", off / scale)
    w = np.diag(S).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def _offdiag_norm(S: np.ndarray) -> float:
    return float(np.linalg.norm(S - np.diag(np.diag(S))))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: ``n-1`` (or ``n``) steps of disjoint pairs covering all pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    steps = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        steps.append((np.array([p for p, _ in pairs], dtype=np.intp), np.array([q for _, q in pairs], dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return steps


def singular_values(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """All singular values of ``A`` in descending order.

    One-sided (Hestenes) Jacobi: plane rotations on the columns of ``A`` that
    zero the off-diagonal entries of ``A^T A``, i.e. cyclic Jacobi on ``A^T A``
    without forming it. Disjoint column pairs are rotated together in
    round-robin order. Singular values come out as column norms, so tiny ones
    keep full absolute accuracy instead of suffering a ``sqrt`` of a
    rounding-level eigenvalue. Iteration ends after a sweep in which every pair
    already has ``|u_p.u_q| / (|u_p| |u_q|) <= tol``.
    """
    return batch_singular_values(np.asarray(A, dtype=float)[None], tol, max_sweeps)[0]


def batch_singular_values(As: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """:func:`singular_values` for a stack ``(B, r, n)``; rows of the result sorted descending.

    Pairs that are already orthogonal get an exact identity rotation, so each
    matrix's result does not depend on what else is in the batch.
    """
    As = np.asarray(As, dtype=float)
    if As.ndim != 3 or not np.all(np.isfinite(As)):
        raise ValueError("singular_values needs finite 2-D matrices")
    # U[b, j] is column j of matrix b
    U = np.ascontiguousarray(As.transpose(0, 2, 1))
    n = U.shape[1]
    schedule = _round_robin(n)
    residual = 0.0
    for _ in range(max_sweeps):
        residual = 0.0
        for P, Q in schedule:
            up, uq = U[:, P], U[:, Q]
            a = np.einsum("bij,bij->bi", up, up)
            b = np.einsum("bij,bij->bi", uq, uq)
            g = np.einsum("bij,bij->bi", up, uq)
            norm = np.sqrt(a) * np.sqrt(b)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(norm > 0.0, np.abs(g) / norm, 0.0)
            rot = rel > tol
            if not rot.any():
                continue
            residual = max(residual, float(rel.max()))
            with np.errstate(divide="ignore", invalid="ignore"):
                zeta = np.where(rot, (b - a) / (2.0 * g), 0.0)
            t = np.where(rot, np.copysign(1.0, zeta) / (np.abs(zeta) + np.hypot(1.0, zeta)), 0.0)
            c = (1.0 / np.hypot(1.0, t))[..., None]
            s = c * t[..., None]
            U[:, Q] = s * up + c * uq
            U[:, P] = c * up - s * uq
        if residual == 0.0:
            break
    else:
        raise ConvergenceError("one-sided Jacobi did not converge", residual)
    sv = np.sqrt(np.einsum("bij,bij->bi", U, U))
    return -np.sort(-sv, axis=1)


def top_two_singular_values(A: np.ndarray) -> tuple[float, float]:
    sv = singular_values(A)
    if sv.size == 1:
        return float(sv[0]), 0.0
    return float(sv[0]), float(sv[1])


class BoundValue(NamedTuple):
    value: float | None
    status: str

    @property
    def applicable(self) -> bool:
        return self.status != INAPPLICABLE


def prop1_components(ds: DegreeSummary) -> tuple[float, float]:
    """Separate bounds on ``(sigma1^2, sigma2^2)`` for balanced clusters, O(eps^2) dropped."""
    a, e = ds.alpha, ds.eps
    return 1.0 + e, (1.0 / a - 1.0) ** 2 + 2.0 * e * (1.0 + 2.0 / a - 1.0 / a**2)


def prop2_components(ds: DegreeSummary) -> tuple[float, float | None]:
    """Separate bounds on ``(sigma1^2, sigma2^2)`` for irregular clusters.

    The second entry is ``None`` when its correction's denominator vanishes.
    """
    e, am, en, a, n = ds.eps, ds.alpha_minus, ds.eps_net, ds.alpha, ds.n_l
    s1 = 1.0 + ds.varphi
    last = en - am + 1.0 / (a * n)
    if abs(last) <= DENOM_ATOL:
        return s1, None
    lead = (1.0 - e) ** 2 * (1.0 - am**2)
    return s1, s1 - lead * (lead - am) / (n * (en + 1.0) * last)


def psi_prop1(ds: DegreeSummary) -> BoundValue:
    """Bound on sigma1^2 + sigma2^2 for degree-balanced clusters with alpha > 1/2.

    ``1 + eps + (1/alpha - 1)^2 + 2 eps (1 + 2/alpha - 1/alpha^2)``; the O(eps^2)
    remainders are dropped.
    """
    if not (ds.alpha > 0.5 and ds.balanced):
        return BoundValue(None, INAPPLICABLE)
    return BoundValue(sum(prop1_components(ds)), OK)


def psi_prop2(ds: DegreeSummary) -> BoundValue:
    """Bound on sigma1^2 + sigma2^2 for irregular clusters with alpha >= 1/2.

    Falls back to ``2 + 2*varphi`` (flagged ``degenerate-fallback``) when the
    correction's last denominator factor vanishes or the correction is negative.
    """
    if ds.alpha < 0.5:
        return BoundValue(None, INAPPLICABLE)
    s1, s2 = prop2_components(ds)
    # a negative correction would only loosen past sigma2^2 <= sigma1^2 <= 1 + varphi
    if s2 is None or s2 > s1:
        return BoundValue(2.0 * s1, DEGENERATE)
    return BoundValue(s1 + s2, OK)


def connectivity_term(sigma1: float, sigma2: float) -> float:
    return sigma1**2 + sigma2**2 - 1.0


@dataclass(frozen=True)
class SpectralReport:
    sigma1: float
    sigma2: float
    phi_term: float
    psi_prop1: BoundValue
    psi_prop2: BoundValue
    summary: DegreeSummary

    @property
    def sq_sum(self) -> float:
        return self.sigma1**2 + self.sigma2**2

    def as_dict(self) -> dict:
        s = self.summary
        return {
            "degree_summary": {
                "n_l": s.n_l,
                "d_out_min": s.d_out_min,
                "d_out_max": s.d_out_max,
                "d_in_max": s.d_in_max,
                "alpha": s.alpha,
                "eps": s.eps,
                "varphi": s.varphi,
                "alpha_minus": s.alpha_minus,
                "eps_net": s.eps_net,
                "balanced": s.balanced,
            },
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "phi_term": self.phi_term,
            "psi_prop1": {"value": self.psi_prop1.value, "status": self.psi_prop1.status},
            "psi_prop2": {"value": self.psi_prop2.value, "status": self.psi_prop2.status},
        }


def _report(ds: DegreeSummary, s1: float, s2: float) -> SpectralReport:
    return SpectralReport(s1, s2, connectivity_term(s1, s2), psi_prop1(ds), psi_prop2(ds), ds)


def analyze_cluster(g: ClusterDigraph) -> SpectralReport:
    s1, s2 = top_two_singular_values(equal_neighbor_matrix(g))
    return _report(degree_summary(g), s1, s2)


def analyze_clusters(graphs: Sequence[ClusterDigraph]) -> list[SpectralReport]:
    """Same as mapping :func:`analyze_cluster`, with the SVDs batched by cluster size."""
    by_size: dict[int, list[int]] = {}
    for idx, g in enumerate(graphs):
        by_size.setdefault(g.n, []).append(idx)
    top = [None] * len(graphs)
    for size, idxs in by_size.items():
        sv = batch_singular_values(np.stack([equal_neighbor_matrix(graphs[i]) for i in idxs]))
        for i, row in zip(idxs, sv):
            top[i] = (float(row[0]), float(row[1]) if size > 1 else 0.0)
    return [_report(degree_summary(g), *st) for g, st in zip(graphs, top)]


class Bound(enum.Enum):
    PROP1 = "prop1"
    PROP2 = "prop2"
    BEST = "best"


@dataclass(frozen=True)
class BoundChoice:
    bound: Bound = Bound.PROP1
    # subtract 1 so the bound targets phi_l = s1^2 + s2^2 - 1 instead of s1^2 + s2^2
    tighten_by_one: bool = False


def cluster_term(report: SpectralReport, choice: BoundChoice) -> tuple[float, str]:
    """The per-cluster psi used by the sampling rule, and where it came from."""
    p1, p2 = report.psi_prop1, report.psi_prop2
    if choice.bound is Bound.PROP1:
        candidates = [("prop1", p1)] if p1.applicable else [("prop2", p2)]
    elif choice.bound is Bound.PROP2:
        candidates = [("prop2", p2)]
    else:
        candidates = [("prop1", p1), ("prop2", p2)]
    candidates = [(name, bv) for name, bv in candidates if bv.applicable]
    if candidates:
        name, bv = min(candidates, key=lambda nb: nb[1].value)
        value = bv.value
    else:
        warnings.warn(
            "no degree bound applies to some cluster; using its exact singular values",
            BoundFallbackWarning,
            stacklevel=2,
        )
        name, value = "exact", report.sq_sum
    if choice.tighten_by_one:
        value -= 1.0
    return value, name


def _cluster_weights(reports: Sequence[SpectralReport]) -> tuple[int, np.ndarray]:
    sizes = np.array([r.summary.n_l for r in reports], dtype=float)
    n = int(sizes.sum())
    return n, sizes / n


def bound_terms(reports: Sequence[SpectralReport], choice: BoundChoice) -> tuple[float, tuple[str, ...]]:
    """``S = sum_l (n_l/n) psi_l`` together with each cluster's bound source."""
    _, w = _cluster_weights(reports)
    terms = [cluster_term(r, choice) for r in reports]
    return float(w @ np.array([v for v, _ in terms])), tuple(src for _, src in terms)


def bound_sum(reports: Sequence[SpectralReport], choice: BoundChoice) -> float:
    return bound_terms(reports, choice)[0]


def exact_sum(reports: Sequence[SpectralReport]) -> float:
    _, w = _cluster_weights(reports)
    return float(w @ np.array([r.phi_term for r in reports]))


def sampling_factor(m: int, n: int) -> float:
    if m <= 0:
        raise ValueError(f"sample size must be positive, got {m}")
    return n / m - 1.0


def connectivity_factor(
    m: int,
    reports: Sequence[SpectralReport],
    use_exact: bool = True,
    choice: BoundChoice = BoundChoice(),
) -> float:
    """``(n/m - 1) * sum_l (n_l/n) * term_l`` with exact ``phi_l`` or the chosen psi bound."""
    n, _ = _cluster_weights(reports)
    S = exact_sum(reports) if use_exact else bound_sum(reports, choice)
    return sampling_factor(m, n) * S


def min_sample_size(n: int, S: float, phi_max: float) -> int:
    """Smallest ``r`` in ``1..n`` with ``(n/r - 1) * S <= phi_max``."""
    if phi_max < 0:
        raise ValueError("phi_max must be non-negative")
    if S <= 0.0 or math.isinf(phi_max):
        return 1
    r = math.ceil(n * S / (phi_max + S))
    r = min(max(r, 1), n)
    # closed form can be off by one through rounding; settle against the defining inequality
    while r > 1 and sampling_factor(r - 1, n) * S <= phi_max:
        r -= 1
    while r < n and sampling_factor(r, n) * S > phi_max:
        r += 1
    return r


def select_sample_size(
    reports: Sequence[SpectralReport], phi_max: float, choice: BoundChoice = BoundChoice()
) -> int:
    n, _ = _cluster_weights(reports)
    return min_sample_size(n, bound_sum(reports, choice), phi_max)
