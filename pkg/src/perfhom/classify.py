"""Good/bad partition of the holes and the well-separated subsets built on it.

All distances here are in blown-up units (physical distance / eps) unless a
name says otherwise. With s = alpha/eps a hole of mark rho has blown-up radius
s*rho and its safety ball has blown-up radius 2*s*rho.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .geometry import PerforatedDomain, critical_scale
from .process import ProcessRealization, locality_order, nearest_neighbour_distance


def default_alpha_exponent(n: int, q: float) -> float:
    return q / (2 * (n - q))


def critical_radius(
    realization: ProcessRealization, eps: float, n: int, q: float, alpha_exponent: float | None = None,
    domain=None,
) -> float:
    """r_eps = max((alpha * max rho_i)^(1/n), eps^(alpha_exponent/4)).

    The maximum runs over the points in eps^-1 D when `domain` is given, else
    over the whole realization.
    """
    if alpha_exponent is None:
        alpha_exponent = default_alpha_exponent(n, q)
    if not 0 < alpha_exponent < q / (n - q):
        raise ConfigError(f"alpha_exponent must lie in (0, {q / (n - q)}), got {alpha_exponent}")
    alpha, _ = critical_scale(eps, n, q)
    floor = eps ** (alpha_exponent / 4)
    marks = realization.marks if len(realization) else np.zeros(0)
    if domain is not None and len(realization):
        marks = marks[domain.contains(eps * realization.points)]
    if marks.size == 0:
        return floor
    return max((alpha * float(marks.max())) ** (1.0 / n), floor)


@dataclass(frozen=True, eq=False)
class HoleClassification:
    r_eps: float
    bad: np.ndarray
    good: np.ndarray
    G_M: np.ndarray | None = None
    MG: np.ndarray | None = None
    VG: np.ndarray | None = None
    d: np.ndarray | None = None
    M: float | None = None
    theta: float | None = None
    alpha_exponent: float | None = None
    rounds: int = 0

    def labels(self, size: int) -> np.ndarray:
        lab = np.full(size, "bad", dtype=object)
        lab[self.good] = "good"
        if self.G_M is not None:
            lab[self.G_M] = "GM"
        if self.MG is not None:
            lab[self.MG] = "MG"
        if self.VG is not None:
            lab[self.VG] = "VG"
        return lab

    def to_csv(self, perf: PerforatedDomain) -> str:
        buf = io.StringIO()
        buf.write("# schema=perfhom.classification/1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "class", "rho", "d"])
        lab = self.labels(len(perf))
        d = self.d if self.d is not None else np.full(len(perf), np.nan)
        for i in range(len(perf)):
            w.writerow([i, lab[i], repr(float(perf.marks[i])), repr(float(d[i]))])
        return buf.getvalue()


def _safety_violations(x, marks, s, r_eps, cand, bad):
    """Candidates whose hole comes closer than r_eps/2 to a bad safety ball."""
    hit = np.zeros(len(cand), dtype=bool)
    if len(cand) == 0 or len(bad) == 0:
        return hit
    xc, rc = x[cand], s * marks[cand]
    reach = 2 * s * marks[bad]
    # bad balls whose safety radius exceeds r_eps are few: scan them directly
    big = reach > r_eps
    for b in np.flatnonzero(big):
        dist = np.linalg.norm(xc - x[bad[b]], axis=1)
        hit |= dist - rc - reach[b] < 0.5 * r_eps
    small = bad[~big]
    if len(small):
        # candidates have s*rho <= r_eps/2, so r_eps/2 + r_eps/2 + r_eps bounds the reach
        pairs = _pairs_within(xc, x[small], 2 * r_eps)
        i, j, dist = pairs["i"], pairs["j"], pairs["v"]
        close = dist - rc[i] - reach[~big][j] < 0.5 * r_eps
        hit[i[close]] = True
    return hit


def _pairs_within(a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """All (i, j, |a_i - b_j|) with distance <= radius, as a structured array."""
    return cKDTree(a).sparse_distance_matrix(cKDTree(b), radius, output_type="ndarray")


def classify_holes(perf: PerforatedDomain, realization: ProcessRealization | None, r_eps: float) -> HoleClassification:
    """Iterative bad/good split.

    A hole is bad if its radius exceeds eps r_eps / 2; surviving holes with a
    surviving neighbour closer than 2 r_eps become bad, as do surviving holes
    closer than eps r_eps / 2 to the safety layer; repeat to a fixed point.
    """
    if not r_eps > 0:
        raise ConfigError("r_eps must be positive")
    H = len(perf)
    x = perf.blown_up
    s = perf.alpha / perf.eps
    bad = s * perf.marks > 0.5 * r_eps
    for rounds in range(1, H + 2):
        changed = False
        surv = np.flatnonzero(~bad)
        if len(surv) > 1:
            nn = nearest_neighbour_distance(x[surv])
            close = nn < 2 * r_eps
            if close.any():
                bad[surv[close]] = True
                changed = True
        surv = np.flatnonzero(~bad)
        hit = _safety_violations(x, perf.marks, s, r_eps, surv, np.flatnonzero(bad))
        if hit.any():
            bad[surv[hit]] = True
            changed = True
        if not changed:
            break
    else:  # pragma: no cover - bad set grows every round
        raise RuntimeError("classification did not terminate")
    cls = HoleClassification(r_eps, np.flatnonzero(bad), np.flatnonzero(~bad), rounds=rounds)
    violations = check_invariants(cls, perf)
    if violations:
        raise AssertionError("classification invariants violated: " + "; ".join(violations))
    return cls


def _safety_distance(perf: PerforatedDomain, bad: np.ndarray, cand: np.ndarray, cap: float = np.inf) -> np.ndarray:
    """Blown-up distance from candidate centres to the safety layer (inf if none).

    With a finite cap, distances above it come back as inf; the rest are exact.
    """
    out = np.full(len(cand), np.inf)
    if len(bad) == 0 or len(cand) == 0:
        return out
    x = perf.blown_up
    xc = x[cand]
    reach = 2 * (perf.alpha / perf.eps) * perf.marks[bad]
    if np.isfinite(cap):
        return _capped_safety_distance(x, xc, bad, reach, cap)
    tau = float(np.quantile(reach, 0.999))
    big = reach > tau
    for b in np.flatnonzero(big):
        dd = np.linalg.norm(xc - x[bad[b]], axis=1) - reach[b]
        out = np.minimum(out, np.maximum(dd, 0.0))
    small, sreach = bad[~big], reach[~big]
    if len(small) == 0:
        return out
    tree = cKDTree(x[small])
    k = min(8, len(small))
    order = locality_order(xc)
    d_o, i_o = tree.query(xc[order], k=k)
    dist, idx = np.empty((len(cand), k)), np.empty((len(cand), k), dtype=int)
    dist[order], idx[order] = d_o.reshape(len(cand), k), i_o.reshape(len(cand), k)
    out = np.minimum(out, np.min(np.maximum(dist - sreach[idx], 0.0), axis=1))
    # balls beyond the k-th neighbour are at least d_k - tau away
    if k < len(small):
        for i in np.flatnonzero(dist[:, -1] - tau < out):
            lst = np.asarray(tree.query_ball_point(xc[i], out[i] + tau), dtype=int)
            if len(lst):
                dd = np.linalg.norm(x[small[lst]] - xc[i], axis=1) - sreach[lst]
                out[i] = min(out[i], max(float(dd.min()), 0.0))
    return out


def _capped_safety_distance(x, xc, bad, reach, cap):
    out = np.full(len(xc), np.inf)
    big = reach > cap
    for b in np.flatnonzero(big):
        dd = np.linalg.norm(xc - x[bad[b]], axis=1) - reach[b]
        out = np.minimum(out, np.maximum(dd, 0.0))
    if not big.all():
        sreach = reach[~big]
        # a ball within cap of a candidate has its centre within cap + max reach
        pairs = _pairs_within(xc, x[bad[~big]], cap + float(sreach.max()))
        np.minimum.at(out, pairs["i"], np.maximum(pairs["v"] - sreach[pairs["j"]], 0.0))
    out[out > cap] = np.inf
    return out


def select_GM(cls: HoleClassification, perf: PerforatedDomain, M: float, realization: ProcessRealization) -> HoleClassification:
    """Good centres with d_i >= eps/M and rho_i <= M.

    d_i = min(dist to safety layer, half the distance to the nearest other
    point of the realization, eps, dist to the boundary of D).
    """
    if not M >= 1:
        raise ConfigError("M must be >= 1")
    H = len(perf)
    d = np.full(H, np.nan)
    good = cls.good
    if len(good):
        eps = perf.eps
        nn_all = realization.nn_distance
        # d is capped at eps, so blown-up safety distances beyond 1 never matter
        d_safe = eps * _safety_distance(perf, cls.bad, good, cap=1.0)
        d_pair = 0.5 * eps * nn_all[perf.source[good]]
        d_bdry = perf.domain.dist_to_boundary(perf.centres[good])
        d[good] = np.minimum.reduce([d_safe, d_pair, np.full(len(good), eps), d_bdry])
    sel = good[(d[good] >= perf.eps / M) & (perf.marks[good] <= M)] if len(good) else good
    return replace(cls, G_M=sel, d=d, M=M)


def split_VG_MG(cls: HoleClassification, perf: PerforatedDomain, theta: float, M: float | None = None) -> HoleClassification:
    """Very good = G_M centres whose sphere of radius theta eps misses every
    closed ball B(eps x_k, eps r_eps) around other good centres."""
    if cls.G_M is None:
        raise ConfigError("select_GM must run before split_VG_MG")
    M = cls.M if M is None else M
    if not 0 < theta < 3 / (8 * M):
        raise ConfigError(f"theta must lie in (0, 3/(8M)) = (0, {3 / (8 * M)}), got {theta}")
    r = cls.r_eps
    x = perf.blown_up
    touched = np.zeros(len(cls.G_M), dtype=bool)
    if len(cls.good) > 1 and len(cls.G_M):
        pairs = _pairs_within(x[cls.G_M], x[cls.good], theta + r)
        i, dist = pairs["i"], pairs["v"]
        other = cls.good[pairs["j"]] != cls.G_M[i]
        touched[i[other & (dist >= theta - r)]] = True
    not_gm = np.setdiff1d(cls.good, cls.G_M)
    MG = np.union1d(not_gm, cls.G_M[touched])
    VG = cls.G_M[~touched]
    return replace(cls, MG=MG, VG=VG, theta=theta)


def bad_capacity_sum(cls: HoleClassification, perf: PerforatedDomain) -> float:
    """eps^n * sum over bad holes of rho^(n-q)."""
    if len(cls.bad) == 0:
        return 0.0
    return float(perf.eps**perf.n * np.sum(perf.marks[cls.bad] ** (perf.n - perf.q)))


def classify_all(
    perf: PerforatedDomain,
    realization: ProcessRealization,
    M: float,
    theta: float | None = None,
    alpha_exponent: float | None = None,
    r_eps: float | None = None,
) -> HoleClassification:
    """Full pipeline: r_eps, bad/good, G_M and (if theta given) VG/MG."""
    if r_eps is None:
        r_eps = critical_radius(realization, perf.eps, perf.n, perf.q, alpha_exponent, perf.domain)
    cls = classify_holes(perf, realization, r_eps)
    cls = replace(cls, alpha_exponent=alpha_exponent)
    cls = select_GM(cls, perf, M, realization)
    if theta is not None:
        cls = split_VG_MG(cls, perf, theta, M)
    return cls


# --------------------------------------------------------------- invariants


def check_invariants(cls: HoleClassification, perf: PerforatedDomain) -> list[str]:
    """Exact checks of the partition, separation, radius and safety properties."""
    out = []
    H = len(perf)
    allidx = np.concatenate([cls.bad, cls.good])
    if len(allidx) != H or len(np.unique(allidx)) != H:
        out.append("bad and good do not partition the holes")
    x = perf.blown_up
    s = perf.alpha / perf.eps
    r = cls.r_eps
    g = cls.good
    if len(g) > 1:
        nn = nearest_neighbour_distance(x[g])
        if np.any(nn < 2 * r):
            out.append(f"good centres closer than 2 r_eps (min {nn.min():.6g} < {2 * r:.6g})")
    if len(g) and np.any(s * perf.marks[g] > 0.5 * r):
        out.append("good hole radius exceeds eps r_eps / 2")
    if len(g) and len(cls.bad):
        # a violation needs distance < r/2 + s rho <= r
        gap = _safety_distance(perf, cls.bad, g, cap=r) - s * perf.marks[g]
        if np.any(gap < 0.5 * r):
            out.append(f"good hole within eps r_eps / 2 of the safety layer (min {gap.min():.6g})")
    if cls.G_M is not None and not np.all(np.isin(cls.G_M, g)):
        out.append("G_M not contained in good")
    if cls.VG is not None:
        if np.intersect1d(cls.VG, cls.MG).size:
            out.append("VG and MG intersect")
        if not np.array_equal(np.sort(cls.VG), np.setdiff1d(cls.G_M, cls.MG)):
            out.append("VG differs from G_M minus MG")
    return out


def check_GM_geometry(cls: HoleClassification, perf: PerforatedDomain, realization: ProcessRealization) -> list[str]:
    """Disjointness and containment of the balls B(eps x_i, eps/M), and the thinning relation."""
    out = []
    G = cls.G_M
    if G is None or len(G) == 0:
        return out
    rad = perf.eps / cls.M
    c = perf.centres[G]
    if len(G) > 1:
        nn = nearest_neighbour_distance(c)
        if np.any(nn < 2 * rad):
            out.append("G_M balls overlap")
    if np.any(perf.domain.dist_to_boundary(c) < rad):
        out.append("G_M ball leaves D")
    nn_all = realization.nn_distance
    if np.any(nn_all[perf.source[G]] < 2.0 / cls.M):
        out.append("G_M not contained in the 2/M thinning")
    return out
