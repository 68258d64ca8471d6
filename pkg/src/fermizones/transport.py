"""Strong-field structure of the transverse conductivity.

``predict_sigma_limit`` states what the topological label implies for the
limit tensor.  ``chambers_estimate`` is a relaxation-time model (isotropic
tau) used to probe that structure numerically:

    sigma_ij(gamma) = < v_i(0) (1/gamma) int_0^inf v_j(-T) exp(-T/gamma) dT >

with T the orbit time (dp/dT = v x B_hat), gamma = omega tau the
dimensionless field strength and <.> the Fermi-surface average with weight
dS/|v|.  The model is declared plumbing; only its structural outputs (rank,
kernel direction, exponents) are meant to be compared with the label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .carriers import ZoneLabel, sample_surface_points
from .errors import InsufficientRange, Stalled, StartNotOnSurface, UndeterminedLabel
from .lattice import DispersionRelation, cartesian_gradient, triangulate_level
from .tracer import as_direction, plane_frame, trace

WINDOW_FACTOR = 10.0  # open-orbit window in units of the largest gamma
DEFAULT_OMEGA_TAU = tuple(float(x) for x in np.logspace(0.0, 2.0, 9))


def group_velocity(d: DispersionRelation, p):
    """Cartesian group velocity grad eps at lattice point(s) ``p``."""
    return cartesian_gradient(d, p)


@dataclass
class SigmaPrediction:
    """Predicted limit of the transverse tensor as |B| -> infinity.

    ``sigma0`` is in the frame ``frame`` = (e1, e2) of the plane orthogonal
    to B.  Nontrivial limits are normalized to unit top eigenvalue; the
    magnitude is not a topological quantity.
    """

    kind: str  # "trivial" | "nontrivial"
    sigma0: np.ndarray
    frame: tuple
    eta: Optional[np.ndarray] = None
    exponents: dict = field(default_factory=dict)

    @property
    def eta_plane(self):
        """Kernel direction in frame coordinates, or None."""
        if self.eta is None:
            return None
        return np.array([self.eta @ self.frame[0], self.eta @ self.frame[1]])

    def to_json(self):
        return {"type": self.kind,
                "sigma0": self.sigma0.tolist(),
                "frame": [list(map(float, e)) for e in self.frame],
                "eta": None if self.eta is None else [float(v) for v in self.eta],
                "exponents": self.exponents}


def predict_sigma_limit(label: ZoneLabel, B) -> SigmaPrediction:
    """Limit structure implied by the label.

    Trivial: sigma -> 0 with tensor norm decaying like |B|^-1.  Integer m:
    rank-1 limit whose kernel is eta = unit(m x B), the open-orbit direction,
    which lies in the integral plane orthogonal to m.
    """
    B = as_direction(B)
    frame = plane_frame(B)
    if label.kind == "trivial":
        return SigmaPrediction("trivial", np.zeros((2, 2)), frame, None, {"norm": -1.0})
    if not label.is_integer:
        raise UndeterminedLabel(f"no prediction for an undetermined label ({label.reason})")
    eta = np.cross(np.asarray(label.m, dtype=float), B)
    eta /= np.linalg.norm(eta)
    xi = np.cross(B, eta)
    x2 = np.array([xi @ frame[0], xi @ frame[1]])
    return SigmaPrediction("nontrivial", np.outer(x2, x2), frame, eta, {"top": 0.0})


# ---------------------------------------------------------------------------
# relaxation-time model


@dataclass
class OrbitSegments:
    """A traced orbit reduced to transverse-velocity increments in orbit time."""

    T: np.ndarray  # segment mid-times
    dT: np.ndarray
    J: np.ndarray  # (n, 2) integral of v_perp over each segment, plane frame
    periodic: bool
    span: float  # period, or window length
    max_drift: float


def orbit_segments(d: DispersionRelation, eps_f, B, p0, window, h_max=0.1, angle_tol=0.2):
    """Trace from ``p0`` until closure or ``window`` units of orbit time.

    A closed trace (null or not) is periodic and is closed exactly by one
    extra segment to the translated start.  The sequence is oriented along
    dp/dT = v x B_hat.
    """
    B = as_direction(B)
    A = d.lattice.basis
    e1, e2 = plane_frame(B)
    chunks = []
    total_T = 0.0
    periodic = False
    drift = 0.0
    p, q = p0, None
    first = True
    while total_T < window:
        v0 = group_velocity(d, np.mod(p, 1.0) if q is None else np.linalg.solve(A, q))
        speed = max(np.linalg.norm(v0 - (v0 @ B) * B), 1e-3)
        budget = max(10.0, 1.5 * speed * (window - total_T))
        traj = trace(d, eps_f, B, p, budget=budget, h_max=h_max, angle_tol=angle_tol,
                     check_closure=first, start_cartesian=q, max_returns=1)
        drift = max(drift, traj.eps_drift, traj.casimir_drift)
        pts = traj.points
        if traj.status == "closed":
            pts = np.vstack([pts, traj.origin + A @ np.asarray(traj.period, dtype=float)])
            periodic = True
        chunks.append(pts if not chunks else pts[1:])
        seg = np.diff(pts, axis=0)
        mid = 0.5 * (pts[1:] + pts[:-1])
        v = group_velocity(d, mid @ d.lattice.inverse.T)
        vperp = np.linalg.norm(v - np.outer(v @ B, B), axis=1)
        total_T += float(np.sum(np.linalg.norm(seg, axis=1) / vperp))
        if periodic or traj.status != "budget":
            break
        q = pts[-1]
        p = np.linalg.solve(A, q)
        first = False
    pts = np.vstack(chunks)
    seg = np.diff(pts, axis=0)
    mid = 0.5 * (pts[1:] + pts[:-1])
    v = group_velocity(d, mid @ d.lattice.inverse.T)
    vperp = v - np.outer(v @ B, B)
    dT = np.linalg.norm(seg, axis=1) / np.linalg.norm(vperp, axis=1)
    if np.sum(np.einsum("ij,ij->i", np.cross(v, B), seg)) < 0:
        seg, dT = -seg[::-1], dT[::-1]
    Jc = np.cross(B, seg)
    J = np.stack([Jc @ e1, Jc @ e2], axis=1)
    T = np.cumsum(dT) - 0.5 * dT
    return OrbitSegments(T, dT, np.ascontiguousarray(J), periodic, float(dT.sum()), drift)


def orbit_tensor(seg: OrbitSegments, gamma):
    """Orbit-time average of v_perp (x) <v_perp>_gamma on one orbit (2x2).

    Periodic orbits use the exact periodic kernel.  Open windows use the
    exponential kernel restricted to the window and are normalized by the
    kernel mass, so a constant drift velocity is reproduced exactly.
    """
    M, mass = _kernels.relaxation_sums(seg.T, seg.dT, seg.J, float(gamma), seg.periodic,
                                       seg.span)
    return M / mass


@dataclass
class ChambersResult:
    omega_tau: np.ndarray
    tensors: np.ndarray  # (len(omega_tau), 2, 2), plane frame of B
    frame: tuple
    n_used: int
    errors: list
    max_drift: float

    def symmetric(self):
        return 0.5 * (self.tensors + np.swapaxes(self.tensors, 1, 2))

    def eigen(self):
        """Eigenvalues (descending) and eigenvectors of the symmetric parts."""
        w, V = np.linalg.eigh(self.symmetric())
        return w[:, ::-1], V[:, :, ::-1]

    def kernel_angles(self, eta_plane):
        """Angle (degrees, in [0, 90]) between the smallest eigenvector and ``eta_plane``."""
        _, V = self.eigen()
        u = np.asarray(eta_plane, dtype=float)
        u = u / np.linalg.norm(u)
        c = np.abs(V[:, :, 1] @ u)
        return np.degrees(np.arccos(np.clip(c, 0.0, 1.0)))


def chambers_estimate(d: DispersionRelation, eps_f, B, omega_tau=DEFAULT_OMEGA_TAU,
                      samples=64, seed=0, resolution=24, window_factor=WINDOW_FACTOR,
                      h_max=0.1) -> ChambersResult:
    """Relaxation-time estimate of the transverse tensor for each omega*tau.

    Start points are stratified by area over the level; each carries weight
    1/|v| and contributes its orbit-time average (over the period, or over a
    window of ``window_factor * max(omega_tau)``).  Failed samples are
    recorded in ``errors`` and dropped.
    """
    omega_tau = np.asarray(omega_tau, dtype=float)
    if np.any(omega_tau < 1.0):
        raise ValueError("omega_tau values must be >= 1")
    B = as_direction(B)
    rng = np.random.default_rng(seed)
    t = triangulate_level(d, eps_f, resolution)
    pts = sample_surface_points(t, samples, rng)
    window = window_factor * float(omega_tau.max())
    acc = np.zeros((len(omega_tau), 2, 2))
    wsum = 0.0
    errors = []
    drift = 0.0
    used = 0
    for i, p in enumerate(pts):
        try:
            seg = orbit_segments(d, eps_f, B, p, window, h_max=h_max)
        except (Stalled, StartNotOnSurface) as exc:
            errors.append({"sample": i, "error": str(exc)})
            continue
        w = 1.0 / np.linalg.norm(group_velocity(d, p))
        for k, g in enumerate(omega_tau):
            acc[k] += w * orbit_tensor(seg, g)
        wsum += w
        used += 1
        drift = max(drift, seg.max_drift)
    if used == 0:
        raise Stalled("every transport sample failed")
    return ChambersResult(omega_tau, acc / wsum, plane_frame(B), used, errors, drift)


# ---------------------------------------------------------------------------
# fits and export


@dataclass
class PowerLawFit:
    exponents: dict
    intercepts: dict
    residuals: dict  # rms of log10 residuals


def fit_power_law(omega_tau, tensors):
    """Log-log slopes of the tensor norm and of both symmetric eigenvalues.

    Needs at least 4 points spanning 1.5 decades.  Eigenvalues that are not
    positive at every point get no exponent.
    """
    x = np.asarray(omega_tau, dtype=float)
    tensors = np.asarray(tensors, dtype=float)
    if len(x) < 4 or np.log10(x.max() / x.min()) < 1.5:
        raise InsufficientRange(f"{len(x)} points over {np.log10(x.max() / x.min()):.2f} "
                                "decades; need >= 4 points over >= 1.5 decades")
    sym = 0.5 * (tensors + np.swapaxes(tensors, 1, 2))
    eig = np.linalg.eigvalsh(sym)[:, ::-1]
    series = {"norm": np.linalg.norm(tensors, axis=(1, 2)), "eig1": eig[:, 0],
              "eig2": eig[:, 1]}
    ex, ic, res = {}, {}, {}
    lx = np.log10(x)
    for name, y in series.items():
        if np.any(y <= 0):
            continue
        ly = np.log10(y)
        slope, icpt = np.polyfit(lx, ly, 1)
        ex[name] = float(slope)
        ic[name] = float(icpt)
        res[name] = float(np.sqrt(np.mean((ly - (slope * lx + icpt)) ** 2)))
    return PowerLawFit(ex, ic, res)


def write_sigma_csv(result: ChambersResult, path, eta_plane=None):
    """Columns: omega_tau, s11, s12, s22 (symmetric part), hall, eig1, eig2, kernel_angle_deg."""
    sym = result.symmetric()
    eig, _ = result.eigen()
    ang = (result.kernel_angles(eta_plane) if eta_plane is not None
           else np.full(len(result.omega_tau), np.nan))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega_tau", "s11", "s12", "s22", "hall", "eig1", "eig2",
                    "kernel_angle_deg"])
        for k, g in enumerate(result.omega_tau):
            hall = 0.5 * (result.tensors[k, 0, 1] - result.tensors[k, 1, 0])
            w.writerow([repr(float(g)), repr(float(sym[k, 0, 0])), repr(float(sym[k, 0, 1])),
                        repr(float(sym[k, 1, 1])), repr(float(hall)), repr(float(eig[k, 0])),
                        repr(float(eig[k, 1])), repr(float(ang[k]))])
