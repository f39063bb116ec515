"""Levenberg-Marquardt bundle adjustment over static points and spline trajectories.

Per camera the parameters are ``[f, d, w(3), C(3), alpha, beta]`` where ``w``
is a rotation increment applied on the left (``R <- exp([w]x) R``), ``C`` the
camera center and ``d`` the division coefficient in units of ``D_SCALE``. The
reference camera's pose and clock are frozen, and the scale camera's center
moves on a sphere around the reference center, which fixes the gauge.

Structure blocks (3D points, per-object control points) are eliminated with a
Schur complement; the reduced camera system is small and solved densely.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BADivergedError
from .geometry import Camera, Pose
from .scene import DynamicObject, ReconstructionMode, Scene
from .splines import TimeMap, basis_local

D_SCALE = 1e-7
NCP = 10  # local camera parameters
F_, D_, W_, C_, A_, B_ = 0, 1, slice(2, 5), slice(5, 8), 8, 9


@dataclass(frozen=True)
class ParameterPolicy:
    focal: bool = True
    d0: bool = True
    poses: bool = True
    points: bool = True
    splines: bool = True
    alpha: bool = False
    beta: bool = False
    dynamic: bool = True  # include trajectory residuals in the objective

    @classmethod
    def for_mode(cls, mode, fix_alpha: bool = False) -> "ParameterPolicy":
        mode = ReconstructionMode.parse(mode)
        if mode is ReconstructionMode.SO:
            return cls(splines=False, dynamic=False)
        if mode is ReconstructionMode.SD_UN:
            return cls()
        return cls(alpha=not fix_alpha, beta=True)


@dataclass
class LMConfig:
    max_iterations: int = 100
    ftol: float = 1e-10
    gtol: float = 1e-10
    lambda_init: float = 1e-3
    lambda_min: float = 1e-12
    lambda_max: float = 1e6
    huber_px: float | None = None
    cost_floor_px: float = 1e-9  # residuals this small count as exact


@dataclass
class BAReport:
    initial_cost: float
    final_cost: float
    iterations: int
    termination: str
    rms_static_px: float | None = None
    rms_dynamic_px: float | None = None
    mean_static_px: float | None = None
    mean_dynamic_px: float | None = None
    n_static: int = 0
    n_dynamic: int = 0
    n_behind_excluded: int = 0
    cost_history: list = field(default_factory=list)

    @property
    def mean_reprojection_px(self) -> float:
        n = self.n_static + self.n_dynamic
        if n == 0:
            return 0.0
        s = (self.mean_static_px or 0.0) * self.n_static + (self.mean_dynamic_px or 0.0) * self.n_dynamic
        return s / n

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["mean_reprojection_px"] = self.mean_reprojection_px
        return d


# ---------------------------------------------------------------------------
# projection with derivatives


def _skew_batch(v):
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


def _project(X, R, C, f, cc, d, jac: bool):
    """Per-row projection. Returns ``(q, z, Jcam(n,2,8), dq_dX(n,2,3))`` with camera
    columns ``[f, d_scaled, w(3), C(3)]``."""
    Xc = np.einsum("nij,nj->ni", R, X - C)
    z = Xc[:, 2]
    zs = np.where(np.abs(z) > 1e-300, z, 1e-300)
    m = Xc[:, :2] / zs[:, None]
    a = f[:, None] * m
    r2 = np.sum(a * a, axis=1)
    s = 1.0 + d * r2
    q = cc + a / s[:, None]
    if not jac:
        return q, z, None, None
    n = len(X)
    eye = np.eye(2)
    dq_da = eye / s[:, None, None] - (2 * d / s**2)[:, None, None] * a[:, :, None] * a[:, None, :]
    da_dXc = np.zeros((n, 2, 3))
    da_dXc[:, 0, 0] = da_dXc[:, 1, 1] = f / zs
    da_dXc[:, :, 2] = -(f / zs)[:, None] * m
    dq_dXc = dq_da @ da_dXc
    J = np.empty((n, 2, 8))
    J[:, :, 0] = np.einsum("nij,nj->ni", dq_da, m)
    J[:, :, 1] = -(a * (r2 / s**2)[:, None]) * D_SCALE
    J[:, :, 2:5] = -dq_dXc @ _skew_batch(Xc)
    dq_dX = dq_dXc @ R
    J[:, :, 5:8] = -dq_dX
    return q, z, J, dq_dX


# ---------------------------------------------------------------------------
# state


@dataclass
class _State:
    f: np.ndarray
    d: np.ndarray  # scaled
    R: np.ndarray
    C: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    X: np.ndarray
    ctrl: list

    def copy(self):
        return _State(self.f.copy(), self.d.copy(), self.R.copy(), self.C.copy(), self.alpha.copy(),
                      self.beta.copy(), self.X.copy(), [c.copy() for c in self.ctrl])


def _state_from_scene(scene: Scene) -> _State:
    cams = scene.cameras
    return _State(
        np.array([c.intrinsics.f for c in cams], float),
        np.array([c.intrinsics.d0 for c in cams], float) / D_SCALE,
        np.array([c.pose.R for c in cams], float),
        np.array([c.pose.center for c in cams], float),
        np.array([tm.alpha for tm in scene.time_maps], float),
        np.array([tm.beta for tm in scene.time_maps], float),
        scene.points.copy(),
        [o.curve.control_points.copy() for o in scene.objects])


def _tangent_basis(u):
    a = np.eye(3)[np.argmin(np.abs(u))]
    e1 = np.cross(u, a)
    e1 /= np.linalg.norm(e1)
    return np.column_stack([e1, np.cross(u, e1)])


class _Problem:
    def __init__(self, scene: Scene, policy: ParameterPolicy, cfg: LMConfig):
        self.scene = scene
        self.policy = policy
        self.cfg = cfg
        N = scene.n_cameras
        self.N = N
        self.ref = scene.reference
        self.sc = scene.scale_camera
        self.cc = np.array([c.intrinsics.center for c in scene.cameras])

        free = np.zeros((N, NCP), bool)
        free[:, F_] = policy.focal
        free[:, D_] = policy.d0
        free[:, W_] = policy.poses
        free[:, C_] = policy.poses
        free[:, A_] = policy.alpha
        free[:, B_] = policy.beta
        free[self.ref, 2:] = False
        if self.sc is not None and self.sc != self.ref and policy.poses:
            free[self.sc, 7] = False  # two tangent directions only
        self.cam_free = free
        self.cam_index = -np.ones((N, NCP), int)
        self.cam_index[free] = np.arange(free.sum())
        self.ncp = int(free.sum())

        st = _state_from_scene(scene)
        self.x0 = st
        # the observation sets are fixed here, at the start
        q, z = self._static_eval(st, False)[:2]
        self.s_sel = z > 0
        t = scene.dyn_times()
        use_dyn = policy.dynamic and len(scene.objects) > 0
        in_dom = scene.dynamic_index_set() if use_dyn else np.zeros(len(t), bool)
        self.d_sel = in_dom.copy()
        if in_dom.any():
            z = self._dynamic_eval(st, False, sel=in_dom)[1]
            self.d_sel[np.nonzero(in_dom)[0][z <= 0]] = False
        self.n_behind = int((~self.s_sel).sum() + (in_dom & ~self.d_sel).sum())
        self.si = np.nonzero(self.s_sel)[0]
        self.di = np.nonzero(self.d_sel)[0]

        self.opt_points = policy.points and len(scene.points) > 0
        self.opt_splines = policy.splines and len(scene.objects) > 0
        self.n_ctrl = [o.curve.n_ctrl for o in scene.objects]
        off = self.ncp + (3 * len(scene.points) if self.opt_points else 0)
        self.obj_offset = []
        for n in self.n_ctrl:
            self.obj_offset.append(off)
            off += 3 * n if self.opt_splines else 0
        self.n_params = off
        if self.sc is not None and self.sc != self.ref:
            v = st.C[self.sc] - st.C[self.ref]
            self.baseline = float(np.linalg.norm(v))
        else:
            self.baseline = None

    # ---- evaluation ------------------------------------------------------

    def _static_eval(self, st: _State, jac: bool, sel=None):
        sc = self.scene
        idx = np.arange(len(sc.static_cam)) if sel is None else sel
        cam = sc.static_cam[idx]
        q, z, J, dX = _project(st.X[sc.static_pt[idx]], st.R[cam], st.C[cam], st.f[cam], self.cc[cam],
                               st.d[cam] * D_SCALE, jac)
        return q - sc.static_uv[idx], z, J, dX

    def _dynamic_eval(self, st: _State, jac: bool, sel=None):
        sc = self.scene
        idx = np.arange(len(sc.dyn_cam)) if sel is None else (np.nonzero(sel)[0] if sel.dtype == bool else sel)
        cam = sc.dyn_cam[idx]
        obj = sc.dyn_obj[idx]
        frame = sc.dyn_frame[idx]
        tau = st.alpha[cam] * frame + st.beta[cam]
        n = len(idx)
        X = np.zeros((n, 3))
        dX = np.zeros((n, 3))
        first = np.zeros(n, int)
        B = np.zeros((n, 4))
        for k, o in enumerate(sc.objects):
            m = obj == k
            if not m.any():
                continue
            deg = o.curve.degree
            fi, Bk = basis_local(o.curve.knots, deg, tau[m])
            rows = fi[:, None] + np.arange(deg + 1)
            X[m] = np.einsum("na,nad->nd", Bk, st.ctrl[k][rows])
            first[m] = fi
            B[m, :deg + 1] = Bk
            if jac:
                _, Dk = basis_local(o.curve.knots, deg, tau[m], deriv=1)
                dX[m] = np.einsum("na,nad->nd", Dk, st.ctrl[k][rows])
        q, z, J, dq_dX = _project(X, st.R[cam], st.C[cam], st.f[cam], self.cc[cam], st.d[cam] * D_SCALE, jac)
        extra = None
        if jac:
            dq_dtau = np.einsum("nij,nj->ni", dq_dX, dX)
            extra = (dq_dtau, frame, first, B, dq_dX, obj)
        return q - sc.dyn_uv[idx], z, J, extra

    def residuals(self, st: _State):
        rs, zs = self._static_eval(st, False, self.si)[:2]
        rd, zd = (self._dynamic_eval(st, False, self.di)[:2] if len(self.di) else (np.zeros((0, 2)), np.zeros(0)))
        return rs, rd, bool(np.all(zs > 0) and np.all(zd > 0))

    def _weights(self, r):
        if self.cfg.huber_px is None:
            return np.ones(len(r))
        nr = np.linalg.norm(r, axis=1)
        k = self.cfg.huber_px
        return np.where(nr <= k, 1.0, k / np.maximum(nr, 1e-300))

    def _rho(self, r):
        e2 = np.sum(r * r, axis=1)
        if self.cfg.huber_px is None:
            return float(np.sum(e2))
        k = self.cfg.huber_px
        nr = np.sqrt(e2)
        return float(np.sum(np.where(nr <= k, e2, 2 * k * nr - k * k)))

    def costs(self, st: _State):
        rs, rd, ok = self.residuals(st)
        return self._rho(rs), self._rho(rd), ok

    # ---- local Jacobian blocks ------------------------------------------

    def _cam_cols(self, J8, st: _State, cam, dq_dtau=None, frame=None):
        """Full 10-column local camera Jacobian, frozen columns zeroed, scale camera projected."""
        n = len(cam)
        Jc = np.zeros((n, 2, NCP))
        Jc[:, :, :8] = J8
        if dq_dtau is not None:
            Jc[:, :, A_] = dq_dtau * frame[:, None]
            Jc[:, :, B_] = dq_dtau
        if self.baseline is not None:
            m = cam == self.sc
            if m.any():
                u = (st.C[self.sc] - st.C[self.ref]) / self.baseline
                E = self.baseline * _tangent_basis(u)
                Jt = Jc[m][:, :, 5:8] @ E
                sub = Jc[m]
                sub[:, :, 5:7] = Jt
                sub[:, :, 7] = 0.0
                Jc[m] = sub
        Jc *= self.cam_free[cam][:, None, :]
        return Jc

    def linearize(self, st: _State):
        """Residuals and the local Jacobian blocks of every included observation."""
        sc = self.scene
        rs, zs, J8, dX = self._static_eval(st, True, self.si)
        cam_s = sc.static_cam[self.si]
        Jcs = self._cam_cols(J8, st, cam_s)
        out = {"rs": rs, "Jcs": Jcs, "cam_s": cam_s, "pt": sc.static_pt[self.si], "Jp": dX}
        if len(self.di):
            rd, zd, J8d, ex = self._dynamic_eval(st, True, self.di)
            dq_dtau, frame, first, B, dq_dX, obj = ex
            cam_d = sc.dyn_cam[self.di]
            out.update(rd=rd, Jcd=self._cam_cols(J8d, st, cam_d, dq_dtau, frame), cam_d=cam_d, obj=obj,
                       first=first, Jo=dq_dX[:, :, None, :] * B[:, None, :, None])
        else:
            out.update(rd=np.zeros((0, 2)))
        return out

    # ---- normal equations and Schur solve --------------------------------

    def normal_equations(self, lin):
        N, ncp = self.N, self.ncp
        Ucam = np.zeros((N, NCP, NCP))
        gcam = np.zeros((N, NCP))
        blocks = []  # (kind, key, V, W(ncp, m), g(m))

        def cam_accumulate(Jc, r, cam, w):
            Jw = Jc * w[:, None, None]
            np.add.at(Ucam, cam, np.einsum("nri,nrj->nij", Jw, Jc))
            np.add.at(gcam, cam, np.einsum("nri,nr->ni", Jw, r))

        ws = self._weights(lin["rs"])
        cam_accumulate(lin["Jcs"], lin["rs"], lin["cam_s"], ws)
        if self.opt_points and len(lin["rs"]):
            L = len(self.scene.points)
            Jp, pt, cam = lin["Jp"], lin["pt"], lin["cam_s"]
            Jpw = Jp * ws[:, None, None]
            V = np.zeros((L, 3, 3))
            np.add.at(V, pt, np.einsum("nri,nrj->nij", Jpw, Jp))
            g = np.zeros((L, 3))
            np.add.at(g, pt, np.einsum("nri,nr->ni", Jpw, lin["rs"]))
            Wl = np.zeros((L, N, NCP, 3))
            np.add.at(Wl, (pt, cam), np.einsum("nri,nrj->nij", lin["Jcs"] * ws[:, None, None], Jp))
            blocks.append(("points", V, self._to_global_rows(Wl.reshape(L, N * NCP, 3)), g))
        if len(lin["rd"]):
            wd = self._weights(lin["rd"])
            cam_accumulate(lin["Jcd"], lin["rd"], lin["cam_d"], wd)
            if self.opt_splines:
                for k, n in enumerate(self.n_ctrl):
                    m = lin["obj"] == k
                    if not m.any():
                        continue
                    Jo = lin["Jo"][m].reshape(-1, 2, 12)
                    w = wd[m]
                    Jow = Jo * w[:, None, None]
                    cols = 3 * lin["first"][m][:, None] + np.arange(12)
                    V = np.zeros((3 * n, 3 * n))
                    np.add.at(V, (cols[:, :, None], cols[:, None, :]), np.einsum("nri,nrj->nij", Jow, Jo))
                    g = np.zeros(3 * n)
                    np.add.at(g, cols, np.einsum("nri,nr->ni", Jow, lin["rd"][m]))
                    Wl = np.zeros((N * NCP, 3 * n))
                    rows = lin["cam_d"][m][:, None] * NCP + np.arange(NCP)
                    Jc = lin["Jcd"][m] * w[:, None, None]
                    np.add.at(Wl, (rows[:, :, None], cols[:, None, :]), np.einsum("nri,nrj->nij", Jc, Jo))
                    blocks.append(("object", k, V, self._to_global_rows(Wl), g))
        U = np.zeros((ncp, ncp))
        gc = np.zeros(ncp)
        for i in range(N):
            idx = self.cam_index[i]
            f = idx >= 0
            U[np.ix_(idx[f], idx[f])] += Ucam[i][np.ix_(f, f)]
            gc[idx[f]] += gcam[i][f]
        return U, gc, blocks

    def _to_global_rows(self, Wl):
        flat_idx = self.cam_index.reshape(-1)
        f = flat_idx >= 0
        order = np.argsort(flat_idx[f])
        src = np.nonzero(f)[0][order]
        return Wl[..., src, :] if Wl.ndim == 3 else Wl[src]

    def gradient(self, U, gc, blocks):
        parts = [gc]
        for b in blocks:
            parts.append(b[-1].reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)

    def solve(self, U, gc, blocks, lam):
        """Damped step via the Schur complement on the camera block."""
        def damp(A):
            dg = np.diagonal(A, axis1=-2, axis2=-1)
            floor = 1e-12 * max(float(np.max(dg)) if dg.size else 1.0, 1e-300)
            return A + lam * _diag_embed(np.maximum(dg, floor))

        S = damp(U) if self.ncp else U
        rhs = -gc.copy()
        cache = []
        for b in blocks:
            if b[0] == "points":
                _, V, W, g = b
                Vi = np.linalg.inv(damp(V))
                Y = W @ Vi  # (L, ncp, 3)
                if self.ncp:
                    S = S - np.einsum("lia,lja->ij", Y, W)
                    rhs += np.einsum("lia,la->i", Y, g)
                cache.append(("points", Vi, W, g))
            else:
                _, k, V, W, g = b
                Vd = damp(V)
                cf = np.linalg.cholesky(Vd)
                Vi_W = _chol_solve(cf, W.T)  # (m, ncp)
                if self.ncp:
                    S = S - W @ Vi_W
                    rhs += Vi_W.T @ g
                cache.append(("object", cf, W, g))
        dc = np.linalg.solve(S, rhs) if self.ncp else np.zeros(0)
        ds = []
        for c in cache:
            if c[0] == "points":
                _, Vi, W, g = c
                ds.append(np.einsum("lab,lb->la", Vi, -g - np.einsum("lia,i->la", W, dc)).reshape(-1))
            else:
                _, cf, W, g = c
                ds.append(_chol_solve(cf, -g - W.T @ dc))
        return dc, ds

    # ---- parameter update ---------------------------------------------

    def retract(self, st: _State, dc, ds, blocks) -> _State:
        new = st.copy()
        N = self.N
        full = np.zeros((N, NCP))
        if self.ncp:
            full[self.cam_free] = dc[self.cam_index[self.cam_free]]
        new.f = st.f + full[:, F_]
        new.d = st.d + full[:, D_]
        for i in range(N):
            w = full[i, W_]
            if np.any(w):
                new.R[i] = Rotation.from_rotvec(w).as_matrix() @ st.R[i]
        new.C = st.C + full[:, C_]
        if self.baseline is not None and self.cam_free[self.sc, 5]:
            i = self.sc
            u = (st.C[i] - st.C[self.ref]) / self.baseline
            v = u + _tangent_basis(u) @ full[i, 5:7]
            new.C[i] = st.C[self.ref] + self.baseline * v / np.linalg.norm(v)
        new.alpha = st.alpha + full[:, A_]
        new.beta = st.beta + full[:, B_]
        for b, d in zip(blocks, ds):
            if b[0] == "points":
                new.X = st.X + d.reshape(-1, 3)
            else:
                k = b[1]
                new.ctrl[k] = st.ctrl[k] + d.reshape(-1, 3)
        return new

    def flat_delta(self, delta):
        """Split a flat parameter increment into camera and structure parts (for finite differences)."""
        dc = delta[:self.ncp]
        ds, blocks = [], []
        if self.opt_points:
            L = len(self.scene.points)
            ds.append(delta[self.ncp:self.ncp + 3 * L])
            blocks.append(("points",))
        if self.opt_splines:
            for k, n in enumerate(self.n_ctrl):
                o = self.obj_offset[k]
                ds.append(delta[o:o + 3 * n])
                blocks.append(("object", k))
        return dc, ds, blocks

    def to_scene(self, st: _State) -> Scene:
        sc = self.scene
        cams = []
        free = self.cam_free
        tms = []
        for i, c in enumerate(sc.cameras):
            # frozen groups are handed back verbatim, not rebuilt from the state
            intr = c.intrinsics
            if free[i, F_]:
                intr = intr.with_(f=float(st.f[i]))
            if free[i, D_]:
                intr = intr.with_(d0=float(st.d[i] * D_SCALE))
            moved = free[i, W_].any() or free[i, C_].any()
            pose = Pose.from_center(_orthonormalize(st.R[i]), st.C[i]) if moved else c.pose
            cams.append(Camera(intr, pose, c.stream))
            tm = sc.time_maps[i]
            if free[i, A_] or free[i, B_]:
                tm = TimeMap(float(st.alpha[i]), float(st.beta[i]))
            tms.append(tm)
        objs = [DynamicObject(o.object_id, o.curve.with_control_points(st.ctrl[k]))
                for k, o in enumerate(sc.objects)]
        return sc.copy(cameras=cams, time_maps=tms, points=st.X, objects=objs)

    def dense_jacobian(self, st: _State):
        lin = self.linearize(st)
        rows_s = 2 * len(lin["rs"])
        rows_d = 2 * len(lin["rd"])
        J = np.zeros((rows_s + rows_d, self.n_params))
        ci = self.cam_index

        def put_cam(r0, Jc, cam):
            for t in range(len(cam)):
                f = ci[cam[t]] >= 0
                J[r0 + 2 * t:r0 + 2 * t + 2, ci[cam[t]][f]] = Jc[t][:, f]

        put_cam(0, lin["Jcs"], lin["cam_s"])
        if self.opt_points:
            for t, k in enumerate(lin["pt"]):
                J[2 * t:2 * t + 2, self.ncp + 3 * k:self.ncp + 3 * k + 3] = lin["Jp"][t]
        if rows_d:
            put_cam(rows_s, lin["Jcd"], lin["cam_d"])
            if self.opt_splines:
                for t in range(len(lin["rd"])):
                    o = self.obj_offset[lin["obj"][t]] + 3 * lin["first"][t]
                    J[rows_s + 2 * t:rows_s + 2 * t + 2, o:o + 12] = lin["Jo"][t].reshape(2, 12)
        return J

    def stacked_residuals(self, st: _State):
        rs, rd, _ = self.residuals(st)
        return np.concatenate([rs.reshape(-1), rd.reshape(-1)])


def _diag_embed(d):
    out = np.zeros(d.shape + (d.shape[-1],))
    i = np.arange(d.shape[-1])
    out[..., i, i] = d
    return out


def _chol_solve(L, B):
    from scipy.linalg import solve_triangular
    y = solve_triangular(L, B, lower=True)
    return solve_triangular(L.T, y, lower=False)


def _orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        Q = -Q
    return Q


# ---------------------------------------------------------------------------
# public API


def cost_breakdown(scene: Scene, policy: ParameterPolicy | None = None, cfg: LMConfig | None = None):
    """``(static_cost, dynamic_cost)`` as sums of squared pixel residuals."""
    prob = _Problem(scene, policy or ParameterPolicy(), cfg or LMConfig())
    cs, cd, _ = prob.costs(prob.x0)
    return cs, cd


def _report(prob: _Problem, st: _State, c0, c1, it, reason, history):
    rs, rd, _ = prob.residuals(st)
    ns, nd = np.linalg.norm(rs, axis=1), np.linalg.norm(rd, axis=1)
    rms = lambda e: float(np.sqrt(np.mean(e**2))) if len(e) else None
    mean = lambda e: float(np.mean(e)) if len(e) else None
    return BAReport(c0, c1, it, reason, rms(ns), rms(nd), mean(ns), mean(nd), len(ns), len(nd),
                    prob.n_behind, history)


def solve_ba(scene: Scene, mode=None, policy: ParameterPolicy | None = None,
             cfg: LMConfig | None = None) -> tuple[Scene, BAReport]:
    """Minimize the squared reprojection error of all included observations.

    Never returns a scene with higher cost than the input. Raises
    ``BADivergedError`` only if no damping value reduces the cost at the first
    iteration while the input is not already stationary.
    """
    cfg = cfg or LMConfig()
    if policy is None:
        policy = ParameterPolicy.for_mode(mode if mode is not None else ReconstructionMode.SD_SC)
    scene.validate()
    prob = _Problem(scene, policy, cfg)
    if len(prob.si) + len(prob.di) == 0:
        raise BADivergedError("no residuals to optimize")
    st = prob.x0
    cs, cd, _ = prob.costs(st)
    cost = cs + cd
    c0 = cost
    history = [cost]
    lam = cfg.lambda_init
    reason = "max-iterations"
    it = 0
    floor = (cfg.cost_floor_px ** 2) * (len(prob.si) + len(prob.di))
    for it in range(cfg.max_iterations):
        if cost <= floor:
            reason = "converged"
            break
        lin = prob.linearize(st)
        U, gc, blocks = prob.normal_equations(lin)
        g = prob.gradient(U, gc, blocks)
        if g.size == 0 or np.max(np.abs(g)) < cfg.gtol:
            reason = "gradient"
            break
        accepted = False
        while lam <= cfg.lambda_max:
            try:
                dc, ds = prob.solve(U, gc, blocks, lam)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = prob.retract(st, dc, ds, blocks)
            cs_n, cd_n, ok = prob.costs(cand)
            new = cs_n + cd_n
            if ok and np.isfinite(new) and new < cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # a vanishing Gauss-Newton model decrease means we already sit at the minimum
            if _stationary(prob, U, gc, blocks, cost):
                reason = "stationary"
                break
            if it == 0:
                raise BADivergedError("no damping value decreased the cost")
            reason = "no-decrease"
            break
        rel = (cost - new) / max(cost, 1e-300)
        st, cost = cand, new
        history.append(cost)
        lam = max(lam / 10, cfg.lambda_min)
        if rel < cfg.ftol:
            reason = "relative-decrease"
            it += 1
            break
    else:
        it = cfg.max_iterations
    out = prob.to_scene(st) if cost < c0 else scene
    final = cost if cost < c0 else c0
    return out, _report(prob, st if cost < c0 else prob.x0, c0, final, it, reason, history)


def _stationary(prob, U, gc, blocks, cost):
    try:
        dc, ds = prob.solve(U, gc, blocks, 1e-12)
    except np.linalg.LinAlgError:
        return False
    g = prob.gradient(U, gc, blocks)
    delta = np.concatenate([dc] + [d.reshape(-1) for d in ds])
    # model decrease of the (almost) undamped step equals -g.delta
    pred = -float(g @ delta)
    return pred <= 1e-10 * cost + 1e-18


def numeric_jacobian_check(scene: Scene, policy: ParameterPolicy | None = None, h: float = 1e-6) -> float:
    """Worst relative deviation between the analytic and a central-difference Jacobian.

    Each column is compared in the infinity norm, relative to that column's
    magnitude (floored at 1).
    """
    policy = policy or ParameterPolicy(alpha=True, beta=True)
    prob = _Problem(scene, policy, LMConfig())
    st = prob.x0
    Ja = prob.dense_jacobian(st)
    worst = 0.0
    for k in range(prob.n_params):
        e = np.zeros(prob.n_params)
        e[k] = h
        cols = []
        for sgn in (1, -1):
            dc, ds, blocks = prob.flat_delta(sgn * e)
            cols.append(prob.stacked_residuals(prob.retract(st, dc, ds, blocks)))
        Jn = (cols[0] - cols[1]) / (2 * h)
        dev = np.max(np.abs(Ja[:, k] - Jn)) / max(np.max(np.abs(Jn)), 1.0)
        worst = max(worst, float(dev))
    return worst


def analytic_jacobian(scene: Scene, policy: ParameterPolicy | None = None):
    """Dense Jacobian over the full camera layout (10 columns per camera, frozen ones zero)
    followed by the free structure columns. Intended for small scenes and tests."""
    policy = policy or ParameterPolicy(alpha=True, beta=True)
    prob = _Problem(scene, policy, LMConfig())
    J = prob.dense_jacobian(prob.x0)
    full = np.zeros((J.shape[0], prob.N * NCP + prob.n_params - prob.ncp))
    src = prob.cam_index.reshape(-1)
    f = src >= 0
    full[:, np.nonzero(f)[0]] = J[:, src[f]]
    full[:, prob.N * NCP:] = J[:, prob.ncp:]
    return full, len(prob.si) * 2
