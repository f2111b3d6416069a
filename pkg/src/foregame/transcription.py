"""KKT transcription of an open-loop game into a square mixed
complementarity system.

Variables are packed as v = (r, z) with r = (X, U^0..U^{N-1}, mu^0..mu^{N-1})
and z the inequality multipliers:

* X: states x_1..x_{T-1}, stage-major (the initial state is data, stage 0 is
  never a decision variable),
* U^i: agent i's controls u_0..u_{T-1}, stage-major (the final control enters
  costs only),
* mu^i: agent i's multipliers on the dynamics equalities, one vector per
  transition s = 0..T-2.

The equation stack F = [c; h] uses the row order: stationarity in x by agent,
stationarity in each agent's own controls by agent, dynamics equalities, then
inequalities grouped by owner agent.  All groups are stage-major inside.

Two formulations of the shared dynamics are supported:

* duplicated (default): every agent optimizes over the full state sequence
  subject to the full joint dynamics and carries its own complete multiplier
  copy; the equality rows appear once (writing each agent's identical copy
  would make the Jacobian structurally singular) while the multipliers are
  duplicated per agent.
* deduplicated (``dedupe=True``): each agent owns only its physical substate
  and its own dynamics rows; stationarity in other agents' states is dropped,
  which is equivalent for decoupled per-agent dynamics and yields a smaller
  system.

Both yield a square system: rows(c) + rows(h) == dim(r) + dim(z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discounting import stage_weight_gradients, stage_weights
from .errors import GameConfigError
from .game import GameDefinition, Trajectory


@dataclass
class VariableLayout:
    """Index arithmetic for the packed variable vector and the row stack."""

    n: int
    T: int
    num_agents: int
    dedupe: bool
    x_dim: int
    u_offsets: tuple
    u_dims: tuple
    mu_offsets: tuple
    mu_dims: tuple
    eta_r: int
    lam_offsets: tuple      # within z
    lam_dims: tuple
    eta_z: int
    sx_offsets: tuple       # stationarity-x row offsets per agent
    sx_dims: tuple
    su_offsets: tuple
    eq_offsets: tuple       # per agent in dedupe mode, single entry otherwise
    eq_dims: tuple
    block_rows: tuple       # (block, owner, z_offset, n_rows) in h-row order

    @property
    def total(self):
        return self.eta_r + self.eta_z

    def x_slice(self):
        return slice(0, self.x_dim)

    def u_slice(self, i):
        return slice(self.u_offsets[i], self.u_offsets[i] + self.u_dims[i])

    def mu_slice(self, i):
        return slice(self.mu_offsets[i], self.mu_offsets[i] + self.mu_dims[i])

    def lam_slice(self, i):
        """Slice of agent i's multipliers within the z vector."""
        return slice(self.lam_offsets[i], self.lam_offsets[i] + self.lam_dims[i])


def build_layout(game: GameDefinition, dedupe: bool) -> VariableLayout:
    d = game.dims
    T, n, N = d.horizon, d.state_dim, d.num_agents
    x_dim = (T - 1) * n
    u_dims, u_offsets = [], []
    off = x_dim
    for i in range(N):
        u_offsets.append(off)
        u_dims.append(T * d.control_dims[i])
        off += u_dims[-1]
    mu_dims, mu_offsets = [], []
    for i in range(N):
        mu_offsets.append(off)
        mu_dims.append((T - 1) * (d.state_dims[i] if dedupe else n))
        off += mu_dims[-1]
    eta_r = off

    lam_dims, lam_offsets, block_rows = [], [], []
    zoff = 0
    for i in range(N):
        lam_offsets.append(zoff)
        size = 0
        for blk in game.constraints:
            if blk.owner != i:
                continue
            r = blk.n_rows(T)
            block_rows.append((blk, i, zoff + size, r))
            size += r
        lam_dims.append(size)
        zoff += size
    eta_z = zoff

    sx_offsets, sx_dims = [], []
    roff = 0
    for i in range(N):
        sx_offsets.append(roff)
        sx_dims.append((T - 1) * (d.state_dims[i] if dedupe else n))
        roff += sx_dims[-1]
    su_offsets = []
    for i in range(N):
        su_offsets.append(roff)
        roff += u_dims[i]
    if dedupe:
        eq_offsets, eq_dims = [], []
        for i in range(N):
            eq_offsets.append(roff)
            eq_dims.append((T - 1) * d.state_dims[i])
            roff += eq_dims[-1]
    else:
        eq_offsets, eq_dims = [roff], [(T - 1) * n]
        roff += (T - 1) * n
    if roff != eta_r:
        raise GameConfigError(
            f"transcription is not square: {roff} equality-side rows vs {eta_r} primals")
    return VariableLayout(
        n=n, T=T, num_agents=N, dedupe=dedupe, x_dim=x_dim,
        u_offsets=tuple(u_offsets), u_dims=tuple(u_dims),
        mu_offsets=tuple(mu_offsets), mu_dims=tuple(mu_dims), eta_r=eta_r,
        lam_offsets=tuple(lam_offsets), lam_dims=tuple(lam_dims), eta_z=eta_z,
        sx_offsets=tuple(sx_offsets), sx_dims=tuple(sx_dims),
        su_offsets=tuple(su_offsets), eq_offsets=tuple(eq_offsets),
        eq_dims=tuple(eq_dims), block_rows=tuple(block_rows),
    )


@dataclass
class KktResidual:
    stationarity_inf: float
    complementarity_inf: float

    @property
    def max(self):
        return max(self.stationarity_inf, self.complementarity_inf)


class MicpProblem:
    """Callable residuals and Jacobians of the transcribed game."""

    def __init__(self, game: GameDefinition, dedupe: bool = False):
        self.game = game
        self.dedupe = dedupe
        self.layout = build_layout(game, dedupe)

    # -- packing -------------------------------------------------------------

    def initial_point(self, states=None):
        """Zero-control rollout for states (or a given (T, n) state anchor,
        typically recorded tracks), zero controls and equality multipliers,
        unit inequality multipliers."""
        L = self.layout
        v = np.zeros(L.total)
        if states is None:
            v[L.x_slice()] = self.game.rollout(None).states[1:].ravel()
        else:
            states = np.asarray(states, float)
            if states.shape != (L.T, L.n):
                raise GameConfigError(
                    f"state anchor must have shape {(L.T, L.n)}, "
                    f"got {states.shape}")
            v[L.x_slice()] = states[1:].ravel()
        v[L.eta_r:] = 1.0
        return v

    def extract_trajectory(self, v) -> Trajectory:
        L = self.layout
        d = self.game.dims
        xs = np.empty((L.T, L.n))
        xs[0] = self.game.x1
        xs[1:] = v[L.x_slice()].reshape(L.T - 1, L.n)
        controls = tuple(
            v[L.u_slice(i)].reshape(L.T, d.control_dims[i]) for i in range(d.num_agents))
        return Trajectory(states=xs, controls=controls)

    def _unpack(self, v):
        L = self.layout
        d = self.game.dims
        xs = np.empty((L.T, L.n))
        xs[0] = self.game.x1
        xs[1:] = v[L.x_slice()].reshape(L.T - 1, L.n)
        us = [v[L.u_slice(i)].reshape(L.T, d.control_dims[i]) for i in range(d.num_agents)]
        z = v[L.eta_r:]
        return xs, us, z

    def _gammas(self, gamma):
        if gamma is None:
            return self.game.gammas()
        g = np.asarray(gamma, float)
        if g.shape != (self.game.dims.num_agents,):
            raise GameConfigError(f"gamma must have shape ({self.game.dims.num_agents},)")
        return g

    def _theta(self, theta):
        if theta is None:
            return self.game.theta
        t = np.asarray(theta, float)
        if t.shape != (self.game.theta_dim,):
            raise GameConfigError(f"theta must have shape ({self.game.theta_dim},)")
        return t

    def _dyn_eval(self, xs, us):
        """Per-agent batched step values and Jacobians along the iterate."""
        d = self.game.dims
        fs, As, Bs = [], [], []
        for i, model in enumerate(self.game.dynamics):
            sl = d.state_slice(i)
            fs.append(model.step_batch(xs[:-1, sl], us[i][:-1], d.dt))
            A, B = model.jacobians_batch(xs[:-1, sl], us[i][:-1], d.dt)
            As.append(A)
            Bs.append(B)
        return fs, As, Bs

    def _cost_gradients(self, xs, us, theta, i):
        """Raw (undiscounted) cost gradients of agent i at every stage."""
        L = self.layout
        gx = np.zeros((L.T, L.n))
        gu = np.zeros((L.T, us[i].shape[1]))
        for term in self.game.objectives[i].terms:
            term.add_grad_batch(xs, us[i], theta, gx, gu)
        return gx, gu

    def _blocks_of(self, i):
        return [(blk, zoff, nr) for blk, owner, zoff, nr in self.layout.block_rows
                if owner == i]

    # -- residuals -----------------------------------------------------------

    def stationarity_blocks(self, v, theta=None, gamma=None):
        """Per-agent (grad_x L_i, grad_u L_i) stacks, discount applied.

        grad_x covers the decision states x_1..x_{T-1}; in duplicated mode it
        spans the joint state, in dedupe mode only the agent's own substate.
        """
        theta = self._theta(theta)
        gammas = self._gammas(gamma)
        L = self.layout
        d = self.game.dims
        xs, us, z = self._unpack(v)
        _, As, Bs = self._dyn_eval(xs, us)
        out = []
        for i in range(d.num_agents):
            w = stage_weights(gammas[i], L.T)
            gx, gu = self._cost_gradients(xs, us, theta, i)
            gx *= w[:, None]
            gu *= w[:, None]
            for blk, zoff, nr in self._blocks_of(i):
                lam = z[zoff:zoff + nr]
                Jx, Ju = blk.jac_blocks(xs, us[i])
                if Jx is not None:
                    S = Jx.shape[0]
                    gx[L.T - S:] -= np.einsum("srn,sr->sn", Jx, lam.reshape(S, -1))
                if Ju is not None:
                    S = Ju.shape[0]
                    gu[L.T - S:] -= np.einsum("srm,sr->sm", Ju, lam.reshape(S, -1))
            sl_i = d.state_slice(i)
            if self.dedupe:
                mu = v[L.mu_slice(i)].reshape(L.T - 1, d.state_dims[i])
                stat_x = gx[1:, sl_i].copy()
                at_mu = np.einsum("sab,sa->sb", As[i], mu)
                stat_x -= mu
                stat_x[:-1] += at_mu[1:]
                stat_u = gu.copy()
                stat_u[:-1] += np.einsum("sam,sa->sm", Bs[i], mu)
            else:
                mu = v[L.mu_slice(i)].reshape(L.T - 1, L.n)
                stat_x = gx[1:].copy()
                at_mu = np.zeros((L.T - 1, L.n))
                for j in range(d.num_agents):
                    sl = d.state_slice(j)
                    at_mu[:, sl] = np.einsum("sab,sa->sb", As[j], mu[:, sl])
                stat_x -= mu
                stat_x[:-1] += at_mu[1:]
                stat_u = gu.copy()
                stat_u[:-1] += np.einsum("sam,sa->sm", Bs[i], mu[:, sl_i])
            out.append((stat_x, stat_u))
        return out

    def residual_c(self, v, theta=None, gamma=None):
        L = self.layout
        d = self.game.dims
        xs, us, _ = self._unpack(v)
        blocks = self.stationarity_blocks(v, theta, gamma)
        c = np.empty(L.eta_r)
        for i, (sx, su) in enumerate(blocks):
            c[L.sx_offsets[i]:L.sx_offsets[i] + L.sx_dims[i]] = sx.ravel()
            c[L.su_offsets[i]:L.su_offsets[i] + L.u_dims[i]] = su.ravel()
        defect = self.game.dynamics_residual(xs, us)
        if self.dedupe:
            for i in range(d.num_agents):
                sl = d.state_slice(i)
                c[L.eq_offsets[i]:L.eq_offsets[i] + L.eq_dims[i]] = defect[:, sl].ravel()
        else:
            c[L.eq_offsets[0]:L.eq_offsets[0] + L.eq_dims[0]] = defect.ravel()
        return c

    def residual_h(self, v, theta=None, gamma=None):
        L = self.layout
        xs, us, _ = self._unpack(v)
        h = np.empty(L.eta_z)
        for blk, owner, zoff, nr in L.block_rows:
            h[zoff:zoff + nr] = blk.values(xs, us[owner])
        return h

    def residual_F(self, v, theta=None, gamma=None):
        return np.concatenate([
            self.residual_c(v, theta, gamma),
            self.residual_h(v, theta, gamma),
        ])

    def kkt_residual(self, v, theta=None, gamma=None) -> KktResidual:
        c = self.residual_c(v, theta, gamma)
        h = self.residual_h(v, theta, gamma)
        z = v[self.layout.eta_r:]
        comp = float(np.max(np.abs(np.minimum(z, h)))) if len(h) else 0.0
        return KktResidual(
            stationarity_inf=float(np.max(np.abs(c))) if len(c) else 0.0,
            complementarity_inf=comp,
        )

    # -- Jacobians -----------------------------------------------------------

    def _cost_hessians(self, xs, us, theta, i):
        L = self.layout
        m = us[i].shape[1]
        Hxx = np.zeros((L.T, L.n, L.n))
        Huu = np.zeros((L.T, m, m))
        Hxu = np.zeros((L.T, L.n, m))
        for term in self.game.objectives[i].terms:
            term.add_hess_batch(xs, us[i], theta, Hxx, Huu, Hxu)
        return Hxx, Huu, Hxu

    def jac_v(self, v, theta=None, gamma=None):
        """Dense Jacobian of F = [c; h] w.r.t. the packed variables."""
        theta = self._theta(theta)
        gammas = self._gammas(gamma)
        L = self.layout
        d = self.game.dims
        T, n, N = L.T, L.n, d.num_agents
        xs, us, z = self._unpack(v)
        _, As, Bs = self._dyn_eval(xs, us)
        J = np.zeros((L.total, L.total))
        xoff = 0

        def xcol(s):
            return xoff + (s - 1) * n

        for i in range(N):
            sl_i = d.state_slice(i)
            n_i, m_i = d.state_dims[i], d.control_dims[i]
            w = stage_weights(gammas[i], T)
            Hxx, Huu, Hxu = self._cost_hessians(xs, us, theta, i)
            Kxx = np.zeros((T, n, n))       # multiplier-weighted constraint curvature
            for blk, zoff, nr in self._blocks_of(i):
                lam = z[zoff:zoff + nr]
                K = blk.curvature(xs, lam)
                if K is not None:
                    Kxx[T - K.shape[0]:] += K
            mu = v[L.mu_slice(i)].reshape(T - 1, n_i if self.dedupe else n)
            sxo, suo = L.sx_offsets[i], L.su_offsets[i]
            rps_x = n_i if self.dedupe else n   # stationarity-x rows per stage

            for s in range(1, T):
                rx = sxo + (s - 1) * rps_x
                W = w[s] * Hxx[s] - Kxx[s]
                if self.dedupe:
                    J[rx:rx + n_i, xcol(s):xcol(s) + n] += W[sl_i, :]
                else:
                    J[rx:rx + n, xcol(s):xcol(s) + n] += W
                # dynamics curvature and cross terms from the A^T mu product
                if s <= T - 2:
                    if self.dedupe:
                        agents = [i]
                    else:
                        agents = range(N)
                    for j in agents:
                        model = self.game.dynamics[j]
                        if model.is_linear:
                            continue
                        sl_j = d.state_slice(j)
                        mu_j = mu[s] if self.dedupe else mu[s, sl_j]
                        Dxx, Dxu, _ = model.hessian_contraction(
                            xs[s, sl_j], us[j][s], mu_j, d.dt)
                        if self.dedupe:
                            J[rx:rx + n_i, xcol(s) + sl_j.start:xcol(s) + sl_j.stop] += Dxx
                        else:
                            J[rx + sl_j.start:rx + sl_j.stop,
                              xcol(s) + sl_j.start:xcol(s) + sl_j.stop] += Dxx
                        ucol = L.u_offsets[j] + s * d.control_dims[j]
                        if self.dedupe:
                            J[rx:rx + n_i, ucol:ucol + d.control_dims[j]] += Dxu
                        else:
                            J[rx + sl_j.start:rx + sl_j.stop,
                              ucol:ucol + d.control_dims[j]] += Dxu
                # cost cross block vs own controls
                ucol_i = L.u_offsets[i] + s * m_i
                Hc = w[s] * Hxu[s]
                if np.any(Hc):
                    if self.dedupe:
                        J[rx:rx + n_i, ucol_i:ucol_i + m_i] += Hc[sl_i, :]
                    else:
                        J[rx:rx + n, ucol_i:ucol_i + m_i] += Hc
                # mu columns: -I at transition s-1, +A_s^T at transition s
                mu_off = L.mu_offsets[i]
                mu_stride = n_i if self.dedupe else n
                cprev = mu_off + (s - 1) * mu_stride
                if self.dedupe:
                    J[rx:rx + n_i, cprev:cprev + n_i] += -np.eye(n_i)
                    if s <= T - 2:
                        ccur = mu_off + s * mu_stride
                        J[rx:rx + n_i, ccur:ccur + n_i] += As[i][s].T
                else:
                    J[rx:rx + n, cprev:cprev + n] += -np.eye(n)
                    if s <= T - 2:
                        ccur = mu_off + s * mu_stride
                        for j in range(N):
                            sl_j = d.state_slice(j)
                            J[rx + sl_j.start:rx + sl_j.stop,
                              ccur + sl_j.start:ccur + sl_j.stop] += As[j][s].T

            for s in range(T):
                ru = suo + s * m_i
                ucol_i = L.u_offsets[i] + s * m_i
                J[ru:ru + m_i, ucol_i:ucol_i + m_i] += w[s] * Huu[s]
                if 1 <= s:
                    Hc = w[s] * Hxu[s]
                    if np.any(Hc):
                        J[ru:ru + m_i, xcol(s):xcol(s) + n] += Hc.T
                if s <= T - 2:
                    model = self.game.dynamics[i]
                    mu_i = mu[s] if self.dedupe else mu[s, sl_i]
                    if not model.is_linear:
                        Dxx, Dxu, Duu = model.hessian_contraction(
                            xs[s, sl_i], us[i][s], mu_i, d.dt)
                        J[ru:ru + m_i, ucol_i:ucol_i + m_i] += Duu
                        if s >= 1:
                            J[ru:ru + m_i,
                              xcol(s) + sl_i.start:xcol(s) + sl_i.stop] += Dxu.T
                    mu_off = L.mu_offsets[i]
                    mu_stride = n_i if self.dedupe else n
                    ccur = mu_off + s * mu_stride + (0 if self.dedupe else sl_i.start)
                    J[ru:ru + m_i, ccur:ccur + n_i] += Bs[i][s].T

            # inequality multiplier columns enter this agent's stationarity rows
            for blk, zoff, nr in self._blocks_of(i):
                Jx, Ju = blk.jac_blocks(xs, us[i])
                rps = nr // len(blk.stage_range(T))
                for k, s in enumerate(blk.stage_range(T)):
                    col = L.eta_r + zoff + k * rps
                    if Jx is not None and s >= 1:
                        rx = sxo + (s - 1) * rps_x
                        Jblk = Jx[k][:, sl_i] if self.dedupe else Jx[k]
                        J[rx:rx + rps_x, col:col + rps] += -Jblk.T
                    if Ju is not None:
                        ru = suo + s * m_i
                        J[ru:ru + m_i, col:col + rps] += -Ju[k].T

        # equality rows
        if self.dedupe:
            for i in range(N):
                sl_i = d.state_slice(i)
                n_i = d.state_dims[i]
                for s in range(T - 1):
                    r = L.eq_offsets[i] + s * n_i
                    J[r:r + n_i,
                      xcol(s + 1) + sl_i.start:xcol(s + 1) + sl_i.stop] += np.eye(n_i)
                    if s >= 1:
                        J[r:r + n_i,
                          xcol(s) + sl_i.start:xcol(s) + sl_i.stop] += -As[i][s]
                    ucol = L.u_offsets[i] + s * d.control_dims[i]
                    J[r:r + n_i, ucol:ucol + d.control_dims[i]] += -Bs[i][s]
        else:
            eqo = L.eq_offsets[0]
            for s in range(T - 1):
                r = eqo + s * n
                J[r:r + n, xcol(s + 1):xcol(s + 1) + n] += np.eye(n)
                for j in range(N):
                    sl_j = d.state_slice(j)
                    if s >= 1:
                        J[r + sl_j.start:r + sl_j.stop,
                          xcol(s) + sl_j.start:xcol(s) + sl_j.stop] += -As[j][s]
                    ucol = L.u_offsets[j] + s * d.control_dims[j]
                    J[r + sl_j.start:r + sl_j.stop,
                      ucol:ucol + d.control_dims[j]] += -Bs[j][s]

        # inequality rows
        for blk, owner, zoff, nr in L.block_rows:
            Jx, Ju = blk.jac_blocks(xs, us[owner])
            rps = nr // len(blk.stage_range(T))
            m_o = d.control_dims[owner]
            for k, s in enumerate(blk.stage_range(T)):
                r = L.eta_r + zoff + k * rps
                if Jx is not None:
                    J[r:r + rps, xcol(s):xcol(s) + n] += Jx[k]
                if Ju is not None:
                    ucol = L.u_offsets[owner] + s * m_o
                    J[r:r + rps, ucol:ucol + m_o] += Ju[k]
        return J

    def jac_params(self, v, theta=None, gamma=None):
        """Jacobian of F w.r.t. (theta, gamma) stacked column-wise."""
        theta = self._theta(theta)
        gammas = self._gammas(gamma)
        L = self.layout
        d = self.game.dims
        T, n, N, K = L.T, L.n, d.num_agents, self.game.theta_dim
        xs, us, _ = self._unpack(v)
        J = np.zeros((L.total, K + N))
        for i in range(N):
            sl_i = d.state_slice(i)
            m_i = d.control_dims[i]
            w = stage_weights(gammas[i], T)
            dw = stage_weight_gradients(gammas[i], T)
            if K:
                Hxt = np.zeros((T, n, K))
                Hut = np.zeros((T, m_i, K))
                for term in self.game.objectives[i].terms:
                    term.add_hess_theta_batch(xs, us[i], theta, Hxt, Hut)
                rps_x = d.state_dims[i] if self.dedupe else n
                for s in range(1, T):
                    rx = L.sx_offsets[i] + (s - 1) * rps_x
                    blk = w[s] * Hxt[s]
                    J[rx:rx + rps_x, :K] += blk[sl_i, :] if self.dedupe else blk
                for s in range(T):
                    ru = L.su_offsets[i] + s * m_i
                    J[ru:ru + m_i, :K] += w[s] * Hut[s]
            gx, gu = self._cost_gradients(xs, us, theta, i)
            col = K + i
            rps_x = d.state_dims[i] if self.dedupe else n
            for s in range(1, T):
                rx = L.sx_offsets[i] + (s - 1) * rps_x
                g = dw[s] * gx[s]
                J[rx:rx + rps_x, col] += g[sl_i] if self.dedupe else g
            for s in range(T):
                ru = L.su_offsets[i] + s * m_i
                J[ru:ru + m_i, col] += dw[s] * gu[s]
        return J

    # -- debugging -------------------------------------------------------------

    def dump_matrix_market(self, v, path_prefix, theta=None, gamma=None):
        """Write F and the sparsity of its variable Jacobian next to
        ``path_prefix`` as matrix-market files; returns the two paths."""
        from scipy.io import mmwrite
        from scipy.sparse import coo_matrix
        F = self.residual_F(v, theta, gamma)
        J = self.jac_v(v, theta, gamma)
        f_path = f"{path_prefix}_F.mtx"
        j_path = f"{path_prefix}_jac.mtx"
        mmwrite(f_path, coo_matrix(F.reshape(-1, 1)))
        mmwrite(j_path, coo_matrix(J))
        return f_path, j_path


def transcribe(game: GameDefinition, dedupe: bool = False) -> MicpProblem:
    """Build the square complementarity system for a game."""
    return MicpProblem(game, dedupe=dedupe)
