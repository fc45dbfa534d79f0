"""Primal-dual interior-point solver for smooth NLPs with box bounds.

Solves ``min f(w)  s.t.  c(w) = 0,  lb <= w <= ub`` with a log-barrier on the
bounds, Newton steps on the primal-dual system (sparse LU on the KKT matrix),
Hessian regularization driven by a positive-definiteness test of
``W + rho J^T J``, a filter line search with second-order corrections, and a
monotone barrier-parameter update.

The problem object provides ``n``, ``m``, ``lb``, ``ub`` and the methods
``objective``, ``gradient``, ``constraints``, ``jacobian`` (sparse ``m x n``)
and ``hessian(w, lam, obj_factor)`` (sparse, full symmetric ``n x n``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    constr_tol: float = 1e-9
    dual_tol: float = 1e-6
    compl_tol: float = 1e-7
    max_iter: int = 500
    mu_init: float = 0.1
    mu_min: float = 1e-11
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    tau_min: float = 0.99
    bound_push: float = 1e-2
    rho_inertia: float = 1e6
    max_soc: int = 4
    stall_iters: int = 40
    bound_relax: float = 1e-10


@dataclass
class NlpResult:
    x: np.ndarray
    lam: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    converged: bool
    status: str
    iterations: int
    objective: float
    constr_violation: float
    stationarity: float
    complementarity: float
    history: list = field(default_factory=list)


class NotConverged(RuntimeError):
    """Raised when the solver gives up; ``result`` carries the best iterate."""

    def __init__(self, message: str, result: NlpResult):
        super().__init__(message)
        self.result = result


# filter line-search constants (Waechter & Biegler defaults)
_GAMMA_THETA = 1e-5
_GAMMA_PHI = 1e-8
_ETA_PHI = 1e-4
_S_PHI = 2.3
_S_THETA = 1.1
_DELTA = 1.0


def _is_positive_definite(M) -> bool:
    """Diagonal-pivot sparse LU; all pivots positive iff M is SPD."""
    try:
        lu = spla.splu(
            M.tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError:
        return False
    return bool(np.all(lu.U.diagonal() > 0) and np.array_equal(lu.perm_r, lu.perm_c))


def _fraction_to_boundary(v, dv, tau):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


class _Solver:
    def __init__(self, problem, opt: SolverOptions):
        self.p = problem
        self.opt = opt
        self.n, self.m = problem.n, problem.m
        # relax bounds slightly so slacks never round to exactly zero
        lb = np.asarray(problem.lb, dtype=float)
        ub = np.asarray(problem.ub, dtype=float)
        self.lb = lb - opt.bound_relax * np.maximum(1.0, np.abs(lb))
        self.ub = ub + opt.bound_relax * np.maximum(1.0, np.abs(ub))
        self.iL = np.flatnonzero(np.isfinite(self.lb))
        self.iU = np.flatnonzero(np.isfinite(self.ub))
        self.delta_last = 0.0

    def slacks(self, w):
        return w[self.iL] - self.lb[self.iL], self.ub[self.iU] - w[self.iU]

    def barrier(self, w, f, mu):
        sL, sU = self.slacks(w)
        if np.any(sL <= 0) or np.any(sU <= 0):
            return np.inf
        return f - mu * (np.log(sL).sum() + np.log(sU).sum())

    def errors(self, w, lam, zL, zU, g, c, J, mu):
        n, m = self.n, self.m
        rd = g + J.T @ lam
        rd[self.iL] -= zL
        rd[self.iU] += zU
        sL, sU = self.slacks(w)
        comp = np.concatenate([sL * zL - mu, sU * zU - mu])
        zsum = np.abs(zL).sum() + np.abs(zU).sum()
        s_d = max(100.0, (np.abs(lam).sum() + zsum) / (m + n)) / 100.0
        s_c = max(100.0, zsum / max(n, 1)) / 100.0
        stat = float(np.max(np.abs(rd)) / s_d) if n else 0.0
        cv = float(np.max(np.abs(c))) if m else 0.0
        cp = float(np.max(np.abs(comp)) / s_c) if comp.size else 0.0
        return stat, cv, cp

    def newton_system(self, W, J, rhs):
        """Factor the KKT matrix with the smallest acceptable regularization."""
        n = self.n
        JtJ = (J.T @ J).tocsc() * self.opt.rho_inertia
        delta = 0.0
        for _ in range(40):
            Wd = W + delta * sp.identity(n) if delta else W
            if _is_positive_definite(Wd + JtJ):
                try:
                    lu = spla.splu(sp.bmat([[Wd, J.T], [J, None]], format="csc"), diag_pivot_thresh=0.1)
                    sol = lu.solve(rhs)
                    if np.all(np.isfinite(sol)):
                        return sol, lu, delta
                except RuntimeError:
                    pass
            if delta == 0.0:
                delta = 1e-4 if self.delta_last == 0 else max(1e-20, self.delta_last / 3)
            else:
                delta *= 100.0 if self.delta_last == 0 else 8.0
            if delta > 1e40:
                break
        return None, None, delta

    def restoration_step(self, w, c, J, filt):
        """Damped Gauss-Newton iterations on ``|c|^2`` until the filter
        accepts the point.

        Steps are affine-scaled by the bound slacks so that variables close to
        a bound move little, and each step keeps at least half of the
        remaining slack.
        """
        n = self.n
        theta0 = np.abs(c).sum()
        lam_lm = 1e-6
        for _ in range(25):
            sL, sU = self.slacks(w)
            dist = np.full(n, np.inf)
            dist[self.iL] = sL
            dist[self.iU] = np.minimum(dist[self.iU], sU)
            d2 = 1.0 + 1.0 / np.minimum(dist, 1e8) ** 2
            K = sp.bmat([[sp.diags(lam_lm * d2), J.T], [J, -sp.identity(self.m)]], format="csc")
            try:
                d = spla.splu(K).solve(np.concatenate([np.zeros(n), -c]))[:n]
            except RuntimeError:
                return None
            if not np.all(np.isfinite(d)):
                return None
            a = min(_fraction_to_boundary(sL, d[self.iL], 0.5), _fraction_to_boundary(sU, -d[self.iU], 0.5))
            theta = np.abs(c).sum()
            while a > 1e-8:
                wt = w + a * d
                ct = self.p.constraints(wt)
                if np.abs(ct).sum() < (1 - 1e-4 * a) * theta:
                    break
                a *= 0.5
            else:
                lam_lm *= 100.0
                if lam_lm > 1e6:
                    return None
                continue
            lam_lm = max(1e-8, lam_lm / 10.0)
            w, c = wt, ct
            J = self.p.jacobian(w).tocsr()
            th = np.abs(c).sum()
            if th <= 0.9 * theta0 and not any(th >= t_j for t_j, _ in filt):
                return w, c
        return None

    def run(self, w0) -> NlpResult:
        opt, p = self.opt, self.p
        n, m, iL, iU, lb, ub = self.n, self.m, self.iL, self.iU, self.lb, self.ub

        w = np.array(w0, dtype=float)
        span = np.where(np.isfinite(ub - lb), ub - lb, np.inf)
        push_l = np.minimum(opt.bound_push * np.maximum(1.0, np.abs(lb)), 0.5 * opt.bound_push * span)
        push_u = np.minimum(opt.bound_push * np.maximum(1.0, np.abs(ub)), 0.5 * opt.bound_push * span)
        w[iL] = np.maximum(w[iL], lb[iL] + push_l[iL])
        w[iU] = np.minimum(w[iU], ub[iU] - push_u[iU])

        mu = opt.mu_init
        zL = np.ones(iL.size)
        zU = np.ones(iU.size)
        c = p.constraints(w)
        g = p.gradient(w)
        J = p.jacobian(w).tocsr()
        f = p.objective(w)

        lam = np.zeros(m)
        try:
            K0 = sp.bmat([[sp.identity(n), J.T], [J, None]], format="csc")
            rd = g.copy()
            rd[iL] -= zL
            rd[iU] += zU
            sol = spla.splu(K0).solve(np.concatenate([-rd, np.zeros(m)]))
            if np.all(np.isfinite(sol)) and (m == 0 or np.max(np.abs(sol[n:])) < 1e3):
                lam = sol[n:]
        except RuntimeError:
            pass

        theta0 = np.abs(c).sum()
        theta_max = 1e4 * max(1.0, theta0)
        theta_min = 1e-4 * max(1.0, theta0)
        filt: list[tuple[float, float]] = []
        history = []
        best = None
        stall = 0
        f_low = np.inf
        status = "max_iter"
        converged = False
        it = 0

        for it in range(opt.max_iter):
            stat, cv, cp = self.errors(w, lam, zL, zU, g, c, J, 0.0)
            history.append((it, f, cv, stat, cp, mu))
            score = max(stat / opt.dual_tol, cv / opt.constr_tol, cp / opt.compl_tol)
            if best is None or score < best[0]:
                best = (score, w.copy(), lam.copy(), zL.copy(), zU.copy(), stat, cv, cp, f)
                stall = 0
            elif f < f_low - 1e-8 * max(1.0, abs(f)):
                stall = 0
            else:
                stall += 1
            f_low = min(f_low, f)
            if stat <= opt.dual_tol and cv <= opt.constr_tol and cp <= opt.compl_tol:
                converged = True
                status = "converged"
                break
            if stall > opt.stall_iters:
                status = "stalled"
                break

            while True:
                err_mu = max(self.errors(w, lam, zL, zU, g, c, J, mu))
                if err_mu > opt.kappa_eps * mu or mu <= opt.mu_min:
                    break
                mu = max(opt.mu_min, min(opt.kappa_mu * mu, mu ** opt.theta_mu))
                filt = []
            tau = max(opt.tau_min, 1.0 - mu)

            sL, sU = self.slacks(w)
            sigma = np.zeros(n)
            sigma[iL] += zL / sL
            sigma[iU] += zU / sU
            grad_phi = g.copy()
            grad_phi[iL] -= mu / sL
            grad_phi[iU] += mu / sU
            rhs = np.concatenate([-(grad_phi + J.T @ lam), -c])
            W = p.hessian(w, lam, 1.0).tocsr() + sp.diags(sigma)

            sol, lu, delta = self.newton_system(W, J, rhs)
            if sol is None:
                status = "kkt_failure"
                break
            if delta > 0:
                self.delta_last = delta
            dw, dlam = sol[:n], sol[n:]
            dzL = (mu - zL * sL - zL * dw[iL]) / sL
            dzU = (mu - zU * sU + zU * dw[iU]) / sU
            a_max = min(_fraction_to_boundary(sL, dw[iL], tau), _fraction_to_boundary(sU, -dw[iU], tau))
            a_z = min(_fraction_to_boundary(zL, dzL, tau), _fraction_to_boundary(zU, dzU, tau))

            theta = np.abs(c).sum()
            phi = self.barrier(w, f, mu)
            dphi = grad_phi @ dw
            if dphi < 0 and theta > 0:
                alpha_min = min(_GAMMA_THETA, _GAMMA_PHI * theta / -dphi,
                                _DELTA * theta**_S_THETA / (-dphi) ** _S_PHI)
            elif dphi < 0:
                alpha_min = _GAMMA_PHI
            else:
                alpha_min = _GAMMA_THETA
            alpha_min *= 0.05

            def acceptable(theta_t, phi_t, alpha):
                if not np.isfinite(phi_t) or theta_t > theta_max:
                    return None
                for th_j, ph_j in filt:
                    if theta_t >= th_j and phi_t >= ph_j:
                        return None
                switching = dphi < 0 and alpha * (-dphi) ** _S_PHI > _DELTA * theta**_S_THETA
                if theta <= theta_min and switching:
                    return "f" if phi_t <= phi + _ETA_PHI * alpha * dphi else None
                if theta_t <= (1 - _GAMMA_THETA) * theta or phi_t <= phi - _GAMMA_PHI * theta:
                    return "h"
                return None

            alpha = a_max
            accepted = None
            first = True
            while alpha >= alpha_min:
                wt = w + alpha * dw
                ft = p.objective(wt)
                ct = p.constraints(wt)
                theta_t = np.abs(ct).sum()
                accepted = acceptable(theta_t, self.barrier(wt, ft, mu), alpha)
                if accepted:
                    break
                if first and theta_t >= theta:
                    # second-order corrections
                    c_soc = alpha * c + ct
                    theta_old = theta
                    for _ in range(opt.max_soc):
                        r = rhs.copy()
                        r[n:] = -c_soc
                        ds = lu.solve(r)[:n]
                        a_soc = min(_fraction_to_boundary(sL, ds[iL], tau),
                                    _fraction_to_boundary(sU, -ds[iU], tau))
                        ws = w + a_soc * ds
                        fs = p.objective(ws)
                        cs = p.constraints(ws)
                        th_s = np.abs(cs).sum()
                        accepted = acceptable(th_s, self.barrier(ws, fs, mu), alpha)
                        if accepted:
                            wt, ft, ct = ws, fs, cs
                            break
                        if th_s > 0.99 * theta_old:
                            break
                        theta_old = th_s
                        c_soc = a_soc * c_soc + cs
                    if accepted:
                        break
                first = False
                alpha *= 0.5

            if not accepted:
                rest = self.restoration_step(w, c, J, filt)
                if rest is None:
                    status = "line_search_failure"
                    break
                filt.append(((1 - _GAMMA_THETA) * theta, phi - _GAMMA_PHI * theta))
                wt, ct = rest
                ft = p.objective(wt)
                alpha = 0.0
            elif accepted == "h":
                filt.append(((1 - _GAMMA_THETA) * theta, phi - _GAMMA_PHI * theta))

            log.debug("it=%d mu=%.1e a_max=%.2e alpha=%.2e |dw|=%.2e delta=%.1e %s",
                      it, mu, a_max, alpha, np.max(np.abs(dw)), delta, accepted)
            w, c, f = wt, ct, ft
            if alpha > 0:
                lam = lam + alpha * dlam
                zL = zL + a_z * dzL
                zU = zU + a_z * dzU
            sL, sU = self.slacks(w)
            kap = 1e10
            zL = np.clip(zL, mu / (kap * sL), kap * mu / sL)
            zU = np.clip(zU, mu / (kap * sU), kap * mu / sU)
            g = p.gradient(w)
            J = p.jacobian(w).tocsr()
            if not np.all(np.isfinite(w)):
                status = "diverged"
                break

        if converged:
            stat, cv, cp = self.errors(w, lam, zL, zU, g, c, J, 0.0)
            return NlpResult(w, lam, zL, zU, True, status, it, f, cv, stat, cp, history)
        _, bw, blam, bzL, bzU, stat, cv, cp, bf = best
        return NlpResult(bw, blam, bzL, bzU, False, status, it, bf, cv, stat, cp, history)


def solve(problem, w0, options: SolverOptions | None = None, raise_on_failure: bool = True) -> NlpResult:
    res = _Solver(problem, options or SolverOptions()).run(w0)
    if not res.converged and raise_on_failure:
        raise NotConverged(
            f"interior point stopped: {res.status} after {res.iterations} iterations "
            f"(constr={res.constr_violation:.2e}, stat={res.stationarity:.2e})",
            res,
        )
    return res
