//! Dense convex quadratic programming by operator splitting.
//!
//! Solves `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u` with an ADMM iteration on a
//! Ruiz-equilibrated copy of the problem. Every `polish_every` iterations the
//! current iterate is used to guess the active set; the equality-constrained
//! KKT system for that guess is solved directly and accepted once it is primal
//! feasible with correctly signed multipliers, which certifies optimality to
//! machine precision.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub check_every: usize,
    pub adapt_every: usize,
    pub polish_every: usize,
    pub scaling_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            max_iter: 200_000,
            check_every: 10,
            adapt_every: 100,
            polish_every: 50,
            scaling_iters: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QpDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub diagnostics: QpDiagnostics,
}

const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const KKT_REG: f64 = 1e-9;
const POLISH_ROUNDS: usize = 25;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn is_equality(l: f64, u: f64) -> bool {
    l.is_finite() && u.is_finite() && (u - l).abs() <= 1e-12 * (1.0 + l.abs())
}

/// Residuals and their stopping thresholds for an unscaled iterate.
struct Residuals {
    primal: f64,
    dual: f64,
    eps_primal: f64,
    eps_dual: f64,
}

impl Residuals {
    fn compute(prob: &QpProblem, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, s: &QpSettings) -> Self {
        let ax = &prob.a * x;
        let px = &prob.p * x;
        let aty = prob.a.tr_mul(y);
        let primal = inf_norm(&(&ax - z));
        let dual = inf_norm(&(&px + &prob.q + &aty));
        let eps_primal = s.eps_abs + s.eps_rel * inf_norm(&ax).max(inf_norm(z));
        let eps_dual = s.eps_abs + s.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&prob.q));
        Residuals { primal, dual, eps_primal, eps_dual }
    }

    fn converged(&self) -> bool {
        self.primal <= self.eps_primal && self.dual <= self.eps_dual
    }
}

/// Diagonal equilibration `P~ = c D P D`, `A~ = E A D`.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn clamp_norm(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

fn equilibrate(prob: &QpProblem, iters: usize) -> (QpProblem, Scaling) {
    let (n, m) = (prob.p.nrows(), prob.a.nrows());
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let mut q = prob.q.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    for _ in 0..iters {
        let dt = DVector::from_fn(n, |j, _| {
            let col = p.column(j).amax().max(if m > 0 { a.column(j).amax() } else { 0.0 });
            1.0 / clamp_norm(col).sqrt()
        });
        let et = DVector::from_fn(m, |i, _| 1.0 / clamp_norm(a.row(i).amax()).sqrt());
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= dt[i] * dt[j];
            }
            for i in 0..m {
                a[(i, j)] *= et[i] * dt[j];
            }
            q[j] *= dt[j];
        }
        d.component_mul_assign(&dt);
        e.component_mul_assign(&et);

        let mean_col = if n > 0 { (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64 } else { 0.0 };
        let ct = 1.0 / clamp_norm(mean_col.max(q.amax()));
        p *= ct;
        q *= ct;
        c *= ct;
    }
    let l = prob.l.component_mul(&e);
    let u = prob.u.component_mul(&e);
    (QpProblem { p, q, a, l, u }, Scaling { d, e, c })
}

impl Scaling {
    fn unscale(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> [DVector<f64>; 3] {
        [
            x.component_mul(&self.d),
            z.component_div(&self.e),
            y.component_mul(&self.e) / self.c,
        ]
    }
}

fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, sigma: f64, rho: &DVector<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let n = p.nrows();
    let mut k = p + DMatrix::<f64>::identity(n, n) * sigma;
    let ra = DMatrix::from_fn(a.nrows(), n, |i, j| a[(i, j)] * rho[i]);
    k += a.tr_mul(&ra);
    k.cholesky().expect("P + sigma I + A' rho A is positive definite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    Inactive,
    Lower,
    Upper,
}

/// Solves the KKT system for an active-set guess, refines it against the
/// unregularized matrix, and returns `(x, y)` on success.
fn kkt_solve(prob: &QpProblem, active: &[Active]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.p.nrows();
    let rows: Vec<usize> = (0..active.len()).filter(|&i| active[i] != Active::Inactive).collect();
    let k = rows.len();
    let dim = n + k;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = prob.a[(i, j)];
            kkt[(j, n + r)] = prob.a[(i, j)];
        }
    }
    let mut rhs = DVector::<f64>::zeros(dim);
    for j in 0..n {
        rhs[j] = -prob.q[j];
    }
    for (r, &i) in rows.iter().enumerate() {
        rhs[n + r] = match active[i] {
            Active::Lower => prob.l[i],
            _ => prob.u[i],
        };
    }
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += KKT_REG;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= KKT_REG;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    let scale = 1.0 + inf_norm(&rhs);
    for _ in 0..50 {
        let res = &rhs - &kkt * &sol;
        if inf_norm(&res) <= 1e-14 * scale {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::<f64>::zeros(active.len());
    for (r, &i) in rows.iter().enumerate() {
        y[i] = sol[n + r];
    }
    Some((x, y))
}

/// Primal-dual active-set refinement starting from an ADMM iterate.
fn polish(prob: &QpProblem, z: &DVector<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = prob.a.nrows();
    let mut active: Vec<Active> = (0..m)
        .map(|i| {
            if is_equality(prob.l[i], prob.u[i]) {
                Active::Lower
            } else if z[i] - prob.l[i] < -y[i] {
                Active::Lower
            } else if prob.u[i] - z[i] < y[i] {
                Active::Upper
            } else {
                Active::Inactive
            }
        })
        .collect();
    let bound_scale = 1.0 + prob.l.iter().chain(prob.u.iter()).filter(|v| v.is_finite()).fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol_p = 1e-10 * bound_scale;
    for _ in 0..POLISH_ROUNDS {
        let (x, yk) = kkt_solve(prob, &active)?;
        let ax = &prob.a * &x;
        let tol_d = 1e-10 * (1.0 + inf_norm(&yk));
        let mut changed = false;
        for i in 0..m {
            if is_equality(prob.l[i], prob.u[i]) {
                continue;
            }
            match active[i] {
                Active::Inactive => {
                    if ax[i] < prob.l[i] - tol_p {
                        active[i] = Active::Lower;
                        changed = true;
                    } else if ax[i] > prob.u[i] + tol_p {
                        active[i] = Active::Upper;
                        changed = true;
                    }
                }
                Active::Lower => {
                    if yk[i] > tol_d {
                        active[i] = Active::Inactive;
                        changed = true;
                    }
                }
                Active::Upper => {
                    if yk[i] < -tol_d {
                        active[i] = Active::Inactive;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return Some((x, yk));
        }
    }
    None
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(l[i]).min(u[i]))
}

/// Runs ADMM with periodic polishing. `warm` supplies an initial primal point.
pub fn solve(prob: &QpProblem, settings: &QpSettings, warm: Option<&DVector<f64>>) -> QpSolution {
    let (n, m) = (prob.p.nrows(), prob.a.nrows());
    let (sp, sc) = equilibrate(prob, settings.scaling_iters);

    let mut x = match warm {
        Some(w) => w.component_div(&sc.d),
        None => DVector::zeros(n),
    };
    let mut z = project(&(&sp.a * &x), &sp.l, &sp.u);
    let mut y = DVector::<f64>::zeros(m);

    let mut rho_base = settings.rho;
    let rho_vec = |base: f64| {
        DVector::from_fn(m, |i, _| if is_equality(sp.l[i], sp.u[i]) { base * RHO_EQ_FACTOR } else { base })
    };
    let mut rho = rho_vec(rho_base);
    let mut chol = factor(&sp.p, &sp.a, settings.sigma, &rho);

    let mut diag = QpDiagnostics::default();
    let mut best: Option<(DVector<f64>, DVector<f64>)> = None;

    for iter in 1..=settings.max_iter {
        let rhs = &x * settings.sigma - &sp.q + sp.a.tr_mul(&(rho.component_mul(&z) - &y));
        let xt = chol.solve(&rhs);
        let zt = &sp.a * &xt;
        let x_next = &xt * settings.alpha + &x * (1.0 - settings.alpha);
        let z_relax = &zt * settings.alpha + &z * (1.0 - settings.alpha);
        let z_next = project(&(&z_relax + y.component_div(&rho)), &sp.l, &sp.u);
        y += rho.component_mul(&(&z_relax - &z_next));
        x = x_next;
        z = z_next;
        diag.iterations = iter;

        if iter % settings.check_every == 0 || iter == settings.max_iter {
            let [xu, zu, yu] = sc.unscale(&x, &z, &y);
            let res = Residuals::compute(prob, &xu, &zu, &yu, settings);
            diag.primal_residual = res.primal;
            diag.dual_residual = res.dual;
            if res.converged() {
                diag.converged = true;
                best = Some((xu, yu));
                break;
            }
        }

        if iter % settings.polish_every == 0 {
            let [_, zu, yu] = sc.unscale(&x, &z, &y);
            if let Some((xp, yp)) = polish(prob, &zu, &yu) {
                let zp = project(&(&prob.a * &xp), &prob.l, &prob.u);
                let res = Residuals::compute(prob, &xp, &zp, &yp, settings);
                if res.converged() {
                    diag.primal_residual = res.primal;
                    diag.dual_residual = res.dual;
                    diag.polished = true;
                    diag.converged = true;
                    best = Some((xp, yp));
                    break;
                }
            }
        }

        if m > 0 && iter % settings.adapt_every == 0 {
            let ax = &sp.a * &x;
            let px = &sp.p * &x;
            let aty = sp.a.tr_mul(&y);
            let rp = inf_norm(&(&ax - &z)) / inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
            let rd = inf_norm(&(&px + &sp.q + &aty))
                / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&sp.q)).max(1e-30);
            let ratio = rp / rd.max(1e-30);
            let next = if ratio > 10.0 {
                rho_base * 10.0
            } else if ratio < 0.1 {
                rho_base / 10.0
            } else {
                rho_base
            }
            .clamp(RHO_MIN, RHO_MAX);
            if next != rho_base {
                rho_base = next;
                rho = rho_vec(rho_base);
                chol = factor(&sp.p, &sp.a, settings.sigma, &rho);
            }
        }
    }

    let (x, y) = best.unwrap_or_else(|| {
        let [xu, _, yu] = sc.unscale(&x, &z, &y);
        (xu, yu)
    });
    QpSolution { x, y, diagnostics: diag }
}
