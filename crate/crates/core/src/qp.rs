//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 z' H z + c' z
//!     subject to   A_eq z  = b_eq
//!                  A_in z <= b_in
//! ```
//!
//! with `H` symmetric positive semidefinite. Equalities are eliminated with a
//! column-pivoted Householder factorization of `A_eq'` (rank-deficient rows are
//! tolerated when consistent). The reduced inequality-constrained problem is
//! solved by the Goldfarb-Idnani dual active-set method. A singular reduced
//! Hessian is handled by proximal-point outer iterations so the returned point
//! is an optimum of the original problem, not of a regularized one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VshpError};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_a: DMatrix<f64>,
    pub eq_b: DVector<f64>,
    pub ineq_a: DMatrix<f64>,
    pub ineq_b: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem of dimension `n`.
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        QpProblem {
            hessian,
            gradient,
            eq_a: DMatrix::zeros(0, n),
            eq_b: DVector::zeros(0),
            ineq_a: DMatrix::zeros(0, n),
            ineq_b: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z)
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.dim();
        let ok = self.hessian.nrows() == n
            && self.hessian.ncols() == n
            && self.eq_a.ncols() == n
            && self.eq_a.nrows() == self.eq_b.len()
            && self.ineq_a.ncols() == n
            && self.ineq_a.nrows() == self.ineq_b.len();
        if ok {
            Ok(())
        } else {
            Err(VshpError::Config(format!(
                "QP dimension mismatch: H {}x{}, c {}, A_eq {}x{}, b_eq {}, A_in {}x{}, b_in {}",
                self.hessian.nrows(),
                self.hessian.ncols(),
                n,
                self.eq_a.nrows(),
                self.eq_a.ncols(),
                self.eq_b.len(),
                self.ineq_a.nrows(),
                self.ineq_a.ncols(),
                self.ineq_b.len()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

impl QpStatus {
    pub fn code(self) -> u8 {
        match self {
            QpStatus::Solved => 0,
            QpStatus::MaxIterations => 1,
            QpStatus::Infeasible => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub lambda_ineq: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Relative curvature scale; reduced Hessians with a Cholesky pivot below
    /// `100 * jitter * max(diag)` are solved by proximal iterations.
    pub jitter: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iterations: 500,
            tolerance: 1e-8,
            jitter: 1e-10,
        }
    }
}

pub fn solve_qp(problem: &QpProblem, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
    solve_qp_with(problem, warm_start, &QpSettings::default())
}

/// Scaled KKT residual of a primal-dual point.
///
/// Returns the maximum of the stationarity, primal feasibility, dual
/// feasibility and complementarity violations, each normalized by the
/// magnitude of the terms it compares (plus one).
pub fn kkt_residuals(
    problem: &QpProblem,
    z: &DVector<f64>,
    lambda_eq: &DVector<f64>,
    lambda_ineq: &DVector<f64>,
) -> f64 {
    let inf = |v: &DVector<f64>| v.amax();
    let hz = &problem.hessian * z;
    let eq_term = problem.eq_a.tr_mul(lambda_eq);
    let in_term = problem.ineq_a.tr_mul(lambda_ineq);
    let grad = &hz + &problem.gradient + &eq_term + &in_term;
    let stat_scale = 1.0
        + inf(&hz)
            .max(inf(&problem.gradient))
            .max(inf(&eq_term))
            .max(inf(&in_term));
    let stationarity = inf(&grad) / stat_scale;

    let az = &problem.eq_a * z;
    let eq_res = if az.is_empty() {
        0.0
    } else {
        inf(&(&az - &problem.eq_b)) / (1.0 + inf(&az).max(inf(&problem.eq_b)))
    };

    let (mut ineq_res, mut dual_res, mut comp) = (0.0_f64, 0.0_f64, 0.0_f64);
    if !problem.ineq_b.is_empty() {
        let ax = &problem.ineq_a * z;
        let row_scale = 1.0 + inf(&ax).max(inf(&problem.ineq_b));
        let lam_scale = 1.0 + inf(lambda_ineq);
        for i in 0..ax.len() {
            let slack = problem.ineq_b[i] - ax[i];
            ineq_res = ineq_res.max((-slack).max(0.0) / row_scale);
            dual_res = dual_res.max((-lambda_ineq[i]).max(0.0) / lam_scale);
            comp = comp.max((lambda_ineq[i] * slack).abs() / (lam_scale * row_scale));
        }
    }
    stationarity.max(eq_res).max(ineq_res).max(dual_res).max(comp)
}

pub fn solve_qp_with(
    problem: &QpProblem,
    warm_start: Option<&DVector<f64>>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    problem.check_dimensions()?;
    let n = problem.dim();
    if let Some(ws) = warm_start {
        if ws.len() != n {
            return Err(VshpError::Config(format!(
                "warm start has length {} but the problem has {n} variables",
                ws.len()
            )));
        }
    }

    let elim = EqualityElimination::new(&problem.eq_a);
    let infeasible = |z: DVector<f64>| {
        let lambda_eq = DVector::zeros(problem.eq_b.len());
        let lambda_ineq = DVector::zeros(problem.ineq_b.len());
        let kkt_residual = kkt_residuals(problem, &z, &lambda_eq, &lambda_ineq);
        QpSolution {
            objective: problem.objective(&z),
            z,
            lambda_eq,
            lambda_ineq,
            status: QpStatus::Infeasible,
            iterations: 0,
            kkt_residual,
        }
    };
    let z_p = match elim.particular(&problem.eq_b) {
        Some(z) => z,
        None => return Ok(infeasible(DVector::zeros(n))),
    };

    let basis = elim.nullspace();
    let k = basis.ncols();
    let hz_p = &problem.hessian * &z_p + &problem.gradient;
    let h_red = basis.tr_mul(&(&problem.hessian * &basis));
    let h_red = (&h_red + h_red.transpose()) * 0.5;
    let c_red = basis.tr_mul(&hz_p);
    let a_red = &problem.ineq_a * &basis;
    let b_red = &problem.ineq_b - &problem.ineq_a * &z_p;

    let preferred: Vec<bool> = match warm_start {
        Some(ws) => {
            let ax = &problem.ineq_a * ws;
            (0..ax.len())
                .map(|i| (problem.ineq_b[i] - ax[i]).abs() <= 1e-9 * (1.0 + problem.ineq_b[i].abs()))
                .collect()
        }
        None => vec![false; problem.ineq_b.len()],
    };

    let reduced = if k == 0 {
        // The equalities pin the point; only feasibility remains.
        let feasible = (0..b_red.len()).all(|i| b_red[i] >= -1e-9 * (1.0 + problem.ineq_b[i].abs()));
        GiOutcome {
            y: DVector::zeros(0),
            active: Vec::new(),
            multipliers: Vec::new(),
            iterations: 0,
            status: if feasible {
                QpStatus::Solved
            } else {
                QpStatus::Infeasible
            },
        }
    } else {
        solve_reduced(&h_red, &c_red, &a_red, &b_red, &preferred, settings)
    };

    let assemble = |y: &DVector<f64>, multipliers: &[f64]| {
        let z = &z_p + &basis * y;
        let mut lambda_ineq = DVector::zeros(problem.ineq_b.len());
        for (idx, &row) in reduced.active.iter().enumerate() {
            lambda_ineq[row] = multipliers[idx];
        }
        let partial = &problem.hessian * &z + &problem.gradient + problem.ineq_a.tr_mul(&lambda_ineq);
        let lambda_eq = elim.multipliers(&(-partial));
        let kkt_residual = kkt_residuals(problem, &z, &lambda_eq, &lambda_ineq);
        (z, lambda_eq, lambda_ineq, kkt_residual)
    };
    let mut best = assemble(&reduced.y, &reduced.multipliers);
    if reduced.status == QpStatus::Solved && k > 0 {
        if let Some((y, mult)) = polish(&h_red, &c_red, &a_red, &b_red, &reduced.active) {
            let candidate = assemble(&y, &mult);
            if candidate.3 < best.3 {
                best = candidate;
            }
        }
    }
    let (z, lambda_eq, lambda_ineq, kkt_residual) = best;
    Ok(QpSolution {
        objective: problem.objective(&z),
        z,
        lambda_eq,
        lambda_ineq,
        status: reduced.status,
        iterations: reduced.iterations,
        kkt_residual,
    })
}

/// Re-solves the equality-constrained problem on a fixed active set with the
/// unregularized Hessian. Returns `None` if the result is not primal-dual
/// admissible.
fn polish(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    active: &[usize],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let k = h.nrows();
    let w = active.len();
    let mut kkt = DMatrix::<f64>::zeros(k + w, k + w);
    kkt.view_mut((0, 0), (k, k)).copy_from(h);
    let mut rhs = DVector::<f64>::zeros(k + w);
    rhs.rows_mut(0, k).copy_from(&(-c));
    for (idx, &row) in active.iter().enumerate() {
        for col in 0..k {
            kkt[(k + idx, col)] = a[(row, col)];
            kkt[(col, k + idx)] = a[(row, col)];
        }
        rhs[k + idx] = b[row];
    }
    let sol = kkt
        .clone()
        .full_piv_lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))?;
    let residual = (&kkt * &sol - &rhs).amax();
    if residual > 1e-10 * (1.0 + rhs.amax()) {
        return None;
    }
    let y = sol.rows(0, k).into_owned();
    let mult: Vec<f64> = sol.rows(k, w).iter().copied().collect();
    let mult_scale = 1.0 + mult.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if mult.iter().any(|&v| v < -1e-10 * mult_scale) {
        return None;
    }
    let ay = a * &y;
    let feasible = (0..b.len()).all(|i| ay[i] <= b[i] + 1e-10 * (1.0 + b[i].abs()));
    feasible.then(|| (y, mult.into_iter().map(|v| v.max(0.0)).collect()))
}

fn solve_reduced(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    preferred: &[bool],
    settings: &QpSettings,
) -> GiOutcome {
    let k = h.nrows();
    let scale = (0..k).fold(1.0_f64, |m, i| m.max(h[(i, i)].abs()));
    let jitter = settings.jitter * scale;
    let Some(chol) = h.clone().cholesky() else {
        return proximal_loop(h, c, a, b, preferred, settings, scale);
    };
    let l = chol.l();
    let min_pivot = (0..k).fold(f64::INFINITY, |m, i| m.min(l[(i, i)] * l[(i, i)]));
    if min_pivot < 1e2 * jitter {
        return proximal_loop(h, c, a, b, preferred, settings, scale);
    }
    goldfarb_idnani(&l, c, a, b, preferred, settings.max_iterations)
}

const PROX_WEIGHT: f64 = 1e-4;
const PROX_MAX_OUTER: usize = 400;

fn proximal_loop(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    preferred: &[bool],
    settings: &QpSettings,
    scale: f64,
) -> GiOutcome {
    let k = h.nrows();
    let rho = PROX_WEIGHT * scale;
    let mut g = h.clone();
    for i in 0..k {
        g[(i, i)] += rho;
    }
    let l = match g.cholesky() {
        Some(ch) => ch.l(),
        None => {
            return GiOutcome {
                y: DVector::zeros(k),
                active: Vec::new(),
                multipliers: Vec::new(),
                iterations: 0,
                status: QpStatus::Infeasible,
            }
        }
    };
    let mut y = DVector::zeros(k);
    let mut prefer = preferred.to_vec();
    let mut total = 0;
    let mut last = None;
    for _ in 0..PROX_MAX_OUTER {
        let shifted = c - &y * rho;
        let out = goldfarb_idnani(
            &l,
            &shifted,
            a,
            b,
            &prefer,
            settings.max_iterations.saturating_sub(total).max(1),
        );
        total += out.iterations;
        if out.status != QpStatus::Solved {
            return GiOutcome {
                iterations: total,
                ..out
            };
        }
        let step = (&out.y - &y).amax();
        let y_scale = 1.0 + out.y.amax();
        y = out.y.clone();
        prefer.iter_mut().for_each(|p| *p = false);
        for &i in &out.active {
            prefer[i] = true;
        }
        let done = rho * step <= 1e-13 * scale * y_scale;
        last = Some(out);
        if done {
            break;
        }
    }
    let out = last.expect("at least one proximal iteration");
    GiOutcome {
        iterations: total,
        ..out
    }
}

struct GiOutcome {
    y: DVector<f64>,
    active: Vec<usize>,
    multipliers: Vec<f64>,
    iterations: usize,
    status: QpStatus,
}

/// Goldfarb-Idnani dual active-set method for
/// `min 1/2 y' G y + c' y  s.t.  A y <= b` with `G = L L'` positive definite.
fn goldfarb_idnani(
    l: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    preferred: &[bool],
    max_iterations: usize,
) -> GiOutcome {
    let n = c.len();
    let m = b.len();

    // J = L^{-T}
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor has a positive diagonal");
    let mut j_mat = l_inv.transpose();
    let mut r_mat = DMatrix::<f64>::zeros(n, n);
    let mut r_count = 0usize;

    // unconstrained minimizer -G^{-1} c = -J J' c
    let mut y = -(&j_mat * j_mat.tr_mul(c));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];

    let row_norm: Vec<f64> = (0..m).map(|i| a.row(i).norm()).collect();
    let tol_for = |i: usize, y: &DVector<f64>| 1e-12 * (1.0 + b[i].abs() + row_norm[i] * y.amax());
    let mut iterations = 0usize;

    let finish = |y: DVector<f64>, active: Vec<usize>, u: Vec<f64>, iterations: usize, status: QpStatus| GiOutcome {
        y,
        active,
        multipliers: u,
        iterations,
        status,
    };

    loop {
        // Step 1: pick the most violated constraint, warm-start rows first.
        let ay = a * &y;
        let mut pick: Option<(usize, f64, bool)> = None;
        for i in 0..m {
            if is_active[i] || row_norm[i] == 0.0 {
                continue;
            }
            let slack = b[i] - ay[i];
            if slack >= -tol_for(i, &y) {
                continue;
            }
            let score = slack / row_norm[i];
            let better = match pick {
                None => true,
                Some((_, best, best_pref)) => {
                    (preferred[i] && !best_pref) || (preferred[i] == best_pref && score < best)
                }
            };
            if better {
                pick = Some((i, score, preferred[i]));
            }
        }
        let Some((p, _, _)) = pick else {
            return finish(y, active, u, iterations, QpStatus::Solved);
        };
        // constraint p in >= form: n_p = -a_p, n_p' y >= -b_p
        let n_p: DVector<f64> = -a.row(p).transpose();
        let mut slack_p = b[p] - a.row(p).dot(&y.transpose());
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return finish(y, active, u, iterations - 1, QpStatus::MaxIterations);
            }
            let d = j_mat.tr_mul(&n_p);
            // primal direction z = J2 d2
            let mut z = DVector::<f64>::zeros(n);
            for col in r_count..n {
                let dc = d[col];
                if dc != 0.0 {
                    z.axpy(dc, &j_mat.column(col), 1.0);
                }
            }
            // dual direction r = R^{-1} d1
            let mut rvec = vec![0.0; r_count];
            for i in (0..r_count).rev() {
                let mut s = d[i];
                for jj in i + 1..r_count {
                    s -= r_mat[(i, jj)] * rvec[jj];
                }
                rvec[i] = s / r_mat[(i, i)];
            }

            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for jj in 0..r_count {
                if rvec[jj] > 0.0 {
                    let ratio = u_plus[jj] / rvec[jj];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_idx = Some(jj);
                    }
                }
            }
            let zn = z.dot(&n_p);
            let t2 = if zn.abs() > 1e-14 * row_norm[p] * row_norm[p] {
                -slack_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return finish(y, active, u, iterations, QpStatus::Infeasible);
            }

            for jj in 0..r_count {
                u_plus[jj] -= t * rvec[jj];
            }
            u_plus[r_count] += t;

            if t2.is_infinite() {
                let li = drop_idx.expect("finite partial step has a blocking constraint");
                is_active[active[li]] = false;
                active.remove(li);
                u_plus.remove(li);
                delete_constraint(&mut j_mat, &mut r_mat, &mut r_count, li);
                continue;
            }

            y.axpy(t, &z, 1.0);
            if t2 <= t1 {
                let mut d = j_mat.tr_mul(&n_p);
                add_constraint(&mut j_mat, &mut r_mat, &mut r_count, &mut d);
                active.push(p);
                is_active[p] = true;
                u = u_plus;
                break;
            }
            let li = drop_idx.expect("partial step has a blocking constraint");
            is_active[active[li]] = false;
            active.remove(li);
            u_plus.remove(li);
            delete_constraint(&mut j_mat, &mut r_mat, &mut r_count, li);
            slack_p = b[p] - a.row(p).dot(&y.transpose());
        }
    }
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(j_mat: &mut DMatrix<f64>, c0: usize, c1: usize, cs: f64, sn: f64) {
    let n = j_mat.nrows();
    for row in 0..n {
        let x = j_mat[(row, c0)];
        let yv = j_mat[(row, c1)];
        j_mat[(row, c0)] = cs * x + sn * yv;
        j_mat[(row, c1)] = -sn * x + cs * yv;
    }
}

fn add_constraint(j_mat: &mut DMatrix<f64>, r_mat: &mut DMatrix<f64>, r_count: &mut usize, d: &mut DVector<f64>) {
    let n = d.len();
    let r = *r_count;
    for i in (r + 1..n).rev() {
        if d[i] == 0.0 {
            continue;
        }
        let (cs, sn, h) = givens(d[i - 1], d[i]);
        d[i - 1] = h;
        d[i] = 0.0;
        rotate_columns(j_mat, i - 1, i, cs, sn);
    }
    for i in 0..=r {
        r_mat[(i, r)] = d[i];
    }
    *r_count += 1;
}

fn delete_constraint(j_mat: &mut DMatrix<f64>, r_mat: &mut DMatrix<f64>, r_count: &mut usize, l: usize) {
    let r = *r_count;
    for col in l..r - 1 {
        for row in 0..r {
            r_mat[(row, col)] = r_mat[(row, col + 1)];
        }
    }
    for row in 0..r {
        r_mat[(row, r - 1)] = 0.0;
    }
    for j in l..r - 1 {
        let (cs, sn, h) = givens(r_mat[(j, j)], r_mat[(j + 1, j)]);
        r_mat[(j, j)] = h;
        r_mat[(j + 1, j)] = 0.0;
        for col in j + 1..r - 1 {
            let x = r_mat[(j, col)];
            let yv = r_mat[(j + 1, col)];
            r_mat[(j, col)] = cs * x + sn * yv;
            r_mat[(j + 1, col)] = -sn * x + cs * yv;
        }
        rotate_columns(j_mat, j, j + 1, cs, sn);
    }
    *r_count -= 1;
}

/// Column-pivoted Householder factorization `A_eq' P = Q R` used to split the
/// variable space into the range of `A_eq'` and its nullspace.
struct EqualityElimination {
    n: usize,
    rank: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    perm: Vec<usize>,
}

impl EqualityElimination {
    fn new(eq_a: &DMatrix<f64>) -> Self {
        let n = eq_a.ncols();
        let p = eq_a.nrows();
        let mut m = eq_a.transpose();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut norms: Vec<f64> = (0..p).map(|j| m.column(j).norm_squared()).collect();
        let max_norm = norms.iter().fold(0.0_f64, |a, &b| a.max(b)).sqrt();
        let tol = 1e-12 * max_norm.max(1e-300);
        let mut reflectors: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut rank = 0;
        for k in 0..p.min(n) {
            // exact remaining norms to avoid drift in the downdated values
            for j in k..p {
                norms[j] = m.column(j).rows(k, n - k).norm_squared();
            }
            let (jmax, nmax) = (k..p).fold((k, -1.0), |acc, j| if norms[j] > acc.1 { (j, norms[j]) } else { acc });
            if nmax.sqrt() <= tol {
                break;
            }
            m.swap_columns(k, jmax);
            perm.swap(k, jmax);
            norms.swap(k, jmax);

            let x: DVector<f64> = m.column(k).rows(k, n - k).clone_owned();
            let alpha = -x[0].signum_or_one() * x.norm();
            let mut v = x;
            v[0] -= alpha;
            let vnorm2 = v.norm_squared();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            for j in k..p {
                let mut col = m.column_mut(j);
                let mut col = col.rows_mut(k, n - k);
                let s = beta * v.dot(&col);
                col.axpy(-s, &v, 1.0);
            }
            reflectors.push((v, beta));
            rank += 1;
        }

        // Q = H_0 H_1 ... H_{rank-1}
        let mut q = DMatrix::<f64>::identity(n, n);
        for (k, (v, beta)) in reflectors.iter().enumerate().rev() {
            for j in 0..n {
                let mut col = q.column_mut(j);
                let mut col = col.rows_mut(k, n - k);
                let s = beta * v.dot(&col);
                if s != 0.0 {
                    col.axpy(-s, v, 1.0);
                }
            }
        }
        let r = m.rows(0, rank).into_owned();
        EqualityElimination { n, rank, q, r, perm }
    }

    /// Least-norm solution of `A_eq z = b`, or `None` when inconsistent.
    fn particular(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let p = b.len();
        let rank = self.rank;
        let mut w = DVector::<f64>::zeros(rank);
        for j in 0..rank {
            let mut s = b[self.perm[j]];
            for i in 0..j {
                s -= self.r[(i, j)] * w[i];
            }
            w[j] = s / self.r[(j, j)];
        }
        let b_scale = 1.0 + b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for j in rank..p {
            let mut s = 0.0;
            for i in 0..rank {
                s += self.r[(i, j)] * w[i];
            }
            if (s - b[self.perm[j]]).abs() > 1e-9 * b_scale {
                return None;
            }
        }
        Some(self.q.columns(0, rank) * w)
    }

    fn nullspace(&self) -> DMatrix<f64> {
        self.q.columns(self.rank, self.n - self.rank).into_owned()
    }

    /// Least-squares `lambda` with `A_eq' lambda = rhs` (rhs projected on the range).
    fn multipliers(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let p = self.perm.len();
        let rank = self.rank;
        let t = self.q.columns(0, rank).tr_mul(rhs);
        let mut mu = DVector::<f64>::zeros(rank);
        for i in (0..rank).rev() {
            let mut s = t[i];
            for j in i + 1..rank {
                s -= self.r[(i, j)] * mu[j];
            }
            mu[i] = s / self.r[(i, i)];
        }
        let mut lambda = DVector::<f64>::zeros(p);
        for j in 0..rank {
            lambda[self.perm[j]] = mu[j];
        }
        lambda
    }
}

trait SignumOrOne {
    fn signum_or_one(self) -> f64;
}

impl SignumOrOne for f64 {
    fn signum_or_one(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn bound_constrained_scalar() {
        // min 1/2 x^2 s.t. x >= 1
        let mut p = QpProblem::unconstrained(mat(1, 1, &[1.0]), vec(&[0.0]));
        p.ineq_a = mat(1, 1, &[-1.0]);
        p.ineq_b = vec(&[-1.0]);
        let sol = solve_qp(&p, None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
        assert!((sol.lambda_ineq[0] - 1.0).abs() < 1e-9);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn unconstrained_minimum() {
        // min 1/2 (x - 2)^2
        let p = QpProblem::unconstrained(mat(1, 1, &[1.0]), vec(&[-2.0]));
        let sol = solve_qp(&p, None).unwrap();
        assert!((sol.z[0] - 2.0).abs() < 1e-9);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn perturbed_point_has_visible_residual() {
        let mut p = QpProblem::unconstrained(mat(1, 1, &[1.0]), vec(&[0.0]));
        p.ineq_a = mat(1, 1, &[-1.0]);
        p.ineq_b = vec(&[-1.0]);
        let r = kkt_residuals(&p, &vec(&[1.001]), &vec(&[]), &vec(&[1.0]));
        assert!(r >= 1e-4, "{r}");
        let exact = kkt_residuals(&p, &vec(&[1.0]), &vec(&[]), &vec(&[1.0]));
        assert!(exact <= 1e-12);
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        let p = QpProblem::unconstrained(DMatrix::zeros(3, 3), DVector::zeros(3));
        for z in [vec(&[0.0, 0.0, 0.0]), vec(&[1.0, -5.0, 3.0])] {
            assert_eq!(kkt_residuals(&p, &z, &vec(&[]), &vec(&[])), 0.0);
        }
    }

    #[test]
    fn equality_and_inequality_mix() {
        // min x^2 + y^2 s.t. x + y = 1, x <= 0.2
        let mut p = QpProblem::unconstrained(mat(2, 2, &[2.0, 0.0, 0.0, 2.0]), vec(&[0.0, 0.0]));
        p.eq_a = mat(1, 2, &[1.0, 1.0]);
        p.eq_b = vec(&[1.0]);
        p.ineq_a = mat(1, 2, &[1.0, 0.0]);
        p.ineq_b = vec(&[0.2]);
        let sol = solve_qp(&p, None).unwrap();
        assert!((sol.z[0] - 0.2).abs() < 1e-12);
        assert!((sol.z[1] - 0.8).abs() < 1e-12);
        // 2y + lambda_eq = 0 -> lambda_eq = -1.6; 2x + lambda_eq + mu = 0 -> mu = 1.2
        assert!((sol.lambda_eq[0] + 1.6).abs() < 1e-9);
        assert!((sol.lambda_ineq[0] - 1.2).abs() < 1e-9);
        assert!(sol.kkt_residual < 1e-9);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(3, 3), vec(&[1.0, 1.0, 1.0]));
        p.eq_a = mat(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        p.eq_b = vec(&[1.0, 2.0]);
        let sol = solve_qp(&p, None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.z[0] + sol.z[1] - 1.0).abs() < 1e-12);
        assert!(sol.kkt_residual < 1e-10);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), vec(&[0.0, 0.0]));
        p.eq_a = mat(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        p.eq_b = vec(&[1.0, 2.0]);
        assert_eq!(solve_qp(&p, None).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn contradictory_inequalities_are_infeasible() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(1, 1), vec(&[0.0]));
        p.ineq_a = mat(2, 1, &[1.0, -1.0]);
        p.ineq_b = vec(&[0.0, -1.0]);
        assert_eq!(solve_qp(&p, None).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn semidefinite_hessian_with_box() {
        // min -x - y + 1/2 x^2 s.t. 0 <= y <= 3 (y has no curvature)
        let mut p = QpProblem::unconstrained(mat(2, 2, &[1.0, 0.0, 0.0, 0.0]), vec(&[-1.0, -1.0]));
        p.ineq_a = mat(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        p.ineq_b = vec(&[3.0, 0.0]);
        let sol = solve_qp(&p, None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.z[0] - 1.0).abs() < 1e-8, "{}", sol.z);
        assert!((sol.z[1] - 3.0).abs() < 1e-8, "{}", sol.z);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), vec(&[0.0, 0.0]));
        p.ineq_a = mat(1, 3, &[1.0, 0.0, 0.0]);
        p.ineq_b = vec(&[1.0]);
        assert!(solve_qp(&p, None).is_err());
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let mut p = QpProblem::unconstrained(mat(2, 2, &[2.0, 0.5, 0.5, 1.0]), vec(&[-4.0, -3.0]));
        p.ineq_a = mat(3, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 0.0]);
        p.ineq_b = vec(&[1.0, 0.5, 0.0]);
        let cold = solve_qp(&p, None).unwrap();
        let warm = solve_qp(&p, Some(&cold.z)).unwrap();
        assert!((cold.objective - warm.objective).abs() < 1e-12);
    }
}
