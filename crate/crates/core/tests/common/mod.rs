#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vshp_core::qp::QpProblem;

pub fn seed() -> u64 {
    std::env::var("VSHP_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_241_016)
}

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed())
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Random QP together with the oracle family that can certify it.
pub enum RandomQp {
    /// PSD (possibly singular) Hessian, box constraints only.
    Box {
        problem: QpProblem,
        lo: DVector<f64>,
        hi: DVector<f64>,
    },
    /// Positive definite Hessian with general inequalities and equalities.
    General { problem: QpProblem },
}

impl RandomQp {
    pub fn problem(&self) -> &QpProblem {
        match self {
            RandomQp::Box { problem, .. } | RandomQp::General { problem } => problem,
        }
    }

    pub fn oracle_objective(&self) -> f64 {
        match self {
            RandomQp::Box { problem, lo, hi } => box_oracle(problem, lo, hi),
            RandomQp::General { problem } => dual_oracle(problem),
        }
    }
}

pub fn random_qp(rng: &mut ChaCha8Rng, index: usize) -> RandomQp {
    let n = rng.random_range(2..=20);
    if index.is_multiple_of(2) {
        let rank = rng.random_range(1..=n);
        let m = rand_mat(rng, n, rank);
        let hessian = &m * m.transpose() * 2.0;
        let gradient = rand_vec(rng, n) * 3.0;
        let lo = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
        let hi = DVector::from_fn(n, |i, _| lo[i] + rng.random_range(0.1..3.0));
        let mut ineq_a = DMatrix::zeros(2 * n, n);
        let mut ineq_b = DVector::zeros(2 * n);
        for i in 0..n {
            ineq_a[(i, i)] = 1.0;
            ineq_b[i] = hi[i];
            ineq_a[(n + i, i)] = -1.0;
            ineq_b[n + i] = -lo[i];
        }
        let problem = QpProblem {
            hessian,
            gradient,
            eq_a: DMatrix::zeros(0, n),
            eq_b: DVector::zeros(0),
            ineq_a,
            ineq_b,
        };
        RandomQp::Box { problem, lo, hi }
    } else {
        let m = rand_mat(rng, n, n);
        let mut hessian = &m * m.transpose();
        for i in 0..n {
            hessian[(i, i)] += 0.5;
        }
        let gradient = rand_vec(rng, n) * 3.0;
        let m_in = rng.random_range(1..=30);
        let p_eq = rng.random_range(0..=(n / 3));
        let z0 = rand_vec(rng, n);
        let ineq_a = rand_mat(rng, m_in, n);
        let ineq_b = &ineq_a * &z0 + DVector::from_fn(m_in, |_, _| rng.random_range(0.0..0.5));
        let eq_a = rand_mat(rng, p_eq, n);
        let eq_b = &eq_a * &z0;
        RandomQp::General {
            problem: QpProblem {
                hessian,
                gradient,
                eq_a,
                eq_b,
                ineq_a,
                ineq_b,
            },
        }
    }
}

fn spectral_bound(m: &DMatrix<f64>) -> f64 {
    // power iteration on a symmetric PSD matrix, inflated for safety
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..500 {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 1.0;
        }
        lam = norm;
        v = w / norm;
    }
    lam * 1.05 + 1e-12
}

/// Accelerated projected gradient on the primal of a box-constrained QP.
pub fn box_oracle(p: &QpProblem, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    let lip = spectral_bound(&p.hessian);
    let project = |z: DVector<f64>| DVector::from_fn(z.len(), |i, _| z[i].clamp(lo[i], hi[i]));
    let mut x = project(DVector::zeros(p.dim()));
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut best = p.objective(&x);
    for k in 0..200_000 {
        let grad = &p.hessian * &y + &p.gradient;
        let x_new = project(&y - grad / lip);
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_new;
        y = &x_new + (&x_new - &x) * momentum;
        let f_new = p.objective(&x_new);
        if f_new > best {
            // adaptive restart
            y = x_new.clone();
            t = 1.0;
        } else {
            t = t_new;
        }
        let moved = (&x_new - &x).amax();
        x = x_new;
        best = best.min(f_new);
        if k > 100 && moved < 1e-15 {
            break;
        }
    }
    best
}

/// Accelerated gradient ascent on the dual of a strictly convex QP.
pub fn dual_oracle(p: &QpProblem) -> f64 {
    let h_inv = p.hessian.clone().try_inverse().expect("positive definite Hessian");
    let m_in = p.ineq_b.len();
    let p_eq = p.eq_b.len();
    let n = p.dim();
    let mut stacked = DMatrix::zeros(m_in + p_eq, n);
    stacked.rows_mut(0, m_in).copy_from(&p.ineq_a);
    stacked.rows_mut(m_in, p_eq).copy_from(&p.eq_a);
    let mut rhs = DVector::zeros(m_in + p_eq);
    rhs.rows_mut(0, m_in).copy_from(&p.ineq_b);
    rhs.rows_mut(m_in, p_eq).copy_from(&p.eq_b);
    let lip = spectral_bound(&(&stacked * &h_inv * stacked.transpose()));

    let primal = |mu: &DVector<f64>| -(&h_inv * (&p.gradient + stacked.tr_mul(mu)));
    let dual_value = |mu: &DVector<f64>| {
        let z = primal(mu);
        p.objective(&z) + mu.dot(&(&stacked * &z - &rhs))
    };
    let project = |mu: DVector<f64>| DVector::from_fn(mu.len(), |i, _| if i < m_in { mu[i].max(0.0) } else { mu[i] });

    let mut x = DVector::zeros(m_in + p_eq);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut best = dual_value(&x);
    for _ in 0..400_000 {
        let z = primal(&y);
        let grad = &stacked * &z - &rhs;
        let x_new = project(&y + grad / lip);
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let d_new = dual_value(&x_new);
        if d_new < best {
            y = x_new.clone();
            t = 1.0;
        } else {
            y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
            t = t_new;
        }
        let moved = (&x_new - &x).amax();
        x = x_new;
        best = best.max(d_new);
        if moved < 1e-15 {
            break;
        }
    }
    best
}
