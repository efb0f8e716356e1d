//! Linear objectives over the intersection of the unit ball and two-sided
//! slabs: the optimization kernel behind confidence intervals, cost
//! coefficients and the critic.
//!
//! The problem class is `optimize <c, w>` subject to `||w||_2 <= R` and
//! `|<g_i, w> - b_i| <= tau_i`, a second-order-cone program. It is solved by
//! interior-point path following on the log barrier, with a dense Newton
//! solve per step. At every centering step the barrier multipliers
//! `1/(k * slack)` form a dual-feasible point whose dual objective is
//! evaluated in closed form, so the returned optimality gap is certified by
//! weak duality rather than by the path-following theory. Feasibility of the
//! constraint system is established first by minimizing the largest slab
//! violation over the ball (a problem of the same class in one extra
//! variable).
//!
//! Everything is deterministic: no randomized restarts, no time-based
//! stopping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::FeasibleSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Min,
    Max,
}

/// Objective `sense of (<linear, w> + constant)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineObjective {
    pub linear: DVector<f64>,
    pub constant: f64,
    pub sense: Sense,
}

impl AffineObjective {
    pub fn minimize(linear: DVector<f64>) -> Self {
        AffineObjective {
            linear,
            constant: 0.0,
            sense: Sense::Min,
        }
    }

    pub fn maximize(linear: DVector<f64>) -> Self {
        AffineObjective {
            linear,
            constant: 0.0,
            sense: Sense::Max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub point: DVector<f64>,
    pub value: f64,
    pub status: SolveStatus,
    /// max(primal violation, certified relative duality gap).
    pub kkt_residual: f64,
    /// Certified bound on the optimum from the recovered dual point
    /// (lower bound for minimization, upper bound for maximization).
    pub dual_bound: f64,
    /// For `Infeasible`: the smallest uniform slab inflation that would make
    /// the set nonempty.
    pub min_restore_slack: Option<f64>,
}

const GAP_TOL: f64 = 1e-7;
const INFEASIBLE_TOL: f64 = 1e-8;
const MAX_NEWTON_TOTAL: usize = 200;
const PATH_FACTOR: f64 = 20.0;
const MIN_HALF_WIDTH: f64 = 1e-9;

struct Slab {
    g: DVector<f64>,
    b: f64,
    tau: f64,
}

fn slabs_of(set: &FeasibleSet) -> Vec<Slab> {
    set.slabs
        .iter()
        .map(|s| Slab {
            g: s.direction.clone(),
            b: s.offset,
            // Zero-width slabs would leave the barrier without an interior;
            // a hair of inflation keeps them solvable well inside the 1e-6
            // certification tolerance.
            tau: s.half_width.max(MIN_HALF_WIDTH),
        })
        .collect()
}

/// Optimize an affine objective over a feasible set.
pub fn solve(set: &FeasibleSet, obj: &AffineObjective) -> Result<Solution> {
    let d = obj.linear.len();
    if set.slabs.iter().any(|s| s.direction.len() != d) {
        return Err(Error::DimMismatch("objective vs slab dimension".into()));
    }
    if set
        .slabs
        .iter()
        .any(|s| !s.direction.iter().all(|x| x.is_finite()) || !s.offset.is_finite())
    {
        return Err(Error::invalid("slab constraints must be finite"));
    }
    let radius = set.ball_radius;
    let slabs = slabs_of(set);

    // Internally minimize <c, w>.
    let c = match obj.sense {
        Sense::Min => obj.linear.clone(),
        Sense::Max => -&obj.linear,
    };

    // Phase one: strictly feasible start.
    let start = match phase_one(&slabs, radius, d) {
        PhaseOne::Feasible(w) => w,
        PhaseOne::Infeasible(t) => {
            return Ok(Solution {
                point: DVector::zeros(d),
                value: f64::NAN,
                status: SolveStatus::Infeasible,
                kkt_residual: f64::NAN,
                dual_bound: f64::NAN,
                min_restore_slack: Some(t),
            });
        }
    };

    if c.norm() == 0.0 {
        // Pure constant objective; any feasible point is optimal.
        return Ok(Solution {
            point: start,
            value: obj.constant,
            status: SolveStatus::Optimal,
            kkt_residual: 0.0,
            dual_bound: obj.constant,
            min_restore_slack: None,
        });
    }

    let out = barrier_minimize(&slabs, radius, &c, start);
    let (value, dual_bound) = match obj.sense {
        Sense::Min => (out.primal + obj.constant, out.dual + obj.constant),
        Sense::Max => (-out.primal + obj.constant, -out.dual + obj.constant),
    };
    Ok(Solution {
        point: out.point,
        value,
        status: if out.converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIter
        },
        kkt_residual: out.kkt_residual,
        dual_bound,
        min_restore_slack: None,
    })
}

enum PhaseOne {
    Feasible(DVector<f64>),
    Infeasible(f64),
}

/// Minimize the uniform slab violation `t` over the ball. Early exit as soon
/// as a strictly feasible point is found.
fn phase_one(slabs: &[Slab], radius: f64, d: usize) -> PhaseOne {
    if slabs.is_empty() {
        return PhaseOne::Feasible(DVector::zeros(d));
    }
    // Worst violation at w = 0 plus margin gives a strictly feasible start
    // in the extended problem.
    let mut t = slabs
        .iter()
        .map(|s| s.b.abs() - s.tau)
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    let mut w = DVector::zeros(d);
    if t <= 0.0 {
        return PhaseOne::Feasible(w);
    }

    // Path-following on (w, t) with objective t.
    let nu = 2.0 * slabs.len() as f64 + 2.0;
    let mut k = 1.0;
    let mut newton_used = 0usize;
    while newton_used < 150 {
        // Newton centering for F(w, t) = k t + barrier.
        for _ in 0..40 {
            newton_used += 1;
            let q = radius * radius - w.norm_squared();
            let mut grad = DVector::zeros(d + 1);
            grad[d] = k;
            let mut hess = DMatrix::zeros(d + 1, d + 1);
            for s in slabs {
                let r = s.g.dot(&w) - s.b;
                let u = s.tau + t - r;
                let v = s.tau + t + r;
                // d(u)/d(w,t) = (-g, 1); d(v)/d(w,t) = (g, 1)
                for i in 0..d {
                    grad[i] += s.g[i] / u - s.g[i] / v;
                }
                grad[d] += -1.0 / u - 1.0 / v;
                let cu = 1.0 / (u * u);
                let cv = 1.0 / (v * v);
                for i in 0..d {
                    for j in 0..d {
                        hess[(i, j)] += (cu + cv) * s.g[i] * s.g[j];
                    }
                    hess[(i, d)] += -cu * s.g[i] + cv * s.g[i];
                    hess[(d, i)] += -cu * s.g[i] + cv * s.g[i];
                }
                hess[(d, d)] += cu + cv;
            }
            for i in 0..d {
                grad[i] += 2.0 * w[i] / q;
                for j in 0..d {
                    hess[(i, j)] += 4.0 * w[i] * w[j] / (q * q);
                }
                hess[(i, i)] += 2.0 / q;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => break,
            };
            let decrement = -grad.dot(&step);
            if decrement <= 2e-11 {
                break;
            }
            let alpha = line_search_phase1(slabs, radius, &w, t, &step, &grad, k);
            for i in 0..d {
                w[i] += alpha * step[i];
            }
            t += alpha * step[d];
            if t < -1e-6 {
                return PhaseOne::Feasible(w);
            }
            if alpha < 1e-14 {
                break;
            }
        }
        if nu / k < 1e-9 {
            break;
        }
        k *= PATH_FACTOR;
    }
    if t <= INFEASIBLE_TOL {
        // Thin but nonempty; the point may sit marginally outside. Nudging
        // the widths is handled by the caller tolerance.
        PhaseOne::Feasible(w)
    } else {
        PhaseOne::Infeasible(t)
    }
}

fn line_search_phase1(
    slabs: &[Slab],
    radius: f64,
    w: &DVector<f64>,
    t: f64,
    step: &DVector<f64>,
    grad: &DVector<f64>,
    k: f64,
) -> f64 {
    let d = w.len();
    let dw = step.rows(0, d).into_owned();
    let dt = step[d];
    let mut alpha: f64 = 1.0;
    // Shrink to strict feasibility.
    for _ in 0..80 {
        let mut ok = true;
        let w_new = w + alpha * &dw;
        let t_new = t + alpha * dt;
        if w_new.norm_squared() >= radius * radius {
            ok = false;
        }
        if ok {
            for s in slabs {
                let r = s.g.dot(&w_new) - s.b;
                if s.tau + t_new - r <= 0.0 || s.tau + t_new + r <= 0.0 {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            break;
        }
        alpha *= 0.5;
    }
    // Armijo on the barrier objective.
    let f0 = phase1_objective(slabs, radius, w, t, k);
    let slope = grad.dot(step);
    for _ in 0..50 {
        let w_new = w + alpha * &dw;
        let t_new = t + alpha * dt;
        let f_new = phase1_objective(slabs, radius, &w_new, t_new, k);
        if f_new <= f0 + 0.25 * alpha * slope || alpha < 1e-14 {
            break;
        }
        alpha *= 0.5;
    }
    alpha
}

fn phase1_objective(slabs: &[Slab], radius: f64, w: &DVector<f64>, t: f64, k: f64) -> f64 {
    let q = radius * radius - w.norm_squared();
    if q <= 0.0 {
        return f64::INFINITY;
    }
    let mut f = k * t - q.ln();
    for s in slabs {
        let r = s.g.dot(w) - s.b;
        let u = s.tau + t - r;
        let v = s.tau + t + r;
        if u <= 0.0 || v <= 0.0 {
            return f64::INFINITY;
        }
        f -= u.ln() + v.ln();
    }
    f
}

struct BarrierOutcome {
    point: DVector<f64>,
    primal: f64,
    dual: f64,
    kkt_residual: f64,
    converged: bool,
}

/// Path-following minimization of `<c, w>` from a strictly feasible start.
fn barrier_minimize(slabs: &[Slab], radius: f64, c: &DVector<f64>, start: DVector<f64>) -> BarrierOutcome {
    let mut w = start;
    // If the start is only marginally interior, pull it toward the center.
    if w.norm() >= radius * (1.0 - 1e-12) {
        w *= 0.99;
    }
    let mut k = 1.0;
    let mut newton_used = 0usize;
    let mut best_primal = c.dot(&w);
    let mut best_point = w.clone();
    // Every recovered dual point certifies a bound by weak duality; keep the
    // tightest one across rounds (late rounds lose precision in the slacks).
    let mut best_dual = f64::NEG_INFINITY;

    while newton_used < MAX_NEWTON_TOTAL {
        // Approximate centering: the dual point below is valid for any
        // positive slacks, so loose centering only loosens the gap, never
        // the certificate.
        for _ in 0..25 {
            if newton_used >= MAX_NEWTON_TOTAL {
                break;
            }
            newton_used += 1;
            let (grad, hess) = barrier_grad_hess(slabs, radius, c, &w, k);
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => break,
            };
            let decrement = -grad.dot(&step);
            if decrement <= 1e-10 {
                break;
            }
            let alpha = line_search_phase2(slabs, radius, c, &w, &step, &grad, k);
            w += alpha * step;
            if alpha < 1e-14 {
                break;
            }
        }
        let (dual, _stationarity) = dual_value(slabs, radius, c, &w, k);
        let primal = c.dot(&w);
        if dual.is_finite() {
            best_dual = best_dual.max(dual);
        }
        if primal < best_primal {
            best_primal = primal;
            best_point = w.clone();
        }
        let gap = (best_primal - best_dual).max(0.0);
        if gap <= GAP_TOL * (1.0 + best_primal.abs()) {
            let violation = primal_violation(slabs, radius, &best_point);
            return BarrierOutcome {
                point: best_point,
                primal: best_primal,
                dual: best_dual,
                kkt_residual: violation.max(gap / (1.0 + best_primal.abs())),
                converged: true,
            };
        }
        k *= PATH_FACTOR;
        if k > 1e12 {
            // Past this point the slack arithmetic degrades faster than the
            // gap closes.
            break;
        }
    }
    let violation = primal_violation(slabs, radius, &best_point);
    let gap = (best_primal - best_dual).max(0.0);
    let relative_gap = gap / (1.0 + best_primal.abs());
    BarrierOutcome {
        point: best_point,
        primal: best_primal,
        dual: best_dual,
        kkt_residual: violation.max(relative_gap),
        converged: relative_gap <= 1e-6 && violation <= 1e-6,
    }
}

fn barrier_grad_hess(
    slabs: &[Slab],
    radius: f64,
    c: &DVector<f64>,
    w: &DVector<f64>,
    k: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = w.len();
    let q = radius * radius - w.norm_squared();
    let mut grad = k * c;
    let mut hess = DMatrix::zeros(d, d);
    for s in slabs {
        let r = s.g.dot(w) - s.b;
        let u = s.tau - r;
        let v = s.tau + r;
        let coeff_g = 1.0 / u - 1.0 / v;
        let coeff_h = 1.0 / (u * u) + 1.0 / (v * v);
        grad.axpy(coeff_g, &s.g, 1.0);
        for i in 0..d {
            for j in 0..=i {
                let x = coeff_h * s.g[i] * s.g[j];
                hess[(i, j)] += x;
                if i != j {
                    hess[(j, i)] += x;
                }
            }
        }
    }
    for i in 0..d {
        grad[i] += 2.0 * w[i] / q;
        for j in 0..d {
            hess[(i, j)] += 4.0 * w[i] * w[j] / (q * q);
        }
        hess[(i, i)] += 2.0 / q;
    }
    (grad, hess)
}

fn line_search_phase2(
    slabs: &[Slab],
    radius: f64,
    c: &DVector<f64>,
    w: &DVector<f64>,
    step: &DVector<f64>,
    grad: &DVector<f64>,
    k: f64,
) -> f64 {
    let mut alpha: f64 = 1.0;
    for _ in 0..80 {
        let w_new = w + alpha * step;
        if strictly_feasible(slabs, radius, &w_new) {
            break;
        }
        alpha *= 0.5;
    }
    let f0 = phase2_objective(slabs, radius, c, w, k);
    let slope = grad.dot(step);
    for _ in 0..50 {
        let w_new = w + alpha * step;
        let f_new = phase2_objective(slabs, radius, c, &w_new, k);
        if f_new <= f0 + 0.25 * alpha * slope || alpha < 1e-14 {
            break;
        }
        alpha *= 0.5;
    }
    alpha
}

fn strictly_feasible(slabs: &[Slab], radius: f64, w: &DVector<f64>) -> bool {
    if w.norm_squared() >= radius * radius {
        return false;
    }
    slabs.iter().all(|s| {
        let r = s.g.dot(w) - s.b;
        s.tau - r > 0.0 && s.tau + r > 0.0
    })
}

fn phase2_objective(slabs: &[Slab], radius: f64, c: &DVector<f64>, w: &DVector<f64>, k: f64) -> f64 {
    let q = radius * radius - w.norm_squared();
    if q <= 0.0 {
        return f64::INFINITY;
    }
    let mut f = k * c.dot(w) - q.ln();
    for s in slabs {
        let r = s.g.dot(w) - s.b;
        let u = s.tau - r;
        let v = s.tau + r;
        if u <= 0.0 || v <= 0.0 {
            return f64::INFINITY;
        }
        f -= u.ln() + v.ln();
    }
    f
}

/// Dual objective value at the multipliers recovered from the barrier and
/// the norm of the stationarity residual. Weak duality holds for any
/// nonnegative multipliers, so the value is a certified lower bound on the
/// minimum.
fn dual_value(slabs: &[Slab], radius: f64, c: &DVector<f64>, w: &DVector<f64>, k: f64) -> (f64, f64) {
    let q = radius * radius - w.norm_squared();
    let mu = 1.0 / (k * q);
    let mut r = c.clone();
    let mut offset_terms = 0.0;
    for s in slabs {
        let resid = s.g.dot(w) - s.b;
        let lam_plus = 1.0 / (k * (s.tau - resid));
        let lam_minus = 1.0 / (k * (s.tau + resid));
        r.axpy(lam_plus - lam_minus, &s.g, 1.0);
        offset_terms += lam_plus * (s.tau + s.b) + lam_minus * (s.tau - s.b);
    }
    // inf_w L = -||r||^2 / (4 mu) - mu R^2 - offsets
    let dual = -r.norm_squared() / (4.0 * mu) - mu * radius * radius - offset_terms;
    let stationarity = (&r + 2.0 * mu * w).norm();
    (dual, stationarity)
}

fn primal_violation(slabs: &[Slab], radius: f64, w: &DVector<f64>) -> f64 {
    let mut v = (w.norm() - radius).max(0.0);
    for s in slabs {
        let r = s.g.dot(w) - s.b;
        v = v.max(r.abs() - s.tau).max(0.0);
    }
    v
}

/// Dense grid search over the ball: the independent oracle for `d <= 3`.
/// The returned value is within `||linear||_2 * resolution * sqrt(d)` of the
/// optimum over the grid-feasible region.
pub fn brute_force_solve(set: &FeasibleSet, obj: &AffineObjective, resolution: f64) -> Result<Solution> {
    let d = obj.linear.len();
    if d == 0 || d > 3 {
        return Err(Error::invalid("brute force oracle supports 1 <= d <= 3"));
    }
    if resolution <= 0.0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let radius = set.ball_radius;
    let steps = (2.0 * radius / resolution).ceil() as i64 + 1;
    let coords: Vec<f64> = (0..steps)
        .map(|i| -radius + i as f64 * resolution)
        .collect();

    // Flatten slabs for the hot loop.
    let slab_data: Vec<(Vec<f64>, f64, f64)> = set
        .slabs
        .iter()
        .map(|s| (s.direction.iter().cloned().collect(), s.offset, s.half_width))
        .collect();
    let sign = match obj.sense {
        Sense::Min => -1.0,
        Sense::Max => 1.0,
    };
    let lin: Vec<f64> = obj.linear.iter().cloned().collect();
    let r_sq = radius * radius;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut point = vec![0.0f64; d];
    let check = |point: &[f64], best: &mut Option<(f64, Vec<f64>)>| {
        let norm_sq: f64 = point.iter().map(|x| x * x).sum();
        if norm_sq > r_sq + 1e-12 {
            return;
        }
        for (g, b, tau) in &slab_data {
            let mut dot = 0.0;
            for (gi, xi) in g.iter().zip(point.iter()) {
                dot += gi * xi;
            }
            if (dot - b).abs() > tau + 1e-12 {
                return;
            }
        }
        let mut val = 0.0;
        for (li, xi) in lin.iter().zip(point.iter()) {
            val += li * xi;
        }
        let score = sign * val;
        match best {
            Some((s, _)) if *s >= score => {}
            _ => *best = Some((score, point.to_vec())),
        }
    };
    match d {
        1 => {
            for &x in &coords {
                point[0] = x;
                check(&point, &mut best);
            }
        }
        2 => {
            for &x in &coords {
                point[0] = x;
                for &y in &coords {
                    point[1] = y;
                    check(&point, &mut best);
                }
            }
        }
        _ => {
            for &x in &coords {
                point[0] = x;
                for &y in &coords {
                    point[1] = y;
                    for &z in &coords {
                        point[2] = z;
                        check(&point, &mut best);
                    }
                }
            }
        }
    }
    match best {
        Some((score, p)) => {
            let value = sign * score + obj.constant;
            Ok(Solution {
                point: DVector::from_vec(p),
                value,
                status: SolveStatus::Optimal,
                kkt_residual: 0.0,
                dual_bound: value,
                min_restore_slack: None,
            })
        }
        None => Ok(Solution {
            point: DVector::zeros(d),
            value: f64::NAN,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::NAN,
            dual_bound: f64::NAN,
            min_restore_slack: None,
        }),
    }
}
