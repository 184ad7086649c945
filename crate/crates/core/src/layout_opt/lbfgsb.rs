//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Projected L-BFGS: the two-loop recursion runs on the free variables only
//! (variables pinned at a bound with the gradient pushing outward are held fixed),
//! and a backtracking Armijo search runs along the projected path. Gradients are
//! central finite differences of the objective.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    /// Relative cost-decrease tolerance.
    pub tol: f64,
    /// Finite-difference step.
    pub grad_step: f64,
    /// Length (infinity norm) of the very first trial step.
    pub initial_step: f64,
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-10,
            grad_step: 1e-4,
            initial_step: 0.01,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Objective after each accepted iterate, starting with the projected start point.
    pub history: Vec<f64>,
}

/// Central-difference gradient.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let xi = probe[i];
            probe[i] = xi + h;
            let up = f(&probe);
            probe[i] = xi - h;
            let down = f(&probe);
            probe[i] = xi;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn free_mask(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..x.len())
        .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)) && lo[i] < hi[i])
        .collect()
}

/// Two-loop recursion restricted to `free`; returns a descent direction.
fn lbfgs_direction(g: &[f64], free: &[bool], mem: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(a, &m)| if m { *a } else { 0.0 }).collect() };
    let mut q = masked(g);
    let mut alphas = Vec::with_capacity(mem.len());
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = mem.iter().map(|(s, y)| (masked(s), masked(y))).collect();
    for (s, y) in pairs.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &q) / sy;
        for i in 0..q.len() {
            q[i] -= a * y[i];
        }
        alphas.push(a);
    }
    let gamma = pairs
        .last()
        .map(|(s, y)| {
            let yy = dot(y, y);
            let sy = dot(s, y);
            if yy > 0.0 && sy > 0.0 {
                sy / yy
            } else {
                1.0
            }
        })
        .unwrap_or(1.0);
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for ((s, y), a) in pairs.iter().zip(alphas.iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        for i in 0..q.len() {
            q[i] += (a - b) * s[i];
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &MinimizeOptions) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = f(&x);
    let mut history = vec![fx];
    if n == 0 {
        return Minimum { x, f: fx, iterations: 0, history };
    }
    let mut g = fd_gradient(&f, &x, opts.grad_step);
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let free = free_mask(&x, &g, lo, hi);
        let pg_norm = g.iter().zip(&free).filter(|(_, &m)| m).map(|(v, _)| v.abs()).fold(0.0, f64::max);
        if pg_norm == 0.0 || fx == 0.0 {
            break;
        }
        let mut steepest = mem.is_empty();
        let mut accepted = None;
        for _attempt in 0..2 {
            let mut d = if steepest {
                g.iter().zip(&free).map(|(v, &m)| if m { -v } else { 0.0 }).collect()
            } else {
                lbfgs_direction(&g, &free, &mem)
            };
            if dot(&d, &g) >= 0.0 {
                d = g.iter().zip(&free).map(|(v, &m)| if m { -v } else { 0.0 }).collect();
                steepest = true;
            }
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut t = if steepest && mem.is_empty() { opts.initial_step / dmax } else { 1.0 };
            for _ in 0..60 {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut xn, lo, hi);
                let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                if step.iter().all(|v| *v == 0.0) {
                    break;
                }
                let fnew = f(&xn);
                if fnew <= fx + 1e-4 * dot(&g, &step) && fnew < fx {
                    accepted = Some((xn, fnew, step));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || steepest {
                break;
            }
            mem.clear();
            steepest = true;
        }
        let Some((xn, fnew, s)) = accepted else { break };
        iterations += 1;
        let gn = fd_gradient(&f, &xn, opts.grad_step);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s.clone(), y));
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        history.push(fx);
        let smax = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if decrease <= opts.tol * fx.abs().max(decrease) || smax < 1e-13 {
            break;
        }
    }
    Minimum { x, f: fx, iterations, history }
}
