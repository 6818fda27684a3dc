//! Phase reduction of the bursting cell: adjoint iPRC, the averaged coupling
//! function, the eta equation and the order-two Fourier surrogate.
//!
//! Phase arguments of coupling functions are fractions of a period, so every
//! `H` here is 1-periodic in its argument.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{find_limit_cycle, CycleOptions, LimitCycle};
use crate::neuron::{jacobian, vector_field, NeuronParams, NeuronState, CELL_DIM};

/// Periods of backward adjoint integration allowed before giving up.
pub const ADJOINT_PERIODS: usize = 20;
/// Relative sup-norm change between successive periods counted as converged.
pub const ADJOINT_TOL: f64 = 1e-6;
/// Bisection tolerance of the eta solver, as a fraction of the period. Tight
/// enough that the transition point is a fixed point to 1e-10.
pub const ETA_TOL: f64 = 1e-13;
/// Samples of G used to bracket the eta root.
const ETA_SCAN: usize = 2000;

const TAU: f64 = 2.0 * PI;

/// Anything usable as a 1-periodic coupling function of the phase fraction.
pub trait Coupling {
    fn h(&self, theta: f64) -> f64;
    fn dh(&self, theta: f64) -> f64;

    /// `G(theta) = H(theta) - H(-theta)`.
    fn g(&self, theta: f64) -> f64 {
        self.h(theta) - self.h(-theta)
    }
}

impl<T: Coupling + ?Sized> Coupling for &T {
    fn h(&self, theta: f64) -> f64 {
        (**self).h(theta)
    }
    fn dh(&self, theta: f64) -> f64 {
        (**self).dh(theta)
    }
}

/// Interpolating cubic spline through uniform samples of a 1-periodic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSpline {
    values: Vec<f64>,
    /// Second derivatives at the knots (with respect to the unit-period argument).
    curvature: Vec<f64>,
}

impl PeriodicSpline {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 3 {
            return Err(Error::InvalidParameter(format!("periodic spline needs >= 3 knots, got {n}")));
        }
        let h = 1.0 / n as f64;
        let rhs: Vec<f64> = (0..n)
            .map(|i| 6.0 * (values[(i + 1) % n] - 2.0 * values[i] + values[(i + n - 1) % n]) / (h * h))
            .collect();
        let curvature = solve_cyclic(1.0, 4.0, 1.0, &rhs);
        Ok(PeriodicSpline { values, curvature })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn knots(&self) -> &[f64] {
        &self.values
    }

    fn locate(&self, x: f64) -> (usize, usize, f64, f64) {
        let n = self.values.len();
        let u = x.rem_euclid(1.0) * n as f64;
        let i = (u.floor() as usize).min(n - 1);
        let t = u - i as f64;
        (i, (i + 1) % n, t, 1.0 / n as f64)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, j, t, h) = self.locate(x);
        let (a, b) = (1.0 - t, t);
        let (y0, y1, m0, m1) = (self.values[i], self.values[j], self.curvature[i], self.curvature[j]);
        a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let (i, j, t, h) = self.locate(x);
        let (a, b) = (1.0 - t, t);
        let (y0, y1, m0, m1) = (self.values[i], self.values[j], self.curvature[i], self.curvature[j]);
        (y1 - y0) / h + ((3.0 * b * b - 1.0) * m1 - (3.0 * a * a - 1.0) * m0) * h / 6.0
    }
}

/// Solve the cyclic tridiagonal system with constant bands (sub, diag, sup)
/// by Sherman-Morrison around a Thomas sweep.
fn solve_cyclic(sub: f64, diag: f64, sup: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let gamma = -diag;
    let mut d = vec![diag; n];
    d[0] = diag - gamma;
    d[n - 1] = diag - sub * sup / gamma;
    let thomas = |r: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        let mut y = vec![0.0; n];
        c[0] = sup / d[0];
        y[0] = r[0] / d[0];
        for i in 1..n {
            let m = d[i] - sub * c[i - 1];
            c[i] = sup / m;
            y[i] = (r[i] - sub * y[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            y[i] -= c[i] * y[i + 1];
        }
        y
    };
    let x = thomas(rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = sub;
    let z = thomas(&u);
    let vx = x[0] + sup / gamma * x[n - 1];
    let vz = z[0] + sup / gamma * z[n - 1];
    let f = vx / (1.0 + vz);
    x.iter().zip(&z).map(|(a, b)| a - f * b).collect()
}

/// Infinitesimal phase response curve on the cycle grid, normalized so that
/// `Z . f = omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResponseCurve {
    pub period: f64,
    pub omega: f64,
    pub samples: Vec<[f64; CELL_DIM]>,
    /// Periods of backward integration used.
    pub periods_used: usize,
    /// Standard deviation of `Z . f` over the grid, relative to omega.
    pub normalization_spread: f64,
}

impl PhaseResponseCurve {
    pub fn grid_dt(&self) -> f64 {
        self.period / self.samples.len() as f64
    }

    pub fn z_v(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z[0]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointOptions {
    pub max_periods: usize,
    pub tol: f64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        AdjointOptions { max_periods: ADJOINT_PERIODS, tol: ADJOINT_TOL }
    }
}

pub fn compute_iprc(lc: &LimitCycle, p: &NeuronParams) -> Result<PhaseResponseCurve> {
    compute_iprc_with(lc, p, &AdjointOptions::default())
}

fn transpose_jacobian(x: &[f64; CELL_DIM], p: &NeuronParams) -> [[f64; CELL_DIM]; CELL_DIM] {
    let j = jacobian(x, p);
    let mut t = [[0.0; CELL_DIM]; CELL_DIM];
    for (r, row) in j.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            t[c][r] = *v;
        }
    }
    t
}

#[inline]
fn adjoint_rhs(jt: &[[f64; CELL_DIM]; CELL_DIM], z: &[f64; CELL_DIM]) -> [f64; CELL_DIM] {
    let mut out = [0.0; CELL_DIM];
    for (o, row) in out.iter_mut().zip(jt) {
        *o = -row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

fn dot(a: &[f64; CELL_DIM], b: &[f64; CELL_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backward integration of `Z' = -J^T Z` along the stored fine orbit with RK4
/// of step `2h`, so the half-step Jacobians come straight from the orbit.
pub fn compute_iprc_with(lc: &LimitCycle, p: &NeuronParams, opts: &AdjointOptions) -> Result<PhaseResponseCurve> {
    let n_fine = lc.orbit.len();
    let n_grid = lc.samples.len();
    if n_fine == 0 || n_grid == 0 || n_fine % n_grid != 0 || (n_fine / n_grid) % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "limit cycle needs a fine orbit with an even number of steps per grid cell ({n_fine} / {n_grid})"
        )));
    }
    if opts.max_periods == 0 {
        return Err(Error::InvalidParameter("max_periods must be positive".into()));
    }
    let scale = lc.state_scale().max(1.0);
    if lc.closure_error > 1e-3 * scale {
        log::warn!("limit cycle closure error {:.3e} is large for an adjoint solve", lc.closure_error);
    }
    let per_grid = n_fine / n_grid;
    let h = lc.period / n_fine as f64;
    let omega = lc.omega;
    let f0 = vector_field(&lc.orbit[0], p, 0.0);
    let f0_sq = dot(&f0, &f0);
    if f0_sq == 0.0 {
        return Err(Error::NoCycle("vector field vanishes on the cycle".into()));
    }
    let mut z = f0.map(|v| v * omega / f0_sq);

    let mut prev: Option<Vec<[f64; CELL_DIM]>> = None;
    let mut change = f64::INFINITY;
    for period in 1..=opts.max_periods {
        let mut grid = vec![[0.0; CELL_DIM]; n_grid];
        let mut jt_hi = transpose_jacobian(&lc.orbit[0], p);
        let mut j = n_fine;
        while j > 0 {
            let jt_mid = transpose_jacobian(&lc.orbit[j - 1], p);
            let jt_lo = transpose_jacobian(&lc.orbit[j - 2], p);
            let k1 = adjoint_rhs(&jt_hi, &z);
            let y2: [f64; CELL_DIM] = std::array::from_fn(|i| z[i] - h * k1[i]);
            let k2 = adjoint_rhs(&jt_mid, &y2);
            let y3: [f64; CELL_DIM] = std::array::from_fn(|i| z[i] - h * k2[i]);
            let k3 = adjoint_rhs(&jt_mid, &y3);
            let y4: [f64; CELL_DIM] = std::array::from_fn(|i| z[i] - 2.0 * h * k3[i]);
            let k4 = adjoint_rhs(&jt_lo, &y4);
            for i in 0..CELL_DIM {
                z[i] -= 2.0 * h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            j -= 2;
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { t: j as f64 * h });
            }
            if j % per_grid == 0 {
                grid[j / per_grid] = z;
            }
            jt_hi = jt_lo;
        }
        // Keep the running solution on the normalization surface at t = 0.
        let s = omega / dot(&z, &f0);
        z = z.map(|v| v * s);
        for g in grid.iter_mut() {
            *g = g.map(|v| v * s);
        }
        if let Some(old) = &prev {
            let num = grid.iter().zip(old).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
            let den = grid.iter().flat_map(|a| a.iter().map(|x| x.abs())).fold(0.0, f64::max);
            change = num / den;
            if change < opts.tol {
                return Ok(finish_prc(lc, p, grid, period));
            }
        }
        prev = Some(grid);
    }
    Err(Error::NoConvergence { periods: opts.max_periods, change })
}

fn finish_prc(lc: &LimitCycle, p: &NeuronParams, mut grid: Vec<[f64; CELL_DIM]>, periods: usize) -> PhaseResponseCurve {
    let dots: Vec<f64> = grid.iter().zip(&lc.samples).map(|(z, x)| dot(z, &vector_field(x, p, 0.0))).collect();
    let mean = dots.iter().sum::<f64>() / dots.len() as f64;
    let s = lc.omega / mean;
    for g in grid.iter_mut() {
        *g = g.map(|v| v * s);
    }
    let var = dots.iter().map(|d| (d * s - lc.omega).powi(2)).sum::<f64>() / dots.len() as f64;
    PhaseResponseCurve {
        period: lc.period,
        omega: lc.omega,
        samples: grid,
        periods_used: periods,
        normalization_spread: var.sqrt() / lc.omega,
    }
}

/// Order-two trigonometric polynomial in the phase fraction:
/// `a0 + a1 cos 2pi x + b1 sin 2pi x + a2 cos 4pi x + b2 sin 4pi x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fourier2 {
    pub a0: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Coupling for Fourier2 {
    fn h(&self, x: f64) -> f64 {
        let (s1, c1) = (TAU * x).sin_cos();
        let (s2, c2) = (2.0 * TAU * x).sin_cos();
        self.a0 + self.a1 * c1 + self.b1 * s1 + self.a2 * c2 + self.b2 * s2
    }

    fn dh(&self, x: f64) -> f64 {
        let (s1, c1) = (TAU * x).sin_cos();
        let (s2, c2) = (2.0 * TAU * x).sin_cos();
        TAU * (-self.a1 * s1 + self.b1 * c1) + 2.0 * TAU * (-self.a2 * s2 + self.b2 * c2)
    }

    fn g(&self, x: f64) -> f64 {
        2.0 * self.b1 * (TAU * x).sin() + 2.0 * self.b2 * (2.0 * TAU * x).sin()
    }
}

impl Fourier2 {
    /// Closed-form root `eta = acos(-b1 / 2 b2) / 2pi - 1/3` of G(1/3 + eta) = 0.
    pub fn eta(&self) -> Result<f64> {
        let arg = -self.b1 / (2.0 * self.b2);
        // Rounding at the boundary must not turn delta* into a domain error.
        if !arg.is_finite() || arg.abs() > 1.0 + 1e-9 {
            return Err(Error::DomainError(arg));
        }
        Ok(arg.clamp(-1.0, 1.0).acos() / TAU - 1.0 / 3.0)
    }
}

/// The published quadratic fits of the Fourier coefficients in delta,
/// each stored as `[c2, c1, c0]` for `c2 d^2 + c1 d + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierCoefficients {
    pub a0: [f64; 3],
    pub a1: [f64; 3],
    pub b1: [f64; 3],
    pub a2: [f64; 3],
    pub b2: [f64; 3],
}

/// Range of delta over which the quadratics were fitted.
pub const HAPP_DOMAIN: (f64, f64) = (0.008, 0.024);

impl FourierCoefficients {
    pub const PUBLISHED: FourierCoefficients = FourierCoefficients {
        a0: [-80.8384, 2.6862, -0.0986],
        a1: [-137.9839, 7.5308, -0.1433],
        b1: [77.9417, -3.9694, -0.0720],
        a2: [-184.2374, 8.9996, -0.0420],
        b2: [68.0350, 0.6692, -0.1077],
    };

    pub fn at(&self, delta: f64) -> Fourier2 {
        let q = |c: [f64; 3]| (c[0] * delta + c[1]) * delta + c[2];
        if !(HAPP_DOMAIN.0 - 1e-12..=HAPP_DOMAIN.1 + 1e-12).contains(&delta) {
            log::debug!("H_app evaluated outside its fitted range at delta = {delta}");
        }
        Fourier2 { a0: q(self.a0), a1: q(self.a1), b1: q(self.b1), a2: q(self.a2), b2: q(self.b2) }
    }
}

pub fn happ_eval(delta: f64, theta: f64) -> f64 {
    FourierCoefficients::PUBLISHED.at(delta).h(theta)
}

pub fn happ_eta(delta: f64) -> Result<f64> {
    FourierCoefficients::PUBLISHED.at(delta).eta()
}

/// Root of `-b1 / 2 b2 + 1` inside the fitted range, by bisection.
pub fn happ_delta_star() -> Result<f64> {
    let f = |d: f64| {
        let c = FourierCoefficients::PUBLISHED.at(d);
        -c.b1 / (2.0 * c.b2) + 1.0
    };
    bisect(f, HAPP_DOMAIN.0, HAPP_DOMAIN.1, 1e-14).ok_or_else(|| Error::NoCycle("no delta* in the fitted range".into()))
}

/// Bisection on a bracketing interval; `None` without a sign change.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Sampled coupling function over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingFunction {
    /// Period of the underlying cycle in ms; the argument is a fraction of it.
    pub period: f64,
    pub xi: Option<f64>,
    spline: PeriodicSpline,
    pub fourier: Option<Fourier2>,
    /// Largest deviation of `fourier` from the samples.
    pub fit_residual: Option<f64>,
}

impl CouplingFunction {
    pub fn from_samples(values: Vec<f64>, period: f64, xi: Option<f64>) -> Result<Self> {
        Ok(CouplingFunction { period, xi, spline: PeriodicSpline::new(values)?, fourier: None, fit_residual: None })
    }

    /// Sample any coupling on `n` uniform points.
    pub fn sample<C: Coupling>(c: &C, n: usize, period: f64, xi: Option<f64>) -> Result<Self> {
        Self::from_samples((0..n).map(|k| c.h(k as f64 / n as f64)).collect(), period, xi)
    }

    pub fn values(&self) -> &[f64] {
        self.spline.knots()
    }

    /// Grid of phase fractions matching [`values`](Self::values).
    pub fn theta_grid(&self) -> Vec<f64> {
        let n = self.values().len();
        (0..n).map(|k| k as f64 / n as f64).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Attach the order-two Fourier projection and its residual.
    pub fn with_fourier(mut self) -> Self {
        let f = fit_fourier(&self);
        let res = self.values().iter().enumerate().map(|(k, v)| (f.h(k as f64 / self.values().len() as f64) - v).abs()).fold(0.0, f64::max);
        self.fourier = Some(f);
        self.fit_residual = Some(res);
        self
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut out = Self::from_samples(self.values().iter().map(|v| v * factor).collect(), self.period, self.xi)?;
        if self.fourier.is_some() {
            out = out.with_fourier();
        }
        Ok(out)
    }
}

impl Coupling for CouplingFunction {
    fn h(&self, theta: f64) -> f64 {
        self.spline.eval(theta)
    }
    fn dh(&self, theta: f64) -> f64 {
        self.spline.deriv(theta)
    }
}

/// Averaged coupling function
/// `H(theta) = -(g_syn / T) int Z_v(t) (v(t) - E_post) s(t + theta) dt`
/// by trapezoid quadrature on the cycle grid. `Z_v` is the iPRC rescaled to
/// time units (`Z . f = 1`), so `H` is a rate of phase advance in ms per ms.
/// The membrane capacitance is not divided out, so the phase drift a synapse
/// actually produces is `H / C`.
pub fn coupling_function_hbn(lc: &LimitCycle, prc: &PhaseResponseCurve, p: &NeuronParams) -> Result<CouplingFunction> {
    let n = lc.samples.len();
    if prc.samples.len() != n {
        return Err(Error::InvalidParameter(format!("iPRC has {} samples, cycle has {n}", prc.samples.len())));
    }
    let to_time = 1.0 / prc.omega;
    let drive: Vec<f64> = prc.samples.iter().zip(&lc.samples).map(|(z, x)| z[0] * to_time * (x[0] - p.e_s_post)).collect();
    let s: Vec<f64> = lc.samples.iter().map(|x| x[3]).collect();
    let pre = -p.g_syn / n as f64;
    let values = (0..n)
        .map(|k| {
            let sum: f64 = drive.iter().enumerate().map(|(j, d)| d * s[(j + k) % n]).sum();
            pre * sum
        })
        .collect();
    CouplingFunction::from_samples(values, lc.period, None)
}

/// Cycle, iPRC and coupling function of one cell.
#[derive(Debug, Clone)]
pub struct PhaseModel {
    pub cycle: LimitCycle,
    pub prc: PhaseResponseCurve,
    pub h: CouplingFunction,
}

/// Full reduction from the standard start state; `xi` is only recorded.
pub fn phase_model(p: &NeuronParams, xi: Option<f64>, opts: &CycleOptions) -> Result<PhaseModel> {
    let cycle = find_limit_cycle(p, NeuronState::canonical_initial(), opts)?;
    let prc = compute_iprc(&cycle, p)?;
    let mut h = coupling_function_hbn(&cycle, &prc, p)?.with_fourier();
    h.xi = xi;
    Ok(PhaseModel { cycle, prc, h })
}

/// Discrete projection onto `{1, cos, sin, cos 2, sin 2}`.
pub fn fit_fourier(h: &CouplingFunction) -> Fourier2 {
    let v = h.values();
    let n = v.len() as f64;
    let mut f = Fourier2 { a0: 0.0, a1: 0.0, b1: 0.0, a2: 0.0, b2: 0.0 };
    for (k, y) in v.iter().enumerate() {
        let x = k as f64 / n;
        let (s1, c1) = (TAU * x).sin_cos();
        let (s2, c2) = (2.0 * TAU * x).sin_cos();
        f.a0 += y;
        f.a1 += y * c1;
        f.b1 += y * s1;
        f.a2 += y * c2;
        f.b2 += y * s2;
    }
    f.a0 /= n;
    f.a1 *= 2.0 / n;
    f.b1 *= 2.0 / n;
    f.a2 *= 2.0 / n;
    f.b2 *= 2.0 / n;
    f
}

/// Root of `H(1/3 + eta) = H(2/3 - eta)` on `[0, 1/6]` (fractions of the
/// period). Without an interior sign change the tripod value 1/6 is returned.
/// A root slightly below zero (within 1/60) is clamped to 0.
pub fn solve_eta<C: Coupling>(h: &C) -> Result<f64> {
    let g = |x: f64| h.h(1.0 / 3.0 + x) - h.h(2.0 / 3.0 - x);
    let lo = -1.0 / 60.0;
    let hi = 1.0 / 6.0;
    // Stop short of 1/6 where G vanishes identically.
    let xs: Vec<f64> = (0..ETA_SCAN).map(|k| lo + (hi - lo) * k as f64 / ETA_SCAN as f64).collect();
    let gs: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let h_scale = xs.iter().map(|&x| h.h(1.0 / 3.0 + x).abs()).fold(0.0, f64::max);
    if gs.iter().all(|v| v.abs() <= 1e-14 * h_scale.max(f64::MIN_POSITIVE)) {
        // Even H: every eta solves the equation; report the tetrapod end.
        return Ok(0.0);
    }
    let mut brackets = Vec::new();
    for k in 0..xs.len() - 1 {
        if gs[k] == 0.0 || gs[k].signum() != gs[k + 1].signum() && gs[k + 1] != 0.0 {
            brackets.push((xs[k], xs[k + 1]));
        }
    }
    let interior: Vec<_> = brackets.iter().filter(|b| b.1 > 0.0).collect();
    match interior.len() {
        0 if brackets.is_empty() => Ok(hi),
        0 => Ok(0.0),
        1 => {
            let (a, b) = *interior[0];
            let root = bisect(g, a, b, ETA_TOL).unwrap_or(a);
            Ok(root.clamp(0.0, hi))
        }
        k => Err(Error::Ambiguous(k)),
    }
}

/// Per-xi outcome of the three hypotheses on G.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HConditionRow {
    pub xi: f64,
    pub g_third: f64,
    /// dG/dxi < 0 on [1/3, 1/2); `None` where not required (xi <= xi_bar).
    pub decreasing: Option<bool>,
    /// G'' < 0 on (1/3, 1/2); `None` where not required (xi >= xi_star).
    pub concave: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HConditionReport {
    /// A root of G(1/3; xi) lies on or inside the grid.
    pub root_exists: bool,
    pub xi_bar: Option<f64>,
    pub xi_star: Option<f64>,
    pub rows: Vec<HConditionRow>,
}

impl HConditionReport {
    pub fn decreasing_holds(&self) -> bool {
        self.rows.iter().all(|r| r.decreasing != Some(false)) && self.rows.iter().any(|r| r.decreasing.is_some())
    }

    pub fn concave_holds(&self) -> bool {
        self.rows.iter().all(|r| r.concave != Some(false)) && self.rows.iter().any(|r| r.concave.is_some())
    }
}

/// Numerical check of the root, monotonicity and concavity hypotheses on
/// `G(theta; xi) = H(theta) - H(-theta)` across a family sampled at `xis`.
pub fn check_h_conditions<C: Coupling>(xis: &[f64], family: &[C]) -> Result<HConditionReport> {
    if xis.len() != family.len() || xis.len() < 2 {
        return Err(Error::InvalidParameter("need matching xi grid and family with >= 2 members".into()));
    }
    const M: usize = 64;
    let thetas: Vec<f64> = (0..M).map(|k| 1.0 / 3.0 + (1.0 / 6.0) * k as f64 / M as f64).collect();
    let interior: Vec<f64> = thetas.iter().skip(1).copied().collect();
    let g_third: Vec<f64> = family.iter().map(|h| h.g(1.0 / 3.0)).collect();
    let scale0 = thetas.iter().map(|&t| family[0].g(t).abs()).fold(0.0, f64::max);

    // A root within one grid step beyond the lower end (linear extrapolation)
    // counts as lying on the grid.
    let slope0 = (g_third[1] - g_third[0]) / (xis[1] - xis[0]);
    let beyond = slope0 != 0.0 && {
        let r = xis[0] - g_third[0] / slope0;
        r <= xis[0] && xis[0] - r <= xis[1] - xis[0]
    };
    let mut xi_bar = None;
    if g_third[0].abs() <= 1e-12 * scale0.max(f64::MIN_POSITIVE) || beyond {
        xi_bar = Some(xis[0]);
    } else {
        for k in 0..xis.len() - 1 {
            if g_third[k] == 0.0 || g_third[k].signum() != g_third[k + 1].signum() {
                xi_bar = Some(if g_third[k] == 0.0 { xis[k] } else { xis[k + 1] });
                break;
            }
        }
    }
    let mut xi_star = None;
    for (x, h) in xis.iter().zip(family) {
        if (solve_eta(h)? - 1.0 / 6.0).abs() < 1e-9 && h.g(0.25).abs() > 0.0 {
            xi_star = Some(*x);
            break;
        }
    }

    let d2 = |h: &C, t: f64| {
        let e = 1e-4;
        (h.g(t + e) - 2.0 * h.g(t) + h.g(t - e)) / (e * e)
    };
    let rows = xis
        .iter()
        .enumerate()
        .map(|(k, &xi)| {
            let decreasing = match xi_bar {
                Some(b) if xi > b => {
                    let (i, j) = if k + 1 < xis.len() { (k, k + 1) } else { (k - 1, k) };
                    let dx = xis[j] - xis[i];
                    Some(thetas.iter().all(|&t| (family[j].g(t) - family[i].g(t)) / dx < 0.0))
                }
                _ => None,
            };
            let concave = match xi_star {
                Some(s) if xi >= s => None,
                _ => Some(interior.iter().all(|&t| d2(&family[k], t) < 0.0)),
            };
            HConditionRow { xi, g_third: g_third[k], decreasing, concave }
        })
        .collect();
    Ok(HConditionReport { root_exists: xi_bar.is_some(), xi_bar, xi_star, rows })
}
