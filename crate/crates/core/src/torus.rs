//! Phase-difference dynamics on the two-torus after contralateral locking.
//!
//! Coordinates are `(theta1, theta2) = (phi_R1 - phi_R2, phi_R3 - phi_R2)` in
//! fractions of the period, so the torus is the unit square.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::rk4_step;
use crate::network::{circ_dist, CouplingStrengths};
use crate::phase::{solve_eta, Coupling};

pub const DEFAULT_SEED_GRID: usize = 256;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-11;
const NEWTON_MAX_ITER: usize = 50;
/// Largest Newton step, so a seed stays near its own cell.
const NEWTON_MAX_STEP: f64 = 0.05;
pub const DEDUP_TOL: f64 = 1e-4;
/// Sup-norm radius for attaching a gait name to a fixed point.
pub const GAIT_LABEL_TOL: f64 = 0.04;
/// Relative (to the field scale) real part below which a point is nonhyperbolic.
pub const NONHYPERBOLIC_TOL: f64 = 1e-6;

const THIRD: f64 = 1.0 / 3.0;

/// Wrap into [0, 1).
pub fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Sup-norm distance on the torus.
pub fn torus_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    circ_dist(a[0], b[0]).max(circ_dist(a[1], b[1]))
}

/// `c` of the reduced equations: `c1 = c2 = c3 = c5 = c6 = 1`, `c4 = alpha`,
/// `c7 = 1 - alpha`.
pub fn reduced_couplings(alpha: f64) -> CouplingStrengths {
    CouplingStrengths::from_array([1.0, 1.0, 1.0, alpha, 1.0, 1.0, 1.0 - alpha])
}

/// Phase-difference system for one value of the speed parameter.
#[derive(Debug, Clone)]
pub struct TorusSystem<C> {
    pub h: C,
    pub c: CouplingStrengths,
    /// Transition shift as a fraction of the period, in [0, 1/6].
    pub eta: f64,
    pub xi: Option<f64>,
    /// Typical size of Jacobian entries, used for hyperbolicity tests.
    pub field_scale: f64,
}

impl<C: Coupling> TorusSystem<C> {
    /// Build with eta from [`solve_eta`].
    pub fn new(h: C, c: CouplingStrengths, xi: Option<f64>) -> Result<Self> {
        let eta = solve_eta(&h)?;
        Self::with_eta(h, c, eta, xi)
    }

    pub fn with_eta(h: C, c: CouplingStrengths, eta: f64, xi: Option<f64>) -> Result<Self> {
        c.validate()?;
        if !(0.0..=1.0 / 6.0 + 1e-12).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta = {eta} outside [0, 1/6]")));
        }
        let slope = (0..512).map(|k| h.dh(k as f64 / 512.0).abs()).fold(0.0, f64::max);
        let field_scale = (c.c4 + c.c5 + c.c6 + c.c7).max(1e-300) * slope.max(1e-300);
        Ok(TorusSystem { h, c, eta, xi, field_scale })
    }

    /// Reduced system with `alpha`; see [`reduced_couplings`].
    pub fn reduced(h: C, alpha: f64, xi: Option<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        Self::new(h, reduced_couplings(alpha), xi)
    }

    pub fn field(&self, t: [f64; 2]) -> [f64; 2] {
        torus_field(t[0], t[1], self)
    }

    /// Analytic Jacobian from `H'`.
    pub fn jacobian(&self, t: [f64; 2]) -> [[f64; 2]; 2] {
        let c = &self.c;
        let (h, [t1, t2]) = (&self.h, t);
        let d4 = h.dh(t1);
        let d7 = h.dh(t2);
        [[-c.c5 * h.dh(-t1) - c.c4 * d4, -c.c7 * d7], [-c.c4 * d4, -c.c6 * h.dh(-t2) - c.c7 * d7]]
    }

    /// Central-difference Jacobian of [`field`](Self::field).
    pub fn numerical_jacobian(&self, t: [f64; 2], step: f64) -> [[f64; 2]; 2] {
        let mut j = [[0.0; 2]; 2];
        for col in 0..2 {
            let mut a = t;
            let mut b = t;
            a[col] += step;
            b[col] -= step;
            let (fa, fb) = (self.field(a), self.field(b));
            for row in 0..2 {
                j[row][col] = (fa[row] - fb[row]) / (2.0 * step);
            }
        }
        j
    }

    /// `H(2/3 - eta)`, the contralateral term.
    pub fn contralateral(&self) -> f64 {
        self.h.h(2.0 * THIRD - self.eta)
    }
}

/// `theta1' = (c1 - c2) H(2/3 - eta) + c5 H(-theta1) - c4 H(theta1) - c7 H(theta2)`
/// and the matching `theta2'` with `c3` and `c6`.
pub fn torus_field<C: Coupling>(t1: f64, t2: f64, sys: &TorusSystem<C>) -> [f64; 2] {
    let c = &sys.c;
    let h = &sys.h;
    let k = sys.contralateral();
    let shared = c.c4 * h.h(t1) + c.c7 * h.h(t2);
    [(c.c1 - c.c2) * k + c.c5 * h.h(-t1) - shared, (c.c3 - c.c2) * k + c.c6 * h.h(-t2) - shared]
}

/// `theta_i' = H(-theta_i) - alpha H(theta1) - (1 - alpha) H(theta2)`.
pub fn reduced_field<C: Coupling>(t1: f64, t2: f64, h: &C, alpha: f64) -> [f64; 2] {
    let shared = alpha * h.h(t1) + (1.0 - alpha) * h.h(t2);
    [h.h(-t1) - shared, h.h(-t2) - shared]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedPointClass {
    Sink,
    Source,
    Saddle,
    Nonhyperbolic,
}

impl FixedPointClass {
    pub fn name(&self) -> &'static str {
        match self {
            FixedPointClass::Sink => "sink",
            FixedPointClass::Source => "source",
            FixedPointClass::Saddle => "saddle",
            FixedPointClass::Nonhyperbolic => "nonhyperbolic",
        }
    }
}

impl fmt::Display for FixedPointClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Gait meaning of a point on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TorusGait {
    ForwardTetrapod,
    BackwardTetrapod,
    Tripod,
    Synchronous,
    /// `(2/3 - e, 1/3 + e)`, `e` in [0, 1/6].
    TransitionForward(f64),
    /// `(1/3 + e, 2/3 - e)`.
    TransitionBackward(f64),
    Other,
}

impl TorusGait {
    pub fn name(&self) -> &'static str {
        match self {
            TorusGait::ForwardTetrapod => "forward-tetrapod",
            TorusGait::BackwardTetrapod => "backward-tetrapod",
            TorusGait::Tripod => "tripod",
            TorusGait::Synchronous => "synchronous",
            TorusGait::TransitionForward(_) => "transition-forward",
            TorusGait::TransitionBackward(_) => "transition-backward",
            TorusGait::Other => "other",
        }
    }

    pub fn classify(t: [f64; 2]) -> TorusGait {
        let ideal = [
            (TorusGait::ForwardTetrapod, [2.0 * THIRD, THIRD]),
            (TorusGait::BackwardTetrapod, [THIRD, 2.0 * THIRD]),
            (TorusGait::Tripod, [0.5, 0.5]),
            (TorusGait::Synchronous, [0.0, 0.0]),
        ];
        let best = ideal.iter().map(|(g, p)| (*g, torus_dist(t, *p))).min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((g, d)) = best {
            if d <= GAIT_LABEL_TOL {
                return g;
            }
        }
        let fam = |fwd: bool| {
            (0..=1000)
                .map(|k| {
                    let e = k as f64 / 6000.0;
                    let p = if fwd { [2.0 * THIRD - e, THIRD + e] } else { [THIRD + e, 2.0 * THIRD - e] };
                    (e, torus_dist(t, p))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0.0, f64::INFINITY))
        };
        let (ef, df) = fam(true);
        let (eb, db) = fam(false);
        if df <= GAIT_LABEL_TOL && df <= db {
            TorusGait::TransitionForward(ef)
        } else if db <= GAIT_LABEL_TOL {
            TorusGait::TransitionBackward(eb)
        } else {
            TorusGait::Other
        }
    }
}

impl fmt::Display for TorusGait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TorusGait::TransitionForward(e) | TorusGait::TransitionBackward(e) => write!(f, "{}({e:.4})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// Eigenvalue as (real, imaginary).
pub type Eig = (f64, f64);

pub fn eigenvalues(j: &[[f64; 2]; 2]) -> [Eig; 2] {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // Larger-magnitude root first; the other from the product avoids cancellation.
        let sgn = if tr >= 0.0 { 1.0 } else { -1.0 };
        let big = 0.5 * (tr + sgn * r);
        let (l1, l2) = if big != 0.0 { (big, det / big) } else { (0.0, 0.0) };
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        [(lo, 0.0), (hi, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [(0.5 * tr, -im), (0.5 * tr, im)]
    }
}

/// Stability class and topological index from a Jacobian.
pub fn classify_jacobian(j: &[[f64; 2]; 2], scale: f64) -> (FixedPointClass, i32) {
    let eig = eigenvalues(j);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let thr = NONHYPERBOLIC_TOL * scale;
    let index = if det > 0.0 {
        1
    } else if det < 0.0 {
        -1
    } else {
        0
    };
    if eig.iter().any(|e| e.0.abs() < thr) {
        return (FixedPointClass::Nonhyperbolic, index);
    }
    let class = match (eig[0].0 < 0.0, eig[1].0 < 0.0) {
        (true, true) => FixedPointClass::Sink,
        (false, false) => FixedPointClass::Source,
        _ => FixedPointClass::Saddle,
    };
    (class, index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRecord {
    pub theta: [f64; 2],
    pub jacobian: [[f64; 2]; 2],
    pub eigenvalues: [Eig; 2],
    pub class: FixedPointClass,
    pub index: i32,
    pub gait: TorusGait,
    pub residual: f64,
}

impl FixedPointRecord {
    pub fn trace(&self) -> f64 {
        self.jacobian[0][0] + self.jacobian[1][1]
    }

    pub fn det(&self) -> f64 {
        self.jacobian[0][0] * self.jacobian[1][1] - self.jacobian[0][1] * self.jacobian[1][0]
    }
}

pub fn fixed_point_record<C: Coupling>(sys: &TorusSystem<C>, t: [f64; 2]) -> FixedPointRecord {
    let t = [wrap(t[0]), wrap(t[1])];
    let j = sys.jacobian(t);
    let (class, index) = classify_jacobian(&j, sys.field_scale);
    let f = sys.field(t);
    FixedPointRecord {
        theta: t,
        jacobian: j,
        eigenvalues: eigenvalues(&j),
        class,
        index,
        gait: TorusGait::classify(t),
        residual: f[0].hypot(f[1]),
    }
}

/// Damped Newton with periodic wrapping.
pub fn newton_torus<C: Coupling>(sys: &TorusSystem<C>, seed: [f64; 2], tol: f64) -> Result<[f64; 2]> {
    let norm = |f: [f64; 2]| f[0].hypot(f[1]);
    let mut x = [wrap(seed[0]), wrap(seed[1])];
    let mut f = sys.field(x);
    let mut r = norm(f);
    for _ in 0..NEWTON_MAX_ITER {
        if r < tol {
            return Ok(x);
        }
        let j = sys.jacobian(x);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let mut dx = [(j[1][1] * f[0] - j[0][1] * f[1]) / det, (-j[1][0] * f[0] + j[0][0] * f[1]) / det];
        let len = dx[0].hypot(dx[1]);
        if len > NEWTON_MAX_STEP {
            dx = dx.map(|d| d * NEWTON_MAX_STEP / len);
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial = [wrap(x[0] - lambda * dx[0]), wrap(x[1] - lambda * dx[1])];
            let ft = sys.field(trial);
            let rt = norm(ft);
            if rt < r || rt < tol {
                x = trial;
                f = ft;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r < tol {
        Ok(x)
    } else {
        Err(Error::NewtonDiverged(seed[0], seed[1]))
    }
}

/// The six points with closed-form eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecialPoint {
    /// (2/3 - eta, 1/3 + eta)
    Forward,
    /// (1/3 + eta, 1/3 + eta)
    DiagonalLow,
    /// (1/3 + eta, 2/3 - eta)
    Backward,
    /// (2/3 - eta, 2/3 - eta)
    DiagonalHigh,
    /// (1/2, 1/2)
    Tripod,
    /// (0, 0)
    Origin,
}

impl SpecialPoint {
    pub const ALL: [SpecialPoint; 6] = [
        SpecialPoint::Forward,
        SpecialPoint::DiagonalLow,
        SpecialPoint::Backward,
        SpecialPoint::DiagonalHigh,
        SpecialPoint::Tripod,
        SpecialPoint::Origin,
    ];

    pub fn location(self, eta: f64) -> [f64; 2] {
        let (lo, hi) = (THIRD + eta, 2.0 * THIRD - eta);
        match self {
            SpecialPoint::Forward => [hi, lo],
            SpecialPoint::DiagonalLow => [lo, lo],
            SpecialPoint::Backward => [lo, hi],
            SpecialPoint::DiagonalHigh => [hi, hi],
            SpecialPoint::Tripod => [0.5, 0.5],
            SpecialPoint::Origin => [0.0, 0.0],
        }
    }
}

/// Slopes of H entering the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialSlopes {
    /// H'(2/3 - eta)
    pub a: f64,
    /// H'(1/3 + eta)
    pub b: f64,
    /// H'(1/2)
    pub half: f64,
    /// H'(0)
    pub zero: f64,
}

impl SpecialSlopes {
    pub fn of<C: Coupling>(h: &C, eta: f64) -> Self {
        SpecialSlopes { a: h.dh(2.0 * THIRD - eta), b: h.dh(THIRD + eta), half: h.dh(0.5), zero: h.dh(0.0) }
    }
}

/// Closed-form eigenvalues of the reduced system at the six special points.
pub fn analytic_eigs_special(s: &SpecialSlopes, alpha: f64) -> [(SpecialPoint, [f64; 2]); 6] {
    let (a, b) = (s.a, s.b);
    [
        (SpecialPoint::Forward, [-(a + b), -alpha * a - (1.0 - alpha) * b]),
        (SpecialPoint::DiagonalLow, [-(a + b), -a]),
        (SpecialPoint::Backward, [-(a + b), -(1.0 - alpha) * a - alpha * b]),
        (SpecialPoint::DiagonalHigh, [-(a + b), -b]),
        (SpecialPoint::Tripod, [-s.half, -2.0 * s.half]),
        (SpecialPoint::Origin, [-s.zero, -2.0 * s.zero]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBounds {
    /// `A / (A - B)`: the backward point is a sink above it.
    pub alpha_min: f64,
    /// `B / (B - A)`: the forward point is a sink below it.
    pub alpha_max: f64,
    pub min_in_range: bool,
    pub max_in_range: bool,
}

/// With `A = H'(2/3 - eta)` and `B = H'(1/3 + eta)`.
pub fn alpha_bounds<C: Coupling>(h: &C, eta: f64) -> Result<AlphaBounds> {
    let s = SpecialSlopes::of(h, eta);
    let d = s.b - s.a;
    if d == 0.0 || !d.is_finite() {
        return Err(Error::DegenerateDenominator);
    }
    let alpha_max = s.b / d;
    let alpha_min = -s.a / d;
    let inside = |x: f64| x > 0.0 && x < 1.0;
    Ok(AlphaBounds { alpha_min, alpha_max, min_in_range: inside(alpha_min), max_in_range: inside(alpha_max) })
}

fn sort_dedup(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut out: Vec<[f64; 2]> = Vec::new();
    for p in pts {
        if !out.iter().any(|q| torus_dist(*q, p) < DEDUP_TOL) {
            out.push(p);
        }
    }
    out
}

/// Every fixed point found from grid seeds plus the six special points.
pub fn find_fixed_points<C: Coupling + Sync>(sys: &TorusSystem<C>, grid_n: usize, newton_tol: f64) -> Result<Vec<FixedPointRecord>> {
    if grid_n < 64 {
        return Err(Error::InvalidParameter(format!("grid_n = {grid_n} must be >= 64")));
    }
    let n = grid_n;
    let step = 1.0 / n as f64;
    let values: Vec<[f64; 2]> = (0..n * n).into_par_iter().map(|k| sys.field([(k / n) as f64 * step, (k % n) as f64 * step])).collect();
    let at = |i: usize, j: usize| values[(i % n) * n + (j % n)];
    let mut seeds: Vec<[f64; 2]> = (0..n * n)
        .filter_map(|k| {
            let (i, j) = (k / n, k % n);
            let corners = [at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)];
            let mixed = |c: usize| {
                let lo = corners.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = corners.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                lo <= 0.0 && hi >= 0.0
            };
            (mixed(0) && mixed(1)).then(|| [(i as f64 + 0.5) * step, (j as f64 + 0.5) * step])
        })
        .collect();
    seeds.extend(SpecialPoint::ALL.iter().map(|p| p.location(sys.eta)));
    let found: Vec<[f64; 2]> = seeds
        .par_iter()
        .filter_map(|s| match newton_torus(sys, *s, newton_tol) {
            Ok(x) => Some(x),
            Err(e) => {
                log::debug!("{e}");
                None
            }
        })
        .collect();
    let fps: Vec<FixedPointRecord> = sort_dedup(found).into_iter().map(|t| fixed_point_record(sys, t)).collect();
    let idx = index_sum(&fps);
    if idx != 0 {
        log::warn!("census at grid {n} has index sum {idx}; fixed points are closer than the seed grid resolves");
    }
    Ok(fps)
}

/// Sum of topological indices.
pub fn index_sum(fps: &[FixedPointRecord]) -> i32 {
    fps.iter().map(|f| f.index).sum()
}

/// Counts by class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub sinks: usize,
    pub sources: usize,
    pub saddles: usize,
    pub nonhyperbolic: usize,
}

impl ClassCounts {
    pub fn of(fps: &[FixedPointRecord]) -> Self {
        let mut c = ClassCounts::default();
        for f in fps {
            match f.class {
                FixedPointClass::Sink => c.sinks += 1,
                FixedPointClass::Source => c.sources += 1,
                FixedPointClass::Saddle => c.saddles += 1,
                FixedPointClass::Nonhyperbolic => c.nonhyperbolic += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.sinks + self.sources + self.saddles + self.nonhyperbolic
    }
}

/// Zero-level segments of both field components.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Nullclines {
    pub theta1: Vec<[[f64; 2]; 2]>,
    pub theta2: Vec<[[f64; 2]; 2]>,
}

/// Marching squares on the periodic grid; saddle cells are resolved by the
/// cell-centre value.
pub fn nullclines<C: Coupling + Sync>(sys: &TorusSystem<C>, resolution: usize) -> Result<Nullclines> {
    if resolution < 128 {
        return Err(Error::InvalidParameter(format!("resolution = {resolution} must be >= 128")));
    }
    let n = resolution;
    let h = 1.0 / n as f64;
    let values: Vec<[f64; 2]> = (0..n * n).into_par_iter().map(|k| sys.field([(k / n) as f64 * h, (k % n) as f64 * h])).collect();
    let mut out = Nullclines::default();
    for comp in 0..2 {
        let val = |i: usize, j: usize| values[(i % n) * n + (j % n)][comp];
        let mut segs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x0 = i as f64 * h;
                let y0 = j as f64 * h;
                // Corners counter-clockwise from (x0, y0).
                let v = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
                let p = [[x0, y0], [x0 + h, y0], [x0 + h, y0 + h], [x0, y0 + h]];
                let cross = |a: usize, b: usize| -> [f64; 2] {
                    let t = v[a] / (v[a] - v[b]);
                    [p[a][0] + t * (p[b][0] - p[a][0]), p[a][1] + t * (p[b][1] - p[a][1])]
                };
                let mut pts = Vec::with_capacity(4);
                for e in 0..4 {
                    let (a, b) = (e, (e + 1) % 4);
                    if (v[a] > 0.0) != (v[b] > 0.0) {
                        pts.push((e, cross(a, b)));
                    }
                }
                match pts.len() {
                    2 => segs.push([pts[0].1, pts[1].1]),
                    4 => {
                        let centre = sys.field([x0 + 0.5 * h, y0 + 0.5 * h])[comp];
                        // Pair edges so the centre's sign region stays connected.
                        if (centre > 0.0) == (v[0] > 0.0) {
                            segs.push([pts[0].1, pts[3].1]);
                            segs.push([pts[1].1, pts[2].1]);
                        } else {
                            segs.push([pts[0].1, pts[1].1]);
                            segs.push([pts[2].1, pts[3].1]);
                        }
                    }
                    _ => {}
                }
            }
        }
        if comp == 0 {
            out.theta1 = segs;
        } else {
            out.theta2 = segs;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPath {
    pub times: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    /// Field norm at the final point.
    pub final_speed: f64,
}

impl TorusPath {
    pub fn last(&self) -> [f64; 2] {
        *self.points.last().expect("path has at least its start point")
    }

    /// Index of the fixed point the path settled on, if any.
    pub fn settled_on(&self, fps: &[FixedPointRecord], speed_tol: f64, dist_tol: f64) -> Option<usize> {
        if self.final_speed > speed_tol {
            return None;
        }
        let end = self.last();
        fps.iter()
            .enumerate()
            .map(|(k, f)| (k, torus_dist(f.theta, end)))
            .filter(|(_, d)| *d < dist_tol)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }
}

/// RK4 trajectory wrapped onto the unit square, keeping every `record_every`-th point.
pub fn flow_trajectory<C: Coupling>(sys: &TorusSystem<C>, theta0: [f64; 2], span: f64, dt: f64, record_every: usize) -> Result<TorusPath> {
    if !(span > 0.0) || !(dt > 0.0) || dt > span {
        return Err(Error::InvalidParameter(format!("span = {span}, dt = {dt}")));
    }
    let steps = (span / dt + 1e-9).floor() as usize;
    let every = record_every.max(1);
    let mut x = [wrap(theta0[0]), wrap(theta0[1])];
    let mut path = TorusPath { times: vec![0.0], points: vec![x], final_speed: 0.0 };
    let mut f = |y: &[f64; 2]| sys.field(*y);
    for k in 1..=steps {
        let y = rk4_step(&mut f, &x, dt);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: k as f64 * dt });
        }
        x = [wrap(y[0]), wrap(y[1])];
        if k % every == 0 || k == steps {
            path.times.push(k as f64 * dt);
            path.points.push(x);
        }
    }
    let fe = sys.field(x);
    path.final_speed = fe[0].hypot(fe[1]);
    Ok(path)
}

/// Right-hand side of the six phase oscillators (fractions of a period).
pub fn six_oscillator_field<C: Coupling>(h: &C, c: &CouplingStrengths, omega: f64, phi: &[f64; 6]) -> [f64; 6] {
    let hh = |j: usize, i: usize| h.h(phi[j] - phi[i]);
    [
        omega + c.c1 * hh(3, 0) + c.c5 * hh(1, 0),
        omega + c.c2 * hh(4, 1) + c.c4 * hh(0, 1) + c.c7 * hh(2, 1),
        omega + c.c3 * hh(5, 2) + c.c6 * hh(1, 2),
        omega + c.c1 * hh(0, 3) + c.c5 * hh(4, 3),
        omega + c.c2 * hh(1, 4) + c.c4 * hh(3, 4) + c.c7 * hh(5, 4),
        omega + c.c3 * hh(2, 5) + c.c6 * hh(4, 5),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SixTrace {
    pub times: Vec<f64>,
    /// Unwrapped phases.
    pub phases: Vec<[f64; 6]>,
}

impl SixTrace {
    /// Phase of each oscillator minus that of oscillator 2 (R2), wrapped.
    pub fn differences(&self, k: usize) -> [f64; 6] {
        let p = self.phases[k];
        p.map(|x| wrap(x - p[1]))
    }
}

pub fn six_oscillator_simulate<C: Coupling>(
    h: &C,
    c: &CouplingStrengths,
    omega: f64,
    phi0: [f64; 6],
    span: f64,
    dt: f64,
    record_every: usize,
) -> Result<SixTrace> {
    if !(span > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("span = {span}, dt = {dt}")));
    }
    let steps = (span / dt + 1e-9).floor() as usize;
    let every = record_every.max(1);
    let mut x = phi0;
    let mut tr = SixTrace { times: vec![0.0], phases: vec![x] };
    let mut f = |y: &[f64; 6]| six_oscillator_field(h, c, omega, y);
    for k in 1..=steps {
        x = rk4_step(&mut f, &x, dt);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: k as f64 * dt });
        }
        if k % every == 0 || k == steps {
            tr.times.push(k as f64 * dt);
            tr.phases.push(x);
        }
    }
    Ok(tr)
}

/// Coupled stepping frequency from the three leg equations:
/// `omega + (c1 + c5) H`, `omega + (c2 + c4 + c7) H`, `omega + (c3 + c6) H`
/// with `H = H(2/3 - eta)`. All three agree under balance.
pub fn coupled_frequency<C: Coupling>(h: &C, c: &CouplingStrengths, eta: f64, omega: f64) -> [f64; 3] {
    let k = h.h(2.0 * THIRD - eta);
    [omega + (c.c1 + c.c5) * k, omega + (c.c2 + c.c4 + c.c7) * k, omega + (c.c3 + c.c6) * k]
}
