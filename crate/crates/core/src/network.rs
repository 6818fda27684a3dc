//! Six-cell network of bursting neurons with inhibitory nearest-neighbour
//! synapses, swing rasters and gait labels.
//!
//! Cell order is R1, R2, R3, L1, L2, L3 (front to hind on each side).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{check_step, guarded_step, step_count, GateGuard, BURST_GAP_MS, DEFAULT_DT, SPIKE_THRESHOLD};
use crate::neuron::{vector_field, NeuronParams, NeuronState, CELL_DIM};

pub const N_CELLS: usize = 6;
pub const NET_DIM: usize = N_CELLS * CELL_DIM;
pub const LEG_NAMES: [&str; N_CELLS] = ["R1", "R2", "R3", "L1", "L2", "L3"];

/// Index of the reference leg (R2) for phase offsets.
pub const REFERENCE_LEG: usize = 1;

/// Initial voltages used with `I_ext` as the speed parameter.
pub const IEXT_RUN_VOLTAGES: [f64; N_CELLS] = [-31.93, -38.55, -23.83, -24.12, -31.93, -38.55];
/// Initial voltages used with `delta` as the speed parameter.
pub const DELTA_RUN_VOLTAGES: [f64; N_CELLS] = [-10.0, -40.0, -30.0, -40.0, 5.0, 20.0];
/// Initial voltages that settle into a backward gait.
pub const BACKWARD_RUN_VOLTAGES: [f64; N_CELLS] = [-40.0, -40.0, -30.0, 10.0, 5.0, -20.0];
/// Initial voltages used for the fitted-coupling runs.
pub const FITTED_RUN_VOLTAGES: [f64; N_CELLS] = [-40.0, 10.0, -10.0, 30.0, 15.0, -30.0];

/// Synaptic multipliers. `c1..c3` are the contralateral rungs (front, middle,
/// hind); `c4..c7` act along each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingStrengths {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// front -> middle
    pub c4: f64,
    /// middle -> front
    pub c5: f64,
    /// middle -> hind
    pub c6: f64,
    /// hind -> middle
    pub c7: f64,
}

impl CouplingStrengths {
    pub fn new(c: [f64; 7]) -> Result<Self> {
        let s = Self::from_array(c);
        s.validate()?;
        Ok(s)
    }

    pub fn zero() -> Self {
        Self::from_array([0.0; 7])
    }

    pub fn from_array(c: [f64; 7]) -> Self {
        CouplingStrengths { c1: c[0], c2: c[1], c3: c[2], c4: c[3], c5: c[4], c6: c[5], c7: c[6] }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.c1, self.c2, self.c3, self.c4, self.c5, self.c6, self.c7]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.to_array().iter().enumerate() {
            if !c.is_finite() || *c < 0.0 {
                return Err(Error::InvalidParameter(format!("c{} = {c} must be finite and >= 0", i + 1)));
            }
        }
        Ok(())
    }

    /// `c4 / (c4 + c7)`, the share of ipsilateral input to the middle leg
    /// coming from the front.
    pub fn alpha(&self) -> Option<f64> {
        let d = self.c4 + self.c7;
        (d > 0.0).then(|| self.c4 / d)
    }

    /// Total inhibition reaching each leg must agree for the tetrapod and
    /// tripod solutions to exist at a common frequency.
    pub fn is_balanced(&self, tol: f64) -> bool {
        let mid = self.c2 + self.c4 + self.c7;
        let scale = self.to_array().iter().fold(1.0_f64, |a, &b| a.max(b));
        (self.c1 + self.c5 - mid).abs() <= tol * scale && (self.c3 + self.c6 - mid).abs() <= tol * scale
    }

    /// `w[i][j]`: strength of the synapse from cell `j` onto cell `i`.
    pub fn weight_matrix(&self) -> [[f64; N_CELLS]; N_CELLS] {
        let mut w = [[0.0; N_CELLS]; N_CELLS];
        for side in [0, 3] {
            let (front, mid, hind) = (side, side + 1, side + 2);
            w[front][mid] = self.c5;
            w[mid][front] = self.c4;
            w[mid][hind] = self.c7;
            w[hind][mid] = self.c6;
        }
        for (leg, c) in [self.c1, self.c2, self.c3].into_iter().enumerate() {
            w[leg][leg + 3] = c;
            w[leg + 3][leg] = c;
        }
        w
    }
}

impl fmt::Display for CouplingStrengths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.to_array();
        write!(f, "({}, {}, {}, {}, {}, {}, {})", c[0], c[1], c[2], c[3], c[4], c[5], c[6])
    }
}

/// The 24-dimensional network vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub params: NeuronParams,
    pub couplings: CouplingStrengths,
    weights: [[f64; N_CELLS]; N_CELLS],
}

pub fn build_network(p: &NeuronParams, c: &CouplingStrengths) -> Result<Network> {
    p.validate()?;
    c.validate()?;
    Ok(Network { params: *p, couplings: *c, weights: c.weight_matrix() })
}

impl Network {
    /// Synaptic current entering each cell.
    #[inline]
    pub fn synaptic_currents(&self, x: &[f64; NET_DIM]) -> [f64; N_CELLS] {
        let p = &self.params;
        let mut out = [0.0; N_CELLS];
        for (i, row) in self.weights.iter().enumerate() {
            let drive: f64 = row.iter().enumerate().map(|(j, w)| w * x[j * CELL_DIM + 3]).sum();
            out[i] = -p.g_syn * drive * (x[i * CELL_DIM] - p.e_s_post);
        }
        out
    }

    #[inline]
    pub fn field(&self, x: &[f64; NET_DIM]) -> [f64; NET_DIM] {
        let i_syn = self.synaptic_currents(x);
        let mut out = [0.0; NET_DIM];
        for (i, cur) in i_syn.iter().enumerate() {
            let o = i * CELL_DIM;
            let cell = [x[o], x[o + 1], x[o + 2], x[o + 3]];
            out[o..o + CELL_DIM].copy_from_slice(&vector_field(&cell, &self.params, *cur));
        }
        out
    }

    /// Network state with every cell at the given voltage and its gates at
    /// their steady states.
    pub fn initial_state(&self, voltages: &[f64; N_CELLS]) -> [f64; NET_DIM] {
        let mut x = [0.0; NET_DIM];
        for (i, v) in voltages.iter().enumerate() {
            let s = NeuronState::resting_at(*v, &self.params).to_array();
            x[i * CELL_DIM..(i + 1) * CELL_DIM].copy_from_slice(&s);
        }
        x
    }
}

/// Swing intervals per leg over the analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitRaster {
    pub window: (f64, f64),
    /// `(lift-off, touchdown)` = (burst start, burst end), per leg in
    /// R1..L3 order.
    pub legs: Vec<Vec<(f64, f64)>>,
}

impl GaitRaster {
    pub fn touchdowns(&self, leg: usize) -> Vec<f64> {
        self.legs[leg].iter().map(|iv| iv.1).collect()
    }

    pub fn shifted(&self, dt: f64) -> GaitRaster {
        GaitRaster {
            window: (self.window.0 + dt, self.window.1 + dt),
            legs: self.legs.iter().map(|l| l.iter().map(|(a, b)| (a + dt, b + dt)).collect()).collect(),
        }
    }

    /// Mean touchdown-to-touchdown interval of one leg.
    pub fn leg_period(&self, leg: usize) -> Option<f64> {
        let td = self.touchdowns(leg);
        (td.len() >= 2).then(|| (td[td.len() - 1] - td[0]) / (td.len() - 1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitRunOptions {
    pub span: f64,
    /// Bursts that start before this time are ignored.
    pub window_start: f64,
    pub dt: f64,
    pub spike_threshold: f64,
    pub gap_ms: f64,
}

impl GaitRunOptions {
    /// Analyse the last quarter of `span`.
    pub fn new(span: f64) -> Self {
        GaitRunOptions {
            span,
            window_start: 0.75 * span,
            dt: DEFAULT_DT,
            spike_threshold: SPIKE_THRESHOLD,
            gap_ms: BURST_GAP_MS,
        }
    }

    pub fn with_window_start(mut self, t: f64) -> Self {
        self.window_start = t;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Online grouping of threshold crossings into bursts for one cell.
#[derive(Debug, Clone, Default)]
struct BurstTracker {
    open: Option<(f64, f64)>,
    closed: Vec<(f64, f64)>,
    in_spike: bool,
}

impl BurstTracker {
    fn up(&mut self, t: f64, gap: f64) {
        self.in_spike = true;
        match self.open {
            Some((_, last_down)) if t - last_down < gap => {}
            Some(done) => {
                self.closed.push(done);
                self.open = Some((t, t));
            }
            None => self.open = Some((t, t)),
        }
    }

    fn down(&mut self, t: f64) {
        self.in_spike = false;
        if let Some(b) = self.open.as_mut() {
            b.1 = t;
        }
    }

    fn finish(mut self, end: f64, gap: f64) -> Vec<(f64, f64)> {
        if let Some(b) = self.open {
            if !self.in_spike && end - b.1 >= gap {
                self.closed.push(b);
            }
        }
        self.closed
    }
}

/// Integrates the network and records the swing intervals of every leg.
pub fn simulate_gait(net: &Network, ics: &[f64; NET_DIM], opts: &GaitRunOptions) -> Result<GaitRaster> {
    let (raster, _) = simulate_gait_with_state(net, ics, opts)?;
    Ok(raster)
}

/// Like [`simulate_gait`] but also returns the final state.
pub fn simulate_gait_with_state(net: &Network, ics: &[f64; NET_DIM], opts: &GaitRunOptions) -> Result<(GaitRaster, [f64; NET_DIM])> {
    let dt = opts.dt;
    check_step(opts.span, dt)?;
    if !(0.0..opts.span).contains(&opts.window_start) {
        return Err(Error::InvalidParameter(format!(
            "analysis window start {} outside [0, {})",
            opts.window_start, opts.span
        )));
    }
    let guard = GateGuard::new(&net.params, dt);
    let mut stiff = Vec::with_capacity(2 * N_CELLS);
    let mut trackers: Vec<BurstTracker> = vec![BurstTracker::default(); N_CELLS];
    let thr = opts.spike_threshold;
    let mut field = |y: &[f64; NET_DIM]| net.field(y);
    let mut x = *ics;
    let steps = step_count(opts.span, dt);
    for k in 0..steps {
        stiff.clear();
        for cell in 0..N_CELLS {
            guard.collect(&x, cell * CELL_DIM, &mut stiff);
        }
        let next = guarded_step(&mut field, &x, dt, &stiff);
        let t = k as f64 * dt;
        for (cell, tr) in trackers.iter_mut().enumerate() {
            let (a, b) = (x[cell * CELL_DIM], next[cell * CELL_DIM]);
            if a < thr && b >= thr {
                tr.up(t + dt * (thr - a) / (b - a), opts.gap_ms);
            } else if a >= thr && b < thr {
                tr.down(t + dt * (a - thr) / (a - b));
            }
        }
        if !next[..].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: t + dt });
        }
        x = next;
    }
    let end = steps as f64 * dt;
    let mut legs = Vec::with_capacity(N_CELLS);
    for (cell, tr) in trackers.into_iter().enumerate() {
        let bursts: Vec<(f64, f64)> = tr
            .finish(end, opts.gap_ms)
            .into_iter()
            .filter(|b| b.0 >= opts.window_start)
            .collect();
        if bursts.is_empty() {
            return Err(Error::NoBurst(Some(LEG_NAMES[cell].to_string())));
        }
        legs.push(bursts);
    }
    Ok((GaitRaster { window: (opts.window_start, end), legs }, x))
}

/// Gait categories for the six-leg pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GaitLabel {
    TetrapodForwardRight,
    TetrapodForwardLeft,
    TetrapodBackwardRight,
    TetrapodBackwardLeft,
    Tripod,
    /// Forward tetrapod-to-tripod family; the value is the shift in [0, 1/6]
    /// as a fraction of the period.
    TransitionForward(f64),
    TransitionBackward(f64),
    Unclassified,
}

impl GaitLabel {
    pub fn is_forward_tetrapod(&self) -> bool {
        matches!(self, GaitLabel::TetrapodForwardRight | GaitLabel::TetrapodForwardLeft)
    }

    pub fn is_backward_tetrapod(&self) -> bool {
        matches!(self, GaitLabel::TetrapodBackwardRight | GaitLabel::TetrapodBackwardLeft)
    }

    pub fn name(&self) -> &'static str {
        match self {
            GaitLabel::TetrapodForwardRight => "TetrapodForwardRight",
            GaitLabel::TetrapodForwardLeft => "TetrapodForwardLeft",
            GaitLabel::TetrapodBackwardRight => "TetrapodBackwardRight",
            GaitLabel::TetrapodBackwardLeft => "TetrapodBackwardLeft",
            GaitLabel::Tripod => "Tripod",
            GaitLabel::TransitionForward(_) => "TransitionForward",
            GaitLabel::TransitionBackward(_) => "TransitionBackward",
            GaitLabel::Unclassified => "Unclassified",
        }
    }

    pub fn eta_frac(&self) -> Option<f64> {
        match self {
            GaitLabel::TransitionForward(e) | GaitLabel::TransitionBackward(e) => Some(*e),
            GaitLabel::Tripod => Some(1.0 / 6.0),
            GaitLabel::Unclassified => None,
            _ => Some(0.0),
        }
    }
}

impl fmt::Display for GaitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GaitLabel::TransitionForward(e) | GaitLabel::TransitionBackward(e) => write!(f, "{}({e:.4})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// Transition families, parametrized by the shift `eta` in [0, 1/6].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaitFamily {
    ForwardRight,
    ForwardLeft,
    BackwardRight,
    BackwardLeft,
}

impl GaitFamily {
    pub const ALL: [GaitFamily; 4] =
        [GaitFamily::ForwardRight, GaitFamily::ForwardLeft, GaitFamily::BackwardRight, GaitFamily::BackwardLeft];

    /// Phase lead of each leg over R2, in fractions of the period.
    pub fn offsets(self, eta: f64) -> [f64; N_CELLS] {
        let third = 1.0 / 3.0;
        let raw = match self {
            GaitFamily::ForwardRight => [2.0 * third - eta, 0.0, third + eta, third - 2.0 * eta, 2.0 * third - eta, 0.0],
            GaitFamily::ForwardLeft => [2.0 * third - eta, 0.0, third + eta, 0.0, third + eta, 2.0 * third + 2.0 * eta],
            GaitFamily::BackwardRight => [third + eta, 0.0, 2.0 * third - eta, 2.0 * third + 2.0 * eta, third + eta, 0.0],
            GaitFamily::BackwardLeft => [third + eta, 0.0, 2.0 * third - eta, 0.0, 2.0 * third - eta, third - 2.0 * eta],
        };
        raw.map(|x| x.rem_euclid(1.0))
    }

    fn is_forward(self) -> bool {
        matches!(self, GaitFamily::ForwardRight | GaitFamily::ForwardLeft)
    }

    fn tetrapod(self) -> GaitLabel {
        match self {
            GaitFamily::ForwardRight => GaitLabel::TetrapodForwardRight,
            GaitFamily::ForwardLeft => GaitLabel::TetrapodForwardLeft,
            GaitFamily::BackwardRight => GaitLabel::TetrapodBackwardRight,
            GaitFamily::BackwardLeft => GaitLabel::TetrapodBackwardLeft,
        }
    }
}

pub fn tripod_offsets() -> [f64; N_CELLS] {
    [0.5, 0.0, 0.5, 0.0, 0.5, 0.0]
}

/// Distance on the unit circle.
pub fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn max_dev(obs: &[f64; N_CELLS], ideal: &[f64; N_CELLS]) -> f64 {
    obs.iter().zip(ideal).map(|(a, b)| circ_dist(*a, *b)).fold(0.0, f64::max)
}

fn sq_dev(obs: &[f64; N_CELLS], ideal: &[f64; N_CELLS]) -> f64 {
    obs.iter().zip(ideal).map(|(a, b)| circ_dist(*a, *b).powi(2)).sum()
}

/// Mean touchdown phase lead of every leg over R2 (fractions of T) and the
/// common period. `None` when some leg has fewer than `min_cycles`
/// complete bursts in the window.
pub fn phase_offsets(raster: &GaitRaster, min_cycles: usize) -> Option<([f64; N_CELLS], f64)> {
    let mut periods = Vec::with_capacity(N_CELLS);
    for leg in 0..N_CELLS {
        if raster.legs[leg].len() < min_cycles.max(2) {
            return None;
        }
        periods.push(raster.leg_period(leg)?);
    }
    let period = periods.iter().sum::<f64>() / N_CELLS as f64;
    let reference = raster.touchdowns(REFERENCE_LEG);
    let mut out = [0.0; N_CELLS];
    for (leg, slot) in out.iter_mut().enumerate() {
        let td = raster.touchdowns(leg);
        let (mut sx, mut sy) = (0.0, 0.0);
        for &t_ref in &reference {
            let nearest = td.iter().copied().min_by(|a, b| (a - t_ref).abs().total_cmp(&(b - t_ref).abs()))?;
            let ang = 2.0 * std::f64::consts::PI * (t_ref - nearest) / period;
            sx += ang.cos();
            sy += ang.sin();
        }
        *slot = (sy.atan2(sx) / (2.0 * std::f64::consts::PI)).rem_euclid(1.0);
    }
    out[REFERENCE_LEG] = 0.0;
    Some((out, period))
}

/// Least-squares shift of a family against observed offsets.
pub fn fit_family(obs: &[f64; N_CELLS], family: GaitFamily) -> (f64, f64) {
    let n = 2000;
    let mut best = (0.0, f64::INFINITY);
    for k in 0..=n {
        let eta = k as f64 / n as f64 / 6.0;
        let e = sq_dev(obs, &family.offsets(eta));
        if e < best.1 {
            best = (eta, e);
        }
    }
    (best.0, max_dev(obs, &family.offsets(best.0)))
}

/// Label a gait from its phase offsets. A pure pattern wins when it fits
/// within `tol_frac`; otherwise the best transition family within tolerance.
pub fn classify_offsets(obs: &[f64; N_CELLS], tol_frac: f64) -> GaitLabel {
    fn pick(cands: impl Iterator<Item = (GaitLabel, f64)>, tol: f64) -> Option<GaitLabel> {
        cands.filter(|(_, d)| *d <= tol).min_by(|a, b| a.1.total_cmp(&b.1)).map(|(l, _)| l)
    }
    let pure = std::iter::once((GaitLabel::Tripod, max_dev(obs, &tripod_offsets())))
        .chain(GaitFamily::ALL.iter().map(|f| (f.tetrapod(), max_dev(obs, &f.offsets(0.0)))));
    if let Some(label) = pick(pure, tol_frac) {
        return label;
    }
    let families = GaitFamily::ALL.iter().map(|&fam| {
        let (eta, dev) = fit_family(obs, fam);
        let label = if fam.is_forward() { GaitLabel::TransitionForward(eta) } else { GaitLabel::TransitionBackward(eta) };
        (label, dev)
    });
    pick(families, tol_frac).unwrap_or(GaitLabel::Unclassified)
}

pub const DEFAULT_GAIT_TOL: f64 = 0.05;
/// Minimum complete bursts per leg for a label.
pub const MIN_CYCLES: usize = 3;

pub fn classify_gait(raster: &GaitRaster, tol_frac: f64) -> GaitLabel {
    match phase_offsets(raster, MIN_CYCLES) {
        Some((obs, period)) => {
            let locked = (0..N_CELLS).all(|leg| raster.leg_period(leg).is_some_and(|t| (t - period).abs() <= tol_frac * period));
            if locked {
                classify_offsets(&obs, tol_frac)
            } else {
                GaitLabel::Unclassified
            }
        }
        None => GaitLabel::Unclassified,
    }
}
