//! Fixed-step RK4 integration, limit-cycle extraction for a single cell,
//! burst (swing/stance) analytics and speed-parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{gate_relaxation, vector_field, NeuronParams, NeuronState, ParamPreset, CELL_DIM, GATE_INDICES};

/// Default integration step (ms).
pub const DEFAULT_DT: f64 = 0.001;
/// Coarser step allowed for sweeps once validated against [`DEFAULT_DT`].
pub const SWEEP_DT: f64 = 0.005;
/// Transient discarded before looking for the cycle (ms).
pub const DEFAULT_SETTLE_MS: f64 = 3000.0;
/// Poincare section: upward crossings of this voltage mark burst onsets.
pub const SECTION_V: f64 = -20.0;
pub const SPIKE_THRESHOLD: f64 = -10.0;
pub const BURST_GAP_MS: f64 = 15.0;
/// Points per period in the uniformly resampled cycle.
pub const DEFAULT_GRID: usize = 4096;

/// One classical RK4 step.
#[inline]
pub fn rk4_step<const N: usize, F>(f: &mut F, x: &[f64; N], dt: f64) -> [f64; N]
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    let k1 = f(x);
    let mut tmp = [0.0; N];
    for i in 0..N {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(&tmp);
    for i in 0..N {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&tmp);
    for i in 0..N {
        tmp[i] = x[i] + dt * k3[i];
    }
    let k4 = f(&tmp);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Largest `rate * dt` for which a gate is left to plain RK4. The RK4
/// stability interval on the negative real axis ends near 2.785.
pub const STIFF_LIMIT: f64 = 2.5;

/// A component relaxing linearly toward `target` at `rate`, too fast for the
/// current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffComponent {
    pub index: usize,
    pub target: f64,
    pub rate: f64,
}

/// RK4 step in which the listed stiff components take their exact
/// exponential update (everything else frozen) and are then held fixed while
/// RK4 advances the rest. With an empty list this is exactly [`rk4_step`].
pub fn guarded_step<const N: usize, F>(f: &mut F, x: &[f64; N], dt: f64, stiff: &[StiffComponent]) -> [f64; N]
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    if stiff.is_empty() {
        return rk4_step(f, x, dt);
    }
    let mut y = *x;
    for c in stiff {
        y[c.index] = c.target + (x[c.index] - c.target) * (-c.rate * dt).exp();
    }
    let mut frozen = |z: &[f64; N]| {
        let mut d = f(z);
        for c in stiff {
            d[c.index] = 0.0;
        }
        d
    };
    rk4_step(&mut frozen, &y, dt)
}

/// Detects gates whose relaxation is too fast for a given step. The test is
/// done on the cosh argument against limits precomputed once per step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateGuard {
    params: NeuronParams,
    dt: f64,
    arg_limit: [f64; 2],
}

impl GateGuard {
    pub fn new(p: &NeuronParams, dt: f64) -> Self {
        let limit = |base: f64| {
            let ratio = STIFF_LIMIT / (base * dt);
            if ratio <= 1.0 {
                0.0
            } else {
                ratio.acosh()
            }
        };
        GateGuard { params: *p, dt, arg_limit: [limit(p.epsilon), limit(p.delta)] }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Appends the stiff gates of the cell whose state starts at `offset`.
    #[inline]
    pub fn collect(&self, x: &[f64], offset: usize, out: &mut Vec<StiffComponent>) {
        let v = x[offset];
        let p = &self.params;
        let args = [p.m_rate_arg(v), p.w_rate_arg(v)];
        if args[0].abs() <= self.arg_limit[0] && args[1].abs() <= self.arg_limit[1] {
            return;
        }
        for (k, (target, rate)) in gate_relaxation(v, p).into_iter().enumerate() {
            if args[k].abs() > self.arg_limit[k] {
                out.push(StiffComponent { index: offset + GATE_INDICES[k], target, rate });
            }
        }
    }
}

/// One guarded step of an isolated (or constantly driven) cell.
pub fn cell_step(x: &[f64; CELL_DIM], guard: &GateGuard, i_syn: f64, buf: &mut Vec<StiffComponent>) -> [f64; CELL_DIM] {
    buf.clear();
    guard.collect(x, 0, buf);
    let p = &guard.params;
    guarded_step(&mut |y: &[f64; CELL_DIM]| vector_field(y, p, i_syn), x, guard.dt, buf)
}

/// Uniformly sampled solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<[f64; N]>,
}

impl<const N: usize> Trajectory<N> {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn last(&self) -> &[f64; N] {
        self.samples.last().expect("trajectory always holds x0")
    }
}

/// Integrates `field` for `floor(span/dt)` steps and keeps every sample.
pub fn rk4_integrate<const N: usize, F>(mut field: F, x0: [f64; N], span: f64, dt: f64) -> Result<Trajectory<N>>
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    check_step(span, dt)?;
    let steps = step_count(span, dt);
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(x0);
    let mut x = x0;
    for k in 0..steps {
        x = rk4_step(&mut field, &x, dt);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: (k + 1) as f64 * dt });
        }
        samples.push(x);
    }
    Ok(Trajectory { t0: 0.0, dt, samples })
}

/// Integrates without storing, calling `observe(step_index, t, x_prev, x_next)`
/// after each step. Returns the final state.
pub fn rk4_drive<const N: usize, F, O>(mut field: F, x0: [f64; N], steps: usize, dt: f64, mut observe: O) -> Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> [f64; N],
    O: FnMut(usize, f64, &[f64; N], &[f64; N]),
{
    let mut x = x0;
    for k in 0..steps {
        let next = rk4_step(&mut field, &x, dt);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: (k + 1) as f64 * dt });
        }
        observe(k, k as f64 * dt, &x, &next);
        x = next;
    }
    Ok(x)
}

pub(crate) fn check_step(span: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    if !(span >= dt) {
        return Err(Error::InvalidParameter(format!("span = {span} must be >= dt = {dt}")));
    }
    Ok(())
}

pub(crate) fn step_count(span: f64, dt: f64) -> usize {
    // Guard against 1000.0 / 0.001 landing a hair below an integer.
    (span / dt + 1e-9).floor() as usize
}

/// Periodic orbit of one isolated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub params: NeuronParams,
    pub period: f64,
    /// 2 pi / T (rad/ms).
    pub omega: f64,
    /// `n_grid` uniformly spaced states over one period, starting at the
    /// burst-onset section crossing.
    pub samples: Vec<[f64; CELL_DIM]>,
    /// The same period at integration resolution; `samples` is a subsample.
    #[serde(skip)]
    pub orbit: Vec<[f64; CELL_DIM]>,
    /// Euclidean norm of x(T) - x(0).
    pub closure_error: f64,
}

impl LimitCycle {
    pub fn frequency_hz(&self) -> f64 {
        1000.0 / self.period
    }

    pub fn orbit_dt(&self) -> f64 {
        self.period / self.orbit.len() as f64
    }

    pub fn grid_dt(&self) -> f64 {
        self.period / self.samples.len() as f64
    }

    /// Largest state norm on the cycle.
    pub fn state_scale(&self) -> f64 {
        self.samples
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Tangent vector f(Gamma(t_k)) at each grid sample.
    pub fn tangents(&self) -> Vec<[f64; CELL_DIM]> {
        self.samples.iter().map(|x| vector_field(x, &self.params, 0.0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleOptions {
    pub settle_ms: f64,
    pub dt: f64,
    pub section_v: f64,
    pub gap_ms: f64,
    pub n_grid: usize,
    /// Extra simulated time allowed after settling to find the section crossings.
    pub search_ms: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            settle_ms: DEFAULT_SETTLE_MS,
            dt: DEFAULT_DT,
            section_v: SECTION_V,
            gap_ms: BURST_GAP_MS,
            n_grid: DEFAULT_GRID,
            search_ms: 4000.0,
        }
    }
}

impl CycleOptions {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Settle onto the attracting cycle and extract one period starting at a
/// burst onset. Burst onsets are upward crossings of `section_v` that follow
/// at least `gap_ms` without any crossing, so the section is hit once per
/// cycle even though every spike in the burst crosses the level.
pub fn find_limit_cycle(p: &NeuronParams, x0: NeuronState, opts: &CycleOptions) -> Result<LimitCycle> {
    p.validate()?;
    x0.warn_if_unphysical();
    let dt = opts.dt;
    check_step(opts.settle_ms + opts.search_ms, dt)?;
    if opts.n_grid < 8 || opts.n_grid % 2 != 0 {
        return Err(Error::InvalidParameter(format!("n_grid = {} must be even and >= 8", opts.n_grid)));
    }
    let guard = GateGuard::new(p, dt);
    let mut buf = Vec::with_capacity(2);

    let settle_steps = step_count(opts.settle_ms, dt);
    let total_steps = settle_steps + step_count(opts.search_ms, dt);
    let sec = opts.section_v;

    let mut x = x0.to_array();
    let mut last_cross = f64::NEG_INFINITY;
    // (time, state just before the crossing, fraction of the step)
    let mut onsets: Vec<(f64, [f64; CELL_DIM], f64)> = Vec::new();
    let mut found = None;
    for k in 0..total_steps {
        let next = cell_step(&x, &guard, 0.0, &mut buf);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: (k + 1) as f64 * dt });
        }
        if x[0] < sec && next[0] >= sec {
            let frac = (sec - x[0]) / (next[0] - x[0]);
            let tc = (k as f64 + frac) * dt;
            if tc - last_cross > opts.gap_ms && k >= settle_steps {
                onsets.push((tc, x, frac));
                if onsets.len() >= 4 {
                    let recent = &onsets[onsets.len() - 4..];
                    let gaps: Vec<f64> = recent.windows(2).map(|w| w[1].0 - w[0].0).collect();
                    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
                    let spread = gaps.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
                    if spread < 0.01 * mean {
                        found = Some((mean, recent[3].1, recent[3].2));
                        break;
                    }
                }
            }
            last_cross = tc;
        }
        x = next;
    }
    let (period, pre_state, frac) = found.ok_or_else(|| {
        Error::NoCycle(format!(
            "{} burst onsets with consistent spacing after {} ms (need 4)",
            onsets.len(),
            opts.settle_ms + opts.search_ms
        ))
    })?;

    // Land exactly on the section with a partial step, then refine.
    let mut start = cell_step(&pre_state, &GateGuard::new(p, frac * dt), 0.0, &mut buf);
    for _ in 0..3 {
        let f = vector_field(&start, p, 0.0);
        if f[0].abs() < 1e-12 {
            break;
        }
        let h = (sec - start[0]) / f[0];
        start = rk4_step(&mut |y: &[f64; CELL_DIM]| vector_field(y, p, 0.0), &start, h);
    }

    let n_grid = opts.n_grid;
    // Even, so an adjoint sweep with step 2h lands on every grid point.
    let per_grid = ((period / (dt * n_grid as f64)).ceil() as usize).max(1).next_multiple_of(2);
    let n_fine = per_grid * n_grid;
    let h = period / n_fine as f64;
    let mut orbit = Vec::with_capacity(n_fine);
    let mut y = start;
    let mut guarded = 0usize;
    let fine_guard = GateGuard::new(p, h);
    for _ in 0..n_fine {
        orbit.push(y);
        y = cell_step(&y, &fine_guard, 0.0, &mut buf);
        guarded += usize::from(!buf.is_empty());
    }
    if guarded > 0 {
        log::warn!("{guarded} stiff gate updates on the extracted cycle");
    }
    let closure_error = y.iter().zip(start.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let samples = orbit.iter().step_by(per_grid).copied().collect();
    Ok(LimitCycle {
        params: *p,
        period,
        omega: 2.0 * std::f64::consts::PI / period,
        samples,
        orbit,
        closure_error,
    })
}

/// Swing/stance decomposition of one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstMetrics {
    pub swing: f64,
    pub stance: f64,
    pub duty_cycle: f64,
    pub frequency_hz: f64,
    pub spikes: usize,
}

/// Spike = upward threshold crossing (ends at the next downward crossing).
/// The burst is the largest group of spikes separated by gaps shorter than
/// `gap_ms`; swing runs from its first upward to its last downward crossing.
pub fn burst_metrics(lc: &LimitCycle, spike_threshold: f64, gap_ms: f64) -> Result<BurstMetrics> {
    let n = lc.orbit.len();
    let h = lc.orbit_dt();
    let period = lc.period;
    let v = |k: usize| lc.orbit[k % n][0];
    let mut ups = Vec::new();
    let mut downs = Vec::new();
    for k in 0..n {
        let (a, b) = (v(k), v(k + 1));
        if a < spike_threshold && b >= spike_threshold {
            ups.push((k as f64 + (spike_threshold - a) / (b - a)) * h);
        } else if a >= spike_threshold && b < spike_threshold {
            downs.push((k as f64 + (a - spike_threshold) / (a - b)) * h);
        }
    }
    if ups.is_empty() {
        return Err(Error::NoBurst(None));
    }
    let spikes = pair_spikes(&ups, &downs, period);
    let group = largest_group(&spikes, period, gap_ms);
    let (first, last) = (spikes[group.0], spikes[group.1]);
    let mut swing = last.1 - first.0;
    if swing < 0.0 {
        swing += period;
    }
    let swing = swing.min(period);
    Ok(BurstMetrics {
        swing,
        stance: period - swing,
        duty_cycle: swing / period,
        frequency_hz: 1000.0 / period,
        spikes: group.2,
    })
}

/// Pairs each upward crossing with the following downward crossing on a
/// circle of circumference `period`. Returned `(up, down)` may have down < up
/// when a spike wraps.
fn pair_spikes(ups: &[f64], downs: &[f64], period: f64) -> Vec<(f64, f64)> {
    ups.iter()
        .map(|&u| {
            let d = downs
                .iter()
                .map(|&d| if d >= u { d } else { d + period })
                .fold(f64::INFINITY, f64::min);
            let d = if d.is_finite() { d } else { u };
            (u, if d >= period { d - period } else { d })
        })
        .collect()
}

/// Returns (first index, last index, count) of the largest circular group.
fn largest_group(spikes: &[(f64, f64)], period: f64, gap_ms: f64) -> (usize, usize, usize) {
    let n = spikes.len();
    if n == 1 {
        return (0, 0, 1);
    }
    let gap_after = |i: usize| {
        let end = spikes[i].1;
        let next_up = spikes[(i + 1) % n].0;
        let mut g = next_up - end;
        if g < 0.0 {
            g += period;
        }
        g
    };
    // start right after the widest gap so no group straddles the seam
    let widest = (0..n).max_by(|&a, &b| gap_after(a).total_cmp(&gap_after(b))).unwrap();
    let mut best = (0, 0, 0);
    let mut cur_start = (widest + 1) % n;
    let mut count = 0;
    for step in 0..n {
        let i = (widest + 1 + step) % n;
        count += 1;
        if gap_after(i) >= gap_ms || step == n - 1 {
            if count > best.2 {
                best = (cur_start, i, count);
            }
            cur_start = (i + 1) % n;
            count = 0;
        }
    }
    best
}

/// One row of a speed sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub xi: f64,
    pub freq_hz: f64,
    pub duty: f64,
    pub swing_ms: f64,
    pub stance_ms: f64,
    pub period_ms: f64,
}

/// Limit cycle and burst metrics at `n_points` evenly spaced speed values.
pub fn speed_sweep(preset: &ParamPreset, n_points: usize, opts: &CycleOptions) -> Result<Vec<SweepRow>> {
    if n_points < 2 {
        return Err(Error::InvalidParameter(format!("n_points = {n_points} must be >= 2")));
    }
    preset
        .sweep_values(n_points)
        .into_par_iter()
        .map(|xi| {
            let p = preset.at(xi);
            let row = (|| {
                let lc = find_limit_cycle(&p, NeuronState::canonical_initial(), opts)?;
                let m = burst_metrics(&lc, SPIKE_THRESHOLD, opts.gap_ms)?;
                Ok(SweepRow {
                    xi,
                    freq_hz: m.frequency_hz,
                    duty: m.duty_cycle,
                    swing_ms: m.swing,
                    stance_ms: m.stance,
                    period_ms: lc.period,
                })
            })();
            row.map_err(|e: Error| Error::SweepFailed { xi, source: Box::new(e) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_field_is_constant() {
        let tr = rk4_integrate(|_x: &[f64; 3]| [0.0; 3], [1.0, -2.0, 3.5], 1.0, 0.1).unwrap();
        assert_eq!(tr.samples.len(), 11);
        assert!(tr.samples.iter().all(|x| *x == [1.0, -2.0, 3.5]));
    }

    fn harmonic_error(dt: f64) -> f64 {
        let n = (2.0 * PI / dt).round() as usize;
        let dt = 2.0 * PI / n as f64;
        let tr = rk4_integrate(|x: &[f64; 2]| [x[1], -x[0]], [1.0, 0.0], 2.0 * PI, dt).unwrap();
        let e = tr.last();
        ((e[0] - 1.0).powi(2) + e[1].powi(2)).sqrt()
    }

    #[test]
    fn harmonic_oscillator_returns() {
        assert!(harmonic_error(0.01) < 1e-8);
    }

    #[test]
    fn fourth_order_convergence() {
        let ratio = harmonic_error(0.04) / harmonic_error(0.02);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn blow_up_is_reported() {
        let r = rk4_integrate(|x: &[f64; 1]| [x[0] * x[0]], [1.0], 2.0, 0.01);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn bad_step_rejected() {
        assert!(rk4_integrate(|x: &[f64; 1]| *x, [1.0], 1.0, 0.0).is_err());
        assert!(rk4_integrate(|x: &[f64; 1]| *x, [1.0], 0.01, 0.1).is_err());
    }

    #[test]
    fn sample_count_is_floor_plus_one() {
        let tr = rk4_integrate(|x: &[f64; 1]| *x, [1.0], 1.05, 0.1).unwrap();
        assert_eq!(tr.samples.len(), 11);
        let tr = rk4_integrate(|_x: &[f64; 1]| [0.0], [1.0], 1000.0, 0.001).unwrap();
        assert_eq!(tr.samples.len(), 1_000_001);
    }

    fn synthetic_cycle(spike_times: &[f64], width: f64, period: f64, n: usize) -> LimitCycle {
        let h = period / n as f64;
        let orbit: Vec<[f64; 4]> = (0..n)
            .map(|k| {
                let t = k as f64 * h;
                let on = spike_times.iter().any(|&s| {
                    let d = (t - s).rem_euclid(period);
                    d < width
                });
                [if on { 20.0 } else { -50.0 }, 0.0, 0.0, 0.0]
            })
            .collect();
        LimitCycle {
            params: NeuronParams::DELTA_CONTROL,
            period,
            omega: 2.0 * PI / period,
            samples: orbit.clone(),
            orbit,
            closure_error: 0.0,
        }
    }

    #[test]
    fn burst_metrics_on_synthetic_cycle() {
        let lc = synthetic_cycle(&[10.0, 14.0, 18.0, 22.0], 1.0, 200.0, 20000);
        let m = burst_metrics(&lc, -10.0, 15.0).unwrap();
        assert_eq!(m.spikes, 4);
        assert!((m.swing - 13.0).abs() < 0.05, "{}", m.swing);
        assert_eq!(m.swing + m.stance, lc.period);
        assert!(m.duty_cycle > 0.0 && m.duty_cycle < 1.0);
    }

    #[test]
    fn burst_wrapping_the_seam() {
        let lc = synthetic_cycle(&[195.0, 199.5, 4.0], 1.0, 200.0, 20000);
        let m = burst_metrics(&lc, -10.0, 15.0).unwrap();
        assert_eq!(m.spikes, 3);
        assert!((m.swing - 10.0).abs() < 0.05, "{}", m.swing);
    }

    #[test]
    fn no_spikes_is_no_burst() {
        let lc = synthetic_cycle(&[], 1.0, 100.0, 1000);
        assert!(matches!(burst_metrics(&lc, -10.0, 15.0), Err(Error::NoBurst(_))));
    }
}
