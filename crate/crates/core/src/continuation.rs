//! Fixed-point branches of the torus system along the speed parameter, and
//! the bifurcation events between them.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::CouplingStrengths;
use crate::phase::{Coupling, CouplingFunction, Fourier2, FourierCoefficients};
use crate::torus::{
    find_fixed_points, fixed_point_record, index_sum, newton_torus, reduced_couplings, torus_dist, ClassCounts, Eig,
    FixedPointClass, FixedPointRecord, TorusSystem, DEFAULT_NEWTON_TOL,
};

/// Default number of continuation steps across the range.
pub const DEFAULT_STEPS: usize = 400;
/// Steps between global re-seeding censuses.
pub const RESEED_EVERY: usize = 20;
/// Two branches closer than this are the same point.
pub const COLLISION_TOL: f64 = 1e-3;
/// Largest accepted move of a branch point in one step.
pub const MAX_JUMP: f64 = 0.05;
/// Seed grid used by censuses during continuation.
pub const CONTINUATION_GRID: usize = 128;
/// Incidents closer than this many steps and this torus distance form one event.
const CLUSTER_STEPS: f64 = 3.0;
const CLUSTER_DIST: f64 = 0.03;

/// Coupling function as a function of the speed parameter.
pub trait HFamily: Sync {
    type H: Coupling + Send + Sync;
    fn at(&self, xi: f64) -> Result<Self::H>;
}

/// The published order-two surrogate, indexed by delta.
#[derive(Debug, Clone, Copy, Default)]
pub struct HappFamily;

impl HFamily for HappFamily {
    type H = Fourier2;
    fn at(&self, xi: f64) -> Result<Fourier2> {
        Ok(FourierCoefficients::PUBLISHED.at(xi))
    }
}

/// One coupling function for every xi.
#[derive(Debug, Clone)]
pub struct ConstantFamily<C>(pub C);

impl<C: Coupling + Clone + Send + Sync> HFamily for ConstantFamily<C> {
    type H = C;
    fn at(&self, _xi: f64) -> Result<C> {
        Ok(self.0.clone())
    }
}

/// Sampled coupling functions at grid nodes, interpolated linearly in xi
/// sample by sample.
#[derive(Debug, Clone)]
pub struct SampledFamily {
    nodes: Vec<(f64, CouplingFunction)>,
}

impl SampledFamily {
    pub fn new(mut nodes: Vec<(f64, CouplingFunction)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("sampled family needs at least one node".into()));
        }
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = nodes[0].1.values().len();
        if nodes.iter().any(|(_, h)| h.values().len() != n) {
            return Err(Error::InvalidParameter("family nodes must share one sample grid".into()));
        }
        Ok(SampledFamily { nodes })
    }

    pub fn nodes(&self) -> &[(f64, CouplingFunction)] {
        &self.nodes
    }

    pub fn range(&self) -> (f64, f64) {
        (self.nodes[0].0, self.nodes[self.nodes.len() - 1].0)
    }
}

impl HFamily for SampledFamily {
    type H = CouplingFunction;
    fn at(&self, xi: f64) -> Result<CouplingFunction> {
        let (lo, hi) = self.range();
        if xi < lo - 1e-12 || xi > hi + 1e-12 {
            return Err(Error::InvalidParameter(format!("xi = {xi} outside sampled range [{lo}, {hi}]")));
        }
        let k = self.nodes.partition_point(|(x, _)| *x <= xi).clamp(1, self.nodes.len().max(2) - 1);
        if self.nodes.len() == 1 {
            return Ok(self.nodes[0].1.clone());
        }
        let (x0, h0) = &self.nodes[k - 1];
        let (x1, h1) = &self.nodes[k];
        let w = if x1 > x0 { ((xi - x0) / (x1 - x0)).clamp(0.0, 1.0) } else { 0.0 };
        let values = h0.values().iter().zip(h1.values()).map(|(a, b)| (1.0 - w) * a + w * b).collect();
        CouplingFunction::from_samples(values, (1.0 - w) * h0.period + w * h1.period, Some(xi))
    }
}

/// Couplings used along a continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CouplingSchedule {
    Fixed(CouplingStrengths),
    /// Reduced system with this alpha.
    Alpha(f64),
}

impl CouplingSchedule {
    pub fn couplings(&self) -> CouplingStrengths {
        match self {
            CouplingSchedule::Fixed(c) => *c,
            CouplingSchedule::Alpha(a) => reduced_couplings(*a),
        }
    }
}

fn system_at<F: HFamily>(family: &F, c: &CouplingStrengths, xi: f64) -> Result<TorusSystem<F::H>> {
    TorusSystem::new(family.at(xi)?, *c, Some(xi))
}

/// Census row: counts by class at one xi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub xi: f64,
    pub counts: ClassCounts,
    pub index_sum: i32,
    pub points: Vec<FixedPointRecord>,
}

/// Full re-seeded fixed-point inventory at every xi of the grid.
pub fn fixed_point_census<F, G>(family: &F, couplings: G, xis: &[f64], grid_n: usize) -> Result<Vec<CensusRow>>
where
    F: HFamily,
    G: Fn(f64) -> CouplingStrengths + Sync,
{
    xis.par_iter()
        .map(|&xi| {
            let sys = system_at(family, &couplings(xi), xi)?;
            let points = find_fixed_points(&sys, grid_n, DEFAULT_NEWTON_TOL)?;
            Ok(CensusRow { xi, counts: ClassCounts::of(&points), index_sum: index_sum(&points), points })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub xi: f64,
    pub theta: [f64; 2],
    pub eigenvalues: [Eig; 2],
    pub class: FixedPointClass,
}

impl BranchPoint {
    fn from_record(xi: f64, r: &FixedPointRecord) -> Self {
        BranchPoint { xi, theta: r.theta, eigenvalues: r.eigenvalues, class: r.class }
    }

    fn min_abs_real(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.0.abs()).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    /// Ordered by increasing xi.
    pub points: Vec<BranchPoint>,
    /// False once the branch has ended before the range end.
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    SaddleNode,
    Transcritical,
    DegenerateMerge,
    Unresolved,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SaddleNode => "saddle-node",
            EventKind::Transcritical => "transcritical",
            EventKind::DegenerateMerge => "degenerate-merge",
            EventKind::Unresolved => "unresolved",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationEvent {
    pub xi_critical: f64,
    pub kind: EventKind,
    pub branch_ids: Vec<usize>,
    pub location: [f64; 2],
    /// Smallest |Re lambda| seen on the involved branches next to the event.
    pub min_abs_eig: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub branches: Vec<Branch>,
    pub events: Vec<BifurcationEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub steps: usize,
    pub reseed_every: usize,
    pub grid_n: usize,
    pub newton_tol: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions { steps: DEFAULT_STEPS, reseed_every: RESEED_EVERY, grid_n: CONTINUATION_GRID, newton_tol: DEFAULT_NEWTON_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum IncidentKind {
    Birth,
    Death,
    Stability,
}

#[derive(Debug, Clone, Copy)]
struct Incident {
    /// Fractional step index of the incident.
    step: f64,
    xi: f64,
    at: [f64; 2],
    branch: usize,
    kind: IncidentKind,
}

/// Natural-parameter continuation of every fixed point from `xi_range.0` to
/// `xi_range.1`, with global re-seeding to catch births.
pub fn continue_branches<F: HFamily>(
    family: &F,
    schedule: CouplingSchedule,
    xi_range: (f64, f64),
    opts: &ContinuationOptions,
) -> Result<ContinuationResult> {
    let (lo, hi) = xi_range;
    if !(hi > lo) || opts.steps == 0 {
        return Err(Error::InvalidParameter(format!("bad xi range {lo}:{hi} or zero steps")));
    }
    let c = schedule.couplings();
    let dxi = (hi - lo) / opts.steps as f64;
    let xis: Vec<f64> = (0..=opts.steps).map(|k| lo + dxi * k as f64).collect();
    let systems: Vec<TorusSystem<F::H>> = xis.par_iter().map(|&x| system_at(family, &c, x)).collect::<Result<_>>()?;

    let mut branches: Vec<Branch> = find_fixed_points(&systems[0], opts.grid_n, opts.newton_tol)?
        .iter()
        .enumerate()
        .map(|(id, r)| Branch { id, points: vec![BranchPoint::from_record(xis[0], r)], alive: true })
        .collect();
    let mut incidents: Vec<Incident> = Vec::new();
    // Branches lost to Newton failure, and branches absorbed by another with
    // the step and secant at which they were absorbed.
    let mut failed = vec![false; branches.len()];
    let mut absorbed: Vec<(usize, [f64; 2], [f64; 2])> = Vec::new();
    let mut watch_until = 0;

    for k in 1..=opts.steps {
        let sys = &systems[k];
        let moves: Vec<(usize, Option<[f64; 2]>)> = branches
            .par_iter()
            .enumerate()
            .filter(|(_, b)| b.alive)
            .map(|(i, b)| {
                let last = b.points[b.points.len() - 1];
                let pred = add(last.theta, secant(b));
                let got = newton_torus(sys, pred, opts.newton_tol).ok().filter(|x| torus_dist(*x, last.theta) <= MAX_JUMP);
                (i, got)
            })
            .collect();
        for (i, got) in moves {
            match got {
                Some(x) => {
                    let r = fixed_point_record(sys, x);
                    branches[i].points.push(BranchPoint::from_record(xis[k], &r));
                }
                None => {
                    let last = branches[i].points[branches[i].points.len() - 1];
                    branches[i].alive = false;
                    failed[i] = true;
                    watch_until = k + opts.reseed_every;
                    incidents.push(Incident { step: k as f64 - 0.5, xi: xis[k] - 0.5 * dxi, at: last.theta, branch: i, kind: IncidentKind::Death });
                }
            }
        }
        // Branches that landed on the same point: the oldest survives.
        let live: Vec<usize> = (0..branches.len()).filter(|&i| branches[i].alive).collect();
        for (a_pos, &a) in live.iter().enumerate() {
            for &b in &live[a_pos + 1..] {
                if !branches[a].alive || !branches[b].alive {
                    continue;
                }
                let pa = branches[a].points[branches[a].points.len() - 1].theta;
                let pb = branches[b].points[branches[b].points.len() - 1].theta;
                if torus_dist(pa, pb) < COLLISION_TOL {
                    branches[b].alive = false;
                    branches[b].points.pop();
                    let bl = branches[b].points[branches[b].points.len() - 1].theta;
                    absorbed.push((k, bl, secant(&branches[b])));
                    watch_until = k + opts.reseed_every;
                    incidents.push(Incident { step: k as f64, xi: xis[k], at: pa, branch: b, kind: IncidentKind::Death });
                }
            }
        }
        for b in branches.iter().filter(|b| b.alive) {
            let n = b.points.len();
            if n >= 2 && b.points[n - 1].xi == xis[k] && b.points[n - 1].class != b.points[n - 2].class {
                incidents.push(Incident {
                    step: k as f64 - 0.5,
                    xi: xis[k] - 0.5 * dxi,
                    at: b.points[n - 1].theta,
                    branch: b.id,
                    kind: IncidentKind::Stability,
                });
            }
        }
        if k % opts.reseed_every.max(1) != 0 && k > watch_until && k != opts.steps {
            continue;
        }
        // Global census plus seeds that carry absorbed branches straight on,
        // so a branch passing through another is picked up on the far side.
        let mut found: Vec<[f64; 2]> = find_fixed_points(sys, opts.grid_n, opts.newton_tol)?.iter().map(|r| r.theta).collect();
        for &(k0, last, sec) in absorbed.iter().filter(|a| k <= a.0 + opts.reseed_every) {
            let m = (k + 1 - k0) as f64;
            if let Ok(x) = newton_torus(sys, add(last, [m * sec[0], m * sec[1]]), opts.newton_tol) {
                found.push(x);
            }
        }
        for theta in found {
            let claimed = branches.iter().any(|b| b.alive && b.points[b.points.len() - 1].xi == xis[k] && torus_dist(b.points[b.points.len() - 1].theta, theta) < COLLISION_TOL);
            if claimed {
                continue;
            }
            let (born, blocker) = backtrack(&systems, &xis, &branches, k, theta, opts);
            if let Some(j) = blocker {
                // The point was there all along: a tracked branch lost it.
                if failed[j] && !branches[j].alive {
                    return Err(Error::StepTooLarge(xis[k]));
                }
            }
            let first = born[0];
            let first_k = ((first.xi - lo) / dxi).round() as usize;
            let id = branches.len();
            incidents.push(Incident { step: first_k as f64 - 0.5, xi: first.xi - 0.5 * dxi, at: first.theta, branch: id, kind: IncidentKind::Birth });
            branches.push(Branch { id, points: born, alive: true });
            failed.push(false);
        }
    }

    let events = cluster_events(&incidents, &branches, dxi);
    Ok(ContinuationResult { branches, events })
}

fn secant(b: &Branch) -> [f64; 2] {
    match b.points.len() {
        0 | 1 => [0.0, 0.0],
        n => {
            let (p, q) = (b.points[n - 2].theta, b.points[n - 1].theta);
            [wrap_delta(q[0] - p[0]), wrap_delta(q[1] - p[1])]
        }
    }
}

fn add(a: [f64; 2], d: [f64; 2]) -> [f64; 2] {
    [a[0] + d[0], a[1] + d[1]]
}

/// Follow a newly found point backwards in xi until it disappears or meets
/// another branch. Returns its points in increasing xi and the branch it met.
fn backtrack<C: Coupling>(
    systems: &[TorusSystem<C>],
    xis: &[f64],
    branches: &[Branch],
    k: usize,
    theta: [f64; 2],
    opts: &ContinuationOptions,
) -> (Vec<BranchPoint>, Option<usize>) {
    let mut pts = vec![BranchPoint::from_record(xis[k], &fixed_point_record(&systems[k], theta))];
    let mut cur = theta;
    let mut blocker = None;
    let mut j = k;
    while j > 0 {
        j -= 1;
        let Ok(x) = newton_torus(&systems[j], cur, opts.newton_tol) else { break };
        if torus_dist(x, cur) > MAX_JUMP {
            break;
        }
        blocker = branches.iter().position(|b| b.points.iter().any(|p| p.xi == xis[j] && torus_dist(p.theta, x) < COLLISION_TOL));
        if blocker.is_some() {
            break;
        }
        pts.push(BranchPoint::from_record(xis[j], &fixed_point_record(&systems[j], x)));
        cur = x;
    }
    pts.reverse();
    (pts, blocker)
}

fn wrap_delta(d: f64) -> f64 {
    d - d.round()
}

fn cluster_events(incidents: &[Incident], branches: &[Branch], dxi: f64) -> Vec<BifurcationEvent> {
    let mut sorted: Vec<Incident> = incidents.to_vec();
    sorted.sort_by(|a, b| a.step.total_cmp(&b.step));
    let mut used = vec![false; sorted.len()];
    let mut events = Vec::new();
    for i in 0..sorted.len() {
        if used[i] {
            continue;
        }
        let mut group = vec![i];
        used[i] = true;
        // Grow transitively.
        let mut g = 0;
        while g < group.len() {
            let a = sorted[group[g]];
            for (j, b) in sorted.iter().enumerate() {
                if !used[j] && (a.step - b.step).abs() <= CLUSTER_STEPS && torus_dist(a.at, b.at) <= CLUSTER_DIST {
                    used[j] = true;
                    group.push(j);
                }
            }
            g += 1;
        }
        let members: Vec<Incident> = group.iter().map(|&j| sorted[j]).collect();
        events.push(classify_cluster(&members, branches, dxi));
    }
    events.sort_by(|a, b| a.xi_critical.total_cmp(&b.xi_critical));
    events
}

fn classify_cluster(members: &[Incident], branches: &[Branch], dxi: f64) -> BifurcationEvent {
    let count = |k: IncidentKind| members.iter().filter(|m| m.kind == k).count();
    let (births, deaths, stab) = (count(IncidentKind::Birth), count(IncidentKind::Death), count(IncidentKind::Stability));
    let mut ids: Vec<usize> = members.iter().map(|m| m.branch).collect();
    ids.sort_unstable();
    ids.dedup();
    // Surviving branches whose point sits inside the cluster also entered the ball.
    let xi_c = members.iter().map(|m| m.xi).sum::<f64>() / members.len() as f64;
    let loc = members[0].at;
    for b in branches {
        if ids.contains(&b.id) {
            continue;
        }
        let inside = b.points.iter().any(|p| (p.xi - xi_c).abs() <= CLUSTER_STEPS * dxi && torus_dist(p.theta, loc) <= COLLISION_TOL * 10.0);
        if inside && (deaths + births) > 0 {
            ids.push(b.id);
        }
    }
    ids.sort_unstable();
    let kind = if births == 0 && deaths == 2 && stab == 0 && ids.len() == 2 {
        EventKind::SaddleNode
    } else if births == 2 && deaths == 0 && stab == 0 && ids.len() == 2 {
        EventKind::SaddleNode
    } else if deaths <= 1 && births <= 1 && deaths + births >= 1 && stab >= 1 && ids.len() <= 3 && deaths + births + 1 == ids.len().min(3) {
        EventKind::Transcritical
    } else if ids.len() >= 3 && deaths + births >= 2 {
        EventKind::DegenerateMerge
    } else if stab >= 1 && deaths == 0 && births == 0 && ids.len() == 2 {
        // Two branches exchanging stability without meeting on the grid.
        EventKind::Transcritical
    } else {
        EventKind::Unresolved
    };
    let min_abs_eig = branches
        .iter()
        .filter(|b| ids.contains(&b.id))
        .flat_map(|b| b.points.iter().filter(|p| (p.xi - xi_c).abs() <= (CLUSTER_STEPS + 1.0) * dxi))
        .map(BranchPoint::min_abs_real)
        .fold(f64::INFINITY, f64::min);
    BifurcationEvent { xi_critical: xi_c, kind, branch_ids: ids, location: loc, min_abs_eig }
}
