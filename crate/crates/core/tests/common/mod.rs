//! Helpers shared by the integration tests.
#![allow(dead_code)]

use hexapod_cpg::integrate::{cell_step, GateGuard};
use hexapod_cpg::neuron::{NeuronParams, ParamPreset, CELL_DIM};

/// Same preset with a faster calcium scale and slower gates, which bursts
/// robustly. Used only where the tabulated cell cannot exercise the code.
pub fn bursting(mut preset: ParamPreset) -> ParamPreset {
    preset.params.k_ca = 1.0 / 18.0;
    preset.params.tau_m_scale = 0.5;
    preset.params.tau_w_scale = 0.0625;
    preset.name.push_str("+bursting");
    preset
}

/// Last burst onset (upward -20 mV crossing after a 15 ms quiet gap) of an
/// uncoupled cell integrated for `span` ms from `x0`.
pub fn last_onset(x0: [f64; CELL_DIM], p: &NeuronParams, span: f64, dt: f64) -> f64 {
    let guard = GateGuard::new(p, dt);
    let mut buf = Vec::new();
    let mut x = x0;
    let (mut last_cross, mut onset) = (f64::NEG_INFINITY, f64::NAN);
    for k in 0..(span / dt) as usize {
        let y = cell_step(&x, &guard, 0.0, &mut buf);
        if x[0] < -20.0 && y[0] >= -20.0 {
            let tc = (k as f64 + (-20.0 - x[0]) / (y[0] - x[0])) * dt;
            if tc - last_cross > 15.0 {
                onset = tc;
            }
            last_cross = tc;
        }
        x = y;
    }
    onset
}
