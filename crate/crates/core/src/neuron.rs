//! Single bursting-neuron model: a fast calcium current, a slower potassium
//! current, a very slow potassium current and a leak, plus the synaptic
//! output variable `s` that other cells see.
//!
//! State is `(v, m, w, s)`; time is in ms and voltages in mV throughout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of state variables per cell.
pub const CELL_DIM: usize = 4;

/// Gating values beyond this magnitude are accepted but logged.
const GATING_WARN_LEVEL: f64 = 10.0;

/// Constants of the bursting neuron model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub c: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub i_ext: f64,
    pub g_ca: f64,
    pub g_k: f64,
    pub g_ks: f64,
    pub g_l: f64,
    pub g_syn: f64,
    pub e_ca: f64,
    pub e_k: f64,
    pub e_ks: f64,
    pub e_l: f64,
    pub e_s_post: f64,
    pub e_s_pre: f64,
    pub k_ca: f64,
    pub k_k: f64,
    pub k_ks: f64,
    pub k_s: f64,
    pub v_ca: f64,
    pub v_k: f64,
    pub v_ks: f64,
    pub a: f64,
    pub tau_s: f64,
    /// Multiplies the sech argument in `tau_m`; 1 reproduces the table model.
    #[serde(default = "unit")]
    pub tau_m_scale: f64,
    /// Multiplies the sech argument in `tau_w`; 1 reproduces the table model.
    #[serde(default = "unit")]
    pub tau_w_scale: f64,
}

fn unit() -> f64 {
    1.0
}

/// Optional configuration keys; absent means 1.
pub const SCALE_KEYS: [&str; 2] = ["tau_m_scale", "tau_w_scale"];

/// Configuration-file key for every parameter, in declaration order.
pub const PARAM_KEYS: [&str; 24] = [
    "C", "delta", "epsilon", "I_ext", "g_Ca", "g_K", "g_KS", "g_L", "g_syn", "E_Ca", "E_K",
    "E_KS", "E_L", "E_s_post", "E_s_pre", "k_Ca", "k_K", "k_KS", "k_s", "v_Ca", "v_K", "v_KS",
    "a", "tau_s",
];

impl NeuronParams {
    /// Row one of the parameter table; `delta` is the speed parameter.
    pub const DELTA_CONTROL: NeuronParams = NeuronParams {
        c: 1.2,
        delta: 0.02,
        epsilon: 4.9,
        i_ext: 35.6,
        g_ca: 4.4,
        g_k: 9.0,
        g_ks: 0.19,
        g_l: 2.0,
        g_syn: 0.01,
        e_ca: 120.0,
        e_k: -80.0,
        e_ks: -80.0,
        e_l: -60.0,
        e_s_post: -70.0,
        e_s_pre: 2.0,
        k_ca: 0.056,
        k_k: 0.1,
        k_ks: 0.8,
        k_s: 0.11,
        v_ca: -1.2,
        v_k: 2.0,
        v_ks: -27.0,
        a: 55.56,
        tau_s: 5.56,
        tau_m_scale: 1.0,
        tau_w_scale: 1.0,
    };

    /// Row two of the parameter table; `I_ext` is the speed parameter.
    pub const IEXT_CONTROL: NeuronParams = NeuronParams {
        c: 1.2,
        delta: 0.027,
        epsilon: 5.0,
        i_ext: 36.5,
        g_ca: 4.4,
        g_k: 9.0,
        g_ks: 0.5,
        g_l: 2.0,
        g_syn: 0.01,
        e_ca: 120.0,
        e_k: -80.0,
        e_ks: -80.0,
        e_l: -60.0,
        e_s_post: -70.0,
        e_s_pre: 2.0,
        k_ca: 0.056,
        k_k: 0.1,
        k_ks: 0.8,
        k_s: 0.11,
        v_ca: -1.2,
        v_k: 2.0,
        v_ks: -26.0,
        a: 444.48,
        tau_s: 5.56,
        tau_m_scale: 1.0,
        tau_w_scale: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = self.to_array();
        if let Some(i) = all.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("{} is not finite", PARAM_KEYS[i])));
        }
        for (name, g) in [
            ("g_Ca", self.g_ca),
            ("g_K", self.g_k),
            ("g_KS", self.g_ks),
            ("g_L", self.g_l),
            ("g_syn", self.g_syn),
        ] {
            if g < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} = {g} must be >= 0")));
            }
        }
        for (name, x) in [
            ("C", self.c),
            ("tau_s", self.tau_s),
            ("epsilon", self.epsilon),
            ("a", self.a),
        ] {
            if x <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} = {x} must be > 0")));
            }
        }
        for (name, x) in SCALE_KEYS.iter().zip([self.tau_m_scale, self.tau_w_scale]) {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} = {x} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 24] {
        [
            self.c, self.delta, self.epsilon, self.i_ext, self.g_ca, self.g_k, self.g_ks,
            self.g_l, self.g_syn, self.e_ca, self.e_k, self.e_ks, self.e_l, self.e_s_post,
            self.e_s_pre, self.k_ca, self.k_k, self.k_ks, self.k_s, self.v_ca, self.v_k,
            self.v_ks, self.a, self.tau_s,
        ]
    }

    pub fn from_array(x: [f64; 24]) -> Self {
        NeuronParams {
            c: x[0],
            delta: x[1],
            epsilon: x[2],
            i_ext: x[3],
            g_ca: x[4],
            g_k: x[5],
            g_ks: x[6],
            g_l: x[7],
            g_syn: x[8],
            e_ca: x[9],
            e_k: x[10],
            e_ks: x[11],
            e_l: x[12],
            e_s_post: x[13],
            e_s_pre: x[14],
            k_ca: x[15],
            k_k: x[16],
            k_ks: x[17],
            k_s: x[18],
            v_ca: x[19],
            v_k: x[20],
            v_ks: x[21],
            a: x[22],
            tau_s: x[23],
            tau_m_scale: 1.0,
            tau_w_scale: 1.0,
        }
    }

    /// Parse a plain-text `key = value` file. Every key in [`PARAM_KEYS`]
    /// must appear exactly once; `#` starts a comment.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 24] = [None; 24];
        let mut scales: [Option<f64>; 2] = [None; 2];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let line_no = lineno + 1;
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("expected key = value, got '{line}'") })?;
            let key = key.trim();
            let slot = if let Some(i) = PARAM_KEYS.iter().position(|k| *k == key) {
                &mut vals[i]
            } else if let Some(i) = SCALE_KEYS.iter().position(|k| *k == key) {
                &mut scales[i]
            } else {
                return Err(Error::Parse { line: line_no, msg: format!("unknown key '{key}'") });
            };
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad number for {key}: '{}'", value.trim()) })?;
            if slot.replace(v).is_some() {
                return Err(Error::Parse { line: line_no, msg: format!("duplicate key '{key}'") });
            }
        }
        let mut out = [0.0; 24];
        for (i, v) in vals.iter().enumerate() {
            out[i] = v.ok_or_else(|| Error::Parse {
                line: text.lines().count(),
                msg: format!("missing key '{}'", PARAM_KEYS[i]),
            })?;
        }
        let mut p = Self::from_array(out);
        p.tau_m_scale = scales[0].unwrap_or(1.0);
        p.tau_w_scale = scales[1].unwrap_or(1.0);
        p.validate()?;
        Ok(p)
    }

    pub fn to_config(&self) -> String {
        PARAM_KEYS
            .iter()
            .zip(self.to_array())
            .chain(SCALE_KEYS.iter().zip([self.tau_m_scale, self.tau_w_scale]).filter(|(_, v)| *v != 1.0))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Argument of the cosh in the m relaxation rate.
    #[inline]
    pub(crate) fn m_rate_arg(&self, v: f64) -> f64 {
        self.tau_m_scale * self.k_k * (v - self.v_k)
    }

    #[inline]
    pub(crate) fn w_rate_arg(&self, v: f64) -> f64 {
        self.tau_w_scale * self.k_ks * (v - self.v_ks)
    }
}

/// Which parameter plays the role of walking speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedParam {
    Delta,
    IExt,
}

impl SpeedParam {
    pub fn get(self, p: &NeuronParams) -> f64 {
        match self {
            SpeedParam::Delta => p.delta,
            SpeedParam::IExt => p.i_ext,
        }
    }

    pub fn set(self, p: &mut NeuronParams, xi: f64) {
        match self {
            SpeedParam::Delta => p.delta = xi,
            SpeedParam::IExt => p.i_ext = xi,
        }
    }
}

/// A named, immutable parameter row together with its speed sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPreset {
    pub name: String,
    pub params: NeuronParams,
    pub sweep_param: SpeedParam,
    pub sweep_range: [f64; 2],
}

impl ParamPreset {
    pub fn delta_control() -> Self {
        ParamPreset {
            name: "delta-control".into(),
            params: NeuronParams::DELTA_CONTROL,
            sweep_param: SpeedParam::Delta,
            sweep_range: [0.0097, 0.04],
        }
    }

    pub fn iext_control() -> Self {
        ParamPreset {
            name: "iext-control".into(),
            params: NeuronParams::IEXT_CONTROL,
            sweep_param: SpeedParam::IExt,
            sweep_range: [35.65, 37.7],
        }
    }

    pub fn builtin() -> [ParamPreset; 2] {
        [Self::delta_control(), Self::iext_control()]
    }

    /// Parameters with the speed parameter set to `xi`.
    pub fn at(&self, xi: f64) -> NeuronParams {
        let mut p = self.params;
        self.sweep_param.set(&mut p, xi);
        p
    }

    /// `n` evenly spaced speed values covering the sweep range.
    pub fn sweep_values(&self, n: usize) -> Vec<f64> {
        let [lo, hi] = self.sweep_range;
        match n {
            0 => vec![],
            1 => vec![lo],
            _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

impl FromStr for ParamPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta-control" | "delta" => Ok(Self::delta_control()),
            "iext-control" | "iext" | "I_ext" => Ok(Self::iext_control()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

/// One cell's state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: f64,
    pub m: f64,
    pub w: f64,
    pub s: f64,
}

impl NeuronState {
    pub fn new(v: f64, m: f64, w: f64, s: f64) -> Self {
        NeuronState { v, m, w, s }
    }

    /// The initial condition used for the single-cell runs.
    pub fn canonical_initial() -> Self {
        NeuronState::new(-70.0, -10.0, -4.0, 2.0)
    }

    /// State at voltage `v` with gates at steady state and `s = s_inf/(s_inf+1)`,
    /// the fixed point of the synapse equation.
    pub fn resting_at(v: f64, p: &NeuronParams) -> Self {
        let g = gating_steady_states(v, p);
        NeuronState::new(v, g.m_inf, g.w_inf, g.s_inf / (g.s_inf + 1.0))
    }

    pub fn to_array(self) -> [f64; CELL_DIM] {
        [self.v, self.m, self.w, self.s]
    }

    pub fn from_array(x: [f64; CELL_DIM]) -> Self {
        NeuronState::new(x[0], x[1], x[2], x[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Logs a warning when a gate sits far outside its natural range.
    pub fn warn_if_unphysical(&self) -> bool {
        let bad = self.m.abs() > GATING_WARN_LEVEL
            || self.w.abs() > GATING_WARN_LEVEL
            || self.s.abs() > GATING_WARN_LEVEL;
        if bad {
            log::warn!("gating variables far outside [0, 1]: {self:?}");
        }
        bad
    }
}

impl fmt::Display for NeuronState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(v={}, m={}, w={}, s={})", self.v, self.m, self.w, self.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingSteadyStates {
    pub m_inf: f64,
    pub w_inf: f64,
    pub n_inf: f64,
    pub s_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonicCurrents {
    pub i_ca: f64,
    pub i_k: f64,
    pub i_ks: f64,
    pub i_l: f64,
}

impl IonicCurrents {
    pub fn total(&self) -> f64 {
        self.i_ca + self.i_k + self.i_ks + self.i_l
    }
}

#[inline]
fn sigmoid(v: f64, k: f64, half: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * k * (v - half)).exp())
}

pub fn gating_steady_states(v: f64, p: &NeuronParams) -> GatingSteadyStates {
    GatingSteadyStates {
        m_inf: sigmoid(v, p.k_k, p.v_k),
        w_inf: sigmoid(v, p.k_ks, p.v_ks),
        n_inf: sigmoid(v, p.k_ca, p.v_ca),
        s_inf: p.a * sigmoid(v, p.k_s, p.e_s_pre),
    }
}

/// `tau_m(v) = sech(k_K (v - v_K))` (argument times `tau_m_scale`).
pub fn tau_m(v: f64, p: &NeuronParams) -> f64 {
    1.0 / p.m_rate_arg(v).cosh()
}

/// `tau_w(v) = sech(k_KS (v - v_KS))` (argument times `tau_w_scale`).
pub fn tau_w(v: f64, p: &NeuronParams) -> f64 {
    1.0 / p.w_rate_arg(v).cosh()
}

/// Indices of the two relaxing gates in the state vector.
pub const GATE_INDICES: [usize; 2] = [1, 2];

/// (steady state, relaxation rate) of m and w at voltage `v`; each gate obeys
/// `x' = rate (target - x)` with v frozen.
pub fn gate_relaxation(v: f64, p: &NeuronParams) -> [(f64, f64); 2] {
    [
        (sigmoid(v, p.k_k, p.v_k), p.epsilon * p.m_rate_arg(v).cosh()),
        (sigmoid(v, p.k_ks, p.v_ks), p.delta * p.w_rate_arg(v).cosh()),
    ]
}

pub fn ionic_currents(state: &NeuronState, p: &NeuronParams) -> IonicCurrents {
    let v = state.v;
    let n_inf = sigmoid(v, p.k_ca, p.v_ca);
    IonicCurrents {
        i_ca: p.g_ca * n_inf * (v - p.e_ca),
        i_k: p.g_k * state.m * (v - p.e_k),
        i_ks: p.g_ks * state.w * (v - p.e_ks),
        i_l: p.g_l * (v - p.e_l),
    }
}

/// Time derivative of one cell. `i_syn` is the summed synaptic current
/// entering the cell (zero when isolated).
#[inline]
pub fn vector_field(x: &[f64; CELL_DIM], p: &NeuronParams, i_syn: f64) -> [f64; CELL_DIM] {
    let [v, m, w, s] = *x;
    let n_inf = sigmoid(v, p.k_ca, p.v_ca);
    let m_inf = sigmoid(v, p.k_k, p.v_k);
    let w_inf = sigmoid(v, p.k_ks, p.v_ks);
    let s_inf = p.a * sigmoid(v, p.k_s, p.e_s_pre);
    let i_ion = p.g_ca * n_inf * (v - p.e_ca)
        + p.g_k * m * (v - p.e_k)
        + p.g_ks * w * (v - p.e_ks)
        + p.g_l * (v - p.e_l);
    // epsilon / tau_m = epsilon * cosh(...)
    let rate_m = p.epsilon * p.m_rate_arg(v).cosh();
    let rate_w = p.delta * p.w_rate_arg(v).cosh();
    [
        (-i_ion + p.i_ext + i_syn) / p.c,
        rate_m * (m_inf - m),
        rate_w * (w_inf - w),
        (s_inf * (1.0 - s) - s) / p.tau_s,
    ]
}

/// Convenience wrapper over [`vector_field`] using the named state type.
pub fn derivative(state: &NeuronState, p: &NeuronParams, i_syn: f64) -> NeuronState {
    NeuronState::from_array(vector_field(&state.to_array(), p, i_syn))
}

/// Analytic Jacobian of the isolated-cell field, `J[i][j] = d f_i / d x_j`.
pub fn jacobian(x: &[f64; CELL_DIM], p: &NeuronParams) -> [[f64; CELL_DIM]; CELL_DIM] {
    let [v, m, w, s] = *x;
    let n_inf = sigmoid(v, p.k_ca, p.v_ca);
    let m_inf = sigmoid(v, p.k_k, p.v_k);
    let w_inf = sigmoid(v, p.k_ks, p.v_ks);
    let sig_s = sigmoid(v, p.k_s, p.e_s_pre);
    let s_inf = p.a * sig_s;

    let dn = 2.0 * p.k_ca * n_inf * (1.0 - n_inf);
    let dm_inf = 2.0 * p.k_k * m_inf * (1.0 - m_inf);
    let dw_inf = 2.0 * p.k_ks * w_inf * (1.0 - w_inf);
    let ds_inf = p.a * 2.0 * p.k_s * sig_s * (1.0 - sig_s);

    let d_ica = p.g_ca * (dn * (v - p.e_ca) + n_inf);
    let dfv_dv = -(d_ica + p.g_k * m + p.g_ks * w + p.g_l) / p.c;
    let dfv_dm = -p.g_k * (v - p.e_k) / p.c;
    let dfv_dw = -p.g_ks * (v - p.e_ks) / p.c;

    let zm = p.m_rate_arg(v);
    let dfm_dv = p.epsilon * (p.tau_m_scale * p.k_k * zm.sinh() * (m_inf - m) + zm.cosh() * dm_inf);
    let dfm_dm = -p.epsilon * zm.cosh();

    let zw = p.w_rate_arg(v);
    let dfw_dv = p.delta * (p.tau_w_scale * p.k_ks * zw.sinh() * (w_inf - w) + zw.cosh() * dw_inf);
    let dfw_dw = -p.delta * zw.cosh();

    let dfs_dv = ds_inf * (1.0 - s) / p.tau_s;
    let dfs_ds = -(s_inf + 1.0) / p.tau_s;

    [
        [dfv_dv, dfv_dm, dfv_dw, 0.0],
        [dfm_dv, dfm_dm, 0.0, 0.0],
        [dfw_dv, 0.0, dfw_dw, 0.0],
        [dfs_dv, 0.0, 0.0, dfs_ds],
    ]
}
