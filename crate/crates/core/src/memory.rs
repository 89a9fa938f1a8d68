//! Gated working memory with prediction-error modulation.
//!
//! The cell retains and updates the pooled user representation across the
//! post sequence: sigmoid input/forget gates, a tanh candidate, PE-shifted
//! gate activations, a positional nudge, and train-time dropout.

use crate::error::{Error, Result};
use crate::num::rng::{xavier_matrix, Rng};
use crate::num::scalar::Scalar;
use crate::num::store::ParameterStore;
use crate::num::tape::{Tape, Var};
use crate::num::tensor::Tensor;
use crate::Mode;

/// Parameter name for the optional output projection.
pub const MEMORY_PROJ: &str = "memory.proj";

/// The gate parameter group: W_*, U_* are d x d, biases are width d.
/// Matrices are Xavier-initialized, biases start at zero.
#[derive(Clone, Copy, Debug)]
pub struct GateParameters {
    pub d: usize,
}

const GATE_MATS: [&str; 6] = [
    "memory.w_i",
    "memory.w_f",
    "memory.w_c",
    "memory.u_i",
    "memory.u_f",
    "memory.u_c",
];
const GATE_BIASES: [&str; 3] = ["memory.b_i", "memory.b_f", "memory.b_c"];

impl GateParameters {
    pub fn init<S: Scalar>(store: &mut ParameterStore<S>, d: usize, rng: &mut Rng) -> Result<Self> {
        for name in GATE_MATS {
            store.insert(name, xavier_matrix(d, d, rng))?;
        }
        for name in GATE_BIASES {
            store.insert(name, Tensor::zeros(&[d]))?;
        }
        Ok(GateParameters { d })
    }

    /// Use gate parameters already present in the store (checkpoint restore).
    pub fn attach<S: Scalar>(store: &ParameterStore<S>, d: usize) -> Result<Self> {
        for name in GATE_MATS.iter().chain(GATE_BIASES.iter()) {
            if !store.contains(name) {
                return Err(Error::invalid(format!("store is missing `{name}`")));
            }
        }
        Ok(GateParameters { d })
    }

    /// i = sigmoid(W_i z + U_i m + b_i), f likewise, g = tanh(W_c z + U_c m + b_c).
    pub fn gate_forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        z: Var,
        m_prev: Var,
    ) -> Result<(Var, Var, Var)> {
        if tape.value(z).len() != self.d || tape.value(m_prev).len() != self.d {
            return Err(Error::invalid(format!(
                "gate_forward widths {} / {} do not match d = {}",
                tape.value(z).len(),
                tape.value(m_prev).len(),
                self.d
            )));
        }
        let pre = |w: &str, u: &str, b: &str, tape: &mut Tape<S>| -> Result<Var> {
            let wv = tape.param(store, w)?;
            let uv = tape.param(store, u)?;
            let bv = tape.param(store, b)?;
            let wz = tape.matvec(wv, z)?;
            let um = tape.matvec(uv, m_prev)?;
            let s = tape.add(wz, um)?;
            tape.add(s, bv)
        };
        let i_pre = pre("memory.w_i", "memory.u_i", "memory.b_i", tape)?;
        let f_pre = pre("memory.w_f", "memory.u_f", "memory.b_f", tape)?;
        let g_pre = pre("memory.w_c", "memory.u_c", "memory.b_c", tape)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        Ok((i, f, g))
    }
}

/// Working-memory vector plus the update counter.
#[derive(Clone, Copy, Debug)]
pub struct MemoryState {
    pub m: Var,
    pub step: usize,
}

impl MemoryState {
    /// Fresh zero state of width d.
    pub fn zero<S: Scalar>(tape: &mut Tape<S>, d: usize) -> Self {
        MemoryState {
            m: tape.constant(Tensor::zeros(&[d])),
            step: 0,
        }
    }
}

/// Modulation coefficients and update hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct MemoryModulationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub dropout: f64,
    pub positional_coeff: f64,
    pub projection_width: Option<usize>,
}

impl Default for MemoryModulationConfig {
    fn default() -> Self {
        MemoryModulationConfig {
            alpha: 0.1,
            beta: 0.1,
            dropout: 0.2,
            positional_coeff: 0.1,
            projection_width: None,
        }
    }
}

impl MemoryModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::invalid("alpha and beta must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Shift the gates by the prediction error: i' = clamp(i + alpha*pe, 0, 1),
/// f' = clamp(f - beta*pe, 0, 1). PE is a detached scalar; no gradient flows
/// through it.
pub fn modulate_gates<S: Scalar>(
    tape: &mut Tape<S>,
    i: Var,
    f: Var,
    pe: f64,
    cfg: &MemoryModulationConfig,
) -> Result<(Var, Var)> {
    if !(0.0..=1.0).contains(&pe) {
        return Err(Error::invalid(format!("pe = {pe} outside [0, 1]")));
    }
    let up = tape.add_scalar(i, S::of(cfg.alpha * pe));
    let i_mod = tape.clamp(up, S::zero(), S::one());
    let down = tape.add_scalar(f, S::of(-cfg.beta * pe));
    let f_mod = tape.clamp(down, S::zero(), S::one());
    Ok((i_mod, f_mod))
}

/// Normalized post position mapped to [-1, 1]; zero for a single-step horizon.
pub fn positional_signal(step: usize, horizon: usize) -> f64 {
    if horizon <= 1 {
        0.0
    } else {
        (2.0 * step as f64 / (horizon - 1) as f64 - 1.0).clamp(-1.0, 1.0)
    }
}

/// Core update m = f' .* m_prev + i' .* g, then the positional nudge, then
/// train-mode dropout (inverted scaling; eval applies none).
#[allow(clippy::too_many_arguments)]
pub fn memory_update<S: Scalar>(
    tape: &mut Tape<S>,
    m_prev: &MemoryState,
    i_mod: Var,
    f_mod: Var,
    g: Var,
    cfg: &MemoryModulationConfig,
    mode: Mode,
    horizon: usize,
    rng: &mut Rng,
) -> Result<MemoryState> {
    let retain = tape.mul(f_mod, m_prev.m)?;
    let write = tape.mul(i_mod, g)?;
    let core = tape.add(retain, write)?;
    let placed = finish_update(tape, core, cfg, mode, m_prev.step, horizon, rng);
    Ok(MemoryState {
        m: placed,
        step: m_prev.step + 1,
    })
}

/// Positional nudge plus dropout, shared by the gated cell and the MLP
/// ablation cell.
pub(crate) fn finish_update<S: Scalar>(
    tape: &mut Tape<S>,
    core: Var,
    cfg: &MemoryModulationConfig,
    mode: Mode,
    step: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Var {
    let mut out = core;
    if cfg.positional_coeff != 0.0 {
        let shift = cfg.positional_coeff * positional_signal(step, horizon);
        out = tape.add_scalar(out, S::of(shift));
    }
    if mode == Mode::Train && cfg.dropout > 0.0 {
        let keep = 1.0 / (1.0 - cfg.dropout);
        let width = tape.value(out).len();
        let mask = Tensor::vector(
            (0..width)
                .map(|_| {
                    if rng.bernoulli(cfg.dropout) {
                        S::zero()
                    } else {
                        S::of(keep)
                    }
                })
                .collect(),
        );
        let mask = tape.constant(mask);
        out = tape.mul(out, mask).expect("mask width matches");
    }
    out
}

/// Optional learned linear projection of the memory vector; identity when the
/// projection is not configured.
pub fn project_memory<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    m: Var,
    projection: Option<usize>,
) -> Result<Var> {
    match projection {
        None => Ok(m),
        Some(width) => {
            let p = tape.param(store, MEMORY_PROJ)?;
            if tape.value(p).shape() != [width, tape.value(m).len()] {
                return Err(Error::invalid(format!(
                    "projection shape {:?} does not map width {} to {width}",
                    tape.value(p).shape(),
                    tape.value(m).len()
                )));
            }
            tape.matvec(p, m)
        }
    }
}

pub fn init_projection<S: Scalar>(
    store: &mut ParameterStore<S>,
    d: usize,
    width: usize,
    rng: &mut Rng,
) -> Result<()> {
    store.insert(MEMORY_PROJ, xavier_matrix(width, d, rng))
}

/// The memory-ablation cell: a one-hidden-layer perceptron on [z; m_prev]
/// with tanh activations, keeping the recurrent structure but no gating.
#[derive(Clone, Copy, Debug)]
pub struct MlpMemoryParameters {
    pub d: usize,
}

const MLP_NAMES: [&str; 4] = [
    "memory.mlp_w1",
    "memory.mlp_b1",
    "memory.mlp_w2",
    "memory.mlp_b2",
];

impl MlpMemoryParameters {
    pub fn init<S: Scalar>(store: &mut ParameterStore<S>, d: usize, rng: &mut Rng) -> Result<Self> {
        store.insert(MLP_NAMES[0], xavier_matrix(d, 2 * d, rng))?;
        store.insert(MLP_NAMES[1], Tensor::zeros(&[d]))?;
        store.insert(MLP_NAMES[2], xavier_matrix(d, d, rng))?;
        store.insert(MLP_NAMES[3], Tensor::zeros(&[d]))?;
        Ok(MlpMemoryParameters { d })
    }

    pub fn attach<S: Scalar>(store: &ParameterStore<S>, d: usize) -> Result<Self> {
        for name in MLP_NAMES {
            if !store.contains(name) {
                return Err(Error::invalid(format!("store is missing `{name}`")));
            }
        }
        Ok(MlpMemoryParameters { d })
    }

    pub fn cell_forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        z: Var,
        m_prev: Var,
    ) -> Result<Var> {
        let joint = tape.concat(&[z, m_prev])?;
        let w1 = tape.param(store, MLP_NAMES[0])?;
        let b1 = tape.param(store, MLP_NAMES[1])?;
        let w2 = tape.param(store, MLP_NAMES[2])?;
        let b2 = tape.param(store, MLP_NAMES[3])?;
        let h = tape.matvec(w1, joint)?;
        let h = tape.add(h, b1)?;
        let h = tape.tanh(h);
        let o = tape.matvec(w2, h)?;
        let o = tape.add(o, b2)?;
        Ok(tape.tanh(o))
    }
}
