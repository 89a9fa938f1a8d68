//! Specialist scoring and winner-take-all routing.
//!
//! A linear gating network scores each specialist, prediction error flattens
//! or sharpens the scores, Gumbel-Softmax relaxes the selection during
//! training, and inference applies a strict argmax so exactly one specialist
//! runs per user.

use crate::error::{Error, Result};
use crate::num::rng::{sample_gumbel, xavier_matrix, Rng};
use crate::num::scalar::Scalar;
use crate::num::store::ParameterStore;
use crate::num::tape::{Tape, Var};
use crate::num::tensor::Tensor;

const GATING_W: &str = "routing.w";
const GATING_B: &str = "routing.b";

/// Linear gating network: score_k = w_k . m + b_k.
#[derive(Clone, Copy, Debug)]
pub struct GatingParameters {
    pub k: usize,
    pub d: usize,
    pub lambda: f64,
}

impl GatingParameters {
    pub fn init<S: Scalar>(
        store: &mut ParameterStore<S>,
        k: usize,
        d: usize,
        lambda: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("specialist count {k} must be >= 2")));
        }
        if lambda < 0.0 {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        store.insert(GATING_W, xavier_matrix(k, d, rng))?;
        store.insert(GATING_B, Tensor::zeros(&[k]))?;
        Ok(GatingParameters { k, d, lambda })
    }

    pub fn attach<S: Scalar>(
        store: &ParameterStore<S>,
        k: usize,
        d: usize,
        lambda: f64,
    ) -> Result<Self> {
        for name in [GATING_W, GATING_B] {
            if !store.contains(name) {
                return Err(Error::invalid(format!("store is missing `{name}`")));
            }
        }
        Ok(GatingParameters { k, d, lambda })
    }

    pub fn suitability_scores<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        m: Var,
    ) -> Result<Var> {
        if tape.value(m).len() != self.d {
            return Err(Error::invalid(format!(
                "memory width {} does not match gating width {}",
                tape.value(m).len(),
                self.d
            )));
        }
        let w = tape.param(store, GATING_W)?;
        let b = tape.param(store, GATING_B)?;
        let wm = tape.matvec(w, m)?;
        tape.add(wm, b)
    }
}

/// Contract the scores toward their mean in proportion to the prediction
/// error: s' = mean + (1 - lambda*pe) * (s - mean). High error flattens the
/// scores, zero error leaves them unchanged, and the winner never changes
/// while lambda*pe < 1.
pub fn modulate_scores<S: Scalar>(tape: &mut Tape<S>, s: Var, pe: f64, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&pe) {
        return Err(Error::invalid(format!("pe = {pe} outside [0, 1]")));
    }
    let shrink = lambda * pe;
    if shrink >= 1.0 {
        return Err(Error::invalid(format!(
            "lambda * pe = {shrink} must stay below 1"
        )));
    }
    let n = tape.value(s).len();
    let mu = tape.mean(s)?;
    let c = S::of(1.0 - shrink);
    let scaled = tape.scale(s, c);
    let mu_part = tape.scale(mu, S::one() - c);
    let mu_vec = tape.broadcast(mu_part, n)?;
    tape.add(scaled, mu_vec)
}

/// Linear decay from tau_start at epoch 0 to tau_end at `anneal_epochs`,
/// constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub anneal_epochs: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            tau_start: 1.0,
            tau_end: 0.1,
            anneal_epochs: 20,
        }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_start >= self.tau_end && self.tau_end > 0.0) {
            return Err(Error::invalid(
                "temperature schedule needs tau_start >= tau_end > 0",
            ));
        }
        Ok(())
    }

    pub fn temperature_at(&self, epoch: usize) -> f64 {
        if self.anneal_epochs == 0 || epoch >= self.anneal_epochs {
            return self.tau_end;
        }
        let frac = epoch as f64 / self.anneal_epochs as f64;
        self.tau_start + (self.tau_end - self.tau_start) * frac
    }
}

/// Relaxed routing probabilities p = softmax((s' + g) / tau) with fresh
/// Gumbel noise. The noise is detached; gradients flow only through s'.
pub fn gumbel_softmax_route<S: Scalar>(
    tape: &mut Tape<S>,
    s_mod: Var,
    tau: f64,
    rng: &mut Rng,
) -> Result<Var> {
    let k = tape.value(s_mod).len();
    let noise = sample_gumbel::<S>(&[k], rng);
    gumbel_softmax_route_with_noise(tape, s_mod, tau, &noise)
}

/// Same as [`gumbel_softmax_route`] with caller-supplied noise, mainly for
/// tests that force the noise to zero.
pub fn gumbel_softmax_route_with_noise<S: Scalar>(
    tape: &mut Tape<S>,
    s_mod: Var,
    tau: f64,
    noise: &Tensor<S>,
) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature {tau} must be positive"
        )));
    }
    let g = tape.constant(noise.clone());
    let shifted = tape.add(s_mod, g)?;
    let sharp = tape.scale(shifted, S::of(1.0 / tau));
    tape.softmax(sharp)
}

/// Index of the maximum score; ties break toward the lowest index.
pub fn argmax_route<S: Scalar>(scores: &[S]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid("argmax of empty score vector"));
    }
    let mut best = 0usize;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecialistKind {
    Mlp,
    Recurrent,
    Conv,
}

/// Size knobs for the specialist pool.
#[derive(Clone, Copy, Debug)]
pub struct SpecialistSizes {
    pub mlp_hidden: usize,
    pub recurrent_hidden: usize,
    pub conv_channels: usize,
}

impl Default for SpecialistSizes {
    fn default() -> Self {
        SpecialistSizes {
            mlp_hidden: 128,
            recurrent_hidden: 32,
            conv_channels: 32,
        }
    }
}

/// K independent lightweight specialists sharing an output width `h` but no
/// parameters. Kinds cycle mlp -> recurrent -> conv as K grows.
#[derive(Clone, Debug)]
pub struct SpecialistPool {
    pub kinds: Vec<SpecialistKind>,
    /// Width of the routed memory vector.
    pub d_model: usize,
    /// Width of the encoder rows consumed by recurrent/conv specialists.
    pub d_enc: usize,
    pub h: usize,
    pub sizes: SpecialistSizes,
}

impl SpecialistPool {
    pub fn kinds_for(k: usize) -> Vec<SpecialistKind> {
        let cycle = [
            SpecialistKind::Mlp,
            SpecialistKind::Recurrent,
            SpecialistKind::Conv,
        ];
        (0..k).map(|i| cycle[i % 3]).collect()
    }

    pub fn init<S: Scalar>(
        store: &mut ParameterStore<S>,
        k: usize,
        d_model: usize,
        d_enc: usize,
        h: usize,
        sizes: SpecialistSizes,
        rng: &mut Rng,
    ) -> Result<Self> {
        let pool = SpecialistPool {
            kinds: Self::kinds_for(k),
            d_model,
            d_enc,
            h,
            sizes,
        };
        for (idx, kind) in pool.kinds.iter().enumerate() {
            let p = |suffix: &str| format!("specialist.{idx}.{suffix}");
            match kind {
                SpecialistKind::Mlp => {
                    let hid = sizes.mlp_hidden;
                    store.insert(&p("w1"), xavier_matrix(hid, d_model, rng))?;
                    store.insert(&p("b1"), Tensor::zeros(&[hid]))?;
                    store.insert(&p("w2"), xavier_matrix(h, hid, rng))?;
                    store.insert(&p("b2"), Tensor::zeros(&[h]))?;
                }
                SpecialistKind::Recurrent => {
                    let hid = sizes.recurrent_hidden;
                    for gate in ["i", "f", "c"] {
                        store.insert(&p(&format!("w_{gate}")), xavier_matrix(hid, d_enc, rng))?;
                        store.insert(&p(&format!("u_{gate}")), xavier_matrix(hid, hid, rng))?;
                        store.insert(&p(&format!("b_{gate}")), Tensor::zeros(&[hid]))?;
                    }
                    store.insert(&p("out_w"), xavier_matrix(h, hid + d_model, rng))?;
                    store.insert(&p("out_b"), Tensor::zeros(&[h]))?;
                }
                SpecialistKind::Conv => {
                    let ch = sizes.conv_channels;
                    store.insert(&p("kernel"), xavier_matrix(ch, 3 * d_enc, rng))?;
                    store.insert(&p("bias"), Tensor::zeros(&[ch]))?;
                    store.insert(&p("out_w"), xavier_matrix(h, ch + d_model, rng))?;
                    store.insert(&p("out_b"), Tensor::zeros(&[h]))?;
                }
            }
        }
        Ok(pool)
    }

    pub fn attach(
        k: usize,
        d_model: usize,
        d_enc: usize,
        h: usize,
        sizes: SpecialistSizes,
    ) -> Self {
        SpecialistPool {
            kinds: Self::kinds_for(k),
            d_model,
            d_enc,
            h,
            sizes,
        }
    }

    pub fn k(&self) -> usize {
        self.kinds.len()
    }

    /// Run specialist `k` on the memory vector and the raw post embeddings,
    /// producing a width-h feature vector.
    pub fn specialist_forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        k: usize,
        m: Var,
        h_rows: &Tensor<S>,
    ) -> Result<Var> {
        let kind = *self
            .kinds
            .get(k)
            .ok_or_else(|| Error::invalid(format!("specialist index {k} out of range")))?;
        let p = |suffix: &str| format!("specialist.{k}.{suffix}");
        match kind {
            SpecialistKind::Mlp => {
                let w1 = tape.param(store, &p("w1"))?;
                let b1 = tape.param(store, &p("b1"))?;
                let w2 = tape.param(store, &p("w2"))?;
                let b2 = tape.param(store, &p("b2"))?;
                let h1 = tape.matvec(w1, m)?;
                let h1 = tape.add(h1, b1)?;
                let a1 = tape.tanh(h1);
                let out = tape.matvec(w2, a1)?;
                tape.add(out, b2)
            }
            SpecialistKind::Recurrent => {
                let hid = self.sizes.recurrent_hidden;
                let wi = tape.param(store, &p("w_i"))?;
                let ui = tape.param(store, &p("u_i"))?;
                let bi = tape.param(store, &p("b_i"))?;
                let wf = tape.param(store, &p("w_f"))?;
                let uf = tape.param(store, &p("u_f"))?;
                let bf = tape.param(store, &p("b_f"))?;
                let wc = tape.param(store, &p("w_c"))?;
                let uc = tape.param(store, &p("u_c"))?;
                let bc = tape.param(store, &p("b_c"))?;
                let mut state = tape.constant(Tensor::zeros(&[hid]));
                for r in 0..h_rows.rows() {
                    let x = tape.constant(Tensor::vector(h_rows.row(r)));
                    let gate = |tape: &mut Tape<S>, w: Var, u: Var, b: Var| -> Result<Var> {
                        let wx = tape.matvec(w, x)?;
                        let us = tape.matvec(u, state)?;
                        let s = tape.add(wx, us)?;
                        tape.add(s, b)
                    };
                    let i_pre = gate(tape, wi, ui, bi)?;
                    let f_pre = gate(tape, wf, uf, bf)?;
                    let c_pre = gate(tape, wc, uc, bc)?;
                    let i = tape.sigmoid(i_pre);
                    let f = tape.sigmoid(f_pre);
                    let c = tape.tanh(c_pre);
                    let keep = tape.mul(f, state)?;
                    let write = tape.mul(i, c)?;
                    state = tape.add(keep, write)?;
                }
                let joint = tape.concat(&[state, m])?;
                let ow = tape.param(store, &p("out_w"))?;
                let ob = tape.param(store, &p("out_b"))?;
                let out = tape.matvec(ow, joint)?;
                tape.add(out, ob)
            }
            SpecialistKind::Conv => {
                let d = self.d_enc;
                let kernel = tape.param(store, &p("kernel"))?;
                let bias = tape.param(store, &p("bias"))?;
                let rows = h_rows.rows();
                let zero_row = vec![S::zero(); d];
                let mut per_pos = Vec::with_capacity(rows);
                for r in 0..rows {
                    // Width-3 window, zero-padded at the edges.
                    let mut window = Vec::with_capacity(3 * d);
                    for off in [-1i64, 0, 1] {
                        let idx = r as i64 + off;
                        if idx < 0 || idx >= rows as i64 {
                            window.extend_from_slice(&zero_row);
                        } else {
                            window.extend(h_rows.row(idx as usize));
                        }
                    }
                    let win = tape.constant(Tensor::vector(window));
                    let conv = tape.matvec(kernel, win)?;
                    let conv = tape.add(conv, bias)?;
                    per_pos.push(tape.tanh(conv));
                }
                let pooled = tape.max_list(&per_pos)?;
                let joint = tape.concat(&[pooled, m])?;
                let ow = tape.param(store, &p("out_w"))?;
                let ob = tape.param(store, &p("out_b"))?;
                let out = tape.matvec(ow, joint)?;
                tape.add(out, ob)
            }
        }
    }
}

/// Training-time routed output: the relaxed mixture sum_k p_k * y_k over all
/// specialist outputs. Evaluation bypasses this and uses the winner's output
/// directly, so exactly one specialist runs.
pub fn relaxed_mixture<S: Scalar>(tape: &mut Tape<S>, p: Var, outputs: &[Var]) -> Result<Var> {
    let k = tape.value(p).len();
    if outputs.len() != k {
        return Err(Error::invalid(format!(
            "mixture needs {k} specialist outputs, got {}",
            outputs.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (idx, &out) in outputs.iter().enumerate() {
        let w = tape.index(p, idx)?;
        let term = tape.mul_scalar_var(out, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("k >= 2"))
}

/// Per-user routing summary.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoutingDecision {
    pub scores: Vec<f64>,
    pub modulated: Vec<f64>,
    pub relaxed: Vec<f64>,
    pub winner: usize,
}
