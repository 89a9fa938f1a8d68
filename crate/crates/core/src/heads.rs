//! Classification heads and the joint loss.
//!
//! Four sigmoid heads score the binary MBTI dimensions, a softmax head scores
//! the sixteen full types, and the training loss is the sum of the four
//! binary cross-entropies plus the categorical cross-entropy. Per-example
//! losses are min-max normalized into the [0, 1] prediction-error signal.

use crate::encoder::Labels;
use crate::error::{Error, Result};
use crate::num::rng::{xavier_matrix, Rng};
use crate::num::scalar::Scalar;
use crate::num::store::ParameterStore;
use crate::num::tape::{Tape, Var};
use crate::num::tensor::Tensor;

const BIN_W: &str = "heads.bin_w";
const BIN_B: &str = "heads.bin_b";
const W16: &str = "heads.w16";
const B16: &str = "heads.b16";

/// Probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] before logs so
/// saturated heads cannot produce infinite losses.
const PROB_EPS: f64 = 1e-12;

/// Four per-dimension sigmoid heads, stored as a 4 x h weight matrix plus a
/// 4-vector of biases.
#[derive(Clone, Copy, Debug)]
pub struct BinaryHeads {
    pub h: usize,
}

impl BinaryHeads {
    pub fn init<S: Scalar>(store: &mut ParameterStore<S>, h: usize, rng: &mut Rng) -> Result<Self> {
        store.insert(BIN_W, xavier_matrix(4, h, rng))?;
        store.insert(BIN_B, Tensor::zeros(&[4]))?;
        Ok(BinaryHeads { h })
    }

    pub fn attach<S: Scalar>(store: &ParameterStore<S>, h: usize) -> Result<Self> {
        for name in [BIN_W, BIN_B] {
            if !store.contains(name) {
                return Err(Error::invalid(format!("store is missing `{name}`")));
            }
        }
        Ok(BinaryHeads { h })
    }

    /// Probabilities p_d = sigmoid(w_d . y + b_d) and hard predictions.
    /// The threshold is strict: exactly 0.5 maps to class 0.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        y: Var,
    ) -> Result<(Var, [u8; 4])> {
        if tape.value(y).len() != self.h {
            return Err(Error::invalid(format!(
                "feature width {} does not match binary heads width {}",
                tape.value(y).len(),
                self.h
            )));
        }
        let w = tape.param(store, BIN_W)?;
        let b = tape.param(store, BIN_B)?;
        let logits = tape.matvec(w, y)?;
        let logits = tape.add(logits, b)?;
        let probs = tape.sigmoid(logits);
        let half = S::of(0.5);
        let preds = std::array::from_fn(|d| {
            if tape.value(probs).values()[d] > half {
                1
            } else {
                0
            }
        });
        Ok((probs, preds))
    }
}

/// Sixteen-way softmax head (16 x h weights, 16 biases).
#[derive(Clone, Copy, Debug)]
pub struct MulticlassHead {
    pub h: usize,
}

impl MulticlassHead {
    pub fn init<S: Scalar>(store: &mut ParameterStore<S>, h: usize, rng: &mut Rng) -> Result<Self> {
        store.insert(W16, xavier_matrix(16, h, rng))?;
        store.insert(B16, Tensor::zeros(&[16]))?;
        Ok(MulticlassHead { h })
    }

    pub fn attach<S: Scalar>(store: &ParameterStore<S>, h: usize) -> Result<Self> {
        for name in [W16, B16] {
            if !store.contains(name) {
                return Err(Error::invalid(format!("store is missing `{name}`")));
            }
        }
        Ok(MulticlassHead { h })
    }

    /// Sixteen type probabilities and the argmax prediction (lowest index on
    /// ties).
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        y: Var,
    ) -> Result<(Var, usize)> {
        if tape.value(y).len() != self.h {
            return Err(Error::invalid(format!(
                "feature width {} does not match multiclass head width {}",
                tape.value(y).len(),
                self.h
            )));
        }
        let w = tape.param(store, W16)?;
        let b = tape.param(store, B16)?;
        let logits = tape.matvec(w, y)?;
        let logits = tape.add(logits, b)?;
        let probs = tape.softmax(logits)?;
        let pred = crate::routing::argmax_route(tape.value(probs).values())?;
        Ok((probs, pred))
    }
}

/// Tape handles for the joint loss and its parts.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub binary: [Var; 4],
    pub multiclass: Var,
}

/// loss_total = sum_d BCE(p_d, label_d) + CE(p16, type_index), natural logs,
/// probabilities clamped before the logs.
pub fn joint_loss<S: Scalar>(
    tape: &mut Tape<S>,
    binary_probs: Var,
    type_probs: Var,
    labels: &Labels,
    type_index: usize,
) -> Result<LossVars> {
    if type_index != labels.type_index() {
        return Err(Error::invalid(format!(
            "type index {type_index} does not match label bits (expected {})",
            labels.type_index()
        )));
    }
    if tape.value(binary_probs).len() != 4 || tape.value(type_probs).len() != 16 {
        return Err(Error::invalid(
            "joint_loss expects 4 binary and 16 type probabilities",
        ));
    }
    let lo = S::of(PROB_EPS);
    let hi = S::of(1.0 - PROB_EPS);
    let bits = labels.bits();
    let mut binary = [tape.scalar(S::zero()); 4];
    for d in 0..4 {
        let p = tape.index(binary_probs, d)?;
        let pc = tape.clamp(p, lo, hi);
        let signal = if bits[d] == 1 {
            pc
        } else {
            let negp = tape.neg(pc);
            tape.add_scalar(negp, S::one())
        };
        let logp = tape.ln(signal);
        binary[d] = tape.neg(logp);
    }
    let ptype = tape.index(type_probs, type_index)?;
    let ptype = tape.clamp(ptype, lo, hi);
    let logp = tape.ln(ptype);
    let multiclass = tape.neg(logp);

    let mut total = binary[0];
    for part in &binary[1..] {
        total = tape.add(total, *part)?;
    }
    let total = tape.add(total, multiclass)?;
    Ok(LossVars {
        total,
        binary,
        multiclass,
    })
}

/// Min-max normalization of per-example losses into [0, 1]. A contrast-free
/// batch (all equal, or a single example) maps to all zeros.
pub fn compute_pe(per_example_losses: &[f64]) -> Vec<f64> {
    if per_example_losses.is_empty() {
        return Vec::new();
    }
    let min = per_example_losses
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = per_example_losses
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return vec![0.0; per_example_losses.len()];
    }
    per_example_losses
        .iter()
        .map(|&l| (l - min) / (max - min))
        .collect()
}

/// Everything the pipeline reports about one example's prediction.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictionBundle {
    pub binary_probs: [f64; 4],
    pub binary_preds: [u8; 4],
    pub type_probs: Vec<f64>,
    pub type_pred: usize,
    pub loss_total: f64,
    pub loss_binary: [f64; 4],
    pub loss_multiclass: f64,
    pub pe: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heads_store(h: usize, rng: &mut Rng) -> (ParameterStore<f64>, BinaryHeads, MulticlassHead) {
        let mut store = ParameterStore::new();
        let bin = BinaryHeads::init(&mut store, h, rng).unwrap();
        let multi = MulticlassHead::init(&mut store, h, rng).unwrap();
        (store, bin, multi)
    }

    fn zero_heads_store(h: usize) -> (ParameterStore<f64>, BinaryHeads, MulticlassHead) {
        let mut store = ParameterStore::new();
        store.insert(BIN_W, Tensor::zeros(&[4, h])).unwrap();
        store.insert(BIN_B, Tensor::zeros(&[4])).unwrap();
        store.insert(W16, Tensor::zeros(&[16, h])).unwrap();
        store.insert(B16, Tensor::zeros(&[16])).unwrap();
        (store, BinaryHeads { h }, MulticlassHead { h })
    }

    #[test]
    fn zero_heads_give_half_probs_and_zero_preds() {
        let (store, bin, multi) = zero_heads_store(3);
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let (probs, preds) = bin.forward(&mut tape, &store, y).unwrap();
        assert_eq!(tape.value(probs).values(), &[0.5; 4]);
        // Exactly 0.5 maps to class 0 under the strict threshold.
        assert_eq!(preds, [0, 0, 0, 0]);

        let (p16, pred) = multi.forward(&mut tape, &store, y).unwrap();
        for &p in tape.value(p16).values() {
            assert!((p - 1.0 / 16.0).abs() < 1e-12);
        }
        assert_eq!(pred, 0);
    }

    #[test]
    fn saturated_bias_flips_prediction() {
        let (mut store, bin, _) = zero_heads_store(2);
        store
            .set_value(BIN_B, Tensor::vector(vec![10.0, 0.0, 0.0, 0.0]))
            .unwrap();
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let (probs, preds) = bin.forward(&mut tape, &store, y).unwrap();
        assert!(tape.value(probs).values()[0] > 0.9999);
        assert_eq!(preds, [1, 0, 0, 0]);
    }

    #[test]
    fn dominant_multiclass_bias_wins() {
        let (mut store, _, multi) = zero_heads_store(2);
        let mut b = vec![0.0; 16];
        b[7] = 25.0;
        store.set_value(B16, Tensor::vector(b)).unwrap();
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let (_, pred) = multi.forward(&mut tape, &store, y).unwrap();
        assert_eq!(pred, 7);
    }

    #[test]
    fn binary_heads_match_dot_sigmoid_oracle() {
        let mut rng = Rng::new(167);
        let h = 4;
        let (store, bin, _) = heads_store(h, &mut rng);
        let yv: Vec<f64> = (0..h).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::vector(yv.clone()));
        let (probs, _) = bin.forward(&mut tape, &store, y).unwrap();
        let w = store.get(BIN_W).unwrap();
        let b = store.get(BIN_B).unwrap();
        for d in 0..4 {
            let mut acc = b.values()[d];
            for c in 0..h {
                acc += w.at(d, c) * yv[c];
            }
            let expect = 1.0 / (1.0 + (-acc).exp());
            assert!((tape.value(probs).values()[d] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn type_probs_sum_to_one() {
        let mut rng = Rng::new(173);
        let (store, _, multi) = heads_store(6, &mut rng);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let y = tape.constant(Tensor::vector(
                (0..6).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            ));
            let (p16, _) = multi.forward(&mut tape, &store, y).unwrap();
            let total: f64 = tape.value(p16).values().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    fn loss_of(probs4: [f64; 4], probs16: Vec<f64>, labels: Labels) -> (f64, [f64; 4], f64) {
        let mut tape: Tape<f64> = Tape::new();
        let bp = tape.constant(Tensor::vector(probs4.to_vec()));
        let tp = tape.constant(Tensor::vector(probs16));
        let lv = joint_loss(&mut tape, bp, tp, &labels, labels.type_index()).unwrap();
        (
            tape.value(lv.total).as_scalar().unwrap(),
            std::array::from_fn(|d| tape.value(lv.binary[d]).as_scalar().unwrap()),
            tape.value(lv.multiclass).as_scalar().unwrap(),
        )
    }

    #[test]
    fn confident_correct_predictions_near_zero_loss() {
        let labels = Labels::new(1, 0, 1, 0).unwrap();
        let mut p16 = vec![0.0; 16];
        p16[labels.type_index()] = 1.0;
        let (total, _, _) = loss_of([1.0, 0.0, 1.0, 0.0], p16, labels);
        assert!(total <= 5e-11, "loss {total}");
    }

    #[test]
    fn uniform_predictions_analytic_loss() {
        let labels = Labels::new(0, 1, 1, 0).unwrap();
        let (total, parts, multi) = loss_of([0.5; 4], vec![1.0 / 16.0; 16], labels);
        let expect = 4.0 * 2.0f64.ln() + 16.0f64.ln();
        assert!((total - expect).abs() < 1e-12, "{total} vs {expect}");
        assert!((total - 5.5452).abs() < 1e-4);
        for p in parts {
            assert!((p - 2.0f64.ln()).abs() < 1e-12);
        }
        assert!((multi - 16.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn random_losses_match_scalar_oracle() {
        let mut rng = Rng::new(179);
        for _ in 0..100 {
            let probs4: [f64; 4] = std::array::from_fn(|_| rng.next_f64().clamp(0.01, 0.99));
            let mut p16: Vec<f64> = (0..16).map(|_| rng.next_f64() + 0.01).collect();
            let total16: f64 = p16.iter().sum();
            for p in p16.iter_mut() {
                *p /= total16;
            }
            let labels = Labels::from_type_index(rng.below(16)).unwrap();
            let (total, parts, multi) = loss_of(probs4, p16.clone(), labels);

            let bits = labels.bits();
            let mut oracle = 0.0;
            for d in 0..4 {
                let p = probs4[d].clamp(1e-12, 1.0 - 1e-12);
                let term = if bits[d] == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                };
                assert!((parts[d] - term).abs() < 1e-10);
                oracle += term;
            }
            let ce = -p16[labels.type_index()].clamp(1e-12, 1.0 - 1e-12).ln();
            assert!((multi - ce).abs() < 1e-10);
            oracle += ce;
            assert!((total - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn total_is_exact_sum_of_parts() {
        let mut rng = Rng::new(181);
        for _ in 0..50 {
            let probs4: [f64; 4] = std::array::from_fn(|_| rng.next_f64().clamp(0.05, 0.95));
            let mut p16: Vec<f64> = (0..16).map(|_| rng.next_f64() + 0.01).collect();
            let total16: f64 = p16.iter().sum();
            for p in p16.iter_mut() {
                *p /= total16;
            }
            let labels = Labels::from_type_index(rng.below(16)).unwrap();
            let (total, parts, multi) = loss_of(probs4, p16, labels);
            let resummed = (((parts[0] + parts[1]) + parts[2]) + parts[3]) + multi;
            assert_eq!(total, resummed);
            assert!(total >= 0.0);
        }
    }

    #[test]
    fn inconsistent_labels_rejected() {
        let labels = Labels::new(1, 0, 0, 0).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let bp = tape.constant(Tensor::vector(vec![0.5; 4]));
        let tp = tape.constant(Tensor::vector(vec![1.0 / 16.0; 16]));
        assert!(joint_loss(&mut tape, bp, tp, &labels, 3).is_err());
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = Rng::new(191);
        let h = 4;
        let (mut store, bin, multi) = heads_store(h, &mut rng);
        // Treat the specialist feature vector as a parameter so its gradient
        // is checked too.
        store
            .insert(
                "feat",
                Tensor::vector((0..h).map(|_| rng.uniform(-1.0, 1.0)).collect()),
            )
            .unwrap();
        let labels = Labels::new(0, 1, 0, 1).unwrap();

        let f = |s: &ParameterStore<f64>| -> f64 {
            let mut tape = Tape::new();
            let y = tape.param(s, "feat").unwrap();
            let (bp, _) = bin.forward(&mut tape, s, y).unwrap();
            let (tp, _) = multi.forward(&mut tape, s, y).unwrap();
            let lv = joint_loss(&mut tape, bp, tp, &labels, labels.type_index()).unwrap();
            tape.value(lv.total).as_scalar().unwrap()
        };

        let mut tape = Tape::new();
        let y = tape.param(&store, "feat").unwrap();
        let (bp, _) = bin.forward(&mut tape, &store, y).unwrap();
        let (tp, _) = multi.forward(&mut tape, &store, y).unwrap();
        let lv = joint_loss(&mut tape, bp, tp, &labels, labels.type_index()).unwrap();
        tape.backward(lv.total, &mut store).unwrap();

        let step = 1e-5;
        for name in [BIN_W, BIN_B, W16, B16, "feat"] {
            let base = store.get(name).unwrap().clone();
            let analytic = store.grad(name).unwrap().values().to_vec();
            for i in 0..base.len() {
                let mut plus = store.clone();
                let mut t = base.clone();
                t.values_mut()[i] += step;
                plus.set_value(name, t).unwrap();
                let mut minus = store.clone();
                let mut t = base.clone();
                t.values_mut()[i] -= step;
                minus.set_value(name, t).unwrap();
                let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
                let rel =
                    (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1.0);
                assert!(rel < 1e-4, "{name}[{i}]: {} vs {numeric}", analytic[i]);
            }
        }
    }

    #[test]
    fn compute_pe_reference_cases() {
        assert_eq!(compute_pe(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(compute_pe(&[3.0, 3.0, 3.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(compute_pe(&[5.0]), vec![0.0]);
        assert!(compute_pe(&[]).is_empty());
    }

    #[test]
    fn compute_pe_affine_invariant() {
        let mut rng = Rng::new(193);
        for _ in 0..50 {
            let xs: Vec<f64> = (0..8).map(|_| rng.uniform(0.0, 10.0)).collect();
            let a = rng.uniform(0.1, 5.0);
            let c = rng.uniform(-3.0, 3.0);
            let ys: Vec<f64> = xs.iter().map(|x| a * x + c).collect();
            let pe_x = compute_pe(&xs);
            let pe_y = compute_pe(&ys);
            for (p, q) in pe_x.iter().zip(&pe_y) {
                assert!((p - q).abs() < 1e-12);
                assert!((0.0..=1.0).contains(p));
            }
        }
    }

    #[test]
    fn binary_and_type_heads_are_independent() {
        // Nothing forces the binary predictions to agree with the 16-way
        // head; construct a store where they visibly disagree.
        let (mut store, bin, multi) = zero_heads_store(2);
        store
            .set_value(BIN_B, Tensor::vector(vec![10.0, 10.0, 10.0, 10.0]))
            .unwrap();
        let mut b = vec![0.0; 16];
        b[0] = 25.0;
        store.set_value(B16, Tensor::vector(b)).unwrap();
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let (_, preds) = bin.forward(&mut tape, &store, y).unwrap();
        let (_, tpred) = multi.forward(&mut tape, &store, y).unwrap();
        let implied = Labels::new(preds[0], preds[1], preds[2], preds[3])
            .unwrap()
            .type_index();
        assert_eq!(implied, 15);
        assert_eq!(tpred, 0);
    }
}
