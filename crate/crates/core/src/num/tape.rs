//! Reverse-mode automatic differentiation over a recorded computation tape.
//!
//! Operations push nodes onto the tape and return [`Var`] index handles;
//! [`Tape::backward`] walks the tape in reverse and accumulates gradients
//! into the [`ParameterStore`] entries that were bound with [`Tape::param`].

use crate::error::{Error, Result};
use crate::num::scalar::Scalar;
use crate::num::store::ParameterStore;
use crate::num::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<S> = Box<dyn Fn(&Tensor<S>, &mut [Tensor<S>])>;

struct Node<S: Scalar> {
    value: Tensor<S>,
    back: Option<BackFn<S>>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    bindings: Vec<(usize, String)>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, back: Option<BackFn<S>>) -> Var {
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    /// Record an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, None)
    }

    pub fn scalar(&mut self, v: S) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Bind a store parameter as a leaf; its gradient is accumulated back
    /// into the store by [`Tape::backward`].
    pub fn param(&mut self, store: &ParameterStore<S>, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        let var = self.push(value, None);
        self.bindings.push((var.0, name.to_string()));
        Ok(var)
    }

    fn check_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::invalid(format!(
                "{op}: shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(g);
                grads[b.0].add_assign(g);
            })),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(g);
                let neg = g.map(|v| -v);
                grads[b.0].add_assign(&neg);
            })),
        ))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let value = va.zip_map(&vb, |x, y| x * y)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(&g.zip_map(&vb, |gi, y| gi * y).expect("shape"));
                grads[b.0].add_assign(&g.zip_map(&va, |gi, x| gi * x).expect("shape"));
            })),
        ))
    }

    /// Multiply by a non-differentiable scalar constant.
    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(&g.map(|gi| gi * c));
            })),
        )
    }

    /// Add a non-differentiable scalar constant to every entry.
    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(g);
            })),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -S::one())
    }

    /// Multiply a tensor by a rank-0 variable (both differentiable).
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).as_scalar()?;
        let va = self.value(a).clone();
        let value = va.map(|x| x * sv);
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(&g.map(|gi| gi * sv));
                let mut acc = S::zero();
                for (gi, xi) in g.values().iter().zip(va.values()) {
                    acc = acc + *gi * *xi;
                }
                grads[s.0].add_assign(&Tensor::scalar(acc));
            })),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let value = va.matmul(&vb)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                // dA = G B^T, dB = A^T G
                let bt = vb.transpose().expect("rank-2");
                grads[a.0].add_assign(&g.matmul(&bt).expect("shape"));
                let at = va.transpose().expect("rank-2");
                grads[b.0].add_assign(&at.matmul(g).expect("shape"));
            })),
        ))
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let va = self.value(a).clone();
        let vx = self.value(x).clone();
        let value = va.matvec(&vx)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(&Tensor::outer(g, &vx));
                grads[x.0].add_assign(&va.tmatvec(g));
            })),
        ))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let value = Tensor::scalar(va.dot(&vb)?);
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                let g0 = g.as_scalar().expect("scalar");
                grads[a.0].add_assign(&vb.map(|y| y * g0));
                grads[b.0].add_assign(&va.map(|x| x * g0));
            })),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = S::zero();
        for v in self.value(a).values() {
            acc = acc + *v;
        }
        self.push(
            Tensor::scalar(acc),
            Some(Box::new(move |g, grads| {
                let g0 = g.as_scalar().expect("scalar");
                grads[a.0].add_assign(&Tensor::filled(grads[a.0].shape(), g0));
            })),
        )
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::invalid("mean of empty tensor"));
        }
        let s = self.sum(a);
        Ok(self.scale(s, S::one() / S::of(n as f64)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| S::one() / (S::one() + (-x).exp()));
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(
                    &g.zip_map(&y, |gi, yi| gi * yi * (S::one() - yi))
                        .expect("shape"),
                );
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(
                    &g.zip_map(&y, |gi, yi| gi * (S::one() - yi * yi))
                        .expect("shape"),
                );
            })),
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let value = x.map(|v| v.ln());
        self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(&g.zip_map(&x, |gi, xi| gi / xi).expect("shape"));
            })),
        )
    }

    /// Clamp to [lo, hi]. The subgradient at the boundary counts as interior:
    /// gradient 1 wherever lo <= x <= hi, 0 outside. NaN propagates so a
    /// diverged value cannot masquerade as a boundary value.
    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        let x = self.value(a).clone();
        let value = x.map(|v| if v.is_nan() { v } else { v.max(lo).min(hi) });
        self.push(
            value,
            Some(Box::new(move |g, grads| {
                grads[a.0].add_assign(
                    &g.zip_map(
                        &x,
                        |gi, xi| {
                            if xi >= lo && xi <= hi {
                                gi
                            } else {
                                S::zero()
                            }
                        },
                    )
                    .expect("shape"),
                );
            })),
        )
    }

    /// Numerically stable softmax of a rank-1 vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() != 1 || x.is_empty() {
            return Err(Error::invalid("softmax expects a non-empty rank-1 vector"));
        }
        let max = x
            .values()
            .iter()
            .cloned()
            .fold(S::neg_infinity(), |m, v| m.max(v));
        let exps: Vec<S> = x.values().iter().map(|&v| (v - max).exp()).collect();
        let mut total = S::zero();
        for e in &exps {
            total = total + *e;
        }
        let value = Tensor::vector(exps.iter().map(|&e| e / total).collect());
        let y = value.clone();
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                let mut gy = S::zero();
                for (gi, yi) in g.values().iter().zip(y.values()) {
                    gy = gy + *gi * *yi;
                }
                grads[a.0].add_assign(&g.zip_map(&y, |gi, yi| yi * (gi - gy)).expect("shape"));
            })),
        ))
    }

    /// Pick element `i` of a rank-1 vector as a rank-0 scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rank() != 1 || i >= x.len() {
            return Err(Error::invalid(format!(
                "index {i} out of bounds for shape {:?}",
                x.shape()
            )));
        }
        let value = Tensor::scalar(x.values()[i]);
        Ok(self.push(
            value,
            Some(Box::new(move |g, grads| {
                let g0 = g.as_scalar().expect("scalar");
                grads[a.0].values_mut()[i] = grads[a.0].values()[i] + g0;
            })),
        ))
    }

    /// Concatenate rank-1 vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero vectors"));
        }
        let mut values = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::invalid("concat expects rank-1 vectors"));
            }
            lens.push(v.len());
            values.extend_from_slice(v.values());
        }
        let owned: Vec<Var> = parts.to_vec();
        Ok(self.push(
            Tensor::vector(values),
            Some(Box::new(move |g, grads| {
                let mut off = 0;
                for (&p, &len) in owned.iter().zip(&lens) {
                    for j in 0..len {
                        grads[p.0].values_mut()[j] = grads[p.0].values()[j] + g.values()[off + j];
                    }
                    off += len;
                }
            })),
        ))
    }

    /// Broadcast a rank-0 scalar to a rank-1 vector of length `n`.
    pub fn broadcast(&mut self, s: Var, n: usize) -> Result<Var> {
        let v = self.value(s).as_scalar()?;
        Ok(self.push(
            Tensor::vector(vec![v; n]),
            Some(Box::new(move |g, grads| {
                let mut acc = S::zero();
                for gi in g.values() {
                    acc = acc + *gi;
                }
                grads[s.0].add_assign(&Tensor::scalar(acc));
            })),
        ))
    }

    /// Entry-wise maximum across a list of same-length vectors. Ties route the
    /// gradient to the earliest vector in the list.
    pub fn max_list(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("max_list of zero vectors"));
        }
        let n = self.value(parts[0]).len();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 || v.len() != n {
                return Err(Error::invalid(
                    "max_list expects same-length rank-1 vectors",
                ));
            }
        }
        let mut best = self.value(parts[0]).values().to_vec();
        let mut winners = vec![0usize; n];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            for (j, &v) in self.value(p).values().iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    winners[j] = k;
                }
            }
        }
        let owned: Vec<Var> = parts.to_vec();
        Ok(self.push(
            Tensor::vector(best),
            Some(Box::new(move |g, grads| {
                for (j, &w) in winners.iter().enumerate() {
                    let target = owned[w].0;
                    grads[target].values_mut()[j] = grads[target].values()[j] + g.values()[j];
                }
            })),
        ))
    }

    /// Backpropagate from a scalar loss, accumulating dLoss/dParam into the
    /// store's gradient buffers for every bound parameter. Parameters that do
    /// not participate keep their gradients untouched.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<S>) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward expects a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Tensor<S>> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros_like(&n.value))
            .collect();
        grads[loss.0] = Tensor::scalar(S::one());
        for idx in (0..=loss.0).rev() {
            if let Some(back) = &self.nodes[idx].back {
                let g = grads[idx].clone();
                back(&g, &mut grads);
            }
        }
        for (idx, name) in &self.bindings {
            store.accumulate_grad(name, &grads[*idx])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rng::Rng;

    fn store_with(name: &str, t: Tensor<f64>) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert(name, t).unwrap();
        s
    }

    #[test]
    fn softmax_symmetry_and_shift() {
        let mut tape: Tape<f64> = Tape::new();
        let v = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let p = tape.softmax(v).unwrap();
        assert_eq!(tape.value(p).values(), &[0.5, 0.5]);

        let c = tape.constant(Tensor::vector(vec![3.7, 3.7, 3.7]));
        let pc = tape.softmax(c).unwrap();
        for &x in tape.value(pc).values() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_reference_values() {
        // Direct evaluation of the exp/sum oracle at [1, 2, 3].
        let exps = [1.0f64.exp(), 2.0f64.exp(), 3.0f64.exp()];
        let total: f64 = exps.iter().sum();
        let expect: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let p = tape.softmax(v).unwrap();
        for (got, want) in tape.value(p).values().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
        // Matches the quoted digits too.
        assert!((tape.value(p).values()[0] - 0.09003).abs() < 5e-6);
        assert!((tape.value(p).values()[1] - 0.24473).abs() < 5e-6);
        assert!((tape.value(p).values()[2] - 0.66524).abs() < 5e-6);
    }

    #[test]
    fn softmax_sums_to_one_on_random_inputs() {
        let mut rng = Rng::new(11);
        for _ in 0..200 {
            let n = 1 + rng.below(8);
            let vals: Vec<f64> = (0..n).map(|_| rng.uniform(-20.0, 20.0)).collect();
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::vector(vals));
            let p = tape.softmax(v).unwrap();
            let total: f64 = tape.value(p).values().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(tape.value(p).values().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut rng = Rng::new(13);
        for _ in 0..100 {
            let vals: Vec<f64> = (0..5).map(|_| rng.uniform(-10.0, 10.0)).collect();
            let shift = rng.uniform(-50.0, 50.0);
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let mut tape = Tape::new();
            let a = tape.constant(Tensor::vector(vals));
            let b = tape.constant(Tensor::vector(shifted));
            let pa = tape.softmax(a).unwrap();
            let pb = tape.softmax(b).unwrap();
            for (x, y) in tape.value(pa).values().iter().zip(tape.value(pb).values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rejects_empty() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(Vec::<f64>::new()));
        assert!(tape.softmax(v).is_err());
    }

    #[test]
    fn elementwise_fixed_points() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).values(), &[0.5]);
        let t = tape.tanh(z);
        assert_eq!(tape.value(t).values(), &[0.0]);
        let x = tape.constant(Tensor::vector(vec![1.3]));
        let c = tape.clamp(x, 0.0, 1.0);
        assert_eq!(tape.value(c).values(), &[1.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
    }

    #[test]
    fn matmul_reference_cases_on_tape() {
        let mut tape: Tape<f64> = Tape::new();
        let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let ones = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let prod = tape.matmul(m, ones).unwrap();
        assert_eq!(tape.value(prod).values(), &[3.0, 7.0]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut store = store_with("p", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let loss = tape.sum(p);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("p").unwrap().values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_gives_param() {
        let mut store = store_with("p", Tensor::vector(vec![0.5, -1.5, 2.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("p").unwrap().values(), &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = store_with("p", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let double = tape.scale(p, 2.0);
        assert!(tape.backward(double, &mut store).is_err());
    }

    #[test]
    fn non_participating_parameter_gets_zero_gradient() {
        let mut store = ParameterStore::new();
        store
            .insert("used", Tensor::vector(vec![1.0, 2.0]))
            .unwrap();
        store.insert("idle", Tensor::vector(vec![3.0])).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, "used").unwrap();
        let loss = tape.sum(p);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("idle").unwrap().values(), &[0.0]);
    }

    /// Central finite differences over every parameter element.
    fn finite_diff(
        store: &ParameterStore<f64>,
        name: &str,
        f: &dyn Fn(&ParameterStore<f64>) -> f64,
    ) -> Vec<f64> {
        let h = 1e-5;
        let base = store.get(name).unwrap().clone();
        let mut out = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut plus = store.clone();
            let mut t = base.clone();
            t.values_mut()[i] += h;
            plus.set_value(name, t).unwrap();
            let mut minus = store.clone();
            let mut t = base.clone();
            t.values_mut()[i] -= h;
            minus.set_value(name, t).unwrap();
            out.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
        out
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let mut store = ParameterStore::new();
        store
            .insert("w1", crate::num::rng::xavier_matrix(4, 3, &mut rng))
            .unwrap();
        store
            .insert("w2", crate::num::rng::xavier_matrix(4, 4, &mut rng))
            .unwrap();
        store
            .insert("w3", crate::num::rng::xavier_vector(4, &mut rng))
            .unwrap();
        let x = Tensor::vector(vec![0.3, -1.2, 0.8]);

        let f = |s: &ParameterStore<f64>| -> f64 {
            let mut tape = Tape::new();
            let w1 = tape.param(s, "w1").unwrap();
            let w2 = tape.param(s, "w2").unwrap();
            let w3 = tape.param(s, "w3").unwrap();
            let xv = tape.constant(x.clone());
            let h1 = tape.matvec(w1, xv).unwrap();
            let a1 = tape.tanh(h1);
            let h2 = tape.matvec(w2, a1).unwrap();
            let a2 = tape.sigmoid(h2);
            let loss = tape.dot(w3, a2).unwrap();
            tape.value(loss).as_scalar().unwrap()
        };

        let mut tape = Tape::new();
        let w1 = tape.param(&store, "w1").unwrap();
        let w2 = tape.param(&store, "w2").unwrap();
        let w3 = tape.param(&store, "w3").unwrap();
        let xv = tape.constant(x.clone());
        let h1 = tape.matvec(w1, xv).unwrap();
        let a1 = tape.tanh(h1);
        let h2 = tape.matvec(w2, a1).unwrap();
        let a2 = tape.sigmoid(h2);
        let loss = tape.dot(w3, a2).unwrap();
        tape.backward(loss, &mut store).unwrap();

        for name in ["w1", "w2", "w3"] {
            let numeric = finite_diff(&store, name, &f);
            let analytic = store.grad(name).unwrap().values();
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!(
                    rel_err(*a, *n) < 1e-4,
                    "{name}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    type OpBuilder = Box<dyn Fn(&mut Tape<f64>, Var, Var) -> Var>;

    #[test]
    fn every_op_matches_finite_differences() {
        // Random inputs in [-2, 2], one small graph per op.
        let mut rng = Rng::new(23);
        let builders: Vec<(&str, OpBuilder)> = vec![
            ("add", Box::new(|t, a, b| t.add(a, b).unwrap())),
            ("sub", Box::new(|t, a, b| t.sub(a, b).unwrap())),
            ("mul", Box::new(|t, a, b| t.mul(a, b).unwrap())),
            ("scale", Box::new(|t, a, _| t.scale(a, -1.7))),
            ("add_scalar", Box::new(|t, a, _| t.add_scalar(a, 0.4))),
            ("sigmoid", Box::new(|t, a, _| t.sigmoid(a))),
            ("tanh", Box::new(|t, a, _| t.tanh(a))),
            ("clamp", Box::new(|t, a, _| t.clamp(a, -0.9, 0.9))),
            ("softmax", Box::new(|t, a, _| t.softmax(a).unwrap())),
            ("concat", Box::new(|t, a, b| t.concat(&[a, b]).unwrap())),
            ("max_list", Box::new(|t, a, b| t.max_list(&[a, b]).unwrap())),
        ];
        for (name, build) in &builders {
            for _ in 0..10 {
                let va: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let vb: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let probe: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let mut store = ParameterStore::new();
                store.insert("a", Tensor::vector(va)).unwrap();
                store.insert("b", Tensor::vector(vb)).unwrap();

                let probe = probe.clone();
                let f = {
                    let probe = probe.clone();
                    move |s: &ParameterStore<f64>| -> f64 {
                        let mut tape = Tape::new();
                        let a = tape.param(s, "a").unwrap();
                        let b = tape.param(s, "b").unwrap();
                        let y = build(&mut tape, a, b);
                        // Weighted sum collapses any output shape to a scalar.
                        let w = tape.constant(Tensor::vector(
                            probe
                                .iter()
                                .cycle()
                                .take(tape.value(y).len())
                                .cloned()
                                .collect(),
                        ));
                        let prod = tape.mul(y, w).unwrap();
                        let loss = tape.sum(prod);
                        tape.value(loss).as_scalar().unwrap()
                    }
                };

                let mut tape = Tape::new();
                let a = tape.param(&store, "a").unwrap();
                let b = tape.param(&store, "b").unwrap();
                let y = build(&mut tape, a, b);
                let w = tape.constant(Tensor::vector(
                    probe
                        .iter()
                        .cycle()
                        .take(tape.value(y).len())
                        .cloned()
                        .collect(),
                ));
                let prod = tape.mul(y, w).unwrap();
                let loss = tape.sum(prod);
                tape.backward(loss, &mut store).unwrap();

                for pname in ["a", "b"] {
                    let numeric = finite_diff(&store, pname, &f);
                    let analytic = store.grad(pname).unwrap().values();
                    for (ga, gn) in analytic.iter().zip(&numeric) {
                        assert!(
                            rel_err(*ga, *gn) < 1e-4,
                            "op {name} param {pname}: analytic {ga} vs numeric {gn}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ln_matches_finite_differences_on_positive_inputs() {
        let mut rng = Rng::new(27);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..4).map(|_| rng.uniform(0.1, 2.0)).collect();
            let probe: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let mut store = ParameterStore::new();
            store.insert("a", Tensor::vector(vals)).unwrap();
            let f = {
                let probe = probe.clone();
                move |s: &ParameterStore<f64>| -> f64 {
                    let mut tape = Tape::new();
                    let a = tape.param(s, "a").unwrap();
                    let y = tape.ln(a);
                    let w = tape.constant(Tensor::vector(probe.clone()));
                    let prod = tape.mul(y, w).unwrap();
                    let loss = tape.sum(prod);
                    tape.value(loss).as_scalar().unwrap()
                }
            };
            let mut tape = Tape::new();
            let a = tape.param(&store, "a").unwrap();
            let y = tape.ln(a);
            let w = tape.constant(Tensor::vector(probe.clone()));
            let prod = tape.mul(y, w).unwrap();
            let loss = tape.sum(prod);
            tape.backward(loss, &mut store).unwrap();
            let numeric = finite_diff(&store, "a", &f);
            for (ga, gn) in store.grad("a").unwrap().values().iter().zip(&numeric) {
                assert!(rel_err(*ga, *gn) < 1e-4, "{ga} vs {gn}");
            }
        }
    }

    #[test]
    fn matrix_ops_match_finite_differences() {
        let mut rng = Rng::new(29);
        let mut store = ParameterStore::new();
        store
            .insert("m", crate::num::rng::xavier_matrix(3, 4, &mut rng))
            .unwrap();
        store
            .insert("x", crate::num::rng::xavier_vector(4, &mut rng))
            .unwrap();
        store
            .insert("n", crate::num::rng::xavier_matrix(4, 3, &mut rng))
            .unwrap();

        let f = |s: &ParameterStore<f64>| -> f64 {
            let mut tape = Tape::new();
            let m = tape.param(s, "m").unwrap();
            let x = tape.param(s, "x").unwrap();
            let n = tape.param(s, "n").unwrap();
            let mv = tape.matvec(m, x).unwrap();
            let mm = tape.matmul(m, n).unwrap();
            let s1 = tape.sum(mv);
            let s2 = tape.sum(mm);
            let d = tape.dot(x, x).unwrap();
            let t1 = tape.add(s1, s2).unwrap();
            let loss = tape.add(t1, d).unwrap();
            tape.value(loss).as_scalar().unwrap()
        };

        let mut tape = Tape::new();
        let m = tape.param(&store, "m").unwrap();
        let x = tape.param(&store, "x").unwrap();
        let n = tape.param(&store, "n").unwrap();
        let mv = tape.matvec(m, x).unwrap();
        let mm = tape.matmul(m, n).unwrap();
        let s1 = tape.sum(mv);
        let s2 = tape.sum(mm);
        let d = tape.dot(x, x).unwrap();
        let t1 = tape.add(s1, s2).unwrap();
        let loss = tape.add(t1, d).unwrap();
        tape.backward(loss, &mut store).unwrap();

        for pname in ["m", "x", "n"] {
            let numeric = finite_diff(&store, pname, &f);
            let analytic = store.grad(pname).unwrap().values();
            for (ga, gn) in analytic.iter().zip(&numeric) {
                assert!(rel_err(*ga, *gn) < 1e-4, "{pname}: {ga} vs {gn}");
            }
        }
    }

    #[test]
    fn index_broadcast_mul_scalar_match_finite_differences() {
        let mut store = ParameterStore::new();
        store
            .insert("v", Tensor::vector(vec![0.3, -0.7, 1.1]))
            .unwrap();
        let f = |s: &ParameterStore<f64>| -> f64 {
            let mut tape = Tape::new();
            let v = tape.param(s, "v").unwrap();
            let e1 = tape.index(v, 1).unwrap();
            let b = tape.broadcast(e1, 3).unwrap();
            let scaled = tape.mul_scalar_var(v, e1).unwrap();
            let both = tape.add(b, scaled).unwrap();
            let loss = tape.sum(both);
            tape.value(loss).as_scalar().unwrap()
        };
        let mut tape = Tape::new();
        let v = tape.param(&store, "v").unwrap();
        let e1 = tape.index(v, 1).unwrap();
        let b = tape.broadcast(e1, 3).unwrap();
        let scaled = tape.mul_scalar_var(v, e1).unwrap();
        let both = tape.add(b, scaled).unwrap();
        let loss = tape.sum(both);
        tape.backward(loss, &mut store).unwrap();
        let numeric = finite_diff(&store, "v", &f);
        let analytic = store.grad("v").unwrap().values();
        for (ga, gn) in analytic.iter().zip(&numeric) {
            assert!(rel_err(*ga, *gn) < 1e-4, "{ga} vs {gn}");
        }
    }

    #[test]
    fn repeated_runs_bit_identical() {
        let run = || -> Vec<f64> {
            let mut store = store_with("p", Tensor::vector(vec![0.25, -0.75]));
            let mut tape = Tape::new();
            let p = tape.param(&store, "p").unwrap();
            let s = tape.sigmoid(p);
            let sq = tape.mul(s, s).unwrap();
            let loss = tape.sum(sq);
            tape.backward(loss, &mut store).unwrap();
            store.grad("p").unwrap().values().to_vec()
        };
        assert_eq!(run(), run());
    }
}
