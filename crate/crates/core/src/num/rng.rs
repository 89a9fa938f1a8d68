use crate::num::scalar::Scalar;
use crate::num::tensor::Tensor;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Keeps uniform draws away from 0 and 1 so Gumbel samples stay finite.
const UNIT_EPS: f64 = 1e-12;

/// Splittable deterministic random stream (splitmix64). The same seed and the
/// same call sequence always produce the same outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Restore a stream previously captured with [`Rng::state`].
    pub fn from_state(state: u64) -> Self {
        Rng { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// Derive an independent stream, advancing this one by one step.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [UNIT_EPS, 1 - UNIT_EPS].
    pub fn unit_open(&mut self) -> f64 {
        self.next_f64().clamp(UNIT_EPS, 1.0 - UNIT_EPS)
    }

    pub fn uniform<S: Scalar>(&mut self, lo: S, hi: S) -> S {
        lo + (hi - lo) * S::of(self.next_f64())
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform index in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard Gumbel(0, 1) sample.
    pub fn gumbel<S: Scalar>(&mut self) -> S {
        gumbel_from_uniform(S::of(self.unit_open()))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// The Gumbel transform g = -ln(-ln(u)) of a uniform draw.
pub fn gumbel_from_uniform<S: Scalar>(u: S) -> S {
    -(-u.ln()).ln()
}

/// Tensor of i.i.d. standard Gumbel samples.
pub fn sample_gumbel<S: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gumbel()).collect();
    Tensor::new(shape.to_vec(), values).expect("consistent shape")
}

/// Xavier-uniform matrix init: U[-a, a] with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_matrix<S: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<S> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.uniform(S::of(-a), S::of(a)))
        .collect();
    Tensor::matrix(rows, cols, values).expect("consistent shape")
}

/// Xavier-uniform vector init treating the vector as a 1 x d map.
pub fn xavier_vector<S: Scalar>(d: usize, rng: &mut Rng) -> Tensor<S> {
    let a = (6.0 / (d + 1) as f64).sqrt();
    let values = (0..d).map(|_| rng.uniform(S::of(-a), S::of(a))).collect();
    Tensor::vector(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_streams_differ() {
        let mut a = Rng::new(7);
        let mut c = a.split();
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn gumbel_fixed_point_at_inverse_e() {
        let u = 1.0f64 / std::f64::consts::E;
        assert!(gumbel_from_uniform(u).abs() < 1e-12);
    }

    #[test]
    fn gumbel_tensor_deterministic() {
        let a: Tensor<f64> = sample_gumbel(&[5, 3], &mut Rng::new(99));
        let b: Tensor<f64> = sample_gumbel(&[5, 3], &mut Rng::new(99));
        assert_eq!(a, b);
    }

    #[test]
    fn gumbel_mean_near_euler_mascheroni() {
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let mut acc = 0.0f64;
        for _ in 0..n {
            acc += rng.gumbel::<f64>();
        }
        let mean = acc / n as f64;
        assert!(
            (mean - 0.5772156649).abs() < 0.02,
            "gumbel mean {mean} outside 0.577 +/- 0.02"
        );
    }

    #[test]
    fn unit_open_stays_inside() {
        let mut rng = Rng::new(5);
        for _ in 0..10_000 {
            let u = rng.unit_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn shuffle_deterministic() {
        let mut xs: Vec<u32> = (0..20).collect();
        let mut ys = xs.clone();
        Rng::new(3).shuffle(&mut xs);
        Rng::new(3).shuffle(&mut ys);
        assert_eq!(xs, ys);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }
}
