use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

macro_rules! param_struct {
    ($($field:ident),* $(,)?) => {
        /// Network weights, in declaration order:
        /// base convolutions, boundary heads, the sample-axis reduction,
        /// the proposal-plane convolution and the two confidence heads.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ModelParams {
            $(pub $field: Tensor,)*
        }

        impl ModelParams {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn tensors(&self) -> Vec<&Tensor> {
                vec![$(&self.$field),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
                vec![$(&mut self.$field),*]
            }

            pub(crate) fn from_tensors(mut it: impl Iterator<Item = Tensor>) -> Option<Self> {
                Some(Self { $($field: it.next()?,)* })
            }
        }
    };
}

param_struct!(
    base1_w, base1_b, base2_w, base2_b, start_w, start_b, end_w, end_b, reduce_w, reduce_b,
    plane_w, plane_b, cls_w, cls_b, reg_w, reg_b,
);

impl ModelParams {
    pub fn shapes(cfg: &ModelConfig) -> Vec<Vec<usize>> {
        let (ci, ch) = (cfg.input_channels, cfg.hidden_channels);
        let (kb, kt, kp) = (cfg.base_kernel, cfg.boundary_kernel, cfg.plane_kernel);
        vec![
            vec![ch, ci, kb],
            vec![ch],
            vec![ch, ch, kb],
            vec![ch],
            vec![1, ch, kt],
            vec![1],
            vec![1, ch, kt],
            vec![1],
            vec![cfg.samples],
            vec![1],
            vec![ch, ch, kp, kp],
            vec![ch],
            vec![ch],
            vec![1],
            vec![ch],
            vec![1],
        ]
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::from_tensors(Self::shapes(cfg).iter().map(|s| Tensor::zeros(s))).expect("shape list matches")
    }

    pub fn zeros_like(&self) -> Self {
        Self::from_tensors(self.tensors().into_iter().map(|t| Tensor::zeros(&t.shape))).expect("same layout")
    }

    /// Glorot-uniform weights and zero biases, seeded from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Self::zeros(cfg);
        for (name, t) in Self::NAMES.iter().zip(params.tensors_mut()) {
            if !name.ends_with("_w") {
                continue;
            }
            let (fan_in, fan_out) = fans(&t.shape);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut t.data {
                *v = rng.random_range(-a..=a);
            }
        }
        params
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            for x in &mut t.data {
                *x *= alpha;
            }
        }
    }

    /// Flat view over every value, in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t.data[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t.data[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }
}

/// Fan-in and fan-out of a weight tensor laid out as `out x in x kernel...`;
/// vectors are treated as a map from their length onto one output.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [out, inp, rest @ ..] => {
            let k: usize = rest.iter().product();
            (inp * k, out * k)
        }
        [] => (1, 1),
    }
}
