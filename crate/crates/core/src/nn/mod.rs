//! Dense multi-layer perceptrons with hand-derived gradients.
//!
//! Every hidden layer applies the same activation; the output layer is
//! always affine. Batches are row-major `(batch, features)` matrices.

mod adam;
mod checkpoint;

pub use adam::Adam;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{LespError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No hidden nonlinearity; the whole net is affine.
    Identity,
}

impl Activation {
    pub fn id(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `weights[l]` has shape `(sizes[l], sizes[l + 1])`.
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Gradients with the same layout as an [`Mlp`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-layer inputs recorded by [`Mlp::forward_cached`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    layer_inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.layer_inputs[0]
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        for w in net.weights.iter_mut() {
            let (fan_in, fan_out) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(LespError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let weights = sizes.windows(2).map(|p| Array2::zeros((p[0], p[1]))).collect();
        let biases = sizes[1..].iter().map(|&s| Array1::zeros(s)).collect();
        Ok(Self { sizes: sizes.to_vec(), weights, biases, activation })
    }

    pub fn from_parts(
        sizes: &[usize],
        activation: Activation,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(LespError::Shape("layer count does not match sizes".into()));
        }
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            if w.dim() != net.weights[l].dim() || b.len() != net.biases[l].len() {
                return Err(LespError::Shape(format!("layer {l} parameter shape mismatch")));
            }
            net.weights[l] = w;
            net.biases[l] = b;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer: weights (row-major) then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(LespError::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|x| *x = it.next().unwrap());
            b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(LespError::Shape(format!(
                "input has {cols} features, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let last = self.num_layers() - 1;
        let mut h = self.affine(0, input);
        for l in 1..=last {
            self.activate(&mut h);
            h = self.affine(l, h.view());
        }
        Ok(h)
    }

    pub fn forward_cached(&self, input: Array2<f64>) -> Result<ForwardCache> {
        self.check_input(input.ncols())?;
        let mut layer_inputs = Vec::with_capacity(self.num_layers());
        let mut h = self.affine(0, input.view());
        layer_inputs.push(input);
        for l in 1..self.num_layers() {
            self.activate(&mut h);
            let next = self.affine(l, h.view());
            layer_inputs.push(h);
            h = next;
        }
        Ok(ForwardCache { layer_inputs, output: h })
    }

    /// Gradient of `sum(output * output_grad)` with respect to every parameter,
    /// plus the input gradient when `want_input_grad` is set.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        want_input_grad: bool,
    ) -> Result<(MlpGrads, Option<Array2<f64>>)> {
        if output_grad.dim() != cache.output.dim() {
            return Err(LespError::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.dim(),
                cache.output.dim()
            )));
        }
        let n = self.num_layers();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = output_grad.to_owned();
        let mut input_grad = None;
        for l in (0..n).rev() {
            gw.push(cache.layer_inputs[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut d_in = delta.dot(&self.weights[l].t());
                if self.activation == Activation::Relu {
                    Zip::from(&mut d_in).and(&cache.layer_inputs[l]).for_each(|d, &h| {
                        if h <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                delta = d_in;
            } else if want_input_grad {
                input_grad = Some(delta.dot(&self.weights[0].t()));
            }
        }
        gw.reverse();
        gb.reverse();
        Ok((MlpGrads { weights: gw, biases: gb }, input_grad))
    }

    /// Input gradient of `sum(output * output_grad)` without parameter gradients.
    pub fn input_grad(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        if output_grad.dim() != cache.output.dim() {
            return Err(LespError::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.dim(),
                cache.output.dim()
            )));
        }
        let mut delta = output_grad.to_owned();
        for l in (0..self.num_layers()).rev() {
            let mut d_in = delta.dot(&self.weights[l].t());
            if l > 0 && self.activation == Activation::Relu {
                Zip::from(&mut d_in).and(&cache.layer_inputs[l]).for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// Single-sample backward pass.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if output_grad.len() != self.output_dim() {
            return Err(LespError::Shape(format!(
                "output gradient has {} entries, network outputs {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
        let cache = self.forward_cached(x)?;
        let og = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row view");
        let (grads, ig) = self.backward_batch(&cache, og, true)?;
        Ok((grads, ig.unwrap().into_raw_vec_and_offset().0))
    }

    /// Polyak averaging: `self ← (1 − rho)·self + rho·source`.
    pub fn soft_update_from(&mut self, source: &Mlp, rho: f64) {
        for (w, ws) in self.weights.iter_mut().zip(&source.weights) {
            Zip::from(w).and(ws).for_each(|a, &b| *a = (1.0 - rho) * *a + rho * b);
        }
        for (b, bs) in self.biases.iter_mut().zip(&source.biases) {
            Zip::from(b).and(bs).for_each(|a, &s| *a = (1.0 - rho) * *a + rho * s);
        }
    }

    fn affine(&self, layer: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights[layer]);
        out += &self.biases[layer];
        out
    }

    fn activate(&self, h: &mut Array2<f64>) {
        if self.activation == Activation::Relu {
            h.mapv_inplace(|v| v.max(0.0));
        }
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Loop-based forward pass, independent of the matrix path.
    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..net.num_layers() {
            let w = net.weights(l);
            let b = net.biases(l);
            let mut out = vec![0.0; w.ncols()];
            for j in 0..w.ncols() {
                let mut s = b[j];
                for i in 0..w.nrows() {
                    s += h[i] * w[[i, j]];
                }
                out[j] = s;
            }
            if l + 1 < net.num_layers() && net.activation() == Activation::Relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Relu).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_one_by_one() {
        let net = Mlp::from_parts(
            &[1, 1],
            Activation::Identity,
            vec![Array2::from_elem((1, 1), 2.0)],
            vec![Array1::from_elem(1, 1.0)],
        )
        .unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[2, 4, 1], Activation::Relu, &mut rng).unwrap();
        let mut net = net;
        // nonzero biases so they are exercised
        let flat: Vec<f64> = net.flat_params().iter().map(|p| p + 0.1).collect();
        net.set_flat_params(&flat).unwrap();
        for _ in 0..20 {
            let x = random_input(&mut rng, 2);
            let got = net.forward(&x).unwrap();
            let want = naive_forward(&net, &x);
            assert!((got[0] - want[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(LespError::Shape(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 8, 2], Activation::Relu, &mut rng).unwrap();
        let (g, ig) = net.backward(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(ig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_derivative() {
        let net = Mlp::from_parts(
            &[1, 1],
            Activation::Identity,
            vec![Array2::from_elem((1, 1), 2.0)],
            vec![Array1::from_elem(1, 1.0)],
        )
        .unwrap();
        let (g, ig) = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 3.0);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(ig, vec![2.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(&[3, 8, 2], Activation::Relu, &mut rng).unwrap();
        let x = random_input(&mut rng, 3);
        let og = random_input(&mut rng, 2);
        let (g, ig) = net.backward(&x, &og).unwrap();
        let objective = |n: &Mlp, x: &[f64]| -> f64 {
            n.forward(x).unwrap().iter().zip(&og).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let base = net.flat_params();
        for (i, &analytic) in g.flatten().iter().enumerate() {
            let mut p = base.clone();
            p[i] += h;
            let mut plus = net.clone();
            plus.set_flat_params(&p).unwrap();
            p[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_flat_params(&p).unwrap();
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-6f64.max(1e-3 * fd.abs()), "param {i}: {fd} vs {analytic}");
        }
        for i in 0..3 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
            assert!((fd - ig[i]).abs() <= 1e-6f64.max(1e-3 * fd.abs()));
        }
    }

    #[test]
    fn input_grad_agrees_with_full_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Mlp::new(&[5, 7, 6, 2], Activation::Relu, &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        let og = Array2::from_shape_simple_fn((4, 2), || rng.random_range(-1.0..1.0));
        let cache = net.forward_cached(x).unwrap();
        let (_, full) = net.backward_batch(&cache, og.view(), true).unwrap();
        assert_eq!(net.input_grad(&cache, og.view()).unwrap(), full.unwrap());
    }

    #[test]
    fn forward_is_bit_identical_on_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 16, 16, 3], Activation::Relu, &mut rng).unwrap();
        let x = random_input(&mut rng, 4);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn soft_update_interpolates() {
        let a = Mlp::zeros(&[1, 1], Activation::Identity).unwrap();
        let mut b = Mlp::from_parts(
            &[1, 1],
            Activation::Identity,
            vec![Array2::from_elem((1, 1), 4.0)],
            vec![Array1::from_elem(1, 2.0)],
        )
        .unwrap();
        b.soft_update_from(&a, 0.25);
        assert_eq!(b.weights(0)[[0, 0]], 3.0);
        assert_eq!(b.biases(0)[0], 1.5);
    }
}
