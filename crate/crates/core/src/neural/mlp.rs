use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{GridError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// Fully connected network with tanh hidden layers.
///
/// Parameters live in one flat vector; layer `i` stores its weight matrix
/// row-major as `(out, in)` followed by its `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    output: Activation,
}

/// Activations saved by [`Mlp::forward_cached`]; `layers[0]` is the input.
#[derive(Clone, Debug)]
pub struct MlpCache {
    layers: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.layers.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn zeros(dims: &[usize], output: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Mlp {
            dims: dims.to_vec(),
            params: vec![0.0; Mlp::param_count(dims)],
            output,
        }
    }

    /// Uniform fan-in initialization `U(-1/√in, 1/√in)` with zero biases;
    /// the last layer's weights are multiplied by `final_scale`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        output: Activation,
        final_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Mlp::zeros(dims, output);
        let n_layers = net.n_layers();
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == n_layers { final_scale } else { 1.0 };
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound) * scale;
            }
            offset += (fan_in + 1) * fan_out;
        }
        net
    }

    pub fn from_params(dims: &[usize], output: Activation, params: Vec<f64>) -> Result<Self> {
        let expected = Mlp::param_count(dims);
        if params.len() != expected || dims.len() < 2 {
            return Err(GridError::Dimension {
                context: "mlp parameters",
                expected,
                actual: params.len(),
            });
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            params,
            output,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        Mlp::param_count(&self.dims[..=layer])
    }

    /// Weight `(out, in)` and bias views of layer `l`.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let off = self.layer_offset(l);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out]);
        (w, b)
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            self.output
        } else {
            Activation::Tanh
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(GridError::Dimension {
                context: "mlp input",
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    fn apply_layer(&self, l: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let (w, b) = self.layer(l);
        let mut z = x.dot(&w.t());
        z += &b;
        if self.activation(l) == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
        z
    }

    /// Row-wise forward pass over a `(batch, input_dim)` matrix.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = self.apply_layer(0, x);
        for l in 1..self.n_layers() {
            a = self.apply_layer(l, a.view());
        }
        Ok(a)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        self.check_input(x.ncols())?;
        let mut layers = Vec::with_capacity(self.dims.len());
        layers.push(x.to_owned());
        for l in 0..self.n_layers() {
            let next = self.apply_layer(l, layers[l].view());
            layers.push(next);
        }
        Ok(MlpCache { layers })
    }

    /// Reverse-mode pass: adds `∂L/∂θ` into `grad` given `∂L/∂output` and
    /// returns `∂L/∂input`.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let mut delta = d_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            if self.activation(l) == Activation::Tanh {
                let a = &cache.layers[l + 1];
                ndarray::Zip::from(&mut delta)
                    .and(a)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
            }
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let input = &cache.layers[l];
            let dw = delta.t().dot(input);
            let (gw, gb) = grad[off..off + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            for (g, d) in gw.iter_mut().zip(dw.iter()) {
                *g += d;
            }
            for (g, d) in gb.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                *g += d;
            }
            let (w, _) = self.layer(l);
            delta = delta.dot(&w);
        }
        delta
    }
}

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

pub fn as_row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row vector")
}

pub fn column(values: Array2<f64>) -> Array1<f64> {
    values.column(0).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{central_difference, max_relative_error};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count() {
        assert_eq!(Mlp::param_count(&[4, 8, 2]), 5 * 8 + 9 * 2);
        let net = Mlp::zeros(&[22, 64, 64, 5], Activation::Identity);
        assert_eq!(net.n_params(), 23 * 64 + 65 * 64 + 65 * 5);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 7, 2], Activation::Identity);
        let y = net.forward(array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_network() {
        let net = Mlp::from_params(&[1, 1], Activation::Identity, vec![1.0, 0.0]).unwrap();
        assert_eq!(net.forward_one(&[3.25]).unwrap(), vec![3.25]);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 8, 2], Activation::Identity, 1.0, &mut rng);
        let x = [0.3, -1.2, 0.7, 2.0];
        let p = net.params();
        // Independent evaluation straight from the flat layout.
        let mut h = [0.0; 8];
        for (o, hv) in h.iter_mut().enumerate() {
            let mut z = p[32 + o];
            for i in 0..4 {
                z += p[o * 4 + i] * x[i];
            }
            *hv = z.tanh();
        }
        let off = 40;
        let mut y = [0.0; 2];
        for (o, yv) in y.iter_mut().enumerate() {
            let mut z = p[off + 16 + o];
            for i in 0..8 {
                z += p[off + o * 8 + i] * h[i];
            }
            *yv = z;
        }
        let got = net.forward_one(&x).unwrap();
        for (a, b) in got.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_dimension_checked() {
        let net = Mlp::zeros(&[3, 2], Activation::Identity);
        assert!(matches!(
            net.forward_one(&[1.0, 2.0]),
            Err(GridError::Dimension { expected: 3, actual: 2, .. })
        ));
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = Mlp::from_params(&[1, 1], Activation::Identity, vec![0.7, 0.1]).unwrap();
        let cache = net.forward_cached(as_row(&[2.5])).unwrap();
        let mut g = vec![0.0; 2];
        let dx = net.backward(&cache, array![[1.0]].view(), &mut g);
        assert_eq!(g, vec![2.5, 1.0]);
        assert_eq!(dx[[0, 0]], 0.7);
    }

    #[test]
    fn duplicated_rows_double_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 5, 1], Activation::Identity, 1.0, &mut rng);
        let x1 = array![[0.1, 0.2, -0.3]];
        let x2 = array![[0.1, 0.2, -0.3], [0.1, 0.2, -0.3]];
        let mut g1 = vec![0.0; net.n_params()];
        let mut g2 = vec![0.0; net.n_params()];
        net.backward(&net.forward_cached(x1.view()).unwrap(), array![[1.0]].view(), &mut g1);
        net.backward(
            &net.forward_cached(x2.view()).unwrap(),
            array![[1.0], [1.0]].view(),
            &mut g2,
        );
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for output in [Activation::Identity, Activation::Tanh] {
            let net = Mlp::new(&[6, 16, 16, 1], output, 1.0, &mut rng);
            let x = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin());
            let loss = |p: &[f64]| {
                let n = Mlp::from_params(net.dims(), output, p.to_vec()).unwrap();
                n.forward(x.view()).unwrap().iter().map(|v| v * v).sum::<f64>() * 0.5
            };
            let cache = net.forward_cached(x.view()).unwrap();
            let d_out = cache.output().clone();
            let mut g = vec![0.0; net.n_params()];
            net.backward(&cache, d_out.view(), &mut g);
            let fd = central_difference(loss, net.params(), 1e-5);
            assert!(max_relative_error(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 5.0);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.1]);
    }
}
