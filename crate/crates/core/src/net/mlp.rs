use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Identity => z,
            Activation::Sigmoid => crate::dgp::sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            // ELU output is negative exactly when its input is, and then e^z = a + 1.
            Activation::Elu => {
                if a >= 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn n_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// `in_dim → hidden… → out_dim`, ELU on every hidden layer and `head` on the last.
pub fn mlp_specs(in_dim: usize, hidden: &[usize], out_dim: usize, head: Activation) -> Vec<LayerSpec> {
    let mut dims = vec![in_dim];
    dims.extend_from_slice(hidden);
    dims.push(out_dim);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec {
            in_dim: w[0],
            out_dim: w[1],
            activation: if i + 2 == dims.len() {
                head
            } else {
                Activation::Elu
            },
        })
        .collect()
}

/// Feedforward network. Parameters live in one flat vector, each layer
/// contributing its `in × out` row-major weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

/// Activations of every layer, input first.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds the input at least")
    }
}

impl Mlp {
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Mlp> {
        if layers.is_empty() || layers.iter().any(|l| l.in_dim == 0 || l.out_dim == 0) {
            return Err(Error::ShapeMismatch("layers must be non-empty with positive dims".into()));
        }
        if layers.windows(2).any(|w| w[0].out_dim != w[1].in_dim) {
            return Err(Error::ShapeMismatch("layer dims do not chain".into()));
        }
        let n = layers.iter().map(LayerSpec::n_params).sum();
        Ok(Mlp {
            layers,
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights in `±sqrt(6/(in + out))`, zero biases.
    pub fn glorot(layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Mlp> {
        let mut net = Mlp::zeros(layers)?;
        let mut off = 0;
        for l in net.layers.clone() {
            let lim = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            let u = Uniform::new_inclusive(-lim, lim).expect("finite limit");
            for w in &mut net.params[off..off + l.in_dim * l.out_dim] {
                *w = u.sample(rng);
            }
            off += l.n_params();
        }
        Ok(net)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_views(&self, idx: usize, off: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let l = self.layers[idx];
        let nw = l.in_dim * l.out_dim;
        let w = ArrayView2::from_shape((l.in_dim, l.out_dim), &self.params[off..off + nw])
            .expect("layout matches spec");
        let b = ArrayView1::from(&self.params[off + nw..off + nw + l.out_dim]);
        (w, b)
    }

    /// Batch forward pass; one row per input.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let mut off = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_views(i, off);
            let mut z = acts[i].dot(&w);
            z += &b;
            z.mapv_inplace(|v| l.activation.apply(v));
            acts.push(z);
            off += l.n_params();
        }
        Ok(ForwardCache { acts })
    }

    /// Forward pass for a single input vector.
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward(view)?.output().row(0).to_vec())
    }

    /// Reverse pass. Adds `∂L/∂θ` into `grad` (length [`Mlp::n_params`]) and
    /// returns `∂L/∂x`, given `∂L/∂output`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        grad: &mut [f64],
    ) -> Result<Array2<f64>> {
        if grad.len() != self.n_params() {
            return Err(Error::ShapeMismatch("gradient buffer length".into()));
        }
        if cache.acts.len() != self.layers.len() + 1 || d_out.dim() != cache.output().dim() {
            return Err(Error::ShapeMismatch("cache or output gradient shape".into()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.n_params();
        }
        let mut delta = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let l = self.layers[i];
            let out = &cache.acts[i + 1];
            ndarray::Zip::from(&mut delta)
                .and(out)
                .for_each(|d, &a| *d *= l.activation.derivative_from_output(a));
            let nw = l.in_dim * l.out_dim;
            let (gw, gb) = grad[offsets[i]..offsets[i] + l.n_params()].split_at_mut(nw);
            let mut gw = ArrayViewMut2::from_shape((l.in_dim, l.out_dim), gw).expect("layout");
            general_mat_mul(1.0, &cache.acts[i].t(), &delta, 1.0, &mut gw);
            let mut gb = ArrayViewMut1::from(gb);
            gb += &delta.sum_axis(Axis(0));
            let (w, _) = self.layer_views(i, offsets[i]);
            delta = delta.dot(&w.t());
        }
        Ok(delta)
    }

    /// Adds `λ·W` for every weight (not bias) into `grad`.
    pub fn add_l2_grad(&self, lambda: f64, grad: &mut [f64]) {
        if lambda == 0.0 {
            return;
        }
        self.for_each_weight_range(|r| {
            for (g, w) in grad[r.clone()].iter_mut().zip(&self.params[r]) {
                *g += lambda * w;
            }
        });
    }

    /// `½ Σ W²` over weights.
    pub fn l2_penalty(&self) -> f64 {
        let mut s = 0.0;
        self.for_each_weight_range(|r| s += self.params[r].iter().map(|w| w * w).sum::<f64>());
        0.5 * s
    }

    fn for_each_weight_range(&self, mut f: impl FnMut(std::ops::Range<usize>)) {
        let mut off = 0;
        for l in &self.layers {
            f(off..off + l.in_dim * l.out_dim);
            off += l.n_params();
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Mlp> {
        let net: Mlp = serde_json::from_str(s)?;
        let expect = Mlp::zeros(net.layers.clone())?.params.len();
        if net.params.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} parameters, layers need {expect}",
                net.params.len()
            )));
        }
        Ok(net)
    }
}

pub(crate) fn to_column(v: Array1<f64>) -> Array2<f64> {
    let n = v.len();
    v.into_shape_with_order((n, 1)).expect("column")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(mlp_specs(3, &[4, 4], 1, Activation::Identity)).unwrap();
        assert_eq!(net.predict_one(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(vec![LayerSpec {
            in_dim: 2,
            out_dim: 2,
            activation: Activation::Identity,
        }])
        .unwrap();
        net.params[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(net.predict_one(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn elu_definition() {
        assert_eq!(Activation::Elu.apply(0.0), 0.0);
        assert_eq!(Activation::Elu.apply(2.5), 2.5);
        assert!((Activation::Elu.apply(-1.0) - ((-1.0f64).exp() - 1.0)).abs() < 1e-16);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(mlp_specs(3, &[2], 1, Activation::Sigmoid)).unwrap();
        assert!(matches!(net.predict_one(&[1.0]), Err(Error::ShapeMismatch(_))));
        let bad = vec![
            LayerSpec { in_dim: 2, out_dim: 3, activation: Activation::Elu },
            LayerSpec { in_dim: 2, out_dim: 1, activation: Activation::Identity },
        ];
        assert!(Mlp::zeros(bad).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let net = Mlp::glorot(mlp_specs(3, &[5], 2, Activation::Sigmoid), &mut stream(1, 0)).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let cache = net.forward(x.view()).unwrap();
        let mut g = vec![0.0; net.n_params()];
        net.backward(&cache, Array2::zeros((2, 2)).view(), &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_squared_loss_gradient() {
        // L = (w·x + b − y)², so ∂L/∂w = 2(w·x + b − y)·x and ∂L/∂b = 2(w·x + b − y).
        let mut net = Mlp::zeros(vec![LayerSpec {
            in_dim: 2,
            out_dim: 1,
            activation: Activation::Identity,
        }])
        .unwrap();
        net.params.copy_from_slice(&[0.5, -1.0, 0.25]);
        let x = array![[2.0, 3.0]];
        let y = 1.0;
        let cache = net.forward(x.view()).unwrap();
        let r = cache.output()[[0, 0]] - y;
        let mut g = vec![0.0; 3];
        net.backward(&cache, array![[2.0 * r]].view(), &mut g).unwrap();
        assert_eq!(g, vec![2.0 * r * 2.0, 2.0 * r * 3.0, 2.0 * r]);
    }

    #[test]
    fn glorot_bounds_and_checkpoint_round_trip() {
        let net = Mlp::glorot(mlp_specs(4, &[6], 1, Activation::Identity), &mut stream(2, 0)).unwrap();
        let lim = (6.0f64 / 10.0).sqrt();
        assert!(net.params[..24].iter().all(|w| w.abs() <= lim));
        assert!(net.params[24..30].iter().all(|&b| b == 0.0));
        let back = Mlp::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let mut broken = net.clone();
        broken.params.pop();
        assert!(Mlp::from_json(&serde_json::to_string(&broken).unwrap()).is_err());
    }

    #[test]
    fn l2_touches_weights_only() {
        let mut net = Mlp::zeros(mlp_specs(1, &[], 1, Activation::Identity)).unwrap();
        net.params.copy_from_slice(&[3.0, 5.0]);
        let mut g = vec![0.0; 2];
        net.add_l2_grad(0.1, &mut g);
        assert!((g[0] - 0.3).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
        assert_eq!(net.l2_penalty(), 4.5);
    }
}
