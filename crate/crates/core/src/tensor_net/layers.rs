use rand::Rng as _;

use super::matrix::Matrix;
use crate::error::{dim_err, Result};
use crate::rng::Rng;

/// Fully connected layer `y = x·W + b` with gradient and Adam buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub name: String,
    /// `fan_in × fan_out`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
    pub(crate) m_weight: Matrix,
    pub(crate) v_weight: Matrix,
    pub(crate) m_bias: Vec<f64>,
    pub(crate) v_bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
            grad_weight: Matrix::zeros(fan_in, fan_out),
            grad_bias: vec![0.0; fan_out],
            m_weight: Matrix::zeros(fan_in, fan_out),
            v_weight: Matrix::zeros(fan_in, fan_out),
            m_bias: vec![0.0; fan_out],
            v_bias: vec![0.0; fan_out],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(name, fan_in, fan_out);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in layer.weight.as_mut_slice() {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn from_parts(name: impl Into<String>, weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(dim_err("Dense::from_parts", weight.cols(), bias.len()));
        }
        let mut layer = Self::zeros(name, weight.rows(), weight.cols());
        layer.weight = weight;
        layer.bias = bias;
        Ok(layer)
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// Accumulate parameter gradients for `grad_out = ∂L/∂y` and return `∂L/∂x`.
    pub fn backward(&mut self, input: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
        if grad_out.cols() != self.fan_out() || grad_out.rows() != input.rows() {
            return Err(dim_err(
                "Dense::backward",
                format!("{}×{}", input.rows(), self.fan_out()),
                format!("{}×{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        let gw = input.t_matmul(grad_out)?;
        self.grad_weight.add_scaled(&gw, 1.0)?;
        for (gb, s) in self.grad_bias.iter_mut().zip(grad_out.col_sums()) {
            *gb += s;
        }
        grad_out.matmul_t(&self.weight)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// `input · W + b`, bias broadcast over rows.
pub fn linear_forward(input: &Matrix, layer: &Dense) -> Result<Matrix> {
    if input.cols() != layer.fan_in() {
        return Err(dim_err("linear_forward", layer.fan_in(), input.cols()));
    }
    let mut out = input.matmul(&layer.weight)?;
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(&layer.bias) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Upstream gradient masked where `x <= 0` (subgradient 0 at the kink).
pub fn relu_backward(x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if x.shape() != upstream.shape() {
        return Err(dim_err(
            "relu_backward",
            format!("{:?}", x.shape()),
            format!("{:?}", upstream.shape()),
        ));
    }
    let data = x
        .as_slice()
        .iter()
        .zip(upstream.as_slice())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

/// Ordered collection of named layers; the unit Adam and flattening work on.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    pub layers: Vec<Dense>,
}

impl ParamSet {
    pub fn new(layers: Vec<Dense>) -> Self {
        Self { layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&Dense> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Parameters in layer order, each layer as weight (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(dim_err(
                "ParamSet::unflatten",
                self.num_params(),
                values.len(),
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight
                .as_mut_slice()
                .copy_from_slice(&values[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Gradient buffers in the same order as [`ParamSet::flatten`].
    pub fn flatten_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.grad_weight.as_slice());
            out.extend_from_slice(&l.grad_bias);
        }
        out
    }

    pub fn set_grads(&mut self, grads: &[f64]) -> Result<()> {
        if grads.len() != self.num_params() {
            return Err(dim_err(
                "ParamSet::set_grads",
                self.num_params(),
                grads.len(),
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.grad_weight.as_slice().len();
            l.grad_weight
                .as_mut_slice()
                .copy_from_slice(&grads[off..off + nw]);
            off += nw;
            let nb = l.grad_bias.len();
            l.grad_bias.copy_from_slice(&grads[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.layers.iter_mut().for_each(Dense::zero_grad);
    }
}

/// Activations saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each hidden layer.
    pre_act: Vec<Matrix>,
}

/// Stack of dense layers with ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub params: ParamSet,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; layers are named `{name}.{i}`.
    pub fn new(name: &str, dims: &[usize], rng: &mut Rng) -> Self {
        assert!(
            dims.len() >= 2,
            "an MLP needs at least input and output dims"
        );
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::glorot(format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            params: ParamSet::new(layers),
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        Self {
            params: ParamSet::new(layers),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.params.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = linear_forward(x, &self.params.layers[0])?;
        for layer in &self.params.layers[1..] {
            h = linear_forward(&relu_forward(&h), layer)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let n = self.params.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre_act = Vec::with_capacity(n - 1);
        let mut h = x.clone();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let z = linear_forward(&h, layer)?;
            inputs.push(h);
            if i + 1 < n {
                h = relu_forward(&z);
                pre_act.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, MlpCache { inputs, pre_act }))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &MlpCache, grad_out: &Matrix) -> Result<Matrix> {
        let mut g = grad_out.clone();
        for i in (0..self.params.layers.len()).rev() {
            if i < cache.pre_act.len() {
                g = relu_backward(&cache.pre_act[i], &g)?;
            }
            g = self.params.layers[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }

    /// Smallest |pre-activation| seen in a cached pass; used by gradient
    /// checks to stay away from ReLU kinks.
    pub fn min_abs_pre_activation(cache: &MlpCache) -> f64 {
        cache
            .pre_act
            .iter()
            .flat_map(|m| m.as_slice().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn linear_forward_hand_example() {
        let layer =
            Dense::from_parts("l", Matrix::from_rows(&[[2.0], [3.0]]).unwrap(), vec![1.0]).unwrap();
        let out = linear_forward(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &layer).unwrap();
        assert_eq!(out.as_slice(), &[3.0]);
    }

    #[test]
    fn linear_forward_zero_input_and_identity() {
        let mut rng = seeded(1);
        let layer = Dense::glorot("l", 3, 4, &mut rng);
        let out = linear_forward(&Matrix::zeros(2, 3), &layer).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));

        let id = Dense::from_parts("id", Matrix::identity(1), vec![0.0]).unwrap();
        let x = Matrix::from_rows(&[[-2.5], [7.0]]).unwrap();
        assert_eq!(linear_forward(&x, &id).unwrap(), x);
    }

    #[test]
    fn linear_forward_shape_mismatch() {
        let layer = Dense::zeros("l", 3, 2);
        assert!(linear_forward(&Matrix::zeros(1, 2), &layer).is_err());
    }

    #[test]
    fn relu_forward_backward() {
        let x = Matrix::from_rows(&[[-1.0, 2.0, 0.0]]).unwrap();
        assert_eq!(relu_forward(&x).as_slice(), &[0.0, 2.0, 0.0]);
        let up = Matrix::from_rows(&[[5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(relu_backward(&x, &up).unwrap().as_slice(), &[0.0, 5.0, 0.0]);
        assert!(relu_backward(&x, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = seeded(7);
        let l = Dense::glorot("w", 10, 6, &mut rng);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn grad_buffers_match_param_shapes() {
        let mut rng = seeded(3);
        let mlp = Mlp::new("m", &[5, 4, 3], &mut rng);
        for l in &mlp.params.layers {
            assert_eq!(l.grad_weight.shape(), l.weight.shape());
            assert_eq!(l.grad_bias.len(), l.bias.len());
        }
        assert_eq!(mlp.params.flatten_grads().len(), mlp.params.num_params());
    }

    #[test]
    fn forward_matches_cached_forward() {
        let mut rng = seeded(11);
        let mlp = Mlp::new("m", &[4, 6, 5, 2], &mut rng);
        let x = Matrix::from_rows(&[[0.1, -0.4, 0.3, 0.9], [1.0, 0.2, -0.7, 0.0]]).unwrap();
        let (cached, _) = mlp.forward_cached(&x).unwrap();
        assert_eq!(mlp.forward(&x).unwrap(), cached);
    }

    fn random_matrix(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.5..1.5))
                .collect(),
        )
        .unwrap()
    }

    /// Loss `Σ w ∘ net(x)` with a fixed random weighting `w`, so every output
    /// contributes a distinct upstream gradient.
    fn weighted_sum(mlp: &Mlp, x: &Matrix, w: &Matrix) -> f64 {
        mlp.forward(x).unwrap().hadamard(w).unwrap().sum()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn composite_gradients_match_finite_differences(
            seed in any::<u64>(), d in 1usize..=8, h in 1usize..=8, c in 1usize..=4, n in 1usize..=16,
        ) {
            let mut rng = seeded(seed);
            let mut mlp = Mlp::new("m", &[d, h, h, c], &mut rng);
            // glorot leaves biases at zero; randomise them so every code path is exercised
            for layer in &mut mlp.params.layers {
                layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let x = random_matrix(&mut rng, n, d);
            let w = random_matrix(&mut rng, n, c);
            let (_, cache) = mlp.forward_cached(&x).unwrap();
            prop_assume!(Mlp::min_abs_pre_activation(&cache) > 1e-3);

            mlp.zero_grads();
            let grad_x = mlp.backward(&cache, &w).unwrap();
            let analytic = mlp.params.flatten_grads();
            let theta = mlp.params.flatten();
            let step = 1e-5;
            let mut probe = mlp.clone();
            let mut numeric = Vec::with_capacity(theta.len());
            let mut v = theta.clone();
            for i in 0..theta.len() {
                v[i] = theta[i] + step;
                probe.params.unflatten(&v).unwrap();
                let up = weighted_sum(&probe, &x, &w);
                v[i] = theta[i] - step;
                probe.params.unflatten(&v).unwrap();
                let down = weighted_sum(&probe, &x, &w);
                v[i] = theta[i];
                numeric.push((up - down) / (2.0 * step));
            }
            for (a, b) in analytic.iter().zip(&numeric) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                prop_assert!(rel <= 1e-4, "param grad {a} vs {b}");
            }
            // input gradient through the same chain
            let mut xv = x.clone();
            for i in 0..x.as_slice().len() {
                let orig = xv.as_slice()[i];
                xv.as_mut_slice()[i] = orig + step;
                let up = weighted_sum(&mlp, &xv, &w);
                xv.as_mut_slice()[i] = orig - step;
                let down = weighted_sum(&mlp, &xv, &w);
                xv.as_mut_slice()[i] = orig;
                let num = (up - down) / (2.0 * step);
                let a = grad_x.as_slice()[i];
                prop_assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-6) <= 1e-4);
            }
        }

        #[test]
        fn flatten_unflatten_round_trip(
            seed in any::<u64>(), dims in proptest::collection::vec(1usize..6, 2..5),
        ) {
            let mut rng = seeded(seed);
            let mut mlp = Mlp::new("m", &dims, &mut rng);
            let v: Vec<f64> = (0..mlp.params.num_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
            mlp.params.unflatten(&v).unwrap();
            prop_assert_eq!(mlp.params.flatten(), v.clone());
            prop_assert_eq!(mlp.params.flatten(), mlp.params.flatten());
            prop_assert!(mlp.params.unflatten(&v[1..]).is_err());
        }
    }
}
