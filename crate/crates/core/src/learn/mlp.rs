//! Fully connected tanh network with reverse-mode gradients.
//!
//! Batches are matrices with one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::LearnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Affine layers with tanh between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Layer inputs saved by the forward pass: the network input followed by
/// every hidden activation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<DMatrix<f64>>,
}

/// Orthogonal matrix scaled by `gain` (QR of a Gaussian draw with the sign
/// of R's diagonal folded into Q).
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> DMatrix<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    q * gain
}

impl Mlp {
    /// `sizes = [input, hidden…, output]`. Hidden layers get gain √2, the
    /// output layer `output_gain`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { output_gain } else { 2f64.sqrt() };
                Layer {
                    weight: orthogonal(w[1], w[0], gain, rng),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    weight: DMatrix::zeros(w[1], w[0]),
                    bias: DVector::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>, LearnError> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<DVector<f64>, LearnError> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        Ok(self.forward(&x)?.column(0).into_owned())
    }

    pub fn forward_cached(
        &self,
        input: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, MlpCache), LearnError> {
        if input.nrows() != self.input_dim() {
            return Err(LearnError::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.nrows()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut a = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(a);
            a = z;
        }
        Ok((a, MlpCache { activations }))
    }

    /// Parameter gradients of `Σ_samples ⟨grad_output, output⟩`, plus the
    /// gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_output: &DMatrix<f64>,
    ) -> Result<(Mlp, DMatrix<f64>), LearnError> {
        let batch = cache.activations[0].ncols();
        if grad_output.nrows() != self.output_dim() || grad_output.ncols() != batch {
            return Err(LearnError::Dimension(format!(
                "output gradient is {}x{}, expected {}x{}",
                grad_output.nrows(),
                grad_output.ncols(),
                self.output_dim(),
                batch
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let a_in = &cache.activations[i];
            let weight = &g * a_in.transpose();
            let bias = g.column_sum();
            grads.push(Layer { weight, bias });
            let mut g_in = self.layers[i].weight.transpose() * &g;
            if i > 0 {
                // a_in = tanh(z) for hidden layers
                g_in.zip_apply(a_in, |gv, av| *gv *= 1.0 - av * av);
            }
            g = g_in;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, g))
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[5, 8, 8, 3]);
        let out = net.forward(&DMatrix::from_element(5, 4, 0.7)).unwrap();
        assert_eq!(out, DMatrix::zeros(3, 4));
    }

    #[test]
    fn scalar_chain_by_hand() {
        let mut net = Mlp::zeros(&[1, 1, 1, 1]);
        for l in &mut net.layers {
            l.weight[(0, 0)] = 1.0;
        }
        let out = net.forward_one(&[0.5]).unwrap();
        assert_eq!(out[0], 0.5f64.tanh().tanh());
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[6, 16, 16, 2], 1.0, &mut rng);
        let x = DMatrix::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 0.1);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = orthogonal(4, 9, 1.0, &mut rng);
        assert!((&w * w.transpose() - DMatrix::identity(4, 4)).amax() < 1e-12);
        let w = orthogonal(9, 4, 2.0, &mut rng);
        assert!((w.transpose() * &w - DMatrix::identity(4, 4) * 4.0).amax() < 1e-12);
    }

    #[test]
    fn wrong_input_size_is_an_error() {
        let net = Mlp::zeros(&[3, 4, 1]);
        assert!(matches!(
            net.forward(&DMatrix::zeros(2, 1)),
            Err(LearnError::Dimension(_))
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 5, 2], 1.0, &mut rng);
        let x = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64 * 0.2);
        let (_, cache) = net.forward_cached(&x).unwrap();
        let (g, gi) = net.backward(&cache, &DMatrix::zeros(2, 4)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 6, 6, 2], 1.0, &mut rng);
        let x = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        let g1 = DMatrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
        let g2 = DMatrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
        let (_, cache) = net.forward_cached(&x).unwrap();
        let a = net.backward(&cache, &g1).unwrap().0;
        let b = net.backward(&cache, &g2).unwrap().0;
        let ab = net.backward(&cache, &(&g1 + &g2)).unwrap().0;
        for ((sa, sb), sab) in a.slices().iter().zip(b.slices()).zip(ab.slices()) {
            for i in 0..sa.len() {
                assert!((sa[i] + sb[i] - sab[i]).abs() < 1e-12);
            }
        }
    }
}
