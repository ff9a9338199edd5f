use crate::error::{Error, Result};
use crate::numcore::{matvec, Rng, Scalar, Tape, Tensor, Var};

/// One affine map `z ↦ W z + b` with `W` of shape `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> AffineLayer<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 1 {
            return Err(Error::shape("affine layer needs a matrix weight and a vector bias"));
        }
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "bias of length {} for weight with {} rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        let wz = matvec(&self.weight, z)?;
        wz.zip_map(&self.bias, |a, b| a + b)
    }
}

/// Feed-forward ReLU classifier: affine, ReLU, ..., affine.
///
/// With `L` affine layers there are `L − 1` hidden ReLU layers, and the
/// network is "K-layer" with `K = L + 1` in the usual counting where the input
/// is layer 1 and the logits are layer K.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<S> {
    layers: Vec<AffineLayer<S>>,
}

/// All intermediates of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward<S> {
    pub logits: Vec<S>,
    /// Post-activation feature vectors, starting with the input itself.
    pub activations: Vec<Vec<S>>,
    /// Pre-activations of each hidden layer.
    pub preacts: Vec<Vec<S>>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<S: Scalar> Network<S> {
    pub fn new(layers: Vec<AffineLayer<S>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one affine layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {k} outputs {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Rebuilds a network of the given widths from flattened parameters
    /// ordered `W_0, b_0, W_1, b_1, ...`.
    pub fn from_params(arch: &[usize], params: Vec<Tensor<S>>) -> Result<Self> {
        if arch.len() < 2 || params.len() != 2 * (arch.len() - 1) {
            return Err(Error::shape(format!(
                "{} parameter tensors for architecture {arch:?}",
                params.len()
            )));
        }
        let mut layers = Vec::with_capacity(arch.len() - 1);
        let mut it = params.into_iter();
        for w in arch.windows(2) {
            let weight = it.next().expect("counted").reshape(vec![w[1], w[0]])?;
            let bias = it.next().expect("counted").reshape(vec![w[1]])?;
            layers.push(AffineLayer::new(weight, bias)?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[AffineLayer<S>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Widths `[d, n_1, ..., n_{L-1}, m]`.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(AffineLayer::out_dim))
            .collect()
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[S]) -> Result<Forward<S>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input of length {} for network with input dimension {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut z = Tensor::vector(x.to_vec());
        let mut activations = vec![x.to_vec()];
        let mut preacts = Vec::with_capacity(self.hidden_layers());
        for layer in &self.layers[..self.hidden_layers()] {
            let pre = layer.apply(&z)?;
            z = crate::numcore::relu(&pre);
            preacts.push(pre.to_vec());
            activations.push(z.to_vec());
        }
        let logits = self.layers[self.hidden_layers()].apply(&z)?;
        logits.ensure_finite("forward pass")?;
        Ok(Forward {
            logits: logits.to_vec(),
            activations,
            preacts,
        })
    }

    pub fn logits(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(self.forward(x)?.logits)
    }

    pub fn predict(&self, x: &[S]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Logits for many inputs at once; `xs` is `n × d` row-major.
    pub fn logits_batch(&self, xs: &[S], n: usize) -> Result<Tensor<S>> {
        let d = self.input_dim();
        if xs.len() != n * d {
            return Err(Error::shape(format!("{} values for {n} inputs of length {d}", xs.len())));
        }
        let mut z = Tensor::matrix(n, d, xs.to_vec())?;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = z.matmul(&layer.weight.transpose())?.to_vec();
            let o = layer.out_dim();
            let relu = k < self.hidden_layers();
            for row in out.chunks_mut(o) {
                for (v, &b) in row.iter_mut().zip(layer.bias.data()) {
                    *v += b;
                    if relu && *v <= S::zero() {
                        *v = S::zero();
                    }
                }
            }
            z = Tensor::matrix(n, o, out)?;
        }
        Ok(z)
    }

    /// Records all parameters on `tape` as leaves.
    pub fn on_tape<'t>(&self, tape: &'t Tape<S>) -> NetVars<'t, S> {
        NetVars {
            weights: self.layers.iter().map(|l| tape.leaf(l.weight.clone())).collect(),
            biases: self.layers.iter().map(|l| tape.leaf(l.bias.clone())).collect(),
        }
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let conv = |t: &Tensor<S>| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| T::lit(v.as_f64())).collect())
                .expect("same shape")
        };
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| AffineLayer {
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }
}

/// Network parameters recorded on a tape.
#[derive(Clone)]
pub struct NetVars<'t, S: Scalar> {
    pub weights: Vec<Var<'t, S>>,
    pub biases: Vec<Var<'t, S>>,
}

impl<'t, S: Scalar> NetVars<'t, S> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Leaves in `W_0, b_0, W_1, b_1, ...` order, matching [`Network::params`].
    pub fn params(&self) -> Vec<Var<'t, S>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    pub fn logits(&self, x: Var<'t, S>) -> Var<'t, S> {
        let last = self.weights.len() - 1;
        let mut z = x;
        for k in 0..last {
            z = (self.weights[k].matvec(z) + self.biases[k]).relu();
        }
        self.weights[last].matvec(z) + self.biases[last]
    }
}

/// He initialization: weights `N(0, 2 / fan_in)`, biases zero.
pub fn init_params<S: Scalar>(arch: &[usize], rng: &mut Rng) -> Result<Network<S>> {
    if arch.len() < 2 || arch.iter().any(|&w| w == 0) {
        return Err(Error::invalid(format!("invalid architecture {arch:?}")));
    }
    let layers = arch
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| S::lit(std * rng.normal())).collect();
            AffineLayer::new(Tensor::matrix(fan_out, fan_in, data)?, Tensor::zeros(&[fan_out]))
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_net() -> Network<f64> {
        Network::new(vec![
            AffineLayer::new(Tensor::from_rows(&[vec![1.0], vec![-1.0]]), Tensor::zeros(&[2])).unwrap(),
            AffineLayer::new(Tensor::from_rows(&[vec![1.0, 1.0]]), Tensor::zeros(&[1])).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn forward_hand_trace() {
        let f = hand_net().forward(&[2.0]).unwrap();
        assert_eq!(f.activations[1], vec![2.0, 0.0]);
        assert_eq!(f.preacts[0], vec![2.0, -2.0]);
        assert_eq!(f.logits, vec![2.0]);
        assert_eq!(hand_net().predict(&[2.0]).unwrap(), 0);
    }

    #[test]
    fn single_identity_layer() {
        let net = Network::new(vec![AffineLayer::new(Tensor::<f64>::eye(3), Tensor::zeros(&[3])).unwrap()])
            .unwrap();
        assert_eq!(net.logits(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert_eq!(net.logits(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn layer_chain_is_validated() {
        let a = AffineLayer::new(Tensor::<f64>::zeros(&[3, 2]), Tensor::zeros(&[3])).unwrap();
        let b = AffineLayer::new(Tensor::<f64>::zeros(&[1, 2]), Tensor::zeros(&[1])).unwrap();
        assert!(Network::new(vec![a, b]).is_err());
        assert!(AffineLayer::new(Tensor::<f64>::zeros(&[3, 2]), Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a: Network<f64> = init_params(&[4, 8, 3], &mut Rng::new(1)).unwrap();
        let b: Network<f64> = init_params(&[4, 8, 3], &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|l| l.bias.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_variance_matches_he() {
        let fan_in = 50;
        let net: Network<f64> = init_params(&[fan_in, 200, 2], &mut Rng::new(5)).unwrap();
        let w = net.layers()[0].weight.data();
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / fan_in as f64;
        assert!((var - target).abs() / target < 0.2, "variance {var} vs {target}");
    }

    #[test]
    fn batch_logits_agree_with_forward() {
        let net: Network<f64> = init_params(&[3, 5, 4, 2], &mut Rng::new(9)).unwrap();
        let xs = [0.1, 0.2, 0.3, -1.0, 0.5, 2.0];
        let batch = net.logits_batch(&xs, 2).unwrap();
        for i in 0..2 {
            let single = net.logits(&xs[i * 3..(i + 1) * 3]).unwrap();
            for (a, b) in batch.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
