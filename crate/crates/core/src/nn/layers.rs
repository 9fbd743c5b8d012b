use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{ops, Real, Tensor};

/// Access to trainable tensors by name, paired with their gradient buffers.
pub trait Parameterized<T: Real> {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)>;

    fn zero_grad(&mut self) {
        for (_, _, g) in self.params_mut() {
            g.fill(T::zero());
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => ops::relu(&x),
            Activation::Identity => x,
        }
    }

    fn backward<T: Real>(self, pre: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Relu => ops::relu_backward(pre, gy),
            Activation::Identity => Ok(gy.clone()),
        }
    }
}

/// Fully connected layer `act(x W + b)` applied to every row of `[n, d_in]`.
#[derive(Clone, Debug)]
pub struct Dense<T: Real = f32> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub act: Activation,
    gw: Tensor<T>,
    gb: Tensor<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Dense<T> {
    /// He-style initialization; biases start at zero.
    pub fn new<R: Rng>(din: usize, dout: usize, act: Activation, rng: &mut R) -> Self {
        let gain = if act == Activation::Relu { 2.0 } else { 1.0 };
        let w = Tensor::randn(&[din, dout], (gain / din as f64).sqrt(), rng);
        Self::from_parts(w, Tensor::zeros(&[dout]), act).expect("consistent shapes")
    }

    pub fn from_parts(w: Tensor<T>, b: Tensor<T>, act: Activation) -> Result<Self> {
        if w.ndim() != 2 || b.shape() != [w.dim(1)] {
            return Err(Error::ShapeMismatch {
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
                context: "dense weight vs bias",
            });
        }
        Ok(Self {
            gw: Tensor::zeros(w.shape()),
            gb: Tensor::zeros(b.shape()),
            w,
            b,
            act,
            cache: None,
        })
    }

    pub fn din(&self) -> usize {
        self.w.dim(0)
    }

    pub fn dout(&self) -> usize {
        self.w.dim(1)
    }

    pub fn grads(&self) -> (&Tensor<T>, &Tensor<T>) {
        (&self.gw, &self.gb)
    }

    /// Forward pass without recording anything.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.act.apply(ops::dense_forward(x, &self.w, &self.b)?))
    }

    /// Forward pass that records its input for [`Dense::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pre = ops::dense_forward(x, &self.w, &self.b)?;
        let y = self.act.apply(pre.clone());
        self.cache = Some((x.clone(), pre));
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, pre) = self.cache.take().ok_or(Error::NoForwardRecord("dense"))?;
        let g = self.act.backward(&pre, gy)?;
        let (gx, gw, gb) = ops::dense_backward(&x, &self.w, &g)?;
        self.gw.add_assign(&gw)?;
        self.gb.add_assign(&gb)?;
        Ok(gx)
    }

    /// Input gradient only; parameter gradients are left untouched.
    pub fn backward_input(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, pre) = self.cache.take().ok_or(Error::NoForwardRecord("dense"))?;
        let g = self.act.backward(&pre, gy)?;
        let wt = transpose(&self.w);
        let zero = Tensor::zeros(&[self.din()]);
        ops::dense_forward(&g, &wt, &zero)
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense::from_parts(self.w.cast(), self.b.cast(), self.act).expect("consistent shapes")
    }
}

fn transpose<T: Real>(w: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (w.dim(0), w.dim(1));
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(w.data()[i * c + j]);
        }
    }
    Tensor::new(&[c, r], out).expect("transpose shape")
}

impl<T: Real> Parameterized<T> for Dense<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)> {
        vec![
            ("w".into(), &mut self.w, &mut self.gw),
            ("b".into(), &mut self.b, &mut self.gb),
        ]
    }
}

/// Chain of dense layers shared across rows (a point-wise MLP). Hidden layers
/// use ReLU; the last layer's activation is chosen by the caller.
#[derive(Clone, Debug)]
pub struct Mlp<T: Real = f32> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn new<R: Rng>(sizes: &[usize], last: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output sizes"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::Relu };
                Dense::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].dout() != w[1].din() {
                return Err(Error::ShapeMismatch {
                    left: w[0].w.shape().to_vec(),
                    right: w[1].w.shape().to_vec(),
                    context: "consecutive MLP layers",
                });
            }
        }
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        Ok(Self { layers })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].din()];
        s.extend(self.layers.iter().map(|l| l.dout()));
        s
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.layers[0].infer(x)?;
        for l in &self.layers[1..] {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.layers[0].forward(x)?;
        for l in &mut self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = gy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn backward_input(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = gy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward_input(&g)?;
        }
        Ok(g)
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
        }
    }
}

impl<T: Real> Parameterized<T> for Mlp<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, t)| (format!("{i}.{n}"), t)))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(n, t, g)| (format!("{i}.{n}"), t, g))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_without_forward_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Dense::<f64>::new(2, 3, Activation::Relu, &mut rng);
        assert!(matches!(
            d.backward(&Tensor::zeros(&[1, 3])),
            Err(Error::NoForwardRecord(_))
        ));
    }

    #[test]
    fn identity_layer_passes_gradient() {
        let w = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut d = Dense::from_parts(w, Tensor::zeros(&[2]), Activation::Identity).unwrap();
        let x = Tensor::from_f64(&[1, 2], &[0.3, -0.7]).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
        let gy = Tensor::from_f64(&[1, 2], &[1.5, 2.5]).unwrap();
        assert_eq!(d.backward(&gy).unwrap(), gy);
    }

    #[test]
    fn backward_input_matches_full_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Mlp::<f64>::new(&[3, 5, 2], Activation::Identity, &mut rng).unwrap();
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let gy = Tensor::randn(&[4, 2], 1.0, &mut rng);
        m.forward(&x).unwrap();
        let a = m.backward(&gy).unwrap();
        m.forward(&x).unwrap();
        let b = m.backward_input(&gy).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn param_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::<f32>::new(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
        let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["0.w", "0.b", "1.w", "1.b"]);
        assert_eq!(m.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
