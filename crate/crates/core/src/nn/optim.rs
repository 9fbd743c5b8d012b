use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{Parameterized, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    /// Heavy-ball momentum: `v = momentum * v + g; w -= lr * v`.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub method: Method,
}

impl OptimConfig {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            method: Method::Sgd { momentum },
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            method: Method::adam(),
        }
    }
}

/// Optimizer with per-parameter state keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Real = f32> {
    pub config: OptimConfig,
    steps: u64,
    // first and second moment (second unused by SGD)
    state: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter of `model` from its accumulated gradient.
    pub fn step<P: Parameterized<T> + ?Sized>(&mut self, model: &mut P) -> Result<()> {
        let mut params = model.params_mut();
        if !self.state.is_empty() {
            let names: Vec<&str> = params.iter().map(|(n, _, _)| n.as_str()).collect();
            self.check_names(names)?;
        }
        self.steps += 1;
        for (name, p, g) in params.iter_mut() {
            self.update(name, p, g)?;
        }
        Ok(())
    }

    fn check_names<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut names: Vec<&str> = names.into_iter().collect();
        names.sort_unstable();
        let known: Vec<&str> = self.state.keys().map(|s| s.as_str()).collect();
        if names != known {
            return Err(Error::ParamMismatch(format!(
                "optimizer tracks {known:?}, got {names:?}"
            )));
        }
        Ok(())
    }

    fn update(&mut self, name: &str, p: &mut Tensor<T>, g: &Tensor<T>) -> Result<()> {
        if p.shape() != g.shape() {
            return Err(Error::ParamMismatch(format!(
                "{name}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let n = p.len();
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
        if m.len() != n {
            return Err(Error::ParamMismatch(format!("{name}: optimizer state has {} entries, parameter {n}", m.len())));
        }
        let lr = self.config.lr;
        match self.config.method {
            Method::Sgd { momentum } => {
                for ((w, &gv), mv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                    let vel = momentum * mv.as_f64() + gv.as_f64();
                    *mv = T::lift(vel);
                    *w = T::lift(w.as_f64() - lr * vel);
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let gv = gv.as_f64();
                    let m1 = beta1 * mv.as_f64() + (1.0 - beta1) * gv;
                    let v1 = beta2 * vv.as_f64() + (1.0 - beta2) * gv * gv;
                    *mv = T::lift(m1);
                    *vv = T::lift(v1);
                    *w = T::lift(w.as_f64() - lr * (m1 / c1) / ((v1 / c2).sqrt() + eps));
                }
            }
        }
        Ok(())
    }

    /// State as named tensors (for checkpoints), plus the step counter.
    pub fn state_tensors(&self) -> (u64, Vec<(String, Tensor<T>)>) {
        let mut out = Vec::new();
        for (name, (m, v)) in &self.state {
            out.push((format!("m.{name}"), Tensor::new(&[m.len()], m.clone()).expect("1-d")));
            out.push((format!("v.{name}"), Tensor::new(&[v.len()], v.clone()).expect("1-d")));
        }
        (self.steps, out)
    }

    pub fn from_state(config: OptimConfig, steps: u64, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut m: BTreeMap<String, Vec<T>> = BTreeMap::new();
        let mut v: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for (name, t) in tensors {
            if let Some(rest) = name.strip_prefix("m.") {
                m.insert(rest.to_string(), t.into_data());
            } else if let Some(rest) = name.strip_prefix("v.") {
                v.insert(rest.to_string(), t.into_data());
            } else {
                return Err(Error::ParamMismatch(format!("unexpected optimizer tensor {name}")));
            }
        }
        if m.keys().ne(v.keys()) {
            return Err(Error::ParamMismatch("optimizer moments disagree".into()));
        }
        let state = m.into_iter().zip(v).map(|((k, a), (_, b))| (k, (a, b))).collect();
        Ok(Self { config, steps, state })
    }
}

/// Applies one optimizer update to named weights from named gradients. The two
/// maps must hold exactly the same names and shapes.
pub fn optimizer_step<T: Real>(
    weights: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    opt: &mut Optimizer<T>,
) -> Result<()> {
    if weights.keys().ne(grads.keys()) {
        return Err(Error::ParamMismatch(format!(
            "weights {:?} vs gradients {:?}",
            weights.keys().collect::<Vec<_>>(),
            grads.keys().collect::<Vec<_>>()
        )));
    }
    if !opt.state.is_empty() {
        opt.check_names(weights.keys().map(|s| s.as_str()))?;
    }
    opt.steps += 1;
    for (name, w) in weights.iter_mut() {
        opt.update(name, w, &grads[name])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_string(), Tensor::from_f64(&[1], &[v]).unwrap())])
    }

    #[test]
    fn quadratic_descent() {
        let mut w = one(1.0);
        let mut opt = Optimizer::new(OptimConfig::sgd(0.1, 0.0));
        for _ in 0..100 {
            let g = one(2.0 * w["w"].data()[0]);
            optimizer_step(&mut w, &g, &mut opt).unwrap();
        }
        assert!(w["w"].data()[0].abs() < 1e-9);
    }

    #[test]
    fn zero_lr_is_noop() {
        for cfg in [OptimConfig::sgd(0.0, 0.9), OptimConfig::adam(0.0)] {
            let mut w = one(0.37);
            let mut opt = Optimizer::new(cfg);
            for _ in 0..5 {
                optimizer_step(&mut w, &one(1.3), &mut opt).unwrap();
            }
            assert_eq!(w["w"].data()[0], 0.37);
        }
    }

    #[test]
    fn name_mismatch() {
        let mut w = one(1.0);
        let mut g = one(1.0);
        g.insert("extra".into(), Tensor::zeros(&[1]));
        let mut opt = Optimizer::new(OptimConfig::adam(0.1));
        assert!(matches!(optimizer_step(&mut w, &g, &mut opt), Err(Error::ParamMismatch(_))));
        optimizer_step(&mut w, &one(1.0), &mut opt).unwrap();
        let mut renamed = BTreeMap::from([("u".to_string(), Tensor::<f64>::zeros(&[1]))]);
        let gr = renamed.clone();
        assert!(optimizer_step(&mut renamed, &gr, &mut opt).is_err());
    }

    #[test]
    fn state_round_trip() {
        let mut w = one(1.0);
        let mut opt = Optimizer::new(OptimConfig::adam(0.05));
        optimizer_step(&mut w, &one(0.4), &mut opt).unwrap();
        let (steps, st) = opt.state_tensors();
        let mut back = Optimizer::from_state(opt.config, steps, st).unwrap();
        let mut w2 = w.clone();
        optimizer_step(&mut w, &one(0.2), &mut opt).unwrap();
        optimizer_step(&mut w2, &one(0.2), &mut back).unwrap();
        assert_eq!(w, w2);
    }
}
