use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mesh::{sample_sites, SurfaceSite};
use crate::metrics::sample_surface;
use crate::nn::{OptimConfig, Optimizer, Parameterized, Real, Tensor};
use crate::spatial::PointIndex;
use crate::{par, Error, Mesh, Result, Vec3};

use super::model::{Decoder, ShapeModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Partial samples to the estimate only.
    #[default]
    Directed,
    /// Both directions.
    Symmetric,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineMethod {
    /// Analytic gradient through the frozen decoder.
    #[default]
    Gradient,
    /// Derivative-free: Gaussian proposals with a shrinking step.
    RandomSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iterations: usize,
    pub optimizer: OptimConfig,
    pub objective: Objective,
    pub method: RefineMethod,
    /// Samples drawn from the partial scan.
    pub partial_samples: usize,
    /// Samples drawn from the decoded estimate.
    pub estimate_samples: usize,
    /// Sample the estimate on the subdivided template.
    pub hires: bool,
    /// Stop once the best objective improved by less than this fraction over
    /// the last `patience` iterations. Zero disables early stopping.
    pub tolerance: f64,
    pub patience: usize,
    /// Initial proposal scale for random search.
    pub search_step: f64,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            optimizer: OptimConfig::adam(1e-2),
            objective: Objective::Directed,
            method: RefineMethod::Gradient,
            partial_samples: 8192,
            estimate_samples: 8192,
            hires: true,
            tolerance: 0.0,
            patience: 20,
            search_step: 0.05,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("refinement needs at least one iteration"));
        }
        if self.partial_samples == 0 || self.estimate_samples == 0 {
            return Err(Error::invalid("refinement sample counts must be positive"));
        }
        if !(self.optimizer.lr >= 0.0) || !(self.tolerance >= 0.0) || !(self.search_step > 0.0) {
            return Err(Error::invalid("refinement rates must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    /// Decoded best code on the base template.
    pub mesh: Mesh,
    pub z: Vec<f64>,
    pub initial_objective: f64,
    pub objective: f64,
    pub best_iteration: usize,
    pub iterations_run: usize,
    /// Objective at every evaluated iterate, starting with the initial code.
    pub history: Vec<f64>,
}

/// Chamfer objective of a latent code with fixed surface sites on the
/// decoded template and fixed samples of the partial scan.
pub struct RefineProblem<T: Real> {
    decoder: Decoder<T>,
    template: Tensor<T>,
    n_template: usize,
    faces: Vec<[u32; 3]>,
    sites: Vec<SurfaceSite>,
    partial: Vec<Vec3>,
    partial_index: PointIndex,
    objective: Objective,
}

impl<T: Real> RefineProblem<T> {
    /// `template` is the mesh in template space whose decoded surface is sampled.
    pub fn new(
        model: &ShapeModel<T>,
        template: &Mesh,
        z0: &[f64],
        partial: Vec<Vec3>,
        estimate_samples: usize,
        objective: Objective,
        seed: u64,
    ) -> Result<Self> {
        let initial = model.decode_on(z0, template)?;
        let sites = sample_sites(&initial, estimate_samples, seed)?;
        let partial_index = PointIndex::build(&partial)?;
        let data = template.vertices.iter().flat_map(|p| [T::lift(p.x), T::lift(p.y), T::lift(p.z)]).collect();
        Ok(Self {
            decoder: model.decoder.clone(),
            template: Tensor::new(&[template.n_vertices(), 3], data)?,
            n_template: template.n_vertices(),
            faces: template.faces.clone(),
            sites,
            partial,
            partial_index,
            objective,
        })
    }

    fn positions(&self, v: &Tensor<T>) -> Vec<Vec3> {
        let verts: Vec<Vec3> = v
            .data()
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0].as_f64(), c[1].as_f64(), c[2].as_f64()))
            .collect();
        par::map_slice(&self.sites, |s| s.position_in(&self.faces, &verts))
    }

    fn z_tensor(&self, z: &[f64]) -> Result<Tensor<T>> {
        Tensor::from_f64(&[1, z.len()], z)
    }

    /// Objective value and, per estimate sample, its gradient.
    fn chamfer(&self, q: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let q_index = PointIndex::build(q)?;
        let mut grad = vec![Vec3::zeros(); q.len()];
        let fwd = q_index.nearest_many(&self.partial);
        let np = self.partial.len() as f64;
        let d: Vec<f64> = fwd.iter().map(|&(_, d2)| d2).collect();
        let mut value = par::pairwise_sum(&d) / np;
        for (p, &(j, _)) in self.partial.iter().zip(&fwd) {
            grad[j as usize] += (q[j as usize] - p) * (2.0 / np);
        }
        if self.objective == Objective::Symmetric {
            let back = self.partial_index.nearest_many(q);
            let nq = q.len() as f64;
            let d: Vec<f64> = back.iter().map(|&(_, d2)| d2).collect();
            value += par::pairwise_sum(&d) / nq;
            for (g, (qi, &(j, _))) in grad.iter_mut().zip(q.iter().zip(&back)) {
                *g += (qi - self.partial[j as usize]) * (2.0 / nq);
            }
        }
        Ok((value, grad))
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        let v = self.decoder.infer(&self.z_tensor(z)?, &self.template)?;
        let q = self.positions(&v);
        if !q.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("decoded estimate is not finite".into()));
        }
        Ok(self.chamfer(&q)?.0)
    }

    /// Objective and its gradient with respect to `z`, with the nearest
    /// neighbor assignment held fixed.
    pub fn value_and_grad(&mut self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.decoder.forward(&self.z_tensor(z)?, &self.template)?;
        let q = self.positions(&v);
        if !q.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("decoded estimate is not finite".into()));
        }
        let (value, gq) = self.chamfer(&q)?;
        let mut gv = vec![0.0f64; self.n_template * 3];
        for (s, g) in self.sites.iter().zip(&gq) {
            let f = self.faces[s.face as usize];
            for k in 0..3 {
                let base = f[k] as usize * 3;
                for c in 0..3 {
                    gv[base + c] += s.bary[k] * g[c];
                }
            }
        }
        let gz = self.decoder.backward(&Tensor::from_f64(&[self.n_template, 3], &gv)?, false)?;
        Ok((value, gz.to_f64_vec()))
    }
}

struct Code {
    z: Tensor<f64>,
    g: Tensor<f64>,
}

impl Parameterized<f64> for Code {
    fn params(&self) -> Vec<(String, &Tensor<f64>)> {
        vec![("z".into(), &self.z)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<f64>, &mut Tensor<f64>)> {
        vec![("z".into(), &mut self.z, &mut self.g)]
    }
}

fn finite(v: f64, it: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("refinement objective became {v} at iteration {it}")))
    }
}

/// Optimizes the latent code against the Chamfer objective with the decoder
/// frozen, returning the best iterate (never worse than `z0`).
pub fn refine_latent<T: Real>(
    model: &ShapeModel<T>,
    partial: &Mesh,
    z0: &[f64],
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    let partial_pts = sample_surface(partial, cfg.partial_samples, cfg.seed ^ 0x5EED_0001)?.into_points();
    let template = if cfg.hires { model.hires_template() } else { model.template().clone() };
    let mut problem = RefineProblem::new(model, &template, z0, partial_pts, cfg.estimate_samples, cfg.objective, cfg.seed)?;

    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut best_z = z0.to_vec();
    let mut best = f64::INFINITY;
    let mut best_iteration = 0;
    let mut consider = |z: &[f64], v: f64, it: usize, history: &mut Vec<f64>| {
        history.push(v);
        if v < best {
            best = v;
            best_z = z.to_vec();
            best_iteration = it;
        }
    };
    let stalled = |history: &[f64]| {
        if cfg.tolerance <= 0.0 || history.len() <= cfg.patience {
            return false;
        }
        let n = history.len();
        let old = history[..n - cfg.patience].iter().cloned().fold(f64::INFINITY, f64::min);
        let new = history.iter().cloned().fold(f64::INFINITY, f64::min);
        old - new <= cfg.tolerance * old
    };

    let mut iterations_run = 0;
    match cfg.method {
        RefineMethod::Gradient => {
            let mut code = Code {
                z: Tensor::from_f64(&[z0.len()], z0)?,
                g: Tensor::zeros(&[z0.len()]),
            };
            let mut opt = Optimizer::<f64>::new(cfg.optimizer);
            for it in 0..cfg.iterations {
                let (v, g) = problem.value_and_grad(code.z.data())?;
                consider(code.z.data(), finite(v, it)?, it, &mut history);
                code.g.data_mut().copy_from_slice(&g);
                opt.step(&mut code)?;
                iterations_run = it + 1;
                if stalled(&history) {
                    break;
                }
            }
            let v = finite(problem.value(code.z.data())?, iterations_run)?;
            consider(code.z.data(), v, iterations_run, &mut history);
        }
        RefineMethod::RandomSearch => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0002);
            let mut z = z0.to_vec();
            let mut cur = finite(problem.value(&z)?, 0)?;
            consider(&z, cur, 0, &mut history);
            let mut step = cfg.search_step;
            let mut fails = 0;
            for it in 1..=cfg.iterations {
                let cand: Vec<f64> = z
                    .iter()
                    .map(|&v| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        v + step * g
                    })
                    .collect();
                let v = finite(problem.value(&cand)?, it)?;
                consider(&cand, v, it, &mut history);
                if v < cur {
                    cur = v;
                    z = cand;
                    fails = 0;
                } else {
                    fails += 1;
                    if fails >= 10 {
                        step *= 0.5;
                        fails = 0;
                    }
                }
                iterations_run = it;
                if stalled(&history) {
                    break;
                }
            }
        }
    }
    Ok(RefineOutcome {
        mesh: model.decode(&best_z)?,
        initial_objective: history[0],
        objective: best,
        z: best_z,
        best_iteration,
        iterations_run,
        history,
    })
}
