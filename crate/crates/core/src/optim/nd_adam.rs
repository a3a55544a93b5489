use serde::{Deserialize, Serialize};

use super::sphere::{nd_adam_vector_step, VectorMoments};
use super::{gradient, AdamHyper, AdamSlots, OptimError, ParamGroup, Result, StepReport};
use crate::parallel::{self, Execution};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{norm, Gradients};

/// Moments of every weight vector held by one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorParamState {
    pub id: ParamId,
    pub moments: Vec<VectorMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarParamState {
    pub id: ParamId,
    pub slots: AdamSlots,
}

/// ND-Adam: sphere-projected, direction-preserving steps with one
/// second-moment scalar per weight vector, and plain Adam on everything
/// else. One step counter drives both paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdAdam {
    pub hyper: AdamHyper,
    pub t: u64,
    pub group: ParamGroup,
    pub vector_state: Vec<VectorParamState>,
    pub scalar_state: Vec<ScalarParamState>,
    /// How the independent per-vector updates are scheduled. Results do not
    /// depend on it.
    #[serde(skip)]
    pub execution: Execution,
}

struct Job<'a> {
    w: Vec<f64>,
    g: Vec<f64>,
    moments: &'a VectorMoments,
}

impl NdAdam {
    /// Normalizes every weight vector in `group.vector_params` in place.
    pub fn new(store: &mut ParamStore, group: ParamGroup, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        if let Some(id) = group.vector_params.iter().chain(&group.scalar_params).find(|id| id.0 >= store.len()) {
            return Err(OptimError::Partition(format!("unknown parameter {id}")));
        }
        let mut vector_state = Vec::with_capacity(group.vector_params.len());
        for &id in &group.vector_params {
            let p = store.get_mut(id);
            for j in 0..p.vector_count() {
                let w = p.vector(j);
                let n = norm(&w);
                if !(n > 0.0) || !n.is_finite() {
                    return Err(OptimError::Config(format!(
                        "{} column {j} cannot be normalized (norm {n})",
                        p.name
                    )));
                }
                let unit: Vec<f64> = w.iter().map(|x| x / n).collect();
                p.set_vector(j, &unit);
            }
            vector_state.push(VectorParamState {
                id,
                moments: (0..p.vector_count()).map(|_| VectorMoments::zeros(p.vector_dim())).collect(),
            });
        }
        let scalar_state = group
            .scalar_params
            .iter()
            .map(|&id| ScalarParamState {
                id,
                slots: AdamSlots::zeros(store.get(id).value.len()),
            })
            .collect();
        Ok(Self {
            hyper,
            t: 0,
            group,
            vector_state,
            scalar_state,
            execution: Execution::Sequential,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Number of second-moment scalars held for a parameter: one per weight
    /// vector on the vector path, one per coordinate on the scalar path.
    pub fn second_moment_len(&self, id: ParamId) -> Option<usize> {
        if let Some(s) = self.vector_state.iter().find(|s| s.id == id) {
            return Some(s.moments.len());
        }
        self.scalar_state.iter().find(|s| s.id == id).map(|s| s.slots.v.len())
    }

    /// One optimizer call. On error neither the parameters nor the state
    /// change.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<StepReport> {
        for &id in self.group.vector_params.iter().chain(&self.group.scalar_params) {
            gradient(store, grads, id)?;
        }
        let t = self.t + 1;
        let lr_v = self.group.lr_vector.for_step(t);
        let lr_s = self.group.lr_scalar.for_step(t);
        let hyper = self.hyper;

        let mut jobs = Vec::new();
        let mut owners = Vec::new();
        for (k, state) in self.vector_state.iter().enumerate() {
            let p = store.get(state.id);
            let g = gradient(store, grads, state.id)?;
            let gv = crate::params::vectors_of(g);
            for (j, (g, moments)) in gv.into_iter().zip(&state.moments).enumerate() {
                jobs.push(Job {
                    w: p.vector(j),
                    g,
                    moments,
                });
                owners.push((k, j));
            }
        }
        let results = parallel::map(self.execution, jobs, |job| {
            nd_adam_vector_step(&job.w, &job.g, job.moments, &hyper, t, lr_v)
        });
        let mut steps = Vec::with_capacity(results.len());
        for (r, &(k, j)) in results.into_iter().zip(&owners) {
            match r {
                Ok(s) => steps.push(s),
                Err(OptimError::DegenerateUpdate {
                    step,
                    m_hat_norm,
                    v_hat_sqrt,
                    lr,
                    ..
                }) => {
                    return Err(OptimError::DegenerateUpdate {
                        step,
                        name: store.get(self.vector_state[k].id).name.clone(),
                        vector: j,
                        m_hat_norm,
                        v_hat_sqrt,
                        lr,
                    })
                }
                Err(e) => return Err(e),
            }
        }

        for (s, (k, j)) in steps.into_iter().zip(owners) {
            let state = &mut self.vector_state[k];
            store.get_mut(state.id).set_vector(j, &s.w);
            state.moments[j] = s.moments;
        }
        for state in &mut self.scalar_state {
            let g = grads.get(state.id).expect("checked above").data().to_vec();
            let theta = store.get_mut(state.id).value.data_mut();
            state.slots.apply(theta, &g, &hyper, t, lr_s);
        }
        self.t = t;
        Ok(StepReport {
            step: t,
            decomposition: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::LrSchedule;
    use crate::params::ParamRole;
    use crate::tensor::{dot, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_store(rng: &mut ChaCha8Rng) -> ParamStore {
        let mut s = ParamStore::new();
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.add("layer.weight", ParamRole::UnitVectors, Tensor::new(vec![4, 3], w).unwrap());
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.add("layer.bias", ParamRole::Scalars, Tensor::vector(b));
        s
    }

    fn random_grads(store: &ParamStore, rng: &mut ChaCha8Rng, scale: f64) -> Gradients {
        let mut g = Gradients::default();
        for (id, p) in store.iter() {
            let d: Vec<f64> = (0..p.value.len()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
            g.insert(id, Tensor::new(p.value.shape().to_vec(), d).unwrap());
        }
        g
    }

    fn by_roles(store: &mut ParamStore, lr: LrSchedule, hyper: AdamHyper) -> Result<NdAdam> {
        let group = ParamGroup::from_roles(store, lr, lr)?;
        NdAdam::new(store, group, hyper)
    }

    fn hyper(eps: f64) -> AdamHyper {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: eps,
        }
    }

    // Textbook Adam written out independently of the library's update.
    fn reference_adam(theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: i32, lr: f64) {
        for i in 0..theta.len() {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            theta[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }

    #[test]
    fn vector_free_group_is_adam() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = random_store(&mut rng);
        let group = ParamGroup::scalars_only(&store, LrSchedule::constant(0.001)).unwrap();
        let mut reference: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.value.data().to_vec()).collect();
        let mut m: Vec<Vec<f64>> = reference.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut v = m.clone();
        let mut opt = NdAdam::new(&mut store, group, hyper(1e-8)).unwrap();
        for t in 1..=200 {
            let g = random_grads(&store, &mut rng, 1.0);
            opt.step(&mut store, &g).unwrap();
            for (k, (id, p)) in store.iter().enumerate() {
                reference_adam(&mut reference[k], &mut m[k], &mut v[k], g.get(id).unwrap().data(), t, 0.001);
                for (a, b) in p.value.data().iter().zip(&reference[k]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vector_only_group_keeps_unit_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let w: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.add("w", ParamRole::UnitVectors, Tensor::new(vec![5, 4], w).unwrap());
        let lr = LrSchedule::constant(0.05);
        let group = ParamGroup::from_roles(&store, lr, lr).unwrap();
        let mut opt = NdAdam::new(&mut store, group, hyper(1e-8)).unwrap();
        for _ in 0..100 {
            let g = random_grads(&store, &mut rng, 1.0);
            opt.step(&mut store, &g).unwrap();
            let p = store.get(ParamId(0));
            for j in 0..p.vector_count() {
                assert!((norm(&p.vector(j)) - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(opt.t, 100);
    }

    #[test]
    fn gradient_scale_does_not_change_trajectory() {
        for (eps, tol) in [(0.0, 1e-9), (1e-8, 1e-5)] {
            for c in [0.1, 10.0] {
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let mut a = random_store(&mut rng);
                let mut b = a.clone();
                let lr = LrSchedule::constant(0.05);
                let mut oa = by_roles(&mut a, lr, hyper(eps)).unwrap();
                let mut ob = by_roles(&mut b, lr, hyper(eps)).unwrap();
                for _ in 0..100 {
                    let g = random_grads(&a, &mut rng, 1.0);
                    let mut gc = Gradients::default();
                    for (id, t) in g.params() {
                        gc.insert(*id, t.map(|x| x * c));
                    }
                    oa.step(&mut a, &g).unwrap();
                    ob.step(&mut b, &gc).unwrap();
                }
                let (wa, wb) = (a.get(ParamId(0)).value.data(), b.get(ParamId(0)).value.data());
                let dev = wa.iter().zip(wb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(dev <= tol, "eps {eps} c {c}: {dev}");
            }
        }
    }

    #[test]
    fn displacement_is_antiparallel_without_momentum() {
        let h = AdamHyper {
            beta1: 0.0,
            beta2: 0.999,
            epsilon: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut moments = VectorMoments::zeros(6);
        let mut w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&w);
        w.iter_mut().for_each(|x| *x /= n);
        for t in 1..=10 {
            let g_raw: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = crate::optim::project_to_sphere(&g_raw, &w).unwrap();
            let s = nd_adam_vector_step(&w, &g_raw, &moments, &h, t, 0.05).unwrap();
            let disp: Vec<f64> = s.w_bar.iter().zip(&w).map(|(a, b)| a - b).collect();
            let cos = dot(&disp, &g) / (norm(&disp) * norm(&g));
            assert!((cos + 1.0).abs() < 1e-10, "{cos}");
            w = s.w;
            moments = s.moments;
        }
    }

    #[test]
    fn displacement_stays_in_gradient_span() {
        let h = hyper(0.0);
        let w0 = [1.0, 0.0, 0.0];
        let s1 = nd_adam_vector_step(&w0, &[0.3, 1.0, 0.2], &VectorMoments::zeros(3), &h, 1, 0.05).unwrap();
        let g1 = crate::optim::project_to_sphere(&[0.3, 1.0, 0.2], &w0).unwrap();
        let w1 = s1.w.clone();
        let g_raw2 = [-0.5, 0.4, 1.3];
        let g2 = crate::optim::project_to_sphere(&g_raw2, &w1).unwrap();
        let s2 = nd_adam_vector_step(&w1, &g_raw2, &s1.moments, &h, 2, 0.05).unwrap();
        // w_bar - w1 is parallel to m_hat, a combination of g1 and g2
        let d: Vec<f64> = s2.w_bar.iter().zip(&w1).map(|(a, b)| a - b).collect();
        let (a11, a12, a22) = (dot(&g1, &g1), dot(&g1, &g2), dot(&g2, &g2));
        let (b1, b2) = (dot(&g1, &d), dot(&g2, &d));
        let det = a11 * a22 - a12 * a12;
        let c1 = (b1 * a22 - b2 * a12) / det;
        let c2 = (a11 * b2 - a12 * b1) / det;
        let residual: f64 = (0..3).map(|i| (d[i] - c1 * g1[i] - c2 * g2[i]).powi(2)).sum::<f64>().sqrt();
        assert!(residual < 1e-10, "{residual}");
    }

    #[test]
    fn one_second_moment_per_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = random_store(&mut rng);
        let lr = LrSchedule::constant(0.05);
        let opt = by_roles(&mut store, lr, hyper(1e-8)).unwrap();
        let adam = crate::optim::Adam::new(&store, hyper(1e-8), lr, 0.0).unwrap();
        // 3 vectors of dimension 4: one scalar each instead of 4
        assert_eq!(opt.second_moment_len(ParamId(0)), Some(3));
        assert_eq!(adam.second_moment_len(ParamId(0)), 12);
        assert_eq!(opt.second_moment_len(ParamId(1)), Some(3));
    }

    #[test]
    fn missing_gradient_leaves_state_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = random_store(&mut rng);
        let lr = LrSchedule::constant(0.05);
        let mut opt = by_roles(&mut store, lr, hyper(1e-8)).unwrap();
        let before = (store.clone(), opt.clone());
        let mut g = random_grads(&store, &mut rng, 1.0);
        g = Gradients::from_params(g.into_params().into_iter().filter(|(id, _)| id.0 == 0).collect());
        let e = opt.step(&mut store, &g).unwrap_err();
        assert!(e.to_string().contains("layer.bias"), "{e}");
        assert_eq!((store, opt), before);
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = random_store(&mut rng);
        let mut b = a.clone();
        let lr = LrSchedule::constant(0.05);
        let mut oa = by_roles(&mut a, lr, hyper(1e-8)).unwrap();
        let mut ob = by_roles(&mut b, lr, hyper(1e-8))
            .unwrap()
            .with_execution(Execution::available());
        for _ in 0..50 {
            let g = random_grads(&a, &mut rng, 1.0);
            oa.step(&mut a, &g).unwrap();
            ob.step(&mut b, &g).unwrap();
        }
        assert_eq!(a, b);
    }
}
