use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;

use super::td_target;
use crate::error::{GridError, Result};
use crate::neural::critic::CentralPass;
use crate::neural::mlp::MlpCache;
use crate::neural::{clip_grad_norm, Adam, CentralCritic, DecentralCritic};
use crate::rng::StreamRng;
use crate::rollout::RolloutBatch;

/// Rows fed to the forward pass in one go when only values are needed.
const EVAL_CHUNK: usize = 4096;

/// Regression set for one value network: inputs and frozen targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticData {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
}

/// A differentiable scalar-valued model.
pub trait ValueModel {
    type Pass;
    fn n_params(&self) -> usize;
    fn pass(&self, inputs: ArrayView2<f64>) -> Result<(Self::Pass, Array1<f64>)>;
    /// Gradient of `Σ_i d_values[i] · V_i`.
    fn grad(&self, pass: &Self::Pass, d_values: ArrayView1<f64>) -> Vec<f64>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn eval(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut out = Vec::with_capacity(inputs.nrows());
        for chunk in inputs.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
            out.extend(self.pass(chunk)?.1);
        }
        Ok(Array1::from(out))
    }
}

impl ValueModel for CentralCritic {
    type Pass = CentralPass;

    fn n_params(&self) -> usize {
        CentralCritic::n_params(self)
    }

    fn pass(&self, inputs: ArrayView2<f64>) -> Result<(CentralPass, Array1<f64>)> {
        let pass = self.forward(inputs)?;
        let v = pass.values();
        Ok((pass, v))
    }

    fn grad(&self, pass: &CentralPass, d_values: ArrayView1<f64>) -> Vec<f64> {
        self.backward(pass, d_values)
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.param_slices_mut()
    }
}

impl ValueModel for DecentralCritic {
    type Pass = MlpCache;

    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn pass(&self, inputs: ArrayView2<f64>) -> Result<(MlpCache, Array1<f64>)> {
        let cache = self.net.forward_cached(inputs)?;
        let v = cache.output().column(0).to_owned();
        Ok((cache, v))
    }

    fn grad(&self, cache: &MlpCache, d_values: ArrayView1<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.net.n_params()];
        self.net
            .backward(cache, d_values.insert_axis(Axis(1)), &mut g);
        g
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.net.params_mut()]
    }
}

/// Fits `critic` to frozen targets with `steps` Adam steps on random
/// minibatches (the whole set when it is no larger than `minibatch`).
///
/// Returns the summed squared error of each step's minibatch, measured
/// before that step's update. The gradient is that of the mean error so
/// that clipping acts independently of the minibatch size.
pub fn critic_update<C: ValueModel>(
    critic: &mut C,
    opt: &mut Adam,
    data: &CriticData,
    steps: usize,
    minibatch: usize,
    max_grad_norm: Option<f64>,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let rows = data.targets.len();
    if rows == 0 {
        return Err(GridError::Config("critic update needs a non-empty batch".into()));
    }
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (x, y) = if minibatch >= rows {
            (data.inputs.view().to_owned(), data.targets.clone())
        } else {
            let idx = sample(rng, rows, minibatch).into_vec();
            (data.inputs.select(Axis(0), &idx), data.targets.select(Axis(0), &idx))
        };
        let (pass, v) = critic.pass(x.view())?;
        let resid = &v - &y;
        let loss = resid.dot(&resid);
        if !loss.is_finite() {
            return Err(GridError::Diverged {
                iteration: 0,
                stage: "critic loss".into(),
            });
        }
        trace.push(loss);
        let d = resid.mapv(|r| 2.0 * r / y.len() as f64);
        let mut g = critic.grad(&pass, d.view());
        if let Some(max) = max_grad_norm {
            clip_grad_norm(&mut g, max);
        }
        opt.step(&mut critic.slices_mut(), &g);
    }
    Ok(trace)
}

/// The critic configuration of a trainer.
#[derive(Clone, Debug, PartialEq)]
pub enum CriticSet {
    /// One network over the joint state, queried per household.
    Central(CentralCritic),
    /// One network per household over its own observation.
    Decentral(Vec<DecentralCritic>),
}

impl CriticSet {
    pub fn n_params(&self) -> usize {
        match self {
            CriticSet::Central(c) => c.n_params(),
            CriticSet::Decentral(cs) => cs.iter().map(DecentralCritic::n_params).sum(),
        }
    }

    fn central_inputs(c: &CentralCritic, batch: &RolloutBatch, next: bool) -> Result<Array2<f64>> {
        let (n, k) = (batch.n_agents, batch.steps);
        let mut flat = Vec::with_capacity(n * k * c.input_dim());
        for a in 0..n {
            for step in 0..k {
                let row = if next { batch.next_joint(step) } else { batch.joint(step) };
                c.write_input(row, a, &mut flat)?;
            }
        }
        Ok(Array2::from_shape_vec((n * k, c.input_dim()), flat).expect("row count"))
    }

    fn obs_inputs(batch: &RolloutBatch, agent: usize, next: bool) -> Array2<f64> {
        let a = &batch.agents[agent];
        let src = if next { &a.next_obs } else { &a.obs };
        Array2::from_shape_vec((batch.steps, batch.obs_dim), src.clone()).expect("row count")
    }

    /// Builds the regression sets for this batch, one per network, with
    /// targets frozen under the current parameters. Also returns
    /// `(V(s_k), V(s_{k+1}))` per agent for advantage estimation.
    pub fn prepare(
        &self,
        batch: &RolloutBatch,
        gamma: f64,
        bootstrap_time_limit: bool,
    ) -> Result<(Vec<CriticData>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (n, k) = (batch.n_agents, batch.steps);
        let mut inputs = Vec::new();
        let (mut now, mut next) = (Vec::with_capacity(n), Vec::with_capacity(n));
        match self {
            CriticSet::Central(c) => {
                let x = Self::central_inputs(c, batch, false)?;
                let x_next = Self::central_inputs(c, batch, true)?;
                let v = c.eval(x.view())?;
                let v_next = c.eval(x_next.view())?;
                for a in 0..n {
                    now.push(v.slice(ndarray::s![a * k..(a + 1) * k]).to_vec());
                    next.push(v_next.slice(ndarray::s![a * k..(a + 1) * k]).to_vec());
                }
                inputs.push(x);
            }
            CriticSet::Decentral(cs) => {
                for (a, c) in cs.iter().enumerate() {
                    let x = Self::obs_inputs(batch, a, false);
                    now.push(c.eval(x.view())?.to_vec());
                    next.push(c.eval(Self::obs_inputs(batch, a, true).view())?.to_vec());
                    inputs.push(x);
                }
            }
        }
        let target = |a: usize, step: usize| {
            let done = batch.dones[step] && !bootstrap_time_limit;
            td_target(batch.agents[a].rewards[step], next[a][step], gamma, done)
        };
        let data = match self {
            CriticSet::Central(_) => {
                let targets = (0..n).flat_map(|a| (0..k).map(move |s| (a, s)));
                vec![CriticData {
                    targets: targets.map(|(a, s)| target(a, s)).collect(),
                    inputs: inputs.pop().expect("central inputs"),
                }]
            }
            CriticSet::Decentral(_) => inputs
                .into_iter()
                .enumerate()
                .map(|(a, x)| CriticData {
                    inputs: x,
                    targets: (0..k).map(|s| target(a, s)).collect(),
                })
                .collect(),
        };
        Ok((data, now, next))
    }

    /// Runs [`critic_update`] on every network; `opts` pairs with the
    /// networks in order. Returns the loss trace summed across networks.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        opts: &mut [Adam],
        data: &[CriticData],
        steps: usize,
        minibatch: usize,
        max_grad_norm: Option<f64>,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        let traces = match self {
            CriticSet::Central(c) => {
                vec![critic_update(c, &mut opts[0], &data[0], steps, minibatch, max_grad_norm, rng)?]
            }
            CriticSet::Decentral(cs) => cs
                .iter_mut()
                .zip(opts.iter_mut())
                .zip(data)
                .map(|((c, o), d)| critic_update(c, o, d, steps, minibatch, max_grad_norm, rng))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok((0..steps)
            .map(|s| traces.iter().map(|t| t[s]).sum())
            .collect())
    }

    pub fn optimizers(&self, lr: f64) -> Vec<Adam> {
        match self {
            CriticSet::Central(c) => vec![Adam::new(c.n_params(), lr)],
            CriticSet::Decentral(cs) => cs.iter().map(|c| Adam::new(c.n_params(), lr)).collect(),
        }
    }
}
