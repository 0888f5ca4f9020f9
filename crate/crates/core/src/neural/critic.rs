use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::mlp::{Activation, Mlp, MlpCache};
use crate::error::{GridError, Result};

/// Value network over the joint state, queried once per household.
///
/// The input for household `n` is `[s_n, s_1, …, s_{n−1}, s_{n+1}, …, s_N, g]`
/// where `g` are the shared features (previous price, time of day). The own
/// state and `g` feed one branch, the other households another; a merge
/// network maps both branch outputs to the scalar value.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralCritic {
    n_households: usize,
    state_dim: usize,
    global_dim: usize,
    own: Mlp,
    others: Option<Mlp>,
    merge: Mlp,
}

#[derive(Clone, Debug)]
pub struct CentralPass {
    own: MlpCache,
    others: Option<MlpCache>,
    merge: MlpCache,
}

impl CentralPass {
    pub fn values(&self) -> Array1<f64> {
        self.merge.output().column(0).to_owned()
    }
}

impl CentralCritic {
    pub fn new<R: Rng + ?Sized>(
        n_households: usize,
        state_dim: usize,
        global_dim: usize,
        branch_width: usize,
        merge_hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let own = Mlp::new(
            &[state_dim + global_dim, branch_width],
            Activation::Tanh,
            1.0,
            rng,
        );
        let others = (n_households > 1).then(|| {
            Mlp::new(
                &[(n_households - 1) * state_dim, branch_width],
                Activation::Tanh,
                1.0,
                rng,
            )
        });
        let mut dims = vec![branch_width * if others.is_some() { 2 } else { 1 }];
        dims.extend_from_slice(merge_hidden);
        dims.push(1);
        let merge = Mlp::new(&dims, Activation::Identity, 1.0, rng);
        CentralCritic {
            n_households,
            state_dim,
            global_dim,
            own,
            others,
            merge,
        }
    }

    pub fn n_households(&self) -> usize {
        self.n_households
    }

    /// Width of a critic input row: `N · dim(s_n)` plus the shared features.
    pub fn input_dim(&self) -> usize {
        self.n_households * self.state_dim + self.global_dim
    }

    pub fn n_params(&self) -> usize {
        self.own.n_params() + self.others.as_ref().map_or(0, Mlp::n_params) + self.merge.n_params()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.own.params_mut()];
        if let Some(o) = self.others.as_mut() {
            v.push(o.params_mut());
        }
        v.push(self.merge.params_mut());
        v
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.own.params().to_vec();
        if let Some(o) = &self.others {
            p.extend_from_slice(o.params());
        }
        p.extend_from_slice(self.merge.params());
        p
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut rest = params;
        for slice in self.param_slices_mut() {
            let (head, tail) = rest.split_at(slice.len());
            slice.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn networks(&self) -> Vec<(&'static str, &Mlp)> {
        let mut v = vec![("own", &self.own)];
        if let Some(o) = &self.others {
            v.push(("others", o));
        }
        v.push(("merge", &self.merge));
        v
    }

    pub fn from_networks(
        n_households: usize,
        state_dim: usize,
        global_dim: usize,
        own: Mlp,
        others: Option<Mlp>,
        merge: Mlp,
    ) -> Self {
        CentralCritic {
            n_households,
            state_dim,
            global_dim,
            own,
            others,
            merge,
        }
    }

    /// Input row for household `n` from a joint-state row
    /// `[s_1, …, s_N, g]`.
    pub fn input(&self, joint: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.input_dim());
        self.write_input(joint, n, &mut out)?;
        Ok(out)
    }

    pub fn write_input(&self, joint: &[f64], n: usize, out: &mut Vec<f64>) -> Result<()> {
        if n >= self.n_households {
            return Err(GridError::IndexOutOfRange {
                what: "households",
                index: n,
                len: self.n_households,
            });
        }
        if joint.len() != self.input_dim() {
            return Err(GridError::Dimension {
                context: "joint state",
                expected: self.input_dim(),
                actual: joint.len(),
            });
        }
        let sd = self.state_dim;
        out.extend_from_slice(&joint[n * sd..(n + 1) * sd]);
        out.extend_from_slice(&joint[..n * sd]);
        out.extend_from_slice(&joint[(n + 1) * sd..self.n_households * sd]);
        out.extend_from_slice(&joint[self.n_households * sd..]);
        Ok(())
    }

    fn split(&self, inputs: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let sd = self.state_dim;
        let end = self.n_households * sd;
        let own = concatenate(
            Axis(1),
            &[inputs.slice(s![.., ..sd]), inputs.slice(s![.., end..])],
        )
        .expect("matching rows");
        let others = inputs.slice(s![.., sd..end]).to_owned();
        (own, others)
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<CentralPass> {
        if inputs.ncols() != self.input_dim() {
            return Err(GridError::Dimension {
                context: "central critic input",
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        let (own_in, others_in) = self.split(inputs);
        let own = self.own.forward_cached(own_in.view())?;
        let others = match &self.others {
            Some(net) => Some(net.forward_cached(others_in.view())?),
            None => None,
        };
        let merged = match &others {
            Some(o) => concatenate(Axis(1), &[own.output().view(), o.output().view()])
                .expect("matching rows"),
            None => own.output().clone(),
        };
        let merge = self.merge.forward_cached(merged.view())?;
        Ok(CentralPass { own, others, merge })
    }

    pub fn values(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(inputs)?.values())
    }

    /// `V(s)_n` for one joint-state row.
    pub fn central_value(&self, joint: &[f64], n: usize) -> Result<f64> {
        let x = self.input(joint, n)?;
        let row = ArrayView2::from_shape((1, x.len()), &x).expect("row");
        Ok(self.values(row)?[0])
    }

    /// Gradient of `Σ_i d_values[i] · V_i` with respect to the flat parameters.
    pub fn backward(&self, pass: &CentralPass, d_values: ArrayView1<f64>) -> Vec<f64> {
        let d_out = d_values.insert_axis(Axis(1));
        let mut grad = vec![0.0; self.n_params()];
        let n_own = self.own.n_params();
        let n_others = self.others.as_ref().map_or(0, Mlp::n_params);
        let (g_own, rest) = grad.split_at_mut(n_own);
        let (g_others, g_merge) = rest.split_at_mut(n_others);
        let d_merged = self.merge.backward(&pass.merge, d_out, g_merge);
        let w = self.own.output_dim();
        self.own
            .backward(&pass.own, d_merged.slice(s![.., ..w]), g_own);
        if let (Some(net), Some(cache)) = (&self.others, &pass.others) {
            net.backward(cache, d_merged.slice(s![.., w..]), g_others);
        }
        grad
    }
}

/// Two-hidden-layer width `h` for which `n_households` copies of an
/// `input → h → h → 1` network come closest to `target_params` in total.
pub fn parity_width(n_households: usize, input_dim: usize, target_params: usize) -> usize {
    (1..=4096)
        .min_by_key(|&h| {
            let total = n_households * Mlp::param_count(&[input_dim, h, h, 1]);
            total.abs_diff(target_params)
        })
        .unwrap()
}

/// Per-household value network over the local observation.
#[derive(Clone, Debug, PartialEq)]
pub struct DecentralCritic {
    pub net: Mlp,
}

impl DecentralCritic {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        DecentralCritic {
            net: Mlp::new(&dims, Activation::Identity, 1.0, rng),
        }
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }
}
