//! Plain-text parameter checkpoints.
//!
//! ```text
//! gridflux-checkpoint v1
//! tensor <name> <rows> <cols>
//! <cols values>          (one line per row, shortest round-trip decimals)
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::critic::{CentralCritic, DecentralCritic};
use super::mlp::{Activation, Mlp};
use super::policy::GaussianPolicy;
use crate::error::{GridError, Result};

const MAGIC: &str = "gridflux-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) {
        assert_eq!(rows * cols, values.len(), "tensor shape");
        self.tensors.push(Tensor {
            name: name.into(),
            rows,
            cols,
            values,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        for t in &self.tensors {
            let _ = writeln!(s, "tensor {} {} {}", t.name, t.rows, t.cols);
            for r in 0..t.rows {
                let row = &t.values[r * t.cols..(r + 1) * t.cols];
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |detail: String| GridError::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(bad(format!("missing header '{MAGIC}'"))),
        }
        let mut ck = Checkpoint::default();
        loop {
            let (no, line) = lines
                .next()
                .ok_or_else(|| bad("missing 'end' marker".into()))?;
            let line = line.trim();
            if line == "end" {
                return Ok(ck);
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [kw, name, rows, cols] = parts[..] else {
                return Err(bad(format!("line {}: expected 'tensor <name> <rows> <cols>'", no + 1)));
            };
            if kw != "tensor" {
                return Err(bad(format!("line {}: expected 'tensor'", no + 1)));
            }
            let rows: usize = rows
                .parse()
                .map_err(|_| bad(format!("line {}: bad row count", no + 1)))?;
            let cols: usize = cols
                .parse()
                .map_err(|_| bad(format!("line {}: bad column count", no + 1)))?;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (no, line) = lines
                    .next()
                    .ok_or_else(|| bad(format!("tensor {name}: truncated")))?;
                let before = values.len();
                for tok in line.split_whitespace() {
                    values.push(
                        tok.parse::<f64>()
                            .map_err(|_| bad(format!("line {}: bad value '{tok}'", no + 1)))?,
                    );
                }
                if values.len() - before != cols {
                    return Err(bad(format!(
                        "line {}: expected {cols} values, found {}",
                        no + 1,
                        values.len() - before
                    )));
                }
            }
            ck.push(name, rows, cols, values);
        }
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text()).map_err(|e| GridError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| GridError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
        Checkpoint::parse(&text, path)
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| GridError::Checkpoint {
            path: Default::default(),
            detail: format!("missing tensor '{name}'"),
        })
    }

    pub fn push_mlp(&mut self, prefix: &str, net: &Mlp) {
        for l in 0..net.n_layers() {
            let (w, b) = net.layer(l);
            self.push(
                format!("{prefix}.layer{l}.weight"),
                w.nrows(),
                w.ncols(),
                w.iter().copied().collect(),
            );
            self.push(format!("{prefix}.layer{l}.bias"), 1, b.len(), b.to_vec());
        }
    }

    pub fn read_mlp(&self, prefix: &str, output: Activation) -> Result<Mlp> {
        let mut dims = Vec::new();
        let mut params = Vec::new();
        for l in 0.. {
            let Some(w) = self.get(&format!("{prefix}.layer{l}.weight")) else {
                break;
            };
            let b = self.tensor(&format!("{prefix}.layer{l}.bias"))?;
            if dims.is_empty() {
                dims.push(w.cols);
            }
            if *dims.last().unwrap() != w.cols || b.values.len() != w.rows {
                return Err(GridError::Checkpoint {
                    path: Default::default(),
                    detail: format!("{prefix}: inconsistent layer {l} shapes"),
                });
            }
            dims.push(w.rows);
            params.extend_from_slice(&w.values);
            params.extend_from_slice(&b.values);
        }
        if dims.len() < 2 {
            return Err(GridError::Checkpoint {
                path: Default::default(),
                detail: format!("no layers under '{prefix}'"),
            });
        }
        Mlp::from_params(&dims, output, params)
    }

    pub fn from_policy(policy: &GaussianPolicy) -> Self {
        let mut ck = Checkpoint::default();
        ck.push_mlp("mean_net", policy.mean_net());
        ck.push("log_std", 1, policy.action_dim(), policy.log_std().to_vec());
        ck.push("max_delay", 1, 1, vec![policy.max_delay()]);
        ck
    }

    pub fn to_policy(&self) -> Result<GaussianPolicy> {
        let net = self.read_mlp("mean_net", Activation::Tanh)?;
        let log_std = self.tensor("log_std")?.values.clone();
        let max_delay = self.tensor("max_delay")?.values[0];
        if log_std.len() != net.output_dim() {
            return Err(GridError::Checkpoint {
                path: Default::default(),
                detail: "log_std width differs from the mean network output".into(),
            });
        }
        Ok(GaussianPolicy::from_parts(net, log_std, max_delay))
    }

    pub fn from_central_critic(critic: &CentralCritic, state_dim: usize, global_dim: usize) -> Self {
        let mut ck = Checkpoint::default();
        ck.push(
            "meta",
            1,
            3,
            vec![critic.n_households() as f64, state_dim as f64, global_dim as f64],
        );
        for (name, net) in critic.networks() {
            ck.push_mlp(name, net);
        }
        ck
    }

    pub fn to_central_critic(&self) -> Result<CentralCritic> {
        let meta = &self.tensor("meta")?.values;
        let (n, sd, gd) = (meta[0] as usize, meta[1] as usize, meta[2] as usize);
        let own = self.read_mlp("own", Activation::Tanh)?;
        let others = if n > 1 {
            Some(self.read_mlp("others", Activation::Tanh)?)
        } else {
            None
        };
        let merge = self.read_mlp("merge", Activation::Identity)?;
        Ok(CentralCritic::from_networks(n, sd, gd, own, others, merge))
    }

    pub fn from_decentral_critics(critics: &[DecentralCritic]) -> Self {
        let mut ck = Checkpoint::default();
        for (i, c) in critics.iter().enumerate() {
            ck.push_mlp(&format!("critic{i}"), &c.net);
        }
        ck
    }

    pub fn to_decentral_critics(&self) -> Result<Vec<DecentralCritic>> {
        let mut out = Vec::new();
        while self.get(&format!("critic{}.layer0.weight", out.len())).is_some() {
            let net = self.read_mlp(&format!("critic{}", out.len()), Activation::Identity)?;
            out.push(DecentralCritic { net });
        }
        Ok(out)
    }
}
