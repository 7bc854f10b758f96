//! Critic and actor objectives on replay batches. Everything here is a
//! minimization of estimated cost-to-go.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::agent::DistributedActors;
use crate::error::{Error, Result};
use crate::nn::{Gradients, Mlp};

/// One stored slot. `action` is what the sensors executed, `beta[n]` whether
/// sensor `n` followed the central allocation, and `next_action` the
/// allocation executed in the following slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub beta: Vec<bool>,
    pub cost: f64,
    pub next_obs: Vec<f64>,
    pub next_action: Vec<f64>,
}

/// Shape of a joint allocation: `sensors` rows of `channels` powers, each
/// row within `budget`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub sensors: usize,
    pub channels: usize,
    pub budget: f64,
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        self.sensors * self.channels
    }

    /// Width of a global observation.
    pub fn obs_dim(&self) -> usize {
        self.sensors * (self.channels + 1)
    }

    /// Width of an encoded [`Transition`].
    pub fn record_width(&self) -> usize {
        2 * self.obs_dim() + 2 * self.dim() + self.sensors + 1
    }
}

impl Transition {
    /// Flat record `[obs, action, beta (0/1), cost, next_obs, next_action]`.
    pub fn encode(&self, space: ActionSpace) -> Result<Vec<f64>> {
        let (o, a) = (space.obs_dim(), space.dim());
        if self.obs.len() != o
            || self.next_obs.len() != o
            || self.action.len() != a
            || self.next_action.len() != a
            || self.beta.len() != space.sensors
        {
            return Err(Error::Shape("transition does not match the action space".into()));
        }
        let mut out = Vec::with_capacity(space.record_width());
        out.extend_from_slice(&self.obs);
        out.extend_from_slice(&self.action);
        out.extend(self.beta.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        out.push(self.cost);
        out.extend_from_slice(&self.next_obs);
        out.extend_from_slice(&self.next_action);
        Ok(out)
    }

    pub fn decode(record: &[f64], space: ActionSpace) -> Result<Self> {
        if record.len() != space.record_width() {
            return Err(Error::Shape(format!("record of {} values, expected {}", record.len(), space.record_width())));
        }
        let (o, a, n) = (space.obs_dim(), space.dim(), space.sensors);
        let mut at = 0;
        let mut take = |k: usize| {
            let part = &record[at..at + k];
            at += k;
            part
        };
        Ok(Self {
            obs: take(o).to_vec(),
            action: take(a).to_vec(),
            beta: take(n).iter().map(|&v| v != 0.0).collect(),
            cost: take(1)[0],
            next_obs: take(o).to_vec(),
            next_action: take(a).to_vec(),
        })
    }
}

/// Column-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub action: Array2<f64>,
    pub beta: Array2<bool>,
    pub cost: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub next_action: Array2<f64>,
}

fn stack(rows: &[&[f64]]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("ragged transition batch".into()));
    }
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::Shape(e.to_string()))
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let n = items[0].beta.len();
        if items.iter().any(|t| t.beta.len() != n) {
            return Err(Error::Shape("ragged beta in batch".into()));
        }
        let beta_flat: Vec<bool> = items.iter().flat_map(|t| t.beta.iter().copied()).collect();
        Ok(Self {
            obs: stack(&items.iter().map(|t| t.obs.as_slice()).collect::<Vec<_>>())?,
            action: stack(&items.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())?,
            beta: Array2::from_shape_vec((items.len(), n), beta_flat).map_err(|e| Error::Shape(e.to_string()))?,
            cost: items.iter().map(|t| t.cost).collect(),
            next_obs: stack(&items.iter().map(|t| t.next_obs.as_slice()).collect::<Vec<_>>())?,
            next_action: stack(&items.iter().map(|t| t.next_action.as_slice()).collect::<Vec<_>>())?,
        })
    }

    /// Gathers encoded records (see [`Transition::encode`]).
    pub fn from_records(records: &[&[f64]], space: ActionSpace) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let width = space.record_width();
        if records.iter().any(|r| r.len() != width) {
            return Err(Error::Shape(format!("records must have {width} values")));
        }
        let (o, a, n) = (space.obs_dim(), space.dim(), space.sensors);
        let rows = records.len();
        let block = |start: usize, k: usize| Array2::from_shape_fn((rows, k), |(b, j)| records[b][start + j]);
        Ok(Self {
            obs: block(0, o),
            action: block(o, a),
            beta: Array2::from_shape_fn((rows, n), |(b, j)| records[b][o + a + j] != 0.0),
            cost: records.iter().map(|r| r[o + a + n]).collect(),
            next_obs: block(o + a + n + 1, o),
            next_action: block(2 * o + a + n + 1, a),
        })
    }

    pub fn len(&self) -> usize {
        self.cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cost.is_empty()
    }
}

/// `[O, a / E^s]`
pub fn critic_input(obs: ArrayView2<f64>, action: ArrayView2<f64>, budget: f64) -> Result<Array2<f64>> {
    let scaled = action.mapv(|v| v / budget);
    concatenate(Axis(1), &[obs, scaled.view()]).map_err(|e| Error::Shape(e.to_string()))
}

/// `y = s·c + δ·Q'`
pub fn td_targets(cost: ArrayView1<f64>, next_q: ArrayView1<f64>, discount: f64, cost_scale: f64) -> Array1<f64> {
    &cost * cost_scale + &(&next_q * discount)
}

#[derive(Debug, Clone)]
pub struct TdLoss {
    pub value: f64,
    pub grads: Gradients,
}

/// `mean_b (Q(O_b, a_b) − y_b)²` and its gradient in the critic parameters.
pub fn td_loss(
    critic: &Mlp,
    obs: ArrayView2<f64>,
    action: ArrayView2<f64>,
    targets: ArrayView1<f64>,
    budget: f64,
) -> Result<TdLoss> {
    let x = critic_input(obs, action, budget)?;
    let pass = critic.forward(x.view())?;
    let q = pass.raw.column(0);
    if q.len() != targets.len() {
        return Err(Error::Shape(format!("{} values for {} targets", q.len(), targets.len())));
    }
    let b = q.len() as f64;
    let diff = &q - &targets;
    let value = diff.mapv(|d| d * d).sum() / b;
    let grad_q = diff.mapv(|d| 2.0 * d / b).insert_axis(Axis(1));
    let (grads, _) = critic.backward_raw(&pass, grad_q.view())?;
    Ok(TdLoss { value, grads })
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub value: f64,
    pub central: Option<Gradients>,
    /// One entry per distributed network (a single entry when shared).
    pub distributed: Vec<Gradients>,
}

/// `mean_b Q(O_b, β_b ⊙ μ(O_b) + (1 − β_b) ⊙ κ(o_b))` where `β` selects
/// whole sensor rows. Gradients reach `μ` only through rows with `β = 1` and
/// `κ_n` only through rows with `β = 0`. An absent actor must have all its
/// rows masked out.
pub fn actor_loss(
    critic: &Mlp,
    central: Option<&Mlp>,
    distributed: Option<&DistributedActors>,
    obs: ArrayView2<f64>,
    beta: ArrayView2<bool>,
    space: ActionSpace,
) -> Result<ActorLoss> {
    let ActionSpace {
        sensors,
        channels,
        budget,
    } = space;
    let rows = obs.nrows();
    if beta.dim() != (rows, sensors) {
        return Err(Error::Shape(format!("beta {:?}, expected ({rows}, {sensors})", beta.dim())));
    }
    let any_central = beta.iter().any(|&b| b);
    let any_local = beta.iter().any(|&b| !b);
    if (any_central && central.is_none()) || (any_local && distributed.is_none()) {
        return Err(Error::Shape("beta selects an actor that is not present".into()));
    }

    let central_pass = central.map(|net| net.forward(obs)).transpose()?;
    let central_out = match (central, &central_pass) {
        (Some(net), Some(p)) => Some(net.head.apply(p.raw.view())),
        _ => None,
    };
    let local = distributed.map(|d| d.forward(obs)).transpose()?;

    let mut action = Array2::zeros((rows, sensors * channels));
    for b in 0..rows {
        for n in 0..sensors {
            let cols = s![b, n * channels..(n + 1) * channels];
            if beta[(b, n)] {
                action.slice_mut(cols).assign(&central_out.as_ref().expect("checked").slice(cols));
            } else {
                let (_, out) = &local.as_ref().expect("checked")[n];
                action.slice_mut(s![b, n * channels..(n + 1) * channels]).assign(&out.row(b));
            }
        }
    }

    let x = critic_input(obs, action.view(), budget)?;
    let pass = critic.forward(x.view())?;
    let value = pass.raw.column(0).mean().unwrap_or(0.0);
    let seed = Array2::from_elem((rows, 1), 1.0 / rows as f64);
    let dx = critic.backward_input_raw(&pass, seed.view())?;
    let obs_dim = obs.ncols();
    let da = dx.slice(s![.., obs_dim..]).mapv(|v| v / budget);

    let central_grads = match (central, &central_pass) {
        (Some(net), Some(p)) => {
            let mut g = da.clone();
            for b in 0..rows {
                for n in 0..sensors {
                    if !beta[(b, n)] {
                        g.slice_mut(s![b, n * channels..(n + 1) * channels]).fill(0.0);
                    }
                }
            }
            Some(net.backward(p, g.view())?.0)
        }
        _ => None,
    };

    let mut distributed_grads = Vec::new();
    if let (Some(d), Some(local)) = (distributed, &local) {
        for (n, (p, _)) in local.iter().enumerate() {
            let mut g = da.slice(s![.., n * channels..(n + 1) * channels]).to_owned();
            for b in 0..rows {
                if beta[(b, n)] {
                    g.row_mut(b).fill(0.0);
                }
            }
            let (grads, _) = d.net(n).backward(p, g.view())?;
            if d.shared && n > 0 {
                let acc: &mut Gradients = &mut distributed_grads[0];
                acc.add_assign(&grads);
            } else {
                distributed_grads.push(grads);
            }
        }
    }

    Ok(ActorLoss {
        value,
        central: central_grads,
        distributed: distributed_grads,
    })
}
