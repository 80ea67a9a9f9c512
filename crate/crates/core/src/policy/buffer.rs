use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// One policy decision: the detached state it was taken in, the pre-clamp
/// action, its behavior log-density and the baseline value at that state.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub baseline: f64,
}

/// One episode (a frame pair seen through `T` glimpses).
///
/// The first location is uniform and not a policy decision, so `steps`
/// holds `T - 1` transitions. The reward arrives at the last step only and
/// the return is undiscounted, so `G_t = reward` for every step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub episode: u64,
    pub first: [f64; 2],
    pub steps: Vec<Transition>,
    pub reward: f64,
}

impl RolloutBuffer {
    /// Per-step rewards: zero everywhere except the last step.
    pub fn rewards(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.steps.len()];
        if let Some(last) = r.last_mut() {
            *last = self.reward;
        }
        r
    }

    /// Undiscounted returns-to-go.
    pub fn returns(&self) -> Vec<f64> {
        let mut g = 0.0;
        let mut out: Vec<f64> = self.rewards().iter().rev().map(|r| {
            g += r;
            g
        }).collect();
        out.reverse();
        out
    }

    pub fn advantages(&self) -> Vec<f64> {
        self.returns().iter().zip(&self.steps).map(|(g, s)| g - s.baseline).collect()
    }
}

/// Transitions of several episodes flattened into rows.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub episodes: usize,
    pub state_width: usize,
    pub action_width: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub returns: Vec<f64>,
    pub baselines: Vec<f64>,
    /// Index (within this batch) of the episode each row belongs to.
    pub row_episode: Vec<usize>,
}

impl PolicyBatch {
    pub fn from_episodes<'a>(episodes: impl IntoIterator<Item = &'a RolloutBuffer>) -> Result<Self> {
        let mut b = PolicyBatch {
            episodes: 0,
            state_width: 0,
            action_width: 0,
            states: Vec::new(),
            actions: Vec::new(),
            old_log_probs: Vec::new(),
            returns: Vec::new(),
            baselines: Vec::new(),
            row_episode: Vec::new(),
        };
        for ep in episodes {
            let e = b.episodes;
            b.episodes += 1;
            for (t, g) in ep.steps.iter().zip(ep.returns()) {
                if b.rows() == 0 {
                    b.state_width = t.state.len();
                    b.action_width = t.action.len();
                }
                if t.state.len() != b.state_width || t.action.len() != b.action_width {
                    return Err(Error::Shape(format!(
                        "episode {}: transition widths {}/{} vs {}/{}",
                        ep.episode,
                        t.state.len(),
                        t.action.len(),
                        b.state_width,
                        b.action_width
                    )));
                }
                b.states.extend_from_slice(&t.state);
                b.actions.extend_from_slice(&t.action);
                b.old_log_probs.push(t.log_prob);
                b.returns.push(g);
                b.baselines.push(t.baseline);
                b.row_episode.push(e);
            }
        }
        Ok(b)
    }

    pub fn rows(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    pub fn advantages(&self) -> Vec<f64> {
        self.returns.iter().zip(&self.baselines).map(|(g, b)| g - b).collect()
    }

    pub fn state_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::new(&[self.rows(), self.state_width], self.states.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
    }

    pub fn action_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::from_f64(&[self.rows(), self.action_width], &self.actions)
    }

    /// Keeps the rows for which `keep(row)` holds; the episode count is unchanged.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.rows()).filter(|&r| keep(r)).collect();
        let (sw, aw) = (self.state_width, self.action_width);
        PolicyBatch {
            episodes: self.episodes,
            state_width: sw,
            action_width: aw,
            states: rows.iter().flat_map(|&r| self.states[r * sw..(r + 1) * sw].iter().copied()).collect(),
            actions: rows.iter().flat_map(|&r| self.actions[r * aw..(r + 1) * aw].iter().copied()).collect(),
            old_log_probs: rows.iter().map(|&r| self.old_log_probs[r]).collect(),
            returns: rows.iter().map(|&r| self.returns[r]).collect(),
            baselines: rows.iter().map(|&r| self.baselines[r]).collect(),
            row_episode: rows.iter().map(|&r| self.row_episode[r]).collect(),
        }
    }
}

/// Ring buffer of recent episodes for PPO refinement.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<RolloutBuffer>,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::with_capacity(capacity.min(4096)), inserted: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, ep: RolloutBuffer) {
        let slot = (self.inserted % self.capacity as u64) as usize;
        if slot < self.items.len() {
            self.items[slot] = ep;
        } else {
            self.items.push(ep);
        }
        self.inserted += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &RolloutBuffer> {
        self.items.iter()
    }

    /// Up to `n` distinct episodes drawn uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&RolloutBuffer> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}
