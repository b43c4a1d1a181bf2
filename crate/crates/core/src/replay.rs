//! Prioritized experience replay: proportional priorities, with-replacement
//! sampling and importance-sampling weights. O(n) sampling is fine at the
//! capacities this trainer uses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Action;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrioritizedBuffer {
    capacity: usize,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    next: usize,
    max_priority: f64,
    pub alpha: f64,
    pub beta: f64,
    pub priority_floor: f64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64, beta: f64, priority_floor: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if priority_floor <= 0.0 {
            return Err(Error::Config("priority floor must be positive".into()));
        }
        Ok(PrioritizedBuffer {
            capacity,
            items: Vec::new(),
            priorities: Vec::new(),
            next: 0,
            max_priority: 1.0,
            alpha,
            beta,
            priority_floor,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.priorities[i]
    }

    /// Insert with the current maximum priority; evicts the oldest at capacity.
    pub fn push(&mut self, tr: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(tr);
            self.priorities.push(self.max_priority);
        } else {
            self.items[self.next] = tr;
            self.priorities[self.next] = self.max_priority;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Draw `batch_size` indices with replacement, probability p_i^alpha,
    /// returning max-normalized importance-sampling weights.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
        let n = self.items.len();
        if n < batch_size {
            return Err(Error::Train(format!(
                "replay buffer has {n} transitions, batch needs {batch_size}"
            )));
        }
        let weights_pow: Vec<f64> = self.priorities.iter().map(|p| p.powf(self.alpha)).collect();
        let total: f64 = weights_pow.iter().sum();
        let mut indices = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in weights_pow.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            indices.push(chosen);
        }
        let mut is_weights: Vec<f64> = indices
            .iter()
            .map(|&i| {
                let p = weights_pow[i] / total;
                (n as f64 * p).powf(-self.beta)
            })
            .collect();
        let max_w = is_weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut is_weights {
            *w /= max_w;
        }
        Ok((indices, is_weights))
    }

    /// Refresh priorities to |delta| + floor.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        for (&i, &d) in indices.iter().zip(td_errors) {
            if i >= self.items.len() {
                return Err(Error::Train(format!("priority index {i} out of range")));
            }
            let p = d.abs() + self.priority_floor;
            self.priorities[i] = p;
            self.max_priority = self.max_priority.max(p);
        }
        Ok(())
    }
}
