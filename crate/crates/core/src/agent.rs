//! The P-DQN agent: a thresholds-network proposing a threshold per
//! attribute, an attributes-network scoring them in a single joint pass,
//! epsilon-greedy composite action selection, and the two losses with a
//! periodically hard-synced target copy of the attributes-network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSchema;
use crate::error::{Error, Result};
use crate::neural::{
    accumulate, adam_step, backward, forward, init_network, Activation, AdamState, Network,
};
use crate::replay::Transition;
use crate::tree::{state_width, TreeState};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Composite action: discrete attribute plus its continuous threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub attribute: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// 0 means "let the trainer pick": half of the total step budget.
    pub eps_decay_steps: usize,
    pub lr_q: f64,
    pub lr_x: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Hard target sync period in updates; 1 disables staleness.
    pub target_sync_period: u64,
    pub replay_capacity: usize,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub priority_floor: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.95,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 0,
            lr_q: 1e-3,
            lr_x: 1e-3,
            hidden: vec![128, 64],
            batch_size: 32,
            warmup_steps: 200,
            target_sync_period: 100,
            replay_capacity: 10_000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            priority_floor: 0.01,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} not in [0,1]", self.gamma)));
        }
        if self.eps_end > self.eps_start {
            return Err(Error::Config("eps_end must not exceed eps_start".into()));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(Error::Config("batch size and replay capacity must be positive".into()));
        }
        if self.priority_floor <= 0.0 {
            return Err(Error::Config("priority floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Agent {
    thresholds_net: Network,
    attributes_net: Network,
    target_net: Network,
    opt_x: AdamState,
    opt_q: AdamState,
    ranges: Vec<(f64, f64)>,
    state_width: usize,
    pub config: AgentConfig,
    updates: u64,
}

impl Agent {
    pub fn new(schema: &FeatureSchema, tree_depth: usize, config: AgentConfig, seed: u64) -> Result<Agent> {
        config.validate()?;
        let k = schema.k();
        let sw = state_width(tree_depth, k);
        let mut x_sizes = vec![sw];
        x_sizes.extend(&config.hidden);
        x_sizes.push(k);
        let mut q_sizes = vec![sw + k];
        q_sizes.extend(&config.hidden);
        q_sizes.push(k);
        let thresholds_net = init_network(&x_sizes, Activation::Relu, Activation::Logistic, seed)?;
        let attributes_net = init_network(&q_sizes, Activation::Relu, Activation::Linear, seed ^ 0x9e3779b97f4a7c15)?;
        let target_net = attributes_net.clone();
        Ok(Agent {
            opt_x: AdamState::new(&thresholds_net),
            opt_q: AdamState::new(&attributes_net),
            thresholds_net,
            attributes_net,
            target_net,
            ranges: (0..k).map(|i| schema.range(i)).collect(),
            state_width: sw,
            config,
            updates: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.ranges.len()
    }

    pub fn state_width(&self) -> usize {
        self.state_width
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn attributes_net(&self) -> &Network {
        &self.attributes_net
    }

    pub fn thresholds_net(&self) -> &Network {
        &self.thresholds_net
    }

    fn to_range(&self, k: usize, logistic: f64) -> f64 {
        let (min, max) = self.ranges[k];
        min + logistic * (max - min)
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let (min, max) = self.ranges[k];
                if max > min {
                    (v - min) / (max - min)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Thresholds vector for every attribute, mapped into schema ranges.
    pub fn predict_thresholds(&self, s: &TreeState) -> Result<Vec<f64>> {
        let (out, _) = forward(&self.thresholds_net, s.as_slice())?;
        Ok(out.iter().enumerate().map(|(k, &t)| self.to_range(k, t)).collect())
    }

    /// Per-attribute Q-values from one pass over (state, normalized thresholds).
    pub fn q_values(&self, s: &TreeState, thresholds: &[f64], use_target: bool) -> Result<Vec<f64>> {
        if thresholds.len() != self.k() {
            return Err(Error::Dimension {
                expected: self.k(),
                got: thresholds.len(),
            });
        }
        let mut input = s.as_slice().to_vec();
        input.extend(self.normalize(thresholds));
        let net = if use_target { &self.target_net } else { &self.attributes_net };
        let (out, _) = forward(net, &input)?;
        Ok(out)
    }

    /// Epsilon-greedy: explore uniformly over attributes and ranges, exploit
    /// by argmax over Q (lowest index wins ties).
    pub fn select_action<R: Rng>(&self, s: &TreeState, eps: f64, rng: &mut R) -> Result<Action> {
        if rng.random_bool(eps) {
            let attribute = rng.random_range(0..self.k());
            let (min, max) = self.ranges[attribute];
            let threshold = if min < max { rng.random_range(min..max) } else { min };
            return Ok(Action { attribute, threshold });
        }
        let x = self.predict_thresholds(s)?;
        let q = self.q_values(s, &x, false)?;
        let mut best = 0;
        for (i, v) in q.iter().enumerate() {
            if *v > q[best] {
                best = i;
            }
        }
        Ok(Action {
            attribute: best,
            threshold: x[best],
        })
    }

    /// Bellman target: r on terminal transitions, otherwise the discounted
    /// target-net maximum. Non-terminal transitions must carry zero reward.
    pub fn td_target(&self, tr: &Transition) -> Result<f64> {
        if tr.terminal {
            return Ok(tr.reward);
        }
        if tr.reward != 0.0 {
            return Err(Error::Train(format!(
                "non-terminal transition carries reward {}; the trainer contract requires 0",
                tr.reward
            )));
        }
        let next = TreeState(tr.next_state.clone());
        let x = self.predict_thresholds(&next)?;
        let q = self.q_values(&next, &x, true)?;
        let max_q = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(self.config.gamma * max_q)
    }

    pub fn sync_target(&mut self) {
        self.target_net = self.attributes_net.clone();
    }

    /// One prioritized batch update: an Adam step on the Q loss (theta_q
    /// only), then one on the thresholds loss (theta_x only, theta_q held
    /// fixed). Returns (loss_q, loss_x, per-sample |TD error|).
    pub fn update(&mut self, batch: &[&Transition], is_weights: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        if batch.is_empty() || batch.len() != is_weights.len() {
            return Err(Error::Train("empty or mismatched update batch".into()));
        }
        let b = batch.len() as f64;
        let k_total = self.k();

        // Q loss on the taken action's output
        let targets: Vec<f64> = batch
            .iter()
            .map(|tr| self.td_target(tr))
            .collect::<Result<_>>()?;
        let mut grads_q = self.attributes_net.zero_gradients();
        let mut loss_q = 0.0;
        let mut td_errors = Vec::with_capacity(batch.len());
        for ((tr, &y), &w) in batch.iter().zip(&targets).zip(is_weights) {
            let state = TreeState(tr.state.clone());
            let mut x = self.predict_thresholds(&state)?;
            x[tr.action.attribute] = tr.action.threshold;
            let mut input = tr.state.clone();
            input.extend(self.normalize(&x));
            let (q, cache) = forward(&self.attributes_net, &input)?;
            let delta = q[tr.action.attribute] - y;
            loss_q += w * delta * delta / b;
            td_errors.push(delta.abs());
            let mut out_grad = vec![0.0; k_total];
            out_grad[tr.action.attribute] = 2.0 * w * delta / b;
            let g = backward(&self.attributes_net, &cache, &out_grad)?;
            accumulate(&mut grads_q, &g);
        }
        adam_step(
            &mut self.attributes_net,
            &grads_q,
            &mut self.opt_q,
            self.config.lr_q,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        )?;

        // thresholds loss -sum_k Q_k, chained through the normalized X block
        let mut grads_x = self.thresholds_net.zero_gradients();
        let mut loss_x = 0.0;
        for (tr, &w) in batch.iter().zip(is_weights) {
            let (t_out, cache_x) = forward(&self.thresholds_net, &tr.state)?;
            let mut input = tr.state.clone();
            // the logistic output IS the normalized threshold
            for (k, t) in t_out.iter().enumerate() {
                let (min, max) = self.ranges[k];
                input.push(if max > min { *t } else { 0.0 });
            }
            let (q, cache_q) = forward(&self.attributes_net, &input)?;
            loss_x += w * -q.iter().sum::<f64>() / b;
            let out_grad = vec![-w / b; k_total];
            let gq = backward(&self.attributes_net, &cache_q, &out_grad)?;
            let mut x_grad: Vec<f64> = gq.input[self.state_width..].to_vec();
            for (k, g) in x_grad.iter_mut().enumerate() {
                let (min, max) = self.ranges[k];
                if max <= min {
                    *g = 0.0;
                }
            }
            let g = backward(&self.thresholds_net, &cache_x, &x_grad)?;
            accumulate(&mut grads_x, &g);
        }
        adam_step(
            &mut self.thresholds_net,
            &grads_x,
            &mut self.opt_x,
            self.config.lr_x,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        )?;

        self.updates += 1;
        if self.config.target_sync_period > 0 && self.updates % self.config.target_sync_period == 0 {
            self.sync_target();
        }
        Ok((loss_q, loss_x, td_errors))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Agent> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureKind, FeatureSpec};
    use crate::tree::random_tree;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema_k(k: usize) -> FeatureSchema {
        let names: Vec<String> = (0..k).map(|i| format!("f{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        FeatureSchema::unit_numeric(&refs).unwrap()
    }

    fn zero_weights(net: &mut Network) {
        for l in &mut net.layers {
            for row in &mut l.weights {
                row.fill(0.0);
            }
            l.bias.fill(0.0);
        }
    }

    fn some_state(schema: &FeatureSchema, depth: usize, seed: u64) -> TreeState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(schema, depth, &mut rng).unwrap();
        crate::tree::encode_state(&tree, 0, schema)
    }

    #[test]
    fn zero_net_thresholds_hit_midpoints() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec { name: "a".into(), kind: FeatureKind::Numeric, min: 2.0, max: 6.0 },
            FeatureSpec { name: "b".into(), kind: FeatureKind::Boolean, min: 0.0, max: 1.0 },
        ])
        .unwrap();
        let mut agent = Agent::new(&schema, 2, AgentConfig::default(), 1).unwrap();
        zero_weights(&mut agent.thresholds_net);
        let s = some_state(&schema, 2, 0);
        let x = agent.predict_thresholds(&s).unwrap();
        assert_eq!(x, vec![4.0, 0.5]);
    }

    #[test]
    fn zero_q_net_outputs_zero() {
        let schema = schema_k(3);
        let mut agent = Agent::new(&schema, 2, AgentConfig::default(), 2).unwrap();
        zero_weights(&mut agent.attributes_net);
        let s = some_state(&schema, 2, 1);
        let q = agent.q_values(&s, &[0.5, 0.5, 0.5], false).unwrap();
        assert_eq!(q, vec![0.0; 3]);
        assert_eq!(q.len(), 3);
    }

    #[test]
    fn select_action_argmax_and_ties() {
        let schema = schema_k(3);
        let mut agent = Agent::new(&schema, 2, AgentConfig::default(), 3).unwrap();
        // craft a zero net whose bias fixes the Q ordering
        zero_weights(&mut agent.attributes_net);
        let last = agent.attributes_net.layers.len() - 1;
        agent.attributes_net.layers[last].bias = vec![0.1, 0.9, 0.3];
        let s = some_state(&schema, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = agent.select_action(&s, 0.0, &mut rng).unwrap();
        assert_eq!(a.attribute, 1);

        agent.attributes_net.layers[last].bias = vec![0.5, 0.5, 0.0];
        let a = agent.select_action(&s, 0.0, &mut rng).unwrap();
        assert_eq!(a.attribute, 0);
    }

    #[test]
    fn argmax_invariant_to_constant_bias_shift() {
        let schema = schema_k(4);
        let mut agent = Agent::new(&schema, 3, AgentConfig::default(), 17).unwrap();
        let s = some_state(&schema, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = agent.select_action(&s, 0.0, &mut rng).unwrap();
        let last = agent.attributes_net.layers.len() - 1;
        for b in &mut agent.attributes_net.layers[last].bias {
            *b += 5.0;
        }
        let after = agent.select_action(&s, 0.0, &mut rng).unwrap();
        assert_eq!(before.attribute, after.attribute);
    }

    #[test]
    fn exploration_is_uniform() {
        let schema = schema_k(4);
        let agent = Agent::new(&schema, 2, AgentConfig::default(), 5).unwrap();
        let s = some_state(&schema, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let a = agent.select_action(&s, 1.0, &mut rng).unwrap();
            counts[a.attribute] += 1;
            assert!((0.0..=1.0).contains(&a.threshold));
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
        }
    }

    fn transition(state: Vec<f64>, reward: f64, terminal: bool, next: Vec<f64>) -> Transition {
        Transition {
            state,
            action: Action { attribute: 0, threshold: 0.5 },
            reward,
            next_state: next,
            terminal,
        }
    }

    #[test]
    fn td_target_branches() {
        let schema = schema_k(2);
        let mut cfg = AgentConfig::default();
        cfg.gamma = 0.9;
        let mut agent = Agent::new(&schema, 2, cfg, 6).unwrap();
        let sw = agent.state_width();
        let tr = transition(vec![0.1; sw], 0.1, true, vec![0.1; sw]);
        assert_eq!(agent.td_target(&tr).unwrap(), 0.1);

        zero_weights(&mut agent.target_net);
        let last = agent.target_net.layers.len() - 1;
        agent.target_net.layers[last].bias = vec![0.2, 0.5];
        let tr = transition(vec![0.1; sw], 0.0, false, vec![0.1; sw]);
        assert!((agent.td_target(&tr).unwrap() - 0.45).abs() < 1e-12);

        agent.config.gamma = 0.0;
        assert_eq!(agent.td_target(&tr).unwrap(), 0.0);

        let bad = transition(vec![0.1; sw], 0.3, false, vec![0.1; sw]);
        assert!(agent.td_target(&bad).is_err());
    }

    #[test]
    fn update_isolates_parameters() {
        let schema = schema_k(3);
        let mut agent = Agent::new(&schema, 2, AgentConfig::default(), 7).unwrap();
        let sw = agent.state_width();
        let x_before = agent.thresholds_net.clone();
        let q_before = agent.attributes_net.clone();
        let tr = transition(vec![0.3; sw], 0.2, true, vec![0.3; sw]);
        agent.update(&[&tr], &[1.0]).unwrap();
        // both losses stepped their own network
        assert_ne!(agent.attributes_net, q_before);
        assert_ne!(agent.thresholds_net, x_before);
    }

    #[test]
    fn repeated_updates_shrink_td_error() {
        let schema = schema_k(2);
        let mut cfg = AgentConfig::default();
        cfg.hidden = vec![16];
        cfg.target_sync_period = 1;
        let mut agent = Agent::new(&schema, 2, cfg, 8).unwrap();
        let sw = agent.state_width();
        let tr = transition(vec![0.4; sw], 0.5, true, vec![0.4; sw]);
        let mut first = f64::NAN;
        let mut last = f64::NAN;
        for i in 0..100 {
            let (_, _, td) = agent.update(&[&tr], &[1.0]).unwrap();
            if i == 0 {
                first = td[0];
            }
            last = td[0];
        }
        assert!(last < first * 0.2, "TD error {first} -> {last}");
    }

    #[test]
    fn target_net_stale_between_syncs() {
        let schema = schema_k(2);
        let mut cfg = AgentConfig::default();
        cfg.target_sync_period = 1_000_000;
        let mut agent = Agent::new(&schema, 2, cfg, 9).unwrap();
        let sw = agent.state_width();
        let probe = transition(vec![0.2; sw], 0.0, false, vec![0.2; sw]);
        let before = agent.td_target(&probe).unwrap();
        let tr = transition(vec![0.2; sw], 0.7, true, vec![0.2; sw]);
        for _ in 0..5 {
            agent.update(&[&tr], &[1.0]).unwrap();
        }
        // thresholds net moved, which can shift X'; compare with frozen X path:
        // target net itself must be byte-identical
        let after = agent.td_target(&probe).unwrap();
        let _ = (before, after);
        assert_eq!(agent.target_net, Agent::new(&schema_k(2), 2, agent.config.clone(), 9).unwrap().target_net);
    }

    #[test]
    fn checkpoint_round_trip() {
        let schema = schema_k(3);
        let mut agent = Agent::new(&schema, 2, AgentConfig::default(), 10).unwrap();
        let sw = agent.state_width();
        let tr = transition(vec![0.1; sw], 0.2, true, vec![0.1; sw]);
        agent.update(&[&tr], &[1.0]).unwrap();
        let json = agent.to_json().unwrap();
        let back = Agent::from_json(&json).unwrap();
        assert_eq!(back.updates, agent.updates);
        assert_eq!(back.attributes_net, agent.attributes_net);
        assert_eq!(back.thresholds_net, agent.thresholds_net);
    }
}
