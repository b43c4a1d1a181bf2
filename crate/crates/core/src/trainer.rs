//! Episodic training loop: rebuild the tree every episode, one composite
//! action per node in BFS order, terminal evaluation on the training set
//! with the metric-delta reward, prioritized replay updates, and the
//! within-project / cross-project evaluation protocols.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig};
use crate::dataset::{stratified_split, Dataset, Label};
use crate::error::{Error, Result};
use crate::metrics::{confusion, scores, EvalScores};
use crate::replay::{PrioritizedBuffer, Transition};
use crate::tree::{assign_leaf_labels, encode_state, random_tree, set_node, DecisionTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMetric {
    F1,
    Auc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub depth: usize,
    pub episodes: usize,
    pub agent: AgentConfig,
    pub reward_metric: RewardMetric,
    pub eval_each_episode: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            depth: 4,
            episodes: 400,
            agent: AgentConfig::default(),
            reward_metric: RewardMetric::F1,
            eval_each_episode: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        self.agent.validate()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub train_f1: f64,
    pub reward: f64,
    pub epsilon: f64,
    pub loss_q: f64,
    pub loss_x: f64,
}

/// RNG bookkeeping for exact resumption, stored next to the agent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent: Agent,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub episodes_done: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_tree: DecisionTree,
    pub best_train_f1: f64,
    pub history: Vec<EpisodeStats>,
    pub initial_metric: f64,
    pub final_metric: f64,
    pub reward_sum: f64,
    pub checkpoint: Checkpoint,
}

fn train_scores(tree: &DecisionTree, data: &Dataset) -> Result<EvalScores> {
    let predicted: Vec<Label> = data.rows.iter().map(|(x, _)| tree.classify(x)).collect();
    let actual: Vec<Label> = data.rows.iter().map(|(_, l)| *l).collect();
    scores(&confusion(&predicted, &actual)?)
}

/// Train a fixed-structure tree with the P-DQN agent.
pub fn train(train_set: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let (skip, build) = train_set.class_counts();
    if skip == 0 || build == 0 {
        return Err(Error::Train(
            "training set must contain both classes".into(),
        ));
    }
    let schema = &train_set.schema;
    let n = (1usize << cfg.depth) - 1;
    let total_steps = cfg.episodes * n;
    let eps_decay = if cfg.agent.eps_decay_steps > 0 {
        cfg.agent.eps_decay_steps
    } else {
        (total_steps / 2).max(1)
    };
    let warmup = cfg.agent.warmup_steps.max(cfg.agent.batch_size);
    let planned_updates = total_steps.saturating_sub(warmup).max(1) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agent = Agent::new(schema, cfg.depth, cfg.agent.clone(), cfg.seed ^ 0x5eed)?;
    let mut buffer = PrioritizedBuffer::new(
        cfg.agent.replay_capacity,
        cfg.agent.per_alpha,
        cfg.agent.per_beta_start,
        cfg.agent.priority_floor,
    )?;

    let eps_at = |step: usize| -> f64 {
        let frac = (step as f64 / eps_decay as f64).min(1.0);
        cfg.agent.eps_start + (cfg.agent.eps_end - cfg.agent.eps_start) * frac
    };

    let mut step = 0usize;
    let mut updates_done = 0usize;
    let mut s_prev = 0.0;
    let mut initial_metric = 0.0;
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_train_f1 = 0.0_f64;
    let mut best_tree: Option<DecisionTree> = None;
    let mut history = Vec::new();
    let mut reward_sum = 0.0;
    let mut final_metric = 0.0;

    for episode in 1..=cfg.episodes {
        let mut tree = random_tree(schema, cfg.depth, &mut rng)?;
        if episode == 1 {
            let labeled = assign_leaf_labels(&tree, train_set)?;
            let sc = train_scores(&labeled, train_set)?;
            initial_metric = match cfg.reward_metric {
                RewardMetric::F1 => sc.f1,
                RewardMetric::Auc => sc.auc,
            };
            s_prev = initial_metric;
        }

        let mut episode_f1 = 0.0;
        let mut episode_reward = 0.0;
        let mut last_losses = (0.0, 0.0);
        for t in 0..n {
            let state = encode_state(&tree, t, schema);
            let eps = eps_at(step);
            let action = agent.select_action(&state, eps, &mut rng)?;
            tree = set_node(&tree, t, &action, schema)?;
            let terminal = t == n - 1;
            let reward = if terminal {
                tree = assign_leaf_labels(&tree, train_set)?;
                let sc = train_scores(&tree, train_set)?;
                let metric_now = match cfg.reward_metric {
                    RewardMetric::F1 => sc.f1,
                    RewardMetric::Auc => sc.auc,
                };
                episode_f1 = sc.f1;
                final_metric = metric_now;
                let r = metric_now - s_prev;
                s_prev = metric_now;
                r
            } else {
                0.0
            };
            let next_state = encode_state(&tree, t + 1, schema);
            buffer.push(Transition {
                state: state.0,
                action,
                reward,
                next_state: next_state.0,
                terminal,
            });
            step += 1;
            if terminal {
                episode_reward = reward;
                reward_sum += reward;
            }

            if buffer.len() >= warmup {
                buffer.beta = cfg.agent.per_beta_start
                    + (cfg.agent.per_beta_end - cfg.agent.per_beta_start)
                        * (updates_done as f64 / planned_updates).min(1.0);
                let (indices, is_weights) = buffer.sample(cfg.agent.batch_size, &mut rng)?;
                let batch: Vec<Transition> = indices.iter().map(|&i| buffer.get(i).clone()).collect();
                let refs: Vec<&Transition> = batch.iter().collect();
                let (loss_q, loss_x, td) = agent.update(&refs, &is_weights)?;
                buffer.update_priorities(&indices, &td)?;
                last_losses = (loss_q, loss_x);
                updates_done += 1;
            }
        }

        if final_metric > best_metric {
            best_metric = final_metric;
            best_tree = Some(tree.clone());
        }
        best_train_f1 = best_train_f1.max(episode_f1);
        if cfg.eval_each_episode {
            history.push(EpisodeStats {
                train_f1: episode_f1,
                reward: episode_reward,
                epsilon: eps_at(step.saturating_sub(1)),
                loss_q: last_losses.0,
                loss_x: last_losses.1,
            });
        }
    }

    let reward_gap = (reward_sum - (final_metric - initial_metric)).abs();
    debug_assert!(reward_gap < 1e-9, "reward telescoping violated: {reward_gap}");

    Ok(TrainReport {
        best_tree: best_tree.expect("at least one episode ran"),
        best_train_f1,
        history,
        initial_metric,
        final_metric,
        reward_sum,
        checkpoint: Checkpoint {
            agent,
            rng_seed: cfg.seed,
            rng_word_pos: rng.get_word_pos(),
            episodes_done: cfg.episodes,
        },
    })
}

/// Classify every test row with the tree and score it.
pub fn evaluate(tree: &DecisionTree, test: &Dataset) -> Result<EvalScores> {
    if test.is_empty() {
        return Err(Error::Dataset("empty evaluation set".into()));
    }
    train_scores(tree, test)
}

/// Stratified 80/20 within-project protocol. Returns the held-out scores
/// together with the full training report.
pub fn within_project(ds: &Dataset, cfg: &TrainConfig) -> Result<(TrainReport, EvalScores)> {
    let (train_set, test_set) = stratified_split(ds, 0.2, cfg.seed)?;
    let report = train(&train_set, cfg)?;
    let eval = evaluate(&report.best_tree, &test_set)?;
    Ok((report, eval))
}

/// Leave-one-project-out protocol: each project is scored by a model
/// trained on the concatenation of all the others.
pub fn cross_project(projects: &[Dataset], cfg: &TrainConfig) -> Result<Vec<(String, EvalScores)>> {
    if projects.len() < 2 {
        return Err(Error::Config("cross-project needs at least 2 projects".into()));
    }
    let mut results = Vec::with_capacity(projects.len());
    for (i, held_out) in projects.iter().enumerate() {
        let others: Vec<&Dataset> = projects
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, d)| d)
            .collect();
        let train_set = Dataset::concat(&others, format!("all-but-{}", held_out.provenance))?;
        let report = train(&train_set, cfg)?;
        let eval = evaluate(&report.best_tree, held_out)?;
        results.push((held_out.provenance.clone(), eval));
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSchema, FeatureVector};

    fn small_config(depth: usize, episodes: usize, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.depth = depth;
        cfg.episodes = episodes;
        cfg.seed = seed;
        cfg.agent.hidden = vec![16];
        cfg.agent.warmup_steps = 8;
        cfg.agent.batch_size = 8;
        cfg
    }

    fn separable_dataset(n: usize) -> Dataset {
        let schema = FeatureSchema::unit_numeric(&["a", "b"]).unwrap();
        let rows = (0..n)
            .map(|i| {
                let v = i as f64 / n as f64;
                let label = if v <= 0.2 { Label::Skip } else { Label::Build };
                (FeatureVector(vec![v, 1.0 - v]), label)
            })
            .collect();
        Dataset::new(schema, rows, "sep").unwrap()
    }

    #[test]
    fn rejects_single_class() {
        let schema = FeatureSchema::unit_numeric(&["a"]).unwrap();
        let rows = (0..10)
            .map(|i| (FeatureVector(vec![i as f64 / 10.0]), Label::Build))
            .collect();
        let ds = Dataset::new(schema, rows, "one").unwrap();
        assert!(train(&ds, &small_config(2, 2, 0)).is_err());
    }

    #[test]
    fn episode_structure_and_rewards() {
        let ds = separable_dataset(50);
        let cfg = small_config(3, 6, 1);
        let report = train(&ds, &cfg).unwrap();
        assert_eq!(report.history.len(), 6);
        // telescoping: sum of terminal rewards equals final minus initial
        let gap = (report.reward_sum - (report.final_metric - report.initial_metric)).abs();
        assert!(gap < 1e-12, "gap {gap}");
        // best F1 is the running maximum of history
        let max_f1 = report.history.iter().map(|h| h.train_f1).fold(0.0, f64::max);
        assert_eq!(report.best_train_f1, max_f1);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = separable_dataset(40);
        let cfg = small_config(2, 4, 7);
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.best_tree, b.best_tree);
        assert_eq!(a.best_train_f1, b.best_train_f1);
        assert_eq!(a.reward_sum, b.reward_sum);
    }

    #[test]
    fn learns_a_separable_problem() {
        let ds = separable_dataset(100);
        let cfg = small_config(2, 60, 3);
        let report = train(&ds, &cfg).unwrap();
        assert!(report.best_train_f1 > 0.9, "best f1 {}", report.best_train_f1);
    }

    #[test]
    fn evaluate_constant_tree() {
        let ds = separable_dataset(50);
        let tree = crate::tree::DecisionTree::new(
            1,
            vec![crate::tree::TreeNode { attribute: 0, threshold: 2.0 }],
            vec![Label::Build, Label::Build],
        )
        .unwrap();
        let sc = evaluate(&tree, &ds).unwrap();
        assert_eq!((sc.recall, sc.f1), (0.0, 0.0));
    }

    #[test]
    fn within_project_deterministic() {
        let ds = separable_dataset(60);
        let cfg = small_config(2, 5, 11);
        let (_, a) = within_project(&ds, &cfg).unwrap();
        let (_, b) = within_project(&ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cross_project_structure() {
        let mut projects = Vec::new();
        for p in 0..3 {
            let mut ds = separable_dataset(40);
            ds.provenance = format!("proj{p}");
            projects.push(ds);
        }
        let cfg = small_config(2, 3, 5);
        let results = cross_project(&projects, &cfg).unwrap();
        assert_eq!(results.len(), 3);
        for (i, (name, _)) in results.iter().enumerate() {
            assert_eq!(name, &format!("proj{i}"));
        }
        assert!(cross_project(&projects[..1], &cfg).is_err());
    }
}
