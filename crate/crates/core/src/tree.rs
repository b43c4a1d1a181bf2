//! Fixed-structure complete binary decision trees: classification, node
//! mutation, state encoding with tree convolution, leaf labeling, the greedy
//! Gini baseline and impurity-based feature importance.
//!
//! Nodes are stored in breadth-first order; node `i` has children `2i+1`
//! and `2i+2`, and the virtual BFS index `N + leaf` addresses a leaf.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Action;
use crate::dataset::{Dataset, FeatureSchema, FeatureVector, Label};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub attribute: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    depth: usize,
    nodes: Vec<TreeNode>,
    leaf_labels: Vec<Label>,
}

/// Flattened convolved tree encoding plus the scaled index of the node to
/// modify next. Length is (2^(d-1)-1)*K + 1 for d >= 2, K + 1 for d = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeState(pub Vec<f64>);

impl TreeState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl DecisionTree {
    pub fn new(depth: usize, nodes: Vec<TreeNode>, leaf_labels: Vec<Label>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("tree depth must be >= 1".into()));
        }
        let n = (1usize << depth) - 1;
        if nodes.len() != n {
            return Err(Error::Config(format!(
                "depth {depth} tree needs {n} nodes, got {}",
                nodes.len()
            )));
        }
        if leaf_labels.len() != n + 1 {
            return Err(Error::Config(format!(
                "depth {depth} tree needs {} leaf labels, got {}",
                n + 1,
                leaf_labels.len()
            )));
        }
        Ok(DecisionTree {
            depth,
            nodes,
            leaf_labels,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaf_labels(&self) -> &[Label] {
        &self.leaf_labels
    }

    /// Index of the leaf an input is routed to (x[attr] <= threshold goes left).
    pub fn leaf_for(&self, x: &FeatureVector) -> usize {
        let n = self.n_nodes();
        let mut i = 0;
        while i < n {
            let node = &self.nodes[i];
            i = if x[node.attribute] <= node.threshold {
                2 * i + 1
            } else {
                2 * i + 2
            };
        }
        i - n
    }

    pub fn classify(&self, x: &FeatureVector) -> Label {
        self.leaf_labels[self.leaf_for(x)]
    }
}

/// Uniform random attributes and in-range thresholds; all leaves Build.
pub fn random_tree<R: Rng>(schema: &FeatureSchema, depth: usize, rng: &mut R) -> Result<DecisionTree> {
    if depth == 0 {
        return Err(Error::Config("tree depth must be >= 1".into()));
    }
    let n = (1usize << depth) - 1;
    let k = schema.k();
    let nodes = (0..n)
        .map(|_| {
            let attribute = rng.random_range(0..k);
            let (min, max) = schema.range(attribute);
            let threshold = if min < max { rng.random_range(min..max) } else { min };
            TreeNode { attribute, threshold }
        })
        .collect();
    DecisionTree::new(depth, nodes, vec![Label::Build; n + 1])
}

/// Replace node `t`, clamping the threshold into the attribute's range.
pub fn set_node(tree: &DecisionTree, t: usize, action: &Action, schema: &FeatureSchema) -> Result<DecisionTree> {
    if t >= tree.n_nodes() {
        return Err(Error::NodeIndex {
            index: t,
            count: tree.n_nodes(),
        });
    }
    if action.attribute >= schema.k() {
        return Err(Error::Schema(format!(
            "attribute index {} out of range for K={}",
            action.attribute,
            schema.k()
        )));
    }
    let (min, max) = schema.range(action.attribute);
    let mut out = tree.clone();
    out.nodes[t] = TreeNode {
        attribute: action.attribute,
        threshold: action.threshold.clamp(min, max),
    };
    Ok(out)
}

/// Route the training rows and count (skip, build) for every BFS position,
/// internal nodes and leaves alike. Index `N + leaf` addresses a leaf.
fn route_counts(tree: &DecisionTree, data: &Dataset) -> Vec<(usize, usize)> {
    let n = tree.n_nodes();
    let mut counts = vec![(0usize, 0usize); 2 * n + 1];
    for (x, label) in &data.rows {
        let mut i = 0;
        loop {
            match label {
                Label::Skip => counts[i].0 += 1,
                Label::Build => counts[i].1 += 1,
            }
            if i >= n {
                break;
            }
            let node = &tree.nodes[i];
            i = if x[node.attribute] <= node.threshold {
                2 * i + 1
            } else {
                2 * i + 2
            };
        }
    }
    counts
}

fn majority(skip: usize, build: usize) -> Label {
    if skip >= build {
        Label::Skip
    } else {
        Label::Build
    }
}

/// Majority vote per leaf; an empty leaf inherits the majority of the
/// nearest ancestor that received rows. Ties go to Skip.
pub fn assign_leaf_labels(tree: &DecisionTree, train: &Dataset) -> Result<DecisionTree> {
    if train.is_empty() {
        return Err(Error::Dataset("cannot label leaves from an empty dataset".into()));
    }
    let n = tree.n_nodes();
    let counts = route_counts(tree, train);
    let mut out = tree.clone();
    for leaf in 0..=n {
        let mut i = n + leaf;
        while counts[i] == (0, 0) && i > 0 {
            i = (i - 1) / 2;
        }
        let (s, b) = counts[i];
        out.leaf_labels[leaf] = majority(s, b);
    }
    Ok(out)
}

/// State encoding: one-hot-threshold node vectors, `passes` convolution
/// steps (each averages a node with its children and drops the deepest
/// layer), BFS flatten, then the scaled index of the node to modify.
pub fn encode_state_with_passes(
    tree: &DecisionTree,
    next_t: usize,
    schema: &FeatureSchema,
    passes: usize,
) -> TreeState {
    let k = schema.k();
    let n = tree.n_nodes();
    debug_assert!(next_t <= n, "next_t may be at most N (terminal marker)");
    let mut vectors: Vec<Vec<f64>> = tree
        .nodes
        .iter()
        .map(|node| {
            let mut v = vec![0.0; k];
            let (min, max) = schema.range(node.attribute);
            v[node.attribute] = if max > min { (node.threshold - min) / (max - min) } else { 0.0 };
            v
        })
        .collect();

    let mut levels = tree.depth;
    for _ in 0..passes {
        if levels < 2 {
            break;
        }
        let keep = (1usize << (levels - 1)) - 1;
        let mut next = Vec::with_capacity(keep);
        for i in 0..keep {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let v = (0..k)
                .map(|c| (vectors[i][c] + vectors[l][c] + vectors[r][c]) / 3.0)
                .collect();
            next.push(v);
        }
        vectors = next;
        levels -= 1;
    }

    let mut state: Vec<f64> = vectors.into_iter().flatten().collect();
    state.push(next_t as f64 / n as f64);
    TreeState(state)
}

pub fn encode_state(tree: &DecisionTree, next_t: usize, schema: &FeatureSchema) -> TreeState {
    encode_state_with_passes(tree, next_t, schema, 1)
}

/// Width of the encoded state for a given depth and feature count.
pub fn state_width(depth: usize, k: usize) -> usize {
    if depth == 1 {
        k + 1
    } else {
        ((1usize << (depth - 1)) - 1) * k + 1
    }
}

/// Gini impurity 1 - sum p_c^2 over per-class counts; 0 for empty or pure.
pub fn gini(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct SplitSearch<'a> {
    data: &'a Dataset,
}

impl SplitSearch<'_> {
    /// Best (attribute, midpoint threshold) by weighted child Gini over the
    /// given rows, or None when no attribute separates them.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let k = self.data.schema.k();
        let total = rows.len() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for attr in 0..k {
            let mut values: Vec<(f64, Label)> = rows
                .iter()
                .map(|&r| (self.data.rows[r].0[attr], self.data.rows[r].1))
                .collect();
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total_skip = values.iter().filter(|(_, l)| *l == Label::Skip).count();
            let mut left_skip = 0usize;
            let mut left_n = 0usize;
            for i in 0..values.len() - 1 {
                left_n += 1;
                if values[i].1 == Label::Skip {
                    left_skip += 1;
                }
                if values[i].0 == values[i + 1].0 {
                    continue;
                }
                let threshold = (values[i].0 + values[i + 1].0) / 2.0;
                let right_n = values.len() - left_n;
                let right_skip = total_skip - left_skip;
                let gl = gini(&[left_skip, left_n - left_skip]);
                let gr = gini(&[right_skip, right_n - right_skip]);
                let weighted = (left_n as f64 * gl + right_n as f64 * gr) / total;
                if best.map_or(true, |(_, _, w)| weighted < w) {
                    best = Some((attr, threshold, weighted));
                }
            }
        }
        best
    }
}

/// CART-style greedy construction, padded to the complete-tree shape: when a
/// branch stops early its subtree copies the last decided split so the
/// padded nodes are semantically inert.
pub fn greedy_gini_build(train: &Dataset, max_depth: usize, min_samples_split: usize) -> Result<DecisionTree> {
    if train.is_empty() {
        return Err(Error::Dataset("cannot build a tree from an empty dataset".into()));
    }
    if max_depth == 0 {
        return Err(Error::Config("tree depth must be >= 1".into()));
    }
    let n = (1usize << max_depth) - 1;
    let pad_default = TreeNode {
        attribute: 0,
        threshold: train.data_max(0),
    };
    let mut nodes = vec![pad_default; n];
    let mut leaves = vec![Label::Build; n + 1];
    let search = SplitSearch { data: train };

    // (bfs index, rows, split inherited from the last decided ancestor, fallback label)
    let all_rows: Vec<usize> = (0..train.len()).collect();
    let root_majority = {
        let (s, b) = train.class_counts();
        majority(s, b)
    };
    let mut stack: Vec<(usize, Vec<usize>, TreeNode, Label)> =
        vec![(0, all_rows, pad_default, root_majority)];

    while let Some((idx, rows, inherited, fallback)) = stack.pop() {
        let label = if rows.is_empty() {
            fallback
        } else {
            let s = rows.iter().filter(|&&r| train.rows[r].1 == Label::Skip).count();
            majority(s, rows.len() - s)
        };
        if idx >= n {
            leaves[idx - n] = label;
            continue;
        }
        let pure = {
            let s = rows.iter().filter(|&&r| train.rows[r].1 == Label::Skip).count();
            s == 0 || s == rows.len()
        };
        let split = if pure || rows.len() < min_samples_split {
            None
        } else {
            search.best_split(&rows)
        };
        match split {
            Some((attr, threshold, _)) => {
                let node = TreeNode { attribute: attr, threshold };
                nodes[idx] = node;
                let (left, right): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&r| train.rows[r].0[attr] <= threshold);
                stack.push((2 * idx + 1, left, node, label));
                stack.push((2 * idx + 2, right, node, label));
            }
            None => {
                // dead branch: replicate the inherited split downward
                nodes[idx] = inherited;
                stack.push((2 * idx + 1, rows, inherited, label));
                stack.push((2 * idx + 2, Vec::new(), inherited, label));
            }
        }
    }
    DecisionTree::new(max_depth, nodes, leaves)
}

impl Dataset {
    fn data_max(&self, attr: usize) -> f64 {
        self.rows
            .iter()
            .map(|(x, _)| x[attr])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-node importance U(N_j) = w_j I(j) - w_l I(l) - w_r I(r), where w is
/// the reach probability and I the Gini impurity of the routed rows.
/// Unfloored; sums telescope to root mass minus leaf mass.
pub fn node_importances(tree: &DecisionTree, data: &Dataset) -> Vec<f64> {
    let n = tree.n_nodes();
    let counts = route_counts(tree, data);
    let total = data.len() as f64;
    let mass = |i: usize| {
        let (s, b) = counts[i];
        ((s + b) as f64 / total) * gini(&[s, b])
    };
    (0..n)
        .map(|j| mass(j) - mass(2 * j + 1) - mass(2 * j + 2))
        .collect()
}

/// Per-feature relevance: node importances summed by tested feature,
/// negative sums floored at zero, normalized to total 1.
pub fn feature_importance(tree: &DecisionTree, data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Dataset("feature importance needs data".into()));
    }
    let k = data.schema.k();
    let per_node = node_importances(tree, data);
    let mut shares = vec![0.0; k];
    for (j, u) in per_node.iter().enumerate() {
        shares[tree.nodes[j].attribute] += u;
    }
    for s in &mut shares {
        *s = s.max(0.0);
    }
    let total: f64 = shares.iter().sum();
    if total > 0.0 {
        for s in &mut shares {
            *s /= total;
        }
    }
    Ok(shares)
}

#[derive(Serialize, Deserialize)]
struct ModelNode {
    attribute: String,
    threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_digest: String,
    depth: usize,
    nodes: Vec<ModelNode>,
    leaf_labels: Vec<Label>,
}

pub fn save_model(tree: &DecisionTree, schema: &FeatureSchema, path: &Path) -> Result<()> {
    let file = ModelFile {
        schema_digest: schema.digest(),
        depth: tree.depth,
        nodes: tree
            .nodes
            .iter()
            .map(|n| ModelNode {
                attribute: schema.feature(n.attribute).name.clone(),
                threshold: n.threshold,
            })
            .collect(),
        leaf_labels: tree.leaf_labels.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path, schema: &FeatureSchema) -> Result<DecisionTree> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.schema_digest != schema.digest() {
        return Err(Error::Schema(format!(
            "model {} was trained on a different schema (digest mismatch)",
            path.display()
        )));
    }
    let nodes = file
        .nodes
        .iter()
        .map(|n| {
            schema
                .index_of(&n.attribute)
                .map(|attribute| TreeNode {
                    attribute,
                    threshold: n.threshold,
                })
                .ok_or_else(|| Error::Schema(format!("unknown attribute {:?} in model", n.attribute)))
        })
        .collect::<Result<Vec<_>>>()?;
    DecisionTree::new(file.depth, nodes, file.leaf_labels)
}
