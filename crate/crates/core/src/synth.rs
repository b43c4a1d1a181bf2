//! Synthetic benchmark generators with planted ground truth. The planted
//! tree gives a known-optimal oracle, which is what the acceptance
//! benchmarks train against since the original corpus is not shipped.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, FeatureSchema, FeatureSpec, FeatureKind, FeatureVector, Label};
use crate::error::{Error, Result};
use crate::tree::{random_tree, DecisionTree};

pub const SYNTH_FEATURES: usize = 26;

fn synth_schema() -> FeatureSchema {
    let names: Vec<String> = (0..SYNTH_FEATURES).map(|i| format!("f{i:02}")).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    FeatureSchema::unit_numeric(&refs).expect("static schema")
}

pub struct SynthOutput {
    pub dataset: Dataset,
    pub planted: DecisionTree,
}

/// Uniform features labeled by a randomly planted tree whose leaves are
/// chosen to hit the requested skip fraction within 2%, then flipped with
/// probability `noise`.
pub fn gen_synth(
    n_rows: usize,
    skip_fraction: f64,
    planted_depth: usize,
    noise: f64,
    seed: u64,
) -> Result<SynthOutput> {
    if !(0.0 < skip_fraction && skip_fraction < 1.0) {
        return Err(Error::Config(format!("skip fraction {skip_fraction} not in (0,1)")));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Config(format!("noise {noise} not in [0,1]")));
    }
    if n_rows < 10 {
        return Err(Error::Config("need at least 10 rows".into()));
    }
    let schema = synth_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<FeatureVector> = (0..n_rows)
        .map(|_| FeatureVector((0..SYNTH_FEATURES).map(|_| rng.random_range(0.0..1.0)).collect()))
        .collect();

    let target = skip_fraction * n_rows as f64;
    let tol = 0.02 * n_rows as f64;
    for _attempt in 0..200 {
        let tree = random_tree(&schema, planted_depth, &mut rng)?;
        let n_leaves = tree.n_nodes() + 1;
        let mut counts = vec![0usize; n_leaves];
        let leaf_of: Vec<usize> = rows.iter().map(|x| tree.leaf_for(x)).collect();
        for &l in &leaf_of {
            counts[l] += 1;
        }
        // greedy subset of leaves closest to the target mass, largest first
        let mut order: Vec<usize> = (0..n_leaves).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(counts[i]));
        let mut chosen = vec![false; n_leaves];
        let mut total = 0usize;
        for &i in &order {
            if counts[i] > 0 && total as f64 + counts[i] as f64 <= target + tol {
                chosen[i] = true;
                total += counts[i];
            }
        }
        if (total as f64 - target).abs() > tol || total == 0 || total == n_rows {
            continue;
        }
        let leaf_labels: Vec<Label> = chosen
            .iter()
            .map(|&c| if c { Label::Skip } else { Label::Build })
            .collect();
        let planted = DecisionTree::new(planted_depth, tree.nodes().to_vec(), leaf_labels)?;

        let labeled: Vec<(FeatureVector, Label)> = rows
            .iter()
            .zip(&leaf_of)
            .map(|(x, &l)| {
                let mut label = planted.leaf_labels()[l];
                if noise > 0.0 && rng.random_bool(noise) {
                    label = match label {
                        Label::Skip => Label::Build,
                        Label::Build => Label::Skip,
                    };
                }
                (x.clone(), label)
            })
            .collect();
        let skip = labeled.iter().filter(|(_, l)| *l == Label::Skip).count();
        if skip == 0 || skip == n_rows {
            continue;
        }
        let dataset = Dataset::new(schema, labeled, "synth")?;
        return Ok(SynthOutput { dataset, planted });
    }
    Err(Error::Config(format!(
        "could not plant a depth-{planted_depth} tree hitting skip fraction {skip_fraction} +/- 2%"
    )))
}

/// Paired corpus for the workflow-feature comparison: labels depend on one
/// commit-level column and on the PBS / fail-rate workflow columns, so the
/// 29-column view is strictly more informative than the 26-column one.
pub fn gen_synth_workflow(n_rows: usize, noise: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut features = synth_schema().features().to_vec();
    features.push(FeatureSpec {
        name: "pbs".into(),
        kind: FeatureKind::Boolean,
        min: 0.0,
        max: 1.0,
    });
    features.push(FeatureSpec {
        name: "fail_rate".into(),
        kind: FeatureKind::Numeric,
        min: 0.0,
        max: 1.0,
    });
    features.push(FeatureSpec {
        name: "avg_exp".into(),
        kind: FeatureKind::Numeric,
        min: 0.0,
        max: 50.0,
    });
    let schema29 = FeatureSchema::new(features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows29 = Vec::with_capacity(n_rows);
    let mut rows26 = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut v: Vec<f64> = (0..SYNTH_FEATURES).map(|_| rng.random_range(0.0..1.0)).collect();
        let pbs = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let fail_rate: f64 = rng.random_range(0.0..1.0);
        let avg_exp: f64 = rng.random_range(0.0..50.0);
        let mut skip = v[0] <= 0.55 && pbs == 1.0 && fail_rate <= 0.6;
        if noise > 0.0 && rng.random_bool(noise) {
            skip = !skip;
        }
        let label = if skip { Label::Skip } else { Label::Build };
        rows26.push((FeatureVector(v.clone()), label));
        v.push(pbs);
        v.push(fail_rate);
        v.push(avg_exp);
        rows29.push((FeatureVector(v), label));
    }
    Ok((
        Dataset::new(schema29, rows29, "synth-wlf")?,
        Dataset::new(synth_schema(), rows26, "synth-clf")?,
    ))
}
