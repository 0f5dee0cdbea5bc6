//! Entropy-criterion decision tree over sparse features.
//!
//! Each node samples `max_features` candidate features (default `floor(sqrt(V))`)
//! and keeps drawing past that budget only while none of the drawn features
//! varies within the node. Thresholds are midpoints between consecutive
//! distinct values, with absent entries counting as 0.0; a sample goes left
//! when its value is `<=` the threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_counts, check_training_input, ClassIndex, ModelError};
use crate::features::SparseVector;
use crate::labeling::EpidemicClass;

pub const DEFAULT_MAX_DEPTH: usize = 150;

/// Gains at or below this are treated as zero.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    /// `None` means `floor(sqrt(V))`, at least 1.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for TreeHyperparams {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Index into the model's class list.
        class: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub classes: Vec<EpidemicClass>,
    pub dim: usize,
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub hyperparams: TreeHyperparams,
}

/// Shannon entropy in bits of a class-count histogram.
pub fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Parent entropy minus the size-weighted child entropies.
pub fn information_gain(parent: &[usize], left: &[usize], right: &[usize]) -> f64 {
    let n: usize = parent.iter().sum();
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    if n == 0 {
        return 0.0;
    }
    entropy(parent)
        - (nl as f64 / n as f64) * entropy(left)
        - (nr as f64 / n as f64) * entropy(right)
}

impl TreeModel {
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left).max(walk(nodes, right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Node indices visited from the root to the leaf `x` lands in.
    pub fn path(&self, x: &SparseVector) -> Result<Vec<usize>, ModelError> {
        if x.dim != self.dim {
            return Err(ModelError::Shape {
                expected: self.dim,
                found: x.dim,
            });
        }
        let mut at = 0;
        let mut path = vec![0];
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[at]
        {
            at = if x.get(feature) <= threshold {
                left
            } else {
                right
            };
            path.push(at);
        }
        Ok(path)
    }

    pub fn predict_one(&self, x: &SparseVector) -> Result<EpidemicClass, ModelError> {
        let leaf = *self.path(x)?.last().expect("path is never empty");
        match self.nodes[leaf] {
            TreeNode::Leaf { class } => Ok(self.classes[class]),
            TreeNode::Split { .. } => unreachable!("paths end at leaves"),
        }
    }

    /// Checks the structural invariants: every split's children exist, every
    /// node but the root has exactly one parent, leaves carry a valid class.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Corrupt(msg));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                TreeNode::Leaf { class } if class >= self.classes.len() => {
                    return bad(format!("leaf {i} has class index {class}"))
                }
                TreeNode::Leaf { .. } => {}
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= self.dim || !threshold.is_finite() {
                        return bad(format!("split {i} is malformed"));
                    }
                    for child in [left, right] {
                        if child == 0 || child >= self.nodes.len() {
                            return bad(format!("split {i} points at {child}"));
                        }
                        parents[child] += 1;
                    }
                }
            }
        }
        if parents[1..].iter().any(|&p| p != 1) {
            return bad("nodes are not a tree".into());
        }
        if self.depth() > self.hyperparams.max_depth {
            return bad("tree exceeds max_depth".into());
        }
        Ok(())
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    x: &'a [SparseVector],
    y: Vec<usize>,
    n_classes: usize,
    dim: usize,
    max_features: usize,
    rng: ChaCha8Rng,
    /// Reusable feature permutation for partial Fisher-Yates draws.
    perm: Vec<usize>,
    present_stamp: Vec<u32>,
    candidate_slot: Vec<usize>,
    candidate_stamp: Vec<u32>,
    stamp: u32,
}

impl Builder<'_> {
    fn class_counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &s in samples {
            counts[self.y[s]] += 1;
        }
        counts
    }

    fn draw_candidates(&mut self, samples: &[usize]) -> Vec<usize> {
        self.stamp += 1;
        let stamp = self.stamp;
        let mut n_present = 0;
        for &s in samples {
            for &j in &self.x[s].indices {
                if self.present_stamp[j] != stamp {
                    self.present_stamp[j] = stamp;
                    n_present += 1;
                }
            }
        }
        let mut candidates = Vec::new();
        if n_present == 0 {
            return candidates;
        }
        let mut drawn = 0;
        while drawn < self.dim && (drawn < self.max_features || candidates.is_empty()) {
            let r = self.rng.gen_range(drawn..self.dim);
            self.perm.swap(drawn, r);
            let f = self.perm[drawn];
            drawn += 1;
            if self.present_stamp[f] == stamp {
                candidates.push(f);
            }
        }
        candidates
    }

    fn best_split(&mut self, samples: &[usize], parent: &[usize]) -> Option<Candidate> {
        let candidates = self.draw_candidates(samples);
        if candidates.is_empty() {
            return None;
        }
        let stamp = self.stamp;
        for (slot, &f) in candidates.iter().enumerate() {
            self.candidate_stamp[f] = stamp;
            self.candidate_slot[f] = slot;
        }
        let mut buckets: Vec<Vec<(f64, usize)>> = vec![Vec::new(); candidates.len()];
        for &s in samples {
            let row = &self.x[s];
            for (j, v) in row.iter() {
                if self.candidate_stamp[j] == stamp {
                    buckets[self.candidate_slot[j]].push((v, self.y[s]));
                }
            }
        }

        let mut best: Option<Candidate> = None;
        for (bucket, &feature) in buckets.iter_mut().zip(&candidates) {
            let mut zeros = parent.to_vec();
            for &(_, c) in bucket.iter() {
                zeros[c] -= 1;
            }
            let n_zero: usize = zeros.iter().sum();
            bucket.sort_by(|a, b| a.0.total_cmp(&b.0));
            let split_at = bucket.partition_point(|&(v, _)| v < 0.0);
            // Ascending value sequence with the zero group in place.
            let n_classes = self.n_classes;
            let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
            let push =
                |groups: &mut Vec<(f64, Vec<usize>)>, v: f64, c: usize, k: usize| match groups
                    .last_mut()
                {
                    Some((last, counts)) if *last == v => counts[c] += k,
                    _ => {
                        let mut counts = vec![0; n_classes];
                        counts[c] += k;
                        groups.push((v, counts));
                    }
                };
            for &(v, c) in &bucket[..split_at] {
                push(&mut groups, v, c, 1);
            }
            if n_zero > 0 {
                for (c, &k) in zeros.iter().enumerate() {
                    if k > 0 {
                        push(&mut groups, 0.0, c, k);
                    }
                }
            }
            for &(v, c) in &bucket[split_at..] {
                push(&mut groups, v, c, 1);
            }

            let mut left = vec![0; self.n_classes];
            for w in 0..groups.len().saturating_sub(1) {
                for (l, k) in left.iter_mut().zip(&groups[w].1) {
                    *l += k;
                }
                let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                let gain = information_gain(parent, &left, &right);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let threshold = groups[w].0 / 2.0 + groups[w + 1].0 / 2.0;
                    best = Some(Candidate {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > MIN_GAIN)
    }
}

/// Greedy top-down induction with the entropy criterion.
pub fn train_decision_tree(
    x: &[SparseVector],
    y: &[EpidemicClass],
    hp: &TreeHyperparams,
) -> Result<TreeModel, ModelError> {
    let dim = check_training_input(x, y)?;
    let index = ClassIndex::from_labels(y)?;
    if hp.max_features == Some(0) {
        return Err(ModelError::Hyperparams(
            "max_features must be positive".into(),
        ));
    }
    let max_features = hp
        .max_features
        .unwrap_or_else(|| ((dim as f64).sqrt().floor() as usize).max(1))
        .min(dim);
    let mut b = Builder {
        x,
        y: index.encode(y),
        n_classes: index.len(),
        dim,
        max_features,
        rng: ChaCha8Rng::seed_from_u64(hp.seed),
        perm: (0..dim).collect(),
        present_stamp: vec![0; dim],
        candidate_slot: vec![0; dim],
        candidate_stamp: vec![0; dim],
        stamp: 0,
    };

    let mut nodes = vec![TreeNode::Leaf { class: 0 }];
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, (0..x.len()).collect(), 0)];
    while let Some((id, samples, depth)) = stack.pop() {
        let counts = b.class_counts(&samples);
        let majority = argmax_counts(&counts);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || depth >= hp.max_depth {
            None
        } else {
            b.best_split(&samples, &counts)
        };
        let Some(split) = split else {
            nodes[id] = TreeNode::Leaf { class: majority };
            continue;
        };
        let (left_s, right_s): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&s| x[s].get(split.feature) <= split.threshold);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(TreeNode::Leaf { class: majority });
        nodes.push(TreeNode::Leaf { class: majority });
        nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        // Right first so the left subtree is numbered before it.
        stack.push((right, right_s, depth + 1));
        stack.push((left, left_s, depth + 1));
    }

    Ok(TreeModel {
        classes: index.classes().to_vec(),
        dim,
        nodes,
        hyperparams: *hp,
    })
}
