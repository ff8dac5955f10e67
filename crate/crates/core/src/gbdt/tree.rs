//! Least-squares regression trees grown by exact greedy split search.

use serde::{Deserialize, Serialize};

use super::GbdtError;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 3,
            min_samples_leaf: 5,
        }
    }
}

/// Preorder node. The left child of a split is the next node; `right`
/// indexes the right child.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Rebuilds a tree from a preorder list, validating its shape.
    pub fn from_preorder(nodes: Vec<Node>) -> Result<Self, GbdtError> {
        fn walk(nodes: &[Node], i: usize) -> Result<usize, GbdtError> {
            match nodes.get(i) {
                None => Err(GbdtError::Malformed("truncated node list".into())),
                Some(Node::Leaf { value }) if !value.is_finite() => {
                    Err(GbdtError::Malformed("non-finite leaf".into()))
                }
                Some(Node::Leaf { .. }) => Ok(i + 1),
                Some(Node::Split { right, .. }) => {
                    let after_left = walk(nodes, i + 1)?;
                    if after_left != *right {
                        return Err(GbdtError::Malformed(format!("node {i}: bad right index")));
                    }
                    walk(nodes, after_left)
                }
            }
        }
        if walk(&nodes, 0)? != nodes.len() {
            return Err(GbdtError::Malformed("trailing nodes".into()));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[feature] <= threshold { i + 1 } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> (usize, usize) {
            match nodes[i] {
                Node::Leaf { .. } => (0, i + 1),
                Node::Split { right, .. } => {
                    let (l, _) = go(nodes, i + 1);
                    let (r, end) = go(nodes, right);
                    (1 + l.max(r), end)
                }
            }
        }
        go(&self.nodes, 0).0
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Position in the feature's sorted order: rows `..=pos` go left.
    pos: usize,
}

/// Rows sorted by each feature, reused across boosting stages.
pub(crate) struct SortedColumns {
    order: Vec<Vec<usize>>,
}

impl SortedColumns {
    pub(crate) fn new(x: &Matrix) -> Self {
        let order = (0..x.cols())
            .map(|j| {
                let mut idx: Vec<usize> = (0..x.rows()).collect();
                idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
                idx
            })
            .collect();
        SortedColumns { order }
    }

    fn restricted(&self, member: &[bool]) -> Vec<Vec<usize>> {
        self.order
            .iter()
            .map(|o| o.iter().copied().filter(|&r| member[r]).collect())
            .collect()
    }
}

/// Fits a tree to targets `g` using every row of `x`.
pub fn fit_tree(x: &Matrix, g: &[f64], params: &TreeParams) -> Result<RegressionTree, GbdtError> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    fit_tree_rows(x, g, &rows, &SortedColumns::new(x), params)
}

pub(crate) fn fit_tree_rows(
    x: &Matrix,
    g: &[f64],
    rows: &[usize],
    sorted: &SortedColumns,
    params: &TreeParams,
) -> Result<RegressionTree, GbdtError> {
    if g.len() != x.rows() {
        return Err(GbdtError::LengthMismatch(x.rows(), g.len()));
    }
    if rows.is_empty() {
        return Err(GbdtError::EmptyInput);
    }
    if params.min_samples_leaf == 0 {
        return Err(GbdtError::ConfigInvalid("min_samples_leaf must be ≥ 1".into()));
    }
    let mut member = vec![false; x.rows()];
    for &r in rows {
        member[r] = true;
    }
    let columns = sorted.restricted(&member);
    let mut nodes = Vec::new();
    let mut builder = Builder {
        x,
        g,
        params,
        member,
        nodes: &mut nodes,
    };
    builder.grow(columns, 0);
    Ok(RegressionTree { nodes })
}

struct Builder<'a> {
    x: &'a Matrix,
    g: &'a [f64],
    params: &'a TreeParams,
    member: Vec<bool>,
    nodes: &'a mut Vec<Node>,
}

impl Builder<'_> {
    fn grow(&mut self, columns: Vec<Vec<usize>>, depth: usize) {
        let rows = &columns[0];
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.g[r]).sum();
        let mean = sum / n as f64;
        let split = if depth < self.params.max_depth && n >= 2 * self.params.min_samples_leaf {
            self.best_split(&columns, sum)
        } else {
            None
        };
        let Some(best) = split else {
            self.nodes.push(Node::Leaf { value: mean });
            return;
        };

        let left_rows = &columns[best.feature][..=best.pos];
        for &r in &columns[0] {
            self.member[r] = false;
        }
        for &r in left_rows {
            self.member[r] = true;
        }
        let (left, right): (Vec<Vec<usize>>, Vec<Vec<usize>>) = columns
            .into_iter()
            .map(|col| col.into_iter().partition(|&r| self.member[r]))
            .unzip();

        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            right: 0,
        });
        self.grow(left, depth + 1);
        let right_at = self.nodes.len();
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(right, depth + 1);
    }

    /// Largest reduction in squared error over all (feature, midpoint)
    /// candidates that leave at least `min_samples_leaf` rows per side.
    fn best_split(&self, columns: &[Vec<usize>], sum: f64) -> Option<BestSplit> {
        let n = columns[0].len();
        let min_leaf = self.params.min_samples_leaf;
        let parent = sum * sum / n as f64;
        let sum_sq: f64 = columns[0].iter().map(|&r| self.g[r] * self.g[r]).sum();
        let tolerance = 1e-10 * sum_sq.max(f64::MIN_POSITIVE);
        let mut best: Option<BestSplit> = None;
        for (feature, col) in columns.iter().enumerate() {
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                let r = col[pos];
                left_sum += self.g[r];
                let nl = pos + 1;
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let v = self.x.get(r, feature);
                let next = self.x.get(col[pos + 1], feature);
                if !(v < next) {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
                if gain > tolerance && best.is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (v + next);
                    if !(threshold < next) {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                        pos,
                    });
                }
            }
        }
        best
    }
}
