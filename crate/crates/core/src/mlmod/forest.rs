use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{r2_score, FoldSpec};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Rule for the number of candidate features per split, given `S` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MTry {
    All,
    Sqrt,
    Log2,
    Half,
    Third,
}

impl MTry {
    /// Grid order used for tie-breaking.
    pub const ALL: [MTry; 5] = [MTry::All, MTry::Sqrt, MTry::Log2, MTry::Half, MTry::Third];

    /// Resolved count, floored and clamped to `[1, s]`.
    pub fn resolve(self, s: usize) -> usize {
        let sf = s as f64;
        let raw = match self {
            MTry::All => sf,
            MTry::Sqrt => sf.sqrt(),
            MTry::Log2 => sf.log2(),
            MTry::Half => sf / 2.0,
            MTry::Third => sf / 3.0,
        };
        (raw.floor() as usize).clamp(1, s.max(1))
    }

    pub fn label(self) -> &'static str {
        match self {
            MTry::All => "S",
            MTry::Sqrt => "sqrt(S)",
            MTry::Log2 => "log2(S)",
            MTry::Half => "S/2",
            MTry::Third => "S/3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfConfig {
    pub n_tree: usize,
    pub m_try: MTry,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Draw a bootstrap sample per tree; when false every tree sees all rows.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            n_tree: 80,
            m_try: MTry::Sqrt,
            min_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node<T> {
    Leaf {
        value: T,
    },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

/// Binary regression tree; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
    pub seed: u64,
}

impl<T: Scalar> Tree<T> {
    pub fn predict_row(&self, row: &[T]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel<T> {
    pub config: RfConfig,
    pub n_features: usize,
    pub trees: Vec<Tree<T>>,
    /// Normalized impurity-decrease importance; all zeros when no tree split.
    pub importance: Vec<f64>,
    pub importance_defined: bool,
}

struct Grower<'a, T> {
    x: &'a Matrix<T>,
    y: &'a [T],
    m_try: usize,
    min_leaf: usize,
    max_depth: usize,
    rng: crate::rng::Rng,
    nodes: Vec<Node<T>>,
    /// Sum of squared-error decrease per feature.
    gain: Vec<f64>,
}

struct Best<T> {
    feature: usize,
    threshold: T,
    score: T,
    cut: usize,
}

impl<T: Scalar> Grower<'_, T> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let s: T = rows.iter().map(|&i| self.y[i]).sum();
        self.nodes.push(Node::Leaf {
            value: s / T::of_usize(rows.len()),
        });
        self.nodes.len() - 1
    }

    /// Best threshold on one feature. Score is `S_L²/n_L + S_R²/n_R`, which
    /// differs from minus the children's SSE by a node constant.
    fn scan(&self, rows: &mut [usize], f: usize, total: T) -> Option<Best<T>> {
        let x = self.x;
        rows.sort_by(|&a, &b| x[(a, f)].partial_cmp(&x[(b, f)]).unwrap().then(a.cmp(&b)));
        let n = rows.len();
        let mut left = T::zero();
        let mut best: Option<Best<T>> = None;
        for cut in 1..n {
            left += self.y[rows[cut - 1]];
            if cut < self.min_leaf || n - cut < self.min_leaf {
                continue;
            }
            let (lo, hi) = (x[(rows[cut - 1], f)], x[(rows[cut], f)]);
            if lo == hi {
                continue;
            }
            let right = total - left;
            let score = left * left / T::of_usize(cut) + right * right / T::of_usize(n - cut);
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mut threshold = (lo + hi) / T::of(2.0);
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Best {
                    feature: f,
                    threshold,
                    score,
                    cut,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let n = rows.len();
        let first = self.y[rows[0]];
        if n < 2 * self.min_leaf
            || depth >= self.max_depth
            || rows.iter().all(|&i| self.y[i] == first)
        {
            return self.leaf(rows);
        }
        let total: T = rows.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / T::of_usize(n);

        // Partial Fisher-Yates over feature indices. The first m_try are
        // candidates; if none of them can split, keep drawing.
        let s = self.x.ncols();
        let mut order: Vec<usize> = (0..s).collect();
        let mut best: Option<Best<T>> = None;
        let mut drawn = 0;
        while drawn < s && (drawn < self.m_try || best.is_none()) {
            let batch_end = if drawn < self.m_try {
                self.m_try.min(s)
            } else {
                drawn + 1
            };
            for k in drawn..batch_end {
                let j = self.rng.random_range(k..s);
                order.swap(k, j);
            }
            let mut batch: Vec<usize> = order[drawn..batch_end].to_vec();
            batch.sort_unstable();
            for f in batch {
                if let Some(b) = self.scan(rows, f, total) {
                    let better = match &best {
                        None => true,
                        Some(cur) => {
                            b.score > cur.score || (b.score == cur.score && b.feature < cur.feature)
                        }
                    };
                    if better {
                        best = Some(b);
                    }
                }
            }
            drawn = batch_end;
        }
        let Some(b) = best.filter(|b| b.score > parent) else {
            return self.leaf(rows);
        };

        self.gain[b.feature] += (b.score - parent).as_f64();
        let x = self.x;
        rows.sort_by(|&a, &c| {
            x[(a, b.feature)]
                .partial_cmp(&x[(c, b.feature)])
                .unwrap()
                .then(a.cmp(&c))
        });
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: T::zero() });
        let (l, r) = rows.split_at_mut(b.cut);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split {
            feature: b.feature,
            threshold: b.threshold,
            left,
            right,
        };
        at
    }
}

fn train_tree<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    config: &RfConfig,
    index: usize,
) -> (Tree<T>, Vec<f64>) {
    let n = x.nrows();
    let seed = crate::rng::derive_seed(config.seed, index as u64);
    let mut rng = crate::rng::rng_from(seed);
    let mut rows: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut g = Grower {
        x,
        y,
        m_try: config.m_try.resolve(x.ncols()),
        min_leaf: config.min_leaf.max(1),
        max_depth: config.max_depth.unwrap_or(usize::MAX),
        rng,
        nodes: Vec::new(),
        gain: vec![0.0; x.ncols()],
    };
    g.grow(&mut rows, 0);
    let gain = g.gain.iter().map(|v| v / n as f64).collect();
    (
        Tree {
            nodes: g.nodes,
            seed,
        },
        gain,
    )
}

fn check_inputs<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Parameter(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < 2 || x.ncols() == 0 {
        return Err(Error::Parameter(
            "forest needs at least 2 rows and 1 feature".into(),
        ));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("forest inputs must be finite".into()));
    }
    Ok(())
}

/// Trains a random forest. Tree `t` draws from the stream
/// `(config.seed, t)`, so any prefix of a forest is itself the forest with
/// that many trees.
pub fn rf_train<T: Scalar>(x: &Matrix<T>, y: &[T], config: &RfConfig) -> Result<RfModel<T>> {
    check_inputs(x, y)?;
    if config.n_tree == 0 {
        return Err(Error::Parameter("n_tree must be at least 1".into()));
    }
    let grown: Vec<(Tree<T>, Vec<f64>)> = (0..config.n_tree)
        .into_par_iter()
        .map(|t| train_tree(x, y, config, t))
        .collect();
    let s = x.ncols();
    let mut importance = vec![0.0; s];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, gain) in grown {
        for (acc, g) in importance.iter_mut().zip(gain) {
            *acc += g;
        }
        trees.push(tree);
    }
    let total: f64 = importance.iter().sum();
    let importance_defined = total > 0.0;
    if importance_defined {
        importance.iter_mut().for_each(|v| *v /= total);
    } else {
        log::warn!("no tree made a split; feature importance is undefined");
    }
    Ok(RfModel {
        config: config.clone(),
        n_features: s,
        trees,
        importance,
        importance_defined,
    })
}

impl<T: Scalar> RfModel<T> {
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        self.predict_prefix(x, self.trees.len())
    }

    /// Prediction from the first `n_tree` trees only.
    pub fn predict_prefix(&self, x: &Matrix<T>, n_tree: usize) -> Result<Vec<T>> {
        if x.ncols() != self.n_features {
            return Err(Error::Parameter(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        if n_tree == 0 || n_tree > self.trees.len() {
            return Err(Error::Parameter(format!(
                "tree count {n_tree} outside 1..={}",
                self.trees.len()
            )));
        }
        let k = T::of_usize(n_tree);
        Ok((0..x.nrows())
            .map(|i| {
                let row = x.row(i);
                self.trees[..n_tree]
                    .iter()
                    .map(|t| t.predict_row(row))
                    .sum::<T>()
                    / k
            })
            .collect())
    }
}

pub fn rf_predict<T: Scalar>(model: &RfModel<T>, x: &Matrix<T>) -> Result<Vec<T>> {
    model.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub n_tree: usize,
    pub m_try: MTry,
    pub mean_r2: f64,
    pub fold_r2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearch {
    pub best: RfConfig,
    pub best_r2: f64,
    pub cells: Vec<GridCell>,
}

/// The tree-count grid 10, 20, …, 200.
pub fn default_n_tree_grid() -> Vec<usize> {
    (1..=20).map(|i| i * 10).collect()
}

/// Grid search over `(n_tree, m_try)` by mean held-out R² on `folds`.
///
/// For each `(m_try, fold)` one forest of `max(n_trees)` trees is trained and
/// every grid size is scored from its prefix, which gives exactly the forest a
/// separate training run would. Ties go to the smaller tree count, then the
/// earlier rule in `m_tries`.
pub fn rf_grid_search<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    n_trees: &[usize],
    m_tries: &[MTry],
    folds: &FoldSpec,
    base: &RfConfig,
) -> Result<GridSearch> {
    check_inputs(x, y)?;
    if n_trees.is_empty() || m_tries.is_empty() {
        return Err(Error::Parameter("grid search needs non-empty grids".into()));
    }
    if n_trees.contains(&0) {
        return Err(Error::Parameter(
            "n_tree grid values must be at least 1".into(),
        ));
    }
    if folds.n != x.nrows() {
        return Err(Error::Parameter(format!(
            "fold spec covers {} rows, data has {}",
            folds.n,
            x.nrows()
        )));
    }
    let max_trees = *n_trees.iter().max().expect("non-empty");
    let jobs: Vec<(usize, usize)> = (0..m_tries.len())
        .flat_map(|m| (0..folds.k).map(move |f| (m, f)))
        .collect();
    // scores[m][f][t] = held-out R² of the first n_trees[t] trees.
    let flat: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(m, f)| -> Result<Vec<f64>> {
            let (train, test) = folds.split(f);
            let xt = x.select_rows(&train);
            let yt: Vec<T> = train.iter().map(|&i| y[i]).collect();
            let cfg = RfConfig {
                n_tree: max_trees,
                m_try: m_tries[m],
                ..base.clone()
            };
            let model = rf_train(&xt, &yt, &cfg)?;
            let xv = x.select_rows(&test);
            let yv: Vec<T> = test.iter().map(|&i| y[i]).collect();
            n_trees
                .iter()
                .map(|&nt| Ok(r2_score(&yv, &model.predict_prefix(&xv, nt)?).as_f64()))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(n_trees.len() * m_tries.len());
    for (m, &rule) in m_tries.iter().enumerate() {
        for (t, &nt) in n_trees.iter().enumerate() {
            let fold_r2: Vec<f64> = (0..folds.k).map(|f| flat[m * folds.k + f][t]).collect();
            let mean_r2 = fold_r2.iter().sum::<f64>() / folds.k as f64;
            cells.push(GridCell {
                n_tree: nt,
                m_try: rule,
                mean_r2,
                fold_r2,
            });
        }
    }
    let rank = |c: &GridCell| {
        (
            c.n_tree,
            m_tries
                .iter()
                .position(|&r| r == c.m_try)
                .expect("rule in grid"),
        )
    };
    let best = cells
        .iter()
        .fold(None::<&GridCell>, |b, c| match b {
            Some(cur) if cur.mean_r2 > c.mean_r2 => b,
            Some(cur) if cur.mean_r2 == c.mean_r2 && rank(cur) <= rank(c) => b,
            _ => Some(c),
        })
        .expect("non-empty grid");
    Ok(GridSearch {
        best: RfConfig {
            n_tree: best.n_tree,
            m_try: best.m_try,
            ..base.clone()
        },
        best_r2: best.mean_r2,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::kfold_split;

    fn fixture(seed: u64, n: usize) -> (Matrix<f64>, Vec<f64>) {
        let mut rng = crate::rng::rng_from(seed);
        let x = Matrix::from_fn(n, 5, |_, _| rng.random_range(0.0..1.0));
        let y = (0..n)
            .map(|i| if x[(i, 3)] > 0.5 { 10.0 } else { 0.0 } + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn m_try_rules() {
        assert_eq!(MTry::Sqrt.resolve(19), 4);
        assert_eq!(MTry::Log2.resolve(19), 4);
        assert_eq!(MTry::Half.resolve(19), 9);
        assert_eq!(MTry::Third.resolve(19), 6);
        assert_eq!(MTry::All.resolve(19), 19);
        assert_eq!(MTry::Third.resolve(2), 1);
    }

    #[test]
    fn dominant_feature() {
        let (x, y) = fixture(1, 300);
        let m = rf_train(&x, &y, &RfConfig::default()).unwrap();
        assert!(m.importance[3] > 0.8, "{:?}", m.importance);
        assert!((m.importance.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_tree_memorizes() {
        let (x, y) = fixture(2, 60);
        let cfg = RfConfig {
            n_tree: 1,
            bootstrap: false,
            m_try: MTry::Third,
            ..Default::default()
        };
        let m = rf_train(&x, &y, &cfg).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = fixture(3, 80);
        let cfg = RfConfig {
            n_tree: 10,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(
            rf_train(&x, &y, &cfg).unwrap(),
            rf_train(&x, &y, &cfg).unwrap()
        );
    }

    #[test]
    fn constant_target_flags_importance() {
        let (x, _) = fixture(4, 30);
        let m = rf_train(&x, &[7.0; 30], &RfConfig::default()).unwrap();
        assert!(!m.importance_defined);
        assert!(m.importance.iter().all(|&v| v == 0.0));
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn predictions_bounded_and_averaged() {
        let (x, y) = fixture(5, 100);
        let m = rf_train(
            &x,
            &y,
            &RfConfig {
                n_tree: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let (lo, hi) = y
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(m.predict(&x).unwrap().iter().all(|&p| p >= lo && p <= hi));
        let two = RfModel {
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf { value: 4.0 }],
                    seed: 0,
                },
                Tree {
                    nodes: vec![Node::Leaf { value: 6.0 }],
                    seed: 1,
                },
            ],
            ..m.clone()
        };
        assert_eq!(two.predict(&x).unwrap()[0], 5.0);
        assert!(m.predict(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn grid_matches_independent_cells() {
        let (x, y) = fixture(6, 60);
        let folds = kfold_split(60, 3, 1).unwrap();
        let base = RfConfig {
            seed: 3,
            ..Default::default()
        };
        let grid =
            rf_grid_search(&x, &y, &[2, 5], &[MTry::All, MTry::Sqrt], &folds, &base).unwrap();
        assert_eq!(grid.cells.len(), 4);
        for c in &grid.cells {
            let cfg = RfConfig {
                n_tree: c.n_tree,
                m_try: c.m_try,
                ..base.clone()
            };
            let mut total = 0.0;
            for f in 0..3 {
                let (tr, te) = folds.split(f);
                let m = rf_train(
                    &x.select_rows(&tr),
                    &tr.iter().map(|&i| y[i]).collect::<Vec<_>>(),
                    &cfg,
                )
                .unwrap();
                let yv: Vec<f64> = te.iter().map(|&i| y[i]).collect();
                total += r2_score(&yv, &m.predict(&x.select_rows(&te)).unwrap());
            }
            assert!((total / 3.0 - c.mean_r2).abs() < 1e-12);
        }
        let single = rf_grid_search(&x, &y, &[5], &[MTry::Half], &folds, &base).unwrap();
        assert_eq!((single.best.n_tree, single.best.m_try), (5, MTry::Half));
    }
}
