use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Qr};
use crate::rates::{CompositionGroup, FeatureMatrix};
use crate::scalar::Scalar;

/// VIF_j = 1 / (1 - R²_j), with R²_j from regressing column j on the other
/// columns plus an intercept. Exact collinearity yields `+∞`.
pub fn vif<T: Scalar>(x: &Matrix<T>) -> Result<Vec<T>> {
    let (n, p) = (x.nrows(), x.ncols());
    if p < 2 {
        return Err(Error::Parameter("VIF needs at least 2 columns".into()));
    }
    if n <= p + 1 {
        return Err(Error::Parameter(format!(
            "VIF needs more rows than columns + 1 (n = {n}, columns = {p})"
        )));
    }
    let infinite_below = T::epsilon() * T::of(100.0);
    let out = (0..p)
        .map(|j| {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let design = x.select_columns(&others).with_intercept();
            let y = x.column(j);
            let beta = Qr::new(&design).solve_least_squares(&y);
            let fitted = design.matvec(&beta);
            let my = y.iter().copied().sum::<T>() / T::of_usize(n);
            let tss: T = y.iter().map(|&v| (v - my) * (v - my)).sum();
            let rss: T = y
                .iter()
                .zip(&fitted)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if tss <= T::zero() || rss <= infinite_below * tss {
                T::infinity()
            } else {
                // 1/(1-R²) = TSS/RSS
                tss / rss
            }
        })
        .collect();
    Ok(out)
}

/// VIF per named column of a feature matrix.
pub fn vif_features(features: &FeatureMatrix) -> Result<BTreeMap<String, f64>> {
    let values = vif(&features.values)?;
    Ok(features.names().into_iter().zip(values).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VifOptions {
    pub threshold: f64,
    pub composition_groups: Vec<CompositionGroup>,
    /// Variables removed by judgment after the composition stage.
    pub manual_drops: Vec<String>,
}

impl Default for VifOptions {
    fn default() -> Self {
        Self {
            threshold: 5.0,
            composition_groups: Vec::new(),
            manual_drops: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    Composition,
    Manual,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifRemoval {
    /// Round whose VIF values motivated the removal.
    pub round: usize,
    pub variable: String,
    pub vif: f64,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifRound {
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifReport {
    pub threshold: f64,
    pub rounds: Vec<VifRound>,
    pub removals: Vec<VifRemoval>,
    pub retained: Vec<String>,
}

impl VifReport {
    pub fn final_round(&self) -> &VifRound {
        self.rounds.last().expect("report has at least one round")
    }
}

/// Multicollinearity screening.
///
/// 1. Drop each composition group's reference variable (shares summing to a
///    constant are exactly collinear).
/// 2. Drop any configured manual removals.
/// 3. Repeatedly drop the single variable with the largest VIF while that VIF
///    is at least `threshold`; ties go to the lexicographically smallest name.
///
/// A round of VIF values is recorded at the start and after every stage that
/// removed something.
pub fn vif_prune(features: &FeatureMatrix, opts: &VifOptions) -> Result<VifReport> {
    if !(opts.threshold > 1.0) {
        return Err(Error::Parameter(format!(
            "VIF threshold must exceed 1, got {}",
            opts.threshold
        )));
    }
    let mut current = features.names();
    let mut rounds = Vec::new();
    let mut removals = Vec::new();

    let evaluate = |names: &[String]| -> Result<BTreeMap<String, f64>> {
        if names.len() < 2 {
            return Err(Error::Degenerate(format!(
                "VIF screening left {} variable(s); need at least 2",
                names.len()
            )));
        }
        vif_features(&features.select(names)?)
    };

    rounds.push(VifRound {
        values: evaluate(&current)?,
    });

    let staged: [(RemovalReason, Vec<String>); 2] = [
        (
            RemovalReason::Composition,
            opts.composition_groups
                .iter()
                .map(|g| g.reference.clone())
                .collect(),
        ),
        (RemovalReason::Manual, opts.manual_drops.clone()),
    ];
    for (reason, drops) in staged {
        let round = rounds.len() - 1;
        let mut any = false;
        for d in drops {
            if let Some(pos) = current.iter().position(|c| *c == d) {
                let v = rounds[round].values[&d];
                current.remove(pos);
                removals.push(VifRemoval {
                    round,
                    variable: d,
                    vif: v,
                    reason,
                });
                any = true;
            }
        }
        if any {
            rounds.push(VifRound {
                values: evaluate(&current)?,
            });
        }
    }

    loop {
        let round = rounds.len() - 1;
        // BTreeMap iterates by name, so the first maximum wins ties.
        let worst = rounds[round]
            .values
            .iter()
            .fold(None::<(&String, f64)>, |best, (k, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((k, v)),
            });
        let Some((name, v)) = worst else { break };
        if v < opts.threshold {
            break;
        }
        let name = name.clone();
        current.retain(|c| *c != name);
        removals.push(VifRemoval {
            round,
            variable: name,
            vif: v,
            reason: RemovalReason::Threshold,
        });
        rounds.push(VifRound {
            values: evaluate(&current)?,
        });
    }

    Ok(VifReport {
        threshold: opts.threshold,
        rounds,
        removals,
        retained: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{Category, FeatureColumn};
    use rand::Rng;

    fn fm(cols: Vec<Vec<f64>>, names: &[&str]) -> FeatureMatrix {
        let n = cols[0].len();
        FeatureMatrix::from_raw(
            (0..n).map(|i| format!("r{i:03}")).collect(),
            names
                .iter()
                .map(|s| FeatureColumn {
                    name: s.to_string(),
                    category: Category::Race,
                })
                .collect(),
            Matrix::from_columns(&cols),
        )
        .unwrap()
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        let x = Matrix::from_columns(&[
            vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
            vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0],
        ]);
        for v in vif(&x).unwrap() {
            assert!((v - 1.0_f64).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn exact_collinearity_is_infinite() {
        let a: Vec<f64> = (0..10).map(|i| (i * i % 7) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let v = vif(&Matrix::from_columns(&[a, b])).unwrap();
        assert!(v.iter().all(|x| x.is_infinite()));
    }

    #[test]
    fn too_few_rows() {
        let x = Matrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]]);
        assert!(vif(&x).is_err());
    }

    #[test]
    fn composition_reference_dropped_first() {
        let mut rng = crate::rng::rng_from(9);
        let mut cols = vec![Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..60 {
            let a: f64 = rng.random_range(0.1..1.0);
            let b: f64 = rng.random_range(0.1..1.0);
            let c: f64 = rng.random_range(0.1..1.0);
            let s = a + b + c;
            cols[0].push(a / s);
            cols[1].push(b / s);
            cols[2].push(c / s);
            cols[3].push(rng.random_range(0.0..1.0));
        }
        let f = fm(cols, &["share_a", "share_b", "share_c", "other"]);
        let opts = VifOptions {
            composition_groups: vec![CompositionGroup {
                members: vec!["share_a".into(), "share_b".into(), "share_c".into()],
                reference: "share_c".into(),
            }],
            ..Default::default()
        };
        let rep = vif_prune(&f, &opts).unwrap();
        assert!(rep.rounds[0].values["share_a"] > 1e6);
        assert_eq!(rep.removals[0].variable, "share_c");
        assert_eq!(rep.removals[0].reason, RemovalReason::Composition);
        assert!(rep.rounds[1].values.values().all(|v| v.is_finite()));
        assert!(rep.final_round().values.values().all(|&v| v < 5.0));
    }

    #[test]
    fn nothing_to_remove_gives_one_round() {
        let mut rng = crate::rng::rng_from(4);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..40).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let rep = vif_prune(&fm(cols, &["a", "b", "c"]), &VifOptions::default()).unwrap();
        assert_eq!(rep.rounds.len(), 1);
        assert!(rep.removals.is_empty());
        assert_eq!(rep.retained, vec!["a", "b", "c"]);
    }

    #[test]
    fn manual_drop_recorded() {
        let mut rng = crate::rng::rng_from(4);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..40).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let opts = VifOptions {
            manual_drops: vec!["b".into()],
            ..Default::default()
        };
        let rep = vif_prune(&fm(cols, &["a", "b", "c"]), &opts).unwrap();
        assert_eq!(rep.rounds.len(), 2);
        assert_eq!(rep.removals[0].reason, RemovalReason::Manual);
        assert_eq!(rep.retained, vec!["a", "c"]);
    }

    #[test]
    fn rejects_threshold_at_most_one() {
        let cols = vec![vec![1.0, 2.0, 3.0, 5.0], vec![2.0, 1.0, 4.0, 3.0]];
        let opts = VifOptions {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(vif_prune(&fm(cols, &["a", "b"]), &opts).is_err());
    }
}
