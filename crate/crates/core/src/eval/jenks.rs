use crate::error::{Error, Result};

/// Jenks natural breaks (Fisher's exact optimal partition of sorted data).
///
/// Returns `classes + 1` edges from the minimum to the maximum. With fewer
/// distinct values than classes, the distinct values themselves are returned.
pub fn jenks_breaks(values: &[f64], classes: usize) -> Result<Vec<f64>> {
    if classes == 0 {
        return Err(Error::Parameter("need at least one class".into()));
    }
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::Degenerate("no finite values to classify".into()));
    }
    v.sort_by(f64::total_cmp);
    let mut distinct = v.clone();
    distinct.dedup();
    if distinct.len() <= classes {
        return Ok(distinct);
    }

    let n = v.len();
    // Prefix sums for O(1) within-class sum of squared deviations.
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + v[i];
        s2[i + 1] = s2[i] + v[i] * v[i];
    }
    let ssd = |a: usize, b: usize| {
        // rows a..b (exclusive)
        let m = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / m).max(0.0)
    };
    // cost[c][i]: best total for the first i values in c+1 classes.
    let mut cost = vec![vec![f64::INFINITY; n + 1]; classes];
    let mut start = vec![vec![0usize; n + 1]; classes];
    for i in 1..=n {
        cost[0][i] = ssd(0, i);
    }
    for c in 1..classes {
        for i in (c + 1)..=n {
            for j in c..i {
                let t = cost[c - 1][j] + ssd(j, i);
                if t < cost[c][i] {
                    cost[c][i] = t;
                    start[c][i] = j;
                }
            }
        }
    }
    let mut edges = vec![v[n - 1]];
    let mut end = n;
    for c in (1..classes).rev() {
        let j = start[c][end];
        edges.push(v[j - 1]);
        end = j;
    }
    edges.push(v[0]);
    edges.reverse();
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clusters() {
        let v = [1.0, 1.1, 1.2, 5.0, 5.1, 9.0, 9.2, 9.1];
        assert_eq!(jenks_breaks(&v, 3).unwrap(), vec![1.0, 1.2, 5.1, 9.2]);
    }

    #[test]
    fn few_distinct_values() {
        assert_eq!(jenks_breaks(&[2.0, 1.0, 2.0], 6).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn six_classes_monotone() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let e = jenks_breaks(&v, 6).unwrap();
        assert_eq!(e.len(), 7);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
    }
}
