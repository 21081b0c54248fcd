use super::MetricsError;

/// Row `i` is assigned to column `permutation[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub total: f64,
}

/// Optimal assignment on a square matrix (`scores[row][col]`), maximizing the
/// total when `maximize` is set and minimizing it otherwise.
///
/// Shortest augmenting paths with row/column potentials, `O(K^3)`.
pub fn hungarian(scores: &[Vec<f64>], maximize: bool) -> Result<Assignment, MetricsError> {
    let n = scores.len();
    if scores.iter().any(|r| r.len() != n) || scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidScores);
    }
    if n == 0 {
        return Ok(Assignment { permutation: Vec::new(), total: 0.0 });
    }
    let cost = |i: usize, j: usize| if maximize { -scores[i][j] } else { scores[i][j] };

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[matched_row[j] - 1] = j - 1;
    }
    let total = permutation.iter().enumerate().map(|(i, &j)| scores[i][j]).sum();
    Ok(Assignment { permutation, total })
}

/// Exhaustive search over all `K!` permutations. Reference for small `K`.
pub fn brute_force_assignment(scores: &[Vec<f64>], maximize: bool) -> Assignment {
    fn permute(k: usize, perm: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if k == perm.len() {
            visit(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, visit);
            perm.swap(k, i);
        }
    }
    let n = scores.len();
    let mut best: Option<Assignment> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(0, &mut perm, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| scores[i][j]).sum();
        let better = match &best {
            None => true,
            Some(b) => (maximize && total > b.total) || (!maximize && total < b.total),
        };
        if better {
            best = Some(Assignment { permutation: p.to_vec(), total });
        }
    });
    best.unwrap_or(Assignment { permutation: Vec::new(), total: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        let a = hungarian(&[vec![1.0, 0.0], vec![0.0, 1.0]], true).unwrap();
        assert_eq!((a.permutation, a.total), (vec![0, 1], 2.0));
        let a = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]], true).unwrap();
        assert_eq!((a.permutation, a.total), (vec![1, 0], 4.0));
        let a = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]], false).unwrap();
        assert_eq!(a.total, 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hungarian(&[vec![1.0, f64::NAN], vec![0.0, 1.0]], true).is_err());
        assert!(hungarian(&[vec![1.0, 2.0]], true).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(k in 1usize..7, seed in any::<u64>(), maximize in any::<bool>()) {
            use rand::Rng;
            let mut rng = crate::rng::stream_rng(seed, 0);
            let scores: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let fast = hungarian(&scores, maximize).unwrap();
            let slow = brute_force_assignment(&scores, maximize);
            prop_assert!((fast.total - slow.total).abs() < 1e-9);
            let mut sorted = fast.permutation.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..k).collect::<Vec<_>>());
        }
    }
}
