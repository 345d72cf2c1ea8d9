//! Maximum-weight perfect assignment (Hungarian method with potentials).

/// Solves `max sum_i weight(i, assign[i])` over permutations, where
/// `weight` returns `None` for forbidden pairs. Returns `None` when no
/// permutation avoids every forbidden pair.
///
/// `assign[row] = column`.
pub fn max_weight_assignment(
    n: usize,
    weight: impl Fn(usize, usize) -> Option<f64>,
) -> Option<Vec<usize>> {
    if n == 0 {
        return Some(Vec::new());
    }
    let mut w = vec![None; n * n];
    let mut max_abs = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = weight(i, j);
            if let Some(v) = v {
                max_abs = max_abs.max(v.abs());
            }
            w[i * n + j] = v;
        }
    }
    // Forbidden pairs get a cost no optimal allowed assignment can beat.
    let big = (max_abs + 1.0) * (2 * n + 1) as f64;
    let cost = |i: usize, j: usize| match w[i * n + j] {
        Some(v) => -v,
        None => big,
    };

    // 1-indexed potentials formulation; column 0 is a sentinel.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    if (0..n).any(|i| w[i * n + assign[i]].is_none()) {
        return None;
    }
    Some(assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn hand_case() {
        let m = [[4.0, 3.0, 5.0], [3.0, 5.0, 9.0], [4.0, 1.0, 4.0]];
        let a = max_weight_assignment(3, |i, j| Some(m[i][j])).unwrap();
        let total: f64 = a.iter().enumerate().map(|(i, &j)| m[i][j]).sum();
        assert_eq!(a, vec![1, 2, 0]);
        assert_eq!(total, 16.0);
    }

    #[test]
    fn matches_brute_force_with_forbidden_pairs() {
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 33) as f64 / (1u64 << 31) as f64
        };
        for n in 1..=6 {
            for _ in 0..30 {
                let m: Vec<f64> = (0..n * n).map(|_| next()).collect();
                let allowed: Vec<bool> =
                    (0..n * n).map(|k| k / n == k % n || next() > 0.4).collect();
                let wf = |i: usize, j: usize| allowed[i * n + j].then(|| m[i * n + j]);
                let a = max_weight_assignment(n, wf).unwrap();
                let got: f64 = a.iter().enumerate().map(|(i, &j)| m[i * n + j]).sum();
                let best = permutations(n)
                    .into_iter()
                    .filter(|p| p.iter().enumerate().all(|(i, &j)| allowed[i * n + j]))
                    .map(|p| {
                        p.iter()
                            .enumerate()
                            .map(|(i, &j)| m[i * n + j])
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((got - best).abs() < 1e-9, "n={n} got {got} best {best}");
            }
        }
    }

    #[test]
    fn infeasible_returns_none() {
        // column 0 forbidden for every row
        assert!(max_weight_assignment(2, |_, j| (j != 0).then_some(1.0)).is_none());
    }
}
