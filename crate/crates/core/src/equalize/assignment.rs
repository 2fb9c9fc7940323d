//! Rectangular maximum-weight assignment (Hungarian method with potentials).

/// Assigns every row of a `rows × cols` weight matrix (row-major,
/// `rows <= cols`) to a distinct column, maximizing the total weight.
/// Returns the chosen column per row.
///
/// Runs in `O(rows² · cols)`. Integer weights keep the optimum exact.
pub fn max_weight_assignment(weights: &[i64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "need at least as many columns as rows");
    assert_eq!(weights.len(), rows * cols);
    if rows == 0 {
        return Vec::new();
    }
    // minimize cost = -weight; 1-based arrays with a virtual column 0
    let cost = |i: usize, j: usize| -weights[(i - 1) * cols + (j - 1)];
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; rows + 1];
    let mut v = vec![0i64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let mut minv = vec![0i64; cols + 1];
    let mut used = vec![false; cols + 1];

    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}
