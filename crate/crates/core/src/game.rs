//! Finite two-player zero-sum games solved by a dense simplex method.
//!
//! Convention: the row player maximizes and the column player minimizes
//! `pᵀ A q`. The game is shifted to positive payoffs and the player with
//! fewer strategies is put on the constraint side, so the tableau has
//! `min(rows, cols)` rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameSolution {
    /// Midpoint of the certified bracket `[lower, upper]`.
    pub value: f64,
    /// Maximizer's mixed strategy over rows.
    pub row_strategy: Vec<f64>,
    /// Minimizer's mixed strategy over columns.
    pub col_strategy: Vec<f64>,
    /// `min_j (pᵀA)_j`: guaranteed by the row strategy.
    pub lower: f64,
    /// `max_i (A q)_i`: guaranteed by the column strategy.
    pub upper: f64,
    pub duality_gap: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_pivots: usize,
    /// Non-improving pivots tolerated before switching to Bland's rule.
    pub stall_limit: usize,
    /// A bracket wider than this (relative to the payoff range) is a failure.
    pub fail_gap: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_pivots: 100_000,
            stall_limit: 50,
            fail_gap: 1e-6,
        }
    }
}

pub fn solve_matrix_game(a: &DMatrix<f64>) -> Result<GameSolution> {
    solve_matrix_game_with(a, &SimplexOptions::default())
}

pub fn solve_matrix_game_with(a: &DMatrix<f64>, opts: &SimplexOptions) -> Result<GameSolution> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Err(Error::LpFailure("empty payoff matrix".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::LpFailure("payoff matrix has non-finite entries".into()));
    }
    // each bound depends on one strategy only, so keep the best of each
    let (ps, qs, pivots) = if r <= c {
        solve_oriented(a, opts)?
    } else {
        // the minimizer of A is the maximizer of −Aᵀ
        let (q, p, piv) = solve_oriented(&(-a.transpose()), opts)?;
        (p, q, piv)
    };
    let row_bound = |p: &[f64]| {
        (0..c)
            .map(|j| (0..r).map(|i| p[i] * a[(i, j)]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    };
    let col_bound = |q: &[f64]| {
        (0..r)
            .map(|i| (0..c).map(|j| a[(i, j)] * q[j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (p, lower) = ps
        .into_iter()
        .map(|p| {
            let b = row_bound(&p);
            (p, b)
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one candidate");
    let (q, upper) = qs
        .into_iter()
        .map(|q| {
            let b = col_bound(&q);
            (q, b)
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one candidate");
    let gap = upper - lower;
    let range = a.max() - a.min();
    if !(gap <= opts.fail_gap * range.max(1.0)) {
        return Err(Error::LpFailure(format!(
            "duality gap {gap:e} after {pivots} pivots ({r}×{c} game)"
        )));
    }
    Ok(GameSolution {
        value: 0.5 * (lower + upper),
        row_strategy: p,
        col_strategy: q,
        lower,
        upper,
        duality_gap: gap.max(0.0),
        pivots,
    })
}

/// Solves `max 1ᵀy s.t. B'y ≤ 1, y ≥ 0` with `B' = B + shift > 0`, where
/// `B` has no more rows than columns. The primal gives the column strategy
/// and the duals the row strategy. Returns candidate row strategies, candidate
/// column strategies (from the refactored final basis and from the tableau),
/// and the pivot count.
#[allow(clippy::type_complexity)]
fn solve_oriented(b: &DMatrix<f64>, opts: &SimplexOptions) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
    let (m, nv) = b.shape();
    let shift = 1.0 - b.min();
    let width = nv + m + 1;
    // tableau rows: constraints; columns: y (nv), slack (m), rhs
    let mut t = vec![0.0; m * width];
    for i in 0..m {
        let row = &mut t[i * width..(i + 1) * width];
        for j in 0..nv {
            row[j] = b[(i, j)] + shift;
        }
        row[nv + i] = 1.0;
        row[width - 1] = 1.0;
    }
    // reduced costs for maximization; obj[width-1] holds −objective
    let mut obj = vec![0.0; width];
    obj[..nv].fill(1.0);
    let mut basis: Vec<usize> = (nv..nv + m).collect();
    let tol = 1e-12;
    let ptol = 1e-9 * (b.max() + shift);
    let mut pivots = 0;
    let mut stall = 0;
    let mut bland = false;
    let mut last_obj = f64::NEG_INFINITY;
    loop {
        let entering = if bland {
            (0..nv + m).find(|&j| obj[j] > tol)
        } else {
            let (j, _) = (0..nv + m).fold((usize::MAX, tol), |acc, j| if obj[j] > acc.1 { (j, obj[j]) } else { acc });
            (j != usize::MAX).then_some(j)
        };
        let Some(e) = entering else { break };
        // ratio test; ties go to the larger pivot, or the smaller basic index under Bland
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i * width + e];
            if a > ptol {
                let ratio = t[i * width + width - 1].max(0.0) / a;
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        let slack = 1e-12 * lr.abs().max(1e-12);
                        let better_tie = if bland {
                            basis[i] < basis[li]
                        } else {
                            a > t[li * width + e]
                        };
                        if ratio < lr - slack || (ratio <= lr + slack && better_tie) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((l, _)) = leave else {
            return Err(Error::LpFailure("unbounded simplex direction".into()));
        };
        pivot(&mut t, &mut obj, width, m, l, e);
        basis[l] = e;
        pivots += 1;
        let cur = -obj[width - 1];
        if cur > last_obj + 1e-15 * cur.abs().max(1.0) {
            stall = 0;
            last_obj = cur;
        } else {
            stall += 1;
            if stall > opts.stall_limit {
                bland = true;
            }
        }
        if pivots > opts.max_pivots {
            return Err(Error::LpFailure(format!("no optimum after {pivots} pivots")));
        }
    }

    // polish from the final basis
    let col = |j: usize, i: usize| -> f64 {
        if j < nv {
            b[(i, j)] + shift
        } else if j - nv == i {
            1.0
        } else {
            0.0
        }
    };
    let bm = DMatrix::from_fn(m, m, |i, k| col(basis[k], i));
    let cb = DMatrix::from_fn(m, 1, |k, _| if basis[k] < nv { 1.0 } else { 0.0 });
    let ones = DMatrix::from_element(m, 1, 1.0);
    let tab_x: Vec<f64> = (0..m).map(|i| t[i * width + width - 1]).collect();
    let tab_pi: Vec<f64> = (0..m).map(|i| -obj[nv + i]).collect();
    let mut primal = vec![tab_x];
    let mut dual = vec![tab_pi];
    if let Some(x) = bm.clone().lu().solve(&ones) {
        primal.push(x.column(0).iter().copied().collect());
    }
    if let Some(p) = bm.transpose().lu().solve(&cb) {
        dual.push(p.column(0).iter().copied().collect());
    }
    let normalize = |v: Vec<f64>| -> Option<Vec<f64>> {
        let v: Vec<f64> = v.into_iter().map(|x| if x.is_finite() { x.max(0.0) } else { f64::NAN }).collect();
        let s: f64 = v.iter().sum();
        (s > 0.0 && s.is_finite()).then(|| v.iter().map(|x| x / s).collect())
    };
    let cols: Vec<Vec<f64>> = primal
        .into_iter()
        .filter_map(|xb| {
            let mut y = vec![0.0; nv];
            for (k, &j) in basis.iter().enumerate() {
                if j < nv {
                    y[j] = xb[k];
                }
            }
            normalize(y)
        })
        .collect();
    let rows: Vec<Vec<f64>> = dual.into_iter().filter_map(normalize).collect();
    if cols.is_empty() || rows.is_empty() {
        return Err(Error::LpFailure("degenerate optimal basis".into()));
    }
    Ok((rows, cols, pivots))
}

fn pivot(t: &mut [f64], obj: &mut [f64], width: usize, m: usize, l: usize, e: usize) {
    let pv = t[l * width + e];
    for x in &mut t[l * width..(l + 1) * width] {
        *x /= pv;
    }
    let prow: Vec<f64> = t[l * width..(l + 1) * width].to_vec();
    for i in 0..m {
        if i == l {
            continue;
        }
        let f = t[i * width + e];
        if f != 0.0 {
            for (x, p) in t[i * width..(i + 1) * width].iter_mut().zip(&prow) {
                *x -= f * p;
            }
            t[i * width + e] = 0.0;
        }
    }
    let f = obj[e];
    for (x, p) in obj.iter_mut().zip(&prow) {
        *x -= f * p;
    }
    obj[e] = 0.0;
}
