//! Hypothesis-test helpers shared by the baseline comparison, the Cox screen
//! and the log-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::num::total_cmp;

/// Upper tail of χ² with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    chi2_sf(x, 1.0)
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    ChiSquared::new(df).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

/// Two-sided normal p-value for a z statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// Benjamini-Hochberg step-up adjustment. NaN inputs stay NaN and are
/// excluded from the multiplicity count.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..p.len()).filter(|&i| !p[i].is_nan()).collect();
    let m = idx.len();
    let mut out = vec![f64::NAN; p.len()];
    if m == 0 {
        return out;
    }
    idx.sort_by(|&a, &b| total_cmp(&p[a], &p[b]).then(a.cmp(&b)));
    let mut running = 1.0f64;
    for (rank, &i) in idx.iter().enumerate().rev() {
        let adj = (p[i] * m as f64 / (rank + 1) as f64).max(p[i]);
        running = running.min(adj);
        out[i] = running.min(1.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample: pairs where a > b, ties counted 0.5.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Mann-Whitney U test, normal approximation with tie correction (no continuity correction).
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> MannWhitney {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| total_cmp(&x.0, &y.0));
    let n = pooled.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_a += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let nt = n1 + n2;
    let var = if nt > 1.0 {
        n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)))
    } else {
        0.0
    };
    let (z, p_value) = if var > 0.0 {
        let z = (u - mean) / var.sqrt();
        (z, normal_two_sided_p(z))
    } else {
        (0.0, 1.0)
    };
    MannWhitney { u, z, p_value }
}

/// Pearson χ² statistic (no Yates correction) of an r×c contingency table,
/// with its p-value. `None` when a row or column total is zero.
pub fn chi_square_independence(table: &[Vec<f64>]) -> Option<(f64, f64, usize)> {
    let rows = table.len();
    let cols = table.first()?.len();
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<f64> = (0..cols).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    if row_tot.iter().chain(&col_tot).any(|&t| t <= 0.0) {
        return None;
    }
    let total: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let e = row_tot[r] * col_tot[c] / total;
            stat += (table[r][c] - e).powi(2) / e;
        }
    }
    let df = (rows - 1) * (cols - 1);
    if df == 0 {
        return None;
    }
    Some((stat, chi2_sf(stat, df as f64), df))
}
