//! Two-sample Wilcoxon rank-sum tests, Spearman rank correlations, and
//! LOWESS scatterplot smoothing.
//!
//! Ties are handled with midranks throughout. The Wilcoxon test uses
//! full enumeration when both samples together hold at most ten
//! tie-free values and a tie-corrected, continuity-corrected normal
//! approximation otherwise.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::ingest::Dataset;
use crate::{Error, Result};

/// How a p-value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    NormalApproximation,
}

/// Test statistic with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
}

/// Midranks of a sample: average rank over each tie group, one-based.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact p-value limit: enumerate rank assignments only up to this
/// pooled size.
const EXACT_LIMIT: usize = 10;

/// Two-sample Wilcoxon rank-sum test. The statistic is the rank sum of
/// the first sample under midranks.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("wilcoxon_rank_sum"));
    }
    let na = a.len();
    let nb = b.len();
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let ranks = midranks(&pooled);
    let w: f64 = ranks[..na].iter().sum();

    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    let has_ties = sorted.windows(2).any(|p| p[0] == p[1]);

    if n <= EXACT_LIMIT && !has_ties {
        let p = exact_rank_sum_p(&ranks, na, w);
        return Ok(TestResult {
            statistic: w,
            p_value: p,
            method: Method::Exact,
        });
    }

    // tie-corrected normal approximation with continuity correction
    let mean = na as f64 * (n + 1) as f64 / 2.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = (na * nb) as f64 * (n + 1) as f64 / 12.0
        - (na * nb) as f64 * tie_term / (12.0 * (n * (n - 1)) as f64);
    if var <= 0.0 {
        // all values tied: no evidence either way
        return Ok(TestResult {
            statistic: w,
            p_value: 1.0,
            method: Method::NormalApproximation,
        });
    }
    let d = w - mean;
    let z = if d > 0.0 {
        (d - 0.5) / var.sqrt()
    } else if d < 0.0 {
        (d + 0.5) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::standard();
    let p = (2.0 * normal.cdf(-z.abs())).min(1.0);
    Ok(TestResult {
        statistic: w,
        p_value: p,
        method: Method::NormalApproximation,
    })
}

/// Exact two-sided p by enumerating every assignment of the pooled
/// ranks to the first sample: 2 min(P(<= w), P(>= w)) capped at 1.
fn exact_rank_sum_p(ranks: &[f64], na: usize, w: f64) -> f64 {
    let n = ranks.len();
    let mut le = 0u64;
    let mut ge = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        total += 1;
        let s: f64 = (0..n)
            .filter(|k| mask & (1 << k) != 0)
            .map(|k| ranks[k])
            .sum();
        if s <= w + 1e-9 {
            le += 1;
        }
        if s >= w - 1e-9 {
            ge += 1;
        }
    }
    let p = 2.0 * (le.min(ge) as f64) / total as f64;
    p.min(1.0)
}

/// Spearman rank correlation with a t-approximation p-value on n-2
/// degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "spearman requires n >= 3, got {n}"
        )));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let rho = pearson(&rx, &ry)?;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2) as f64 / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .expect("valid t distribution");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok((rho, p))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xv, yv) in x.iter().zip(y) {
        sxy += (xv - mx) * (yv - my);
        sxx += (xv - mx) * (xv - mx);
        syy += (yv - my) * (yv - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "constant vector has no defined correlation".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pairwise Spearman matrix over the named columns, with the aligned
/// p-value matrix. Diagonals are 1 and 0.
pub fn correlation_matrix(
    d: &Dataset,
    cols: &[String],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let k = cols.len();
    let mut rho = vec![vec![1.0; k]; k];
    let mut p = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let (r, pv) = spearman(d.column(&cols[i])?, d.column(&cols[j])?)
                .map_err(|e| {
                    Error::InvalidArgument(format!(
                        "columns `{}` / `{}`: {e}",
                        cols[i], cols[j]
                    ))
                })?;
            rho[i][j] = r;
            rho[j][i] = r;
            p[i][j] = pv;
            p[j][i] = pv;
        }
    }
    Ok((rho, p))
}

/// LOWESS: local linear fits with tricube distance weights and bisquare
/// robustness reweighting. Returns fitted values aligned with the input
/// order.
pub fn lowess(x: &[f64], y: &[f64], span: f64, robustness_iters: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "lowess requires n >= 2, got {n}"
        )));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "span must lie in (0, 1], got {span}"
        )));
    }
    // canonical (x, y) ordering makes the result independent of the
    // input permutation
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (x[a], y[a])
            .partial_cmp(&(x[b], y[b]))
            .expect("finite values")
    });
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let r = ((span * n as f64).ceil() as usize).clamp(2, n);
    let mut robustness = vec![1.0f64; n];
    let mut fitted = vec![0.0f64; n];
    for iter in 0..=robustness_iters {
        let mut lo = 0usize;
        for i in 0..n {
            // slide the r-point window to keep it nearest to xs[i]
            while lo + r < n && xs[lo + r] - xs[i] < xs[i] - xs[lo] {
                lo += 1;
            }
            let hi = lo + r - 1;
            let d_max = (xs[i] - xs[lo]).max(xs[hi] - xs[i]);
            let mut sw = 0.0;
            let mut swx = 0.0;
            let mut swy = 0.0;
            let mut swxx = 0.0;
            let mut swxy = 0.0;
            for j in lo..=hi {
                let dist = (xs[j] - xs[i]).abs();
                let wj = if d_max > 0.0 {
                    let u = dist / d_max;
                    if u < 1.0 {
                        (1.0 - u * u * u).powi(3) * robustness[j]
                    } else {
                        0.0
                    }
                } else {
                    robustness[j]
                };
                sw += wj;
                swx += wj * xs[j];
                swy += wj * ys[j];
                swxx += wj * xs[j] * xs[j];
                swxy += wj * xs[j] * ys[j];
            }
            if sw <= 0.0 {
                fitted[i] = ys[i];
                continue;
            }
            let denom = sw * swxx - swx * swx;
            let scale = sw * swxx.abs().max(1.0);
            if denom.abs() <= 1e-12 * scale {
                fitted[i] = swy / sw;
            } else {
                let slope = (sw * swxy - swx * swy) / denom;
                let intercept = (swy - slope * swx) / sw;
                fitted[i] = intercept + slope * xs[i];
            }
        }
        if iter == robustness_iters {
            break;
        }
        // bisquare robustness weights from scaled residuals
        let mut abs_resid: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| (y - f).abs()).collect();
        abs_resid.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
        let s = if n % 2 == 1 {
            abs_resid[n / 2]
        } else {
            (abs_resid[n / 2 - 1] + abs_resid[n / 2]) / 2.0
        };
        if s <= 0.0 {
            break;
        }
        for (rb, (yv, fv)) in robustness.iter_mut().zip(ys.iter().zip(&fitted)) {
            let u = (yv - fv) / (6.0 * s);
            *rb = if u.abs() < 1.0 {
                (1.0 - u * u).powi(2)
            } else {
                0.0
            };
        }
    }

    let mut out = vec![0.0f64; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = fitted[pos];
    }
    Ok(out)
}
