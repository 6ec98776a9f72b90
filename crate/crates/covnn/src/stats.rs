//! Self-contained statistical primitives: Pearson correlation, t tests,
//! one-way ANOVA, linear-model ANCOVA, Bonferroni correction, Cohen's d.
//!
//! p-values come from exact t/F distribution CDFs evaluated through the
//! regularized incomplete beta function (Lentz continued fraction).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// Lanczos approximation of ln Γ(x) for x > 0 (g = 7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection keeps small arguments accurate.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`, absolute error below 1e-10.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5)
}

/// Upper-tail probability of an F statistic with `(d1, d2)` degrees of freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    regularized_incomplete_beta(d2 / (d2 + d1 * f), 0.5 * d2, 0.5 * d1)
}

// ---------------------------------------------------------------------------
// Descriptive helpers
// ---------------------------------------------------------------------------

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

// ---------------------------------------------------------------------------
// Tests and effect sizes
// ---------------------------------------------------------------------------

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: format!("{} paired observations", x.len()),
            found: format!("{}", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientGroup("pearson".into(), 2));
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("pearson input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation with its two-sided p-value (t distribution, n-2 df).
pub fn pearson_test(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 3 {
        return Err(Error::InsufficientGroup("pearson test".into(), 3));
    }
    let r = pearson(x, y)?;
    let df = (x.len() - 2) as f64;
    if (1.0 - r * r) <= 0.0 {
        return Ok((r, 0.0));
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    Ok((r, student_t_two_sided_p(t, df)))
}

/// Pooled-variance two-sided t test (matches the two-group ANOVA identity
/// F = t²).
pub fn two_sided_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientGroup("t test".into(), 2));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
    if pooled == 0.0 {
        return Err(Error::ZeroVariance("pooled variance".into()));
    }
    let t = (mean(a) - mean(b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let df = na + nb - 2.0;
    Ok((t, student_t_two_sided_p(t, df)))
}

/// Welch (unequal variance) two-sided t test.
pub fn two_sided_t_test_welch(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientGroup("t test".into(), 2));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    if va + vb == 0.0 {
        return Err(Error::ZeroVariance("welch variance".into()));
    }
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok((t, student_t_two_sided_p(t, df)))
}

/// One-way ANOVA over two or more groups.
pub fn oneway_anova(groups: &[&[f64]]) -> Result<(f64, f64)> {
    if groups.len() < 2 {
        return Err(Error::InsufficientGroup("anova groups".into(), 2));
    }
    for g in groups {
        if g.len() < 2 {
            return Err(Error::InsufficientGroup("anova group".into(), 2));
        }
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand: f64 = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let gm = mean(g);
        ss_between += g.len() as f64 * (gm - grand) * (gm - grand);
        ss_within += g.iter().map(|x| (x - gm) * (x - gm)).sum::<f64>();
    }
    let df_between = (groups.len() - 1) as f64;
    let df_within = (n - groups.len()) as f64;
    if ss_within == 0.0 {
        return Err(Error::ZeroVariance("within-group variance".into()));
    }
    let f = (ss_between / df_between) / (ss_within / df_within);
    Ok((f, f_survival(f, df_between, df_within)))
}

/// Cohen's d with pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientGroup("cohens d".into(), 2));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
    if pooled == 0.0 {
        return Err(Error::ZeroVariance("pooled variance".into()));
    }
    Ok((mean(a) - mean(b)) / pooled.sqrt())
}

/// Bonferroni correction: `min(1, p·m)`.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

// ---------------------------------------------------------------------------
// Linear models
// ---------------------------------------------------------------------------

/// Ordinary least squares fit of `y` on a design matrix.
#[derive(Debug, Clone)]
pub struct LinearModelFit {
    pub coefficients: DVector<f64>,
    pub residual_sum_of_squares: f64,
    /// Residual degrees of freedom, `n - p`.
    pub degrees_of_freedom: usize,
    pub standard_errors: Vec<f64>,
    pub coefficient_p_values: Vec<f64>,
}

/// Fit by SVD least squares; requires `n - p ≥ 1`.
pub fn fit_linear_model(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModelFit> {
    let n = design.nrows();
    let p = design.ncols();
    if y.len() != n {
        return Err(Error::Shape {
            expected: format!("{n} responses"),
            found: format!("{}", y.len()),
        });
    }
    if n < p + 1 {
        return Err(Error::InsufficientGroup("linear model rows".into(), p + 1));
    }
    let svd = design.clone().svd(true, true);
    let coefficients = svd
        .solve(y, 1e-12)
        .map_err(|e| Error::InvalidData(format!("least squares solve failed: {e}")))?;
    let residuals = y - design * &coefficients;
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let df = n - p;
    let sigma2 = rss / df as f64;

    // (XᵀX)⁻¹ through the SVD factors for coefficient standard errors.
    let v = svd.v_t.as_ref().expect("svd computed with V").transpose();
    let mut xtx_inv = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let mut acc = 0.0;
            for k in 0..svd.singular_values.len() {
                let s = svd.singular_values[k];
                if s > 1e-12 {
                    acc += v[(i, k)] * v[(j, k)] / (s * s);
                }
            }
            xtx_inv[(i, j)] = acc;
        }
    }
    let mut standard_errors = Vec::with_capacity(p);
    let mut coefficient_p_values = Vec::with_capacity(p);
    for j in 0..p {
        let se = (sigma2 * xtx_inv[(j, j)]).sqrt();
        standard_errors.push(se);
        let p_value = if se > 0.0 {
            student_t_two_sided_p(coefficients[j] / se, df as f64)
        } else {
            f64::NAN
        };
        coefficient_p_values.push(p_value);
    }
    Ok(LinearModelFit {
        coefficients,
        residual_sum_of_squares: rss,
        degrees_of_freedom: df,
        standard_errors,
        coefficient_p_values,
    })
}

/// ANCOVA outcome for the group factor.
#[derive(Debug, Clone, Copy)]
pub struct AncovaResult {
    pub f_group: f64,
    pub p_group: f64,
    pub partial_eta_sq: f64,
}

/// Linear-model ANCOVA: residual F test of the group term in
/// `outcome ~ intercept + group + covariates` (main effects only).
///
/// `partial η² = SS_group / (SS_group + SS_resid)`.
pub fn ancova(outcome: &[f64], group: &[f64], covariates: &[&[f64]]) -> Result<AncovaResult> {
    let n = outcome.len();
    if group.len() != n || covariates.iter().any(|c| c.len() != n) {
        return Err(Error::Shape {
            expected: format!("{n} rows in every column"),
            found: "ragged input".into(),
        });
    }
    let p_full = 2 + covariates.len();
    if n < p_full + 1 {
        return Err(Error::InsufficientGroup("ancova rows".into(), p_full + 1));
    }
    let y = DVector::from_column_slice(outcome);
    let full = DMatrix::from_fn(n, p_full, |i, j| match j {
        0 => 1.0,
        1 => group[i],
        _ => covariates[j - 2][i],
    });
    let reduced = DMatrix::from_fn(n, p_full - 1, |i, j| match j {
        0 => 1.0,
        _ => covariates[j - 1][i],
    });
    let fit_full = fit_linear_model(&full, &y)?;
    let fit_reduced = fit_linear_model(&reduced, &y)?;
    let ss_group =
        (fit_reduced.residual_sum_of_squares - fit_full.residual_sum_of_squares).max(0.0);
    let rss = fit_full.residual_sum_of_squares;
    if rss == 0.0 {
        return Err(Error::ZeroVariance("ancova residuals".into()));
    }
    let df = fit_full.degrees_of_freedom as f64;
    let f_group = ss_group / (rss / df);
    Ok(AncovaResult {
        f_group,
        p_group: f_survival(f_group, 1.0, df),
        partial_eta_sq: ss_group / (ss_group + rss),
    })
}
