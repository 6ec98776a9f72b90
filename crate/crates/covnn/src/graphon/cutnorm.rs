//! Cut-norm distance between weighted matrices and the fractional-overlay
//! cut distance between matrices of different sizes.
//!
//! For matrices with matching diagonals the distance is
//! `max_{S,T} |e_A(S,T) - e_B(S,T)| / tr(A)²` with
//! `e_C(S,T) = Σ_{i∈S, j∈T} C_ii C_jj C_ij`. The maximization over `T` for a
//! fixed `S` splits elementwise, so exact enumeration only walks the `S`
//! subsets; instances up to m = 12 are exact, larger ones fall back to a
//! seeded alternating local search that only ever visits feasible subset
//! pairs and therefore reports a lower bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Size limit for exact subset enumeration (2^(2m) pairs at m = 12 stay
/// sub-second thanks to the elementwise inner maximization).
pub const EXACT_CUT_NORM_LIMIT: usize = 12;

const DIAGONAL_TOL: f64 = 1e-9;
const RESTARTS: usize = 24;
const MAX_SWEEPS: usize = 200;
const HEURISTIC_SEED: u64 = 0x0c07;

/// A cut-norm value and whether it came from exact enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutNormEstimate {
    pub value: f64,
    pub exact: bool,
}

/// Divide a square matrix by its trace.
pub fn trace_normalized(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let trace = matrix.trace();
    if trace <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    Ok(matrix.scale(1.0 / trace))
}

fn check_cut_inputs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Shape {
            expected: "two square matrices of equal size".into(),
            found: format!("{}x{} vs {}x{}", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
        });
    }
    for i in 0..a.nrows() {
        let delta = (a[(i, i)] - b[(i, i)]).abs();
        if delta > DIAGONAL_TOL {
            return Err(Error::DiagonalMismatch { index: i, delta });
        }
    }
    Ok(())
}

/// Weighted difference matrix `M_ij = d_i d_j (A_ij - B_ij)`.
fn weighted_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    let d = a.diagonal();
    DMatrix::from_fn(m, m, |i, j| d[i] * d[j] * (a[(i, j)] - b[(i, j)]))
}

/// Exact `max_{S,T} |Σ_{i∈S,j∈T} M_ij|` via Gray-code subset walking.
///
/// For a fixed `S` the best `T` takes either every positive column sum or
/// every negative one, so each subset step costs O(m).
fn exact_bilinear_max(m_mat: &DMatrix<f64>) -> f64 {
    let m = m_mat.nrows();
    let mut col_sums = vec![0.0f64; m];
    let mut in_s = vec![false; m];
    let mut best = 0.0f64;
    let subsets: u64 = 1 << m;
    for g in 1..subsets {
        let flip = g.trailing_zeros() as usize;
        let sign = if in_s[flip] { -1.0 } else { 1.0 };
        in_s[flip] = !in_s[flip];
        for j in 0..m {
            col_sums[j] += sign * m_mat[(flip, j)];
        }
        let mut pos = 0.0;
        let mut neg = 0.0;
        for &s in &col_sums {
            if s > 0.0 {
                pos += s;
            } else {
                neg -= s;
            }
        }
        best = best.max(pos).max(neg);
    }
    best
}

/// Alternating local search for `max |Σ_{i∈S,j∈T} M_ij|`; every iterate is a
/// feasible pair, so the result never exceeds the exact maximum.
fn heuristic_bilinear_max<R: Rng>(m_mat: &DMatrix<f64>, rng: &mut R, restarts: usize) -> f64 {
    let m = m_mat.nrows();
    let mut best = 0.0f64;
    for restart in 0..restarts {
        let mut t: Vec<f64> = if restart == 0 {
            vec![1.0; m]
        } else {
            (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect()
        };
        let mut value = 0.0f64;
        for _ in 0..MAX_SWEEPS {
            let t_vec = DVector::from_vec(t.clone());
            let r = m_mat * &t_vec;
            let (s, v1) = best_side(&r);
            let s_vec = DVector::from_vec(s);
            let c = m_mat.transpose() * &s_vec;
            let (t_next, v2) = best_side(&c);
            let improved = v1.max(v2);
            t = t_next;
            if improved <= value + 1e-15 {
                value = value.max(improved);
                break;
            }
            value = improved;
        }
        best = best.max(value);
    }
    best
}

/// Best 0/1 response to a score vector: take the positives or the negatives,
/// whichever has the larger absolute sum.
fn best_side(scores: &DVector<f64>) -> (Vec<f64>, f64) {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for &v in scores.iter() {
        if v > 0.0 {
            pos += v;
        } else {
            neg -= v;
        }
    }
    let take_pos = pos >= neg;
    let side: Vec<f64> = scores
        .iter()
        .map(|&v| if (take_pos && v > 0.0) || (!take_pos && v < 0.0) { 1.0 } else { 0.0 })
        .collect();
    (side, pos.max(neg))
}

/// Cut-norm distance between two equally sized matrices with matching
/// diagonals. Exact up to [`EXACT_CUT_NORM_LIMIT`], heuristic above it.
pub fn cut_norm_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<CutNormEstimate> {
    check_cut_inputs(a, b)?;
    let m = a.nrows();
    let m_mat = weighted_difference(a, b);
    let scale = a.trace() * a.trace();
    if scale == 0.0 {
        return Err(Error::ZeroTrace);
    }
    if m <= EXACT_CUT_NORM_LIMIT {
        Ok(CutNormEstimate { value: exact_bilinear_max(&m_mat) / scale, exact: true })
    } else {
        let mut rng = crate::rng::stream(HEURISTIC_SEED, "cutnorm", m as u64);
        Ok(CutNormEstimate {
            value: heuristic_bilinear_max(&m_mat, &mut rng, RESTARTS) / scale,
            exact: false,
        })
    }
}

/// The local-search estimator regardless of size; a lower bound on the exact
/// cut norm, used to gauge heuristic quality on instances where exact
/// enumeration is feasible.
pub fn cut_norm_distance_heuristic(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<CutNormEstimate> {
    check_cut_inputs(a, b)?;
    let m_mat = weighted_difference(a, b);
    let scale = a.trace() * a.trace();
    if scale == 0.0 {
        return Err(Error::ZeroTrace);
    }
    let mut rng = crate::rng::stream(HEURISTIC_SEED, "cutnorm", a.nrows() as u64);
    Ok(CutNormEstimate {
        value: heuristic_bilinear_max(&m_mat, &mut rng, RESTARTS) / scale,
        exact: false,
    })
}

// ---------------------------------------------------------------------------
// Fractional overlay for matrices of different sizes
// ---------------------------------------------------------------------------

/// The blown-up difference restricted to the support of the
/// interval-overlap coupling: one node per segment of the merged
/// trace-weighted partitions, weighted by the segment length, valued by the
/// parent cells of each kernel.
fn overlap_blowup(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> DMatrix<f64> {
    let (t1, t2) = (c1.trace(), c2.trace());
    // Merged refinement of the two trace-weighted partitions of [0,1].
    let mut segments: Vec<(f64, usize, usize)> = Vec::new(); // (width, cell1, cell2)
    let (mut i, mut a) = (0usize, 0usize);
    let (mut edge1, mut edge2) = (c1[(0, 0)] / t1, c2[(0, 0)] / t2);
    let mut prev = 0.0;
    loop {
        let next = edge1.min(edge2).min(1.0);
        if next > prev {
            segments.push((next - prev, i, a));
        }
        if next >= 1.0 - 1e-15 {
            break;
        }
        if edge1 <= next + 1e-15 && i + 1 < c1.nrows() {
            i += 1;
            edge1 += c1[(i, i)] / t1;
        }
        if edge2 <= next + 1e-15 && a + 1 < c2.nrows() {
            a += 1;
            edge2 += c2[(a, a)] / t2;
        }
        prev = next;
    }
    let r = segments.len();
    DMatrix::from_fn(r, r, |s, t| {
        if s == t {
            // Both blow-ups carry the overlay weight on the diagonal.
            return 0.0;
        }
        let (ws, i_s, a_s) = segments[s];
        let (wt, i_t, a_t) = segments[t];
        ws * wt * (c1[(i_s, i_t)] - c2[(a_s, a_t)])
    })
}

/// Cut distance between two kernels of (possibly) different sizes,
/// evaluated at the interval-overlap fractional overlay
/// `K_ia = |𝒰_i ∩ 𝒱_a|` of their trace-weighted partitions.
///
/// The diagonals act as node weights (internally normalized to a unit
/// measure, mirroring the `1/tr²` factor of the same-size cut norm) while
/// the matrix entries keep their scale, so this is exactly the cut norm of
/// the difference of the two induced step kernels on [0,1]²: realizations
/// of a common graphon come out close at every pair of resolutions.
///
/// The minimization over all fractional overlays is not performed, so the
/// value is an upper bound on the optimal-overlay distance whenever the
/// inner cut norm is exact, and a local-search estimate of that bound
/// otherwise (the flag tells which).
pub fn cut_distance_overlay(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<CutNormEstimate> {
    for (name, c) in [("first", c1), ("second", c2)] {
        if c.nrows() != c.ncols() {
            return Err(Error::Shape {
                expected: format!("square {name} matrix"),
                found: format!("{}x{}", c.nrows(), c.ncols()),
            });
        }
        if c.trace() <= 0.0 {
            return Err(Error::ZeroTrace);
        }
        for i in 0..c.nrows() {
            if c[(i, i)] <= 0.0 {
                return Err(Error::NonPositiveDiagonal { index: i, value: c[(i, i)] });
            }
        }
    }
    let m_mat = overlap_blowup(c1, c2);
    let n = m_mat.nrows();
    if n <= EXACT_CUT_NORM_LIMIT {
        return Ok(CutNormEstimate { value: exact_bilinear_max(&m_mat), exact: true });
    }
    let mut rng = crate::rng::stream(HEURISTIC_SEED, "overlay", n as u64);
    Ok(CutNormEstimate {
        value: heuristic_bilinear_max(&m_mat, &mut rng, RESTARTS),
        exact: false,
    })
}
