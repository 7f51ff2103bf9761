//! Detection extraction and ground-plane metrics: Hungarian matching at a
//! fixed radius, MODA/MODP, precision/recall, and MODA-vs-radius curves.

use crate::error::{Error, Result};
use crate::geometry::GroundGrid;
use crate::scalar::Real;

/// One detection at a cell center, in world meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub cell: usize,
    pub x: T,
    pub y: T,
    pub confidence: T,
}

/// Thresholded detections for one frame.
#[derive(Debug, Clone)]
pub struct DetectionSet<T> {
    pub frame: usize,
    pub detections: Vec<Detection<T>>,
}

/// Outcome of matching detections to ground truth at radius `r`.
///
/// Counts conserve: `tp + fp = |detections|`, `tp + misses = |truth|`; every
/// matched distance is at most `r`.
#[derive(Debug, Clone)]
pub struct MatchResult<T> {
    pub tp: usize,
    pub fp: usize,
    pub misses: usize,
    /// `(detection index, truth index, ground distance)` per true positive.
    pub pairs: Vec<(usize, usize, T)>,
    pub radius: T,
}

/// Emits one detection per cell with `q` strictly above the threshold,
/// positioned at the cell center.
pub fn extract_detections<T: Real>(
    q: &[T],
    grid: &GroundGrid,
    threshold: T,
    frame: usize,
) -> Result<DetectionSet<T>> {
    if q.len() != grid.cells() {
        return Err(Error::param("occupancy vector does not match the grid"));
    }
    let detections = q
        .iter()
        .enumerate()
        .filter(|&(_, &qi)| qi > threshold)
        .map(|(cell, &qi)| {
            let [x, y] = grid.center_m(cell);
            Detection { cell, x: T::of(x), y: T::of(y), confidence: qi }
        })
        .collect();
    Ok(DetectionSet { frame, detections })
}

/// Ground-truth positions (occupied cell centers) of a frame, in meters.
pub fn truth_points<T: Real>(occupancy: &[bool], grid: &GroundGrid) -> Result<Vec<[T; 2]>> {
    if occupancy.len() != grid.cells() {
        return Err(Error::param("occupancy vector does not match the grid"));
    }
    Ok(occupancy
        .iter()
        .enumerate()
        .filter(|&(_, &z)| z)
        .map(|(i, _)| {
            let [x, y] = grid.center_m(i);
            [T::of(x), T::of(y)]
        })
        .collect())
}

fn distance<T: Real>(d: &Detection<T>, t: [T; 2]) -> T {
    let dx = d.x - t[0];
    let dy = d.y - t[1];
    (dx * dx + dy * dy).sqrt()
}

/// Minimum-cost assignment on a square cost matrix; returns the column
/// assigned to each row. Potentials-based O(s^3) Hungarian method.
fn assignment<T: Real>(cost: &[T], s: usize) -> Vec<usize> {
    let inf = T::infinity();
    let mut u = vec![T::zero(); s + 1];
    let mut v = vec![T::zero(); s + 1];
    let mut matched = vec![0usize; s + 1];
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=s {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * s + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=s {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; s];
    for j in 1..=s {
        row_to_col[matched[j] - 1] = j - 1;
    }
    row_to_col
}

/// Matches detections to ground truth: pairs farther than `r` are forbidden,
/// the number of matches is maximized, and among maximum matchings the total
/// ground distance is minimal. Unmatched detections count as false positives,
/// unmatched truths as misses.
pub fn hungarian_match<T: Real>(
    dets: &[Detection<T>],
    truth: &[[T; 2]],
    r: T,
) -> Result<MatchResult<T>> {
    if !(r > T::zero() && r.is_finite()) {
        return Err(Error::param("match radius must be positive"));
    }
    let n = dets.len();
    let m = truth.len();
    if n == 0 || m == 0 {
        return Ok(MatchResult { tp: 0, fp: n, misses: m, pairs: Vec::new(), radius: r });
    }
    // Padded square matrix: dummy rows/columns absorb unmatched entities at
    // cost B, forbidden pairs cost 4B. Any B > r * min(n, m) / 2 makes an
    // extra real match always cheaper than two dummy assignments.
    let s = n + m;
    let b = T::of((n.min(m) + 1) as f64) * (r + T::one());
    let forbid = T::of(4.0) * b;
    let mut cost = vec![T::zero(); s * s];
    for (i, det) in dets.iter().enumerate() {
        for (j, &t) in truth.iter().enumerate() {
            let d = distance(det, t);
            cost[i * s + j] = if d <= r { d } else { forbid };
        }
        for j in m..s {
            cost[i * s + j] = b;
        }
    }
    for i in n..s {
        for j in 0..m {
            cost[i * s + j] = b;
        }
    }
    let row_to_col = assignment(&cost, s);
    let mut pairs = Vec::new();
    for (i, det) in dets.iter().enumerate() {
        let j = row_to_col[i];
        if j < m {
            let d = distance(det, truth[j]);
            debug_assert!(d <= r, "forbidden pair selected");
            pairs.push((i, j, d));
        }
    }
    let tp = pairs.len();
    Ok(MatchResult { tp, fp: n - tp, misses: m - tp, pairs, radius: r })
}

/// `1 - (FP + misses) / |truth|`, reported raw (may be negative). Undefined
/// when there is no ground truth but false positives exist.
pub fn moda<T: Real>(m: &MatchResult<T>) -> Result<T> {
    let truth = m.tp + m.misses;
    if truth == 0 {
        return if m.fp == 0 {
            Ok(T::one())
        } else {
            Err(Error::param("MODA undefined: no ground truth but false positives"))
        };
    }
    Ok(T::one() - T::of((m.fp + m.misses) as f64) / T::of(truth as f64))
}

/// Mean over true positives of `1 - d / r`; zero when nothing matched.
pub fn modp<T: Real>(m: &MatchResult<T>) -> T {
    if m.pairs.is_empty() {
        return T::zero();
    }
    let sum: T = m.pairs.iter().map(|&(_, _, d)| T::one() - d / m.radius).sum();
    sum / T::of(m.pairs.len() as f64)
}

/// `(TP / (TP + FP), TP / (TP + misses))`; vacuous denominators yield 1.
pub fn precision_recall<T: Real>(m: &MatchResult<T>) -> (T, T) {
    let frac = |num: usize, den: usize| {
        if den == 0 {
            T::one()
        } else {
            T::of(num as f64) / T::of(den as f64)
        }
    };
    (frac(m.tp, m.tp + m.fp), frac(m.tp, m.tp + m.misses))
}

/// MODA evaluated at each radius; non-decreasing in `r`.
pub fn moda_curve<T: Real>(
    dets: &[Detection<T>],
    truth: &[[T; 2]],
    radii: &[T],
) -> Result<Vec<(T, T)>> {
    radii
        .iter()
        .map(|&r| {
            let m = hungarian_match(dets, truth, r)?;
            Ok((r, moda(&m)?))
        })
        .collect()
}
