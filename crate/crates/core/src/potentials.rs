//! CRF potentials: exact evaluation of the unary, pairwise and high-order
//! terms for a given occupancy vector.
//!
//! The total score of `Z` is `psi = psi_h + sum_i psi_u + sum_{i<j} psi_p`;
//! the distribution is `P(Z) = exp(psi) / partition`. Higher is better.

use crate::field::{GaussianModeBank, ObservationField};
use crate::geometry::{rel_coords, GroundGrid, ProjectionTable};
use crate::scene::OcclusionParams;
use crate::{Error, Real, Result};

/// Which high-order term an energy or solver uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HighOrderMode {
    /// Occlusion- and displacement-aware generative term.
    Full,
    /// Binary foreground/background term (no displacement modes).
    Simple,
    Off,
}

/// Pairwise interaction kernel, indexed by absolute cell offsets
/// `(|dx|, |dy|)` up to `radius`. Values are nonnegative repulsion strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PairKernel<T> {
    radius: usize,
    /// `(radius + 1)^2` entries, `values[dy * (radius + 1) + dx]`.
    values: Vec<T>,
}

impl<T: Real> PairKernel<T> {
    pub fn new(radius: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != (radius + 1) * (radius + 1) {
            return Err(Error::param("pair kernel needs (radius+1)^2 values"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::param("pair kernel values must be finite and nonnegative"));
        }
        Ok(PairKernel { radius, values })
    }

    /// Constant repulsion inside the given Chebyshev radius.
    pub fn uniform(value: T, radius: usize) -> Result<Self> {
        let values = vec![value; (radius + 1) * (radius + 1)];
        PairKernel::new(radius, values)
    }

    pub fn zero() -> Self {
        PairKernel { radius: 0, values: vec![T::zero()] }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Kernel value at absolute offset `(dx, dy)`; zero beyond the radius.
    pub fn at(&self, dx: usize, dy: usize) -> T {
        if dx > self.radius || dy > self.radius {
            T::zero()
        } else {
            self.values[dy * (self.radius + 1) + dx]
        }
    }
}

/// Per-(location, camera) presence scores, strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryScores<T> {
    cameras: usize,
    /// `scores[i * cameras + c]`.
    scores: Vec<T>,
}

impl<T: Real> UnaryScores<T> {
    pub fn new(cameras: usize, scores: Vec<T>) -> Result<Self> {
        if cameras == 0 || !scores.len().is_multiple_of(cameras) {
            return Err(Error::param("unary score layout mismatch"));
        }
        if scores.iter().any(|s| !(*s > T::zero() && *s < T::one())) {
            return Err(Error::param("unary scores must be strictly inside (0, 1)"));
        }
        Ok(UnaryScores { cameras, scores })
    }

    /// One camera's worth of scores (the common case for oracle scores).
    pub fn single(scores: Vec<T>) -> Result<Self> {
        UnaryScores::new(1, scores)
    }

    pub fn locations(&self) -> usize {
        self.scores.len() / self.cameras
    }

    pub fn cameras(&self) -> usize {
        self.cameras
    }

    /// Elementwise transform; results must stay strictly inside `(0, 1)`.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<UnaryScores<T>> {
        UnaryScores::new(self.cameras, self.scores.iter().map(|&s| f(s)).collect())
    }

    pub fn score(&self, i: usize, cam: usize) -> T {
        self.scores[i * self.cameras + cam]
    }

    /// `max_c log(s / (1 - s))`, the camera-pooled presence log-odds.
    pub fn max_log_odds(&self, i: usize) -> T {
        (0..self.cameras)
            .map(|c| self.score(i, c).logit())
            .fold(T::neg_infinity(), T::max)
    }
}

/// Everything that parameterizes the potentials.
#[derive(Debug, Clone)]
pub struct PotentialBundle<T> {
    /// Unary weight `mu_u >= 0`.
    pub unary_scale: T,
    /// High-order weight `mu_h >= 0`.
    pub high_order_scale: T,
    pub pairwise: PairKernel<T>,
    pub occlusion: OcclusionParams<T>,
    /// Floor on per-pixel generative mass, in `(0, 1e-3]`.
    pub epsilon: T,
    pub unary: Option<UnaryScores<T>>,
}

impl<T: Real> PotentialBundle<T> {
    pub fn new(
        unary_scale: T,
        high_order_scale: T,
        pairwise: PairKernel<T>,
        occlusion: OcclusionParams<T>,
        epsilon: T,
        unary: Option<UnaryScores<T>>,
    ) -> Result<Self> {
        if !(unary_scale >= T::zero() && high_order_scale >= T::zero()) {
            return Err(Error::param("potential scales must be nonnegative"));
        }
        if !(epsilon > T::zero() && epsilon <= T::of(1e-3)) {
            return Err(Error::param("epsilon must be in (0, 1e-3]"));
        }
        Ok(PotentialBundle { unary_scale, high_order_scale, pairwise, occlusion, epsilon, unary })
    }

    /// Cost of one unexplained pattern pixel: `-mu_h * log(epsilon) > 0`.
    pub fn pattern_cost(&self) -> T {
        -self.high_order_scale * self.epsilon.ln()
    }
}

/// `sum_i Z_i * mu_u * max_c log-odds(s_i^c)`.
///
/// Errors when the bundle carries no unary scores.
pub fn psi_unary<T: Real>(z: &[bool], bundle: &PotentialBundle<T>) -> Result<T> {
    let unary = bundle.unary.as_ref().ok_or(Error::MissingUnaries)?;
    debug_assert_eq!(unary.locations(), z.len());
    let mut total = T::zero();
    for (i, &zi) in z.iter().enumerate() {
        if zi {
            total += bundle.unary_scale * unary.max_log_odds(i);
        }
    }
    Ok(total)
}

/// `-sum_{i<j} E_p[|dx|, |dy|] * Z_i * Z_j`; each unordered occupied pair
/// within the kernel radius is counted once.
pub fn psi_pairwise<T: Real>(z: &[bool], bundle: &PotentialBundle<T>, grid: &GroundGrid) -> T {
    debug_assert_eq!(z.len(), grid.cells());
    let r = bundle.pairwise.radius() as i64;
    let mut total = T::zero();
    for i in 0..z.len() {
        if !z[i] {
            continue;
        }
        let (row, col) = grid.row_col(i);
        // Offsets with dy > 0, or dy == 0 and dx > 0: each pair once.
        for dy in 0..=r {
            let lo = if dy == 0 { 1 } else { -r };
            for dx in lo..=r {
                let nr = row as i64 + dy;
                let nc = col as i64 + dx;
                if nr < 0 || nc < 0 || nr >= grid.rows as i64 || nc >= grid.cols as i64 {
                    continue;
                }
                let j = grid.index(nr as usize, nc as usize);
                if z[j] {
                    total -= bundle.pairwise.at(dx.unsigned_abs() as usize, dy as usize);
                }
            }
        }
    }
    total
}

fn check_fields<T: Real>(fields: &[ObservationField<T>], table: &ProjectionTable) -> Result<()> {
    if fields.len() != table.cameras.len() {
        return Err(Error::param("one observation field per camera required"));
    }
    for (f, ct) in fields.iter().zip(&table.cameras) {
        if f.width != ct.width || f.height != ct.height {
            return Err(Error::param("field dimensions do not match the camera"));
        }
    }
    Ok(())
}

/// Binary high-order term: every pixel covered by an occupied location is
/// predicted foreground, the rest background, scored against `f_b` with the
/// epsilon floor.
pub fn psi_high_order_simple<T: Real>(
    z: &[bool],
    fields: &[ObservationField<T>],
    table: &ProjectionTable,
    bundle: &PotentialBundle<T>,
) -> Result<T> {
    check_fields(fields, table)?;
    let mut total = T::zero();
    for (field, ct) in fields.iter().zip(&table.cameras) {
        for (k, cover) in ct.cover.iter().enumerate() {
            let covered = cover.iter().any(|&i| z[i as usize]);
            let f_b = field.background(k);
            let p = if covered { T::one() - f_b } else { f_b };
            total += bundle.high_order_scale * p.max(bundle.epsilon).ln();
        }
    }
    Ok(total)
}

/// Occlusion-aware high-order term: per pixel, the expectation of the
/// discriminative density over the exact generative distribution given `Z`
/// (the probability-product inner term), floored at epsilon, log-scored.
pub fn psi_high_order_full<T: Real>(
    z: &[bool],
    fields: &[ObservationField<T>],
    bank: &GaussianModeBank<T>,
    table: &ProjectionTable,
    bundle: &PotentialBundle<T>,
) -> Result<T> {
    check_fields(fields, table)?;
    let o = bundle.occlusion.visibility();
    let miss = T::one() - o;
    let mut total = T::zero();
    for (field, ct) in fields.iter().zip(&table.cameras) {
        for (k, cover) in ct.cover.iter().enumerate() {
            let (x, y) = ((k % ct.width) as i32, (k / ct.width) as i32);
            let mut unclaimed = T::one();
            let mut inner = T::zero();
            for &i in cover {
                let i = i as usize;
                if z[i] {
                    let rect = ct.rects[i].as_ref().unwrap().rect;
                    let value = rel_coords(rect, x, y);
                    inner += unclaimed * o * field.density_at(bank, k, Some(value));
                    unclaimed *= miss;
                }
            }
            inner += unclaimed * field.background(k);
            total += bundle.high_order_scale * inner.max(bundle.epsilon).ln();
        }
    }
    Ok(total)
}

/// A complete CRF instance: potentials plus the observations they score.
#[derive(Debug, Clone, Copy)]
pub struct EnergyModel<'a, T> {
    pub bundle: &'a PotentialBundle<T>,
    pub fields: &'a [ObservationField<T>],
    pub bank: &'a GaussianModeBank<T>,
    pub table: &'a ProjectionTable,
    pub grid: &'a GroundGrid,
    pub high_order: HighOrderMode,
}

impl<T: Real> EnergyModel<'_, T> {
    /// `psi(Z)`: high-order + unary + pairwise.
    ///
    /// The unary term is skipped when the bundle carries no scores and
    /// `mu_u = 0`; with a positive `mu_u` absent scores are an error.
    pub fn total_energy(&self, z: &[bool]) -> Result<T> {
        let mut total = match self.high_order {
            HighOrderMode::Full => {
                psi_high_order_full(z, self.fields, self.bank, self.table, self.bundle)?
            }
            HighOrderMode::Simple => {
                psi_high_order_simple(z, self.fields, self.table, self.bundle)?
            }
            HighOrderMode::Off => T::zero(),
        };
        if self.bundle.unary.is_some() {
            total += psi_unary(z, self.bundle)?;
        } else if self.bundle.unary_scale > T::zero() {
            return Err(Error::MissingUnaries);
        }
        total += psi_pairwise(z, self.bundle, self.grid);
        Ok(total)
    }
}
