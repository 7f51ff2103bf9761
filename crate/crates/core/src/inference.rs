//! Natural-gradient Mean-Field inference over the occupancy CRF.
//!
//! The posterior is approximated by a fully factorized `Q` with per-location
//! presence probabilities `q_i = sigmoid(eta_i)`. Each sweep moves every
//! natural parameter along the conditional-energy gap
//! `g_i = E_Q[psi | Z_i=1] - E_Q[psi | Z_i=0]`, evaluated under a binary
//! pattern approximation of the high-order term: after thresholding the
//! fields, a foreground pixel costs `C = -mu_h log(epsilon)` unless some
//! occupied location compatibly explains it, and a background-compatible
//! pixel penalizes the locations that would cover it.

use std::collections::BTreeSet;

use crate::field::{mode_box, threshold_field, BinaryField, GaussianModeBank};
use crate::geometry::{CameraTable, GroundGrid, ProjectionTable, Rect};
use crate::potentials::{EnergyModel, HighOrderMode, PotentialBundle};
use crate::sat::Sat;
use crate::{Error, Real, Result};

/// Hard bounds on `q` keeping every product and division finite.
pub const Q_MIN: f64 = 1e-6;

/// Solver knobs. `tau_b` and `tau_h` threshold the field into the binary
/// pattern approximation; see [`default_thresholds`].
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig<T> {
    pub iterations: usize,
    pub step: T,
    /// Initial presence probability.
    pub prior: T,
    pub tau_b: T,
    pub tau_h: T,
    /// Stop early when `max |delta q| < tol`. Off by default.
    pub early_stop: Option<T>,
}

impl<T: Real> InferenceConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("iterations must be at least 1"));
        }
        if !(self.step > T::zero() && self.step.is_finite()) {
            return Err(Error::param("step must be positive"));
        }
        if !(self.prior > T::zero() && self.prior < T::one()) {
            return Err(Error::param("prior must be inside (0, 1)"));
        }
        for tau in [self.tau_b, self.tau_h] {
            if !(tau > T::zero() && tau < T::one()) {
                return Err(Error::param("thresholds must be inside (0, 1)"));
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for InferenceConfig<T> {
    fn default() -> Self {
        let (tau_b, tau_h) = default_thresholds(T::of(0.9), T::of(0.2), 8);
        InferenceConfig {
            iterations: 30,
            step: T::of(0.01),
            prior: T::of(0.01),
            tau_b,
            tau_h,
            early_stop: None,
        }
    }
}

/// Half the expected peak weight of each class under the generative model:
/// a background pixel peaks at `(1-noise) + noise/(M+1)`, a visible body
/// pixel's best mode at `(1-noise)*o + noise/(M+1)`.
pub fn default_thresholds<T: Real>(visibility: T, noise: T, modes: usize) -> (T, T) {
    let uniform = noise / T::of(modes as f64 + 1.0);
    let keep = T::one() - noise;
    let half = T::of(0.5);
    (half * (keep + uniform), half * (keep * visibility + uniform))
}

/// The factorized variational state; `q = sigmoid(eta)` always holds.
#[derive(Debug, Clone)]
pub struct MeanFieldState<T> {
    q: Vec<T>,
    eta: Vec<T>,
    iteration: usize,
}

impl<T: Real> MeanFieldState<T> {
    pub fn new(n: usize, prior: T) -> Self {
        let (lo, hi) = eta_bounds::<T>();
        let eta = vec![prior.logit().clampf(lo, hi); n];
        let q = eta.iter().map(|e| e.sigmoid()).collect();
        MeanFieldState { q, eta, iteration: 0 }
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    pub fn eta(&self) -> &[T] {
        &self.eta
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One synchronized natural-gradient step; returns `max |delta q|`.
    pub fn apply(&mut self, gradient: &[T], step: T) -> T {
        debug_assert_eq!(gradient.len(), self.eta.len());
        let (lo, hi) = eta_bounds::<T>();
        let mut max_delta = T::zero();
        for (i, g) in gradient.iter().enumerate() {
            self.eta[i] = (self.eta[i] + step * *g).clampf(lo, hi);
            let q = self.eta[i].sigmoid();
            max_delta = max_delta.max((q - self.q[i]).abs());
            self.q[i] = q;
        }
        self.iteration += 1;
        max_delta
    }
}

fn eta_bounds<T: Real>() -> (T, T) {
    let lo = T::of(Q_MIN).logit();
    (lo, -lo)
}

/// Per-camera pattern structure derived from one thresholded field.
#[derive(Debug, Clone)]
pub struct CameraExplanations {
    pub width: usize,
    pub height: usize,
    /// Per pixel: locations that compatibly explain it, ascending.
    pub lists: Vec<Vec<u32>>,
    /// Some mode activated at the pixel.
    pub foreground: Vec<bool>,
    /// Raw background flag `b~(k)`.
    pub background: Vec<bool>,
}

/// Compatible explanations for every camera of a rig.
#[derive(Debug, Clone)]
pub struct CompatibleExplanations {
    pub cameras: Vec<CameraExplanations>,
}

/// Integer pixel range of the axis span `[lo, hi]` whose relative coordinate
/// `(k - center) / extent` lies in `[a, b]`; `None` when empty. Every
/// box-membership decision (slow path, fast path, plan cells) goes through
/// this single helper so the paths agree exactly.
fn pixel_range<T: Real>(lo: i32, hi: i32, a: T, b: T) -> Option<(i32, i32)> {
    let c = 0.5 * (lo + hi) as f64;
    let w = (hi - lo) as f64;
    let k0 = ((c + a.as_f64() * w).ceil() as i32).max(lo);
    let k1 = ((c + b.as_f64() * w).floor() as i32).min(hi);
    (k0 <= k1).then_some((k0, k1))
}

/// Mode box of `m` as an integer pixel rectangle inside `rect`.
fn mode_pixel_rect<T: Real>(bank: &GaussianModeBank<T>, m: usize, rect: Rect) -> Option<Rect> {
    let b = mode_box(bank, m)?;
    let (x0, x1) = pixel_range(rect.x0, rect.x1, b.x0, b.x1)?;
    let (y0, y1) = pixel_range(rect.y0, rect.y1, b.y0, b.y1)?;
    Some(Rect { x0, y0, x1, y1 })
}

fn check_binary(
    binary: &[BinaryField],
    table: &ProjectionTable,
    modes: usize,
) -> Result<()> {
    if binary.len() != table.cameras.len() {
        return Err(Error::param("one binary field per camera required"));
    }
    for (bf, ct) in binary.iter().zip(&table.cameras) {
        if bf.width != ct.width || bf.height != ct.height {
            return Err(Error::param("binary field dimensions do not match the camera"));
        }
        if bf.mode_count != modes {
            return Err(Error::param("binary field mode count does not match the bank"));
        }
    }
    Ok(())
}

/// Location `i` explains pixel `k` when `k` lies in `i`'s rectangle and some
/// activated mode's box contains the relative coordinates of `k`.
pub fn compatible_explanations<T: Real>(
    binary: &[BinaryField],
    table: &ProjectionTable,
    bank: &GaussianModeBank<T>,
) -> Result<CompatibleExplanations> {
    check_binary(binary, table, bank.len())?;
    let mut cameras = Vec::with_capacity(binary.len());
    for (bf, ct) in binary.iter().zip(&table.cameras) {
        let pixels = ct.width * ct.height;
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); pixels];
        for (i, pr) in ct.rects.iter().enumerate() {
            let Some(pr) = pr else { continue };
            for m in 0..bank.len() {
                let Some(r) = mode_pixel_rect(bank, m, pr.rect) else { continue };
                for ky in r.y0..=r.y1 {
                    for kx in r.x0..=r.x1 {
                        let k = ct.pixel(kx, ky);
                        if bf.active(m, k) && lists[k].last() != Some(&(i as u32)) {
                            lists[k].push(i as u32);
                        }
                    }
                }
            }
        }
        cameras.push(CameraExplanations {
            width: ct.width,
            height: ct.height,
            lists,
            foreground: (0..pixels).map(|k| bf.foreground(k)).collect(),
            background: (0..pixels).map(|k| bf.background(k)).collect(),
        });
    }
    Ok(CompatibleExplanations { cameras })
}

/// Conditional-energy gap of the unary term: `mu_u * max_c log-odds(s_i^c)`,
/// independent of `q`.
pub fn grad_unary<T: Real>(bundle: &PotentialBundle<T>, n: usize) -> Result<Vec<T>> {
    let unary = bundle.unary.as_ref().ok_or(Error::MissingUnaries)?;
    if unary.locations() != n {
        return Err(Error::param("unary score count does not match the grid"));
    }
    Ok((0..n).map(|i| bundle.unary_scale * unary.max_log_odds(i)).collect())
}

/// Conditional-energy gap of the pairwise term: the q-map convolved with
/// `-E_p`, self-term excluded.
pub fn grad_pairwise<T: Real>(q: &[T], bundle: &PotentialBundle<T>, grid: &GroundGrid) -> Vec<T> {
    debug_assert_eq!(q.len(), grid.cells());
    let r = bundle.pairwise.radius() as i64;
    let mut g = vec![T::zero(); q.len()];
    for (i, gi) in g.iter_mut().enumerate() {
        let (row, col) = grid.row_col(i);
        let mut acc = T::zero();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nr = row as i64 + dy;
                let nc = col as i64 + dx;
                if nr < 0 || nc < 0 || nr >= grid.rows as i64 || nc >= grid.cols as i64 {
                    continue;
                }
                let j = grid.index(nr as usize, nc as usize);
                acc -= bundle.pairwise.at(dx.unsigned_abs() as usize, dy.unsigned_abs() as usize)
                    * q[j];
            }
        }
        *gi = acc;
    }
    g
}

/// Background side of the pattern gradient, shared verbatim by the slow and
/// fast paths: a confidently-background pixel pushes down every covering
/// location, discounted by the visibility of anything nearer.
fn bg_gradient<T: Real>(
    g: &mut [T],
    q: &[T],
    ce: &CameraExplanations,
    ct: &CameraTable,
    c_eps: T,
    o: T,
) {
    for (k, cover) in ct.cover.iter().enumerate() {
        if !ce.background[k] || ce.foreground[k] {
            continue;
        }
        let mut nearer = T::one();
        for &i in cover {
            let i = i as usize;
            g[i] -= c_eps * o * nearer;
            nearer *= T::one() - q[i];
        }
    }
}

/// Pattern gradient, literal form. Foreground pixel `k`: every `i` in `C_k`
/// gains `C * prod_{j in C_k, j != i}(1 - q_j)`; background-compatible
/// pixels penalize covering locations via [`bg_gradient`].
pub fn grad_high_order<T: Real>(
    q: &[T],
    comp: &CompatibleExplanations,
    table: &ProjectionTable,
    bundle: &PotentialBundle<T>,
) -> Vec<T> {
    let c_eps = bundle.pattern_cost();
    let o = bundle.occlusion.visibility();
    let mut g = vec![T::zero(); q.len()];
    for (ce, ct) in comp.cameras.iter().zip(&table.cameras) {
        for (k, list) in ce.lists.iter().enumerate() {
            if !ce.foreground[k] {
                continue;
            }
            for (a, &i) in list.iter().enumerate() {
                let mut prod = T::one();
                for (b, &j) in list.iter().enumerate() {
                    if a != b {
                        prod *= T::one() - q[j as usize];
                    }
                }
                g[i as usize] += c_eps * prod;
            }
        }
        bg_gradient(&mut g, q, ce, ct, c_eps, o);
    }
    g
}

/// One arrangement cell of a location's rectangle: pixels whose relative
/// coordinates fall in exactly the mode boxes of `subset`.
#[derive(Debug, Clone, Copy)]
struct PlanCell {
    rect: Rect,
    subset: u32,
    slot: u32,
}

#[derive(Debug, Clone)]
struct CameraPlan {
    /// Activation mask per pixel.
    masks: Vec<u32>,
    /// Distinct cell subsets, sorted; one masked summed-area table each.
    subsets: Vec<u32>,
    /// Arrangement cells per location.
    cells: Vec<Vec<PlanCell>>,
}

/// Precomputed acceleration structure for [`grad_high_order_fast`]. Built
/// once per inference; only `q` changes between sweeps.
#[derive(Debug, Clone)]
pub struct HighOrderPlan<T> {
    comp: CompatibleExplanations,
    cameras: Vec<CameraPlan>,
    bank_len: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> HighOrderPlan<T> {
    pub fn build(
        binary: &[BinaryField],
        table: &ProjectionTable,
        bank: &GaussianModeBank<T>,
    ) -> Result<Self> {
        let comp = compatible_explanations(binary, table, bank)?;
        let mut cameras = Vec::with_capacity(binary.len());
        for (bf, ct) in binary.iter().zip(&table.cameras) {
            let pixels = ct.width * ct.height;
            let masks: Vec<u32> = (0..pixels).map(|k| bf.mask(k)).collect();
            let mut subset_set = BTreeSet::new();
            let mut cells: Vec<Vec<PlanCell>> = vec![Vec::new(); table.cells];
            for (i, pr) in ct.rects.iter().enumerate() {
                let Some(pr) = pr else { continue };
                let r = pr.rect;
                let ranges: Vec<Option<Rect>> =
                    (0..bank.len()).map(|m| mode_pixel_rect(bank, m, r)).collect();
                let mut xs = vec![r.x0, r.x1 + 1];
                let mut ys = vec![r.y0, r.y1 + 1];
                for mr in ranges.iter().flatten() {
                    xs.extend([mr.x0, mr.x1 + 1]);
                    ys.extend([mr.y0, mr.y1 + 1]);
                }
                xs.sort_unstable();
                xs.dedup();
                ys.sort_unstable();
                ys.dedup();
                for w in ys.windows(2) {
                    let (ya, yb) = (w[0], w[1] - 1);
                    for v in xs.windows(2) {
                        let (xa, xb) = (v[0], v[1] - 1);
                        let mut subset = 0u32;
                        for (m, mr) in ranges.iter().enumerate() {
                            if let Some(mr) = mr {
                                if mr.x0 <= xa && xb <= mr.x1 && mr.y0 <= ya && yb <= mr.y1 {
                                    subset |= 1 << m;
                                }
                            }
                        }
                        if subset != 0 {
                            subset_set.insert(subset);
                            let rect = Rect { x0: xa, y0: ya, x1: xb, y1: yb };
                            cells[i].push(PlanCell { rect, subset, slot: 0 });
                        }
                    }
                }
            }
            let subsets: Vec<u32> = subset_set.into_iter().collect();
            for loc in &mut cells {
                for cell in loc {
                    cell.slot = subsets.binary_search(&cell.subset).unwrap() as u32;
                }
            }
            cameras.push(CameraPlan { masks, subsets, cells });
        }
        Ok(HighOrderPlan { comp, cameras, bank_len: bank.len(), _marker: Default::default() })
    }

    pub fn explanations(&self) -> &CompatibleExplanations {
        &self.comp
    }

    pub fn mode_count(&self) -> usize {
        self.bank_len
    }
}

/// Below this headroom `1 - q_i`, the summed-area shortcut divides by a
/// number small enough to amplify cancellation noise past tolerance; such
/// locations take the literal per-pixel route instead.
const DIVISION_HEADROOM: f64 = 0.1;

/// Pattern gradient via per-subset summed-area tables over the unexplained
/// mass `A_k = prod_{j in C_k}(1 - q_j)`; equals [`grad_high_order`] within
/// `1e-6` per component.
pub fn grad_high_order_fast<T: Real>(
    q: &[T],
    plan: &HighOrderPlan<T>,
    table: &ProjectionTable,
    bundle: &PotentialBundle<T>,
) -> Vec<T> {
    let c_eps = bundle.pattern_cost();
    let o = bundle.occlusion.visibility();
    let headroom = T::of(DIVISION_HEADROOM);
    let mut g = vec![T::zero(); q.len()];
    for ((cp, ce), ct) in plan.cameras.iter().zip(&plan.comp.cameras).zip(&table.cameras) {
        let pixels = cp.masks.len();
        let mut unexplained = vec![T::one(); pixels];
        for (k, u) in unexplained.iter_mut().enumerate() {
            if cp.masks[k] != 0 {
                for &j in &ce.lists[k] {
                    *u *= T::one() - q[j as usize];
                }
            }
        }
        let sats: Vec<Sat<T>> = cp
            .subsets
            .iter()
            .map(|&s| {
                let map: Vec<T> = (0..pixels)
                    .map(|k| if cp.masks[k] & s != 0 { unexplained[k] } else { T::zero() })
                    .collect();
                Sat::build(&map, ct.width, ct.height)
            })
            .collect();
        for (i, cells) in cp.cells.iter().enumerate() {
            if cells.is_empty() {
                continue;
            }
            let keep = T::one() - q[i];
            if keep >= headroom {
                let mut sum = T::zero();
                for cell in cells {
                    sum += sats[cell.slot as usize].query(cell.rect);
                }
                g[i] += c_eps * sum / keep;
            } else {
                for cell in cells {
                    for ky in cell.rect.y0..=cell.rect.y1 {
                        for kx in cell.rect.x0..=cell.rect.x1 {
                            let k = ct.pixel(kx, ky);
                            if cp.masks[k] & cell.subset != 0 {
                                let mut prod = T::one();
                                for &j in &ce.lists[k] {
                                    if j as usize != i {
                                        prod *= T::one() - q[j as usize];
                                    }
                                }
                                g[i] += c_eps * prod;
                            }
                        }
                    }
                }
            }
        }
        bg_gradient(&mut g, q, ce, ct, c_eps, o);
    }
    g
}

/// Binary pattern energy of an assignment, the target the pattern gradient
/// chases: each unexplained foreground pixel costs `C`, and each
/// background-compatible pixel covered by some occupied location costs
/// `C * o` (the simple-model mismatch indicator, visibility-weighted).
pub fn pattern_energy<T: Real>(
    z: &[bool],
    comp: &CompatibleExplanations,
    table: &ProjectionTable,
    bundle: &PotentialBundle<T>,
) -> T {
    let c_eps = bundle.pattern_cost();
    let o = bundle.occlusion.visibility();
    let mut total = T::zero();
    for (ce, ct) in comp.cameras.iter().zip(&table.cameras) {
        for (k, list) in ce.lists.iter().enumerate() {
            if ce.foreground[k] {
                if !list.iter().any(|&i| z[i as usize]) {
                    total -= c_eps;
                }
            } else if ce.background[k] && ct.cover[k].iter().any(|&i| z[i as usize]) {
                total -= c_eps * o;
            }
        }
    }
    total
}

/// Mean-field objective surrogate: minus the expected energy under `Q`, with
/// the pattern terms in closed form. Decreasing is improving.
pub fn free_energy<T: Real>(
    q: &[T],
    comp: Option<&CompatibleExplanations>,
    table: &ProjectionTable,
    grid: &GroundGrid,
    bundle: &PotentialBundle<T>,
) -> T {
    let mut energy = T::zero();
    if let Some(unary) = &bundle.unary {
        for (i, &qi) in q.iter().enumerate() {
            energy += qi * bundle.unary_scale * unary.max_log_odds(i);
        }
    }
    let r = bundle.pairwise.radius() as i64;
    for i in 0..q.len() {
        let (row, col) = grid.row_col(i);
        for dy in 0..=r {
            let lo = if dy == 0 { 1 } else { -r };
            for dx in lo..=r {
                let nr = row as i64 + dy;
                let nc = col as i64 + dx;
                if nr < 0 || nc < 0 || nr >= grid.rows as i64 || nc >= grid.cols as i64 {
                    continue;
                }
                let j = grid.index(nr as usize, nc as usize);
                energy -= bundle.pairwise.at(dx.unsigned_abs() as usize, dy as usize)
                    * q[i]
                    * q[j];
            }
        }
    }
    if let Some(comp) = comp {
        let c_eps = bundle.pattern_cost();
        let o = bundle.occlusion.visibility();
        for (ce, ct) in comp.cameras.iter().zip(&table.cameras) {
            for (k, list) in ce.lists.iter().enumerate() {
                if ce.foreground[k] {
                    let mut unexplained = T::one();
                    for &j in list {
                        unexplained *= T::one() - q[j as usize];
                    }
                    energy -= c_eps * unexplained;
                } else if ce.background[k] {
                    let mut none_show = T::one();
                    for &j in &ct.cover[k] {
                        none_show *= T::one() - q[j as usize];
                    }
                    energy -= c_eps * o * (T::one() - none_show);
                }
            }
        }
    }
    -energy
}

#[derive(Debug, Clone)]
pub struct InferenceDiagnostics<T> {
    /// Objective before the first sweep and after each one.
    pub free_energy: Vec<T>,
    pub iterations: usize,
    /// Locations no camera sees, frozen at the prior.
    pub uncovered: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct InferenceResult<T> {
    pub q: Vec<T>,
    pub diagnostics: InferenceDiagnostics<T>,
}

/// Runs mean-field sweeps on the model and returns the occupancy map.
///
/// The fields are thresholded once up front; the high-order gradient uses
/// the accelerated path. `Simple` mode keeps only the background flags and
/// treats every non-background pixel as a single full-body activation.
pub fn mean_field_infer<T: Real>(
    model: &EnergyModel<'_, T>,
    cfg: &InferenceConfig<T>,
) -> Result<InferenceResult<T>> {
    cfg.validate()?;
    let n = model.grid.cells();
    let bundle = model.bundle;
    let unary_gap = match (&bundle.unary, bundle.unary_scale > T::zero()) {
        (Some(_), _) => grad_unary(bundle, n)?,
        (None, true) => return Err(Error::MissingUnaries),
        (None, false) => vec![T::zero(); n],
    };
    let simple_bank;
    let plan = match model.high_order {
        HighOrderMode::Off => None,
        HighOrderMode::Full => {
            let binary: Vec<BinaryField> =
                model.fields.iter().map(|f| threshold_field(f, cfg.tau_b, cfg.tau_h)).collect();
            Some(HighOrderPlan::build(&binary, model.table, model.bank)?)
        }
        HighOrderMode::Simple => {
            simple_bank = GaussianModeBank::<T>::body_grid(1, 1)?;
            let binary: Vec<BinaryField> = model
                .fields
                .iter()
                .map(|f| {
                    let bg: Vec<bool> =
                        (0..f.pixels()).map(|k| f.background(k) >= cfg.tau_b).collect();
                    let mask: Vec<u32> = bg.iter().map(|&b| if b { 0 } else { 1 }).collect();
                    BinaryField::from_parts(f.width, f.height, 1, bg, mask)
                })
                .collect::<Result<_>>()?;
            Some(HighOrderPlan::build(&binary, model.table, &simple_bank)?)
        }
    };
    if model.fields.len() != model.table.cameras.len() {
        return Err(Error::param("one observation field per camera required"));
    }

    let uncovered = model.table.uncovered();
    let frozen: Vec<bool> = {
        let mut f = vec![false; n];
        for &i in &uncovered {
            f[i as usize] = true;
        }
        f
    };

    let comp = plan.as_ref().map(|p| p.explanations());
    let mut state = MeanFieldState::new(n, cfg.prior);
    let mut trace =
        vec![free_energy(state.q(), comp, model.table, model.grid, bundle)];
    let mut iterations = 0;
    for _ in 0..cfg.iterations {
        let mut g = grad_pairwise(state.q(), bundle, model.grid);
        for (gi, ui) in g.iter_mut().zip(&unary_gap) {
            *gi += *ui;
        }
        if let Some(plan) = &plan {
            let gh = grad_high_order_fast(state.q(), plan, model.table, bundle);
            for (gi, hi) in g.iter_mut().zip(&gh) {
                *gi += *hi;
            }
        }
        for (gi, &f) in g.iter_mut().zip(&frozen) {
            if f {
                *gi = T::zero();
            }
        }
        let max_delta = state.apply(&g, cfg.step);
        iterations += 1;
        trace.push(free_energy(state.q(), comp, model.table, model.grid, bundle));
        if let Some(tol) = cfg.early_stop {
            if max_delta < tol {
                break;
            }
        }
    }
    let q = state.q().to_vec();
    Ok(InferenceResult {
        q,
        diagnostics: InferenceDiagnostics { free_energy: trace, iterations, uncovered },
    })
}

/// Exact posterior over all `2^N` assignments.
#[derive(Debug, Clone)]
pub struct ExactPosterior<T> {
    pub marginals: Vec<T>,
    pub log_partition: T,
    pub map: Vec<bool>,
}

/// Upper bound on enumerable problem sizes.
pub const ENUMERATION_LIMIT: usize = 20;

fn enumerate_energies<T: Real>(model: &EnergyModel<'_, T>) -> Result<Vec<T>> {
    let n = model.grid.cells();
    if n > ENUMERATION_LIMIT {
        return Err(Error::TooLarge(format!("{n} locations exceed the enumeration limit")));
    }
    let mut energies = Vec::with_capacity(1 << n);
    let mut z = vec![false; n];
    for code in 0u32..(1u32 << n) {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = code >> i & 1 == 1;
        }
        energies.push(model.total_energy(&z)?);
    }
    Ok(energies)
}

/// Enumerates `P(Z) = exp(psi(Z)) / partition` exactly. Feasible for
/// `N <= 20` only.
pub fn exact_posterior_enumeration<T: Real>(
    model: &EnergyModel<'_, T>,
) -> Result<ExactPosterior<T>> {
    let n = model.grid.cells();
    let energies = enumerate_energies(model)?;
    let peak = energies.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let total: T = energies.iter().map(|&e| (e - peak).exp()).sum();
    let log_partition = peak + total.ln();
    let mut marginals = vec![T::zero(); n];
    let mut best = 0usize;
    for (code, &e) in energies.iter().enumerate() {
        let p = (e - log_partition).exp();
        for (i, m) in marginals.iter_mut().enumerate() {
            if code >> i & 1 == 1 {
                *m += p;
            }
        }
        if e > energies[best] {
            best = code;
        }
    }
    let map = (0..n).map(|i| best >> i & 1 == 1).collect();
    Ok(ExactPosterior { marginals, log_partition, map })
}

/// `KL(Q || P)` between the factorized `Q` given by `q` and the exact
/// posterior of the model, by full enumeration.
pub fn kl_to_exact<T: Real>(q: &[T], model: &EnergyModel<'_, T>) -> Result<T> {
    let n = model.grid.cells();
    if q.len() != n {
        return Err(Error::param("q length does not match the grid"));
    }
    let energies = enumerate_energies(model)?;
    let peak = energies.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let total: T = energies.iter().map(|&e| (e - peak).exp()).sum();
    let log_partition = peak + total.ln();
    let mut expected = T::zero();
    for (code, &e) in energies.iter().enumerate() {
        let mut w = T::one();
        for (i, &qi) in q.iter().enumerate() {
            w *= if code >> i & 1 == 1 { qi } else { T::one() - qi };
        }
        expected += w * e;
    }
    let entropy_neg: T = q
        .iter()
        .map(|&qi| qi * qi.ln() + (T::one() - qi) * (T::one() - qi).ln())
        .sum();
    Ok(entropy_neg - expected + log_partition)
}
