//! Parameter fitting without labels from images: displacement-sample
//! collection, diagonal-Gaussian mixture EM, energy-scale grid search, unary
//! score calibration, and the unsupervised self-training loop.

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{GaussianMode, GaussianModeBank, ObservationField};
use crate::geometry::{GroundGrid, ProjectionTable};
use crate::inference::{default_thresholds, mean_field_infer, InferenceConfig};
use crate::metrics::{extract_detections, hungarian_match, moda, truth_points};
use crate::potentials::{EnergyModel, HighOrderMode, PotentialBundle, UnaryScores};
use crate::scalar::Real;
use crate::scene::{render_observation_sample, OcclusionParams, PixelObservation, SceneFrame};

/// Lower bound on fitted standard deviations.
const STD_FLOOR: f64 = 0.01;

/// Responsibility mass below which a mode counts as degenerate.
const DEGENERATE_MASS: f64 = 1e-8;

/// Where one displacement sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOrigin {
    pub frame: usize,
    pub camera: usize,
    pub pixel: usize,
}

/// Foreground displacement observations pooled over frames and cameras.
#[derive(Debug, Clone)]
pub struct DisplacementSamples<T> {
    pub values: Vec<[T; 2]>,
    pub origins: Vec<SampleOrigin>,
}

impl<T: Real> DisplacementSamples<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Renders every frame in every camera and keeps the claimed (non-background)
/// pixel displacements. Empty collections cannot seed a fit and error out.
pub fn collect_displacement_samples<T: Real>(
    frames: &[SceneFrame],
    table: &ProjectionTable,
    params: &OcclusionParams<T>,
    rng: &mut impl Rng,
) -> Result<DisplacementSamples<T>> {
    if frames.is_empty() {
        return Err(Error::param("sample collection needs at least one frame"));
    }
    let mut values = Vec::new();
    let mut origins = Vec::new();
    for frame in frames {
        for cam in 0..table.cameras.len() {
            let obs = render_observation_sample(frame, table, cam, params, rng);
            for (pixel, po) in obs.iter().enumerate() {
                if let PixelObservation::Displacement(x) = po {
                    values.push(*x);
                    origins.push(SampleOrigin { frame: frame.frame, camera: cam, pixel });
                }
            }
        }
    }
    if values.is_empty() {
        return Err(Error::Infeasible("no foreground pixels to sample from".into()));
    }
    Ok(DisplacementSamples { values, origins })
}

/// Mixture-fit trace. The log-likelihood is non-decreasing across EM
/// iterations (within 1e-8) except immediately after a reseed.
#[derive(Debug, Clone)]
pub struct FitReport<T> {
    /// One entry per EM iteration, evaluated after that iteration's M-step.
    pub log_likelihood: Vec<T>,
    /// Final mixture weights.
    pub weights: Vec<T>,
    /// Iterations in which a degenerate mode was reseeded.
    pub reseeded: Vec<usize>,
}

fn log_density<T: Real>(x: [T; 2], weights: &[T], modes: &[GaussianMode<T>]) -> T {
    let mut total = T::zero();
    for (w, m) in weights.iter().zip(modes) {
        total += *w * crate::field::normal2(x, m);
    }
    total.max(T::of(1e-300)).ln()
}

fn global_moments<T: Real>(values: &[[T; 2]]) -> ([T; 2], [T; 2]) {
    let n = T::of(values.len() as f64);
    let mut mean = [T::zero(); 2];
    for v in values {
        mean[0] += v[0];
        mean[1] += v[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut var = [T::zero(); 2];
    for v in values {
        var[0] += (v[0] - mean[0]) * (v[0] - mean[0]);
        var[1] += (v[1] - mean[1]) * (v[1] - mean[1]);
    }
    let floor = T::of(STD_FLOOR);
    ([mean[0], mean[1]], [(var[0] / n).sqrt().max(floor), (var[1] / n).sqrt().max(floor)])
}

/// Deterministic k-means++-style seeding: start at the sample nearest the
/// global mean, then repeatedly take the sample farthest from every chosen
/// center.
fn seed_means<T: Real>(values: &[[T; 2]], m: usize) -> Vec<[T; 2]> {
    let (mean, _) = global_moments(values);
    let d2 = |a: [T; 2], b: [T; 2]| {
        (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])
    };
    let first = values
        .iter()
        .enumerate()
        .min_by(|a, b| d2(*a.1, mean).partial_cmp(&d2(*b.1, mean)).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut centers = vec![values[first]];
    let mut nearest: Vec<T> = values.iter().map(|&v| d2(v, values[first])).collect();
    while centers.len() < m {
        let (best, &far) = nearest
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let c = if far > T::of(1e-12) {
            values[best]
        } else {
            // Too few distinct samples: spiral the remaining centers out.
            let k = T::of(centers.len() as f64);
            [centers[0][0] + k * T::of(1e-3), centers[0][1] - k * T::of(1e-3)]
        };
        for (nv, v) in nearest.iter_mut().zip(values) {
            let d = d2(*v, c);
            if d < *nv {
                *nv = d;
            }
        }
        centers.push(c);
    }
    centers
}

/// Stops EM once no parameter moved more than this in one iteration.
const EM_STATIONARY: f64 = 1e-9;

fn em_rounds<T: Real>(
    values: &[[T; 2]],
    weights: &mut [T],
    modes: &mut [GaussianMode<T>],
    em_iters: usize,
) -> (Vec<T>, Vec<usize>) {
    let n = values.len();
    let m = modes.len();
    let floor = T::of(STD_FLOOR);
    let mut ll_trace = Vec::with_capacity(em_iters);
    let mut reseeded = Vec::new();
    let mut resp = vec![T::zero(); m];
    let mut mass = vec![T::zero(); m];
    let mut mx = vec![[T::zero(); 2]; m];
    let mut vx = vec![[T::zero(); 2]; m];
    for iter in 0..em_iters {
        let before: Vec<(T, [T; 2], [T; 2])> = weights
            .iter()
            .zip(modes.iter())
            .map(|(w, md)| (*w, md.mean, md.std))
            .collect();
        for k in 0..m {
            mass[k] = T::zero();
            mx[k] = [T::zero(); 2];
            vx[k] = [T::zero(); 2];
        }
        // E-step accumulated straight into M-step sums (two passes for the
        // variance around the fresh means).
        for &x in values {
            let mut total = T::zero();
            for k in 0..m {
                resp[k] = weights[k] * crate::field::normal2(x, &modes[k]);
                total += resp[k];
            }
            if !total.is_finite() || total <= T::zero() {
                let u = T::one() / T::of(m as f64);
                for r in resp.iter_mut() {
                    *r = u;
                }
                total = T::one();
            }
            for k in 0..m {
                let r = resp[k] / total;
                mass[k] += r;
                mx[k][0] += r * x[0];
                mx[k][1] += r * x[1];
            }
        }
        let mut reseed_now = false;
        for k in 0..m {
            if mass[k].as_f64() < DEGENERATE_MASS {
                reseed_now = true;
                continue;
            }
            modes[k].mean = [mx[k][0] / mass[k], mx[k][1] / mass[k]];
        }
        for &x in values {
            let mut total = T::zero();
            for k in 0..m {
                resp[k] = weights[k] * crate::field::normal2(x, &modes[k]);
                total += resp[k];
            }
            if !total.is_finite() || total <= T::zero() {
                let u = T::one() / T::of(m as f64);
                for r in resp.iter_mut() {
                    *r = u;
                }
                total = T::one();
            }
            for k in 0..m {
                let r = resp[k] / total;
                let dx = x[0] - modes[k].mean[0];
                let dy = x[1] - modes[k].mean[1];
                vx[k][0] += r * dx * dx;
                vx[k][1] += r * dy * dy;
            }
        }
        for k in 0..m {
            if mass[k].as_f64() < DEGENERATE_MASS {
                continue;
            }
            modes[k].std = [
                (vx[k][0] / mass[k]).sqrt().max(floor),
                (vx[k][1] / mass[k]).sqrt().max(floor),
            ];
            weights[k] = mass[k] / T::of(n as f64);
        }
        if reseed_now {
            // Move each starved mode to the sample farthest from the live
            // means and restart it wide.
            let (_, gstd) = global_moments(values);
            for k in 0..m {
                if mass[k].as_f64() >= DEGENERATE_MASS {
                    continue;
                }
                let far = values
                    .iter()
                    .max_by(|a, b| {
                        let da: T = modes
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| mass[*j].as_f64() >= DEGENERATE_MASS)
                            .map(|(_, md)| {
                                (a[0] - md.mean[0]) * (a[0] - md.mean[0])
                                    + (a[1] - md.mean[1]) * (a[1] - md.mean[1])
                            })
                            .fold(T::infinity(), T::min);
                        let db: T = modes
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| mass[*j].as_f64() >= DEGENERATE_MASS)
                            .map(|(_, md)| {
                                (b[0] - md.mean[0]) * (b[0] - md.mean[0])
                                    + (b[1] - md.mean[1]) * (b[1] - md.mean[1])
                            })
                            .fold(T::infinity(), T::min);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                modes[k] = GaussianMode { mean: *far, std: gstd };
                weights[k] = T::one() / T::of(n as f64);
            }
            let total: T = weights.iter().copied().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
            reseeded.push(iter);
        }
        let ll: T = values.iter().map(|&x| log_density(x, weights, modes)).sum();
        ll_trace.push(ll);
        let moved = before
            .iter()
            .zip(weights.iter().zip(modes.iter()))
            .map(|((w0, m0, s0), (w1, md))| {
                let mut d = (*w1 - *w0).abs();
                for a in 0..2 {
                    d = d.max((md.mean[a] - m0[a]).abs()).max((md.std[a] - s0[a]).abs());
                }
                d
            })
            .fold(T::zero(), T::max);
        if moved < T::of(EM_STATIONARY) {
            break;
        }
    }
    (ll_trace, reseeded)
}

fn finish_fit<T: Real>(
    mut weights: Vec<T>,
    modes: Vec<GaussianMode<T>>,
    ll: Vec<T>,
    reseeded: Vec<usize>,
    canonical: bool,
) -> Result<(GaussianModeBank<T>, FitReport<T>)> {
    for w in ll.windows(2) {
        if w[1] < w[0] - T::of(1e-8) {
            // Reseeds legitimately dent the objective; anything else is a bug.
            let idx = ll.iter().position(|v| *v == w[1]).unwrap_or(0);
            if !reseeded.contains(&idx) {
                return Err(Error::Numeric(format!(
                    "EM objective decreased: {} -> {}",
                    w[0], w[1]
                )));
            }
        }
    }
    // Coincident means would be rejected by the bank; nudge deterministically.
    let mut modes = modes;
    let eps = T::of(2e-6);
    for i in 0..modes.len() {
        for j in 0..i {
            let dx = (modes[i].mean[0] - modes[j].mean[0]).abs();
            let dy = (modes[i].mean[1] - modes[j].mean[1]).abs();
            if dx <= T::of(1e-6) && dy <= T::of(1e-6) {
                modes[i].mean[0] += eps * T::of((i + 1) as f64);
            }
        }
    }
    let mut bank = GaussianModeBank::new(modes)?;
    if canonical {
        bank.canonicalize();
    }
    Ok((bank, FitReport { log_likelihood: ll, weights: std::mem::take(&mut weights), reseeded }))
}

/// Fits an `m`-mode diagonal-covariance mixture to the samples by EM with
/// deterministic k-means++-style seeding. The returned bank is in canonical
/// order.
pub fn fit_mode_bank<T: Real>(
    samples: &DisplacementSamples<T>,
    m: usize,
    em_iters: usize,
) -> Result<(GaussianModeBank<T>, FitReport<T>)> {
    if m == 0 {
        return Err(Error::param("mixture needs at least one mode"));
    }
    if samples.len() < 10 * m {
        return Err(Error::param(format!(
            "need at least {} samples to fit {m} modes, got {}",
            10 * m,
            samples.len()
        )));
    }
    if em_iters == 0 {
        return Err(Error::param("EM needs at least one iteration"));
    }
    let (_, gstd) = global_moments(&samples.values);
    let mut modes: Vec<GaussianMode<T>> =
        seed_means(&samples.values, m).into_iter().map(|mean| GaussianMode { mean, std: gstd }).collect();
    let mut weights = vec![T::one() / T::of(m as f64); m];
    let (ll, reseeded) = em_rounds(&samples.values, &mut weights, &mut modes, em_iters);
    finish_fit(weights, modes, ll, reseeded, true)
}

/// Warm refit from an existing bank: mode ORDER IS PRESERVED so observation
/// field planes keep their meaning across refits. `init_weights`, when given,
/// must align with the bank; otherwise weights restart uniform.
pub fn fit_mode_bank_from<T: Real>(
    samples: &DisplacementSamples<T>,
    init: &GaussianModeBank<T>,
    init_weights: Option<&[T]>,
    em_iters: usize,
) -> Result<(GaussianModeBank<T>, FitReport<T>)> {
    if samples.len() < 10 * init.len() {
        return Err(Error::param("too few samples for a warm refit"));
    }
    if em_iters == 0 {
        return Err(Error::param("EM needs at least one iteration"));
    }
    let mut modes = init.modes().to_vec();
    let mut weights = match init_weights {
        Some(w) => {
            if w.len() != init.len() {
                return Err(Error::param("initial weights must align with the bank"));
            }
            if w.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
                return Err(Error::param("initial weights must be positive and finite"));
            }
            let total: T = w.iter().copied().sum();
            w.iter().map(|v| *v / total).collect()
        }
        None => vec![T::one() / T::of(init.len() as f64); init.len()],
    };
    let (ll, reseeded) = em_rounds(&samples.values, &mut weights, &mut modes, em_iters);
    finish_fit(weights, modes, ll, reseeded, false)
}

/// Labeled data for scale search: per-frame truth, per-frame-per-camera
/// observation fields, per-frame unary scores.
pub struct LabeledScene<'a, T> {
    pub frames: &'a [SceneFrame],
    pub fields: &'a [Vec<ObservationField<T>>],
    pub unaries: &'a [UnaryScores<T>],
}

impl<T: Real> LabeledScene<'_, T> {
    fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::param("grid search needs at least one labeled frame"));
        }
        if self.fields.len() != self.frames.len() || self.unaries.len() != self.frames.len() {
            return Err(Error::param("frames, fields and unaries must align"));
        }
        Ok(())
    }
}

/// Scale-search outcome: the winning pair plus every evaluated row.
#[derive(Debug, Clone)]
pub struct ScaleSearch<T> {
    pub best_unary: T,
    pub best_high_order: T,
    /// `(mu_u, mu_h, mean MODA)` per candidate pair, in evaluation order.
    pub scores: Vec<(T, T, T)>,
}

fn mean_frame_moda<T: Real>(
    scene: &LabeledScene<'_, T>,
    bundle_for: impl Fn(usize) -> Result<PotentialBundle<T>>,
    bank: &GaussianModeBank<T>,
    table: &ProjectionTable,
    grid: &GroundGrid,
    cfg: &InferenceConfig<T>,
    radius: T,
) -> Result<T> {
    let mut total = T::zero();
    let mut counted = 0usize;
    for (f, frame) in scene.frames.iter().enumerate() {
        let bundle = bundle_for(f)?;
        let model = EnergyModel {
            bundle: &bundle,
            fields: &scene.fields[f],
            bank,
            table,
            grid,
            high_order: HighOrderMode::Full,
        };
        let q = mean_field_infer(&model, cfg)?.q;
        let dets = extract_detections(&q, grid, T::of(0.5), frame.frame)?;
        let truth = truth_points::<T>(&frame.occupancy, grid)?;
        let m = hungarian_match(&dets.detections, &truth, radius)?;
        match moda(&m) {
            Ok(s) => {
                total += s;
                counted += 1;
            }
            Err(_) => continue,
        }
    }
    if counted == 0 {
        return Err(Error::Infeasible("no frame had a defined MODA".into()));
    }
    Ok(total / T::of(counted as f64))
}

/// Exhaustive search over candidate scale pairs, scored by mean MODA at
/// `radius`. Ties prefer the smaller high-order scale, then the smaller
/// unary scale.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_scales<T: Real>(
    unary_candidates: &[T],
    high_order_candidates: &[T],
    scene: &LabeledScene<'_, T>,
    table: &ProjectionTable,
    bank: &GaussianModeBank<T>,
    grid: &GroundGrid,
    base: &PotentialBundle<T>,
    cfg: &InferenceConfig<T>,
    radius: T,
) -> Result<ScaleSearch<T>> {
    if unary_candidates.is_empty() || high_order_candidates.is_empty() {
        return Err(Error::param("candidate lists must be nonempty"));
    }
    for &c in unary_candidates.iter().chain(high_order_candidates) {
        if !(c >= T::zero() && c.is_finite()) {
            return Err(Error::param("candidate scales must be finite and nonnegative"));
        }
    }
    scene.validate()?;
    let mut scores = Vec::with_capacity(unary_candidates.len() * high_order_candidates.len());
    let mut best: Option<(T, T, T)> = None;
    for &u in unary_candidates {
        for &h in high_order_candidates {
            let score = mean_frame_moda(
                scene,
                |f| {
                    PotentialBundle::new(
                        u,
                        h,
                        base.pairwise.clone(),
                        base.occlusion,
                        base.epsilon,
                        Some(scene.unaries[f].clone()),
                    )
                },
                bank,
                table,
                grid,
                cfg,
                radius,
            )?;
            scores.push((u, h, score));
            let better = match best {
                None => true,
                Some((bu, bh, bs)) => {
                    score > bs
                        || (score == bs && (h < bh || (h == bh && u < bu)))
                }
            };
            if better {
                best = Some((u, h, score));
            }
        }
    }
    let (best_unary, best_high_order, _) = best.unwrap();
    Ok(ScaleSearch { best_unary, best_high_order, scores })
}

/// Two-scalar logistic recalibration of presence scores:
/// `s' = sigmoid(a * logit(s) + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnaryCalibration<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> UnaryCalibration<T> {
    pub fn identity() -> Self {
        UnaryCalibration { a: T::one(), b: T::zero() }
    }

    pub fn apply(&self, s: T) -> T {
        let lo = T::of(1e-6);
        let hi = T::one() - lo;
        (self.a * s.clampf(lo, hi).logit() + self.b).sigmoid().clampf(lo, hi)
    }
}

/// Fits the calibration by Newton descent on the regularized logistic loss;
/// the regularizer pulls gently toward the identity, keeping
/// perfectly-separated data finite.
pub fn fit_unary_calibration<T: Real>(scores: &[T], labels: &[bool]) -> Result<UnaryCalibration<T>> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::param("calibration needs aligned, nonempty scores and labels"));
    }
    let lo = T::of(1e-6);
    let hi = T::one() - lo;
    let ts: Vec<T> = scores.iter().map(|&s| s.clampf(lo, hi).logit()).collect();
    let n = T::of(scores.len() as f64);
    let lambda = T::of(1e-3) * n;
    let mut a = T::one();
    let mut b = T::zero();
    for _ in 0..30 {
        let mut ga = lambda * (a - T::one());
        let mut gb = lambda * b;
        let (mut haa, mut hab, mut hbb) = (lambda, T::zero(), lambda);
        for (&t, &y) in ts.iter().zip(labels) {
            let p = (a * t + b).sigmoid();
            let e = p - if y { T::one() } else { T::zero() };
            ga += e * t;
            gb += e;
            let w = p * (T::one() - p);
            haa += w * t * t;
            hab += w * t;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if !det.is_finite() || det.abs() <= T::zero() {
            return Err(Error::Numeric("singular Hessian in calibration".into()));
        }
        let da = (gb * hab - ga * hbb) / det;
        let db = (ga * hab - gb * haa) / det;
        a = (a + da).clampf(T::of(-50.0), T::of(50.0));
        b = (b + db).clampf(T::of(-50.0), T::of(50.0));
        if da.abs() + db.abs() < T::of(1e-12) {
            break;
        }
    }
    Ok(UnaryCalibration { a, b })
}

/// Unsupervised EM knobs.
#[derive(Debug, Clone, Copy)]
pub struct EmConfig<T> {
    pub rounds: usize,
    /// Hard `Z ~ Q` draws per frame per round.
    pub samples_per_frame: usize,
    /// Mixture EM iterations inside each round's refit.
    pub em_iters: usize,
    /// MODA radius for the (diagnostic-only) per-round score.
    pub radius: T,
}

impl<T: Real> Default for EmConfig<T> {
    fn default() -> Self {
        EmConfig { rounds: 6, samples_per_frame: 1, em_iters: 25, radius: T::of(0.5) }
    }
}

/// Per-round self-training diagnostics.
#[derive(Debug, Clone)]
pub struct EmRound<T> {
    pub round: usize,
    /// Largest posterior anywhere this round (collapse indicator).
    pub peak_q: T,
    /// Displacement samples collected from the sampled occupancy.
    pub samples: usize,
    /// Mean MODA against held-out truth; diagnostic only.
    pub moda: Option<T>,
}

/// Self-training outcome.
#[derive(Debug, Clone)]
pub struct EmOutcome<T> {
    pub bank: GaussianModeBank<T>,
    pub calibration: UnaryCalibration<T>,
    pub rounds: Vec<EmRound<T>>,
}

/// Unsupervised EM: infer occupancy with the current parameters, draw hard
/// `Z ~ Q`, re-collect displacement samples treating the draw as ground
/// truth, warm-refit the mode bank and recalibrate the unaries; repeat.
/// Truth, when given, only scores diagnostics and never influences fitting.
#[allow(clippy::too_many_arguments)]
pub fn unsupervised_em<T: Real>(
    fields: &[Vec<ObservationField<T>>],
    raw_unaries: &[UnaryScores<T>],
    truth: Option<&[SceneFrame]>,
    initial_bank: &GaussianModeBank<T>,
    table: &ProjectionTable,
    grid: &GroundGrid,
    base: &PotentialBundle<T>,
    cfg: &InferenceConfig<T>,
    em: &EmConfig<T>,
    rng: &mut impl Rng,
) -> Result<EmOutcome<T>> {
    if fields.is_empty() || fields.len() != raw_unaries.len() {
        return Err(Error::param("fields and unaries must align and be nonempty"));
    }
    if let Some(t) = truth {
        if t.len() != fields.len() {
            return Err(Error::param("truth must align with fields"));
        }
    }
    if em.samples_per_frame == 0 {
        return Err(Error::param("samples_per_frame must be at least 1"));
    }
    let mut bank = initial_bank.clone();
    let mut bank_weights: Option<Vec<T>> = None;
    let mut calibration = UnaryCalibration::<T>::identity();
    let mut rounds = Vec::with_capacity(em.rounds);
    for round in 0..em.rounds {
        let mut peak_q = T::zero();
        let mut sampled_frames: Vec<SceneFrame> = Vec::new();
        let mut calib_scores: Vec<T> = Vec::new();
        let mut calib_labels: Vec<bool> = Vec::new();
        let mut moda_total = T::zero();
        let mut moda_count = 0usize;
        for (f, frame_fields) in fields.iter().enumerate() {
            let unary = raw_unaries[f].map(|s| calibration.apply(s))?;
            let bundle = PotentialBundle::new(
                base.unary_scale,
                base.high_order_scale,
                base.pairwise.clone(),
                base.occlusion,
                base.epsilon,
                Some(unary),
            )?;
            let model = EnergyModel {
                bundle: &bundle,
                fields: frame_fields,
                bank: &bank,
                table,
                grid,
                high_order: HighOrderMode::Full,
            };
            let q = mean_field_infer(&model, cfg)?.q;
            peak_q = q.iter().copied().fold(peak_q, T::max);
            if let Some(t) = truth {
                let dets = extract_detections(&q, grid, T::of(0.5), f)?;
                let pts = truth_points::<T>(&t[f].occupancy, grid)?;
                if let Ok(s) = moda(&hungarian_match(&dets.detections, &pts, em.radius)?) {
                    moda_total += s;
                    moda_count += 1;
                }
            }
            for _ in 0..em.samples_per_frame {
                let z: Vec<bool> = q.iter().map(|&qi| rng.random::<f64>() < qi.as_f64()).collect();
                for (i, &zi) in z.iter().enumerate() {
                    for c in 0..raw_unaries[f].cameras() {
                        calib_scores.push(raw_unaries[f].score(i, c));
                        calib_labels.push(zi);
                    }
                }
                sampled_frames.push(SceneFrame { frame: f, occupancy: z });
            }
        }
        if peak_q <= cfg.prior {
            return Err(Error::Numeric(format!(
                "self-training collapsed in round {round}: peak q {peak_q} at or below the prior"
            )));
        }
        let samples = collect_displacement_samples(&sampled_frames, table, &base.occlusion, rng)
            .map_err(|e| match e {
                Error::Infeasible(_) => {
                    Error::Numeric(format!("self-training produced no foreground in round {round}"))
                }
                other => other,
            })?;
        let (new_bank, report) =
            fit_mode_bank_from(&samples, &bank, bank_weights.as_deref(), em.em_iters)?;
        bank = new_bank;
        bank_weights = Some(report.weights);
        calibration = fit_unary_calibration(&calib_scores, &calib_labels)?;
        rounds.push(EmRound {
            round,
            peak_q,
            samples: samples.len(),
            moda: if moda_count > 0 { Some(moda_total / T::of(moda_count as f64)) } else { None },
        });
    }
    Ok(EmOutcome { bank, calibration, rounds })
}

/// Convenience: thresholds matched to the generative parameters, the common
/// way to build an [`InferenceConfig`] for training loops.
pub fn config_for<T: Real>(o: T, nu: T, modes: usize) -> InferenceConfig<T> {
    let (tau_b, tau_h) = default_thresholds(o, nu, modes);
    InferenceConfig { tau_b, tau_h, ..InferenceConfig::default() }
}
