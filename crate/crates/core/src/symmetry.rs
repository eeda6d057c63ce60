//! Probes of the symmetrized loss: weight-orbit degeneracy on the digits, the
//! η-sampled loss, and flat directions on a rotation-symmetric toy problem.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::features::{is_closed_group, FeatureMap, FeatureMapKind, GroupElement};
use crate::nn::{cross_entropy_loss, softmax, Mlp, Workspace};
use crate::{Error, Result};

fn sample_loss(model: &Mlp, features: &[f64], label: usize, ws: &mut Workspace) -> Result<f64> {
    model.forward_ws(features, ws);
    cross_entropy_loss(&softmax(ws.logits())?, label)
}

/// `Ω(θ) = Σ_i Σ_g L(y_i, f(U(g) x_i; θ))` over a dataset and a finite group.
#[derive(Debug, Clone)]
pub struct SymmetrizedLoss<'a> {
    dataset: &'a Dataset,
    group: Vec<GroupElement>,
}

impl<'a> SymmetrizedLoss<'a> {
    pub fn new(dataset: &'a Dataset, group: Vec<GroupElement>) -> Result<Self> {
        if group.is_empty() || !is_closed_group(&group) {
            return Err(Error::Precondition(format!(
                "group {group:?} is not closed under composition"
            )));
        }
        Ok(Self { dataset, group })
    }

    pub fn group(&self) -> &[GroupElement] {
        &self.group
    }

    /// Every `L(y_i, f(U(g) x_i))`, sample-major with the group index inner.
    pub fn terms(&self, model: &Mlp, map: &FeatureMap) -> Result<Vec<f64>> {
        if model.input_dim() != map.output_dim() {
            return Err(Error::Shape {
                expected: model.input_dim(),
                actual: map.output_dim(),
            });
        }
        let mut ws = Workspace::new(model);
        let mut out = Vec::with_capacity(self.dataset.len() * self.group.len());
        for img in &self.dataset.images {
            for g in &self.group {
                let x = map.apply(&g.apply_pixels(&img.pixels));
                out.push(sample_loss(model, &x, img.label, &mut ws)?);
            }
        }
        Ok(out)
    }

    pub fn value(&self, model: &Mlp, map: &FeatureMap) -> Result<f64> {
        Ok(self.terms(model, map)?.iter().sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFlipReport {
    pub omega: f64,
    pub omega_flipped: f64,
    /// `|Ω(W₁) - Ω(-W₁)| / Ω(W₁)`
    pub deviation: f64,
    pub samples: usize,
}

/// Compares the loss of a bias-free network with its first-layer weights negated,
/// over an inversion-closed dataset of raw pixels.
pub fn weight_orbit_invariance(model: &Mlp, dataset: &Dataset) -> Result<WeightFlipReport> {
    if !dataset.is_inversion_closed() {
        return Err(Error::Precondition(format!(
            "dataset `{}` is not closed under inversion",
            dataset.name
        )));
    }
    weight_flip_deviation(model, dataset)
}

/// Same measurement as [`weight_orbit_invariance`] without the closure requirement.
pub fn weight_flip_deviation(model: &Mlp, dataset: &Dataset) -> Result<WeightFlipReport> {
    if model.has_bias() {
        return Err(Error::Precondition(
            "weight flip probe needs a network without biases".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Empty(format!("dataset `{}`", dataset.name)));
    }
    let map = FeatureMap::new(FeatureMapKind::Identity);
    let loss = SymmetrizedLoss::new(dataset, vec![GroupElement::Identity])?;
    let omega = loss.value(model, &map)?;
    let omega_flipped = loss.value(&model.with_negated_input_weights(), &map)?;
    Ok(WeightFlipReport {
        omega,
        omega_flipped,
        deviation: (omega - omega_flipped).abs() / omega,
        samples: dataset.len(),
    })
}

/// Largest `|L(x) - L(-x)|` over the dataset for a model on inversion-invariant features.
pub fn inversion_loss_gap(model: &Mlp, map: &FeatureMap, dataset: &Dataset) -> Result<f64> {
    if !map.kind().is_inversion_invariant() {
        return Err(Error::Precondition(format!(
            "feature map {} is not inversion invariant",
            map.kind()
        )));
    }
    let loss = SymmetrizedLoss::new(dataset, vec![GroupElement::Identity, GroupElement::Inversion])?;
    let terms = loss.terms(model, map)?;
    Ok(terms
        .chunks(2)
        .map(|p| (p[0] - p[1]).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledLossReport {
    pub mu: f64,
    pub trials: usize,
    /// Mean of the η-weighted loss over trials.
    pub mean: f64,
    /// Full symmetrized loss Ω.
    pub omega: f64,
    /// `mean / (μ Ω)`
    pub ratio: f64,
    /// Standard error of `mean`; absent for a single trial.
    pub standard_error: Option<f64>,
    pub first_trial: f64,
    pub min_trial: f64,
    pub max_trial: f64,
    pub terms: usize,
}

impl SampledLossReport {
    /// `|mean - μΩ| <= k · standard error`; a single trial never qualifies.
    pub fn within_standard_errors(&self, k: f64) -> bool {
        self.standard_error
            .is_some_and(|se| (self.mean - self.mu * self.omega).abs() <= k * se)
    }
}

/// Draws `η_{i,g} ~ Bernoulli(μ)` independently per sample and group element and
/// averages `Σ η_{i,g} L_{i,g}` over `trials` draws.
pub fn sampled_loss_expectation(
    model: &Mlp,
    map: &FeatureMap,
    loss: &SymmetrizedLoss<'_>,
    mu: f64,
    trials: usize,
    seed: u64,
) -> Result<SampledLossReport> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Precondition(format!("inclusion probability {mu} not in (0, 1]")));
    }
    if trials == 0 {
        return Err(Error::Precondition("at least one trial is required".into()));
    }
    let terms = loss.terms(model, map)?;
    let omega: f64 = terms.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..trials)
        .map(|_| {
            terms
                .iter()
                .map(|&t| if rng.gen_bool(mu) { t } else { 0.0 })
                .sum()
        })
        .collect();
    let n = trials as f64;
    // shifted by the first trial: exact when every trial is identical
    let first = values[0];
    let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n;
    let standard_error = (trials > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(SampledLossReport {
        mu,
        trials,
        mean,
        omega,
        ratio: mean / (mu * omega),
        standard_error,
        first_trial: first,
        min_trial: values.iter().copied().fold(f64::INFINITY, f64::min),
        max_trial: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        terms: terms.len(),
    })
}

/// Rotation generator `G = [[0, -1], [1, 0]]` applied to a plane vector.
pub fn generator(w: [f64; 2]) -> [f64; 2] {
    [-w[1], w[0]]
}

pub fn rotate(w: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * w[0] - s * w[1], s * w[0] + c * w[1]]
}

pub const TOY_INNER_RADIUS: f64 = 0.5;
pub const TOY_OUTER_RADIUS: f64 = 1.0;
pub const TOY_BASE_POINTS: usize = 200;
/// Weight decay on `w`, `b` and `v`; rotation invariant, and keeps the minimum bounded.
pub const TOY_WEIGHT_DECAY: f64 = 1e-3;
/// Step for the second directional differences.
pub const CURVATURE_STEP: f64 = 1e-4;

/// Two concentric rings labelled by radius, acted on by the cyclic group `C_n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyRotationTask {
    pub n: usize,
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<f64>,
    /// Whether every point's full `C_n` orbit is present.
    pub closed: bool,
}

impl ToyRotationTask {
    /// Base points: half on the inner ring (label -1), half on the outer ring (+1),
    /// at angles drawn uniformly from `seed`.
    fn base(seed: u64) -> Vec<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..TOY_BASE_POINTS)
            .map(|i| {
                let (r, y) = if i < TOY_BASE_POINTS / 2 {
                    (TOY_INNER_RADIUS, -1.0)
                } else {
                    (TOY_OUTER_RADIUS, 1.0)
                };
                (r, rng.gen_range(0.0..TAU), y)
            })
            .collect()
    }

    /// The base set augmented by all `n` rotations.
    pub fn closed(n: usize, seed: u64) -> Result<Self> {
        Self::build(n, seed, n)
    }

    /// The base set only; not closed under `C_n` for `n > 1`.
    pub fn unaugmented(n: usize, seed: u64) -> Result<Self> {
        Self::build(n, seed, 1)
    }

    fn build(n: usize, seed: u64, copies: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("cyclic group order must be positive".into()));
        }
        let mut points = Vec::with_capacity(TOY_BASE_POINTS * copies);
        let mut labels = Vec::with_capacity(TOY_BASE_POINTS * copies);
        for (r, phi, y) in Self::base(seed) {
            for k in 0..copies {
                let (s, c) = (phi + TAU * k as f64 / n as f64).sin_cos();
                points.push([r * c, r * s]);
                labels.push(y);
            }
        }
        Ok(Self {
            n,
            points,
            labels,
            closed: copies == n,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Parameters of `f(x) = v · tanh(w·x + b) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub w: [f64; 2],
    pub b: f64,
    pub v: f64,
    pub c: f64,
}

const TOY_DIM: usize = 5;

impl ToyParams {
    pub fn to_array(self) -> [f64; TOY_DIM] {
        [self.w[0], self.w[1], self.b, self.v, self.c]
    }

    pub fn from_array(a: [f64; TOY_DIM]) -> Self {
        Self {
            w: [a[0], a[1]],
            b: a[2],
            v: a[3],
            c: a[4],
        }
    }

    pub fn with_w(self, w: [f64; 2]) -> Self {
        Self { w, ..self }
    }

    pub fn predict(&self, x: [f64; 2]) -> f64 {
        self.v * (self.w[0] * x[0] + self.w[1] * x[1] + self.b).tanh() + self.c
    }

    fn penalty(&self) -> f64 {
        TOY_WEIGHT_DECAY * (self.w[0].powi(2) + self.w[1].powi(2) + self.b.powi(2) + self.v.powi(2))
    }
}

/// Group-averaged squared error plus weight decay.
pub fn toy_loss(task: &ToyRotationTask, p: &ToyParams) -> f64 {
    let sum: f64 = task
        .points
        .iter()
        .zip(&task.labels)
        .map(|(&x, &y)| (p.predict(x) - y).powi(2))
        .sum();
    sum / task.len() as f64 + p.penalty()
}

pub fn toy_gradient(task: &ToyRotationTask, p: &ToyParams) -> [f64; TOY_DIM] {
    let mut g = [0.0; TOY_DIM];
    for (&x, &y) in task.points.iter().zip(&task.labels) {
        let t = (p.w[0] * x[0] + p.w[1] * x[1] + p.b).tanh();
        let r2 = 2.0 * (p.v * t + p.c - y);
        let inner = r2 * p.v * (1.0 - t * t);
        g[0] += inner * x[0];
        g[1] += inner * x[1];
        g[2] += inner;
        g[3] += r2 * t;
        g[4] += r2;
    }
    let n = task.len() as f64;
    let a = p.to_array();
    for (i, gi) in g.iter_mut().enumerate() {
        *gi /= n;
        if i < 4 {
            *gi += 2.0 * TOY_WEIGHT_DECAY * a[i];
        }
    }
    g
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn offset(p: &ToyParams, u: &[f64; TOY_DIM], h: f64) -> ToyParams {
    let a = p.to_array();
    ToyParams::from_array(std::array::from_fn(|i| a[i] + h * u[i]))
}

/// Finite-difference Hessian-vector product from exact gradients.
pub fn toy_hessian_vector(task: &ToyRotationTask, p: &ToyParams, v: &[f64; TOY_DIM]) -> [f64; TOY_DIM] {
    const H: f64 = 1e-5;
    let gp = toy_gradient(task, &offset(p, v, H));
    let gm = toy_gradient(task, &offset(p, v, -H));
    std::array::from_fn(|i| (gp[i] - gm[i]) / (2.0 * H))
}

/// `(Ω(θ+εu) - 2Ω(θ) + Ω(θ-εu)) / ε²`, accumulated point by point so that the
/// rounding of the large common part cancels before summation.
pub fn toy_curvature(task: &ToyRotationTask, p: &ToyParams, u: &[f64; TOY_DIM], eps: f64) -> f64 {
    let (pp, pm) = (offset(p, u, eps), offset(p, u, -eps));
    let data: f64 = task
        .points
        .iter()
        .zip(&task.labels)
        .map(|(&x, &y)| {
            (pp.predict(x) - y).powi(2) - 2.0 * (p.predict(x) - y).powi(2) + (pm.predict(x) - y).powi(2)
        })
        .sum();
    // the penalty is quadratic, so its second difference is exact
    let reg = 2.0 * TOY_WEIGHT_DECAY * u[..4].iter().map(|x| x * x).sum::<f64>();
    data / task.len() as f64 / (eps * eps) + reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFit {
    pub params: ToyParams,
    pub loss: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Gradient tolerance the toy trainer aims for; well inside the minimum criterion.
pub const TOY_GRADIENT_TARGET: f64 = 1e-11;
/// A point counts as a local minimum below this gradient norm.
pub const MINIMUM_GRADIENT_NORM: f64 = 1e-6;

const TOY_DESCENT_STEPS: usize = 2000;
const TOY_DESCENT_RATE: f64 = 0.5;

fn solve(mut a: [[f64; TOY_DIM]; TOY_DIM], mut b: [f64; TOY_DIM]) -> Option<[f64; TOY_DIM]> {
    for col in 0..TOY_DIM {
        let piv = (col..TOY_DIM).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..TOY_DIM {
            let f = a[row][col] / a[col][col];
            for k in col..TOY_DIM {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; TOY_DIM];
    for row in (0..TOY_DIM).rev() {
        let s: f64 = (row + 1..TOY_DIM).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Minimises [`toy_loss`] with damped Newton steps (Levenberg–Marquardt) on a
/// finite-difference Hessian, starting from a seeded initial weight vector.
pub fn train_toy(task: &ToyRotationTask, seed: u64) -> Result<ToyFit> {
    if task.is_empty() {
        return Err(Error::Empty("toy task has no points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.gen_range(0.0..TAU);
    let mut p = ToyParams {
        w: rotate([1.0, 0.0], angle),
        // a zero bias makes the model odd, and odd models sit on the w = 0 saddle
        b: 0.5,
        v: 1.0,
        c: 0.0,
    };
    for _ in 0..TOY_DESCENT_STEPS {
        let g = toy_gradient(task, &p);
        p = offset(&p, &g, -TOY_DESCENT_RATE);
    }
    let mut loss = toy_loss(task, &p);
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut g = toy_gradient(task, &p);
    while iterations < 500 && norm(&g) > TOY_GRADIENT_TARGET {
        iterations += 1;
        let mut h = [[0.0; TOY_DIM]; TOY_DIM];
        for j in 0..TOY_DIM {
            let e: [f64; TOY_DIM] = std::array::from_fn(|i| f64::from(u8::from(i == j)));
            let col = toy_hessian_vector(task, &p, &e);
            for i in 0..TOY_DIM {
                h[i][j] = col[i];
            }
        }
        loop {
            let mut a = h;
            for i in 0..TOY_DIM {
                for j in 0..i {
                    let s = 0.5 * (a[i][j] + a[j][i]);
                    a[i][j] = s;
                    a[j][i] = s;
                }
                a[i][i] += damping;
            }
            let step = solve(a, g.map(|x| -x));
            let cand = step.map(|s| offset(&p, &s, 1.0));
            match cand.map(|c| (c, toy_loss(task, &c))) {
                Some((c, l)) if l <= loss => {
                    p = c;
                    loss = l;
                    damping = (damping * 0.3).max(1e-12);
                    break;
                }
                _ => {
                    damping *= 10.0;
                    if damping > 1e12 {
                        return Err(Error::Diverged { epoch: iterations, loss });
                    }
                }
            }
        }
        g = toy_gradient(task, &p);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: iterations, loss });
        }
    }
    Ok(ToyFit {
        params: p,
        loss,
        gradient_norm: norm(&g),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub angle: f64,
    pub loss: f64,
}

/// Loss with `w` rotated through every angle `2πk/n`, other parameters fixed.
/// Rejects datasets that are not closed under `C_n`.
pub fn orbit_loss_scan(task: &ToyRotationTask, p: &ToyParams) -> Result<Vec<OrbitPoint>> {
    if !task.closed {
        return Err(Error::Precondition(format!(
            "toy dataset is not closed under C_{}",
            task.n
        )));
    }
    Ok(orbit_loss_profile(task, p))
}

/// [`orbit_loss_scan`] without the closure check.
pub fn orbit_loss_profile(task: &ToyRotationTask, p: &ToyParams) -> Vec<OrbitPoint> {
    (0..task.n)
        .map(|k| {
            let angle = TAU * k as f64 / task.n as f64;
            OrbitPoint {
                angle,
                loss: toy_loss(task, &p.with_w(rotate(p.w, angle))),
            }
        })
        .collect()
}

/// `(max - min) / |min|` of the orbit losses.
pub fn relative_spread(profile: &[OrbitPoint]) -> f64 {
    let lo = profile.iter().map(|o| o.loss).fold(f64::INFINITY, f64::min);
    let hi = profile.iter().map(|o| o.loss).fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldstoneReport {
    pub n: usize,
    /// `∇Ω · d` for the unit generator direction `d ∝ G w`.
    pub directional_derivative: f64,
    /// Second directional difference along `d`.
    pub curvature_generator: f64,
    /// Second directional difference along `w / |w|`.
    pub curvature_radial: f64,
    pub smallest_eigenvalue: f64,
    pub largest_eigenvalue: f64,
    pub gradient_norm: f64,
    pub warning: Option<String>,
}

/// Unit vector in parameter space along the rotation generator at `w`.
pub fn generator_direction(p: &ToyParams) -> [f64; TOY_DIM] {
    let d = generator(p.w);
    let n = norm(&d);
    [d[0] / n, d[1] / n, 0.0, 0.0, 0.0]
}

pub fn radial_direction(p: &ToyParams) -> [f64; TOY_DIM] {
    let n = norm(&p.w);
    [p.w[0] / n, p.w[1] / n, 0.0, 0.0, 0.0]
}

fn normalize(v: [f64; TOY_DIM]) -> [f64; TOY_DIM] {
    let n = norm(&v);
    v.map(|x| x / n)
}

fn power_iteration(
    start: [f64; TOY_DIM],
    mut apply: impl FnMut(&[f64; TOY_DIM]) -> [f64; TOY_DIM],
    iterations: usize,
) -> f64 {
    let mut v = normalize(start);
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let av = apply(&v);
        let next = dot(&v, &av);
        let n = norm(&av);
        if n == 0.0 {
            return 0.0;
        }
        v = av.map(|x| x / n);
        if (next - lambda).abs() <= 1e-14 * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Flat-direction measurements at `p`: first and second derivatives along the
/// rotation generator, radial curvature, and the extreme Hessian eigenvalues
/// from power iteration (the smallest via the shifted operator `σI - H`).
pub fn generator_curvature(task: &ToyRotationTask, p: &ToyParams) -> GoldstoneReport {
    let g = toy_gradient(task, p);
    let gradient_norm = norm(&g);
    let d = generator_direction(p);
    let hv = |v: &[f64; TOY_DIM]| toy_hessian_vector(task, p, v);
    let generic = [1.0, 0.7, -0.4, 0.3, 0.2];
    let largest = power_iteration(generic, hv, 2000);
    let sigma = 1.05 * largest.abs() + 1e-12;
    // started near the generator direction, where the softest mode is expected
    let start = std::array::from_fn(|i| d[i] + 0.1 * generic[i]);
    let shifted = power_iteration(
        start,
        |v| {
            let h = toy_hessian_vector(task, p, v);
            std::array::from_fn(|i| sigma * v[i] - h[i])
        },
        5000,
    );
    GoldstoneReport {
        n: task.n,
        directional_derivative: dot(&g, &d),
        curvature_generator: toy_curvature(task, p, &d, CURVATURE_STEP),
        curvature_radial: toy_curvature(task, p, &radial_direction(p), CURVATURE_STEP),
        smallest_eigenvalue: sigma - shifted,
        largest_eigenvalue: largest,
        gradient_norm,
        warning: (gradient_norm >= MINIMUM_GRADIENT_NORM)
            .then(|| format!("gradient norm {gradient_norm:.3e} is not at a minimum")),
    }
}

/// Rounding floor of a second difference with step [`CURVATURE_STEP`] on a loss of size `loss`.
pub fn curvature_noise_floor(loss: f64) -> f64 {
    4.0 * f64::EPSILON * loss.abs() / (CURVATURE_STEP * CURVATURE_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{symmetrize, GrayImage, PIXELS};

    fn tiny_dataset() -> Dataset {
        let images = (0..6)
            .map(|i| {
                let px = std::array::from_fn(|j| ((i * 7 + j * 3) % 17) as f64 / 8.0 - 1.0);
                GrayImage::new(px, i % 3, i).unwrap()
            })
            .collect();
        Dataset::new("tiny", images)
    }

    #[test]
    fn open_group_is_rejected() {
        let ds = tiny_dataset();
        assert!(SymmetrizedLoss::new(&ds, vec![GroupElement::Inversion]).is_err());
        assert!(SymmetrizedLoss::new(&ds, vec![]).is_err());
        assert!(SymmetrizedLoss::new(&ds, vec![GroupElement::Identity, GroupElement::Inversion]).is_ok());
    }

    #[test]
    fn weight_flip_on_closed_data() {
        let ds = symmetrize(&tiny_dataset());
        let mlp = Mlp::init(&[PIXELS, 10, 5, 10], false, 3).unwrap();
        let rep = weight_orbit_invariance(&mlp, &ds).unwrap();
        assert!(rep.deviation <= 1e-9, "{rep:?}");
        assert!(matches!(
            weight_orbit_invariance(&mlp, &tiny_dataset()),
            Err(Error::Precondition(_))
        ));
        let biased = Mlp::init(&[PIXELS, 10], true, 3).unwrap();
        assert!(matches!(weight_orbit_invariance(&biased, &ds), Err(Error::Precondition(_))));
    }

    #[test]
    fn mu_one_reproduces_omega() {
        let ds = tiny_dataset();
        let mlp = Mlp::init(&[PIXELS, 4, 10], false, 1).unwrap();
        let map = FeatureMap::new(FeatureMapKind::Identity);
        let loss = SymmetrizedLoss::new(&ds, vec![GroupElement::Identity, GroupElement::Inversion]).unwrap();
        let rep = sampled_loss_expectation(&mlp, &map, &loss, 1.0, 5, 0).unwrap();
        assert_eq!(rep.mean, rep.omega);
        assert_eq!((rep.min_trial, rep.max_trial), (rep.omega, rep.omega));
        assert_eq!(rep.ratio, 1.0);
        assert_eq!(rep.terms, 12);
        assert!(sampled_loss_expectation(&mlp, &map, &loss, 0.0, 5, 0).is_err());
        assert!(sampled_loss_expectation(&mlp, &map, &loss, 0.5, 0, 0).is_err());
    }

    #[test]
    fn invariant_features_have_zero_inversion_gap() {
        let mlp = Mlp::init(&[PIXELS, 6, 10], false, 2).unwrap();
        for kind in [FeatureMapKind::Square, FeatureMapKind::NeighborProduct] {
            let gap = inversion_loss_gap(&mlp, &FeatureMap::new(kind), &tiny_dataset()).unwrap();
            assert_eq!(gap, 0.0);
        }
        let id = FeatureMap::new(FeatureMapKind::Identity);
        assert!(inversion_loss_gap(&mlp, &id, &tiny_dataset()).is_err());
    }

    #[test]
    fn toy_task_shapes() {
        let t = ToyRotationTask::closed(4, 0).unwrap();
        assert_eq!(t.len(), 800);
        assert!(t.closed);
        let u = ToyRotationTask::unaugmented(4, 0).unwrap();
        assert_eq!(u.len(), 200);
        assert!(!u.closed);
        assert!(orbit_loss_scan(&u, &ToyParams { w: [1.0, 0.0], b: 0.0, v: 1.0, c: 0.0 }).is_err());
        for (x, &y) in t.points.iter().zip(&t.labels) {
            let r = norm(x);
            let want = if y < 0.0 { TOY_INNER_RADIUS } else { TOY_OUTER_RADIUS };
            assert!((r - want).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_gradient_matches_finite_differences() {
        let t = ToyRotationTask::closed(3, 1).unwrap();
        let p = ToyParams { w: [0.8, -1.3], b: 0.2, v: 0.7, c: -0.1 };
        let g = toy_gradient(&t, &p);
        for i in 0..TOY_DIM {
            let e: [f64; TOY_DIM] = std::array::from_fn(|j| f64::from(u8::from(i == j)));
            let num = (toy_loss(&t, &offset(&p, &e, 1e-6)) - toy_loss(&t, &offset(&p, &e, -1e-6))) / 2e-6;
            assert!((num - g[i]).abs() < 1e-8, "param {i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn four_fold_orbit_is_flat_for_any_weights() {
        let t = ToyRotationTask::closed(4, 2).unwrap();
        let p = ToyParams { w: [2.1, -0.4], b: 0.3, v: -1.2, c: 0.05 };
        let prof = orbit_loss_scan(&t, &p).unwrap();
        assert_eq!(prof.len(), 4);
        assert!(relative_spread(&prof) <= 1e-9);
    }

    #[test]
    fn solver_inverts_a_known_system() {
        let mut a = [[0.0; TOY_DIM]; TOY_DIM];
        for i in 0..TOY_DIM {
            a[i][i] = (i + 2) as f64;
            a[i][(i + 1) % TOY_DIM] = 1.0;
        }
        let x = [1.0, -2.0, 0.5, 3.0, -1.0];
        let b: [f64; TOY_DIM] = std::array::from_fn(|i| dot(&a[i], &x));
        let got = solve(a, b).unwrap();
        for i in 0..TOY_DIM {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn power_iteration_on_a_diagonal_operator() {
        let diag = [5.0, 3.0, 1.0, 0.5, 0.01];
        let start = [1.0, 0.7, -0.4, 0.3, 0.2];
        let big = power_iteration(start, |v| std::array::from_fn(|i| diag[i] * v[i]), 5000);
        assert!((big - 5.0).abs() < 1e-9);
        let sigma = 5.25;
        let small = sigma - power_iteration(start, |v| std::array::from_fn(|i| (sigma - diag[i]) * v[i]), 5000);
        assert!((small - 0.01).abs() < 1e-9, "{small}");
    }
}
