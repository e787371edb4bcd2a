//! Identification of the adsorption and desorption rates from a measured
//! breakthrough curve.
//!
//! The residual is `J = sum_{t_n <= T_cut} tau (c_out(t_n) - c~(t_n))^2`.
//! A parameter pair is admissible when `J <= gamma delta^2 T / 3`, the
//! expected residual of the exact parameters under uniform noise of
//! amplitude `delta`, inflated by `gamma > 1`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contour::{isolines_csv, GridField};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::sobol::Sobol2;
use crate::transport::{BreakthroughCurve, Isotherm, TransportSolver};

/// Default inflation of the noise-energy threshold.
pub const DEFAULT_GAMMA: f64 = 1.02625;

/// Measured (or synthesized) outlet concentration on the step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Noise amplitude used to synthesize the data; 0 for exact data.
    pub delta: f64,
    /// Generator seed; `None` for imported data.
    pub seed: Option<u64>,
}

/// Noise sample `sigma_n` in `[-1, 1)` for step `n`, a pure function of
/// `(seed, n)`.
pub fn noise(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(2 * n as u128);
    let bits = rng.next_u64() >> 11;
    2.0 * (bits as f64 / (1u64 << 53) as f64) - 1.0
}

impl Measurement {
    /// Exact data plus `delta * sigma_n`.
    pub fn synthesize(curve: &BreakthroughCurve, delta: f64, seed: u64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Config(format!("delta must be non-negative, got {delta}")));
        }
        let values = curve
            .values
            .iter()
            .enumerate()
            .map(|(n, c)| if delta == 0.0 { *c } else { c + delta * noise(seed, n) })
            .collect();
        Ok(Self {
            times: curve.times.clone(),
            values,
            delta,
            seed: Some(seed),
        })
    }

    pub fn tau(&self) -> f64 {
        self.times.first().copied().unwrap_or(0.0)
    }

    pub fn t_end(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,c_tilde\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            let _ = writeln!(s, "{t:.16e},{v:.16e}");
        }
        s
    }

    /// Parse `t,c_tilde` rows; times must be `tau, 2 tau, ...` with the
    /// given `tau`.
    pub fn from_csv(text: &str, tau: f64, delta: f64) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "t,c_tilde" => {}
            _ => {
                return Err(Error::Format {
                    line: 1,
                    message: "expected header t,c_tilde".into(),
                })
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (k, line) in lines {
            let bad = |m: &str| Error::Format {
                line: k + 1,
                message: m.into(),
            };
            let mut cols = line.split(',');
            let (Some(t), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(bad("expected two columns"));
            };
            let t: f64 = t.trim().parse().map_err(|_| bad("bad time"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("bad value"))?;
            if !v.is_finite() {
                return Err(bad("value is not finite"));
            }
            let expected = (times.len() + 1) as f64 * tau;
            if (t - expected).abs() > 1e-9 * tau.max(expected) {
                return Err(Error::GridMismatch(format!(
                    "line {}: time {t} is off the tau grid (expected {expected})",
                    k + 1
                )));
            }
            times.push(expected);
            values.push(v);
        }
        Ok(Self {
            times,
            values,
            delta,
            seed: None,
        })
    }
}

/// `J` over steps with `t_n <= t_cut` (all steps when `None`).
pub fn residual(curve: &BreakthroughCurve, meas: &Measurement, t_cut: Option<f64>) -> Result<f64> {
    let tau = meas.tau();
    if curve.len() != meas.values.len() {
        return Err(Error::GridMismatch(format!(
            "curve has {} steps, measurement {}",
            curve.len(),
            meas.values.len()
        )));
    }
    if (curve.tau() - tau).abs() > 1e-9 * tau {
        return Err(Error::GridMismatch(format!(
            "curve step {} differs from measurement step {tau}",
            curve.tau()
        )));
    }
    let cut = t_cut.unwrap_or(f64::INFINITY) + 1e-9 * tau;
    Ok(curve
        .values
        .iter()
        .zip(&meas.values)
        .zip(&meas.times)
        .take_while(|(_, t)| **t <= cut)
        .map(|((c, m), _)| tau * (c - m) * (c - m))
        .sum())
}

/// `gamma delta^2 T / 3`
pub fn admissible_threshold(gamma: f64, delta: f64, t_effective: f64) -> f64 {
    gamma * delta * delta * t_effective / 3.0
}

/// Length of the data window used by [`residual`].
pub fn effective_time(meas: &Measurement, t_cut: Option<f64>) -> f64 {
    let tau = meas.tau();
    let cut = t_cut.unwrap_or(f64::INFINITY) + 1e-9 * tau;
    meas.times.iter().filter(|t| **t <= cut).count() as f64 * tau
}

/// Axis-aligned parameter box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibleBox {
    pub da_a: [f64; 2],
    pub da_d: [f64; 2],
}

impl Default for FeasibleBox {
    fn default() -> Self {
        Self {
            da_a: [0.0, 0.01],
            da_d: [0.0, 0.1],
        }
    }
}

impl FeasibleBox {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("da_a", self.da_a), ("da_d", self.da_d)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] >= 0.0 && r[0] <= r[1]) {
                return Err(Error::Config(format!(
                    "{name} range [{}, {}] must satisfy 0 <= lo <= hi",
                    r[0], r[1]
                )));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.da_a[1] - self.da_a[0]) * (self.da_d[1] - self.da_d[0])
    }

    pub fn contains(&self, da_a: f64, da_d: f64) -> bool {
        (self.da_a[0]..=self.da_a[1]).contains(&da_a) && (self.da_d[0]..=self.da_d[1]).contains(&da_d)
    }

    /// Affine image of a unit-square point.
    pub fn map_unit(&self, u: [f64; 2]) -> (f64, f64) {
        (
            self.da_a[0] + u[0] * (self.da_a[1] - self.da_a[0]),
            self.da_d[0] + u[1] * (self.da_d[1] - self.da_d[0]),
        )
    }

    /// Smallest box containing the given parameter pairs.
    pub fn bounding(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        points.into_iter().fold(None, |acc, (a, d)| {
            Some(match acc {
                None => Self {
                    da_a: [a, a],
                    da_d: [d, d],
                },
                Some(b) => Self {
                    da_a: [b.da_a[0].min(a), b.da_a[1].max(a)],
                    da_d: [b.da_d[0].min(d), b.da_d[1].max(d)],
                },
            })
        })
    }

    /// Each side moved outward by `margin` times the box extent, then
    /// clipped to `limit`. A degenerate side uses `margin` times the
    /// extent of `limit` instead.
    pub fn expanded(&self, margin: f64, limit: &FeasibleBox) -> Self {
        let grow = |r: [f64; 2], lim: [f64; 2]| {
            let w = r[1] - r[0];
            let pad = margin * if w > 0.0 { w } else { lim[1] - lim[0] };
            [(r[0] - pad).max(lim[0]), (r[1] + pad).min(lim[1])]
        };
        Self {
            da_a: grow(self.da_a, limit.da_a),
            da_d: grow(self.da_d, limit.da_d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    pub da_a: f64,
    pub da_d: f64,
    pub j: f64,
}

/// Points classified by the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleSet {
    pub points: Vec<EvaluatedPoint>,
    pub threshold: f64,
    pub gamma: f64,
    /// Indices into `points` with `J <= threshold`.
    pub admissible: Vec<usize>,
    /// Index of the smallest `J` (first on ties).
    pub minimizer: usize,
}

impl AdmissibleSet {
    pub fn new(points: Vec<EvaluatedPoint>, threshold: f64, gamma: f64) -> Self {
        assert!(!points.is_empty(), "admissible set needs at least one point");
        let admissible = (0..points.len()).filter(|&k| points[k].j <= threshold).collect();
        let minimizer = (0..points.len())
            .min_by(|&a, &b| points[a].j.total_cmp(&points[b].j))
            .unwrap();
        Self {
            points,
            threshold,
            gamma,
            admissible,
            minimizer,
        }
    }

    pub fn best(&self) -> EvaluatedPoint {
        self.points[self.minimizer]
    }

    pub fn is_empty(&self) -> bool {
        self.admissible.is_empty()
    }

    pub fn admissible_points(&self) -> impl Iterator<Item = &EvaluatedPoint> {
        self.admissible.iter().map(|&k| &self.points[k])
    }

    pub fn bounding_box(&self) -> Option<FeasibleBox> {
        FeasibleBox::bounding(self.admissible_points().map(|p| (p.da_a, p.da_d)))
    }

    pub fn is_admissible(&self, k: usize) -> bool {
        self.points[k].j <= self.threshold
    }

    /// CSV `da_a,da_d,J,sqrtJ,admissible`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("da_a,da_d,J,sqrtJ,admissible\n");
        for (k, p) in self.points.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                p.da_a,
                p.da_d,
                p.j,
                p.j.sqrt(),
                u8::from(self.is_admissible(k))
            );
        }
        s
    }

    pub fn minimizer_json(&self) -> serde_json::Value {
        let b = self.best();
        serde_json::json!({
            "da_a": b.da_a,
            "da_d": b.da_d,
            "J": b.j,
            "sqrtJ": b.j.sqrt(),
            "threshold": self.threshold,
            "gamma": self.gamma,
            "admissible_count": self.admissible.len(),
            "evaluated": self.points.len(),
        })
    }
}

/// Forward model: breakthrough curve as a function of the two rates.
pub trait BreakthroughModel: Sync {
    fn breakthrough(&self, da_a: f64, da_d: f64) -> Result<BreakthroughCurve>;
}

/// Finite-element forward model with fixed mesh, flow, Pe and time grid.
pub struct TransportModel {
    pub solver: TransportSolver,
    /// Kinetics law; its rates are replaced per evaluation.
    pub isotherm: Isotherm,
    pub n_steps: usize,
}

impl BreakthroughModel for TransportModel {
    fn breakthrough(&self, da_a: f64, da_d: f64) -> Result<BreakthroughCurve> {
        self.solver
            .breakthrough(self.isotherm.with_rates(da_a, da_d), self.n_steps)
    }
}

/// Memoizes curves by exact parameter value, so repeated stages and
/// realizations that revisit a point reuse the earlier simulation.
pub struct CachedModel<M> {
    inner: M,
    cache: Mutex<HashMap<(u64, u64), BreakthroughCurve>>,
}

impl<M: BreakthroughModel> CachedModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    /// Number of distinct points simulated so far.
    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<M: BreakthroughModel> BreakthroughModel for CachedModel<M> {
    fn breakthrough(&self, da_a: f64, da_d: f64) -> Result<BreakthroughCurve> {
        let key = (da_a.to_bits(), da_d.to_bits());
        if let Some(c) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(c.clone());
        }
        let curve = self.inner.breakthrough(da_a, da_d)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, curve.clone());
        Ok(curve)
    }
}

/// Curves for many parameter pairs, in input order.
pub fn evaluate_curves<M: BreakthroughModel + ?Sized>(
    model: &M,
    params: &[(f64, f64)],
    exec: Execution,
) -> Result<Vec<BreakthroughCurve>> {
    exec.map(params, |_, &(a, d)| model.breakthrough(a, d))
        .into_iter()
        .collect()
}

/// Residuals of precomputed curves against one measurement.
pub fn score(
    params: &[(f64, f64)],
    curves: &[BreakthroughCurve],
    meas: &Measurement,
    t_cut: Option<f64>,
) -> Result<Vec<EvaluatedPoint>> {
    params
        .iter()
        .zip(curves)
        .map(|(&(da_a, da_d), c)| Ok(EvaluatedPoint { da_a, da_d, j: residual(c, meas, t_cut)? }))
        .collect()
}

/// Lattice node coordinates with exact end points.
pub fn lattice_axis(range: [f64; 2], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                range[1]
            } else {
                range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Lattice points ordered with `da_a` varying fastest.
pub fn grid_points(bx: &FeasibleBox, n1: usize, n2: usize) -> Vec<(f64, f64)> {
    let a = lattice_axis(bx.da_a, n1);
    let d = lattice_axis(bx.da_d, n2);
    d.iter().flat_map(|&y| a.iter().map(move |&x| (x, y))).collect()
}

/// First `n` Sobol points mapped into the box.
pub fn sobol_sample(bx: &FeasibleBox, n: usize) -> Vec<(f64, f64)> {
    Sobol2::points(n).into_iter().map(|u| bx.map_unit(u)).collect()
}

/// Residual on a tensor lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSurface {
    pub bx: FeasibleBox,
    pub n1: usize,
    pub n2: usize,
    /// `points[j * n1 + i]` at `(da_a_i, da_d_j)`.
    pub points: Vec<EvaluatedPoint>,
}

impl ResidualSurface {
    pub fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        (lattice_axis(self.bx.da_a, self.n1), lattice_axis(self.bx.da_d, self.n2))
    }

    pub fn sqrt_j(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.j.sqrt()).collect()
    }

    pub fn classify(&self, threshold: f64, gamma: f64) -> AdmissibleSet {
        AdmissibleSet::new(self.points.clone(), threshold, gamma)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("da_a,da_d,J,sqrtJ\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", p.da_a, p.da_d, p.j, p.j.sqrt());
        }
        s
    }

    /// Isolines of `sqrt J` at `sqrt(threshold) + k * step`.
    pub fn isolines_csv(&self, threshold: f64, step: f64, count: usize) -> String {
        let (x, y) = self.axes();
        let z = self.sqrt_j();
        let levels: Vec<f64> = (0..count).map(|k| threshold.sqrt() + k as f64 * step).collect();
        isolines_csv(&GridField { x: &x, y: &y, z: &z }, &levels)
    }
}

/// `J` at every node of an `n1 x n2` lattice.
pub fn grid_sweep<M: BreakthroughModel + ?Sized>(
    model: &M,
    bx: &FeasibleBox,
    n1: usize,
    n2: usize,
    meas: &Measurement,
    t_cut: Option<f64>,
    exec: Execution,
) -> Result<ResidualSurface> {
    bx.validate()?;
    if n1 < 2 || n2 < 2 {
        return Err(Error::Config(format!("grid needs at least 2x2 nodes, got {n1}x{n2}")));
    }
    let params = grid_points(bx, n1, n2);
    let curves = evaluate_curves(model, &params, exec)?;
    Ok(ResidualSurface {
        bx: *bx,
        n1,
        n2,
        points: score(&params, &curves, meas, t_cut)?,
    })
}

/// Pure random search over Sobol points.
pub fn random_search<M: BreakthroughModel + ?Sized>(
    model: &M,
    bx: &FeasibleBox,
    n: usize,
    meas: &Measurement,
    gamma: f64,
    t_cut: Option<f64>,
    exec: Execution,
) -> Result<AdmissibleSet> {
    bx.validate()?;
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::Config("random search needs at least one sample".into()));
    }
    let params = sobol_sample(bx, n);
    let curves = evaluate_curves(model, &params, exec)?;
    let points = score(&params, &curves, meas, t_cut)?;
    let thr = admissible_threshold(gamma, meas.delta, effective_time(meas, t_cut));
    Ok(AdmissibleSet::new(points, thr, gamma))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must exceed 1, got {gamma}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Strategy {
    Grid { n1: usize, n2: usize },
    Sobol { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageBox {
    /// Bounding box of the previous stage's admissible points, expanded
    /// by [`AUTO_BOX_MARGIN`] per side and clipped to the feasible set.
    Auto,
    Manual(FeasibleBox),
}

/// Outward move of each side of an AUTO box, relative to its extent.
pub const AUTO_BOX_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    #[serde(rename = "box")]
    pub bx: StageBox,
    pub strategy: Strategy,
    #[serde(default)]
    pub t_cut: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn validate(&self, t_end: f64) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("stage plan is empty".into()));
        }
        for (k, s) in self.stages.iter().enumerate() {
            match s.strategy {
                Strategy::Grid { n1, n2 } if n1 < 2 || n2 < 2 => {
                    return Err(Error::Config(format!("stage {k}: grid needs at least 2x2 nodes")))
                }
                Strategy::Sobol { samples: 0 } => {
                    return Err(Error::Config(format!("stage {k}: needs at least one sample")))
                }
                _ => {}
            }
            if let StageBox::Manual(b) = s.bx {
                b.validate()?;
            } else if k == 0 {
                return Err(Error::Config("the first stage cannot use an AUTO box".into()));
            }
            if let Some(t) = s.t_cut {
                if !(t > 0.0 && t <= t_end + 1e-12) {
                    return Err(Error::Config(format!("stage {k}: t_cut {t} outside (0, {t_end}]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub bx: FeasibleBox,
    pub t_cut: Option<f64>,
    pub set: AdmissibleSet,
}

/// Sequential stages over shrinking boxes.
pub fn multistage_identify<M: BreakthroughModel + ?Sized>(
    model: &M,
    plan: &StagePlan,
    feasible: &FeasibleBox,
    meas: &Measurement,
    gamma: f64,
    exec: Execution,
) -> Result<Vec<StageResult>> {
    multistage_identify_each(model, plan, feasible, std::slice::from_ref(meas), gamma, exec)
}

/// Like [`multistage_identify`], but stage `k` is scored against
/// `measurements[min(k, len - 1)]`, so each stage may use fresh data.
pub fn multistage_identify_each<M: BreakthroughModel + ?Sized>(
    model: &M,
    plan: &StagePlan,
    feasible: &FeasibleBox,
    measurements: &[Measurement],
    gamma: f64,
    exec: Execution,
) -> Result<Vec<StageResult>> {
    let Some(first) = measurements.first() else {
        return Err(Error::Config("no measurement given".into()));
    };
    plan.validate(first.t_end())?;
    check_gamma(gamma)?;
    let mut results: Vec<StageResult> = Vec::new();
    for (k, stage) in plan.stages.iter().enumerate() {
        let meas = &measurements[k.min(measurements.len() - 1)];
        let bx = match stage.bx {
            StageBox::Manual(b) => b,
            StageBox::Auto => {
                let prev = &results.last().expect("validated").set;
                prev.bounding_box()
                    .expect("previous stage is nonempty")
                    .expanded(AUTO_BOX_MARGIN, feasible)
            }
        };
        let params = match stage.strategy {
            Strategy::Grid { n1, n2 } => grid_points(&bx, n1, n2),
            Strategy::Sobol { samples } => sobol_sample(&bx, samples),
        };
        let curves = evaluate_curves(model, &params, exec)?;
        let points = score(&params, &curves, meas, stage.t_cut)?;
        let thr = admissible_threshold(gamma, meas.delta, effective_time(meas, stage.t_cut));
        let set = AdmissibleSet::new(points, thr, gamma);
        if set.is_empty() {
            return Err(Error::EmptyAdmissible {
                stage: k,
                threshold: thr,
                best: set.best().j,
            });
        }
        results.push(StageResult {
            bx,
            t_cut: stage.t_cut,
            set,
        });
    }
    Ok(results)
}

/// Admissible sets of several noise realizations on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRealization {
    pub seeds: Vec<u64>,
    pub sets: Vec<AdmissibleSet>,
    /// Point indices admissible in every realization.
    pub intersection: Vec<usize>,
}

impl MultiRealization {
    pub fn minimizers(&self) -> Vec<EvaluatedPoint> {
        self.sets.iter().map(AdmissibleSet::best).collect()
    }

    pub fn intersection_is_empty(&self) -> bool {
        self.intersection.is_empty()
    }
}

/// Curves are evaluated once; each seed only changes the measurement.
#[allow(clippy::too_many_arguments)]
pub fn multi_realization<M: BreakthroughModel + ?Sized>(
    model: &M,
    generator: (f64, f64),
    params: &[(f64, f64)],
    delta: f64,
    seeds: &[u64],
    gamma: f64,
    t_cut: Option<f64>,
    exec: Execution,
) -> Result<MultiRealization> {
    check_gamma(gamma)?;
    if seeds.is_empty() || params.is_empty() {
        return Err(Error::Config("need at least one seed and one point".into()));
    }
    let exact = model.breakthrough(generator.0, generator.1)?;
    let curves = evaluate_curves(model, params, exec)?;
    let mut sets = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let meas = Measurement::synthesize(&exact, delta, seed)?;
        let thr = admissible_threshold(gamma, delta, effective_time(&meas, t_cut));
        sets.push(AdmissibleSet::new(score(params, &curves, &meas, t_cut)?, thr, gamma));
    }
    let intersection = (0..params.len())
        .filter(|&k| sets.iter().all(|s| s.is_admissible(k)))
        .collect();
    Ok(MultiRealization {
        seeds: seeds.to_vec(),
        sets,
        intersection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cheap analytic stand-in: a logistic front delayed by adsorption.
    struct Logistic {
        n: usize,
        tau: f64,
    }

    impl BreakthroughModel for Logistic {
        fn breakthrough(&self, da_a: f64, da_d: f64) -> Result<BreakthroughCurve> {
            let times: Vec<f64> = (1..=self.n).map(|k| k as f64 * self.tau).collect();
            let values = times
                .iter()
                .map(|t| {
                    let front = 1.0 / (1.0 + (-(t - 17.5 - 200.0 * da_a) / 1.5).exp());
                    front * (1.0 - 5.0 * da_a * (-da_d * t).exp())
                })
                .collect();
            Ok(BreakthroughCurve { times, values })
        }
    }

    fn model() -> Logistic {
        Logistic { n: 400, tau: 0.1 }
    }

    #[test]
    fn thresholds() {
        assert!((admissible_threshold(1.02625, 0.01, 40.0) - 1.3683333e-3).abs() < 1e-9);
        assert!((admissible_threshold(1.21, 0.05, 40.0) - 4.0333333e-2).abs() < 1e-8);
        assert_eq!(admissible_threshold(1.5, 0.0, 40.0), 0.0);
    }

    #[test]
    fn residual_of_constant_offset() {
        let c = model().breakthrough(0.005, 0.05).unwrap();
        let meas = Measurement {
            times: c.times.clone(),
            values: c.values.iter().map(|v| v + 0.1).collect(),
            delta: 0.0,
            seed: None,
        };
        assert!((residual(&c, &meas, None).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(residual(&c, &meas, Some(40.0)).unwrap(), residual(&c, &meas, None).unwrap());
        assert!((residual(&c, &meas, Some(15.0)).unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn residual_rejects_other_grids() {
        let c = model().breakthrough(0.005, 0.05).unwrap();
        let short = Logistic { n: 200, tau: 0.1 }.breakthrough(0.005, 0.05).unwrap();
        let meas = Measurement::synthesize(&short, 0.0, 0).unwrap();
        assert!(matches!(residual(&c, &meas, None), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn noise_is_keyed_and_bounded() {
        let a: Vec<f64> = (0..1000).map(|n| noise(7, n)).collect();
        let b: Vec<f64> = (0..1000).rev().map(|n| noise(7, n)).collect();
        assert!(a.iter().zip(b.iter().rev()).all(|(x, y)| x == y));
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_ne!(noise(7, 0), noise(8, 0));
    }

    #[test]
    fn exact_data_is_recovered_on_the_lattice() {
        let m = model();
        let meas = Measurement::synthesize(&m.breakthrough(0.005, 0.05).unwrap(), 0.0, 0).unwrap();
        let s = grid_sweep(&m, &FeasibleBox::default(), 11, 11, &meas, None, Execution::Sequential).unwrap();
        let set = s.classify(0.0, 1.5);
        let best = set.best();
        assert_eq!((best.da_a, best.da_d, best.j), (0.005, 0.05, 0.0));
        assert!(set.admissible_points().all(|p| p.j == 0.0));
    }

    #[test]
    fn two_by_two_grid_picks_best_corner() {
        let m = model();
        let meas = Measurement::synthesize(&m.breakthrough(0.004, 0.02).unwrap(), 0.0, 0).unwrap();
        let s = grid_sweep(&m, &FeasibleBox::default(), 2, 2, &meas, None, Execution::Sequential).unwrap();
        let set = s.classify(0.0, 1.5);
        let min = s.points.iter().map(|p| p.j).fold(f64::INFINITY, f64::min);
        assert_eq!(set.best().j, min);
        assert_eq!(s.points.len(), 4);
    }

    #[test]
    fn sobol_supersequence_grows_admissible_set() {
        let m = model();
        let meas = Measurement::synthesize(&m.breakthrough(0.005, 0.05).unwrap(), 0.01, 3).unwrap();
        let bx = FeasibleBox::default();
        let small = random_search(&m, &bx, 150, &meas, 1.02625, None, Execution::Sequential).unwrap();
        let large = random_search(&m, &bx, 600, &meas, 1.02625, None, Execution::Sequential).unwrap();
        assert_eq!(&large.points[..150], &small.points[..]);
        assert!(large.admissible.len() >= small.admissible.len());
    }

    #[test]
    fn single_stage_plan_equals_random_search() {
        let m = model();
        let meas = Measurement::synthesize(&m.breakthrough(0.005, 0.05).unwrap(), 0.01, 1).unwrap();
        let bx = FeasibleBox::default();
        let plan = StagePlan {
            stages: vec![Stage {
                bx: StageBox::Manual(bx),
                strategy: Strategy::Sobol { samples: 200 },
                t_cut: None,
            }],
        };
        let staged = multistage_identify(&m, &plan, &bx, &meas, 1.2, Execution::Sequential).unwrap();
        let direct = random_search(&m, &bx, 200, &meas, 1.2, None, Execution::Sequential).unwrap();
        assert_eq!(staged[0].set, direct);
    }

    #[test]
    fn empty_stage_is_an_error() {
        let m = model();
        let meas = Measurement::synthesize(&m.breakthrough(0.005, 0.05).unwrap(), 0.01, 1).unwrap();
        let plan = StagePlan {
            stages: vec![Stage {
                bx: StageBox::Manual(FeasibleBox {
                    da_a: [0.009, 0.01],
                    da_d: [0.0, 0.001],
                }),
                strategy: Strategy::Sobol { samples: 8 },
                t_cut: None,
            }],
        };
        let err = multistage_identify(&m, &plan, &FeasibleBox::default(), &meas, 1.02625, Execution::Sequential);
        assert!(matches!(err, Err(Error::EmptyAdmissible { stage: 0, .. })));
    }

    #[test]
    fn auto_box_expands_and_clips() {
        let g = FeasibleBox::default();
        let b = FeasibleBox {
            da_a: [0.002, 0.004],
            da_d: [0.0, 0.05],
        }
        .expanded(0.2, &g);
        assert!((b.da_a[0] - 0.0016).abs() < 1e-15 && (b.da_a[1] - 0.0044).abs() < 1e-15);
        assert_eq!(b.da_d[0], 0.0);
        assert!((b.da_d[1] - 0.06).abs() < 1e-15);
    }

    #[test]
    fn single_realization_intersection_is_the_set() {
        let m = model();
        let params = grid_points(&FeasibleBox::default(), 6, 6);
        let r = multi_realization(&m, (0.004, 0.04), &params, 0.01, &[5], 1.2, None, Execution::Sequential).unwrap();
        assert_eq!(r.intersection, r.sets[0].admissible);
    }

    #[test]
    fn measurement_csv_round_trip() {
        let c = model().breakthrough(0.005, 0.05).unwrap();
        let meas = Measurement::synthesize(&c, 0.01, 9).unwrap();
        let back = Measurement::from_csv(&meas.to_csv(), 0.1, 0.01).unwrap();
        assert_eq!(back.values, meas.values);
        let mut lines: Vec<String> = meas.to_csv().lines().map(String::from).collect();
        lines[2] = format!("0.25,{}", meas.values[1]);
        let broken = lines.join("\n");
        assert!(matches!(Measurement::from_csv(&broken, 0.1, 0.01), Err(Error::GridMismatch(_))));
    }
}
