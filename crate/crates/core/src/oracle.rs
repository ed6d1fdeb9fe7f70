//! Closed-form gradients of the two-class contextual-temperature softmax.
//!
//! With logits `z`, temperature logits `z_tau`, `tau = softmax(z_tau)` (so
//! temperatures lie in `(0, 1)`), `u = z / tau`, `p = softmax(u)` and loss
//! `L = -ln p_0`:
//!
//! ```text
//! dL/dz_0     = (p_0 - 1) / tau_0
//! dL/dz_1     = p_1 / tau_1
//! dL/dz_tau0  = p_1 z_0 tau_1 / tau_0 + p_1 z_1 tau_0 / tau_1 = -dL/dz_tau1
//! ```
//!
//! These serve as an independent check of the differentiation engine and
//! generate the gradient surfaces over `(p_i, tau_i)`.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::check::relative_error;
use crate::autodiff::{Graph, GraphError};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid point: {0}")]
    Point(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn softmax2(a: f64, b: f64) -> [f64; 2] {
    // Written via the difference so the smaller entry keeps full precision.
    let d = a - b;
    if d >= 0.0 {
        let e = (-d).exp();
        [1.0 / (1.0 + e), e / (1.0 + e)]
    } else {
        let e = d.exp();
        [e / (1.0 + e), 1.0 / (1.0 + e)]
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One two-class instance; the true class is always 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoClassPoint {
    pub z: [f64; 2],
    pub z_tau: [f64; 2],
    pub tau: [f64; 2],
    pub u: [f64; 2],
    pub p: [f64; 2],
}

impl TwoClassPoint {
    pub fn new(z: [f64; 2], z_tau: [f64; 2]) -> Result<Self, OracleError> {
        if z.iter().chain(&z_tau).any(|x| !x.is_finite()) {
            return Err(OracleError::Point(format!("non-finite input z={z:?} z_tau={z_tau:?}")));
        }
        let tau = softmax2(z_tau[0], z_tau[1]);
        if !(tau[0] > 0.0 && tau[1] > 0.0) {
            return Err(OracleError::Point(format!("temperature underflow at z_tau={z_tau:?}")));
        }
        let u = [z[0] / tau[0], z[1] / tau[1]];
        let p = softmax2(u[0], u[1]);
        Ok(Self { z, z_tau, tau, u, p })
    }

    /// `-ln p_0`.
    pub fn loss(&self) -> f64 {
        let d = self.u[1] - self.u[0];
        if d > 0.0 {
            d + (-d).exp().ln_1p()
        } else {
            d.exp().ln_1p()
        }
    }
}

/// Logit gradients for an arbitrary positive temperature pair, which need not
/// come from a softmax; `tau = (1, 1)` is the plain softmax cross-entropy.
pub fn logit_grads_at(z: [f64; 2], tau: [f64; 2]) -> [f64; 2] {
    let p = softmax2(z[0] / tau[0], z[1] / tau[1]);
    [(p[0] - 1.0) / tau[0], p[1] / tau[1]]
}

/// `(dL/dz_0, dL/dz_1)`.
pub fn two_class_logit_grads(point: &TwoClassPoint) -> [f64; 2] {
    let [p0, p1] = point.p;
    let [t0, t1] = point.tau;
    [(p0 - 1.0) / t0, p1 / t1]
}

/// `(dL/dz_tau0, dL/dz_tau1)`; the second is the exact negation of the first.
pub fn two_class_temperature_grads(point: &TwoClassPoint) -> [f64; 2] {
    let p1 = point.p[1];
    let [z0, z1] = point.z;
    let [t0, t1] = point.tau;
    let g = (1.0 / t0) * p1 * z0 * t1 + (1.0 / t1) * p1 * z1 * t0;
    [g, -g]
}

/// Gradients of `-ln softmax(z / softmax(z_tau))_0` from the differentiation
/// engine: `(d/dz, d/dz_tau)`.
pub fn autodiff_grads(point: &TwoClassPoint) -> Result<([f64; 2], [f64; 2]), OracleError> {
    let mut g = Graph::new();
    let z = g.param(Tensor::matrix(1, 2, point.z.to_vec())?);
    let zt = g.param(Tensor::matrix(1, 2, point.z_tau.to_vec())?);
    let tau = g.softmax(zt, 1)?;
    let u = g.div(z, tau)?;
    let p = g.softmax(u, 1)?;
    let p0 = g.pick(p, &[0])?;
    let ln = g.ln_floor(p0, f64::MIN_POSITIVE);
    let loss = g.scale(ln, -1.0);
    let grads = g.backward(loss)?;
    let dz = grads.get(z);
    let dt = grads.get(zt);
    Ok((
        [dz.data()[0], dz.data()[1]],
        [dt.data()[0], dt.data()[1]],
    ))
}

/// Largest relative errors found by [`check_agreement`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementReport {
    pub samples: usize,
    pub logit_error: f64,
    pub temperature_error: f64,
}

impl AgreementReport {
    pub fn max_error(&self) -> f64 {
        self.logit_error.max(self.temperature_error)
    }
}

/// Sampling box for random points: `z` in `[-3, 3]`, `z_tau` in `[-1.5, 1.5]`.
pub const Z_RANGE: f64 = 3.0;
pub const Z_TAU_RANGE: f64 = 1.5;
/// Magnitudes below this are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;

pub fn random_point<R: Rng>(rng: &mut R) -> TwoClassPoint {
    let z = [rng.gen_range(-Z_RANGE..=Z_RANGE), rng.gen_range(-Z_RANGE..=Z_RANGE)];
    let zt = [
        rng.gen_range(-Z_TAU_RANGE..=Z_TAU_RANGE),
        rng.gen_range(-Z_TAU_RANGE..=Z_TAU_RANGE),
    ];
    TwoClassPoint::new(z, zt).expect("sampling box keeps points valid")
}

/// Compares autodiff against the closed forms on `samples` random points.
pub fn check_agreement(samples: usize, seed: u64) -> Result<AgreementReport, OracleError> {
    let mut rng = stream(seed, "oracle/points");
    let mut report = AgreementReport {
        samples,
        logit_error: 0.0,
        temperature_error: 0.0,
    };
    for _ in 0..samples {
        let pt = random_point(&mut rng);
        let (dz, dt) = autodiff_grads(&pt)?;
        let cz = two_class_logit_grads(&pt);
        let ct = two_class_temperature_grads(&pt);
        for i in 0..2 {
            report.logit_error = report.logit_error.max(relative_error(dz[i], cz[i], ERROR_FLOOR));
            report.temperature_error = report
                .temperature_error
                .max(relative_error(dt[i], ct[i], ERROR_FLOOR));
        }
    }
    Ok(report)
}

/// Evenly spaced axis values, both ends included, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Self { min, max, steps }
    }

    fn validate(&self, name: &str) -> Result<(), OracleError> {
        if self.steps < 2 {
            return Err(OracleError::Grid(format!("{name} needs at least 2 steps, got {}", self.steps)));
        }
        if !(0.0 < self.min && self.min < self.max && self.max < 1.0) {
            return Err(OracleError::Grid(format!(
                "{name} range [{}, {}] must lie strictly inside (0, 1)",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let span = self.max - self.min;
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                if k + 1 == self.steps {
                    self.max
                } else {
                    self.min + span * k as f64 / last
                }
            })
            .collect()
    }

    /// Same range with every interval halved; old values stay grid points.
    pub fn refined(&self) -> Self {
        Self {
            steps: 2 * self.steps - 1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub probability: Axis,
    pub temperature: Axis,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            probability: Axis::new(0.01, 0.99, 50),
            temperature: Axis::new(0.01, 0.99, 50),
        }
    }
}

impl GridSpec {
    pub fn refined(&self) -> Self {
        Self {
            probability: self.probability.refined(),
            temperature: self.temperature.refined(),
        }
    }
}

/// Which gradient is plotted over `(p_i, tau_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshSurface {
    /// `dL/dz_i`, with the other logit held at 0.
    Logit { class: usize },
    /// `dL/dz_tau_i`, with `z_0 = +1` or `-1`.
    Temperature { class: usize, z0_positive: bool },
}

impl MeshSurface {
    fn class(&self) -> usize {
        match *self {
            Self::Logit { class } | Self::Temperature { class, .. } => class,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Self::Logit { class } => format!("logit-{class}"),
            Self::Temperature { class, z0_positive } => {
                format!("temperature-{class}-{}", if z0_positive { "pos" } else { "neg" })
            }
        }
    }
}

/// Gradient values over a `(tau_i, p_i)` grid, row-major by temperature.
/// `None` marks grid points no finite logit reaches.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMesh {
    pub surface: MeshSurface,
    pub probabilities: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub values: Vec<Option<f64>>,
    /// Same gradient without temperature; logit surfaces only.
    pub baseline: Option<Vec<Option<f64>>>,
}

impl GradientMesh {
    pub fn get(&self, tau_index: usize, p_index: usize) -> Option<f64> {
        self.values[tau_index * self.probabilities.len() + p_index]
    }

    pub fn baseline_at(&self, tau_index: usize, p_index: usize) -> Option<f64> {
        self.baseline
            .as_ref()
            .and_then(|b| b[tau_index * self.probabilities.len() + p_index])
    }

    /// Columns `p,tau,gradient,baseline`; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut out = String::from("p,tau,gradient,baseline\n");
        for (ti, &tau) in self.temperatures.iter().enumerate() {
            for (pi, &p) in self.probabilities.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{p:e},{tau:e},{},{}",
                    cell(self.get(ti, pi)),
                    cell(self.baseline_at(ti, pi))
                );
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// The point whose class-`class` probability and temperature are `p_i`, `tau_i`.
fn mesh_point(surface: MeshSurface, p_i: f64, tau_i: f64) -> Option<TwoClassPoint> {
    let class = surface.class();
    let (p0, t0) = if class == 0 { (p_i, tau_i) } else { (1.0 - p_i, 1.0 - tau_i) };
    let t1 = 1.0 - t0;
    let z = match surface {
        MeshSurface::Logit { class } => {
            let zi = tau_i * logit(p_i);
            if class == 0 { [zi, 0.0] } else { [0.0, zi] }
        }
        MeshSurface::Temperature { z0_positive, .. } => {
            let z0 = if z0_positive { 1.0 } else { -1.0 };
            [z0, t1 * (z0 / t0 - logit(p0))]
        }
    };
    TwoClassPoint::new(z, [logit(t0), 0.0]).ok()
}

pub fn gradient_mesh(grid: &GridSpec, surface: MeshSurface) -> Result<GradientMesh, OracleError> {
    grid.probability.validate("probability axis")?;
    grid.temperature.validate("temperature axis")?;
    let class = surface.class();
    if class > 1 {
        return Err(OracleError::Grid(format!("class must be 0 or 1, got {class}")));
    }
    let probabilities = grid.probability.values();
    let temperatures = grid.temperature.values();
    let mut values = Vec::with_capacity(probabilities.len() * temperatures.len());
    let mut baseline = Vec::with_capacity(values.capacity());
    for &tau in &temperatures {
        for &p in &probabilities {
            let pt = mesh_point(surface, p, tau);
            let v = pt.and_then(|pt| match surface {
                MeshSurface::Logit { .. } => finite(two_class_logit_grads(&pt)[class]),
                MeshSurface::Temperature { .. } => finite(two_class_temperature_grads(&pt)[class]),
            });
            values.push(v);
            if let MeshSurface::Logit { .. } = surface {
                let mut z = [0.0; 2];
                z[class] = logit(p);
                baseline.push(finite(logit_grads_at(z, [1.0, 1.0])[class]));
            }
        }
    }
    Ok(GradientMesh {
        surface,
        probabilities,
        temperatures,
        values,
        baseline: matches!(surface, MeshSurface::Logit { .. }).then_some(baseline),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::finite_difference_gradient;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn fd(point: &TwoClassPoint) -> ([f64; 2], [f64; 2]) {
        let g = finite_difference_gradient(
            |ps| {
                let d = ps[0].data();
                let t = ps[1].data();
                TwoClassPoint::new([d[0], d[1]], [t[0], t[1]]).unwrap().loss()
            },
            &[Tensor::vector(point.z.to_vec()), Tensor::vector(point.z_tau.to_vec())],
            1e-5,
        )
        .unwrap();
        (
            [g[0].data()[0], g[0].data()[1]],
            [g[1].data()[0], g[1].data()[1]],
        )
    }

    #[test]
    fn symmetric_point_logit_grads() {
        let pt = TwoClassPoint::new([0.0, 0.0], [0.0, 0.0]).unwrap();
        assert_eq!(pt.tau, [0.5, 0.5]);
        assert_eq!(pt.p, [0.5, 0.5]);
        assert_eq!(two_class_logit_grads(&pt), [-1.0, 1.0]);
        let (dz, _) = fd(&pt);
        assert!((dz[0] + 1.0).abs() < 1e-8 && (dz[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unit_logits_temperature_grad() {
        let pt = TwoClassPoint::new([1.0, 1.0], [0.0, 0.0]).unwrap();
        assert_eq!(two_class_temperature_grads(&pt), [1.0, -1.0]);
        let (_, dt) = fd(&pt);
        assert!((dt[0] - 1.0).abs() < 1e-8 && (dt[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn unit_temperature_is_bounded_baseline() {
        for z1 in [-5.0, -1.0, 0.0, 2.0, 8.0] {
            let g = logit_grads_at([0.3, z1], [1.0, 1.0]);
            let p1 = softmax2(0.3, z1)[1];
            assert_eq!(g[1], p1);
            assert!(g[1].abs() <= 1.0);
        }
    }

    #[test]
    fn zero_probability_gives_zero_gradients() {
        let pt = TwoClassPoint::new([800.0, -800.0], [0.0, 0.0]).unwrap();
        assert_eq!(pt.p[1], 0.0);
        assert_eq!(two_class_logit_grads(&pt)[1], 0.0);
        assert_eq!(two_class_temperature_grads(&pt), [0.0, -0.0]);
    }

    #[test]
    fn engine_agrees_with_closed_forms() {
        let r = check_agreement(1000, 7).unwrap();
        assert!(r.max_error() < 1e-8, "{r:?}");
    }

    #[test]
    fn injected_unit_temperature_reduces_to_softmax_ce() {
        let mut rng = stream(3, "reduction");
        for _ in 0..50 {
            let z = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let mut g = Graph::new();
            let zn = g.param(Tensor::matrix(1, 2, z.to_vec()).unwrap());
            let tau = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
            let u = g.div(zn, tau).unwrap();
            let p = g.softmax(u, 1).unwrap();
            let p0 = g.pick(p, &[0]).unwrap();
            let ln = g.ln_floor(p0, f64::MIN_POSITIVE);
            let loss = g.scale(ln, -1.0);
            let d = g.backward(loss).unwrap().get(zn);
            let probs = softmax2(z[0], z[1]);
            let want = [probs[0] - 1.0, probs[1]];
            let closed = logit_grads_at(z, [1.0, 1.0]);
            for i in 0..2 {
                assert!(relative_error(d.data()[i], want[i], 1e-12) < 1e-12);
                assert!(relative_error(closed[i], want[i], 1e-12) < 1e-12);
            }
        }
    }

    #[test]
    fn logit_surface_is_p_over_tau() {
        let grid = GridSpec {
            probability: Axis::new(0.05, 0.95, 7),
            temperature: Axis::new(0.1, 0.9, 5),
        };
        let m = gradient_mesh(&grid, MeshSurface::Logit { class: 1 }).unwrap();
        for (ti, &tau) in m.temperatures.iter().enumerate() {
            for (pi, &p) in m.probabilities.iter().enumerate() {
                let v = m.get(ti, pi).unwrap();
                assert!((v - p / tau).abs() < 1e-12 * (1.0 + v.abs()), "{v} vs {}", p / tau);
                assert!((m.baseline_at(ti, pi).unwrap() - p).abs() < 1e-12);
            }
        }
        let pt = mesh_point(MeshSurface::Logit { class: 1 }, 0.3, 0.4).unwrap();
        let (dz, _) = fd(&pt);
        assert!((dz[1] - 0.3 / 0.4).abs() < 1e-7);
    }

    #[test]
    fn logit_surface_class0_matches_closed_form() {
        let m = gradient_mesh(&GridSpec::default(), MeshSurface::Logit { class: 0 }).unwrap();
        for (ti, &tau) in m.temperatures.iter().enumerate() {
            for (pi, &p) in m.probabilities.iter().enumerate() {
                let v = m.get(ti, pi).unwrap();
                assert!((v - (p - 1.0) / tau).abs() < 1e-10 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn temperature_surface_points_match_grid() {
        for z0_positive in [false, true] {
            for class in 0..2 {
                let s = MeshSurface::Temperature { class, z0_positive };
                let pt = mesh_point(s, 0.3, 0.6).unwrap();
                assert!((pt.p[class] - 0.3).abs() < 1e-12);
                assert!((pt.tau[class] - 0.6).abs() < 1e-12);
                assert_eq!(pt.z[0], if z0_positive { 1.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn negative_logit_surface_peaks_on_low_probability_edge() {
        let m = gradient_mesh(
            &GridSpec::default(),
            MeshSurface::Temperature { class: 0, z0_positive: false },
        )
        .unwrap();
        let peak = m.max_abs();
        let edge = (0..m.temperatures.len())
            .filter_map(|ti| m.get(ti, 0))
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert_eq!(edge, peak);
    }

    #[test]
    fn refinement_keeps_shared_points() {
        let grid = GridSpec {
            probability: Axis::new(0.02, 0.98, 9),
            temperature: Axis::new(0.05, 0.95, 6),
        };
        let fine_grid = grid.refined();
        for s in [
            MeshSurface::Logit { class: 1 },
            MeshSurface::Temperature { class: 0, z0_positive: true },
            MeshSurface::Temperature { class: 1, z0_positive: false },
        ] {
            let coarse = gradient_mesh(&grid, s).unwrap();
            let fine = gradient_mesh(&fine_grid, s).unwrap();
            for ti in 0..coarse.temperatures.len() {
                for pi in 0..coarse.probabilities.len() {
                    assert!((coarse.temperatures[ti] - fine.temperatures[2 * ti]).abs() < 1e-15);
                    let a = coarse.get(ti, pi).unwrap();
                    let b = fine.get(2 * ti, 2 * pi).unwrap();
                    assert!((a - b).abs() < 1e-6, "{s:?} {a} {b}");
                }
            }
        }
    }

    #[test]
    fn csv_has_header_and_all_points() {
        let grid = GridSpec {
            probability: Axis::new(0.1, 0.9, 3),
            temperature: Axis::new(0.2, 0.8, 2),
        };
        let csv = gradient_mesh(&grid, MeshSurface::Logit { class: 1 }).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "p,tau,gradient,baseline");
        assert_eq!(lines.len(), 7);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
        let t = gradient_mesh(&grid, MeshSurface::Temperature { class: 1, z0_positive: true })
            .unwrap()
            .to_csv();
        assert!(t.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn bad_grids_rejected() {
        let mut g = GridSpec::default();
        g.probability.steps = 1;
        assert!(gradient_mesh(&g, MeshSurface::Logit { class: 0 }).is_err());
        let mut g = GridSpec::default();
        g.temperature.max = 1.0;
        assert!(gradient_mesh(&g, MeshSurface::Logit { class: 0 }).is_err());
        assert!(gradient_mesh(&GridSpec::default(), MeshSurface::Logit { class: 2 }).is_err());
    }

    proptest! {
        #[test]
        fn temperature_grads_antisymmetric(
            z0 in -5.0f64..5.0, z1 in -5.0f64..5.0, a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let pt = TwoClassPoint::new([z0, z1], [a, b]).unwrap();
            let [g0, g1] = two_class_temperature_grads(&pt);
            prop_assert_eq!(g0, -g1);
            prop_assert!((pt.tau[0] + pt.tau[1] - 1.0).abs() < 1e-12);
            prop_assert!((pt.p[0] + pt.p[1] - 1.0).abs() < 1e-12);
        }
    }
}
