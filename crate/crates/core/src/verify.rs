//! Randomized property suites behind the `verify` subcommand.
//!
//! Every suite is driven by a seeded ChaCha generator, so a given
//! `(seed, trials)` pair reproduces the same draws and the same failures.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::converter::{build_converter, check_dc_template, GfmParameters, OperatingPoint};
use crate::error::Result;
use crate::linalg::{self, CMat};
use crate::matrix_phase::{self, PhaseInterval, Sectoriality};
use crate::transforms::{TransformSet, Weight};

pub const BOUND_SLACK: f64 = 1e-9;
pub const DC_TEMPLATE_TOLERANCE: f64 = 1e-8;
pub const DET_TOLERANCE: f64 = 1e-8;
/// Random evaluation points per frame kind in the determinant suite.
pub const DET_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 1, trials: 200 }
    }
}

/// Outcome of one suite. `worst` is the largest observed residual (or the
/// most negative slack, for the bound suites).
#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub first_failure: Option<String>,
}

impl CheckSummary {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, trials: 0, failures: 0, worst: 0.0, tolerance, first_failure: None }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }

    fn fail(&mut self, what: String) {
        self.failures += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(what);
        }
    }
}

fn rng_for(opts: VerifyOptions, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    rng
}

pub fn random_complex(rng: &mut impl Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Congruence `T* D T` with unit-modulus `D` whose phases span less than π/2,
/// so the product of two such matrices stays inside the phase-sum regime.
pub fn random_sectorial(rng: &mut impl Rng, n: usize) -> CMat {
    let center = rng.gen_range(-PI..PI);
    let half = rng.gen_range(0.01..PI / 4.0);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| {
        Complex64::from_polar(rng.gen_range(0.2..2.0), center + rng.gen_range(-half..half))
    }));
    let mut t = random_complex(rng, n);
    for i in 0..n {
        t[(i, i)] += Complex64::new(2.0, 0.0);
    }
    t.adjoint() * d * &t
}

/// Randomized GFM parameters and a canonical operating point (Q-control off).
pub fn random_gfm_draw(rng: &mut impl Rng) -> (GfmParameters, OperatingPoint) {
    let p = GfmParameters {
        inertia: rng.gen_range(0.005..0.2),
        damping: rng.gen_range(0.05..2.0),
        r_v: rng.gen_range(0.0..0.2),
        l_v: rng.gen_range(0.05..0.4),
        k_p: rng.gen_range(0.5..3.0),
        k_r: rng.gen_range(10.0..200.0),
        ..GfmParameters::default()
    };
    let op = OperatingPoint::new(rng.gen_range(0.9..1.1), 0.0, rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5))
        .expect("nonzero voltage");
    (p, op)
}

fn random_op(rng: &mut impl Rng) -> OperatingPoint {
    let v = Complex64::from_polar(rng.gen_range(0.8..1.2), rng.gen_range(-PI..PI));
    OperatingPoint::new(v.re, v.im, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).expect("nonzero voltage")
}

/// Gain-product and phase-sum bounds on eigenvalues of `AB`. Each trial
/// draws a general pair (gain only) and a sectorial pair (both bounds).
pub fn bound_properties(opts: VerifyOptions) -> (CheckSummary, CheckSummary) {
    let mut rng = rng_for(opts, 1);
    let mut gain = CheckSummary::new("gain-product bound", BOUND_SLACK);
    let mut phase = CheckSummary::new("phase-sum bound", BOUND_SLACK);
    // smallest normalized slack seen
    gain.worst = f64::INFINITY;
    phase.worst = f64::INFINITY;
    for trial in 0..opts.trials {
        let n = rng.gen_range(2..=6);
        let pairs = [
            (random_complex(&mut rng, n), random_complex(&mut rng, n), false),
            (random_sectorial(&mut rng, n), random_sectorial(&mut rng, n), true),
        ];
        for (a, b, sectorial) in pairs {
            let bound = matrix_phase::gain_extrema(&a).max * matrix_phase::gain_extrema(&b).max;
            let eig = linalg::eigenvalues(&(&a * &b));
            gain.trials += 1;
            let slack = eig.iter().map(|l| (bound - l.norm()) / bound.max(1.0)).fold(f64::INFINITY, f64::min);
            gain.worst = gain.worst.min(slack);
            if slack < -BOUND_SLACK {
                gain.fail(format!("trial {trial}: n = {n}, slack {slack:.3e}"));
            }
            if !sectorial {
                continue;
            }
            phase.trials += 1;
            let (pa, pb) = match (matrix_phase::phases(&a), matrix_phase::phases(&b)) {
                (Ok(pa), Ok(pb)) => (pa, pb),
                _ => {
                    phase.fail(format!("trial {trial}: synthesized matrix not sectorial"));
                    continue;
                }
            };
            let sum = PhaseInterval {
                lower: pa.interval.lower + pb.interval.lower,
                upper: pa.interval.upper + pb.interval.upper,
            };
            let slack = eig.iter().map(|l| angle_slack(&sum, l.arg())).fold(f64::INFINITY, f64::min);
            phase.worst = phase.worst.min(slack);
            if slack < -BOUND_SLACK {
                phase.fail(format!("trial {trial}: n = {n}, slack {slack:.3e}"));
            }
        }
    }
    (gain, phase)
}

/// Signed distance of `angle` (mod 2π) inside `interval`; negative outside.
fn angle_slack(interval: &PhaseInterval, angle: f64) -> f64 {
    let mid = 0.5 * (interval.lower + interval.upper);
    let a = angle + 2.0 * PI * ((mid - angle) / (2.0 * PI)).round();
    (a - interval.lower).min(interval.upper - a)
}

/// Per-draw residuals of the zero-frequency converter structure.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DcTemplateResiduals {
    pub template: f64,
    pub trace: f64,
    /// `‖Y_DQ(0) V₀ᵉ − I₀ᵉ‖`.
    pub plus_sign: f64,
    /// `‖Y_DQ(0) V₀ᵉ + I₀ᵉ‖`.
    pub minus_sign: f64,
    pub non_sectorial: bool,
}

pub fn dc_template_residuals(p: &GfmParameters, op: &OperatingPoint) -> Result<DcTemplateResiduals> {
    let conv = build_converter(p, op)?;
    let r = check_dc_template(&conv)?;
    Ok(DcTemplateResiduals {
        template: r.template_residual,
        trace: r.trace.abs(),
        plus_sign: r.rotation_residual,
        minus_sign: (&r.matrix * op.v_e() + op.i_e()).norm(),
        non_sectorial: r.class.kind == Sectoriality::Non,
    })
}

/// Zero-frequency converter template and classification over random draws.
/// The rotation identity is checked with the sign the template implies;
/// the opposite-sign residual is reported through `dc_template_residuals`.
pub fn dc_template_suite(opts: VerifyOptions) -> Result<CheckSummary> {
    let mut rng = rng_for(opts, 2);
    let mut out = CheckSummary::new("converter DC template", DC_TEMPLATE_TOLERANCE);
    for trial in 0..opts.trials {
        let (p, op) = random_gfm_draw(&mut rng);
        let r = dc_template_residuals(&p, &op)?;
        out.trials += 1;
        let worst = r.template.max(r.trace).max(r.plus_sign);
        out.worst = out.worst.max(worst);
        if worst > DC_TEMPLATE_TOLERANCE || !r.non_sectorial {
            out.fail(format!("trial {trial}: residual {worst:.3e}, non-sectorial {}", r.non_sectorial));
        }
    }
    Ok(out)
}

/// `J_C(0)` in the power-polar frame: residual from `diag(0, γ)`, `γ`, class.
pub fn power_polar_dc(p: &GfmParameters, op: &OperatingPoint) -> Result<(f64, f64, Sectoriality)> {
    let conv = build_converter(p, op)?;
    let t = TransformSet::power_polar(&[*op])?;
    let s0 = Complex64::new(0.0, 0.0);
    let j0 = t.converter_response(0, &conv.y_frame.evaluate(s0)?, s0);
    let gamma = j0[(1, 1)].re;
    let residual = [(0, 0), (0, 1), (1, 0)]
        .iter()
        .map(|&ix| j0[ix].norm())
        .fold(j0[(1, 1)].im.abs(), f64::max);
    let class = matrix_phase::classify(&j0, matrix_phase::DEFAULT_RELATIVE_TOLERANCE).kind;
    Ok((residual, gamma, class))
}

pub fn power_polar_suite(opts: VerifyOptions) -> Result<CheckSummary> {
    let mut rng = rng_for(opts, 2);
    let mut out = CheckSummary::new("power-polar DC diagonal", DC_TEMPLATE_TOLERANCE);
    for trial in 0..opts.trials {
        let (p, op) = random_gfm_draw(&mut rng);
        let (residual, _, class) = power_polar_dc(&p, &op)?;
        out.trials += 1;
        out.worst = out.worst.max(residual);
        if residual > DC_TEMPLATE_TOLERANCE || class != Sectoriality::Quasi {
            out.fail(format!("trial {trial}: residual {residual:.3e}, class {}", class.label()));
        }
    }
    Ok(out)
}

/// Relative residual of `det(J_C + J_net) = det(ℰ) det(Y_C + Y_net) det(ℱ)`
/// at `s` for random two-port data.
pub fn det_equivalence_residual(t: &TransformSet, rng: &mut impl Rng, s: Complex64) -> f64 {
    let n = t.len();
    let blocks: Vec<CMat> = (0..n).map(|_| random_complex(rng, 2)).collect();
    let yn = random_complex(rng, 2 * n);
    let jc = linalg::block_diag(&blocks.iter().enumerate().map(|(i, y)| t.converter_response(i, y, s)).collect::<Vec<_>>());
    let lhs = linalg::determinant(&(jc + t.network_response(&yn, s)));
    let rhs = linalg::determinant(&t.e(s)) * linalg::determinant(&(linalg::block_diag(&blocks) + yn)) * linalg::determinant(&t.f(s));
    (lhs - rhs).norm() / rhs.norm().max(lhs.norm()).max(1e-300)
}

/// Every frame kind, including both weight choices for the blended frame.
pub fn all_frames(ops: &[OperatingPoint], omega_c: f64) -> Result<Vec<(&'static str, TransformSet)>> {
    let va = Weight::virtual_impedance(&GfmParameters::default());
    Ok(vec![
        ("rectangular", TransformSet::rectangular(ops.len())),
        ("power-polar", TransformSet::power_polar(ops)?),
        ("blended/identity", TransformSet::blended(ops, omega_c, &vec![Weight::Identity; ops.len()])?),
        ("blended/va-ref", TransformSet::blended(ops, omega_c, &vec![va; ops.len()])?),
        ("naive-blended", TransformSet::naive_blended(ops, omega_c)?),
    ])
}

/// `s` with log-uniform magnitude in [1e-2, 1e4] rad/s and a random argument
/// in the closed right half-plane or on the imaginary axis.
pub fn random_s(rng: &mut impl Rng) -> Complex64 {
    let mag = 10f64.powf(rng.gen_range(-2.0..4.0));
    if rng.gen_bool(0.5) {
        Complex64::new(0.0, mag * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
    } else {
        Complex64::from_polar(mag, rng.gen_range(-PI / 2.0..PI / 2.0))
    }
}

/// Determinant identity over every frame. `trials` sets how many random
/// operating-point sets are drawn; each gets `DET_POINTS` evaluation points.
pub fn det_equivalence_suite(opts: VerifyOptions) -> Result<CheckSummary> {
    let mut rng = rng_for(opts, 3);
    let mut out = CheckSummary::new("determinant equivalence", DET_TOLERANCE);
    let sets = (opts.trials / DET_POINTS).max(1);
    for set in 0..sets {
        let n = rng.gen_range(1..=3);
        let ops: Vec<OperatingPoint> = (0..n).map(|_| random_op(&mut rng)).collect();
        let wc = 2.0 * PI * rng.gen_range(0.5..20.0);
        for (name, t) in all_frames(&ops, wc)? {
            for _ in 0..DET_POINTS {
                let s = random_s(&mut rng);
                let r = det_equivalence_residual(&t, &mut rng, s);
                out.trials += 1;
                out.worst = out.worst.max(r);
                if !(r < DET_TOLERANCE) {
                    out.fail(format!("set {set}, frame {name}, s = {s}: residual {r:.3e}"));
                }
            }
        }
    }
    Ok(out)
}

pub fn run_all(opts: VerifyOptions) -> Result<Vec<CheckSummary>> {
    let (gain, phase) = bound_properties(opts);
    Ok(vec![gain, phase, dc_template_suite(opts)?, power_polar_suite(opts)?, det_equivalence_suite(opts)?])
}
