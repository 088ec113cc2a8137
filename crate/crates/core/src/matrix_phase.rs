//! Numerical range, sectoriality and matrix phases.
//!
//! For a square complex `A` write `A = H + jS` with `H`, `S` Hermitian. The
//! rotated Hermitian part of `e^{jθ} A` is `cos θ H - sin θ S`; its smallest
//! eigenvalue `f(θ)` is the signed distance from the origin to the supporting
//! line of `W(A)` in direction `θ`. `A` is sectorial iff `max_θ f(θ) > 0`, and
//! the origin lies on the boundary of `W(A)` iff that maximum is zero.
//!
//! Phases are computed at the most interior rotation `θ*`: with
//! `e^{jθ*} A = H* + j S*`, `H* ≻ 0`, they are `arctan` of the eigenvalues of
//! `H*^{-1/2} S* H*^{-1/2}`, shifted back by `-θ*`. When `H*` is singular the
//! kernel is deflated by a congruence before taking phases.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Relative tolerance separating strict from boundary sectoriality.
pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 1e-8;
/// Uniform angle scan used to bracket the rotation search.
pub const SCAN_POINTS: usize = 720;
/// Relative size of a range/kernel coupling that makes the origin a
/// tangential boundary point (phase spread exactly π).
const COUPLING_FACTOR: f64 = 1e3;
const SPREAD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sectoriality {
    Strict,
    Quasi,
    Semi,
    Non,
}

impl Sectoriality {
    pub fn label(self) -> &'static str {
        match self {
            Sectoriality::Strict => "strict",
            Sectoriality::Quasi => "quasi",
            Sectoriality::Semi => "semi",
            Sectoriality::Non => "non",
        }
    }

    /// Strict or quasi-sectorial.
    pub fn at_least_quasi(self) -> bool {
        matches!(self, Sectoriality::Strict | Sectoriality::Quasi)
    }

    pub fn has_phases(self) -> bool {
        self != Sectoriality::Non
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorialityClass {
    pub kind: Sectoriality,
    /// Witness rotation θ*; `None` for non-sectorial matrices.
    pub rotation: Option<f64>,
    /// `max_θ λ_min(Herm(e^{jθ} A))`.
    pub margin: f64,
    /// Absolute tolerance used for the decision.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub lower: f64,
    pub upper: f64,
}

impl PhaseInterval {
    /// Placeholder interval reported for non-sectorial matrices.
    pub const NON_SECTORIAL: PhaseInterval = PhaseInterval { lower: -2.0 * PI, upper: 2.0 * PI };

    pub fn spread(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, phase: f64, tol: f64) -> bool {
        phase >= self.lower - tol && phase <= self.upper + tol
    }

    /// Whether some `2πk` shift of `angle` lies inside the interval.
    pub fn contains_angle(&self, angle: f64, tol: f64) -> bool {
        let mid = 0.5 * (self.lower + self.upper);
        let k = ((mid - angle) / (2.0 * PI)).round();
        self.contains(angle + 2.0 * PI * k, tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phases {
    pub class: SectorialityClass,
    pub interval: PhaseInterval,
    /// Phases in ascending order. Directions in the common kernel of the
    /// Hermitian and skew parts carry no phase, so this can be shorter than n.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainExtrema {
    pub min: f64,
    pub max: f64,
}

/// Per-frequency summary of a matrix-valued response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    pub class: Sectoriality,
    pub interval: PhaseInterval,
    pub gains: GainExtrema,
}

struct Parts {
    h: CMat,
    s: CMat,
}

impl Parts {
    fn new(a: &CMat) -> Self {
        Self { h: linalg::hermitian_part(a), s: linalg::skew_part(a) }
    }

    fn rotated_hermitian(&self, theta: f64) -> CMat {
        let (sn, cs) = theta.sin_cos();
        &self.h * Complex64::new(cs, 0.0) - &self.s * Complex64::new(sn, 0.0)
    }

    fn rotated_skew(&self, theta: f64) -> CMat {
        let (sn, cs) = theta.sin_cos();
        &self.h * Complex64::new(sn, 0.0) + &self.s * Complex64::new(cs, 0.0)
    }

    fn lowest(&self, theta: f64) -> f64 {
        linalg::hermitian_eigenvalues(&self.rotated_hermitian(theta))[0]
    }
}

/// Support function of `W(A)`: `max_{|x|=1} Re(e^{jθ} x* A x)`.
pub fn numerical_range_support(a: &CMat, theta: f64) -> f64 {
    let parts = Parts::new(a);
    *linalg::hermitian_eigenvalues(&parts.rotated_hermitian(theta))
        .last()
        .expect("non-empty matrix")
}

pub fn gain_extrema(a: &CMat) -> GainExtrema {
    let sv = linalg::singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) => GainExtrema { min, max },
        _ => GainExtrema { min: 0.0, max: 0.0 },
    }
}

pub fn classify(a: &CMat, relative_tolerance: f64) -> SectorialityClass {
    analyze(a, relative_tolerance).class
}

/// Phases with the default tolerance. Fails for non-sectorial input.
pub fn phases(a: &CMat) -> Result<Phases> {
    phases_with_tolerance(a, DEFAULT_RELATIVE_TOLERANCE)
}

pub fn phases_with_tolerance(a: &CMat, relative_tolerance: f64) -> Result<Phases> {
    let analysis = analyze(a, relative_tolerance);
    match analysis.phases {
        Some(values) => Ok(Phases {
            class: analysis.class,
            interval: analysis.interval,
            values,
        }),
        None => Err(Error::NotSectorial),
    }
}

/// Class, phase interval (sentinel `[-2π, 2π]` when non-sectorial) and gains.
pub fn profile(a: &CMat) -> PhaseProfile {
    let analysis = analyze(a, DEFAULT_RELATIVE_TOLERANCE);
    PhaseProfile {
        class: analysis.class.kind,
        interval: analysis.interval,
        gains: gain_extrema(a),
    }
}

struct Analysis {
    class: SectorialityClass,
    interval: PhaseInterval,
    phases: Option<Vec<f64>>,
}

fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..90 {
        if hi - lo < 1e-14 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Bisect for the crossing of `f = level` between an inside point and an outside point.
fn bisect_edge(f: impl Fn(f64) -> f64, mut inside: f64, mut outside: f64, level: f64) -> f64 {
    for _ in 0..60 {
        let mid = 0.5 * (inside + outside);
        if f(mid) >= level {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    0.5 * (inside + outside)
}

fn analyze(a: &CMat, relative_tolerance: f64) -> Analysis {
    let n = a.nrows();
    assert!(n >= 1 && a.ncols() == n, "square non-empty matrix expected");
    let scale = gain_extrema(a).max;
    let tol = relative_tolerance * scale;
    if scale == 0.0 {
        // W(A) = {0}: the origin is on the boundary and no direction has a phase
        return Analysis {
            class: SectorialityClass { kind: Sectoriality::Quasi, rotation: Some(0.0), margin: 0.0, tolerance: 0.0 },
            interval: PhaseInterval { lower: 0.0, upper: 0.0 },
            phases: Some(Vec::new()),
        };
    }
    let parts = Parts::new(a);
    let step = 2.0 * PI / SCAN_POINTS as f64;
    let scan: Vec<f64> = (0..SCAN_POINTS).map(|k| parts.lowest(k as f64 * step)).collect();
    let kmax = scan
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(k, _)| k)
        .unwrap();
    let (mut theta, mut fmax) = golden_max(|t| parts.lowest(t), (kmax as f64 - 1.0) * step, (kmax as f64 + 1.0) * step);
    if scan[kmax] > fmax {
        theta = kmax as f64 * step;
        fmax = scan[kmax];
    }

    if fmax < -tol {
        return Analysis {
            class: SectorialityClass { kind: Sectoriality::Non, rotation: None, margin: fmax, tolerance: tol },
            interval: PhaseInterval::NON_SECTORIAL,
            phases: None,
        };
    }

    let boundary = fmax <= tol;
    if boundary {
        // The maximizers form an arc of rotations keeping W(A) in the closed
        // right half-plane; use its midpoint.
        let inside = |k: isize| scan[k.rem_euclid(SCAN_POINTS as isize) as usize] >= -tol;
        let k0 = kmax as isize;
        if (0..SCAN_POINTS as isize).all(inside) {
            theta = 0.0;
        } else {
            let mut left = k0;
            while inside(left - 1) {
                left -= 1;
            }
            let mut right = k0;
            while inside(right + 1) {
                right += 1;
            }
            let f = |t: f64| parts.lowest(t);
            let lo = bisect_edge(f, left as f64 * step, (left - 1) as f64 * step, -tol);
            let hi = bisect_edge(f, right as f64 * step, (right + 1) as f64 * step, -tol);
            theta = 0.5 * (lo + hi);
        }
    }

    let (rel, coupled) = rotated_phases(&parts, theta, tol);
    let center = wrap_angle(-theta);
    let mut values: Vec<f64> = rel.iter().map(|p| p + center).collect();
    values.sort_by(|x, y| x.total_cmp(y));
    let interval = match (values.first(), values.last()) {
        (Some(&lo), Some(&hi)) => PhaseInterval { lower: lo, upper: hi },
        _ => PhaseInterval { lower: center, upper: center },
    };
    let kind = if !boundary {
        Sectoriality::Strict
    } else if coupled || interval.spread() >= PI - SPREAD_TOLERANCE {
        Sectoriality::Semi
    } else {
        Sectoriality::Quasi
    };
    Analysis {
        class: SectorialityClass { kind, rotation: Some(theta), margin: fmax, tolerance: tol },
        interval,
        phases: Some(values),
    }
}

/// Phases of `e^{jθ} A` relative to the rotated frame, plus a flag telling
/// whether a phaseless kernel direction couples to the regular part.
fn rotated_phases(parts: &Parts, theta: f64, tol: f64) -> (Vec<f64>, bool) {
    let h = parts.rotated_hermitian(theta);
    let s = parts.rotated_skew(theta);
    let (hv, u) = linalg::hermitian_eigen(&h);
    let st = u.adjoint() * &s * &u;
    let range: Vec<usize> = (0..hv.len()).filter(|&i| hv[i] > tol).collect();
    let kernel: Vec<usize> = (0..hv.len()).filter(|&i| hv[i] <= tol).collect();

    let sub = |rows: &[usize], cols: &[usize]| CMat::from_fn(rows.len(), cols.len(), |i, j| st[(rows[i], cols[j])]);
    let mut phases = Vec::new();
    let mut coupled = false;

    let mut s_eff = sub(&range, &range);
    if !kernel.is_empty() {
        let s_kk = sub(&kernel, &kernel);
        let s_rk = sub(&range, &kernel);
        let (sk, v) = linalg::hermitian_eigen(&s_kk);
        let nonzero: Vec<usize> = (0..sk.len()).filter(|&i| sk[i].abs() > tol).collect();
        let null: Vec<usize> = (0..sk.len()).filter(|&i| sk[i].abs() <= tol).collect();
        let cols = |idx: &[usize]| CMat::from_fn(v.nrows(), idx.len(), |i, j| v[(i, idx[j])]);
        let (vn, v0) = (cols(&nonzero), cols(&null));
        if !range.is_empty() && !null.is_empty() {
            let s_r0 = &s_rk * &v0;
            coupled = linalg::max_abs(&s_r0) > COUPLING_FACTOR * tol;
        }
        if !nonzero.is_empty() {
            let s_rn = &s_rk * &vn;
            let inv_diag = CMat::from_fn(nonzero.len(), nonzero.len(), |i, j| {
                if i == j {
                    Complex64::new(1.0 / sk[nonzero[i]], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            s_eff -= &s_rn * inv_diag * s_rn.adjoint();
            phases.extend(nonzero.iter().map(|&i| FRAC_PI_2.copysign(sk[i])));
        }
    }
    if !range.is_empty() {
        let scaled = CMat::from_fn(range.len(), range.len(), |i, j| {
            s_eff[(i, j)] / (hv[range[i]].sqrt() * hv[range[j]].sqrt())
        });
        let mu = linalg::hermitian_eigenvalues(&linalg::hermitian_part(&scaled));
        phases.extend(mu.iter().map(|m| m.atan()));
    }
    (phases, coupled)
}
