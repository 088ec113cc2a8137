//! Mixed gain/phase conditions, frequency sweeps, certificates and the
//! closed-loop eigenvalue ground truth.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::converter::OperatingPoint;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::lti::StateSpace;
use crate::matrix_phase::{self, PhaseInterval, Sectoriality};
use crate::network::NetworkModel;
use crate::transforms::{self, FrameKind, OpenLoopReport, TransformSet};

/// Inequalities need slack above this fraction of their scale.
pub const STRICTNESS: f64 = 1e-9;
/// Refinement bisects around points whose normalized slack is below this.
pub const REFINE_THRESHOLD: f64 = 0.05;
pub const REFINE_DEPTH: usize = 4;
pub const SWEEP_SCHEMA: &str = "# smallphase-sweep v1";
pub const EIG_SCHEMA: &str = "# smallphase-eig v1";

pub const GRID_CAVEAT: &str = "verified on a finite frequency grid, not the continuum";
pub const NEGATIVE_CAVEAT: &str = "certified = false is inconclusive with respect to instability";

/// Frequency point in Hz; `f64::INFINITY` stands for the limit at infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub points: Vec<f64>,
}

impl FrequencyGrid {
    /// `n` log-spaced points over `[f_min, f_max]` Hz plus 0 and infinity.
    pub fn log(f_min: f64, f_max: f64, n: usize) -> Result<Self> {
        if !(f_min > 0.0 && f_max > f_min && f_max.is_finite()) || n < 2 {
            return Err(Error::Config(format!("invalid grid {f_min}..{f_max} with {n} points")));
        }
        let (a, b) = (f_min.log10(), f_max.log10());
        let mut points = vec![0.0];
        points.extend((0..n).map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)));
        points.push(f64::INFINITY);
        Ok(Self { points })
    }

    pub fn default_grid() -> Self {
        Self::log(0.01, 1e4, 400).expect("default grid is valid")
    }

    /// `log:<fmin>:<fmax>:<n>` or a comma-separated list of Hz values
    /// (`inf` allowed).
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if let Some(rest) = spec.strip_prefix("log:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!("grid spec `{spec}`: expected log:<fmin>:<fmax>:<n>")));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("grid spec `{spec}`: {e}")));
            let n = parts[2].trim().parse::<usize>().map_err(|e| Error::Config(format!("grid spec `{spec}`: {e}")))?;
            if n > 1_000_000 {
                return Err(Error::Config("grid too large".into()));
            }
            return Self::log(num(parts[0])?, num(parts[1])?, n);
        }
        let mut points = Vec::new();
        for tok in spec.split(',') {
            let tok = tok.trim();
            let v = if tok.eq_ignore_ascii_case("inf") {
                f64::INFINITY
            } else {
                tok.parse::<f64>().map_err(|e| Error::Config(format!("grid value `{tok}`: {e}")))?
            };
            if v.is_nan() || v < 0.0 {
                return Err(Error::Config(format!("grid value `{tok}` must be ≥ 0")));
            }
            points.push(v);
        }
        points.sort_by(|a, b| a.total_cmp(b));
        points.dedup();
        if points.is_empty() {
            return Err(Error::Config("empty grid".into()));
        }
        Ok(Self { points })
    }
}

fn ser_hz<S: Serializer>(hz: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if hz.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*hz)
    }
}

fn ser_finite<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_none()
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GainCheck {
    pub ok: bool,
    /// `max_i σ̄(J_C,i)`.
    #[serde(serialize_with = "ser_finite")]
    pub converter_max: f64,
    /// `σ̲(J_net) = 1/σ̄(J_net⁻¹)`; infinite when the inverse vanishes.
    #[serde(serialize_with = "ser_finite")]
    pub network_min: f64,
    /// `1 − σ̄(J_C) σ̄(J_net⁻¹)`.
    pub slack: f64,
}

/// `max_i σ̄(J_C,i) < σ̲(J_net)`, evaluated as `σ̄(J_C) σ̄(J_net⁻¹) < 1` so
/// that a vanishing network inverse is handled exactly.
pub fn gain_condition(converters: &[CMat], network_inverse: &CMat) -> GainCheck {
    let converter_max = converters.iter().map(|m| linalg::singular_values(m)[0]).fold(0.0, f64::max);
    let inv = linalg::singular_values(network_inverse)[0];
    let product = converter_max * inv;
    let slack = 1.0 - product;
    GainCheck { ok: slack > STRICTNESS, converter_max, network_min: if inv > 0.0 { 1.0 / inv } else { f64::INFINITY }, slack }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseReason {
    Satisfied,
    Violated,
    /// A converter is not at least quasi-sectorial.
    NonSectorial,
    /// The network inverse is not strictly sectorial; the test is not applicable here.
    NonApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseBand {
    pub class: Sectoriality,
    /// `None` when phases are undefined (non-sectorial) or empty (zero matrix).
    pub interval: Option<PhaseInterval>,
}

fn band(m: &CMat) -> PhaseBand {
    match matrix_phase::phases(m) {
        Ok(p) => PhaseBand { class: p.class.kind, interval: (!p.values.is_empty()).then_some(p.interval) },
        Err(_) => PhaseBand { class: Sectoriality::Non, interval: None },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseCheck {
    pub ok: bool,
    pub reason: PhaseReason,
    pub converters: Vec<PhaseBand>,
    pub network_inverse: PhaseBand,
    /// `π − φ̄(J_net⁻¹) − max φ̄(J_C,i)`.
    pub upper_slack: f64,
    /// `min φ̲(J_C,i) + π + φ̲(J_net⁻¹)`.
    pub lower_slack: f64,
    /// Per-converter `min(upper, lower)` slack; `-inf` for non-sectorial converters.
    #[serde(skip)]
    pub per_converter: Vec<f64>,
}

pub fn phase_condition(converters: &[CMat], network_inverse: &CMat) -> PhaseCheck {
    let bands: Vec<PhaseBand> = converters.iter().map(band).collect();
    let net = band(network_inverse);
    let mut upper_slack = f64::NEG_INFINITY;
    let mut lower_slack = f64::NEG_INFINITY;
    let mut per_converter = vec![f64::NEG_INFINITY; bands.len()];
    let all_quasi = bands.iter().all(|b| b.class.at_least_quasi());
    let strict = if net.class == Sectoriality::Strict { net.interval } else { None };
    let reason = if let Some(n) = strict {
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for (k, b) in bands.iter().enumerate() {
            if !b.class.at_least_quasi() {
                continue;
            }
            match b.interval {
                Some(iv) => {
                    hi = hi.max(iv.upper);
                    lo = lo.min(iv.lower);
                    per_converter[k] = (PI - n.upper - iv.upper).min(iv.lower + PI + n.lower);
                }
                None => per_converter[k] = f64::INFINITY,
            }
        }
        if !all_quasi {
            PhaseReason::NonSectorial
        } else {
            upper_slack = if hi.is_finite() { PI - n.upper - hi } else { f64::INFINITY };
            lower_slack = if lo.is_finite() { lo + PI + n.lower } else { f64::INFINITY };
            if upper_slack > STRICTNESS * PI && lower_slack > STRICTNESS * PI {
                PhaseReason::Satisfied
            } else {
                PhaseReason::Violated
            }
        }
    } else {
        PhaseReason::NonApplicable
    };
    PhaseCheck {
        ok: reason == PhaseReason::Satisfied,
        reason,
        converters: bands,
        network_inverse: net,
        upper_slack,
        lower_slack,
        per_converter,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyVerdict {
    #[serde(serialize_with = "ser_hz")]
    pub hz: f64,
    pub gain: GainCheck,
    pub phase: PhaseCheck,
    pub satisfied: bool,
    /// Bus id of the converter with the smallest phase slack (largest gain on ties).
    pub limiting_converter: Option<usize>,
    /// `σ̄(J_C,i)` per converter.
    pub converter_gains: Vec<f64>,
    /// Phases of the eigenvalues of `J_C J_net⁻¹` (aggregate), for bound plots.
    pub loop_eigen_phases: Vec<f64>,
}

impl FrequencyVerdict {
    /// Normalized distance to failure: the better of the two slacks.
    pub fn margin(&self) -> f64 {
        let phase = if self.phase.reason == PhaseReason::Satisfied || self.phase.reason == PhaseReason::Violated {
            self.phase.upper_slack.min(self.phase.lower_slack) / PI
        } else {
            f64::NEG_INFINITY
        };
        self.gain.slack.max(phase)
    }
}

/// Converters and network in one global frame, ports in matching order.
#[derive(Debug, Clone)]
pub struct Interconnection {
    pub bus_ids: Vec<usize>,
    /// Global-frame converter admittances.
    pub converters: Vec<StateSpace>,
    /// Global-frame operating points.
    pub operating_points: Vec<OperatingPoint>,
    pub network: NetworkModel,
}

impl Interconnection {
    pub fn converter_count(&self) -> usize {
        self.converters.len()
    }
}

/// Realizations needed for the open-loop check and the limit at infinity.
struct Realized {
    converters: Vec<StateSpace>,
    network_inverse: StateSpace,
}

fn realize(ic: &Interconnection, t: &TransformSet) -> Result<Realized> {
    let converters = (0..ic.converter_count())
        .map(|i| t.converter_model(i, &ic.converters[i]))
        .collect::<Result<Vec<_>>>()?;
    let network_inverse = t.network_inverse_model(&ic.network.reduced_impedance())?;
    Ok(Realized { converters, network_inverse })
}

fn evaluate_point(ic: &Interconnection, t: &TransformSet, r: &Realized, hz: f64) -> Result<FrequencyVerdict> {
    let (jc, jinv): (Vec<CMat>, CMat) = if hz.is_infinite() {
        (r.converters.iter().map(|m| linalg::to_complex(&m.d)).collect(), linalg::to_complex(&r.network_inverse.d))
    } else {
        let s = Complex64::new(0.0, 2.0 * PI * hz);
        let jc = ic
            .converters
            .iter()
            .enumerate()
            .map(|(i, y)| Ok(t.converter_response(i, &y.evaluate(s)?, s)))
            .collect::<Result<Vec<_>>>()?;
        let ynet = ic.network.reduced_admittance(s)?;
        (jc, t.network_inverse_response(&ynet, s)?)
    };
    Ok(verdict(hz, &jc, &jinv, &ic.bus_ids))
}

fn verdict(hz: f64, jc: &[CMat], jinv: &CMat, bus_ids: &[usize]) -> FrequencyVerdict {
    let gain = gain_condition(jc, jinv);
    let phase = phase_condition(jc, jinv);
    let gains: Vec<f64> = jc.iter().map(|m| linalg::singular_values(m)[0]).collect();
    let limiting = (0..jc.len())
        .min_by(|&a, &b| {
            phase.per_converter[a]
                .total_cmp(&phase.per_converter[b])
                .then(gains[b].total_cmp(&gains[a]))
        })
        .map(|k| bus_ids[k]);
    let product = linalg::block_diag(jc) * jinv;
    let mut loop_eigen_phases: Vec<f64> = linalg::eigenvalues(&product)
        .iter()
        .filter(|z| z.norm() > 1e-12 * linalg::max_abs(&product).max(1e-300))
        .map(|z| z.arg())
        .collect();
    loop_eigen_phases.sort_by(|a, b| a.total_cmp(b));
    FrequencyVerdict { hz, satisfied: gain.ok || phase.ok, gain, phase, limiting_converter: limiting, converter_gains: gains, loop_eigen_phases }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub refine: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { refine: true }
    }
}

fn sweep_realized(ic: &Interconnection, t: &TransformSet, r: &Realized, grid: &FrequencyGrid, opts: SweepOptions) -> Result<Vec<FrequencyVerdict>> {
    let mut verdicts = grid
        .points
        .par_iter()
        .map(|&hz| evaluate_point(ic, t, r, hz))
        .collect::<Result<Vec<_>>>()?;
    if opts.refine {
        for _ in 0..REFINE_DEPTH {
            let mut extra = Vec::new();
            for w in verdicts.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                if !(a.hz > 0.0 && b.hz.is_finite()) {
                    continue;
                }
                let close = a.margin().abs() < REFINE_THRESHOLD || b.margin().abs() < REFINE_THRESHOLD;
                if (close || a.satisfied != b.satisfied) && b.hz / a.hz > 1.0 + 1e-6 {
                    extra.push((a.hz * b.hz).sqrt());
                }
            }
            if extra.is_empty() {
                break;
            }
            let new = extra.par_iter().map(|&hz| evaluate_point(ic, t, r, hz)).collect::<Result<Vec<_>>>()?;
            verdicts.extend(new);
            verdicts.sort_by(|a, b| a.hz.total_cmp(&b.hz));
        }
    }
    Ok(verdicts)
}

/// Per-frequency verdicts without the open-loop precondition.
pub fn sweep(ic: &Interconnection, t: &TransformSet, grid: &FrequencyGrid, opts: SweepOptions) -> Result<Vec<FrequencyVerdict>> {
    if t.len() != ic.converter_count() {
        return Err(Error::Dimension("transform set and interconnection sizes differ".into()));
    }
    let r = realize(ic, t)?;
    sweep_realized(ic, t, &r, grid, opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub frame: FrameKind,
    pub omega_c: Option<f64>,
    pub converter_buses: Vec<usize>,
    pub openloop: OpenLoopReport,
    pub certified: bool,
    pub verdicts: Vec<FrequencyVerdict>,
    pub caveats: Vec<&'static str>,
}

impl CertificateReport {
    pub fn failing(&self) -> impl Iterator<Item = &FrequencyVerdict> {
        self.verdicts.iter().filter(|v| !v.satisfied)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("report serialization: {e}")))
    }
}

/// Decentralized certificate: open-loop check, then the sweep.
pub fn certify(ic: &Interconnection, t: &TransformSet, grid: &FrequencyGrid, opts: SweepOptions) -> Result<CertificateReport> {
    if t.len() != ic.converter_count() {
        return Err(Error::Dimension("transform set and interconnection sizes differ".into()));
    }
    let r = realize(ic, t)?;
    let openloop = transforms::check_transformed_openloop(&r.converters, &r.network_inverse);
    if !openloop.ok {
        return Err(Error::OpenLoopUnstable(format!(
            "frame {}: converters stable {:?}, network inverse stable {}",
            t.kind.label(),
            openloop.converters_stable,
            openloop.network_inverse_stable
        )));
    }
    let verdicts = sweep_realized(ic, t, &r, grid, opts)?;
    Ok(CertificateReport {
        frame: t.kind,
        omega_c: t.omega_c,
        converter_buses: ic.bus_ids.clone(),
        certified: verdicts.iter().all(|v| v.satisfied),
        openloop,
        verdicts,
        caveats: vec![GRID_CAVEAT, NEGATIVE_CAVEAT],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CentralizedVerdict {
    #[serde(serialize_with = "ser_hz")]
    pub hz: f64,
    pub gain_ok: bool,
    pub phase_ok: bool,
    pub satisfied: bool,
}

/// Centralized mixed condition on `H₁ = J_C` (aggregate) and `H₂ = J_net⁻¹`.
pub fn centralized_condition(h1: &CMat, h2: &CMat) -> (bool, bool) {
    let gain = linalg::singular_values(h1)[0] * linalg::singular_values(h2)[0] < 1.0 - STRICTNESS;
    let (b1, b2) = (band(h1), band(h2));
    let phase = match (b1.class.at_least_quasi(), b2.class == Sectoriality::Strict, b1.interval, b2.interval) {
        (true, true, Some(p1), Some(p2)) => {
            p1.upper + p2.upper < PI * (1.0 - STRICTNESS) && p1.lower + p2.lower > -PI * (1.0 - STRICTNESS)
        }
        (true, true, None, Some(_)) => true,
        _ => false,
    };
    (gain, phase)
}

pub fn certify_centralized(ic: &Interconnection, t: &TransformSet, grid: &FrequencyGrid) -> Result<(bool, Vec<CentralizedVerdict>)> {
    let r = realize(ic, t)?;
    let openloop = transforms::check_transformed_openloop(&r.converters, &r.network_inverse);
    if !openloop.ok {
        return Err(Error::OpenLoopUnstable(format!("frame {}", t.kind.label())));
    }
    let verdicts = grid
        .points
        .par_iter()
        .map(|&hz| {
            let (jc, jinv) = if hz.is_infinite() {
                (r.converters.iter().map(|m| linalg::to_complex(&m.d)).collect::<Vec<_>>(), linalg::to_complex(&r.network_inverse.d))
            } else {
                let s = Complex64::new(0.0, 2.0 * PI * hz);
                let jc = ic
                    .converters
                    .iter()
                    .enumerate()
                    .map(|(i, y)| Ok(t.converter_response(i, &y.evaluate(s)?, s)))
                    .collect::<Result<Vec<_>>>()?;
                (jc, t.network_inverse_response(&ic.network.reduced_admittance(s)?, s)?)
            };
            let (gain_ok, phase_ok) = centralized_condition(&linalg::block_diag(&jc), &jinv);
            Ok(CentralizedVerdict { hz, gain_ok, phase_ok, satisfied: gain_ok || phase_ok })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((verdicts.iter().all(|v| v.satisfied), verdicts))
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    #[serde(skip)]
    pub eigenvalues: Vec<Complex64>,
    pub stable: bool,
    /// Rightmost eigenvalue `(re, im)`.
    pub rightmost: Option<(f64, f64)>,
    /// `|Im|/2π` of the rightmost eigenvalue, Hz.
    pub dominant_mode_hz: Option<f64>,
}

/// Eigenvalues of the converters closed around the unreduced network impedance.
pub fn ground_truth(ic: &Interconnection) -> Result<GroundTruth> {
    let z = &ic.network.z_full;
    let na = ic.network.active.len();
    let closed = if ic.converters.is_empty() {
        z.clone()
    } else {
        let mut sel = RMat::zeros(2 * ic.converter_count(), 2 * na);
        for (i, k) in ic.network.retained.iter().enumerate() {
            let p = ic.network.active.iter().position(|a| a == k).ok_or(Error::Dimension("retained bus not active".into()))?;
            sel[(2 * i, 2 * p)] = 1.0;
            sel[(2 * i + 1, 2 * p + 1)] = 1.0;
        }
        let yc = StateSpace::append(&ic.converters).post_gain(&sel)?.pre_gain(&sel.transpose())?;
        // converters draw current from the buses: injection = −Y_C v
        z.feedback(&yc, -1.0)?
    };
    let eigenvalues = closed.poles();
    let report = closed.is_stable(crate::lti::STABILITY_TOLERANCE);
    let rightmost = report.rightmost();
    Ok(GroundTruth {
        stable: report.stable,
        rightmost: rightmost.map(|z| (z.re, z.im)),
        dominant_mode_hz: rightmost.map(|z| z.im.abs() / (2.0 * PI)),
        eigenvalues,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn fmt_f(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.10e}")
    }
}

/// Sweep table: one row per frequency, schema line first.
pub fn sweep_csv(verdicts: &[FrequencyVerdict], bus_ids: &[usize], frame: FrameKind) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SWEEP_SCHEMA} frame={}", frame.label());
    let mut header = vec!["freq_hz".to_string(), "sigma_c_max".into(), "sigma_net_min".into(), "gain_ok".into()];
    for b in bus_ids {
        header.extend([format!("conv{b}_sigma_max"), format!("conv{b}_phase_min"), format!("conv{b}_phase_max"), format!("conv{b}_class")]);
    }
    header.extend(
        ["netinv_phase_min", "netinv_phase_max", "netinv_class", "phase_ok", "phase_reason", "satisfied", "limiting_converter", "loop_eig_phase_min", "loop_eig_phase_max"]
            .map(String::from),
    );
    let _ = writeln!(out, "{}", header.join(","));
    for v in verdicts {
        let mut row = vec![fmt_f(v.hz), fmt_f(v.gain.converter_max), fmt_f(v.gain.network_min), v.gain.ok.to_string()];
        for (g, b) in v.converter_gains.iter().zip(&v.phase.converters) {
            row.push(fmt_f(*g));
            row.extend([fmt_opt(b.interval.map(|i| i.lower)), fmt_opt(b.interval.map(|i| i.upper)), b.class.label().to_string()]);
        }
        row.extend([
            fmt_opt(v.phase.network_inverse.interval.map(|i| i.lower)),
            fmt_opt(v.phase.network_inverse.interval.map(|i| i.upper)),
            v.phase.network_inverse.class.label().to_string(),
            v.phase.ok.to_string(),
            serde_json::to_value(v.phase.reason).ok().and_then(|x| x.as_str().map(String::from)).unwrap_or_default(),
            v.satisfied.to_string(),
            v.limiting_converter.map(|b| b.to_string()).unwrap_or_default(),
            fmt_opt(v.loop_eigen_phases.first().copied()),
            fmt_opt(v.loop_eigen_phases.last().copied()),
        ]);
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn eig_csv(gt: &GroundTruth) -> String {
    let mut out = format!("{EIG_SCHEMA}\nre,im,freq_hz,damping_ratio\n");
    let mut eig = gt.eigenvalues.clone();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    for z in eig {
        let zeta = if z.norm() > 0.0 { -z.re / z.norm() } else { 1.0 };
        let _ = writeln!(out, "{},{},{},{}", fmt_f(z.re), fmt_f(z.im), fmt_f(z.im.abs() / (2.0 * PI)), fmt_f(zeta));
    }
    out
}
