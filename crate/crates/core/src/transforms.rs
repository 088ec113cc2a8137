//! Loop-shaping frames `J_C = (ℰ Y_C + 𝒞) ℱ` and `J_net = (ℰ Y_net − 𝒞) ℱ`.
//!
//! Sweeps use per-frequency matrix arithmetic. Realizations are built only
//! for open-loop stability checks and for the limit at infinite frequency.
//! With an impedance weight `W = Z_w` the blended `ℱ` is improper, so it is
//! handled in factored form `ℱ = Z_w N` with
//! `N = H_LPF Z_w⁻¹ ℱ_J + H_HPF ℰ⁻¹`, which is proper and has `N(∞) = ℰ⁻¹`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::converter::{GfmParameters, OperatingPoint};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::lti::StateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameKind {
    Rectangular,
    PowerPolar,
    Blended,
    /// Every matrix filtered between polar and rectangular values.
    NaiveBlended,
}

impl FrameKind {
    pub fn label(self) -> &'static str {
        match self {
            FrameKind::Rectangular => "rectangular",
            FrameKind::PowerPolar => "power-polar",
            FrameKind::Blended => "blended",
            FrameKind::NaiveBlended => "naive-blended",
        }
    }
}

/// Constant power-polar matrices of one converter.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarMatrices {
    /// `[ΔP; ΔQ]` sensitivity to current.
    pub e: RMat,
    pub e_inv: RMat,
    /// `[ΔP; ΔQ]` sensitivity to voltage.
    pub c: RMat,
    /// Voltage perturbation from `[Δφ; Δ|V|]`.
    pub f: RMat,
    pub f_inv: RMat,
}

/// Linearized power-polar change of variables at `op` (load convention,
/// `Q = v_q i_d − v_d i_q`).
pub fn polar_matrices(op: &OperatingPoint) -> Result<PolarMatrices> {
    let (vd, vq, id, iq) = (op.v_d, op.v_q, op.i_d, op.i_q);
    let m = op.voltage_magnitude();
    if !(m > 0.0) {
        return Err(Error::ZeroVoltage);
    }
    let e = RMat::from_row_slice(2, 2, &[vd, vq, vq, -vd]);
    let e_inv = &e / (m * m);
    let c = RMat::from_row_slice(2, 2, &[id, iq, -iq, id]);
    let f_inv = RMat::from_row_slice(2, 2, &[-vq / (m * m), vd / (m * m), vd / m, vq / m]);
    let f = RMat::from_row_slice(2, 2, &[-vq, vd / m, vd, vq / m]);
    Ok(PolarMatrices { e, e_inv, c, f, f_inv })
}

/// `H_LPF = ω_c/(s+ω_c)` and `H_HPF = 1 − H_LPF`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPair {
    pub omega_c: f64,
}

impl FilterPair {
    pub fn new(omega_c: f64) -> Result<Self> {
        if !(omega_c > 0.0 && omega_c.is_finite()) {
            return Err(Error::InvalidParameter(format!("blend cutoff must be positive, got {omega_c}")));
        }
        Ok(Self { omega_c })
    }

    pub fn lpf(&self, s: Complex64) -> Complex64 {
        self.omega_c / (s + self.omega_c)
    }

    pub fn hpf(&self, s: Complex64) -> Complex64 {
        s / (s + self.omega_c)
    }

    /// `H_LPF · I_n`.
    pub fn lpf_model(&self, n: usize) -> StateSpace {
        StateSpace {
            a: RMat::identity(n, n) * -self.omega_c,
            b: RMat::identity(n, n),
            c: RMat::identity(n, n) * self.omega_c,
            d: RMat::zeros(n, n),
        }
    }

    /// `H_LPF · M`.
    fn lpf_times(&self, m: &RMat) -> StateSpace {
        let n = m.ncols();
        StateSpace { a: RMat::identity(n, n) * -self.omega_c, b: RMat::identity(n, n), c: m * self.omega_c, d: RMat::zeros(m.nrows(), n) }
    }

    /// `H_LPF · P + H_HPF · Q`.
    fn blend(&self, p: &RMat, q: &RMat) -> StateSpace {
        let mut m = self.lpf_times(&(p - q));
        m.d = q.clone();
        m
    }
}

/// Blending weight `W(s)` inside the blended `ℱ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Identity,
    /// dq impedance `R I + L (s I + ω₀ Rot90)`, the inverse of an RL virtual admittance.
    Impedance { r: f64, l: f64, omega0: f64 },
}

impl Weight {
    /// `Y_v,ref⁻¹` for the virtual admittance of `p`.
    pub fn virtual_impedance(p: &GfmParameters) -> Self {
        Weight::Impedance { r: p.r_v, l: p.l_v / p.omega0, omega0: p.omega0 }
    }

    pub fn evaluate(&self, s: Complex64) -> CMat {
        match *self {
            Weight::Identity => CMat::identity(2, 2),
            Weight::Impedance { r, l, omega0 } => crate::network::rl_impedance(r, l, omega0, s),
        }
    }

    /// Constant and `s` coefficients.
    fn polynomial(&self) -> (RMat, RMat) {
        match *self {
            Weight::Identity => (RMat::identity(2, 2), RMat::zeros(2, 2)),
            Weight::Impedance { r, l, omega0 } => {
                (RMat::identity(2, 2) * r + linalg::rot90() * (omega0 * l), RMat::identity(2, 2) * l)
            }
        }
    }

    /// `W⁻¹` as a proper model.
    fn inverse_model(&self) -> Result<StateSpace> {
        match *self {
            Weight::Identity => Ok(StateSpace::identity(2)),
            Weight::Impedance { r, l, omega0 } => {
                if !(l > 0.0) {
                    return Err(Error::InvalidParameter("impedance weight needs L > 0".into()));
                }
                // L i' = v − R i − ω₀ L Rot90 i
                let a = RMat::identity(2, 2) * (-r / l) - linalg::rot90() * omega0;
                StateSpace::new(a, RMat::identity(2, 2) / l, RMat::identity(2, 2), RMat::zeros(2, 2))
            }
        }
    }
}

/// Shaping triple of one converter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterFrame {
    pub kind: FrameKind,
    pub polar: PolarMatrices,
    pub filter: Option<FilterPair>,
    pub weight: Weight,
}

fn cm(m: &RMat) -> CMat {
    linalg::to_complex(m)
}

impl ConverterFrame {
    pub fn e(&self, s: Complex64) -> CMat {
        match (self.kind, self.filter) {
            (FrameKind::Rectangular, _) => CMat::identity(2, 2),
            (FrameKind::NaiveBlended, Some(h)) => cm(&self.polar.e) * h.lpf(s) + CMat::identity(2, 2) * h.hpf(s),
            _ => cm(&self.polar.e),
        }
    }

    pub fn c(&self, s: Complex64) -> CMat {
        match (self.kind, self.filter) {
            (FrameKind::Rectangular, _) => CMat::zeros(2, 2),
            (FrameKind::PowerPolar, _) => cm(&self.polar.c),
            (_, Some(h)) => cm(&self.polar.c) * h.lpf(s),
            (_, None) => unreachable!("filtered frame without filter"),
        }
    }

    pub fn f(&self, s: Complex64) -> CMat {
        match (self.kind, self.filter) {
            (FrameKind::Rectangular, _) => CMat::identity(2, 2),
            (FrameKind::PowerPolar, _) => cm(&self.polar.f),
            (FrameKind::NaiveBlended, Some(h)) => cm(&self.polar.f) * h.lpf(s) + CMat::identity(2, 2) * h.hpf(s),
            (FrameKind::Blended, Some(h)) => {
                cm(&self.polar.f) * h.lpf(s) + self.weight.evaluate(s) * cm(&self.polar.e_inv) * h.hpf(s)
            }
            (_, None) => unreachable!("filtered frame without filter"),
        }
    }

    fn e_model(&self) -> StateSpace {
        match (self.kind, self.filter) {
            (FrameKind::Rectangular, _) => StateSpace::identity(2),
            (FrameKind::NaiveBlended, Some(h)) => h.blend(&self.polar.e, &RMat::identity(2, 2)),
            _ => StateSpace::gain(self.polar.e.clone()),
        }
    }

    fn c_model(&self) -> StateSpace {
        match (self.kind, self.filter) {
            (FrameKind::Rectangular, _) => StateSpace::zeros(2, 2),
            (FrameKind::PowerPolar, _) => StateSpace::gain(self.polar.c.clone()),
            (_, Some(h)) => h.lpf_times(&self.polar.c),
            (_, None) => unreachable!(),
        }
    }

    /// The proper factor `N` of `ℱ = W N` (with `W = I` unless blended).
    fn n_model(&self) -> Result<StateSpace> {
        Ok(match (self.kind, self.filter) {
            (FrameKind::Rectangular, _) => StateSpace::identity(2),
            (FrameKind::PowerPolar, _) => StateSpace::gain(self.polar.f.clone()),
            (FrameKind::NaiveBlended, Some(h)) => h.blend(&self.polar.f, &RMat::identity(2, 2)),
            (FrameKind::Blended, Some(h)) => {
                let yw_f = self.weight.inverse_model()?.post_gain(&self.polar.f)?.series(&h.lpf_model(2))?;
                yw_f.parallel(&h.blend(&RMat::zeros(2, 2), &self.polar.e_inv))?
            }
            (_, None) => unreachable!(),
        })
    }

    fn weighted(&self) -> bool {
        self.kind == FrameKind::Blended && self.weight != Weight::Identity
    }

    /// `J_C(s)` at a finite point from `Y_C(s)`.
    pub fn converter_response(&self, y: &CMat, s: Complex64) -> CMat {
        (self.e(s) * y + self.c(s)) * self.f(s)
    }

    /// Realization of `J_C`.
    pub fn converter_model(&self, y: &StateSpace) -> Result<StateSpace> {
        let x = y.series(&self.e_model())?.parallel(&self.c_model())?;
        let xw = if self.weighted() {
            let (p0, p1) = self.weight.polynomial();
            x.mul_polynomial_right(&p0, &p1)?
        } else {
            x
        };
        self.n_model()?.series(&xw)
    }
}

/// Shaping triples for all converters, in port order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSet {
    pub kind: FrameKind,
    pub omega_c: Option<f64>,
    pub frames: Vec<ConverterFrame>,
}

impl TransformSet {
    pub fn rectangular(n: usize) -> Self {
        let polar = PolarMatrices {
            e: RMat::identity(2, 2),
            e_inv: RMat::identity(2, 2),
            c: RMat::zeros(2, 2),
            f: RMat::identity(2, 2),
            f_inv: RMat::identity(2, 2),
        };
        let frame = ConverterFrame { kind: FrameKind::Rectangular, polar, filter: None, weight: Weight::Identity };
        Self { kind: FrameKind::Rectangular, omega_c: None, frames: vec![frame; n] }
    }

    pub fn power_polar(ops: &[OperatingPoint]) -> Result<Self> {
        let frames = ops
            .iter()
            .map(|op| {
                Ok(ConverterFrame { kind: FrameKind::PowerPolar, polar: polar_matrices(op)?, filter: None, weight: Weight::Identity })
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind: FrameKind::PowerPolar, omega_c: None, frames })
    }

    /// Constant `ℰ`, low-passed `𝒞`, and `ℱ` blended towards `W ℰ⁻¹`.
    pub fn blended(ops: &[OperatingPoint], omega_c: f64, weights: &[Weight]) -> Result<Self> {
        if weights.len() != ops.len() {
            return Err(Error::Dimension("one weight per converter".into()));
        }
        let h = FilterPair::new(omega_c)?;
        let frames = ops
            .iter()
            .zip(weights)
            .map(|(op, w)| {
                Ok(ConverterFrame { kind: FrameKind::Blended, polar: polar_matrices(op)?, filter: Some(h), weight: *w })
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind: FrameKind::Blended, omega_c: Some(omega_c), frames })
    }

    /// All three matrices blended between their polar and rectangular values.
    pub fn naive_blended(ops: &[OperatingPoint], omega_c: f64) -> Result<Self> {
        let h = FilterPair::new(omega_c)?;
        let frames = ops
            .iter()
            .map(|op| {
                Ok(ConverterFrame { kind: FrameKind::NaiveBlended, polar: polar_matrices(op)?, filter: Some(h), weight: Weight::Identity })
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind: FrameKind::NaiveBlended, omega_c: Some(omega_c), frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn aggregate(&self, f: impl Fn(&ConverterFrame) -> CMat) -> CMat {
        linalg::block_diag(&self.frames.iter().map(f).collect::<Vec<_>>())
    }

    pub fn e(&self, s: Complex64) -> CMat {
        self.aggregate(|fr| fr.e(s))
    }

    pub fn c(&self, s: Complex64) -> CMat {
        self.aggregate(|fr| fr.c(s))
    }

    pub fn f(&self, s: Complex64) -> CMat {
        self.aggregate(|fr| fr.f(s))
    }

    pub fn converter_response(&self, i: usize, y: &CMat, s: Complex64) -> CMat {
        self.frames[i].converter_response(y, s)
    }

    /// `(𝓔 Y_net − 𝓒) 𝓕`; the network current flows opposite to the converter's.
    pub fn network_response(&self, y_net: &CMat, s: Complex64) -> CMat {
        (self.e(s) * y_net - self.c(s)) * self.f(s)
    }

    pub fn network_inverse_response(&self, y_net: &CMat, s: Complex64) -> Result<CMat> {
        linalg::inverse(&self.network_response(y_net, s)).ok_or(Error::SingularResolvent { s })
    }

    pub fn converter_model(&self, i: usize, y: &StateSpace) -> Result<StateSpace> {
        self.frames[i].converter_model(y)
    }

    /// Realization of `J_net⁻¹ = N⁻¹ W⁻¹ (Y_net − ℰ⁻¹𝒞)⁻¹ ℰ⁻¹` from the
    /// network port impedance.
    pub fn network_inverse_model(&self, z_net: &StateSpace) -> Result<StateSpace> {
        let n = self.frames.len();
        if z_net.inputs() != 2 * n || z_net.outputs() != 2 * n {
            return Err(Error::Dimension(format!("network has {} ports, frame has {n} converters", z_net.inputs() / 2)));
        }
        let collect = |f: &dyn Fn(&ConverterFrame) -> Result<StateSpace>| -> Result<StateSpace> {
            Ok(StateSpace::append(&self.frames.iter().map(f).collect::<Result<Vec<_>>>()?))
        };
        let e_inv = collect(&|fr| fr.e_model().inverse())?;
        let c = collect(&|fr| Ok(fr.c_model()))?;
        let k = c.series(&e_inv)?;
        let m = z_net.feedback(&k, 1.0)?;
        let mut out = e_inv.series(&m)?;
        if self.frames.iter().any(|fr| fr.weighted()) {
            out = out.series(&collect(&|fr| if fr.weighted() { fr.weight.inverse_model() } else { Ok(StateSpace::identity(2)) })?)?;
        }
        out.series(&collect(&|fr| fr.n_model()?.inverse())?)
    }
}

/// `Y · W` for an impedance weight `W = Y_v⁻¹`.
pub fn va_compensation(y: &StateSpace, weight: &Weight) -> Result<StateSpace> {
    if y.inputs() != 2 {
        return Err(Error::Dimension("compensation needs a 2-input model".into()));
    }
    if let Weight::Impedance { r, l, omega0 } = *weight {
        // zeros of W⁻¹'s inverse are the poles of the RL branch
        if r < 0.0 || !(l > 0.0) || !(omega0.is_finite()) {
            return Err(Error::UnstableInverse("virtual admittance must have R ≥ 0 and L > 0".into()));
        }
    }
    let (p0, p1) = weight.polynomial();
    y.mul_polynomial_right(&p0, &p1)
}

#[derive(Debug, Clone, Serialize)]
pub struct OpenLoopReport {
    pub converters_stable: Vec<bool>,
    pub network_inverse_stable: bool,
    /// Rightmost pole of each checked model (converters first, then the network inverse).
    pub rightmost: Vec<Option<(f64, f64)>>,
    pub ok: bool,
}

/// Stability of each `J_C,i` and of `J_net⁻¹`.
pub fn check_transformed_openloop(converters: &[StateSpace], network_inverse: &StateSpace) -> OpenLoopReport {
    let margin = crate::lti::STABILITY_TOLERANCE;
    let mut rightmost = Vec::new();
    let converters_stable = converters
        .iter()
        .map(|m| {
            let r = m.is_stable(margin);
            rightmost.push(r.rightmost().map(|z| (z.re, z.im)));
            r.stable || m.unstable_visible_poles(margin).is_empty()
        })
        .collect::<Vec<_>>();
    let r = network_inverse.is_stable(margin);
    rightmost.push(r.rightmost().map(|z| (z.re, z.im)));
    let network_inverse_stable = r.stable || network_inverse.unstable_visible_poles(margin).is_empty();
    let ok = network_inverse_stable && converters_stable.iter().all(|b| *b);
    OpenLoopReport { converters_stable, network_inverse_stable, rightmost, ok }
}
