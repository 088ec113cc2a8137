//! Grid-forming converter small-signal admittance.
//!
//! The inner controller (PR current loop, virtual admittance, optional
//! reactive-power PI) lives in the converter's swing frame and is described by
//! `Y_dq(s)`. The VSM synchronization loop produces the frame angle `ε`, and
//! the admittance seen from the local steady frame is
//! `Y_DQ = (Y_dq + I₀ᵉ K_v)(I + V₀ᵉ K_v)⁻¹` with `K_v = H_P/s · G_P`.
//!
//! Currents are positive when drawn from the bus into the converter, so a
//! generating converter has `P = V·I < 0` and the swing equation reads
//! `ω = P / (Js + D)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::lti::{to_dq_frame, StateSpace};
use crate::matrix_phase::{self, SectorialityClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfmParameters {
    /// Nominal angular frequency (rad/s).
    pub omega0: f64,
    /// VSM inertia `J` (s).
    pub inertia: f64,
    /// VSM damping `D`.
    pub damping: f64,
    /// Virtual resistance.
    pub r_v: f64,
    /// Virtual reactance at `omega0`; the inductance is `l_v / omega0`.
    pub l_v: f64,
    pub k_p: f64,
    pub k_r: f64,
    /// Damping bandwidth of the resonant term (rad/s).
    pub resonant_bandwidth: f64,
    /// Output filter resistance.
    pub r_f: f64,
    /// Output filter reactance at `omega0`.
    pub x_f: f64,
    pub k_pq: f64,
    pub k_iq: f64,
    pub q_control: bool,
    /// Cutoff of the second-order reactive-power measurement filter (Hz).
    pub q_filter_hz: f64,
    /// Voltage magnitude set point used by the power flow.
    pub voltage_ref: f64,
    /// Active power set point (generation, p.u.) used by the power flow.
    pub power_ref: f64,
    /// Modulation delay (s) realized as a first-order Padé element; 0 disables it.
    pub delay: f64,
}

impl Default for GfmParameters {
    fn default() -> Self {
        Self {
            omega0: 2.0 * PI * 50.0,
            inertia: 0.02,
            damping: 0.5,
            r_v: 0.05,
            l_v: 0.15,
            k_p: 1.0,
            k_r: 100.0,
            resonant_bandwidth: 5.0,
            r_f: 0.005,
            x_f: 0.1,
            k_pq: 0.1,
            k_iq: 10.0,
            q_control: false,
            q_filter_hz: 10.0,
            voltage_ref: 1.0,
            power_ref: 0.5,
            delay: 0.0,
        }
    }
}

impl GfmParameters {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.omega0 > 0.0, "omega0 must be positive"),
            (self.inertia > 0.0, "inertia J must be positive"),
            (self.damping > 0.0, "damping D must be positive"),
            (self.r_v >= 0.0, "r_v must be non-negative"),
            (self.l_v > 0.0, "l_v must be positive"),
            (self.k_p > 0.0, "k_p must be positive"),
            (self.k_r >= 0.0, "k_r must be non-negative"),
            (self.resonant_bandwidth > 0.0, "resonant_bandwidth must be positive"),
            (self.r_f >= 0.0, "r_f must be non-negative"),
            (self.x_f > 0.0, "x_f must be positive"),
            (self.q_filter_hz > 0.0, "q_filter_hz must be positive"),
            (self.voltage_ref > 0.0, "voltage_ref must be positive"),
            (self.delay >= 0.0, "delay must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok || !self.all_finite() {
                return Err(Error::InvalidParameter(if ok { "non-finite parameter" } else { msg }.into()));
            }
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        [
            self.omega0,
            self.inertia,
            self.damping,
            self.r_v,
            self.l_v,
            self.k_p,
            self.k_r,
            self.resonant_bandwidth,
            self.r_f,
            self.x_f,
            self.k_pq,
            self.k_iq,
            self.q_filter_hz,
            self.voltage_ref,
            self.power_ref,
            self.delay,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v_d: f64,
    pub v_q: f64,
    pub i_d: f64,
    pub i_q: f64,
}

impl OperatingPoint {
    pub fn new(v_d: f64, v_q: f64, i_d: f64, i_q: f64) -> Result<Self> {
        let op = Self { v_d, v_q, i_d, i_q };
        if op.voltage_magnitude() <= 1e-12 || ![v_d, v_q, i_d, i_q].iter().all(|x| x.is_finite()) {
            return Err(Error::ZeroVoltage);
        }
        Ok(op)
    }

    pub fn voltage_magnitude(&self) -> f64 {
        self.v_d.hypot(self.v_q)
    }

    /// `V₀ᵉ = [-V_q0, V_d0]ᵀ`.
    pub fn v_e(&self) -> RMat {
        RMat::from_column_slice(2, 1, &[-self.v_q, self.v_d])
    }

    /// `I₀ᵉ = [-I_q0, I_d0]ᵀ`.
    pub fn i_e(&self) -> RMat {
        RMat::from_column_slice(2, 1, &[-self.i_q, self.i_d])
    }

    pub fn v_row(&self) -> RMat {
        RMat::from_row_slice(1, 2, &[self.v_d, self.v_q])
    }

    pub fn i_row(&self) -> RMat {
        RMat::from_row_slice(1, 2, &[self.i_d, self.i_q])
    }

    /// Active power drawn from the bus.
    pub fn active_power(&self) -> f64 {
        self.v_d * self.i_d + self.v_q * self.i_q
    }

    /// Reactive power drawn from the bus.
    pub fn reactive_power(&self) -> f64 {
        self.v_q * self.i_d - self.v_d * self.i_q
    }

    /// Express the same point in a frame rotated by `-angle`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            v_d: c * self.v_d + s * self.v_q,
            v_q: -s * self.v_d + c * self.v_q,
            i_d: c * self.i_d + s * self.i_q,
            i_q: -s * self.i_d + c * self.i_q,
        }
    }

    /// Rotate so that `V_q0 = 0`, `V_d0 > 0`. Returns the point and the voltage angle.
    pub fn canonical(&self) -> (Self, f64) {
        let angle = self.v_q.atan2(self.v_d);
        let mut op = self.rotated(angle);
        op.v_q = 0.0;
        (op, angle)
    }
}

/// Converter admittance with its building blocks.
#[derive(Debug, Clone)]
pub struct ConverterAdmittance {
    pub y_dq: StateSpace,
    pub h_p: StateSpace,
    pub g_p: StateSpace,
    pub k_v: StateSpace,
    pub y_frame: StateSpace,
    pub op: OperatingPoint,
    pub params: GfmParameters,
}

fn siso(num: &[f64], den: &[f64]) -> Result<StateSpace> {
    StateSpace::from_tf(num, den)
}

/// Stationary-frame virtual admittance `1 / (R_v + s L_v/ω₀)`.
pub fn virtual_admittance_siso(p: &GfmParameters) -> Result<StateSpace> {
    siso(&[1.0], &[p.l_v / p.omega0, p.r_v])
}

/// `Y_v` in the dq frame.
pub fn virtual_admittance(p: &GfmParameters) -> Result<StateSpace> {
    to_dq_frame(&virtual_admittance_siso(p)?, p.omega0)
}

/// Damped PR controller `k_p + k_r · 2ω_b s / (s² + 2ω_b s + ω₀²)`.
pub fn pr_controller(p: &GfmParameters) -> Result<StateSpace> {
    let wb = p.resonant_bandwidth;
    let w2 = p.omega0 * p.omega0;
    siso(
        &[p.k_p, 2.0 * wb * (p.k_p + p.k_r), p.k_p * w2],
        &[1.0, 2.0 * wb, w2],
    )
}

fn pade(delay: f64) -> Result<StateSpace> {
    siso(&[-delay / 2.0, 1.0], &[delay / 2.0, 1.0])
}

/// Stationary-frame current loop without grid-voltage feed-forward. Returns
/// `T` (reference to current) and `N = Y_f / (1 + P G Y_f)`, the admittance
/// seen from the grid through the filter with the loop closed.
pub fn current_loop(p: &GfmParameters) -> Result<(StateSpace, StateSpace)> {
    let filter = siso(&[1.0], &[p.x_f / p.omega0, p.r_f])?;
    let mut forward = pr_controller(p)?;
    if p.delay > 0.0 {
        forward = forward.series(&pade(p.delay)?)?;
    }
    let t = forward.series(&filter)?.feedback(&StateSpace::identity(1), -1.0)?;
    let n = filter.feedback(&forward, -1.0)?;
    Ok((t, n))
}

/// VSM swing filter `H_P = 1 / (Js + D)`.
pub fn swing_filter(p: &GfmParameters) -> Result<StateSpace> {
    siso(&[1.0], &[p.inertia, p.damping])
}

/// Reactive power controller `(k_pq + k_iq/s)` behind a second-order measurement filter.
pub fn reactive_controller(p: &GfmParameters) -> Result<StateSpace> {
    let wq = 2.0 * PI * p.q_filter_hz;
    let zeta = std::f64::consts::FRAC_1_SQRT_2;
    siso(
        &[p.k_pq * wq * wq, p.k_iq * wq * wq],
        &[1.0, 2.0 * zeta * wq, wq * wq, 0.0],
    )
}

/// DC values of `M = T Y_v` and `N` in the dq frame.
fn dc_loop_gains(p: &GfmParameters) -> Result<(RMat, RMat)> {
    let (t, n) = current_loop(p)?;
    let zero = Complex64::new(0.0, 0.0);
    let m0 = to_dq_frame(&t.series(&virtual_admittance_siso(p)?)?, p.omega0)?.evaluate(zero)?.map(|z| z.re);
    let n0 = to_dq_frame(&n, p.omega0)?.evaluate(zero)?.map(|z| z.re);
    Ok((m0, n0))
}

/// Direction of the internal voltage `e₀` in the frame of `op`.
fn internal_voltage(p: &GfmParameters, op: &OperatingPoint) -> Result<RMat> {
    let (m0, n0) = dc_loop_gains(p)?;
    let v = RMat::from_column_slice(2, 1, &[op.v_d, op.v_q]);
    let i = RMat::from_column_slice(2, 1, &[op.i_d, op.i_q]);
    let rhs = i - n0 * &v;
    // i = M0 (v - e) + N0 v
    let m_inv = m0
        .try_inverse()
        .ok_or_else(|| Error::NotInvertible("current loop at nominal frequency".into()))?;
    Ok(v - m_inv * rhs)
}

/// Inner admittance `Y_dq` from swing-frame voltage to current drawn.
pub fn build_inner_admittance(p: &GfmParameters, op: &OperatingPoint) -> Result<StateSpace> {
    p.validate()?;
    let (t, n) = current_loop(p)?;
    let m = to_dq_frame(&t.series(&virtual_admittance_siso(p)?)?, p.omega0)?;
    let y = m.parallel(&to_dq_frame(&n, p.omega0)?)?;
    if !p.q_control {
        return Ok(y);
    }
    let e0 = internal_voltage(p, op)?;
    let e_norm = e0.norm();
    if e_norm <= 1e-12 {
        return Err(Error::AssumptionViolated("internal voltage is zero".into()));
    }
    let e_hat = e0 / e_norm;
    // i from [v; E]
    let from_e = m.post_gain(&(-&e_hat))?;
    let merge = RMat::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let current = StateSpace::append(&[y, from_e]).pre_gain(&merge)?;
    // [i; q] with q = g_i i + g_v v
    let g_v = [-op.i_q, op.i_d];
    let g_i = [op.v_q, -op.v_d];
    let out_map = RMat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, g_i[0], g_i[1]]);
    let mut direct = RMat::zeros(3, 3);
    direct[(2, 0)] = g_v[0];
    direct[(2, 1)] = g_v[1];
    let plant = current.pre_gain(&out_map)?.parallel(&StateSpace::gain(direct))?;
    // controller: E += K_Q q
    let kq = reactive_controller(p)?;
    let mut route_in = RMat::zeros(1, 3);
    route_in[(0, 2)] = 1.0;
    let mut route_out = RMat::zeros(3, 1);
    route_out[(2, 0)] = 1.0;
    let controller = kq.post_gain(&route_in)?.pre_gain(&route_out)?;
    let closed = plant.feedback(&controller, 1.0)?;
    Ok(closed.select(&[0, 1], &[0, 1]))
}

/// `G_P(s) = V₀ Y_dq(s) + I₀`.
pub fn power_gain(y_dq: &StateSpace, op: &OperatingPoint) -> Result<StateSpace> {
    y_dq.pre_gain(&op.v_row())?.parallel(&StateSpace::gain(op.i_row()))
}

/// `K_v(s) = H_P(s)/s · G_P(s)`.
pub fn synchronization_gain(h_p: &StateSpace, g_p: &StateSpace) -> Result<StateSpace> {
    if h_p.inputs() != 1 || h_p.outputs() != 1 {
        return Err(Error::Dimension("H_P must be scalar".into()));
    }
    g_p.series(h_p)?.series(&StateSpace::integrator(1))
}

/// `Y_DQ = (Y_dq + I₀ᵉ K_v)(I + V₀ᵉ K_v)⁻¹` for arbitrary `K_v`.
pub fn frame_embed(y_dq: &StateSpace, k_v: &StateSpace, op: &OperatingPoint) -> Result<StateSpace> {
    if y_dq.inputs() != 2 || y_dq.outputs() != 2 || k_v.inputs() != 2 || k_v.outputs() != 1 {
        return Err(Error::Dimension("frame embedding needs 2x2 Y_dq and 1x2 K_v".into()));
    }
    // u -> [i; k]
    let mut dup = RMat::zeros(4, 2);
    dup[(0, 0)] = 1.0;
    dup[(1, 1)] = 1.0;
    dup[(2, 0)] = 1.0;
    dup[(3, 1)] = 1.0;
    let stacked = StateSpace::append(&[y_dq.clone(), k_v.clone()]).post_gain(&dup)?;
    // u = V - V₀ᵉ k
    let mut fb = RMat::zeros(2, 3);
    fb.view_mut((0, 2), (2, 1)).copy_from(&(-op.v_e()));
    let closed = stacked
        .static_feedback(&fb)
        .map_err(|_| Error::IllPosed("1 + K_v(∞) V₀ᵉ vanishes".into()))?;
    let mut out = RMat::zeros(2, 3);
    out.view_mut((0, 0), (2, 2)).copy_from(&RMat::identity(2, 2));
    out.view_mut((0, 2), (2, 1)).copy_from(&op.i_e());
    closed.pre_gain(&out)
}

/// Minimal realization of the frame embedding for a strictly proper `H_P/s`.
fn embed_minimal(y: &StateSpace, h_p: &StateSpace, op: &OperatingPoint) -> Result<StateSpace> {
    let sync = h_p.series(&StateSpace::integrator(1))?;
    let (n, m) = (y.order(), sync.order());
    let ve = op.v_e();
    let ie = op.i_e();
    let g0 = &op.v_row() * &y.d + op.i_row();
    let ce = &sync.c;
    let mut a = RMat::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&y.a);
    a.view_mut((0, n), (n, m)).copy_from(&(-(&y.b * &ve * ce)));
    a.view_mut((n, 0), (m, n)).copy_from(&(&sync.b * op.v_row() * &y.c));
    a.view_mut((n, n), (m, m)).copy_from(&(&sync.a - &sync.b * &g0 * &ve * ce));
    let mut b = RMat::zeros(n + m, 2);
    b.view_mut((0, 0), (n, 2)).copy_from(&y.b);
    b.view_mut((n, 0), (m, 2)).copy_from(&(&sync.b * &g0));
    let mut c = RMat::zeros(2, n + m);
    c.view_mut((0, 0), (2, n)).copy_from(&y.c);
    c.view_mut((0, n), (2, m)).copy_from(&((&ie - &y.d * &ve) * ce));
    StateSpace::new(a, b, c, y.d.clone())
}

/// Assemble the converter admittance at `op` (expressed in any frame).
pub fn build_converter(p: &GfmParameters, op: &OperatingPoint) -> Result<ConverterAdmittance> {
    p.validate()?;
    let y_dq = build_inner_admittance(p, op)?;
    let h_p = swing_filter(p)?;
    let g_p = power_gain(&y_dq, op)?;
    let k_v = synchronization_gain(&h_p, &g_p)?;
    let y_frame = embed_minimal(&y_dq, &h_p, op)?;
    Ok(ConverterAdmittance { y_dq, h_p, g_p, k_v, y_frame, op: *op, params: p.clone() })
}

/// Scalar-feedback form `Y_dq − (Y_dq V₀ᵉ − I₀ᵉ) K_v / (1 + K_v V₀ᵉ)` at one point.
pub fn scalar_feedback_form(y: &CMat, k: &CMat, op: &OperatingPoint) -> Result<CMat> {
    let ve = linalg::to_complex(&op.v_e());
    let ie = linalg::to_complex(&op.i_e());
    let denom = Complex64::new(1.0, 0.0) + (k * &ve)[(0, 0)];
    if denom.norm() < 1e-300 {
        return Err(Error::IllPosed("1 + K_v V₀ᵉ = 0".into()));
    }
    Ok(y - (y * &ve - ie) * k / denom)
}

/// Structural checks on `Y_DQ(0)`.
#[derive(Debug, Clone)]
pub struct DcTemplateReport {
    pub matrix: RMat,
    pub beta: f64,
    pub trace: f64,
    pub class: SectorialityClass,
    /// Largest deviation from the template with entries `−I_d0/V_d0`,
    /// `−I_q0/V_d0`, `I_d0/V_d0` and free `β`.
    pub template_residual: f64,
    /// `‖Y_DQ(0) V₀ᵉ − I₀ᵉ‖`.
    pub rotation_residual: f64,
}

pub fn check_dc_template(conv: &ConverterAdmittance) -> Result<DcTemplateReport> {
    let op = conv.op;
    if op.v_q.abs() > 1e-12 * op.voltage_magnitude() || op.v_d <= 0.0 {
        return Err(Error::AssumptionViolated("operating point must satisfy V_q0 = 0, V_d0 > 0".into()));
    }
    let kv_ve = conv.k_v.pre_gain(&RMat::identity(1, 1))?.post_gain(&op.v_e())?;
    if kv_ve.c.iter().all(|x| *x == 0.0) && kv_ve.d.iter().all(|x| *x == 0.0) {
        return Err(Error::AssumptionViolated("K_v V₀ᵉ vanishes identically".into()));
    }
    let y0c = conv.y_frame.evaluate(Complex64::new(0.0, 0.0))?;
    let y0 = y0c.map(|z| z.re);
    let vd = op.v_d;
    let expected = [
        ((0, 0), -op.i_d / vd),
        ((0, 1), -op.i_q / vd),
        ((1, 1), op.i_d / vd),
    ];
    let template_residual = expected
        .iter()
        .map(|(idx, v)| (y0[*idx] - v).abs())
        .fold(0.0, f64::max);
    let rotation_residual = (&y0 * op.v_e() - op.i_e()).norm();
    Ok(DcTemplateReport {
        beta: y0[(1, 0)],
        trace: y0.trace(),
        class: matrix_phase::classify(&y0c, matrix_phase::DEFAULT_RELATIVE_TOLERANCE),
        template_residual,
        rotation_residual,
        matrix: y0,
    })
}

/// Nonlinear steady state of the converter for a steady-frame voltage `v`:
/// the frame angle settles where the active power returns to its operating
/// value (and the internal voltage where the reactive power does, with
/// Q-control). Returns the steady-frame current. Used as an independent
/// check of the DC linearization.
pub fn steady_state_current(p: &GfmParameters, op: &OperatingPoint, v: [f64; 2]) -> Result<[f64; 2]> {
    let (m0, n0) = dc_loop_gains(p)?;
    let e0 = internal_voltage(p, op)?;
    let e_mag0 = e0.norm();
    let e_hat = &e0 / e_mag0;
    let (p0, q0) = (op.active_power(), op.reactive_power());

    let swing_current = |eps: f64, e_mag: f64| -> (RMat, RMat) {
        let (s, c) = eps.sin_cos();
        // swing-frame voltage R(-ε) v
        let vs = RMat::from_column_slice(2, 1, &[c * v[0] + s * v[1], -s * v[0] + c * v[1]]);
        let is = &m0 * (&vs - &e_hat * e_mag) + &n0 * &vs;
        (vs, is)
    };
    let residual = |x: &[f64; 2]| -> [f64; 2] {
        let (vs, is) = swing_current(x[0], x[1]);
        let pw = vs[0] * is[0] + vs[1] * is[1];
        let qw = vs[1] * is[0] - vs[0] * is[1];
        if p.q_control {
            [pw - p0, qw - q0]
        } else {
            [pw - p0, x[1] - e_mag0]
        }
    };
    let mut x = [0.0, e_mag0];
    for _ in 0..50 {
        let r = residual(&x);
        if r[0].abs().max(r[1].abs()) < 1e-15 {
            break;
        }
        let h = 1e-7;
        let mut jac = nalgebra::Matrix2::zeros();
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (rp, rm) = (residual(&xp), residual(&xm));
            jac[(0, k)] = (rp[0] - rm[0]) / (2.0 * h);
            jac[(1, k)] = (rp[1] - rm[1]) / (2.0 * h);
        }
        let dx = jac
            .try_inverse()
            .ok_or_else(|| Error::AssumptionViolated("singular steady-state Jacobian".into()))?
            * nalgebra::Vector2::new(r[0], r[1]);
        x[0] -= dx[0];
        x[1] -= dx[1];
    }
    let r = residual(&x);
    if r[0].abs().max(r[1].abs()) > 1e-12 {
        return Err(Error::AssumptionViolated("steady state did not converge".into()));
    }
    let (_, is) = swing_current(x[0], x[1]);
    let (s, c) = x[0].sin_cos();
    Ok([c * is[0] - s * is[1], s * is[0] + c * is[1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op_default() -> OperatingPoint {
        // generating 0.5 p.u. with some reactive export
        OperatingPoint::new(1.0, 0.0, -0.5, 0.1).unwrap()
    }

    pub(crate) fn random_draw(rng: &mut ChaCha8Rng) -> (GfmParameters, OperatingPoint) {
        let p = GfmParameters {
            inertia: rng.gen_range(0.005..0.2),
            damping: rng.gen_range(0.05..2.0),
            r_v: rng.gen_range(0.0..0.2),
            l_v: rng.gen_range(0.05..0.4),
            k_p: rng.gen_range(0.5..3.0),
            k_r: rng.gen_range(10.0..200.0),
            q_control: rng.gen_bool(0.5),
            ..GfmParameters::default()
        };
        let vd = rng.gen_range(0.9..1.1);
        let op = OperatingPoint::new(vd, 0.0, rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)).unwrap();
        (p, op)
    }

    #[test]
    fn virtual_admittance_matches_dq_impedance() {
        let p = GfmParameters::default();
        let yv = virtual_admittance(&p).unwrap();
        let l = p.l_v / p.omega0;
        for w in [0.0, 1.0, 50.0, 800.0] {
            let s = c(0.0, w);
            let z = CMat::from_row_slice(
                2,
                2,
                &[
                    s * l + p.r_v,
                    c(-p.l_v, 0.0),
                    c(p.l_v, 0.0),
                    s * l + p.r_v,
                ],
            );
            let expected = linalg::inverse(&z).unwrap();
            assert!(linalg::relative_error(&yv.evaluate(s).unwrap(), &expected) < 1e-12);
        }
    }

    #[test]
    fn ideal_current_tracking_limit() {
        let p = GfmParameters { k_p: 1e4, k_r: 1e6, ..GfmParameters::default() };
        let y = build_inner_admittance(&p, &op_default()).unwrap();
        let yv = virtual_admittance(&p).unwrap();
        for w in [0.0, 3.0, 30.0] {
            let s = c(0.0, w);
            assert!(linalg::relative_error(&y.evaluate(s).unwrap(), &yv.evaluate(s).unwrap()) < 1e-3);
        }
    }

    #[test]
    fn resonant_peak_at_nominal_frequency() {
        let p = GfmParameters::default();
        let pr = pr_controller(&p).unwrap();
        let peak = pr.freqresp(p.omega0).unwrap()[(0, 0)];
        assert!((peak - c(p.k_p + p.k_r, 0.0)).norm() < 1e-9);
        for w in [0.9 * p.omega0, 1.1 * p.omega0, 0.5 * p.omega0] {
            assert!(pr.freqresp(w).unwrap()[(0, 0)].norm() < peak.norm());
        }
    }

    #[test]
    fn power_gain_examples() {
        let op = OperatingPoint::new(1.0, 0.0, 1.0, 0.0).unwrap();
        let g = power_gain(&StateSpace::zeros(2, 2), &op).unwrap();
        assert_eq!(g.d, RMat::from_row_slice(1, 2, &[1.0, 0.0]));

        let op = OperatingPoint::new(1.0, 0.0, 0.3, -0.2).unwrap();
        let y = StateSpace::gain(RMat::identity(2, 2) * 2.0);
        let g = power_gain(&y, &op).unwrap();
        assert!((g.d[(0, 0)] - 2.3).abs() < 1e-15 && (g.d[(0, 1)] + 0.2).abs() < 1e-15);

        let p = GfmParameters::default();
        let op = op_default();
        let y = build_inner_admittance(&p, &op).unwrap();
        let g = power_gain(&y, &op).unwrap();
        for k in 0..50 {
            let s = c(0.0, 0.1 * 1.2f64.powi(k));
            let expected = linalg::to_complex(&op.v_row()) * y.evaluate(s).unwrap() + linalg::to_complex(&op.i_row());
            assert!(linalg::relative_error(&g.evaluate(s).unwrap(), &expected) < 1e-12);
        }
    }

    #[test]
    fn synchronization_gain_poles() {
        let p = GfmParameters::default();
        let zero = synchronization_gain(&StateSpace::zeros(1, 1), &StateSpace::gain(RMat::from_row_slice(1, 2, &[1.0, 2.0]))).unwrap();
        assert!(zero.evaluate(c(0.3, 1.0)).unwrap().iter().all(|z| z.norm() == 0.0));

        let h = swing_filter(&p).unwrap();
        let g = StateSpace::gain(RMat::from_row_slice(1, 2, &[1.0, 0.5]));
        let k = synchronization_gain(&h, &g).unwrap();
        let mut poles: Vec<f64> = k.poles().iter().map(|z| z.re).collect();
        poles.sort_by(|a, b| a.total_cmp(b));
        assert!((poles[0] + p.damping / p.inertia).abs() < 1e-9);
        assert!(poles[1].abs() < 1e-12);

        let s = c(0.7, 3.0);
        let expected = g.evaluate(s).unwrap() * h.evaluate(s).unwrap()[(0, 0)] / s;
        assert!(linalg::relative_error(&k.evaluate(s).unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn embedding_without_synchronization_is_identity() {
        let p = GfmParameters::default();
        let op = op_default();
        let y = build_inner_admittance(&p, &op).unwrap();
        let e = frame_embed(&y, &StateSpace::zeros(1, 2), &op).unwrap();
        for w in [0.1, 10.0, 1000.0] {
            let s = c(0.0, w);
            assert!(linalg::relative_error(&e.evaluate(s).unwrap(), &y.evaluate(s).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn minimal_and_generic_embeddings_agree_with_scalar_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (p, op) = random_draw(&mut rng);
            let conv = build_converter(&p, &op).unwrap();
            let generic = frame_embed(&conv.y_dq, &conv.k_v, &op).unwrap();
            for _ in 0..10 {
                let s = c(rng.gen_range(-1.0..1.0), 10f64.powf(rng.gen_range(-1.0..3.5)));
                let a = conv.y_frame.evaluate(s).unwrap();
                let b = generic.evaluate(s).unwrap();
                let f = scalar_feedback_form(&conv.y_dq.evaluate(s).unwrap(), &conv.k_v.evaluate(s).unwrap(), &op).unwrap();
                assert!(linalg::relative_error(&a, &b) < 1e-9);
                assert!(linalg::relative_error(&a, &f) < 1e-9);
            }
        }
    }

    #[test]
    fn dc_admittance_matches_nonlinear_steady_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..12 {
            let (p, op) = random_draw(&mut rng);
            let conv = build_converter(&p, &op).unwrap();
            let y0 = conv.y_frame.evaluate(c(0.0, 0.0)).unwrap().map(|z| z.re);
            let h = 1e-6;
            let mut fd = RMat::zeros(2, 2);
            for k in 0..2 {
                let mut vp = [op.v_d, op.v_q];
                let mut vm = vp;
                vp[k] += h;
                vm[k] -= h;
                let ip = steady_state_current(&p, &op, vp).unwrap();
                let im = steady_state_current(&p, &op, vm).unwrap();
                fd[(0, k)] = (ip[0] - im[0]) / (2.0 * h);
                fd[(1, k)] = (ip[1] - im[1]) / (2.0 * h);
            }
            let err = (&fd - &y0).abs().max() / y0.abs().max();
            assert!(err < 1e-5, "{err}: {y0} vs {fd}");
        }
    }

    #[test]
    fn dc_template_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let (p, op) = random_draw(&mut rng);
            let p = GfmParameters { q_control: false, ..p };
            let r = check_dc_template(&build_converter(&p, &op).unwrap()).unwrap();
            assert!(r.template_residual < 1e-8, "{}", r.template_residual);
            assert!(r.trace.abs() < 1e-8);
            assert!(r.rotation_residual < 1e-8);
            assert_eq!(r.class.kind, matrix_phase::Sectoriality::Non);
        }
    }

    #[test]
    fn reactive_integral_action_makes_dc_admittance_hermitian() {
        // ΔQ = 0 at DC pins β = −I_q0/V_d0; W degenerates to a real segment through 0
        let op = op_default();
        let p = GfmParameters { q_control: true, ..GfmParameters::default() };
        let r = check_dc_template(&build_converter(&p, &op).unwrap()).unwrap();
        assert!((r.beta + op.i_q / op.v_d).abs() < 1e-9);
        assert!(r.template_residual < 1e-8);
        assert_eq!(r.class.kind, matrix_phase::Sectoriality::Semi);
    }

    #[test]
    fn zero_reactive_current_zeroes_the_off_diagonal() {
        let op = OperatingPoint::new(1.0, 0.0, -0.7, 0.0).unwrap();
        let r = check_dc_template(&build_converter(&GfmParameters::default(), &op).unwrap()).unwrap();
        assert!(r.matrix[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn beta_matches_richardson_extrapolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let (p, op) = random_draw(&mut rng);
            let conv = build_converter(&p, &op).unwrap();
            let beta = check_dc_template(&conv).unwrap().beta;
            let f = |s: f64| conv.y_frame.evaluate(c(s, 0.0)).unwrap()[(1, 0)].re;
            let hs = [1e-4, 1e-5, 1e-6, 1e-7];
            let mut table: Vec<f64> = hs.iter().map(|h| f(*h)).collect();
            for level in 1..hs.len() {
                let factor = 10f64.powi(level as i32);
                table = table.windows(2).map(|w| (factor * w[1] - w[0]) / (factor - 1.0)).collect();
            }
            assert!((table[0] - beta).abs() < 1e-6 * beta.abs().max(1.0), "{} vs {beta}", table[0]);
        }
    }

    #[test]
    fn dc_template_rejects_rotated_points() {
        let op = OperatingPoint::new(0.8, 0.6, 0.1, 0.0).unwrap();
        let conv = build_converter(&GfmParameters::default(), &op).unwrap();
        assert!(matches!(check_dc_template(&conv), Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn default_converter_is_stable() {
        let conv = build_converter(&GfmParameters::default(), &op_default()).unwrap();
        assert!(conv.y_frame.is_stable(0.0).stable);
        let q = GfmParameters { q_control: true, ..GfmParameters::default() };
        assert!(build_converter(&q, &op_default()).unwrap().y_frame.is_stable(0.0).stable);
    }

    #[test]
    fn reactive_loop_only_acts_at_low_frequency() {
        let op = op_default();
        let off = build_converter(&GfmParameters::default(), &op).unwrap();
        let on = build_converter(&GfmParameters { q_control: true, ..GfmParameters::default() }, &op).unwrap();
        let diff = |f: f64| {
            let s = c(0.0, 2.0 * PI * f);
            linalg::singular_values(&(on.y_frame.evaluate(s).unwrap() - off.y_frame.evaluate(s).unwrap()))[0]
        };
        assert!(diff(1000.0) < 1e-6 * diff(0.1), "{} vs {}", diff(1000.0), diff(0.1));
    }

    #[test]
    fn delay_hook_reduces_to_no_delay() {
        let op = op_default();
        let base = build_inner_admittance(&GfmParameters::default(), &op).unwrap();
        let tiny = build_inner_admittance(&GfmParameters { delay: 1e-9, ..GfmParameters::default() }, &op).unwrap();
        let s = c(0.0, 100.0);
        assert!(linalg::relative_error(&base.evaluate(s).unwrap(), &tiny.evaluate(s).unwrap()) < 1e-5);
    }

    #[test]
    fn canonical_rotation() {
        let op = OperatingPoint::new(0.6, 0.8, 0.2, -0.4).unwrap();
        let (rot, angle) = op.canonical();
        assert!((rot.v_d - 1.0).abs() < 1e-15 && rot.v_q == 0.0);
        assert!((rot.active_power() - op.active_power()).abs() < 1e-15);
        assert!((rot.reactive_power() - op.reactive_power()).abs() < 1e-15);
        assert!((angle - 0.8f64.atan2(0.6)).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let p = GfmParameters { inertia: 0.0, ..GfmParameters::default() };
        assert!(matches!(p.validate(), Err(Error::InvalidParameter(_))));
        assert!(matches!(OperatingPoint::new(0.0, 0.0, 1.0, 0.0), Err(Error::ZeroVoltage)));
    }
}
