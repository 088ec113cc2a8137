//! Real LTI state-space models and their interconnections.
//!
//! A [`StateSpace`] holds `(A, B, C, D)` with transfer matrix
//! `G(s) = C (sI - A)^-1 B + D`. Models with zero states are static gains.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, CMat, RMat};

/// Real-part tolerance used when classifying poles.
pub const STABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: RMat,
    pub b: RMat,
    pub c: RMat,
    pub d: RMat,
}

/// Poles of a model together with the stability verdict.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub stable: bool,
    pub spectrum: Vec<Complex64>,
}

impl StabilityReport {
    /// Rightmost pole, if any.
    pub fn rightmost(&self) -> Option<Complex64> {
        self.spectrum.iter().copied().max_by(|a, b| a.re.total_cmp(&b.re))
    }
}

impl StateSpace {
    pub fn new(a: RMat, b: RMat, c: RMat, d: RMat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows and C has {} columns, expected {n}",
                b.nrows(),
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Static gain (no states).
    pub fn gain(d: RMat) -> Self {
        let (p, m) = d.shape();
        Self {
            a: RMat::zeros(0, 0),
            b: RMat::zeros(0, m),
            c: RMat::zeros(p, 0),
            d,
        }
    }

    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self::gain(RMat::zeros(outputs, inputs))
    }

    pub fn identity(n: usize) -> Self {
        Self::gain(RMat::identity(n, n))
    }

    /// `k` parallel integrators `1/s`.
    pub fn integrator(k: usize) -> Self {
        Self {
            a: RMat::zeros(k, k),
            b: RMat::identity(k, k),
            c: RMat::identity(k, k),
            d: RMat::zeros(k, k),
        }
    }

    /// SISO first-order lag `gain / (tau s + 1)`.
    pub fn first_order(gain: f64, tau: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::InvalidParameter(format!("time constant {tau} must be positive")));
        }
        Self::new(
            RMat::from_element(1, 1, -1.0 / tau),
            RMat::from_element(1, 1, 1.0),
            RMat::from_element(1, 1, gain / tau),
            RMat::zeros(1, 1),
        )
    }

    /// SISO model from transfer-function coefficients (highest power first),
    /// realized in controllable canonical form. Requires `deg num <= deg den`.
    pub fn from_tf(num: &[f64], den: &[f64]) -> Result<Self> {
        let den: Vec<f64> = den.iter().copied().skip_while(|x| *x == 0.0).collect();
        let num: Vec<f64> = num.iter().copied().skip_while(|x| *x == 0.0).collect();
        if den.is_empty() {
            return Err(Error::InvalidParameter("zero denominator".into()));
        }
        let n = den.len() - 1;
        if num.len() > den.len() {
            return Err(Error::InvalidParameter("improper transfer function".into()));
        }
        let lead = den[0];
        let den: Vec<f64> = den.iter().map(|x| x / lead).collect();
        let mut padded = vec![0.0; n + 1 - num.len()];
        padded.extend(num.iter().map(|x| x / lead));
        let d = padded[0];
        let mut a = RMat::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        let mut c = RMat::zeros(1, n);
        for k in 0..n {
            // state x_k ~ s^k; the last row holds -den coefficients
            a[(n - 1, k)] = -den[n - k];
            c[(0, k)] = padded[n - k] - d * den[n - k];
        }
        let mut b = RMat::zeros(n, 1);
        if n > 0 {
            b[(n - 1, 0)] = 1.0;
        }
        Self::new(a, b, c, RMat::from_element(1, 1, d))
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d.iter().all(|x| *x == 0.0)
    }

    /// `G(s) = C (sI - A)^-1 B + D` by a direct LU solve.
    pub fn evaluate(&self, s: Complex64) -> Result<CMat> {
        let n = self.order();
        let d = linalg::to_complex(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let mut resolvent = self.a.map(|x| Complex64::new(-x, 0.0));
        for i in 0..n {
            resolvent[(i, i)] += s;
        }
        let scale = resolvent.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1.0);
        let lu = resolvent.lu();
        let u = lu.u();
        let min_pivot = (0..n).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-13 * scale) {
            return Err(Error::SingularResolvent { s });
        }
        let x = lu
            .solve(&linalg::to_complex(&self.b))
            .ok_or(Error::SingularResolvent { s })?;
        Ok(linalg::to_complex(&self.c) * x + d)
    }

    /// Frequency response at `omega` rad/s.
    pub fn freqresp(&self, omega: f64) -> Result<CMat> {
        self.evaluate(Complex64::new(0.0, omega))
    }

    pub fn poles(&self) -> Vec<Complex64> {
        linalg::real_eigenvalues(&self.a)
    }

    /// Stable iff every pole has real part below `-margin - STABILITY_TOLERANCE`.
    /// Poles on the imaginary axis count as unstable.
    pub fn is_stable(&self, margin: f64) -> StabilityReport {
        let spectrum = self.poles();
        let stable = spectrum.iter().all(|p| p.re < -margin - STABILITY_TOLERANCE);
        StabilityReport { stable, spectrum }
    }

    /// Poles with `Re >= -margin` that are both controllable and observable
    /// (PBH rank test). Hidden modes of a non-minimal realization are skipped.
    pub fn unstable_visible_poles(&self, margin: f64) -> Vec<Complex64> {
        let n = self.order();
        let scale = self.a.norm().max(self.b.norm()).max(self.c.norm()).max(1.0);
        self.poles()
            .into_iter()
            .filter(|p| p.re >= -margin - STABILITY_TOLERANCE)
            .filter(|&p| {
                let mut shifted = self.a.map(|x| Complex64::new(-x, 0.0));
                for i in 0..n {
                    shifted[(i, i)] += p;
                }
                let mut obs = CMat::zeros(n + self.outputs(), n);
                obs.view_mut((0, 0), (n, n)).copy_from(&shifted);
                obs.view_mut((n, 0), (self.outputs(), n)).copy_from(&linalg::to_complex(&self.c));
                let mut ctr = CMat::zeros(n, n + self.inputs());
                ctr.view_mut((0, 0), (n, n)).copy_from(&shifted);
                ctr.view_mut((0, n), (n, self.inputs())).copy_from(&linalg::to_complex(&self.b));
                let so = linalg::singular_values(&obs).last().copied().unwrap_or(0.0);
                let sc = linalg::singular_values(&ctr.transpose()).last().copied().unwrap_or(0.0);
                so > 1e-8 * scale && sc > 1e-8 * scale
            })
            .collect()
    }

    /// `next ∘ self`: the output of `self` drives `next`.
    pub fn series(&self, next: &StateSpace) -> Result<Self> {
        if self.outputs() != next.inputs() {
            return Err(Error::Dimension(format!(
                "series: {} outputs feed {} inputs",
                self.outputs(),
                next.inputs()
            )));
        }
        let (n1, n2) = (self.order(), next.order());
        let mut a = RMat::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        let mut b = RMat::zeros(n1 + n2, self.inputs());
        b.view_mut((0, 0), (n1, self.inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.inputs())).copy_from(&(&next.b * &self.d));
        let mut c = RMat::zeros(next.outputs(), n1 + n2);
        c.view_mut((0, 0), (next.outputs(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.outputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        Self::new(a, b, c, d)
    }

    pub fn parallel(&self, other: &StateSpace) -> Result<Self> {
        if self.inputs() != other.inputs() || self.outputs() != other.outputs() {
            return Err(Error::Dimension("parallel: shapes differ".into()));
        }
        let a = block_diag(&[self.a.clone(), other.a.clone()]);
        let mut b = RMat::zeros(self.order() + other.order(), self.inputs());
        b.view_mut((0, 0), self.b.shape()).copy_from(&self.b);
        b.view_mut((self.order(), 0), other.b.shape()).copy_from(&other.b);
        let mut c = RMat::zeros(self.outputs(), self.order() + other.order());
        c.view_mut((0, 0), self.c.shape()).copy_from(&self.c);
        c.view_mut((0, self.order()), other.c.shape()).copy_from(&other.c);
        Self::new(a, b, c, &self.d + &other.d)
    }

    /// Block-diagonal stacking: inputs and outputs are concatenated.
    pub fn append(models: &[StateSpace]) -> Self {
        let a = block_diag(&models.iter().map(|m| m.a.clone()).collect::<Vec<_>>());
        let b = block_diag(&models.iter().map(|m| m.b.clone()).collect::<Vec<_>>());
        let c = block_diag(&models.iter().map(|m| m.c.clone()).collect::<Vec<_>>());
        let d = block_diag(&models.iter().map(|m| m.d.clone()).collect::<Vec<_>>());
        Self { a, b, c, d }
    }

    /// Closed loop of `self` (plant) with `controller` in the return path:
    /// `u = r + sign * K y`, `y = P u`. `sign = -1` is negative feedback,
    /// giving `P (I + K P)^-1`.
    pub fn feedback(&self, controller: &StateSpace, sign: f64) -> Result<Self> {
        let (p, k) = (self, controller);
        if k.inputs() != p.outputs() || k.outputs() != p.inputs() {
            return Err(Error::Dimension(format!(
                "feedback: plant {}x{} with controller {}x{}",
                p.outputs(),
                p.inputs(),
                k.outputs(),
                k.inputs()
            )));
        }
        let ny = p.outputs();
        let loop_mat = RMat::identity(ny, ny) - (&p.d * &k.d) * sign;
        let e = loop_mat
            .try_inverse()
            .ok_or_else(|| Error::IllPosed("I - sign*D1*D2 is singular".into()))?;
        let (n1, n2) = (p.order(), k.order());
        // y = Cy x + Dy r
        let mut cy = RMat::zeros(ny, n1 + n2);
        cy.view_mut((0, 0), (ny, n1)).copy_from(&(&e * &p.c));
        cy.view_mut((0, n1), (ny, n2)).copy_from(&(&e * &p.d * &k.c * sign));
        let dy = &e * &p.d;
        // u = Cu x + Du r
        let mut cu = (&k.d * &cy) * sign;
        {
            let mut blk = cu.view_mut((0, n1), (p.inputs(), n2));
            blk += &k.c * sign;
        }
        let du = RMat::identity(p.inputs(), p.inputs()) + (&k.d * &dy) * sign;
        let mut a = block_diag(&[p.a.clone(), k.a.clone()]);
        {
            let mut top = a.view_mut((0, 0), (n1, n1 + n2));
            top += &p.b * &cu;
        }
        {
            let mut bottom = a.view_mut((n1, 0), (n2, n1 + n2));
            bottom += &k.b * &cy;
        }
        let mut b = RMat::zeros(n1 + n2, p.inputs());
        b.view_mut((0, 0), (n1, p.inputs())).copy_from(&(&p.b * &du));
        b.view_mut((n1, 0), (n2, p.inputs())).copy_from(&(&k.b * &dy));
        Self::new(a, b, cy, dy)
    }

    /// Static output feedback `u = v + K y`.
    pub fn static_feedback(&self, k: &RMat) -> Result<Self> {
        self.feedback(&StateSpace::gain(k.clone()), 1.0)
    }

    /// `M * G(s)`.
    pub fn pre_gain(&self, m: &RMat) -> Result<Self> {
        self.series(&StateSpace::gain(m.clone()))
    }

    /// `G(s) * M`.
    pub fn post_gain(&self, m: &RMat) -> Result<Self> {
        StateSpace::gain(m.clone()).series(self)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.c * k,
            d: &self.d * k,
        }
    }

    /// `G(s)^-1` for a model with invertible feedthrough.
    pub fn inverse(&self) -> Result<Self> {
        if self.inputs() != self.outputs() {
            return Err(Error::NotInvertible("non-square model".into()));
        }
        let dinv = self
            .d
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NotInvertible("feedthrough D is singular".into()))?;
        let a = &self.a - &self.b * &dinv * &self.c;
        let b = &self.b * &dinv;
        let c = -(&dinv * &self.c);
        Self::new(a, b, c, dinv)
    }

    /// `G(s) (P0 + s P1)` for a strictly proper `G`. The product stays proper
    /// because `C (sI - A)^-1 s B = C B + C (sI - A)^-1 A B`.
    pub fn mul_polynomial_right(&self, p0: &RMat, p1: &RMat) -> Result<Self> {
        if p0.shape() != p1.shape() || p0.nrows() != self.inputs() {
            return Err(Error::Dimension("polynomial factor shape".into()));
        }
        if !self.is_strictly_proper() && p1.iter().any(|x| *x != 0.0) {
            return Err(Error::IllPosed("product with s-term is improper".into()));
        }
        let b = &self.b * p0 + &self.a * &self.b * p1;
        let d = &self.d * p0 + &self.c * &self.b * p1;
        Self::new(self.a.clone(), b, self.c.clone(), d)
    }

    /// Change of state coordinates `x = T z`.
    pub fn similarity(&self, t: &RMat) -> Result<Self> {
        let tinv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NotInvertible("similarity transform".into()))?;
        Self::new(&tinv * &self.a * t, &tinv * &self.b, &self.c * t, self.d.clone())
    }

    /// Keep a subset of inputs and outputs.
    pub fn select(&self, outputs: &[usize], inputs: &[usize]) -> Self {
        let b = RMat::from_fn(self.order(), inputs.len(), |i, j| self.b[(i, inputs[j])]);
        let c = RMat::from_fn(outputs.len(), self.order(), |i, j| self.c[(outputs[i], j)]);
        let d = RMat::from_fn(outputs.len(), inputs.len(), |i, j| self.d[(outputs[i], inputs[j])]);
        Self { a: self.a.clone(), b, c, d }
    }
}

/// Map a SISO stationary-frame model `g(s)` to its 2x2 dq-frame equivalent
/// `g(s + j w0)` realized with real coefficients.
pub fn to_dq_frame(siso: &StateSpace, omega0: f64) -> Result<StateSpace> {
    if siso.inputs() != 1 || siso.outputs() != 1 {
        return Err(Error::Dimension("dq mapping needs a SISO model".into()));
    }
    let n = siso.order();
    let mut a = RMat::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&siso.a);
    a.view_mut((n, n), (n, n)).copy_from(&siso.a);
    for i in 0..n {
        a[(i, n + i)] = omega0;
        a[(n + i, i)] = -omega0;
    }
    let b = block_diag(&[siso.b.clone(), siso.b.clone()]);
    let c = block_diag(&[siso.c.clone(), siso.c.clone()]);
    let d = DMatrix::identity(2, 2) * siso.d[(0, 0)];
    StateSpace::new(a, b, c, d)
}
