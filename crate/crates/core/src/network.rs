//! Network data, power flow and the dq-frame dynamic network model.
//!
//! Static R/X/B data becomes dynamic RL/C elements with `L = X/ω₀` and
//! `C = B/ω₀`. Stiff (slack) buses hold their voltage and are grounded in
//! the small-signal model. The nodal admittance `Y(s)` is improper once
//! capacitors are present, so the state-space model kept for eigenvalue
//! studies is the impedance `Z(s) = Y(s)⁻¹` from bus current injections to
//! bus voltages. Kron reduction onto converter buses is then a plain
//! selection of inputs and outputs of `Z`, and the per-frequency reduced
//! admittance is the Schur complement of `Y(jω)`.

use std::collections::HashMap;
use std::io::Read;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::lti::StateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    /// Stiff voltage source; also the power-flow slack.
    Slack,
    Pv,
    Pq,
}

/// Bus record. Powers are in p.u. on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusData {
    pub bus: usize,
    #[serde(rename = "type")]
    pub kind: BusKind,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default = "one")]
    pub v_set: f64,
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchData {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    /// Off-nominal ratio on the from side; 0 or absent means 1.
    #[serde(default)]
    pub tap: f64,
}

impl BranchData {
    pub fn ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    pub buses: Vec<BusData>,
    pub branches: Vec<BranchData>,
}

fn read_csv<T: for<'de> Deserialize<'de>>(reader: impl Read, what: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize().enumerate() {
        out.push(rec.map_err(|e| Error::Csv(format!("{what} row {}: {e}", k + 1)))?);
    }
    Ok(out)
}

pub fn parse_buses(reader: impl Read) -> Result<Vec<BusData>> {
    let buses: Vec<BusData> = read_csv(reader, "bus")?;
    for b in &buses {
        let vals = [b.p_load, b.q_load, b.p_gen, b.v_set, b.g_shunt, b.b_shunt];
        if !vals.iter().all(|x| x.is_finite()) || b.v_set <= 0.0 {
            return Err(Error::Csv(format!("bus {}: invalid numeric field", b.bus)));
        }
    }
    Ok(buses)
}

pub fn parse_branches(reader: impl Read) -> Result<Vec<BranchData>> {
    let branches: Vec<BranchData> = read_csv(reader, "branch")?;
    for br in &branches {
        let vals = [br.r, br.x, br.b, br.tap];
        if !vals.iter().all(|x| x.is_finite()) || br.r < 0.0 || br.x < 0.0 || br.tap < 0.0 {
            return Err(Error::Csv(format!("branch {}-{}: invalid numeric field", br.from, br.to)));
        }
    }
    Ok(branches)
}

impl NetworkData {
    pub fn new(buses: Vec<BusData>, branches: Vec<BranchData>) -> Result<Self> {
        let data = Self { buses, branches };
        data.validate()?;
        Ok(data)
    }

    pub fn index(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(k, b)| (b.bus, k)).collect()
    }

    pub fn position(&self, bus: usize) -> Result<usize> {
        self.buses.iter().position(|b| b.bus == bus).ok_or(Error::UnknownBus(bus))
    }

    fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::Config("network has no buses".into()));
        }
        let idx = self.index();
        if idx.len() != self.buses.len() {
            return Err(Error::Config("duplicate bus id".into()));
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !idx.contains_key(&end) {
                    return Err(Error::UnknownBus(end));
                }
            }
            if br.from == br.to {
                return Err(Error::DegenerateBranch { from: br.from, to: br.to });
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::DegenerateBranch { from: br.from, to: br.to });
            }
        }
        // connectivity by union-find
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for br in &self.branches {
            let (a, b) = (find(&mut parent, idx[&br.from]), find(&mut parent, idx[&br.to]));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        for k in 0..n {
            if find(&mut parent, k) != root {
                return Err(Error::Disconnected(self.buses[k].bus));
            }
        }
        if !self.buses.iter().any(|b| b.kind == BusKind::Slack) {
            return Err(Error::Config("network needs a slack (stiff) bus".into()));
        }
        Ok(())
    }

    /// Raises `r` to at least `ratio·x` on every branch. Purely inductive
    /// loops otherwise carry undamped circulating-current modes at ±jω₀.
    pub fn with_resistance_floor(mut self, ratio: f64) -> Self {
        for br in &mut self.branches {
            br.r = br.r.max(ratio * br.x);
        }
        self
    }

    /// Complex bus admittance matrix at nominal frequency (branches and bus shunts).
    pub fn ybus(&self) -> CMat {
        let n = self.buses.len();
        let idx = self.index();
        let mut y = CMat::zeros(n, n);
        for br in &self.branches {
            let (f, t) = (idx[&br.from], idx[&br.to]);
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let bc = Complex64::new(0.0, br.b / 2.0);
            let tap = br.ratio();
            y[(f, f)] += (ys + bc) / (tap * tap);
            y[(t, t)] += ys + bc;
            y[(f, t)] -= ys / tap;
            y[(t, f)] -= ys / tap;
        }
        for (k, b) in self.buses.iter().enumerate() {
            y[(k, k)] += Complex64::new(b.g_shunt, b.b_shunt);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Complex bus voltages in the global frame (slack angle 0).
    pub voltages: Vec<Complex64>,
    /// Net complex power injected at each bus.
    pub injections: Vec<Complex64>,
    pub iterations: usize,
}

impl PowerFlowSolution {
    /// Generated power at a bus (injection plus local load).
    pub fn generation(&self, data: &NetworkData, k: usize) -> Complex64 {
        self.injections[k] + Complex64::new(data.buses[k].p_load, data.buses[k].q_load)
    }
}

pub const POWER_FLOW_TOLERANCE: f64 = 1e-10;

/// Flat-start Newton-Raphson in polar coordinates.
pub fn power_flow(data: &NetworkData) -> Result<PowerFlowSolution> {
    let n = data.buses.len();
    let y = data.ybus();
    let mut vm: Vec<f64> = data
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_set })
        .collect();
    let mut va = vec![0.0; n];
    let spec: Vec<Complex64> = data
        .buses
        .iter()
        .map(|b| Complex64::new(b.p_gen - b.p_load, -b.q_load))
        .collect();
    let pvpq: Vec<usize> = (0..n).filter(|&k| data.buses[k].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&k| data.buses[k].kind == BusKind::Pq).collect();
    let voltages = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter().zip(va).map(|(m, a)| Complex64::from_polar(*m, *a)).collect()
    };
    let injections = |v: &[Complex64]| -> Vec<Complex64> {
        let vv = nalgebra::DVector::from_row_slice(v);
        let i = &y * &vv;
        (0..n).map(|k| v[k] * i[k].conj()).collect()
    };
    let mut mismatch = f64::INFINITY;
    for it in 0..50 {
        let v = voltages(&vm, &va);
        let s = injections(&v);
        let mut f = Vec::with_capacity(pvpq.len() + pq.len());
        f.extend(pvpq.iter().map(|&k| s[k].re - spec[k].re));
        f.extend(pq.iter().map(|&k| s[k].im - spec[k].im));
        mismatch = f.iter().fold(0.0, |m, x| m.max(x.abs()));
        if mismatch < POWER_FLOW_TOLERANCE {
            return Ok(PowerFlowSolution { voltages: v, injections: s, iterations: it });
        }
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)), dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let vv = nalgebra::DVector::from_row_slice(&v);
        let ibus = &y * &vv;
        let vnorm: Vec<Complex64> = v.iter().map(|z| z / z.norm()).collect();
        let mut ds_dva = CMat::zeros(n, n);
        let mut ds_dvm = CMat::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let diag_i = if r == c { ibus[r] } else { Complex64::new(0.0, 0.0) };
                ds_dva[(r, c)] = linalg::J * v[r] * (diag_i - y[(r, c)] * v[c]).conj();
                ds_dvm[(r, c)] = v[r] * (y[(r, c)] * vnorm[c]).conj();
                if r == c {
                    ds_dvm[(r, c)] += ibus[r].conj() * vnorm[r];
                }
            }
        }
        let m = pvpq.len() + pq.len();
        let mut jac = RMat::zeros(m, m);
        for (i, &r) in pvpq.iter().enumerate() {
            for (j, &c) in pvpq.iter().enumerate() {
                jac[(i, j)] = ds_dva[(r, c)].re;
            }
            for (j, &c) in pq.iter().enumerate() {
                jac[(i, pvpq.len() + j)] = ds_dvm[(r, c)].re;
            }
        }
        for (i, &r) in pq.iter().enumerate() {
            for (j, &c) in pvpq.iter().enumerate() {
                jac[(pvpq.len() + i, j)] = ds_dva[(r, c)].im;
            }
            for (j, &c) in pq.iter().enumerate() {
                jac[(pvpq.len() + i, pvpq.len() + j)] = ds_dvm[(r, c)].im;
            }
        }
        let rhs = nalgebra::DVector::from_vec(f);
        let dx = jac.lu().solve(&rhs).ok_or(Error::PowerFlow { iterations: it, mismatch })?;
        for (i, &k) in pvpq.iter().enumerate() {
            va[k] -= dx[i];
        }
        for (i, &k) in pq.iter().enumerate() {
            vm[k] -= dx[pvpq.len() + i];
        }
        if !vm.iter().chain(&va).all(|x| x.is_finite()) {
            break;
        }
    }
    Err(Error::PowerFlow { iterations: 50, mismatch })
}

/// Dynamic network element in the dq frame. Bus fields are positions in the bus list.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    /// Series RL branch with an ideal transformer of ratio `tap` on the from side.
    Branch { from: usize, to: usize, r: f64, l: f64, tap: f64 },
    Capacitor { bus: usize, c: f64 },
    Conductance { bus: usize, g: f64 },
    /// Shunt RL to ground.
    Inductor { bus: usize, r: f64, l: f64 },
}

/// `Z(s) = (R + sL) I + ω₀ L Rot90`, the dq impedance of a series RL.
pub fn rl_impedance(r: f64, l: f64, omega0: f64, s: Complex64) -> CMat {
    let diag = s * l + r;
    let x = Complex64::new(omega0 * l, 0.0);
    CMat::from_row_slice(2, 2, &[diag, -x, x, diag])
}

/// dq admittance of a series RL branch.
pub fn branch_dq(r: f64, l: f64, omega0: f64, s: Complex64) -> Result<CMat> {
    if r < 0.0 || l < 0.0 || (r == 0.0 && l == 0.0) {
        return Err(Error::DegenerateBranch { from: 0, to: 0 });
    }
    linalg::inverse(&rl_impedance(r, l, omega0, s)).ok_or(Error::SingularResolvent { s })
}

fn rot90_c() -> CMat {
    linalg::to_complex(&linalg::rot90())
}

fn add_block(y: &mut CMat, r: usize, c: usize, blk: &CMat) {
    let mut v = y.view_mut((2 * r, 2 * c), (2, 2));
    v += blk;
}

/// Full dq nodal admittance over `n` buses at complex frequency `s`.
pub fn assemble(elements: &[Element], n: usize, omega0: f64, s: Complex64) -> Result<CMat> {
    let mut y = CMat::zeros(2 * n, 2 * n);
    let eye = CMat::identity(2, 2);
    for e in elements {
        match *e {
            Element::Branch { from, to, r, l, tap } => {
                let yb = branch_dq(r, l, omega0, s).map_err(|err| match err {
                    Error::DegenerateBranch { .. } => Error::DegenerateBranch { from, to },
                    other => other,
                })?;
                add_block(&mut y, from, from, &(&yb / Complex64::new(tap * tap, 0.0)));
                add_block(&mut y, to, to, &yb);
                add_block(&mut y, from, to, &(-&yb / Complex64::new(tap, 0.0)));
                add_block(&mut y, to, from, &(-&yb / Complex64::new(tap, 0.0)));
            }
            Element::Capacitor { bus, c } => {
                let blk = &eye * (s * c) + rot90_c() * Complex64::new(omega0 * c, 0.0);
                add_block(&mut y, bus, bus, &blk);
            }
            Element::Conductance { bus, g } => add_block(&mut y, bus, bus, &(&eye * Complex64::new(g, 0.0))),
            Element::Inductor { bus, r, l } => {
                let yb = linalg::inverse(&rl_impedance(r, l, omega0, s)).ok_or(Error::SingularResolvent { s })?;
                add_block(&mut y, bus, bus, &yb);
            }
        }
    }
    Ok(y)
}

/// Elements for branches and bus shunts of the static data.
pub fn static_elements(data: &NetworkData, omega0: f64) -> Vec<Element> {
    let idx = data.index();
    let mut out = Vec::new();
    for br in &data.branches {
        let (f, t, tap) = (idx[&br.from], idx[&br.to], br.ratio());
        out.push(Element::Branch { from: f, to: t, r: br.r, l: br.x / omega0, tap });
        if br.b != 0.0 {
            out.push(Element::Capacitor { bus: f, c: br.b / 2.0 / omega0 / (tap * tap) });
            out.push(Element::Capacitor { bus: t, c: br.b / 2.0 / omega0 });
        }
    }
    for (k, b) in data.buses.iter().enumerate() {
        out.extend(susceptance_element(k, b.b_shunt, omega0));
        if b.g_shunt != 0.0 {
            out.push(Element::Conductance { bus: k, g: b.g_shunt });
        }
    }
    out
}

fn susceptance_element(bus: usize, b: f64, omega0: f64) -> Option<Element> {
    if b > 0.0 {
        Some(Element::Capacitor { bus, c: b / omega0 })
    } else if b < 0.0 {
        Some(Element::Inductor { bus, r: 0.0, l: -1.0 / (omega0 * b) })
    } else {
        None
    }
}

/// Constant-impedance equivalents of the loads at the solved voltages.
pub fn load_elements(data: &NetworkData, pf: &PowerFlowSolution, omega0: f64) -> Vec<Element> {
    let mut out = Vec::new();
    for (k, b) in data.buses.iter().enumerate() {
        if b.kind == BusKind::Slack {
            continue;
        }
        let v2 = pf.voltages[k].norm_sqr();
        if b.p_load != 0.0 {
            out.push(Element::Conductance { bus: k, g: b.p_load / v2 });
        }
        out.extend(susceptance_element(k, -b.q_load / v2, omega0));
    }
    out
}

/// Network small-signal model around a power-flow solution.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub omega0: f64,
    pub data: NetworkData,
    pub elements: Vec<Element>,
    /// Positions of non-stiff buses (the state-space ports), in bus-list order.
    pub active: Vec<usize>,
    /// Positions of retained (converter) buses.
    pub retained: Vec<usize>,
    /// Impedance from current injections at active buses to their voltages.
    pub z_full: StateSpace,
}

impl NetworkModel {
    /// `capacitance_floor` (p.u. susceptance at ω₀) tops up every non-stiff bus
    /// so that each has a voltage state.
    pub fn build(
        data: &NetworkData,
        pf: &PowerFlowSolution,
        retained_buses: &[usize],
        omega0: f64,
        capacitance_floor: f64,
    ) -> Result<Self> {
        let mut elements = static_elements(data, omega0);
        elements.extend(load_elements(data, pf, omega0));
        let active: Vec<usize> = (0..data.buses.len())
            .filter(|&k| data.buses[k].kind != BusKind::Slack)
            .collect();
        let mut cap = vec![0.0; data.buses.len()];
        for e in &elements {
            if let Element::Capacitor { bus, c } = e {
                cap[*bus] += c;
            }
        }
        let floor = capacitance_floor / omega0;
        for &k in &active {
            if cap[k] < floor {
                elements.push(Element::Capacitor { bus: k, c: floor - cap[k] });
            }
        }
        let mut retained = Vec::new();
        for &b in retained_buses {
            let k = data.position(b)?;
            if data.buses[k].kind == BusKind::Slack {
                return Err(Error::Config(format!("bus {b} is stiff and cannot host a converter")));
            }
            retained.push(k);
        }
        let z_full = impedance_realization(&elements, &active, data.buses.len(), omega0)?;
        Ok(Self { omega0, data: data.clone(), elements, active, retained, z_full })
    }

    pub fn bus_count(&self) -> usize {
        self.data.buses.len()
    }

    /// Full nodal admittance over all buses, stiff ones included.
    pub fn nodal(&self, s: Complex64) -> Result<CMat> {
        assemble(&self.elements, self.bus_count(), self.omega0, s)
    }

    /// Nodal admittance over the active buses (stiff buses grounded).
    pub fn active_admittance(&self, s: Complex64) -> Result<CMat> {
        let y = self.nodal(s)?;
        let idx = expand(&self.active);
        Ok(submatrix(&y, &idx, &idx))
    }

    fn retained_in_active(&self) -> Vec<usize> {
        self.retained
            .iter()
            .map(|k| self.active.iter().position(|a| a == k).expect("retained bus is active"))
            .collect()
    }

    /// Kron-reduced admittance `Y_ee − Y_ei Y_ii⁻¹ Y_ie` at the retained buses.
    pub fn reduced_admittance(&self, s: Complex64) -> Result<CMat> {
        let y = self.active_admittance(s)?;
        let ret = self.retained_in_active();
        let internal: Vec<usize> = (0..self.active.len()).filter(|k| !ret.contains(k)).collect();
        kron_reduce(&y, &ret, &internal, s)
    }

    /// Reduced port impedance realization (inputs/outputs at retained buses, in order).
    pub fn reduced_impedance(&self) -> StateSpace {
        let ports = expand(&self.retained_in_active());
        self.z_full.select(&ports, &ports)
    }

    /// Voltage angles of the retained buses from the power flow.
    pub fn retained_angles(&self, pf: &PowerFlowSolution) -> Vec<f64> {
        self.retained.iter().map(|&k| pf.voltages[k].arg()).collect()
    }
}

fn expand(buses: &[usize]) -> Vec<usize> {
    buses.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect()
}

fn submatrix(m: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Schur complement of a bus-block admittance onto `retained` (bus positions).
pub fn kron_reduce(y: &CMat, retained: &[usize], internal: &[usize], s: Complex64) -> Result<CMat> {
    let (e, i) = (expand(retained), expand(internal));
    let yee = submatrix(y, &e, &e);
    if i.is_empty() {
        return Ok(yee);
    }
    let yei = submatrix(y, &e, &i);
    let yie = submatrix(y, &i, &e);
    let yii = submatrix(y, &i, &i);
    let lu = yii.lu();
    let x = lu.solve(&yie).ok_or(Error::SingularInterior { s })?;
    if !x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::SingularInterior { s });
    }
    Ok(yee - yei * x)
}

/// State-space impedance of the element set: states are the capacitor
/// voltages of active buses and the currents of every inductive element.
fn impedance_realization(elements: &[Element], active: &[usize], n_bus: usize, omega0: f64) -> Result<StateSpace> {
    let pos: HashMap<usize, usize> = active.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let na = active.len();
    let rot = linalg::rot90();
    let mut cap = vec![0.0; n_bus];
    let mut g_static = RMat::zeros(2 * na, 2 * na);
    // (incidence rows for the two bus ends, r, l)
    let mut inductive: Vec<(RMat, f64, f64)> = Vec::new();
    let stamp = |g: &mut RMat, a: usize, b: usize, val: f64| {
        g[(2 * a, 2 * b)] += val;
        g[(2 * a + 1, 2 * b + 1)] += val;
    };
    for e in elements {
        match *e {
            Element::Capacitor { bus, c } => cap[bus] += c,
            Element::Conductance { bus, g } => {
                if let Some(&a) = pos.get(&bus) {
                    stamp(&mut g_static, a, a, g);
                }
            }
            Element::Branch { from, to, r, l, tap } => {
                if l == 0.0 {
                    if r == 0.0 {
                        return Err(Error::DegenerateBranch { from, to });
                    }
                    let g = 1.0 / r;
                    let (pf, pt) = (pos.get(&from).copied(), pos.get(&to).copied());
                    if let Some(a) = pf {
                        stamp(&mut g_static, a, a, g / (tap * tap));
                    }
                    if let Some(b) = pt {
                        stamp(&mut g_static, b, b, g);
                    }
                    if let (Some(a), Some(b)) = (pf, pt) {
                        stamp(&mut g_static, a, b, -g / tap);
                        stamp(&mut g_static, b, a, -g / tap);
                    }
                } else {
                    let mut k = RMat::zeros(2 * na, 2);
                    if let Some(&a) = pos.get(&from) {
                        k[(2 * a, 0)] = 1.0 / tap;
                        k[(2 * a + 1, 1)] = 1.0 / tap;
                    }
                    if let Some(&b) = pos.get(&to) {
                        k[(2 * b, 0)] = -1.0;
                        k[(2 * b + 1, 1)] = -1.0;
                    }
                    inductive.push((k, r, l));
                }
            }
            Element::Inductor { bus, r, l } => {
                if l == 0.0 {
                    if let Some(&a) = pos.get(&bus) {
                        stamp(&mut g_static, a, a, 1.0 / r);
                    }
                } else {
                    let mut k = RMat::zeros(2 * na, 2);
                    if let Some(&a) = pos.get(&bus) {
                        k[(2 * a, 0)] = 1.0;
                        k[(2 * a + 1, 1)] = 1.0;
                    }
                    inductive.push((k, r, l));
                }
            }
        }
    }
    for (i, &k) in active.iter().enumerate() {
        if cap[k] <= 0.0 {
            let _ = i;
            return Err(Error::MissingCapacitance(k));
        }
    }
    let nl = inductive.len();
    let n = 2 * na + 2 * nl;
    let mut a = RMat::zeros(n, n);
    let mut b = RMat::zeros(n, 2 * na);
    let mut c = RMat::zeros(2 * na, n);
    let cinv: Vec<f64> = active.iter().flat_map(|&k| [1.0 / cap[k], 1.0 / cap[k]]).collect();
    for i in 0..2 * na {
        b[(i, i)] = cinv[i];
        c[(i, i)] = 1.0;
        for j in 0..2 * na {
            a[(i, j)] -= cinv[i] * g_static[(i, j)];
        }
    }
    for (i, &k) in active.iter().enumerate() {
        // -ω₀ Rot90 on each voltage block
        let _ = k;
        for r in 0..2 {
            for cc in 0..2 {
                a[(2 * i + r, 2 * i + cc)] -= omega0 * rot[(r, cc)];
            }
        }
    }
    for (e, (k, r, l)) in inductive.iter().enumerate() {
        let off = 2 * na + 2 * e;
        // C v' = ... − K i
        for i in 0..2 * na {
            for j in 0..2 {
                a[(i, off + j)] -= cinv[i] * k[(i, j)];
            }
        }
        // L i' = Kᵀ v − R i − ω₀ L Rot90 i
        for j in 0..2 {
            for i in 0..2 * na {
                a[(off + j, i)] += k[(i, j)] / l;
            }
            a[(off + j, off + j)] -= r / l;
            for cc in 0..2 {
                a[(off + j, off + cc)] -= omega0 * rot[(j, cc)];
            }
        }
    }
    StateSpace::new(a, b, c, RMat::zeros(2 * na, 2 * na))
}

/// Block rotation `R(δ) Y R(δ)ᵀ` with one angle per 2x2 bus block.
pub fn to_global_frame(y: &CMat, angles: &[f64]) -> CMat {
    let r = linalg::to_complex(&linalg::block_diag(
        &angles.iter().map(|a| linalg::rotation(*a)).collect::<Vec<_>>(),
    ));
    &r * y * r.transpose()
}

pub fn to_global_frame_model(model: &StateSpace, angles: &[f64]) -> Result<StateSpace> {
    let r = linalg::block_diag(&angles.iter().map(|a| linalg::rotation(*a)).collect::<Vec<_>>());
    model.pre_gain(&r)?.post_gain(&r.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use std::f64::consts::PI;

    const W0: f64 = 2.0 * PI * 50.0;

    pub(crate) const IEEE14_BUSES: &str = include_str!("../data/ieee14/buses.csv");
    pub(crate) const IEEE14_BRANCHES: &str = include_str!("../data/ieee14/branches.csv");

    fn ieee14() -> NetworkData {
        NetworkData::new(
            parse_buses(IEEE14_BUSES.as_bytes()).unwrap(),
            parse_branches(IEEE14_BRANCHES.as_bytes()).unwrap(),
        )
        .unwrap()
    }

    fn two_bus(r: f64, x: f64) -> NetworkData {
        NetworkData::new(
            vec![
                BusData { bus: 1, kind: BusKind::Slack, p_load: 0.0, q_load: 0.0, p_gen: 0.0, v_set: 1.0, g_shunt: 0.0, b_shunt: 0.0 },
                BusData { bus: 2, kind: BusKind::Pq, p_load: 0.5, q_load: 0.1, p_gen: 0.0, v_set: 1.0, g_shunt: 0.0, b_shunt: 0.0 },
            ],
            vec![BranchData { from: 1, to: 2, r, x, b: 0.0, tap: 0.0 }],
        )
        .unwrap()
    }

    #[test]
    fn branch_examples() {
        let y = branch_dq(1.0, 0.0, W0, c(0.0, 3.0)).unwrap();
        assert!(linalg::relative_error(&y, &CMat::identity(2, 2)) < 1e-15);
        let l = 0.1 / W0;
        let y = branch_dq(0.0, l, W0, c(0.0, 0.0)).unwrap();
        let expected = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)]) / c(W0 * l, 0.0);
        assert!(linalg::relative_error(&y, &expected) < 1e-14);
        assert!(matches!(branch_dq(0.0, 0.0, W0, c(0.0, 1.0)), Err(Error::DegenerateBranch { .. })));
    }

    #[test]
    fn branch_matches_complex_phasor() {
        let (r, l) = (0.02, 0.3 / W0);
        for w in [0.0, 1.0, 17.0, 300.0, 5000.0] {
            let y = branch_dq(r, l, W0, c(0.0, w)).unwrap();
            let z = c(1.0, 0.0) / c(r, (w + W0) * l);
            let got = c(0.0, 0.0) + y[(0, 0)] + linalg::J * y[(1, 0)];
            assert!((got - z).norm() < 1e-12 * z.norm());
        }
    }

    #[test]
    fn assembly_patterns() {
        let s = c(0.0, 5.0);
        let e = [Element::Branch { from: 0, to: 1, r: 0.1, l: 0.2 / W0, tap: 1.0 }];
        let y = assemble(&e, 2, W0, s).unwrap();
        let yb = branch_dq(0.1, 0.2 / W0, W0, s).unwrap();
        assert!(linalg::relative_error(&y.view((0, 0), (2, 2)).into_owned(), &yb) < 1e-15);
        assert!(linalg::relative_error(&y.view((0, 2), (2, 2)).into_owned(), &(-&yb)) < 1e-15);

        let star: Vec<Element> = (1..4).map(|k| Element::Branch { from: 0, to: k, r: 0.1, l: 0.2 / W0, tap: 1.0 }).collect();
        let y = assemble(&star, 4, W0, s).unwrap();
        assert!(linalg::relative_error(&y.view((0, 0), (2, 2)).into_owned(), &(&yb * c(3.0, 0.0))) < 1e-14);
    }

    #[test]
    fn disconnected_and_degenerate_data_rejected() {
        let mut d = two_bus(0.01, 0.1);
        d.buses.push(BusData { bus: 3, kind: BusKind::Pq, p_load: 0.0, q_load: 0.0, p_gen: 0.0, v_set: 1.0, g_shunt: 0.0, b_shunt: 0.0 });
        assert!(matches!(NetworkData::new(d.buses.clone(), d.branches.clone()), Err(Error::Disconnected(3))));
        let bad = vec![BranchData { from: 1, to: 2, r: 0.0, x: 0.0, b: 0.0, tap: 0.0 }];
        assert!(matches!(NetworkData::new(two_bus(0.1, 0.1).buses, bad), Err(Error::DegenerateBranch { .. })));
    }

    #[test]
    fn static_admittance_matches_textbook_ybus() {
        let data = ieee14();
        let model_y = assemble(&static_elements(&data, W0), data.buses.len(), W0, c(0.0, 0.0)).unwrap();
        // independent phasor assembly
        let n = data.buses.len();
        let mut yb = CMat::zeros(n, n);
        for br in &data.branches {
            let (f, t) = (br.from - 1, br.to - 1);
            let a = if br.tap == 0.0 { 1.0 } else { br.tap };
            let ys = c(1.0, 0.0) / c(br.r, br.x);
            let half = c(0.0, br.b / 2.0);
            yb[(f, f)] += (ys + half) / c(a * a, 0.0);
            yb[(t, t)] += ys + half;
            yb[(f, t)] -= ys / c(a, 0.0);
            yb[(t, f)] -= ys / c(a, 0.0);
        }
        yb[(8, 8)] += c(0.0, 0.19);
        for i in 0..n {
            for j in 0..n {
                let got = model_y[(2 * i, 2 * j)] + linalg::J * model_y[(2 * i + 1, 2 * j)];
                assert!((got - yb[(i, j)]).norm() < 1e-10 * (1.0 + yb[(i, j)].norm()), "({i},{j})");
                // block is a rotation-scaling
                assert!((model_y[(2 * i, 2 * j)] - model_y[(2 * i + 1, 2 * j + 1)]).norm() < 1e-10);
            }
        }
        // textbook entries
        assert!((yb[(0, 0)] - c(6.0250, -19.4471)).norm() < 1e-3);
        assert!((yb[(0, 1)] - c(-4.9991, 15.2631)).norm() < 1e-3);
        // reciprocity
        assert!(linalg::relative_error(&yb, &yb.transpose()) < 1e-15);
    }

    #[test]
    fn power_flow_converges_on_ieee14() {
        let data = ieee14();
        let pf = power_flow(&data).unwrap();
        // known solution of the standard case
        assert!((pf.voltages[3].norm() - 1.019).abs() < 2e-3);
        assert!((pf.voltages[3].arg().to_degrees() + 10.31).abs() < 0.05);
        assert!((pf.voltages[13].arg().to_degrees() + 16.03).abs() < 0.05);
        let slack = pf.generation(&data, 0);
        assert!((slack.re - 2.324).abs() < 2e-3);
    }

    #[test]
    fn power_flow_two_bus_balance() {
        let data = two_bus(0.02, 0.2);
        let pf = power_flow(&data).unwrap();
        let v = pf.voltages[1];
        let i = (pf.voltages[0] - v) / c(0.02, 0.2);
        let s_load = v * i.conj();
        assert!((s_load - c(0.5, 0.1)).norm() < 1e-9);
    }

    #[test]
    fn lossless_loop_is_marginal_without_floor() {
        let data = ieee14();
        let pf = power_flow(&data).unwrap();
        let net = NetworkModel::build(&data, &pf, &[2, 3, 6, 8], W0, 0.02).unwrap();
        assert!(!net.z_full.is_stable(1e-9).stable);
    }

    fn ieee14_model(retained: &[usize]) -> NetworkModel {
        let data = ieee14().with_resistance_floor(0.01);
        let pf = power_flow(&data).unwrap();
        NetworkModel::build(&data, &pf, retained, W0, 0.02).unwrap()
    }

    #[test]
    fn kron_reduction_is_exact() {
        let net = ieee14_model(&[2, 3, 6, 8]);
        let z = net.reduced_impedance();
        for k in 0..60 {
            let w = 2.0 * PI * 10f64.powf(-2.0 + 6.0 * k as f64 / 59.0);
            let s = c(0.0, w);
            let y_red = net.reduced_admittance(s).unwrap();
            // full solve with injections only at retained buses
            let y_act = net.active_admittance(s).unwrap();
            let z_full = linalg::inverse(&y_act).unwrap();
            let ports: Vec<usize> = net
                .retained
                .iter()
                .map(|k| net.active.iter().position(|a| a == k).unwrap())
                .flat_map(|p| [2 * p, 2 * p + 1])
                .collect();
            let z_ports = CMat::from_fn(8, 8, |i, j| z_full[(ports[i], ports[j])]);
            assert!(linalg::relative_error(&linalg::inverse(&z_ports).unwrap(), &y_red) < 1e-9);
            assert!(linalg::relative_error(&z.evaluate(s).unwrap(), &z_ports) < 1e-9);
        }
    }

    #[test]
    fn series_chain_reduction() {
        let s = c(0.0, 2.0);
        let e = [
            Element::Branch { from: 0, to: 1, r: 0.1, l: 0.2 / W0, tap: 1.0 },
            Element::Branch { from: 1, to: 2, r: 0.3, l: 0.1 / W0, tap: 1.0 },
        ];
        let y = assemble(&e, 3, W0, s).unwrap();
        let red = kron_reduce(&y, &[0, 2], &[1], s).unwrap();
        let y1 = branch_dq(0.1, 0.2 / W0, W0, s).unwrap();
        let y2 = branch_dq(0.3, 0.1 / W0, W0, s).unwrap();
        let series = linalg::inverse(&(linalg::inverse(&y1).unwrap() + linalg::inverse(&y2).unwrap())).unwrap();
        assert!(linalg::relative_error(&red.view((0, 0), (2, 2)).into_owned(), &series) < 1e-12);
        let same = kron_reduce(&y, &[0, 1, 2], &[], s).unwrap();
        assert_eq!(same, y);
    }

    #[test]
    fn network_is_stable_and_passive() {
        let net = ieee14_model(&[2, 3, 6, 8]);
        assert!(net.z_full.is_stable(0.0).stable);
        for k in 0..100 {
            let w = 2.0 * PI * 10f64.powf(-2.0 + 6.0 * k as f64 / 99.0);
            let y = net.reduced_admittance(c(0.0, w)).unwrap();
            let h = linalg::hermitian_eigenvalues(&linalg::hermitian_part(&y));
            assert!(h[0] >= -1e-10 * linalg::singular_values(&y)[0], "{w}: {}", h[0]);
        }
    }

    #[test]
    fn global_frame_rotation() {
        let y = CMat::from_fn(4, 4, |i, j| c(i as f64 + 0.5 * j as f64, (i * j) as f64));
        assert_eq!(to_global_frame(&y, &[0.0, 0.0]), y);
        let r = to_global_frame(&y, &[PI / 2.0, 0.0]);
        let rot = linalg::to_complex(&linalg::rotation(PI / 2.0));
        let blk = &rot * y.view((0, 0), (2, 2)) * rot.transpose();
        assert!(linalg::relative_error(&r.view((0, 0), (2, 2)).into_owned(), &blk) < 1e-15);
        let back = to_global_frame(&to_global_frame(&y, &[0.3, -1.2]), &[-0.3, 1.2]);
        assert!(linalg::relative_error(&back, &y) < 1e-12);
    }

    #[test]
    fn missing_capacitance_is_reported() {
        let data = two_bus(0.01, 0.1);
        let pf = power_flow(&data).unwrap();
        assert!(matches!(NetworkModel::build(&data, &pf, &[2], W0, 0.0), Err(Error::MissingCapacitance(_))));
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let bad = "bus,type,p_load\n1,slack,0\n2,pq,abc\n";
        match parse_buses(bad.as_bytes()) {
            Err(Error::Csv(msg)) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
