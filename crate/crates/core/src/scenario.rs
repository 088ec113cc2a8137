//! Scenario configuration (TOML) and assembly of the interconnection.
//!
//! ```toml
//! name = "infbus_stable"
//! [network]
//! buses = "../data/infbus/buses.csv"      # or inline [[network.bus]] tables
//! branches = "../data/infbus/branches.csv"
//! [converter_defaults]                    # any GfmParameters field
//! damping = 0.5
//! [[converter]]
//! bus = 2
//! inertia = 0.03                        # per-converter overrides
//! [frame]
//! kind = "blended"                        # rectangular | power-polar | blended | naive-blended
//! wc_hz = 2.0
//! weight = "va-ref"                       # identity | va-ref
//! [grid]
//! spec = "log:0.01:10000:400"
//! refine = true
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::converter::{build_converter, ConverterAdmittance, GfmParameters, OperatingPoint};
use crate::criteria::{self, FrequencyGrid, Interconnection, SweepOptions};
use crate::error::{Error, Result};
use crate::network::{self, BranchData, BusData, BusKind, NetworkData, NetworkModel, PowerFlowSolution};
use crate::transforms::{FrameKind, TransformSet, Weight};

pub const DEFAULT_WC_HZ: f64 = 2.0;
pub const DEFAULT_CAPACITANCE_FLOOR: f64 = 0.02;
pub const DEFAULT_RESISTANCE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// CSV path, relative to the config file.
    pub buses: Option<PathBuf>,
    pub branches: Option<PathBuf>,
    #[serde(default, rename = "bus")]
    pub inline_buses: Vec<BusData>,
    #[serde(default, rename = "branch")]
    pub inline_branches: Vec<BranchData>,
    /// Edits applied to branches loaded from any source.
    #[serde(default, rename = "branch_update")]
    pub branch_updates: Vec<BranchUpdate>,
    #[serde(default, rename = "bus_update")]
    pub bus_updates: Vec<BusUpdate>,
    /// Minimum shunt susceptance (p.u. at ω₀) at every non-stiff bus.
    #[serde(default = "default_cap_floor")]
    pub capacitance_floor: f64,
    /// Minimum branch `R/X`.
    #[serde(default = "default_res_floor")]
    pub resistance_floor: f64,
}

/// Replaces the listed fields of every branch joining `from` and `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchUpdate {
    pub from: usize,
    pub to: usize,
    pub r: Option<f64>,
    pub x: Option<f64>,
    pub b: Option<f64>,
}

impl BranchUpdate {
    fn apply(&self, branches: &mut [BranchData]) -> Result<()> {
        let mut hit = false;
        for br in branches.iter_mut() {
            if (br.from, br.to) == (self.from, self.to) || (br.to, br.from) == (self.from, self.to) {
                hit = true;
                br.r = self.r.unwrap_or(br.r);
                br.x = self.x.unwrap_or(br.x);
                br.b = self.b.unwrap_or(br.b);
            }
        }
        if hit {
            Ok(())
        } else {
            Err(Error::Config(format!("branch_update: no branch {}-{}", self.from, self.to)))
        }
    }
}

/// Replaces the listed load or shunt fields of one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusUpdate {
    pub bus: usize,
    pub p_load: Option<f64>,
    pub q_load: Option<f64>,
    pub g_shunt: Option<f64>,
    pub b_shunt: Option<f64>,
}

impl BusUpdate {
    fn apply(&self, buses: &mut [BusData]) -> Result<()> {
        let b = buses
            .iter_mut()
            .find(|b| b.bus == self.bus)
            .ok_or_else(|| Error::Config(format!("bus_update: no bus {}", self.bus)))?;
        b.p_load = self.p_load.unwrap_or(b.p_load);
        b.q_load = self.q_load.unwrap_or(b.q_load);
        b.g_shunt = self.g_shunt.unwrap_or(b.g_shunt);
        b.b_shunt = self.b_shunt.unwrap_or(b.b_shunt);
        Ok(())
    }
}

fn default_cap_floor() -> f64 {
    DEFAULT_CAPACITANCE_FLOOR
}

fn default_res_floor() -> f64 {
    DEFAULT_RESISTANCE_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterConfig {
    pub bus: usize,
    /// Parameter overrides; unknown keys are rejected when merged.
    #[serde(flatten)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightChoice {
    Identity,
    #[default]
    VaRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    #[serde(default = "default_kind")]
    pub kind: FrameKind,
    #[serde(default = "default_wc")]
    pub wc_hz: f64,
    #[serde(default)]
    pub weight: WeightChoice,
    /// Reference virtual admittance for the weight; defaults to the
    /// converter defaults.
    pub weight_r_v: Option<f64>,
    pub weight_l_v: Option<f64>,
}

fn default_kind() -> FrameKind {
    FrameKind::Blended
}

fn default_wc() -> f64 {
    DEFAULT_WC_HZ
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { kind: default_kind(), wc_hz: default_wc(), weight: WeightChoice::default(), weight_r_v: None, weight_l_v: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid_spec")]
    pub spec: String,
    #[serde(default = "yes")]
    pub refine: bool,
}

fn default_grid_spec() -> String {
    "log:0.01:10000:400".into()
}

fn yes() -> bool {
    true
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { spec: default_grid_spec(), refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub network: NetworkConfig,
    #[serde(default)]
    pub converter_defaults: toml::Table,
    #[serde(default, rename = "converter")]
    pub converters: Vec<ConverterConfig>,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Parameters of converter `k`: defaults overlaid with its own table.
    pub fn parameters(&self, k: usize) -> Result<GfmParameters> {
        let mut table = self.converter_defaults.clone();
        for (key, v) in &self.converters[k].params {
            table.insert(key.clone(), v.clone());
        }
        let p: GfmParameters = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("converter at bus {}: {e}", self.converters[k].bus)))?;
        p.validate()?;
        Ok(p)
    }

    pub fn default_parameters(&self) -> Result<GfmParameters> {
        toml::Value::Table(self.converter_defaults.clone())
            .try_into::<GfmParameters>()
            .map_err(|e| Error::Config(format!("converter_defaults: {e}")))
    }

    fn network_data(&self, base: &Path) -> Result<NetworkData> {
        let n = &self.network;
        let open = |p: &PathBuf| {
            let full = base.join(p);
            std::fs::File::open(&full).map_err(|e| Error::Config(format!("{}: {e}", full.display())))
        };
        let mut buses = n.inline_buses.clone();
        if let Some(p) = &n.buses {
            buses.extend(network::parse_buses(open(p)?)?);
        }
        let mut branches = n.inline_branches.clone();
        if let Some(p) = &n.branches {
            branches.extend(network::parse_branches(open(p)?)?);
        }
        for u in &n.bus_updates {
            u.apply(&mut buses)?;
        }
        for u in &n.branch_updates {
            u.apply(&mut branches)?;
        }
        if !(n.capacitance_floor >= 0.0 && n.resistance_floor >= 0.0) {
            return Err(Error::Config("network floors must be non-negative".into()));
        }
        Ok(NetworkData::new(buses, branches)?.with_resistance_floor(n.resistance_floor))
    }

    pub fn build(&self, base: &Path) -> Result<Scenario> {
        let mut data = self.network_data(base)?;
        let params = (0..self.converters.len()).map(|k| self.parameters(k)).collect::<Result<Vec<_>>>()?;
        let defaults = self.default_parameters()?;
        let omega0 = defaults.omega0;
        let mut bus_ids = Vec::new();
        for (c, p) in self.converters.iter().zip(&params) {
            if (p.omega0 - omega0).abs() > 1e-9 * omega0 {
                return Err(Error::Config(format!("converter at bus {}: omega0 differs from the network", c.bus)));
            }
            if bus_ids.contains(&c.bus) {
                return Err(Error::Config(format!("two converters at bus {}", c.bus)));
            }
            let k = data.position(c.bus)?;
            let b = &mut data.buses[k];
            if b.kind == BusKind::Slack {
                return Err(Error::Config(format!("bus {} is stiff and cannot host a converter", c.bus)));
            }
            b.kind = BusKind::Pv;
            b.p_gen = p.power_ref;
            b.v_set = p.voltage_ref;
            bus_ids.push(c.bus);
        }
        // buses marked PV without a converter are treated as PQ generators
        for b in &mut data.buses {
            if b.kind == BusKind::Pv && !bus_ids.contains(&b.bus) {
                b.kind = BusKind::Pq;
            }
        }
        let pf = network::power_flow(&data)?;
        let net = NetworkModel::build(&data, &pf, &bus_ids, omega0, self.network.capacitance_floor)?;
        let mut converters = Vec::new();
        let mut local = Vec::new();
        let mut global_ops = Vec::new();
        let mut models = Vec::new();
        for (c, p) in self.converters.iter().zip(&params) {
            let k = data.position(c.bus)?;
            let v = pf.voltages[k];
            let s_gen = pf.generation(&data, k);
            // current drawn from the bus (load convention)
            let i = -(s_gen / v).conj();
            let op = OperatingPoint::new(v.re, v.im, i.re, i.im)?;
            let (op_local, angle) = op.canonical();
            let conv = build_converter(p, &op_local)?;
            models.push(network::to_global_frame_model(&conv.y_frame, &[angle])?);
            converters.push(conv);
            local.push((op_local, angle));
            global_ops.push(op);
        }
        let grid = FrequencyGrid::parse(&self.grid.spec)?;
        Ok(Scenario {
            name: self.name.clone(),
            config: self.clone(),
            data,
            power_flow: pf,
            converters,
            local_frames: local,
            interconnection: Interconnection { bus_ids, converters: models, operating_points: global_ops, network: net },
            grid,
            reference: defaults,
        })
    }
}

/// Assembled scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub config: ScenarioConfig,
    pub data: NetworkData,
    pub power_flow: PowerFlowSolution,
    /// Local-frame converter models (`V_q0 = 0`).
    pub converters: Vec<ConverterAdmittance>,
    /// Local operating point and frame angle per converter.
    pub local_frames: Vec<(OperatingPoint, f64)>,
    pub interconnection: Interconnection,
    pub grid: FrequencyGrid,
    /// Converter defaults; the reference virtual admittance for the weight.
    pub reference: GfmParameters,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let (cfg, base) = ScenarioConfig::load(path)?;
        cfg.build(&base)
    }

    pub fn weight(&self) -> Weight {
        let f = &self.config.frame;
        match f.weight {
            WeightChoice::Identity => Weight::Identity,
            WeightChoice::VaRef => {
                let mut p = self.reference.clone();
                p.r_v = f.weight_r_v.unwrap_or(p.r_v);
                p.l_v = f.weight_l_v.unwrap_or(p.l_v);
                Weight::virtual_impedance(&p)
            }
        }
    }

    /// Transform set of the configured frame, optionally overridden.
    pub fn transform_set(&self, kind: Option<FrameKind>, wc_hz: Option<f64>) -> Result<TransformSet> {
        let kind = kind.unwrap_or(self.config.frame.kind);
        let wc = 2.0 * PI * wc_hz.unwrap_or(self.config.frame.wc_hz);
        let ops = &self.interconnection.operating_points;
        match kind {
            FrameKind::Rectangular => Ok(TransformSet::rectangular(ops.len())),
            FrameKind::PowerPolar => TransformSet::power_polar(ops),
            FrameKind::Blended => TransformSet::blended(ops, wc, &vec![self.weight(); ops.len()]),
            FrameKind::NaiveBlended => TransformSet::naive_blended(ops, wc),
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions { refine: self.config.grid.refine }
    }

    pub fn certify(&self, t: &TransformSet) -> Result<criteria::CertificateReport> {
        criteria::certify(&self.interconnection, t, &self.grid, self.sweep_options())
    }

    pub fn ground_truth(&self) -> Result<criteria::GroundTruth> {
        criteria::ground_truth(&self.interconnection)
    }

    /// Bus voltage of converter `k` from the power flow.
    pub fn converter_voltage(&self, k: usize) -> Result<Complex64> {
        Ok(self.power_flow.voltages[self.data.position(self.interconnection.bus_ids[k])?])
    }
}
