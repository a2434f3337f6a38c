//! Contaminant source inversion with a mobile sensor.
//!
//! The sensor starts at `x_{0,p}` and moves by the design `d_k` before each
//! measurement; the observation is the plume concentration at the new
//! position at time `t_k`, with noise of standard deviation `σ (1 + |G|)`.
//! θ stacks the source location, then the width and the strength when those
//! are uncertain.
//!
//! Concentration is linear in the source strength, so every solve is done at
//! unit strength and scaled afterwards. Belief-grid likelihoods read from a
//! [`FieldBank`] of unit-strength fields precomputed at the lattice formed by
//! the evaluation grid's location/width axes.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fv::{fv_solve, Field, FvGridSpec, SourceParams, Velocity};
use super::surrogate::SurrogateModel;
use crate::error::{Error, Result};
use crate::inference::{linspace, BeliefGrid, NoiseModel, PriorComponent, PriorSpec};
use crate::problem::{
    BoundModel, CostFunction, ForwardModel, GridResolution, NodeCounts, ProblemSpec, RewardSpec,
    StageContext, TerminalReward,
};
use crate::state::{DesignConstraint, History, PhysicalState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceParam {
    Fixed(f64),
    Uncertain(PriorComponent),
}

impl SourceParam {
    fn is_uncertain(&self) -> bool {
        matches!(self, SourceParam::Uncertain(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseCost {
    /// `‖d‖²`
    SquaredNorm,
    /// `‖d‖ − factor · d·u(t_k)`
    WindAdjustedNorm { factor: f64 },
}

/// How concentrations are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Finite-volume solve for every sampled θ; grid likelihoods use solves
    /// at the lattice nodes.
    Fv,
    /// Multilinear interpolation in θ between lattice solves.
    Tabulated,
    /// Regression networks per experiment time.
    Surrogate,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fv" => Ok(Engine::Fv),
            "tabulated" => Ok(Engine::Tabulated),
            "surrogate" => Ok(Engine::Surrogate),
            other => Err(Error::Config(format!("unknown engine `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Solver and grids at full resolution.
    Paper,
    /// Coarse solver and grids for quick runs.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverProfile {
    pub dz: f64,
    pub dt: f64,
}

impl SolverProfile {
    pub const PAPER: SolverProfile = SolverProfile { dz: 0.01, dt: 5e-4 };
    pub const DESK: SolverProfile = SolverProfile { dz: 0.04, dt: 2e-3 };

    pub fn of(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::PAPER,
            Profile::Desk => Self::DESK,
        }
    }
}

/// One source-inversion setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    pub horizon: usize,
    pub location: [PriorComponent; 2],
    pub width: SourceParam,
    pub strength: SourceParam,
    /// The source is off for time steps whose midpoint precedes this.
    #[serde(default)]
    pub switch_on: f64,
    pub initial_position: [f64; 2],
    pub design: DesignConstraint,
    /// Square computational domain `[lo, hi]²`.
    pub domain: [f64; 2],
    /// Square containing every reachable sensor position.
    pub sensor_region: [f64; 2],
    pub experiment_times: Vec<f64>,
    pub velocity: Velocity,
    pub noise_sigma: f64,
    pub cost: CaseCost,
    pub cost_coeff: f64,
    pub solver: SolverProfile,
    pub grid: GridResolution,
}

const UNIT: PriorComponent = PriorComponent::Uniform { lo: 0.0, hi: 1.0 };
const RAMP: Velocity = Velocity::LinearRamp { rate: 10.0 / 0.2 };

impl CaseConfig {
    /// Static source switched on at `t = 0.16`, no wind.
    pub fn case1(profile: Profile) -> Self {
        Self {
            name: "source_case1".into(),
            horizon: 2,
            location: [UNIT, UNIT],
            width: SourceParam::Fixed(0.05),
            strength: SourceParam::Fixed(2.0),
            switch_on: 0.16,
            initial_position: [0.5, 0.5],
            design: DesignConstraint::Box {
                lo: vec![-0.25, -0.25],
                hi: vec![0.25, 0.25],
            },
            domain: [0.0, 1.0],
            sensor_region: [0.0, 1.0],
            experiment_times: vec![0.15, 0.32],
            velocity: Velocity::Zero,
            noise_sigma: 0.1,
            cost: CaseCost::SquaredNorm,
            cost_coeff: 0.5,
            solver: SolverProfile::of(profile),
            grid: match profile {
                Profile::Paper => GridResolution::uniform(50, 50),
                Profile::Desk => GridResolution::uniform(30, 30),
            },
        }
    }

    /// Constant source in a ramping wind, free movement.
    pub fn case2(profile: Profile) -> Self {
        Self {
            name: "source_case2".into(),
            horizon: 2,
            location: [UNIT, UNIT],
            width: SourceParam::Fixed(0.05),
            strength: SourceParam::Fixed(2.0),
            switch_on: 0.0,
            initial_position: [0.5, 0.5],
            design: DesignConstraint::Box {
                lo: vec![-0.25, -0.25],
                hi: vec![0.25, 0.25],
            },
            domain: [-1.0, 2.0],
            sensor_region: [0.0, 1.0],
            experiment_times: vec![0.05, 0.2],
            velocity: RAMP,
            noise_sigma: 0.05,
            cost: CaseCost::SquaredNorm,
            cost_coeff: 0.0,
            solver: SolverProfile::of(profile),
            grid: match profile {
                Profile::Paper => GridResolution::uniform(50, 50),
                Profile::Desk => GridResolution::uniform(20, 20),
            },
        }
    }

    /// Four experiments, uncertain width and strength, wind-aided movement cost.
    pub fn case3(profile: Profile) -> Self {
        Self {
            name: "source_case3".into(),
            horizon: 4,
            location: [UNIT, UNIT],
            width: SourceParam::Uncertain(PriorComponent::Uniform { lo: 0.02, hi: 0.1 }),
            strength: SourceParam::Uncertain(PriorComponent::Uniform { lo: 0.0, hi: 5.0 }),
            switch_on: 0.0,
            initial_position: [0.5, 0.5],
            design: DesignConstraint::PositionBox {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
            },
            domain: [-1.0, 2.0],
            sensor_region: [0.0, 1.0],
            experiment_times: vec![0.05, 0.1, 0.15, 0.2],
            velocity: RAMP,
            noise_sigma: 0.05,
            cost: CaseCost::WindAdjustedNorm {
                factor: 2f64.sqrt() / 40.0,
            },
            cost_coeff: 0.2,
            solver: SolverProfile::of(profile),
            grid: match profile {
                Profile::Paper => GridResolution::uniform(20, 50),
                Profile::Desk => GridResolution {
                    train: NodeCounts::PerDim(vec![8, 8, 4, 8]),
                    eval: NodeCounts::PerDim(vec![8, 8, 4, 8]),
                },
            },
        }
    }

    pub fn builtin(name: &str, profile: Profile) -> Option<Self> {
        match name {
            "source_case1" => Some(Self::case1(profile)),
            "source_case2" => Some(Self::case2(profile)),
            "source_case3" => Some(Self::case3(profile)),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let case: CaseConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        case.validate()?;
        Ok(case)
    }

    pub fn fv_grid(&self) -> FvGridSpec {
        FvGridSpec {
            lo: self.domain[0],
            hi: self.domain[1],
            dz: self.solver.dz,
            dt: self.solver.dt,
            velocity: self.velocity,
        }
    }

    pub fn prior(&self) -> PriorSpec {
        let mut c = self.location.to_vec();
        for p in [&self.width, &self.strength] {
            if let SourceParam::Uncertain(pc) = p {
                c.push(*pc);
            }
        }
        PriorSpec::new(c)
    }

    pub fn theta_dim(&self) -> usize {
        2 + self.width.is_uncertain() as usize + self.strength.is_uncertain() as usize
    }

    /// Leading θ entries that change the shape of the field (location and,
    /// if uncertain, width).
    pub fn shape_dim(&self) -> usize {
        2 + self.width.is_uncertain() as usize
    }

    fn width_of(&self, theta: &[f64]) -> f64 {
        match self.width {
            SourceParam::Fixed(w) => w,
            SourceParam::Uncertain(_) => theta[2],
        }
    }

    pub fn strength_of(&self, theta: &[f64]) -> f64 {
        match self.strength {
            SourceParam::Fixed(s) => s,
            SourceParam::Uncertain(_) => theta[self.shape_dim()],
        }
    }

    /// Source parameters for θ at unit strength.
    pub fn unit_source(&self, theta: &[f64]) -> SourceParams {
        SourceParams {
            x: theta[0],
            y: theta[1],
            width: self.width_of(theta),
            strength: 1.0,
            switch_on: self.switch_on,
        }
    }

    /// Source parameters for θ.
    pub fn source(&self, theta: &[f64]) -> SourceParams {
        SourceParams {
            strength: self.strength_of(theta),
            ..self.unit_source(theta)
        }
    }

    /// Wind velocity at each experiment time.
    pub fn stage_velocities(&self) -> Vec<Vec<f64>> {
        self.experiment_times
            .iter()
            .map(|&t| self.velocity.at(t).to_vec())
            .collect()
    }

    /// Lattice axes for the location/width dimensions, matching the
    /// evaluation grid.
    pub fn lattice_axes(&self) -> Result<Vec<Vec<f64>>> {
        let prior = self.prior();
        let counts = self.grid.eval.resolve(prior.dim())?;
        Ok(prior.components[..self.shape_dim()]
            .iter()
            .zip(&counts)
            .map(|(c, &n)| {
                let (lo, hi) = c.support();
                linspace(lo, hi, n)
            })
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.name)));
        if self.horizon == 0 || self.experiment_times.len() != self.horizon {
            return bad("one experiment time per stage is required".into());
        }
        if self.experiment_times.iter().any(|&t| !(t > 0.0))
            || self.experiment_times.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("experiment times must be positive and increasing".into());
        }
        if self.design.dim() != 2 {
            return bad("designs are two-dimensional displacements".into());
        }
        if !(self.noise_sigma > 0.0) || !(self.cost_coeff >= 0.0) {
            return bad("noise sigma must be positive and the cost coefficient nonnegative".into());
        }
        let [lo, hi] = self.domain;
        let [rlo, rhi] = self.sensor_region;
        if !(lo <= rlo && rlo < rhi && rhi <= hi) {
            return bad("sensor region must lie inside the domain".into());
        }
        let inside = |v: f64| v >= rlo - 1e-12 && v <= rhi + 1e-12;
        match &self.design {
            DesignConstraint::Box { lo: dlo, hi: dhi } => {
                for i in 0..2 {
                    let x = self.initial_position[i];
                    let n = self.horizon as f64;
                    if !inside(x + n * dlo[i].min(0.0)) || !inside(x + n * dhi[i].max(0.0)) {
                        return bad("reachable positions leave the sensor region".into());
                    }
                }
            }
            DesignConstraint::PositionBox { lo: plo, hi: phi } => {
                if !plo.iter().chain(phi).all(|&v| inside(v)) {
                    return bad("position box leaves the sensor region".into());
                }
            }
        }
        if !self.initial_position.iter().all(|&v| inside(v)) {
            return bad("initial position outside the sensor region".into());
        }
        match self.width {
            SourceParam::Fixed(w) if !(w > 0.0) => return bad("width must be positive".into()),
            SourceParam::Uncertain(c) if !(c.support().0 > 0.0) => {
                return bad("width prior must stay positive".into())
            }
            _ => {}
        }
        match self.strength {
            SourceParam::Fixed(s) if !(s >= 0.0) => return bad("strength must be nonnegative".into()),
            SourceParam::Uncertain(c) if !(c.support().0 >= 0.0) => {
                return bad("strength prior must stay nonnegative".into())
            }
            _ => {}
        }
        self.prior().validate()?;
        self.grid.train.resolve(self.theta_dim())?;
        self.grid.eval.resolve(self.theta_dim())?;
        let g = self.fv_grid();
        g.cells()?;
        g.check_stability(*self.experiment_times.last().expect("non-empty"))?;
        Ok(())
    }

    /// Builds the design problem; the returned spec owns a fresh model.
    pub fn problem(&self, engine: Engine) -> Result<ProblemSpec> {
        let model = SourceModel::new(self.clone(), engine)?;
        self.problem_with_model(Arc::new(model))
    }

    pub fn problem_with_model(&self, model: Arc<SourceModel>) -> Result<ProblemSpec> {
        self.validate()?;
        let cost = match self.cost {
            CaseCost::SquaredNorm => CostFunction::SquaredNorm,
            CaseCost::WindAdjustedNorm { factor } => CostFunction::WindAdjustedNorm {
                factor,
                velocities: self.stage_velocities(),
            },
        };
        let spec = ProblemSpec {
            name: self.name.clone(),
            horizon: self.horizon,
            prior: self.prior(),
            design: self.design.clone(),
            initial_position: PhysicalState(self.initial_position.to_vec()),
            noise: NoiseModel::new(self.noise_sigma, true),
            reward: RewardSpec {
                cost_coeff: self.cost_coeff,
                cost,
                terminal: TerminalReward::Kl,
            },
            experiment_times: self.experiment_times.clone(),
            grid: self.grid.clone(),
            model,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Multilinear interpolation corners `(flat index, weight)` on uniform axes.
fn lattice_corners(axes: &[Vec<f64>], theta: &[f64], out: &mut Vec<(usize, f64)>) {
    out.clear();
    out.push((0, 1.0));
    for (d, axis) in axes.iter().enumerate() {
        let n = axis.len();
        let h = (axis[n - 1] - axis[0]) / (n - 1) as f64;
        let f = (theta[d] - axis[0]) / h;
        let i = (f.floor().max(0.0) as usize).min(n - 2);
        let t = (f - i as f64).clamp(0.0, 1.0);
        let len = out.len();
        for c in 0..len {
            let (idx, w) = out[c];
            out[c] = (idx * n + i, w * (1.0 - t));
            out.push((idx * n + i + 1, w * t));
        }
        out.retain(|&(_, w)| w != 0.0);
    }
}

/// Unit-strength fields at every lattice node, restricted to the sensor region.
#[derive(Debug, Clone)]
pub struct FieldBank {
    axes: Vec<Vec<f64>>,
    region: [f64; 2],
    /// Window geometry shared by every stored field (values empty).
    window: Field,
    cells: usize,
    /// `values[k][node * cells + cell]`
    values: Vec<Vec<f64>>,
}

impl FieldBank {
    /// Fills the bank with `fields_at(node_theta)`, which returns one windowed
    /// field per experiment time.
    pub fn build<F>(case: &CaseConfig, axes: Vec<Vec<f64>>, fields_at: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<Field>> + Sync,
    {
        let nodes: usize = axes.iter().map(Vec::len).product();
        let node_theta = |mut l: usize| {
            let mut theta = vec![0.0; axes.len()];
            for d in (0..axes.len()).rev() {
                theta[d] = axes[d][l % axes[d].len()];
                l /= axes[d].len();
            }
            theta
        };
        let per_node: Vec<Vec<Field>> = (0..nodes)
            .into_par_iter()
            .map(|l| fields_at(&node_theta(l)))
            .collect::<Result<_>>()?;
        let times = case.experiment_times.len();
        let window = per_node
            .first()
            .and_then(|f| f.first())
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("empty lattice".into()))?;
        let cells = window.values.len();
        let mut values = vec![Vec::with_capacity(nodes * cells); times];
        for fields in &per_node {
            if fields.len() != times {
                return Err(Error::LengthMismatch {
                    what: "fields per node",
                    expected: times,
                    actual: fields.len(),
                });
            }
            for (k, f) in fields.iter().enumerate() {
                if f.values.len() != cells {
                    return Err(Error::ShapeMismatch("bank windows differ".into()));
                }
                values[k].extend_from_slice(&f.values);
            }
        }
        Ok(Self {
            axes,
            region: case.sensor_region,
            window: Field {
                values: Vec::new(),
                ..window
            },
            cells,
            values,
        })
    }

    /// Bank of finite-volume solves.
    pub fn from_fv(case: &CaseConfig) -> Result<Self> {
        let grid = case.fv_grid();
        Self::build(case, case.lattice_axes()?, |shape| {
            let mut theta = shape.to_vec();
            theta.resize(case.theta_dim(), 1.0);
            Ok(fv_solve(&case.unit_source(&theta), &case.experiment_times, &grid)?
                .iter()
                .map(|f| region_window(f, case.sensor_region))
                .collect())
        })
    }

    /// Bank filled by evaluating a surrogate at the window's cell centers.
    pub fn from_surrogate(case: &CaseConfig, sur: &SurrogateModel) -> Result<Self> {
        let template = region_window(
            &Field {
                time: 0.0,
                domain_lo: case.domain[0],
                domain_hi: case.domain[1],
                dz: case.solver.dz,
                i0: 0,
                j0: 0,
                nx: case.fv_grid().cells()?,
                ny: case.fv_grid().cells()?,
                values: vec![0.0; case.fv_grid().cells()?.pow(2)],
            },
            case.sensor_region,
        );
        Self::build(case, case.lattice_axes()?, |shape| {
            (0..case.experiment_times.len())
                .map(|k| {
                    let mut f = template.clone();
                    f.time = case.experiment_times[k];
                    let centers: Vec<[f64; 2]> = (0..f.ny)
                        .flat_map(|j| (0..f.nx).map(move |i| (i, j)))
                        .map(|(i, j)| {
                            [
                                f.domain_lo + (f.i0 + i) as f64 * f.dz + 0.5 * f.dz,
                                f.domain_lo + (f.j0 + j) as f64 * f.dz + 0.5 * f.dz,
                            ]
                        })
                        .collect();
                    f.values = sur.predict_unit_many(k, &centers, shape)?;
                    Ok(f)
                })
                .collect()
        })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn num_nodes(&self) -> usize {
        self.values.first().map_or(0, |v| v.len() / self.cells.max(1))
    }

    fn locate(&self, pos: &[f64]) -> Result<(usize, usize, f64, f64)> {
        let [lo, hi] = self.region;
        let tol = 1e-9;
        if pos.len() != 2 || pos.iter().any(|&p| !(p >= lo - tol && p <= hi + tol)) {
            return Err(Error::OutOfDomain {
                x: pos.first().copied().unwrap_or(f64::NAN),
                y: pos.get(1).copied().unwrap_or(f64::NAN),
            });
        }
        self.window.locate(pos[0], pos[1])
    }

    #[inline]
    fn node_value(&self, k: usize, node: usize, at: (usize, usize, f64, f64)) -> f64 {
        let (i, j, tx, ty) = at;
        let w = &self.window;
        let base = &self.values[k][node * self.cells..(node + 1) * self.cells];
        let i1 = (i + 1).min(w.nx - 1);
        let j1 = (j + 1).min(w.ny - 1);
        let v = |i: usize, j: usize| base[j * w.nx + i];
        (1.0 - ty) * ((1.0 - tx) * v(i, j) + tx * v(i1, j)) + ty * ((1.0 - tx) * v(i, j1) + tx * v(i1, j1))
    }

    /// Unit-strength concentration at `pos` for every lattice node.
    pub fn values_at(&self, k: usize, pos: &[f64]) -> Result<Vec<f64>> {
        let at = self.locate(pos)?;
        Ok((0..self.num_nodes()).map(|l| self.node_value(k, l, at)).collect())
    }

    /// Unit-strength concentration for an arbitrary shape vector.
    pub fn interpolate(&self, k: usize, pos: &[f64], shape: &[f64]) -> Result<f64> {
        let at = self.locate(pos)?;
        let mut corners = Vec::new();
        lattice_corners(&self.axes, shape, &mut corners);
        Ok(corners.iter().map(|&(l, w)| w * self.node_value(k, l, at)).sum())
    }
}

/// Cells whose centers bracket `region`, with one extra cell on each side.
fn region_window(f: &Field, region: [f64; 2]) -> Field {
    let n = f.nx as isize;
    let idx = |p: f64| (p - f.domain_lo) / f.dz - 0.5;
    let lo = ((idx(region[0]).floor() as isize) - 1).clamp(0, n - 1) as usize;
    let hi = ((idx(region[1]).ceil() as isize) + 1).clamp(0, n - 1) as usize;
    f.window(lo, lo, hi - lo + 1, hi - lo + 1)
}

/// Convection-diffusion forward model.
pub struct SourceModel {
    case: CaseConfig,
    engine: Engine,
    bank: OnceLock<Arc<FieldBank>>,
    surrogate: Option<Arc<SurrogateModel>>,
}

impl std::fmt::Debug for SourceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceModel")
            .field("case", &self.case.name)
            .field("engine", &self.engine)
            .field("bank_ready", &self.bank.get().is_some())
            .finish()
    }
}

impl SourceModel {
    pub fn new(case: CaseConfig, engine: Engine) -> Result<Self> {
        if engine == Engine::Surrogate {
            return Err(Error::Config("the surrogate engine needs a trained surrogate".into()));
        }
        case.validate()?;
        Ok(Self {
            case,
            engine,
            bank: OnceLock::new(),
            surrogate: None,
        })
    }

    pub fn with_surrogate(case: CaseConfig, surrogate: Arc<SurrogateModel>) -> Result<Self> {
        case.validate()?;
        surrogate.check_case(&case)?;
        Ok(Self {
            case,
            engine: Engine::Surrogate,
            bank: OnceLock::new(),
            surrogate: Some(surrogate),
        })
    }

    /// Reuses an existing bank (built for the same case).
    pub fn with_bank(self, bank: Arc<FieldBank>) -> Self {
        let _ = self.bank.set(bank);
        self
    }

    pub fn case(&self) -> &CaseConfig {
        &self.case
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    /// The field bank, built on first use.
    pub fn bank(&self) -> Result<Arc<FieldBank>> {
        if let Some(b) = self.bank.get() {
            return Ok(b.clone());
        }
        let built = match (&self.engine, &self.surrogate) {
            (Engine::Surrogate, Some(s)) => FieldBank::from_surrogate(&self.case, s)?,
            _ => FieldBank::from_fv(&self.case)?,
        };
        let _ = self.bank.set(Arc::new(built));
        Ok(self.bank.get().expect("just set").clone())
    }

    fn check_stage(&self, ctx: &StageContext<'_>) -> Result<()> {
        if ctx.stage >= self.case.experiment_times.len() {
            return Err(Error::HorizonExceeded {
                horizon: self.case.horizon,
            });
        }
        if ctx.position.len() != 2 {
            return Err(Error::ShapeMismatch("sensor position must be 2-D".into()));
        }
        Ok(())
    }

    fn gated_off(&self, k: usize) -> bool {
        self.case.experiment_times[k] < self.case.switch_on
    }
}

struct BoundFv<'a> {
    model: &'a SourceModel,
    fields: Vec<Field>,
}

struct BoundTabulated<'a> {
    model: &'a SourceModel,
    bank: Arc<FieldBank>,
    corners: Vec<(usize, f64)>,
    strength: f64,
}

struct BoundSurrogate<'a> {
    model: &'a SourceModel,
    shape: Vec<f64>,
    strength: f64,
}

impl BoundModel for BoundFv<'_> {
    fn predict(&mut self, ctx: &StageContext<'_>) -> Result<Vec<f64>> {
        self.model.check_stage(ctx)?;
        let [lo, hi] = self.model.case.sensor_region;
        let p = ctx.position;
        if p.iter().any(|&v| !(v >= lo - 1e-9 && v <= hi + 1e-9)) {
            return Err(Error::OutOfDomain { x: p[0], y: p[1] });
        }
        Ok(vec![self.fields[ctx.stage].sample(p[0], p[1])?])
    }
}

impl BoundModel for BoundTabulated<'_> {
    fn predict(&mut self, ctx: &StageContext<'_>) -> Result<Vec<f64>> {
        self.model.check_stage(ctx)?;
        let at = self.bank.locate(ctx.position)?;
        let unit: f64 = self
            .corners
            .iter()
            .map(|&(l, w)| w * self.bank.node_value(ctx.stage, l, at))
            .sum();
        Ok(vec![self.strength * unit])
    }
}

impl BoundModel for BoundSurrogate<'_> {
    fn predict(&mut self, ctx: &StageContext<'_>) -> Result<Vec<f64>> {
        self.model.check_stage(ctx)?;
        if self.model.gated_off(ctx.stage) {
            return Ok(vec![0.0]);
        }
        let [lo, hi] = self.model.case.sensor_region;
        let p = ctx.position;
        if p.iter().any(|&v| !(v >= lo - 1e-9 && v <= hi + 1e-9)) {
            return Err(Error::OutOfDomain { x: p[0], y: p[1] });
        }
        let sur = self.model.surrogate.as_ref().expect("surrogate engine");
        Ok(vec![self.strength * sur.predict_unit(ctx.stage, p[0], p[1], &self.shape)?])
    }
}

impl ForwardModel for SourceModel {
    fn bind<'a>(&'a self, theta: &[f64]) -> Result<Box<dyn BoundModel + 'a>> {
        if theta.len() != self.case.theta_dim() {
            return Err(Error::LengthMismatch {
                what: "theta",
                expected: self.case.theta_dim(),
                actual: theta.len(),
            });
        }
        let shape = theta[..self.case.shape_dim()].to_vec();
        let strength = self.case.strength_of(theta);
        match self.engine {
            Engine::Fv => {
                let fields = fv_solve(&self.case.source(theta), &self.case.experiment_times, &self.case.fv_grid())?
                    .iter()
                    .map(|f| region_window(f, self.case.sensor_region))
                    .collect();
                Ok(Box::new(BoundFv { model: self, fields }))
            }
            Engine::Tabulated => {
                let bank = self.bank()?;
                let mut corners = Vec::new();
                lattice_corners(bank.axes(), &shape, &mut corners);
                Ok(Box::new(BoundTabulated {
                    model: self,
                    bank,
                    corners,
                    strength,
                }))
            }
            Engine::Surrogate => Ok(Box::new(BoundSurrogate {
                model: self,
                shape,
                strength,
            })),
        }
    }

    fn predict_on_grid(&self, grid: &BeliefGrid, ctx: &StageContext<'_>) -> Result<Vec<f64>> {
        self.check_stage(ctx)?;
        let bank = self.bank()?;
        let unit = bank.values_at(ctx.stage, ctx.position)?;
        let sd = self.case.shape_dim();
        let axes = grid.axes();
        let aligned = axes[..sd].iter().zip(bank.axes()).all(|(a, b)| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
        });
        // Unit-strength value for each combination of the grid's shape axes.
        let shape_vals: Vec<f64> = if aligned {
            unit
        } else {
            let counts: Vec<usize> = axes[..sd].iter().map(Vec::len).collect();
            let total: usize = counts.iter().product();
            let mut corners = Vec::new();
            let mut theta = vec![0.0; sd];
            (0..total)
                .map(|mut l| {
                    for d in (0..sd).rev() {
                        theta[d] = axes[d][l % counts[d]];
                        l /= counts[d];
                    }
                    lattice_corners(bank.axes(), &theta, &mut corners);
                    corners.iter().map(|&(i, w)| w * unit[i]).sum()
                })
                .collect()
        };
        let strengths: Vec<f64> = match self.case.strength {
            SourceParam::Fixed(s) => vec![s],
            SourceParam::Uncertain(_) => axes[sd].clone(),
        };
        let ns = strengths.len();
        let mut out = Vec::with_capacity(shape_vals.len() * ns);
        for v in shape_vals {
            out.extend(strengths.iter().map(|s| s * v));
        }
        Ok(out)
    }

    fn prepare_grid(&self, _grid: &BeliefGrid) -> Result<()> {
        self.bank().map(|_| ())
    }
}

/// Concentration seen after moving by `d` from the position implied by `history`.
pub fn cd_forward(model: &SourceModel, theta: &[f64], d: &[f64], history: &History) -> Result<f64> {
    let case = model.case();
    let mut pos = case.initial_position.to_vec();
    for prev in history.designs() {
        pos.iter_mut().zip(prev).for_each(|(p, d)| *p += d);
    }
    pos.iter_mut().zip(d).for_each(|(p, d)| *p += d);
    let ctx = StageContext {
        stage: history.len(),
        design: d,
        position: &pos,
        history,
    };
    Ok(model.bind(theta)?.predict(&ctx)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_cases_validate() {
        for p in [Profile::Paper, Profile::Desk] {
            for c in [CaseConfig::case1(p), CaseConfig::case2(p), CaseConfig::case3(p)] {
                c.validate().unwrap();
                c.problem(Engine::Tabulated).unwrap();
            }
        }
    }

    #[test]
    fn case_table_values() {
        let c3 = CaseConfig::case3(Profile::Paper);
        assert_eq!(c3.theta_dim(), 4);
        assert_eq!(c3.stage_velocities()[0], vec![2.5, 2.5]);
        let p = c3.problem(Engine::Tabulated).unwrap();
        assert!((p.stage_cost_reward(0, &[0.1, 0.1]) + 0.02475).abs() < 1e-5);
        let c1 = CaseConfig::case1(Profile::Paper);
        let p = c1.problem(Engine::Tabulated).unwrap();
        assert!((p.stage_cost_reward(0, &[0.2, 0.1]) + 0.025).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = CaseConfig::case3(Profile::Desk);
        let s = serde_json::to_string(&c).unwrap();
        let back: CaseConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["typo"] = serde_json::json!(1);
        assert!(serde_json::from_value::<CaseConfig>(v).is_err());
    }

    #[test]
    fn unreachable_region_rejected() {
        let mut c = CaseConfig::case2(Profile::Desk);
        c.initial_position = [0.9, 0.5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn corners_hit_nodes_and_interpolate() {
        let axes = vec![linspace(0.0, 1.0, 5), linspace(0.0, 2.0, 3)];
        let mut c = Vec::new();
        lattice_corners(&axes, &[0.25, 1.0], &mut c);
        assert_eq!(c, vec![(4, 1.0)]);
        lattice_corners(&axes, &[0.125, 0.5], &mut c);
        let total: f64 = c.iter().map(|x| x.1).sum();
        assert_eq!(c.len(), 4);
        assert!((total - 1.0).abs() < 1e-15);
    }

    fn small_case1() -> CaseConfig {
        let mut c = CaseConfig::case1(Profile::Desk);
        c.grid = GridResolution::uniform(6, 6);
        c
    }

    #[test]
    fn case1_gate_zero_at_first_time() {
        let c = small_case1();
        for engine in [Engine::Fv, Engine::Tabulated] {
            let m = SourceModel::new(c.clone(), engine).unwrap();
            for theta in [[0.1, 0.9], [0.5, 0.5], [0.73, 0.21]] {
                let g = cd_forward(&m, &theta, &[0.1, -0.2], &History::new(2)).unwrap();
                assert_eq!(g, 0.0);
            }
        }
    }

    #[test]
    fn engines_agree_at_lattice_nodes() {
        let c = small_case1();
        let fv = SourceModel::new(c.clone(), Engine::Fv).unwrap();
        let tab = SourceModel::new(c.clone(), Engine::Tabulated).unwrap();
        let h = History::new(2).append(&[0.1, 0.1], &[0.0]).unwrap();
        let theta = [0.6, 0.4];
        let a = cd_forward(&fv, &theta, &[0.05, -0.1], &h).unwrap();
        let b = cd_forward(&tab, &theta, &[0.05, -0.1], &h).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn grid_predictions_match_binding() {
        let c = small_case1();
        let p = c.problem(Engine::Tabulated).unwrap();
        let grid = p.belief_grid(true).unwrap();
        let h = History::new(2).append(&[0.1, 0.1], &[0.0]).unwrap();
        let pos = [0.55, 0.7];
        let ctx = StageContext {
            stage: 1,
            design: &[-0.05, 0.1],
            position: &pos,
            history: &h,
        };
        let preds = p.model.predict_on_grid(&grid, &ctx).unwrap();
        for i in [0, 7, 20, 35] {
            let direct = p.model.bind(&grid.node(i)).unwrap().predict(&ctx).unwrap()[0];
            assert!((preds[i] - direct).abs() < 1e-12);
        }
        // a coarser grid interpolates in θ
        let coarse = BeliefGrid::from_prior(&p.prior, 4).unwrap();
        let preds = p.model.predict_on_grid(&coarse, &ctx).unwrap();
        for i in [0, 5, 15] {
            let direct = p.model.bind(&coarse.node(i)).unwrap().predict(&ctx).unwrap()[0];
            assert!((preds[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn plume_center_positive_and_out_of_domain() {
        let c = small_case1();
        let m = SourceModel::new(c, Engine::Fv).unwrap();
        let h = History::new(2).append(&[0.0, 0.0], &[0.0]).unwrap();
        assert!(cd_forward(&m, &[0.5, 0.5], &[0.0, 0.0], &h).unwrap() > 0.0);
        let far = History::new(2).append(&[0.4, 0.4], &[0.0]).unwrap();
        assert!(matches!(
            cd_forward(&m, &[0.5, 0.5], &[0.3, 0.0], &far),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn strength_scales_linearly() {
        let mut c = CaseConfig::case3(Profile::Desk);
        c.grid = GridResolution {
            train: NodeCounts::PerDim(vec![3, 3, 2, 3]),
            eval: NodeCounts::PerDim(vec![3, 3, 2, 3]),
        };
        let m = SourceModel::new(c, Engine::Tabulated).unwrap();
        let h = History::new(4);
        let a = cd_forward(&m, &[0.4, 0.6, 0.05, 1.0], &[0.0, 0.1], &h).unwrap();
        let b = cd_forward(&m, &[0.4, 0.6, 0.05, 3.0], &[0.0, 0.1], &h).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }
}
