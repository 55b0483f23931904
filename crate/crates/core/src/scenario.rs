//! Scenario files: a versioned TOML tree validated before any computation.
//!
//! ```toml
//! schema = 1
//! name = "rotation_close"
//! pipeline = "verify"
//! seed = 7
//!
//! [manifold]
//! kind = "euclidean"
//! dimension = 2
//!
//! [field]
//! system = "rotation2d"
//!
//! [orbit]
//! x0 = [1.0, 0.0]
//! alpha_max = 1e-3
//! horizon = 8.0
//! t_min = 1.0
//! return_offset = 1e-4
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::field::{default_coords, FieldSpec};
use crate::geometry::ChartedManifold;
use crate::perturbation::Mode;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Close,
    Perturb,
    Verify,
    Monodromy,
    Adjust,
    Homoclinic,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Close => "close",
            Pipeline::Perturb => "perturb",
            Pipeline::Verify => "verify",
            Pipeline::Monodromy => "monodromy",
            Pipeline::Adjust => "adjust",
            Pipeline::Homoclinic => "homoclinic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    Euclidean { dimension: usize },
    FlatTorus { periods: Vec<f64> },
    Sphere2 { radius: f64 },
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<ChartedManifold> {
        let man = match self {
            ManifoldSpec::Euclidean { dimension } => ChartedManifold::euclidean(*dimension),
            ManifoldSpec::FlatTorus { periods } => ChartedManifold::flat_torus(periods.clone()),
            ManifoldSpec::Sphere2 { radius } => ChartedManifold::sphere2(*radius),
        };
        man.validate().map_err(|e| Error::Schema(format!("manifold: {e}")))?;
        Ok(man)
    }
}

/// Either a catalog `system` or an explicit `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSource {
    pub system: Option<String>,
    pub source: Option<String>,
    pub coords: Option<Vec<String>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitParams {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub t_anchor: f64,
    pub alpha_max: f64,
    pub horizon: f64,
    pub t_min: f64,
    /// Shortens the selected return time, turning an exact return into a
    /// near-return at distance about `speed · offset`.
    #[serde(default)]
    pub return_offset: f64,
    #[serde(default = "default_r")]
    pub r: usize,
    pub window: Option<f64>,
    /// Tube radius; absent means automatic.
    pub epsilon: Option<f64>,
}

fn default_r() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbParams {
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Random unit fields added to the coordinate fields in the test family.
    #[serde(default = "default_random_fields")]
    pub random_fields: usize,
    /// Outside points checked for `Y = X` bitwise.
    #[serde(default = "default_support_samples")]
    pub support_samples: usize,
}

impl Default for PerturbParams {
    fn default() -> Self {
        PerturbParams {
            modes: default_modes(),
            amplitude: 1.0,
            samples: default_samples(),
            random_fields: default_random_fields(),
            support_samples: default_support_samples(),
        }
    }
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Nonautonomous, Mode::Autonomous]
}
fn one() -> f64 {
    1.0
}
fn default_samples() -> usize {
    2000
}
fn default_random_fields() -> usize {
    8
}
fn default_support_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonodromyParams {
    pub point: Vec<f64>,
    pub period: f64,
    /// Newton-refine `(point, period)` to a periodic orbit first.
    #[serde(default)]
    pub refine: bool,
    #[serde(default)]
    pub t0: f64,
    pub delta_req: Option<f64>,
    /// Expected multiplier moduli in descending order, compared with
    /// relative tolerance `tolerances.multiplier`.
    pub expect_moduli: Option<Vec<f64>>,
    /// Fail if the Liouville defect exceeds this.
    pub liouville_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustParams {
    /// Ambient direction at the section anchor selecting the multiplier.
    pub target: Vec<f64>,
    #[serde(default = "half")]
    pub window: f64,
    pub epsilon: Option<f64>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomoclinicParams {
    /// The slow point is the slowest orbit node within `hint_radius` of this.
    pub hint: Vec<f64>,
    #[serde(default = "default_hint_radius")]
    pub hint_radius: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "default_slow_fraction")]
    pub slow_fraction: f64,
    /// Time after which forward and backward convergence is measured.
    #[serde(default = "default_convergence_time")]
    pub convergence_time: f64,
}

fn default_hint_radius() -> f64 {
    0.2
}
fn default_slow_fraction() -> f64 {
    0.05
}
fn default_convergence_time() -> f64 {
    50.0
}

/// Assertion limits. `--tol` replaces the headline one of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub endpoint: f64,
    pub closure_position: f64,
    pub closure_derivative: f64,
    pub multiplier: f64,
    pub return_time: f64,
    pub convergence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            endpoint: 1e-8,
            closure_position: 1e-6,
            closure_derivative: 1e-5,
            multiplier: 1e-6,
            return_time: 1e-8,
            convergence: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub manifold: ManifoldSpec,
    pub field: FieldSource,
    pub orbit: Option<OrbitParams>,
    pub perturb: Option<PerturbParams>,
    pub monodromy: Option<MonodromyParams>,
    pub adjust: Option<AdjustParams>,
    pub homoclinic: Option<HomoclinicParams>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// Command-line overrides applied on top of a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub r: Option<usize>,
}

fn require<'a, T>(section: &'a Option<T>, name: &str, pipeline: Pipeline) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Schema(format!("pipeline `{}` needs a [{name}] table", pipeline.name())))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(r) = o.r {
            match self.orbit.as_mut() {
                Some(orbit) => orbit.r = r,
                None => return Err(Error::Schema("--r needs an [orbit] table".into())),
            }
        }
        if let Some(tol) = o.tol {
            if !(tol > 0.0) {
                return Err(Error::Schema(format!("--tol {tol} must be positive")));
            }
            let t = &mut self.tolerances;
            match self.pipeline {
                Pipeline::Close | Pipeline::Perturb => t.endpoint = tol,
                Pipeline::Verify => t.closure_position = tol,
                Pipeline::Monodromy | Pipeline::Adjust => t.multiplier = tol,
                Pipeline::Homoclinic => t.convergence = tol,
            }
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Schema(format!("schema version {} (supported: {SCHEMA_VERSION})", self.schema)));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Schema(format!("invalid scenario name `{}`", self.name)));
        }
        let man = self.manifold.build()?;
        let n = man.dimension;
        let field = self.field()?;
        if field.dimension != n {
            return Err(Error::Schema(format!("field dimension {} on a {n}-manifold", field.dimension)));
        }
        let p = self.pipeline;
        let dim = |what: &str, v: &[f64]| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::Schema(format!("{what} has {} entries, expected {n}", v.len())))
            }
        };
        match p {
            Pipeline::Close | Pipeline::Perturb | Pipeline::Verify | Pipeline::Homoclinic => {
                let o = require(&self.orbit, "orbit", p)?;
                dim("orbit.x0", &o.x0)?;
                if !(o.alpha_max > 0.0 && o.t_min > 0.0 && o.t_min < o.horizon) {
                    return Err(Error::Schema("orbit needs alpha_max > 0 and 0 < t_min < horizon".into()));
                }
                if o.r == 0 || o.r > 4 {
                    return Err(Error::Schema(format!("orbit.r = {} outside 1..=4", o.r)));
                }
                if !(o.return_offset >= 0.0) {
                    return Err(Error::Schema("orbit.return_offset must be non-negative".into()));
                }
            }
            Pipeline::Monodromy | Pipeline::Adjust => {
                let m = require(&self.monodromy, "monodromy", p)?;
                dim("monodromy.point", &m.point)?;
                if !(m.period > 0.0) {
                    return Err(Error::Schema("monodromy.period must be positive".into()));
                }
                if p == Pipeline::Adjust && m.t0 != 0.0 {
                    return Err(Error::Schema("the adjust pipeline anchors the section at t0 = 0".into()));
                }
            }
        }
        if p == Pipeline::Adjust {
            dim("adjust.target", &require(&self.adjust, "adjust", p)?.target)?;
        }
        if p == Pipeline::Homoclinic {
            dim("homoclinic.hint", &require(&self.homoclinic, "homoclinic", p)?.hint)?;
        }
        if let Some(pp) = &self.perturb {
            if pp.modes.is_empty() || pp.modes.contains(&Mode::Homoclinic) {
                return Err(Error::Schema("perturb.modes must list nonautonomous and/or autonomous".into()));
            }
            if pp.samples < 1000 {
                return Err(Error::Schema("perturb.samples must be at least 1000".into()));
            }
        }
        Ok(())
    }

    pub fn manifold(&self) -> Result<ChartedManifold> {
        self.manifold.build()
    }

    pub fn field(&self) -> Result<FieldSpec> {
        let f = &self.field;
        let parsed = match (&f.system, &f.source) {
            (Some(name), None) => {
                if f.coords.is_some() {
                    return Err(Error::Schema("field.coords only applies to an explicit source".into()));
                }
                catalog::lookup(name)?.field(&f.params)
            }
            (None, Some(src)) => {
                let coords = match &f.coords {
                    Some(c) => c.clone(),
                    None => default_coords(self.manifold.build()?.dimension),
                };
                FieldSpec::parse(&self.name, src, &coords, &f.params)
            }
            _ => return Err(Error::Schema("field needs exactly one of `system` and `source`".into())),
        };
        parsed.map_err(|e| match e {
            Error::Schema(_) => e,
            other => Error::Schema(format!("field: {other}")),
        })
    }
}
