//! Built-in systems, addressable by name from scenario files.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::field::{default_coords, FieldSpec};
use crate::geometry::ChartedManifold;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub dimension: usize,
    /// `euclidean` or `flat_torus`; torus periods are in `torus_periods`.
    pub manifold: &'static str,
    pub torus_periods: Option<Vec<f64>>,
    pub source: &'static str,
    pub parameters: BTreeMap<String, f64>,
    /// A point on (or near) an interesting orbit, used by the catalog checks.
    pub sample_point: Vec<f64>,
}

impl CatalogEntry {
    pub fn manifold(&self) -> ChartedManifold {
        match &self.torus_periods {
            Some(p) => ChartedManifold::flat_torus(p.clone()),
            None => ChartedManifold::euclidean(self.dimension),
        }
    }

    /// Parses the source with the default parameters overridden by `params`.
    /// Unknown parameter names are rejected.
    pub fn field(&self, params: &BTreeMap<String, f64>) -> Result<FieldSpec> {
        let mut all = self.parameters.clone();
        for (k, v) in params {
            if !all.contains_key(k) {
                return Err(Error::Schema(format!("system `{}` has no parameter `{k}`", self.name)));
            }
            all.insert(k.clone(), *v);
        }
        FieldSpec::parse(self.name, self.source, &default_coords(self.dimension), &all)
    }
}

fn params(list: &[(&str, f64)]) -> BTreeMap<String, f64> {
    list.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "rotation2d",
            description: "rigid rotation of the plane; every orbit is a circle of period 2π",
            dimension: 2,
            manifold: "euclidean",
            torus_periods: None,
            source: "[-y, x]",
            parameters: BTreeMap::new(),
            sample_point: vec![1.0, 0.0],
        },
        CatalogEntry {
            name: "torus_irrational",
            description: "constant irrational-slope flow on the unit 2-torus",
            dimension: 2,
            manifold: "flat_torus",
            torus_periods: Some(vec![1.0, 1.0]),
            source: "[1, 1.41421356]",
            parameters: BTreeMap::new(),
            sample_point: vec![0.0, 0.0],
        },
        CatalogEntry {
            name: "lorenz",
            description: "Lorenz system at the classical parameters",
            dimension: 3,
            manifold: "euclidean",
            torus_periods: None,
            source: "[sigma*(y - x), x*(rho - z) - y, x*y - beta*z]",
            parameters: params(&[("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)]),
            sample_point: vec![-13.7636, -19.5788, 27.0],
        },
        CatalogEntry {
            name: "vanderpol",
            description: "Van der Pol oscillator",
            dimension: 2,
            manifold: "euclidean",
            torus_periods: None,
            source: "[y, mu*(1 - x^2)*y - x]",
            parameters: params(&[("mu", 1.0)]),
            sample_point: vec![2.0, 0.0],
        },
        CatalogEntry {
            name: "pendulum",
            description: "undamped pendulum; separatrices through (±π, 0)",
            dimension: 2,
            manifold: "euclidean",
            torus_periods: None,
            source: "[y, -sin(x)]",
            parameters: BTreeMap::new(),
            sample_point: vec![0.0, 1.0],
        },
        CatalogEntry {
            name: "limit_cycle_r3",
            description: "r' = r − r³, θ' = 1: attracting unit cycle with multiplier e^{−4π}",
            dimension: 2,
            manifold: "euclidean",
            torus_periods: None,
            source: "[x - y - x*(x^2 + y^2), x + y - y*(x^2 + y^2)]",
            parameters: BTreeMap::new(),
            sample_point: vec![1.0, 0.0],
        },
        CatalogEntry {
            name: "linear_skew_mu",
            description: "unit limit cycle times z' = (ln μ / 2π) z: section multipliers {μ, e^{−4π}}",
            dimension: 3,
            manifold: "euclidean",
            torus_periods: None,
            source: "[x - y - x*(x^2 + y^2), x + y - y*(x^2 + y^2), log(mu)/(2*pi)*z]",
            parameters: params(&[("mu", 0.9)]),
            sample_point: vec![1.0, 0.0, 0.0],
        },
    ]
}

pub fn lookup(name: &str) -> Result<CatalogEntry> {
    catalog()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Schema(format!("unknown catalog system `{name}`")))
}
