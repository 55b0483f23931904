use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::section::{eigenvalues, return_linearization, spectral_basis};
use crate::closing::ClosedOrbit;
use crate::field::{estimate_lipschitz, Region, VectorField};
use crate::flow::integrate;
use crate::geometry::ChartedManifold;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    #[serde(rename = "L")]
    pub l: f64,
    pub initial_distance: f64,
    pub horizon: f64,
    /// `max_t dis(φ_t p, φ_t ω) / (e^{Lt} dis(p, ω))`.
    pub max_ratio: f64,
    pub t_at_max: f64,
    /// `e^{LT}`, the finite constant of the distance estimate.
    pub bound_factor: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Samples the Gronwall ratio for the pair `(p, ω)` on `[0, horizon]`; `L`
/// is the sup of `‖dX‖` over a grid on the box containing both trajectories.
pub fn gronwall_check(
    field: &dyn VectorField,
    man: &ChartedManifold,
    p: &[f64],
    omega: &[f64],
    horizon: f64,
) -> Result<GronwallReport> {
    let d0 = man.distance(p, omega);
    if !(d0 > 0.0) {
        return Err(Error::Domain("the two start points coincide".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon {horizon} must be positive")));
    }
    let a = integrate(field, man, p, (0.0, horizon))?;
    let b = integrate(field, man, omega, (0.0, horizon))?;
    let samples = 2000;
    let times: Vec<f64> = (0..=samples).map(|k| horizon * k as f64 / samples as f64).collect();
    let pa: Vec<Vec<f64>> = times.iter().map(|&t| a.eval(t)).collect();
    let pb: Vec<Vec<f64>> = times.iter().map(|&t| b.eval(t)).collect();
    let mut all = a.solution.nodes().iter().map(|&t| a.eval(t)).collect::<Vec<_>>();
    all.extend(b.solution.nodes().iter().map(|&t| b.eval(t)));
    all.extend(pa.iter().cloned());
    all.extend(pb.iter().cloned());
    let region = Region::bounding(&all, 0.0);
    let l = estimate_lipschitz(field, &region, 0, 9)?.per_order[0];
    let (mut max_ratio, mut t_at_max) = (0.0f64, 0.0);
    for ((t, x), y) in times.iter().zip(&pa).zip(&pb) {
        let ratio = man.distance(x, y) / ((l * t).exp() * d0);
        if ratio > max_ratio {
            max_ratio = ratio;
            t_at_max = *t;
        }
    }
    Ok(GronwallReport {
        l,
        initial_distance: d0,
        horizon,
        max_ratio,
        t_at_max,
        bound_factor: (l * horizon).exp(),
        samples: times.len(),
        pass: max_ratio <= 1.01,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    /// `dis(p_i, ω)` for each orbit's base point.
    pub distances: Vec<f64>,
    pub stable_dims: Vec<usize>,
    /// Largest principal angle between `E^s(p_i)` and `E^s(p_{i+1})`, both
    /// transported to `ω`.
    pub angles: Vec<f64>,
    /// Angles do not increase along the family.
    pub monotone: bool,
}

/// `E^s` of the linearized return along each orbit of the family, compared
/// at `ω`. The orbits are near-returns of `field`, so the splitting is the
/// one of `dφ_T(p_i)` on the section through `p_i`, not of an exact cycle.
pub fn splitting_continuity(
    field: &dyn VectorField,
    man: &ChartedManifold,
    family: &[&ClosedOrbit],
    omega: &[f64],
) -> Result<SplittingReport> {
    if family.len() < 3 {
        return Err(Error::InsufficientFamily { needed: 3, found: family.len() });
    }
    let mut distances = Vec::new();
    let mut bases: Vec<DMatrix<f64>> = Vec::new();
    let g = man.metric(omega);
    for orbit in family {
        let p = orbit.point(0.0);
        distances.push(man.distance(&p, omega));
        let (section, pm, _, _) = return_linearization(field, man, &p, orbit.t_anchor, orbit.t_anchor + orbit.period)?;
        let stable: Vec<_> = eigenvalues(&pm).into_iter().filter(|l| l.modulus() < 1.0).collect();
        let q = section.basis_matrix() * spectral_basis(&pm, &stable);
        let cols: Vec<DVector<f64>> = (0..q.ncols())
            .map(|j| {
                let v: Vec<f64> = q.column(j).iter().copied().collect();
                man.transport_between(&p, omega, &v).map(DVector::from_vec)
            })
            .collect::<Result<_>>()?;
        bases.push(g_orthonormal(&g, &cols));
    }
    if distances.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("family distances to ω must decrease".into()));
    }
    let angles: Vec<f64> = bases.windows(2).map(|w| max_principal_angle(&g, &w[0], &w[1])).collect();
    let monotone = angles.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(SplittingReport { distances, stable_dims: bases.iter().map(|b| b.ncols()).collect(), angles, monotone })
}

fn g_orthonormal(g: &DMatrix<f64>, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for c in cols {
        let mut v = c.clone();
        for u in &out {
            let k = (u.transpose() * g * &v)[0];
            v -= u * k;
        }
        let norm = (v.transpose() * g * &v)[0].sqrt();
        out.push(v / norm);
    }
    let n = g.nrows();
    if out.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&out)
}

fn max_principal_angle(g: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    // sin θ_max = ‖(I − A Aᵀ G) B‖, accurate for small angles
    let r = b - a * (a.transpose() * g * b);
    let s2 = (r.transpose() * g * &r).symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
    s2.max(0.0).sqrt().min(1.0).asin()
}
