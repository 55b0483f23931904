//! Vector fields: the parsed [`FieldSpec`], the [`VectorField`] evaluation
//! contract shared with synthesized fields, jets, Lie derivatives and
//! Lipschitz estimates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::expr::{parse_components, seed_jets, Expr, Printer};
use crate::jet::Jet;
use crate::{Error, Result};

/// Highest derivative order accepted by [`eval_jet`] and [`lie_derivative`].
pub const MAX_ORDER: usize = 8;

/// Anything that can be evaluated as a (possibly time-dependent) vector field.
///
/// `eval_jets` receives jet-valued coordinates and time and must return
/// jet-valued components; this single entry point serves plain evaluation
/// (order-0 jets), Jacobians, higher jets and Taylor-mode flow expansions.
pub trait VectorField: Send + Sync {
    fn dimension(&self) -> usize;

    fn is_autonomous(&self) -> bool;

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    fn eval_jets(&self, x: &[Jet], t: &Jet) -> Result<Vec<Jet>>;

    /// Spatial Jacobian `∂X^i/∂x^j`.
    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let jet = eval_jet(self, x, t, 1)?;
        let n = self.dimension();
        Ok(DMatrix::from_fn(n, n, |i, j| jet.partial(i, &unit_exps(n + 1, j))))
    }
}

pub(crate) fn unit_exps(len: usize, i: usize) -> Vec<u8> {
    let mut e = vec![0u8; len];
    e[i] = 1;
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub dimension: usize,
    pub coords: Vec<String>,
    pub components: Vec<Expr>,
    pub parameters: BTreeMap<String, f64>,
    pub time_dependent: bool,
}

/// Default coordinate names: `x, y, z` up to three dimensions, `x1..xn` beyond.
pub fn default_coords(dimension: usize) -> Vec<String> {
    if dimension <= 3 {
        ["x", "y", "z"][..dimension].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=dimension).map(|i| format!("x{i}")).collect()
    }
}

/// Parses a field with default coordinate names and no parameters.
pub fn parse_field(source: &str, dimension: usize) -> Result<FieldSpec> {
    FieldSpec::parse("field", source, &default_coords(dimension), &BTreeMap::new())
}

impl FieldSpec {
    pub fn parse(
        name: &str,
        source: &str,
        coords: &[String],
        parameters: &BTreeMap<String, f64>,
    ) -> Result<FieldSpec> {
        let components = parse_components(source, coords, parameters)?;
        if components.len() != coords.len() {
            return Err(Error::Arity {
                expected: coords.len(),
                found: components.len(),
            });
        }
        let time_dependent = components.iter().any(Expr::uses_time);
        Ok(FieldSpec {
            name: name.to_string(),
            dimension: coords.len(),
            coords: coords.to_vec(),
            components,
            parameters: parameters.clone(),
            time_dependent,
        })
    }

    /// Source text that parses back to the same component trees.
    pub fn to_source(&self) -> String {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|e| {
                Printer {
                    expr: e,
                    coords: &self.coords,
                }
                .to_string()
            })
            .collect();
        format!("[{}]", parts.join(", "))
    }
}

impl VectorField for FieldSpec {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn is_autonomous(&self) -> bool {
        !self.time_dependent
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: x.len(),
            });
        }
        self.components.iter().map(|e| e.eval(x, t)).collect()
    }

    fn eval_jets(&self, x: &[Jet], t: &Jet) -> Result<Vec<Jet>> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: x.len(),
            });
        }
        self.components.iter().map(|e| e.eval_jet(x, t)).collect()
    }
}

/// Value and all mixed partials (space and time) of a field at a point.
///
/// Variables are ordered `x^1..x^n, t`.
#[derive(Debug, Clone)]
pub struct FieldJet {
    pub point: Vec<f64>,
    pub time: f64,
    pub order: usize,
    pub value: Vec<f64>,
    pub components: Vec<Jet>,
}

impl FieldJet {
    /// `∂^α X^component` for the multi-index `exps` over `(x^1..x^n, t)`.
    pub fn partial(&self, component: usize, exps: &[u8]) -> f64 {
        self.components[component].derivative(exps)
    }

    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.point.len();
        DMatrix::from_fn(n, n, |i, j| self.partial(i, &unit_exps(n + 1, j)))
    }
}

pub fn eval_jet<F: VectorField + ?Sized>(
    field: &F,
    point: &[f64],
    time: f64,
    order: usize,
) -> Result<FieldJet> {
    if order > MAX_ORDER {
        return Err(Error::OrderUnsupported {
            requested: order,
            max: MAX_ORDER,
        });
    }
    if point.len() != field.dimension() {
        return Err(Error::DimensionMismatch {
            expected: field.dimension(),
            found: point.len(),
        });
    }
    let (_, xs, t) = seed_jets(point, time, order);
    let components = field.eval_jets(&xs, &t)?;
    Ok(FieldJet {
        point: point.to_vec(),
        time,
        order,
        value: components.iter().map(Jet::value).collect(),
        components,
    })
}

/// Lie bracket `[h, v] = dv·h − dh·v` of two jet fields; lowers the order by one.
fn bracket(h: &[Jet], v: &[Jet]) -> Vec<Jet> {
    let n = v.len();
    let lower = v[0].order().saturating_sub(1);
    let h_low: Vec<Jet> = h.iter().map(|c| c.truncate(lower)).collect();
    let v_low: Vec<Jet> = v.iter().map(|c| c.truncate(lower)).collect();
    (0..n)
        .map(|i| {
            let mut acc = Jet::constant(h_low[0].layout(), 0.0);
            for j in 0..n {
                acc = acc + &h_low[j] * &v[i].partial(j) - &v_low[j] * &h[i].partial(j);
            }
            acc
        })
        .collect()
}

/// Iterated Lie derivative `L_{h_q} … L_{h_1} X` at `(point, time)`.
pub fn lie_derivative(
    x: &dyn VectorField,
    hs: &[&dyn VectorField],
    point: &[f64],
    time: f64,
) -> Result<Vec<f64>> {
    let n = x.dimension();
    for h in hs {
        if h.dimension() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: h.dimension(),
            });
        }
    }
    let q = hs.len();
    if q > MAX_ORDER {
        return Err(Error::OrderUnsupported {
            requested: q,
            max: MAX_ORDER,
        });
    }
    let (_, xs, t) = seed_jets(point, time, q);
    let mut v = x.eval_jets(&xs, &t)?;
    for (k, h) in hs.iter().enumerate() {
        let order = q - k;
        let hx: Vec<Jet> = xs.iter().map(|c| c.truncate(order)).collect();
        let hj = h.eval_jets(&hx, &t.truncate(order))?;
        v = bracket(&hj, &v);
    }
    Ok(v.iter().map(Jet::value).collect())
}

/// A constant vector field, used for the unit test-field families.
#[derive(Debug, Clone)]
pub struct ConstantField(pub Vec<f64>);

impl VectorField for ConstantField {
    fn dimension(&self) -> usize {
        self.0.len()
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn eval(&self, _x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
    fn eval_jets(&self, _x: &[Jet], t: &Jet) -> Result<Vec<Jet>> {
        Ok(self.0.iter().map(|&c| Jet::constant(t.layout(), c)).collect())
    }
}

/// Unit test fields: the chart basis followed by `random` seeded random unit directions.
pub fn unit_field_family(dimension: usize, random: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut out: Vec<Vec<f64>> = (0..dimension)
        .map(|i| {
            let mut e = vec![0.0; dimension];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random {
        let v: Vec<f64> = (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
        out.push(v.into_iter().map(|c| c / norm).collect());
    }
    out
}

/// Axis-aligned box in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Region { lo, hi }
    }

    /// Smallest box containing `points`, padded by `margin` on every side.
    pub fn bounding(points: &[Vec<f64>], margin: f64) -> Self {
        let n = points[0].len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in points {
            for i in 0..n {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Region {
            lo: lo.iter().map(|v| v - margin).collect(),
            hi: hi.iter().map(|v| v + margin).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.lo.len();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut k| {
                (0..n)
                    .map(|i| {
                        let idx = k % per_axis;
                        k /= per_axis;
                        let s = idx as f64 / (per_axis - 1) as f64;
                        self.lo[i] + s * (self.hi[i] - self.lo[i])
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub region: Region,
    /// `per_order[q]`: sup of the operator norm of the order-(q+1) spatial derivative tensor.
    pub per_order: Vec<f64>,
    pub l: f64,
    /// `3 Σ_j ‖∂/∂x^j‖` in the (orthonormal) chart.
    pub b: f64,
    pub sample_count: usize,
}

/// Spectral norm of an `n × m` matrix by 50 rounds of power iteration on `AᵀA`.
pub fn power_norm(a: &DMatrix<f64>) -> f64 {
    let m = a.ncols();
    if m == 0 || a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..50 {
        let av = a * &v;
        let w = a.transpose() * &av;
        let norm = w.norm();
        if norm == 0.0 {
            // start vector in the kernel; retry from a basis vector
            v = DVector::from_fn(m, |i, _| if i == 0 { 1.0 } else { 0.0 });
            continue;
        }
        sigma = av.norm();
        v = w / norm;
    }
    sigma.max((a * &v).norm())
}

/// Flattened `n × n^(q+1)` matrix of the spatial derivative tensor of order `q+1`.
fn derivative_matrix(jet: &FieldJet, q: usize) -> DMatrix<f64> {
    let n = jet.point.len();
    let k = q + 1;
    let cols = n.pow(k as u32);
    let mut exps = vec![0u8; n + 1];
    DMatrix::from_fn(n, cols, |i, mut c| {
        exps.iter_mut().for_each(|e| *e = 0);
        for _ in 0..k {
            exps[c % n] += 1;
            c /= n;
        }
        jet.partial(i, &exps)
    })
}

pub fn estimate_lipschitz(
    field: &dyn VectorField,
    region: &Region,
    order: usize,
    grid: usize,
) -> Result<LipschitzEstimate> {
    if grid < 2 {
        return Err(Error::Domain("grid needs at least 2 points per axis".into()));
    }
    if region.lo.iter().zip(&region.hi).any(|(l, h)| l > h) {
        return Err(Error::Domain("empty region".into()));
    }
    let n = field.dimension();
    let points = region.grid(grid);
    let mut per_order = vec![0.0f64; order + 1];
    for p in &points {
        let jet = eval_jet(field, p, 0.0, order + 1)?;
        for (q, slot) in per_order.iter_mut().enumerate() {
            *slot = slot.max(power_norm(&derivative_matrix(&jet, q)));
        }
    }
    let l = per_order.iter().cloned().fold(0.0, f64::max);
    Ok(LipschitzEstimate {
        region: region.clone(),
        per_order,
        l,
        b: 3.0 * n as f64,
        sample_count: points.len(),
    })
}
