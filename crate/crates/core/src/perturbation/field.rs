use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::bump::{make_bump, BranchWeights, BumpProfile};
use crate::closing::{Branch, FlowBox, Projection};
use crate::field::VectorField;
use crate::jet::{layout, Jet};
use crate::{Error, Result};

/// Depth of the slow-down well: `λ(u) = u² / (u² + c ρ(|u|))`.
const SLOW_DEPTH: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nonautonomous,
    Autonomous,
    Homoclinic,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Nonautonomous => "nonautonomous",
            Mode::Autonomous => "autonomous",
            Mode::Homoclinic => "homoclinic",
        }
    }
}

/// Data of the time change `ξ_t = f_{p(t)}` that stalls the orbit at `y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Homoclinic {
    pub y: Vec<f64>,
    /// Orbit parameter of `y`.
    pub sigma0: f64,
    /// Half-width of the slow-down, in orbit time.
    pub tau: f64,
    pub speed: f64,
    pub threshold: f64,
    /// `max |p^(q)|` for `q = 1..=r` measured on a grid.
    pub time_change_bounds: Vec<f64>,
    profile: BumpProfile,
}

impl Homoclinic {
    /// Speed factor `p'` as a jet in the normalized offset `u = (σ − σ0)/τ`.
    fn lambda(&self, u: &Jet) -> Result<Jet> {
        let u2 = u * u;
        let rho = self.profile.of_squared(&u2);
        let den = &u2 + &rho.scale(SLOW_DEPTH);
        &u2 / &den
    }
}

/// The perturbed field `Y`, equal to the base field outside the flow box.
pub struct PerturbedField {
    pub mode: Mode,
    base: Arc<dyn VectorField>,
    pub flowbox: Arc<FlowBox>,
    pub bump: BumpProfile,
    pub weights: Option<BranchWeights>,
    /// `L` in `ρ(√(d² + L² (t − t_x)²))`; nonautonomous mode only.
    pub time_scale: f64,
    pub homoclinic: Option<Homoclinic>,
}

impl std::fmt::Debug for PerturbedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbedField")
            .field("mode", &self.mode)
            .field("epsilon", &self.bump.epsilon)
            .field("time_scale", &self.time_scale)
            .finish_non_exhaustive()
    }
}

/// Jets of the foot point `f(t_x(x))` and related quantities.
struct Foot {
    tau: Jet,
    point: Vec<Jet>,
    velocity: Vec<Jet>,
    /// `x − f(t_x)` in the covering chart.
    offset: Vec<Jet>,
}

fn check_bump(flowbox: &FlowBox, bump: &BumpProfile) -> Result<()> {
    if bump.epsilon > flowbox.epsilon * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "bump radius {} exceeds the flow box radius {}",
            bump.epsilon, flowbox.epsilon
        )));
    }
    if bump.order < flowbox.orbit.order {
        return Err(Error::Domain(format!(
            "bump order {} below the orbit order {}",
            bump.order, flowbox.orbit.order
        )));
    }
    Ok(())
}

pub fn perturb_nonautonomous(
    base: Arc<dyn VectorField>,
    flowbox: Arc<FlowBox>,
    bump: BumpProfile,
) -> Result<PerturbedField> {
    check_bump(&flowbox, &bump)?;
    if !flowbox.overlaps.is_empty() {
        return Err(Error::OverlapPresent(flowbox.overlaps.len()));
    }
    let orbit = &flowbox.orbit;
    // the temporal support must close up before |t − t_x| reaches T/2
    let time_scale = orbit.v_max.max(4.0 * bump.epsilon / orbit.period);
    Ok(PerturbedField { mode: Mode::Nonautonomous, base, flowbox, bump, weights: None, time_scale, homoclinic: None })
}

pub fn perturb_autonomous(
    base: Arc<dyn VectorField>,
    flowbox: Arc<FlowBox>,
    bump: BumpProfile,
) -> Result<PerturbedField> {
    check_bump(&flowbox, &bump)?;
    let weights = BranchWeights::new(bump.clone())?;
    Ok(PerturbedField {
        mode: Mode::Autonomous,
        base,
        flowbox,
        bump,
        weights: Some(weights),
        time_scale: 0.0,
        homoclinic: None,
    })
}

/// Stalls the orbit at `y_slow` so that it becomes an equilibrium with the
/// two arcs of the orbit as its incoming and outgoing branches.
pub fn perturb_homoclinic(
    base: Arc<dyn VectorField>,
    flowbox: Arc<FlowBox>,
    y_slow: &[f64],
    tau: f64,
    bump: BumpProfile,
    slow_fraction: f64,
) -> Result<PerturbedField> {
    check_bump(&flowbox, &bump)?;
    let orbit = flowbox.orbit.clone();
    let t_y = orbit.t_anchor;
    let xv = base.eval(y_slow, t_y)?;
    let speed = orbit.manifold.norm(y_slow, &xv);
    let threshold = slow_fraction * orbit.v_max;
    if speed > threshold {
        return Err(Error::NotSlowEnough { speed, threshold });
    }
    let foot = match flowbox.project(y_slow) {
        Projection::Inside { branches } => nearest(&branches).clone(),
        Projection::Outside => return Err(Error::BranchConstruction("y_slow lies outside the flow box".into())),
    };
    if foot.distance > 1e-6 * flowbox.epsilon {
        return Err(Error::BranchConstruction(format!("y_slow is {} away from the orbit", foot.distance)));
    }
    let sigma0 = foot.t;
    if !(tau > 0.0 && 2.0 * tau < orbit.period) {
        return Err(Error::BranchConstruction(format!("slow-down half-width {tau} must lie in (0, T/2)")));
    }
    let profile = make_bump(1.0, 1.0, bump.order)?;
    let mut h = Homoclinic {
        y: y_slow.to_vec(),
        sigma0,
        tau,
        speed,
        threshold,
        time_change_bounds: Vec::new(),
        profile,
    };
    h.time_change_bounds = time_change_bounds(&h, bump.order)?;
    if let Some(q) = h.time_change_bounds.iter().position(|m| *m > 1.0 + tau) {
        return Err(Error::BranchConstruction(format!(
            "time change derivative of order {} is {} > 1 + τ",
            q + 1,
            h.time_change_bounds[q]
        )));
    }
    let weights = BranchWeights::new(bump.clone())?;
    Ok(PerturbedField {
        mode: Mode::Homoclinic,
        base,
        flowbox,
        bump,
        weights: Some(weights),
        time_scale: 0.0,
        homoclinic: Some(h),
    })
}

/// `max |p^(q)(t)|`, `q = 1..=r`, for `p' = λ((p − σ0)/τ)`, on a grid of `u`.
fn time_change_bounds(h: &Homoclinic, r: usize) -> Result<Vec<f64>> {
    let r = r.max(1);
    let lay = layout(1, r);
    let mut out = vec![0.0f64; r];
    for k in 0..=4000 {
        let u = -1.2 + 2.4 * k as f64 / 4000.0;
        let uj = Jet::variable(&lay, 0, u);
        let lam = h.lambda(&uj)?;
        // p^(q+1) = (λ/τ · d/du)^q λ
        let mut a = lam.clone();
        for slot in out.iter_mut() {
            *slot = slot.max(a.value().abs());
            if a.order() == 0 {
                break;
            }
            let da = a.partial(0);
            a = (&da * &lam.truncate(da.order())).scale(1.0 / h.tau);
        }
    }
    Ok(out)
}

fn nearest(branches: &[Branch]) -> &Branch {
    branches
        .iter()
        .min_by(|a, b| a.distance.total_cmp(&b.distance))
        .expect("inside projections carry a branch")
}

/// Representative of `v` modulo `period` in `[−period/2, period/2)`.
fn centered(v: f64, period: f64) -> f64 {
    v - period * (v / period).round()
}

fn squared_norm(v: &[Jet]) -> Jet {
    let mut acc = Jet::constant(v[0].layout(), 0.0);
    for c in v {
        acc = acc + c * c;
    }
    acc
}

impl PerturbedField {
    pub fn base(&self) -> &Arc<dyn VectorField> {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.bump.epsilon
    }

    /// Foot parameter `t_x` as a jet: Newton on `⟨f(τ) − x, f'(τ)⟩ = 0` in
    /// jet arithmetic, seeded and pinned at the numerical root `t_star`.
    fn foot(&self, x: &[Jet], t_star: f64) -> Result<Foot> {
        let orbit = &self.flowbox.orbit;
        let n = x.len();
        let order = x[0].order();
        let lay = x[0].layout().clone();
        let c = orbit.series(t_star, order + 2)?;
        let xv: Vec<f64> = x.iter().map(Jet::value).collect();
        let back = orbit.manifold.log_map(&c[0], &xv)?;
        let target: Vec<Jet> = (0..n)
            .map(|i| {
                // move x into the chart copy adjacent to the foot
                let shift = (xv[i] - c[0][i]) - back[i];
                x[i].add_scalar(-shift)
            })
            .collect();
        let col = |i: usize, d: usize| -> Vec<f64> {
            (0..=order)
                .map(|k| {
                    let falling: f64 = (1..=d).map(|m| (k + m) as f64).product();
                    falling * c[k + d][i]
                })
                .collect()
        };
        let cols: Vec<[Vec<f64>; 3]> = (0..n).map(|i| [col(i, 0), col(i, 1), col(i, 2)]).collect();
        let mut tau = Jet::constant(&lay, t_star);
        for _ in 0..=order {
            let mut g = Jet::constant(&lay, 0.0);
            let mut gp = Jet::constant(&lay, 0.0);
            for i in 0..n {
                let f = tau.compose(&cols[i][0]);
                let fp = tau.compose(&cols[i][1]);
                let fpp = tau.compose(&cols[i][2]);
                let diff = &f - &target[i];
                g = g + &diff * &fp;
                gp = gp + &fp * &fp + &diff * &fpp;
            }
            tau = &tau - &(&g / &gp)?;
            tau = tau.add_scalar(t_star - tau.value());
        }
        let point: Vec<Jet> = (0..n).map(|i| tau.compose(&cols[i][0])).collect();
        let velocity: Vec<Jet> = (0..n).map(|i| tau.compose(&cols[i][1])).collect();
        let offset: Vec<Jet> = (0..n).map(|i| &target[i] - &point[i]).collect();
        Ok(Foot { tau, point, velocity, offset })
    }

    /// `Ȳ − X̄` on a branch; flat charts carry parallel transport as the identity.
    fn correction(&self, foot: &Foot, speed_factor: Option<&Jet>) -> Result<Vec<Jet>> {
        let orbit = &self.flowbox.orbit;
        let t = foot.tau.add_scalar(orbit.t_anchor);
        let xbar = self.base.eval_jets(&foot.point, &t)?;
        Ok(foot
            .velocity
            .iter()
            .zip(&xbar)
            .map(|(v, xb)| match speed_factor {
                Some(l) => &(l * v) - xb,
                None => v - xb,
            })
            .collect())
    }

    fn add_scaled(out: &mut [Jet], w: &Jet, v: &[Jet]) {
        for (o, c) in out.iter_mut().zip(v) {
            *o = &*o + &(w * c);
        }
    }

    fn inside(&self, x: &[Jet], t: &Jet, branches: &[Branch]) -> Result<Vec<Jet>> {
        let mut out = self.base.eval_jets(x, t)?;
        match self.mode {
            Mode::Nonautonomous => {
                let b = nearest(branches);
                let foot = self.foot(x, b.t)?;
                let orbit = &self.flowbox.orbit;
                let dt = t - &foot.tau.add_scalar(orbit.t_anchor);
                let dt = dt.add_scalar(centered(dt.value(), orbit.period) - dt.value());
                let s = squared_norm(&foot.offset) + (&dt * &dt).scale(self.time_scale * self.time_scale);
                let rho = self.bump.of_squared(&s);
                if rho.coeffs().iter().any(|c| *c != 0.0) {
                    let corr = self.correction(&foot, None)?;
                    Self::add_scaled(&mut out, &rho, &corr);
                }
            }
            Mode::Autonomous => match branches {
                [b] => {
                    let foot = self.foot(x, b.t)?;
                    let rho = self.bump.of_squared(&squared_norm(&foot.offset));
                    let corr = self.correction(&foot, None)?;
                    Self::add_scaled(&mut out, &rho, &corr);
                }
                [b1, b2] => {
                    let weights = self.weights.as_ref().expect("autonomous mode carries weights");
                    let f1 = self.foot(x, b1.t)?;
                    let f2 = self.foot(x, b2.t)?;
                    let r1 = self.bump.of_squared(&squared_norm(&f1.offset));
                    let r2 = self.bump.of_squared(&squared_norm(&f2.offset));
                    let w1 = weights.combine(&r1, &r2)?;
                    let w2 = weights.combine(&r2, &r1)?;
                    Self::add_scaled(&mut out, &w1, &self.correction(&f1, None)?);
                    Self::add_scaled(&mut out, &w2, &self.correction(&f2, None)?);
                }
                _ => return Err(Error::TooManyBranches(branches.len())),
            },
            Mode::Homoclinic => {
                let h = self.homoclinic.as_ref().expect("homoclinic mode carries its data");
                let weights = self.weights.as_ref().expect("homoclinic mode carries weights");
                let orbit = &self.flowbox.orbit;
                let b = nearest(branches);
                let foot = self.foot(x, b.t)?;
                let u = foot.tau.add_scalar(-h.sigma0);
                let u = u.add_scalar(centered(u.value(), orbit.period) - u.value()).scale(1.0 / h.tau);
                let lam = h.lambda(&u)?;
                let corr = self.correction(&foot, Some(&lam))?;
                let r_arc = self.bump.of_squared(&squared_norm(&foot.offset));
                // the other arc is nearest at its end point y
                let xv: Vec<f64> = x.iter().map(Jet::value).collect();
                let back = orbit.manifold.log_map(&h.y, &xv)?;
                let to_y: Vec<Jet> = x
                    .iter()
                    .enumerate()
                    .map(|(i, xi)| xi.add_scalar(-(xv[i] - back[i])))
                    .collect();
                let r_end = self.bump.of_squared(&squared_norm(&to_y));
                let xy = self.base.eval(&h.y, orbit.t_anchor + h.sigma0)?;
                let lay = x[0].layout();
                let corr_end: Vec<Jet> = xy.iter().map(|v| Jet::constant(lay, -v)).collect();
                let w_arc = weights.combine(&r_arc, &r_end)?;
                let w_end = weights.combine(&r_end, &r_arc)?;
                Self::add_scaled(&mut out, &w_arc, &corr);
                Self::add_scaled(&mut out, &w_end, &corr_end);
            }
        }
        Ok(out)
    }
}

impl VectorField for PerturbedField {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn is_autonomous(&self) -> bool {
        self.mode != Mode::Nonautonomous && self.base.is_autonomous()
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match self.flowbox.project(x) {
            Projection::Outside => self.base.eval(x, t),
            Projection::Inside { branches } => {
                if let Some(h) = &self.homoclinic {
                    if x == h.y.as_slice() {
                        return Ok(vec![0.0; x.len()]);
                    }
                }
                let lay = layout(x.len() + 1, 0);
                let xs: Vec<Jet> = x.iter().map(|v| Jet::constant(&lay, *v)).collect();
                let tj = Jet::constant(&lay, t);
                Ok(self.inside(&xs, &tj, &branches)?.iter().map(Jet::value).collect())
            }
        }
    }

    fn eval_jets(&self, x: &[Jet], t: &Jet) -> Result<Vec<Jet>> {
        let xv: Vec<f64> = x.iter().map(Jet::value).collect();
        match self.flowbox.project(&xv) {
            Projection::Outside => self.base.eval_jets(x, t),
            Projection::Inside { branches } => {
                let mut out = self.inside(x, t, &branches)?;
                if let Some(h) = &self.homoclinic {
                    if xv == h.y {
                        for c in out.iter_mut() {
                            *c = c.add_scalar(-c.value());
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Orbit parameter in `[0, T)` where the speed is smallest, from the arc
/// table; with a hint, only nodes within `radius` of it are considered.
pub fn slowest_parameter(flowbox: &FlowBox, hint: Option<(&[f64], f64)>) -> Result<f64> {
    let orbit = &flowbox.orbit;
    let tab = &orbit.table;
    let k = (0..tab.speed.len())
        .filter(|&k| match hint {
            Some((p, radius)) => orbit.manifold.distance(&orbit.point(tab.t[k]), p) <= radius,
            None => true,
        })
        .min_by(|a, b| tab.speed[*a].total_cmp(&tab.speed[*b]))
        .ok_or_else(|| Error::BranchConstruction("no orbit point near the slow-point hint".into()))?;
    Ok(orbit.wrap(tab.t[k]))
}
