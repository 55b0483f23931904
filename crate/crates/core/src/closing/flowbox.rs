use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::orbit::ClosedOrbit;
use crate::flow::refine_root;
use crate::geometry::ManifoldKind;
use crate::{Error, Result};

/// Parameter intervals `[t_a0, t_a1]` and `[t_b0, t_b1]` whose tube sections meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub t_a0: f64,
    pub t_a1: f64,
    pub t_b0: f64,
    pub t_b1: f64,
}

/// Tube of radius `epsilon` around a closed orbit.
pub struct FlowBox {
    pub orbit: Arc<ClosedOrbit>,
    pub epsilon: f64,
    pub rc_min: f64,
    /// Half the smallest double-normal chord of the orbit (∞ if none).
    pub bottleneck: f64,
    pub overlaps: Vec<Overlap>,
    times: Vec<f64>,
    points: Vec<Vec<f64>>,
    /// Largest chord between consecutive samples.
    spacing: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    cell_counts: Option<Vec<i64>>,
}

impl std::fmt::Debug for FlowBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowBox")
            .field("epsilon", &self.epsilon)
            .field("rc_min", &self.rc_min)
            .field("bottleneck", &self.bottleneck)
            .field("overlaps", &self.overlaps)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Orbit parameter of the foot.
    pub t: f64,
    pub foot: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Outside,
    Inside { branches: Vec<Branch> },
}

impl Projection {
    pub fn branches(&self) -> &[Branch] {
        match self {
            Projection::Outside => &[],
            Projection::Inside { branches } => branches,
        }
    }

    pub fn is_unique(&self) -> bool {
        self.branches().len() == 1
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Projection::Outside)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowBoxSummary {
    pub epsilon: f64,
    pub rc_min: f64,
    pub overlaps: Vec<Overlap>,
}

fn cyclic_gap(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Builds the tube; `epsilon = None` selects `min(Rc_min, bottleneck) / 2`.
pub fn build_flowbox(orbit: Arc<ClosedOrbit>, epsilon: Option<f64>) -> Result<FlowBox> {
    let man = &orbit.manifold;
    if !man.is_flat() {
        return Err(Error::UnsupportedManifold(man.kind_name().into()));
    }
    let period = orbit.period;
    let length = orbit.table.length();
    let rc = orbit.rc_min;

    // coarse samples for the pair scan
    let m = 1200usize;
    let coarse_t: Vec<f64> = (0..m).map(|k| period * k as f64 / m as f64).collect();
    let coarse: Vec<Vec<f64>> = coarse_t.iter().map(|&t| orbit.point(t)).collect();
    let arc: Vec<f64> = coarse_t.iter().map(|&t| orbit.arclength_at(t)).collect();
    let arc_gap = |a: usize, b: usize| {
        let d = (arc[a] - arc[b]).abs();
        d.min(length - d)
    };
    let mut dist = vec![0.0f64; m * m];
    for a in 0..m {
        for b in a..m {
            let d = man.distance(&coarse[a], &coarse[b]);
            dist[a * m + b] = d;
            dist[b * m + a] = d;
        }
    }
    // nontrivial local minima of b ↦ dis(f_a, f_b): double normals and near passes
    let mut minima: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..m {
        for b in 0..m {
            if cyclic_gap(a, b, m) < 2 {
                continue;
            }
            let d = dist[a * m + b];
            let prev = dist[a * m + (b + m - 1) % m];
            let next = dist[a * m + (b + 1) % m];
            if d < prev && d <= next {
                minima.push((a, b, d));
            }
        }
    }
    let bottleneck = minima.iter().map(|m| 0.5 * m.2).fold(f64::INFINITY, f64::min);
    let eps = match epsilon {
        Some(e) => {
            if !(e > 0.0) || e >= rc {
                return Err(Error::RadiusTooLarge { epsilon: e, limit: rc });
            }
            e
        }
        None => 0.5 * rc.min(bottleneck),
    };

    // overlap regions: components of {dis < 2ε} seeded at near passes
    let guard = 2.0 * eps;
    let mut seen = vec![false; m * m];
    let mut overlaps = Vec::new();
    for &(a0, b0, d) in &minima {
        if d >= 2.0 * eps || a0 > b0 || seen[a0 * m + b0] || arc_gap(a0, b0) <= guard {
            continue;
        }
        let mut stack = vec![(a0, b0)];
        seen[a0 * m + b0] = true;
        let (mut amin, mut amax, mut bmin, mut bmax) = (a0 as i64, a0 as i64, b0 as i64, b0 as i64);
        while let Some((a, b)) = stack.pop() {
            // track offsets relative to the seed so wrap-around stays contiguous
            let da = signed_offset(a, a0, m);
            let db = signed_offset(b, b0, m);
            amin = amin.min(a0 as i64 + da);
            amax = amax.max(a0 as i64 + da);
            bmin = bmin.min(b0 as i64 + db);
            bmax = bmax.max(b0 as i64 + db);
            for (sa, sb) in [(1, 0), (m - 1, 0), (0, 1), (0, m - 1)] {
                let (na, nb) = ((a + sa) % m, (b + sb) % m);
                let idx = na * m + nb;
                if !seen[idx] && dist[idx] < 2.0 * eps && arc_gap(na, nb) > guard {
                    seen[idx] = true;
                    stack.push((na, nb));
                }
            }
        }
        let step = period / m as f64;
        overlaps.push(Overlap {
            t_a0: (amin as f64 * step).rem_euclid(period),
            t_a1: (amax as f64 * step).rem_euclid(period),
            t_b0: (bmin as f64 * step).rem_euclid(period),
            t_b1: (bmax as f64 * step).rem_euclid(period),
        });
    }

    // fine samples for the projection index
    let target = (eps.min(rc) / 4.0).max(1e-9);
    let nf = ((length / target).ceil() as usize).clamp(2000, 200_000);
    let times: Vec<f64> = (0..nf).map(|k| orbit.param_at(length * k as f64 / nf as f64)).collect();
    let points: Vec<Vec<f64>> = times.iter().map(|&t| orbit.point(t)).collect();
    let mut spacing = 0.0f64;
    for k in 0..nf {
        spacing = spacing.max(man.distance(&points[k], &points[(k + 1) % nf]));
    }
    let cell_counts = match &man.kind {
        ManifoldKind::FlatTorus { periods } => Some(periods.iter().map(|p| ((p / eps).floor() as i64).max(1)).collect()),
        _ => None,
    };
    let mut fb = FlowBox {
        orbit: orbit.clone(),
        epsilon: eps,
        rc_min: rc,
        bottleneck,
        overlaps,
        times,
        points,
        spacing,
        cells: HashMap::new(),
        cell_counts,
    };
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (k, p) in fb.points.iter().enumerate() {
        cells.entry(fb.cell_of(p)).or_default().push(k);
    }
    fb.cells = cells;
    Ok(fb)
}

fn signed_offset(i: usize, seed: usize, m: usize) -> i64 {
    let d = (i as i64 - seed as i64).rem_euclid(m as i64);
    if d > m as i64 / 2 { d - m as i64 } else { d }
}

impl FlowBox {
    fn cell_size(&self) -> Vec<f64> {
        match (&self.orbit.manifold.kind, &self.cell_counts) {
            (ManifoldKind::FlatTorus { periods }, Some(c)) => {
                periods.iter().zip(c).map(|(p, k)| p / *k as f64).collect()
            }
            _ => vec![self.epsilon; self.orbit.dimension()],
        }
    }

    fn cell_of(&self, x: &[f64]) -> Vec<i64> {
        let w = self.orbit.manifold.wrap(x);
        let size = self.cell_size();
        let mut key: Vec<i64> = w.iter().zip(&size).map(|(v, s)| (v / s).floor() as i64).collect();
        if let Some(counts) = &self.cell_counts {
            for (k, c) in key.iter_mut().zip(counts) {
                *k = k.rem_euclid(*c);
            }
        }
        key
    }

    pub fn summary(&self) -> FlowBoxSummary {
        FlowBoxSummary { epsilon: self.epsilon, rc_min: self.rc_min, overlaps: self.overlaps.clone() }
    }

    /// Orbit samples within `radius` of `x` (radius at most ε plus one sample spacing).
    fn candidates(&self, x: &[f64], radius: f64) -> Vec<usize> {
        let n = x.len();
        let size = self.cell_size();
        let reach: Vec<i64> = size.iter().map(|s| (radius / s).ceil() as i64).collect();
        let center = self.cell_of(x);
        let mut out = Vec::new();
        let mut offset = vec![0i64; n];
        for (o, r) in offset.iter_mut().zip(&reach) {
            *o = -r;
        }
        loop {
            let mut key: Vec<i64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
            if let Some(counts) = &self.cell_counts {
                for (k, c) in key.iter_mut().zip(counts) {
                    *k = k.rem_euclid(*c);
                }
            }
            if let Some(v) = self.cells.get(&key) {
                out.extend(v.iter().copied());
            }
            let mut i = 0;
            loop {
                if i == n {
                    out.sort_unstable();
                    out.dedup();
                    let man = &self.orbit.manifold;
                    out.retain(|&k| man.distance(x, &self.points[k]) <= radius);
                    return out;
                }
                offset[i] += 1;
                if offset[i] > reach[i] {
                    offset[i] = -reach[i];
                    i += 1;
                } else {
                    break;
                }
            }
        }
    }

    /// `d/dt ½ dis(x, f_t)²` expressed in the tube.
    fn stationarity(&self, x: &[f64], t: f64) -> Result<f64> {
        let c = self.orbit.series(t, 1)?;
        let man = &self.orbit.manifold;
        let back = man.log_map(&c[0], x)?;
        Ok(-man.inner(&c[0], &back, &c[1]))
    }

    pub fn project(&self, x: &[f64]) -> Projection {
        let eps = self.epsilon;
        let man = &self.orbit.manifold;
        let nf = self.times.len();
        let cand = self.candidates(x, eps + self.spacing);
        if cand.is_empty() {
            return Projection::Outside;
        }
        let d_of = |k: usize| man.distance(x, &self.points[k % nf]);
        let mut feet: Vec<Branch> = Vec::new();
        for &k in &cand {
            let d = d_of(k);
            let prev = d_of(k + nf - 1);
            let next = d_of(k + 1);
            if !(d <= prev && d <= next) {
                continue;
            }
            let (ta, tb) = (self.times[(k + nf - 1) % nf], self.times[(k + 1) % nf]);
            // unwrap the bracket across t = 0
            let tb = if tb < ta { tb + self.orbit.period } else { tb };
            let ta = if ta > self.times[k] && k == 0 { ta - self.orbit.period } else { ta };
            let g = |t: f64| self.stationarity(x, t);
            let t = match (g(ta), g(tb)) {
                (Ok(ga), Ok(gb)) if ga <= 0.0 && gb >= 0.0 => refine_root(g, ta, tb, 1e-13).unwrap_or(self.times[k]),
                _ => self.times[k],
            };
            let t = self.orbit.wrap(t);
            let foot = self.orbit.point(t);
            let dist = man.distance(x, &foot);
            if dist < eps {
                feet.push(Branch { t, foot, distance: dist });
            }
        }
        if feet.is_empty() {
            return Projection::Outside;
        }
        feet.sort_by(|a, b| a.t.total_cmp(&b.t));
        let gap = eps / self.orbit.v_max;
        let period = self.orbit.period;
        let mut merged: Vec<Branch> = Vec::new();
        for f in feet {
            match merged.last_mut() {
                Some(last) if (f.t - last.t).abs() <= gap => {
                    if f.distance < last.distance {
                        *last = f;
                    }
                }
                _ => merged.push(f),
            }
        }
        if merged.len() > 1 {
            let (first, last) = (&merged[0], &merged[merged.len() - 1]);
            if period - (last.t - first.t) <= gap {
                let drop = if first.distance <= last.distance { merged.len() - 1 } else { 0 };
                merged.remove(drop);
            }
        }
        Projection::Inside { branches: merged }
    }
}
