//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] holds the normalized Taylor coefficients `c_α` of a smooth
//! function around a base point, for every multi-index `α` of total degree
//! at most the layout order. Partial derivatives are recovered as
//! `∂^α f = α! c_α`. Arithmetic and the elementary functions propagate the
//! coefficients exactly (up to rounding), which is what makes high-order
//! Lie derivatives usable without finite-difference noise.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

/// Monomial bookkeeping shared by all jets with the same variable count and order.
#[derive(Debug)]
pub struct JetLayout {
    nvars: usize,
    order: usize,
    exponents: Vec<Vec<u8>>,
    degrees: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    products: Vec<(u32, u32, u32)>,
    factorials: Vec<f64>,
}

impl JetLayout {
    fn build(nvars: usize, order: usize) -> Self {
        let mut exponents = Vec::new();
        for deg in 0..=order {
            let mut cur = vec![0u8; nvars];
            push_graded(&mut exponents, &mut cur, 0, deg);
        }
        let degrees: Vec<usize> = exponents
            .iter()
            .map(|e| e.iter().map(|&k| k as usize).sum())
            .collect();
        let index: HashMap<Vec<u8>, usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let mut products = Vec::new();
        for (i, ei) in exponents.iter().enumerate() {
            for (j, ej) in exponents.iter().enumerate() {
                if degrees[i] + degrees[j] > order {
                    continue;
                }
                let sum: Vec<u8> = ei.iter().zip(ej).map(|(a, b)| a + b).collect();
                products.push((i as u32, j as u32, index[&sum] as u32));
            }
        }
        let factorials = exponents
            .iter()
            .map(|e| e.iter().map(|&k| factorial(k as usize)).product())
            .collect();
        JetLayout {
            nvars,
            order,
            exponents,
            degrees,
            index,
            products,
            factorials,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self, k: usize) -> &[u8] {
        &self.exponents[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.degrees[k]
    }

    pub fn position(&self, exps: &[u8]) -> Option<usize> {
        self.index.get(exps).copied()
    }
}

// Graded enumeration in lexicographic order, highest power of the first variable first.
fn push_graded(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, var: usize, remaining: usize) {
    if var + 1 == cur.len() {
        cur[var] = remaining as u8;
        out.push(cur.clone());
        cur[var] = 0;
        return;
    }
    if cur.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=remaining).rev() {
        cur[var] = k as u8;
        push_graded(out, cur, var + 1, remaining - k);
    }
    cur[var] = 0;
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Shared layout for `nvars` variables truncated at total degree `order`.
type LayoutCache = Mutex<HashMap<(usize, usize), Arc<JetLayout>>>;

pub fn layout(nvars: usize, order: usize) -> Arc<JetLayout> {
    static CACHE: OnceLock<LayoutCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("jet layout cache poisoned");
    map.entry((nvars, order))
        .or_insert_with(|| Arc::new(JetLayout::build(nvars, order)))
        .clone()
}

#[derive(Clone)]
pub struct Jet {
    layout: Arc<JetLayout>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("nvars", &self.layout.nvars)
            .field("order", &self.layout.order)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl Jet {
    pub fn constant(layout: &Arc<JetLayout>, value: f64) -> Self {
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[0] = value;
        Jet {
            layout: layout.clone(),
            coeffs,
        }
    }

    /// The coordinate function `x_var` expanded around `value`.
    pub fn variable(layout: &Arc<JetLayout>, var: usize, value: f64) -> Self {
        let mut j = Jet::constant(layout, value);
        if layout.order >= 1 {
            let mut e = vec![0u8; layout.nvars];
            e[var] = 1;
            let k = layout.index[&e];
            j.coeffs[k] = 1.0;
        }
        j
    }

    pub fn from_coeffs(layout: &Arc<JetLayout>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), layout.len(), "coefficient count mismatch");
        Jet {
            layout: layout.clone(),
            coeffs,
        }
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, exps: &[u8]) -> f64 {
        self.layout.position(exps).map_or(0.0, |k| self.coeffs[k])
    }

    /// Partial derivative `∂^α f` at the base point.
    pub fn derivative(&self, exps: &[u8]) -> f64 {
        match self.layout.position(exps) {
            Some(k) => self.coeffs[k] * self.layout.factorials[k],
            None => 0.0,
        }
    }

    /// Gradient with respect to every variable.
    pub fn gradient(&self) -> Vec<f64> {
        let mut e = vec![0u8; self.layout.nvars];
        (0..self.layout.nvars)
            .map(|i| {
                e[i] = 1;
                let d = self.derivative(&e);
                e[i] = 0;
                d
            })
            .collect()
    }

    /// `d^q/ds^q f(x + s h)` at `s = 0`; only the first `h.len()` variables are used.
    pub fn directional(&self, h: &[f64], q: usize) -> f64 {
        let mut sum = 0.0;
        for k in 0..self.coeffs.len() {
            if self.layout.degrees[k] != q {
                continue;
            }
            let e = &self.layout.exponents[k];
            if e[h.len()..].iter().any(|&p| p != 0) {
                continue;
            }
            let mono: f64 = e.iter().zip(h).map(|(&p, hv)| hv.powi(p as i32)).product();
            sum += self.coeffs[k] * mono;
        }
        sum * factorial(q)
    }

    /// Exact partial derivative as a jet of one lower order.
    pub fn partial(&self, var: usize) -> Jet {
        let src = &self.layout;
        let order = src.order.saturating_sub(1);
        let dst = layout(src.nvars, order);
        let mut coeffs = vec![0.0; dst.len()];
        if src.order > 0 {
            let mut e = vec![0u8; src.nvars];
            for (k, slot) in coeffs.iter_mut().enumerate() {
                e.copy_from_slice(&dst.exponents[k]);
                e[var] += 1;
                let j = src.index[&e];
                *slot = self.coeffs[j] * e[var] as f64;
            }
        }
        Jet {
            layout: dst,
            coeffs,
        }
    }

    /// Re-expresses the jet in a layout of lower (or equal) order.
    pub fn truncate(&self, order: usize) -> Jet {
        let dst = layout(self.layout.nvars, order.min(self.layout.order));
        let coeffs = self.coeffs[..dst.len()].to_vec();
        Jet {
            layout: dst,
            coeffs,
        }
    }

    /// Lifts a lower-order jet into `target`, padding higher coefficients with zero.
    pub fn promote(&self, target: &Arc<JetLayout>) -> Jet {
        assert_eq!(self.layout.nvars, target.nvars);
        let mut coeffs = vec![0.0; target.len()];
        let n = self.coeffs.len().min(target.len());
        coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        Jet {
            layout: target.clone(),
            coeffs,
        }
    }

    fn same_shape(&self, other: &Jet) {
        debug_assert!(
            self.layout.nvars == other.layout.nvars && self.layout.order == other.layout.order,
            "jet layouts differ"
        );
    }

    /// Evaluates `Σ_k series[k] (self - self(0))^k`, the composition of a
    /// univariate Taylor expansion with this jet.
    pub fn compose(&self, series: &[f64]) -> Jet {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let top = series.len().min(self.layout.order + 1);
        if top == 0 {
            return Jet::constant(&self.layout, 0.0);
        }
        let mut acc = Jet::constant(&self.layout, series[top - 1]);
        for k in (0..top - 1).rev() {
            acc = &acc * &h;
            acc.coeffs[0] += series[k];
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut r = self.clone();
        r.coeffs[0] += s;
        r
    }

    pub fn recip(&self) -> crate::Result<Jet> {
        let a = self.value();
        if a == 0.0 {
            return Err(crate::Error::Domain("division by zero".into()));
        }
        let mut series = Vec::with_capacity(self.order() + 1);
        let mut p = 1.0 / a;
        for _ in 0..=self.order() {
            series.push(p);
            p *= -1.0 / a;
        }
        Ok(self.compose(&series))
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let series: Vec<f64> = (0..=self.order())
            .map(|k| cycle[k % 4] / factorial(k))
            .collect();
        self.compose(&series)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let series: Vec<f64> = (0..=self.order())
            .map(|k| cycle[k % 4] / factorial(k))
            .collect();
        self.compose(&series)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let series: Vec<f64> = (0..=self.order()).map(|k| e / factorial(k)).collect();
        self.compose(&series)
    }

    pub fn ln(&self) -> crate::Result<Jet> {
        let a = self.value();
        if a <= 0.0 {
            return Err(crate::Error::Domain(format!("log of non-positive value {a}")));
        }
        let mut series = vec![a.ln()];
        for k in 1..=self.order() {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            series.push(sign / (k as f64 * a.powi(k as i32)));
        }
        Ok(self.compose(&series))
    }

    /// Real power with a constant exponent, via the generalized binomial series.
    pub fn powf(&self, p: f64) -> crate::Result<Jet> {
        let a = self.value();
        if a < 0.0 || (a == 0.0 && self.order() > 0) {
            return Err(crate::Error::Domain(format!("non-integer power of {a}")));
        }
        let mut series = Vec::with_capacity(self.order() + 1);
        let mut binom = 1.0;
        for k in 0..=self.order() {
            series.push(binom * a.powf(p - k as f64));
            binom *= (p - k as f64) / (k as f64 + 1.0);
        }
        Ok(self.compose(&series))
    }

    pub fn sqrt(&self) -> crate::Result<Jet> {
        if self.value() == 0.0 && self.order() == 0 {
            return Ok(self.clone());
        }
        self.powf(0.5)
    }

    pub fn powi(&self, n: i32) -> crate::Result<Jet> {
        if n < 0 {
            return self.powi(-n)?.recip();
        }
        let mut result = Jet::constant(&self.layout, 1.0);
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Ok(result)
    }

    /// `|f|` taken on the branch selected by the sign of the base value.
    pub fn abs_branch(&self) -> Jet {
        if self.value() < 0.0 {
            -self
        } else {
            self.clone()
        }
    }
}

impl<'a> Add<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.same_shape(rhs);
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.same_shape(rhs);
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl<'a> Mul<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.same_shape(rhs);
        let mut coeffs = vec![0.0; self.coeffs.len()];
        for &(i, j, k) in &self.layout.products {
            coeffs[k as usize] += self.coeffs[i as usize] * rhs.coeffs[j as usize];
        }
        Jet {
            layout: self.layout.clone(),
            coeffs,
        }
    }
}

impl<'a> Div<&'a Jet> for &'a Jet {
    type Output = crate::Result<Jet>;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: &Jet) -> crate::Result<Jet> {
        Ok(self * &rhs.recip()?)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                $tr::$m(&self, &rhs)
            }
        }
        impl<'a> $tr<&'a Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                $tr::$m(&self, rhs)
            }
        }
        impl<'a> $tr<Jet> for &'a Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                $tr::$m(self, &rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_graded() {
        let l = layout(2, 2);
        assert_eq!(l.len(), 6);
        assert_eq!(l.exponents(0), &[0, 0]);
        assert_eq!(l.exponents(1), &[1, 0]);
        assert_eq!(l.exponents(2), &[0, 1]);
        assert_eq!(l.degree(5), 2);
    }

    #[test]
    fn product_rule_matches_polynomial() {
        // (1 + x + y)^2 around the origin.
        let l = layout(2, 3);
        let x = Jet::variable(&l, 0, 0.0);
        let y = Jet::variable(&l, 1, 0.0);
        let p = (&x + &y).add_scalar(1.0);
        let sq = &p * &p;
        assert_eq!(sq.value(), 1.0);
        assert_eq!(sq.derivative(&[1, 0]), 2.0);
        assert_eq!(sq.derivative(&[1, 1]), 2.0);
        assert_eq!(sq.derivative(&[2, 0]), 2.0);
        assert_eq!(sq.derivative(&[3, 0]), 0.0);
    }

    #[test]
    fn elementary_functions_match_closed_forms() {
        let l = layout(1, 4);
        let x = Jet::variable(&l, 0, 0.7);
        let s = x.sin();
        let c = x.cos();
        let e = x.exp();
        let lg = x.ln().unwrap();
        let r = x.sqrt().unwrap();
        for k in 0..=4u8 {
            let d = [s.derivative(&[k]), c.derivative(&[k])];
            let (sv, cv) = 0.7f64.sin_cos();
            let expect_s = [sv, cv, -sv, -cv][k as usize % 4];
            let expect_c = [cv, -sv, -cv, sv][k as usize % 4];
            assert!((d[0] - expect_s).abs() < 1e-14);
            assert!((d[1] - expect_c).abs() < 1e-14);
            assert!((e.derivative(&[k]) - 0.7f64.exp()).abs() < 1e-13);
        }
        assert!((lg.derivative(&[2]) + 1.0 / 0.49).abs() < 1e-12);
        assert!((r.derivative(&[1]) - 0.5 / 0.7f64.sqrt()).abs() < 1e-14);
        assert!((x.recip().unwrap().derivative(&[3]) + 6.0 / 0.7f64.powi(4)).abs() < 1e-10);
    }

    #[test]
    fn partial_lowers_order() {
        let l = layout(2, 3);
        let x = Jet::variable(&l, 0, 1.0);
        let y = Jet::variable(&l, 1, 2.0);
        let f = &(&x * &x) * &y; // x^2 y
        let fx = f.partial(0); // 2xy
        assert_eq!(fx.order(), 2);
        assert!((fx.value() - 4.0).abs() < 1e-15);
        assert!((fx.derivative(&[1, 0]) - 4.0).abs() < 1e-15);
        assert!((fx.derivative(&[0, 1]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn directional_derivative_of_quadratic() {
        let l = layout(2, 2);
        let x = Jet::variable(&l, 0, 0.3);
        let y = Jet::variable(&l, 1, -0.2);
        let f = &x * &y;
        // d²/ds² (x+s h0)(y+s h1) = 2 h0 h1
        assert!((f.directional(&[0.6, 0.8], 2) - 0.96).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let l = layout(1, 1);
        assert!(Jet::variable(&l, 0, 0.0).recip().is_err());
        assert!(Jet::variable(&l, 0, -1.0).ln().is_err());
        assert!(Jet::variable(&l, 0, -1.0).sqrt().is_err());
    }
}
