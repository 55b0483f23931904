use std::f64::consts::PI;

use nalgebra::DMatrix;
use orbitclose::field::{parse_field, unit_field_family, FieldSpec, Region};
use orbitclose::flow::*;
use orbitclose::geometry::ChartedManifold;
use orbitclose::ode::Dopri5;
use orbitclose::Error;

fn lorenz() -> FieldSpec {
    let params = [("s", 10.0), ("r", 28.0), ("b", 8.0 / 3.0)];
    FieldSpec::parse(
        "lorenz",
        "[s*(y-x), x*(r-z)-y, x*y-b*z]",
        &orbitclose::field::default_coords(3),
        &params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    )
    .unwrap()
}

/// exp(A) by scaling and squaring of a 20-term Taylor sum.
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.iter().map(|v| v.abs()).sum::<f64>();
    let s = (norm.max(1.0).log2().ceil() as i32 + 1).max(0);
    let b = a / 2f64.powi(s);
    let n = a.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..20 {
        term = &term * &b / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

#[test]
fn exponential_growth_reaches_e() {
    let f = parse_field("[x]", 1).unwrap();
    let m = ChartedManifold::euclidean(1);
    let tr = integrate(&f, &m, &[1.0], (0.0, 1.0)).unwrap();
    assert!((tr.end()[0] - 1f64.exp()).abs() < 1e-9);
    assert_eq!(tr.eval(0.0), vec![1.0]);
}

#[test]
fn rotation_returns_after_full_turn() {
    let f = parse_field("[-y, x]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let tr = integrate(&f, &m, &[1.0, 0.0], (0.0, 2.0 * PI)).unwrap();
    assert!((tr.end()[0] - 1.0).abs() < 1e-9 && tr.end()[1].abs() < 1e-9);
}

#[test]
fn backward_integration() {
    let f = parse_field("[-y, x]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let tr = integrate(&f, &m, &[1.0, 0.0], (0.0, -PI / 2.0)).unwrap();
    assert!(tr.end()[0].abs() < 1e-9 && (tr.end()[1] + 1.0).abs() < 1e-9);
}

#[test]
fn lorenz_self_convergence() {
    let f = lorenz();
    let m = ChartedManifold::euclidean(3);
    let a = integrate(&f, &m, &[1.0, 1.0, 1.0], (0.0, 10.0)).unwrap();
    let fine = Dopri5::with_tol(0.5e-10);
    let b = integrate_with(&f, &m, &[1.0, 1.0, 1.0], (0.0, 10.0), &fine).unwrap();
    for k in 0..=200 {
        let t = 0.05 * k as f64;
        let (xa, xb) = (a.eval(t), b.eval(t));
        for i in 0..3 {
            assert!((xa[i] - xb[i]).abs() < 1e-5, "t={t}");
        }
    }
}

#[test]
fn trajectory_residual_is_small() {
    let f = lorenz();
    let m = ChartedManifold::euclidean(3);
    let tr = integrate(&f, &m, &[1.0, 1.0, 1.0], (0.0, 2.0)).unwrap();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let t: f64 = rng.gen_range(0.0..2.0);
        let x = tr.eval(t);
        let d = tr.derivative(t);
        let v = orbitclose::field::VectorField::eval(&f, &x, t).unwrap();
        let res = d.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = v.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
        assert!(res <= 10.0 * tr.tolerance * scale * 1e3, "residual {res} at {t}");
    }
}

#[test]
fn variational_linear_matches_expm() {
    let f = parse_field("[0.3*x - 1.2*y + 0.1*z, 0.7*x - 0.2*z, 0.5*y - 0.4*z]", 3).unwrap();
    let a = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.1, 0.7, 0.0, -0.2, 0.0, 0.5, -0.4]);
    let m = ChartedManifold::euclidean(3);
    let t = 2.5;
    let got = variational_flow(&f, &m, &[0.2, -0.1, 0.4], t).unwrap();
    let want = expm(&(a * t));
    assert!((got - &want).norm() <= 1e-7 * want.norm());
}

#[test]
fn variational_half_turn() {
    let f = parse_field("[-y, x]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let got = variational_flow(&f, &m, &[1.0, 0.0], PI).unwrap();
    assert!((got + DMatrix::<f64>::identity(2, 2)).norm() < 1e-9);
}

#[test]
fn variational_matches_finite_differences() {
    let f = lorenz();
    let m = ChartedManifold::euclidean(3);
    let x0 = [1.0, 2.0, 20.0];
    let t = 0.8;
    let got = variational_flow(&f, &m, &x0, t).unwrap();
    let h = 1e-5;
    for j in 0..3 {
        let mut xp = x0;
        let mut xm = x0;
        xp[j] += h;
        xm[j] -= h;
        let (p, q) = (integrate(&f, &m, &xp, (0.0, t)).unwrap(), integrate(&f, &m, &xm, (0.0, t)).unwrap());
        for i in 0..3 {
            let fd = (p.end()[i] - q.end()[i]) / (2.0 * h);
            assert!((fd - got[(i, j)]).abs() <= 1e-4 * got.norm(), "({i},{j}) {fd} vs {}", got[(i, j)]);
        }
    }
}

#[test]
fn variational_composition() {
    let f = lorenz();
    let m = ChartedManifold::euclidean(3);
    let x0 = [1.0, 2.0, 20.0];
    let (s, t) = (0.3, 0.4);
    let ms = variational_flow(&f, &m, &x0, s).unwrap();
    let xs = integrate(&f, &m, &x0, (0.0, s)).unwrap().end().to_vec();
    let mt = variational_flow(&f, &m, &xs, t).unwrap();
    let mst = variational_flow(&f, &m, &x0, s + t).unwrap();
    assert!((&mt * &ms - &mst).norm() <= 1e-6 * mst.norm());
}

#[test]
fn rotation_has_one_exact_return() {
    let f = parse_field("[-y, x]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let ev = find_returns(&f, &m, &[1.0, 0.0], 0.0, 1e-6, 10.0, 0.5).unwrap();
    assert_eq!(ev.len(), 1);
    assert!((ev[0].period - 2.0 * PI).abs() < 1e-9);
    assert!(ev[0].alpha < 1e-9);
    assert_eq!(ev[0].alpha, m.distance(&ev[0].x0, &ev[0].x_ret));
}

#[test]
fn torus_returns_match_grid_scan() {
    let f = parse_field("[1, 1.41421356]", 2).unwrap();
    let m = ChartedManifold::flat_torus(vec![1.0, 1.0]);
    let ev = find_returns(&f, &m, &[0.0, 0.0], 0.0, 0.05, 100.0, 0.5).unwrap();
    assert!(!ev.is_empty());
    let best = ev.iter().min_by(|a, b| a.alpha.total_cmp(&b.alpha)).unwrap();
    assert!(best.alpha <= 0.05);
    // brute force over the exact straight-line flow
    let (mut gbest, mut gt) = (f64::INFINITY, 0.0);
    let mut k = 500;
    while k as f64 * 1e-3 <= 100.0 {
        let t = k as f64 * 1e-3;
        // the slope the field was written with, not √2
        #[allow(clippy::approx_constant)]
        let d = m.distance(&[0.0, 0.0], &[t, 1.41421356 * t]);
        if d < gbest {
            gbest = d;
            gt = t;
        }
        k += 1;
    }
    assert!(best.alpha <= gbest + 1e-12, "{} {} vs grid {} {}", best.alpha, best.period, gbest, gt);
    assert!(gbest - best.alpha <= 1e-3 * 2.0);
    assert!((best.period - gt).abs() <= 1e-3);
}

#[test]
fn decay_has_no_returns() {
    let f = parse_field("[-x]", 1).unwrap();
    let m = ChartedManifold::euclidean(1);
    assert!(find_returns(&f, &m, &[1.0], 0.0, 0.5, 20.0, 0.1).unwrap().is_empty());
}

#[test]
fn exact_return_has_zero_jet_deviation() {
    let f = parse_field("[-y + x*y, x - y^2]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let ev = ReturnEvent { x0: vec![0.3, 0.2], t_anchor: 0.0, period: 1.0, x_ret: vec![0.3, 0.2], alpha: 0.0 };
    let fam = unit_field_family(2, 2, 1);
    let rep = check_return_jets(&f, &m, &ev, 3, &fam, &Region::new(vec![-1.0; 2], vec![1.0; 2])).unwrap();
    assert!(rep.deviations.iter().all(|d| *d == 0.0));
}

#[test]
fn linear_return_jets_obey_mean_value_bound() {
    let f = parse_field("[0.2*x - 2*y, 1.5*x + 0.1*y]", 2).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[0.2, -2.0, 1.5, 0.1]);
    let m = ChartedManifold::euclidean(2);
    let x_ret = vec![0.31, 0.18];
    let alpha = m.distance(&[0.3, 0.2], &x_ret);
    let ev = ReturnEvent { x0: vec![0.3, 0.2], t_anchor: 0.0, period: 1.0, x_ret, alpha };
    let fam = unit_field_family(2, 2, 1);
    let rep = check_return_jets(&f, &m, &ev, 2, &fam, &Region::new(vec![-1.0; 2], vec![1.0; 2])).unwrap();
    let op = a.singular_values().max();
    assert!(rep.deviations[0] <= op * alpha + 1e-9);
    assert!(rep.deviations[1] <= op * alpha + 1e-9);
    assert!(rep.deviations[2] <= 1e-12);
    assert!(rep.deviations.iter().all(|d| *d <= rep.bound));
}

#[test]
fn rotation_return_time_is_flat_along_section() {
    let f = parse_field("[-y, x]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let sec = Section::new(vec![1.0, 0.0], vec![0.0, 1.0], 1.0);
    let rt = return_time_map(&f, &m, &sec, &[1.0, 0.0], 20.0).unwrap();
    assert!((rt.time - 2.0 * PI).abs() < 1e-10);
    assert!(rt.gradient.iter().all(|g| g.abs() < 1e-9));
    let h = 1e-4;
    let tp = return_time_map(&f, &m, &sec, &[1.0 + h, 0.0], 20.0).unwrap().time;
    let tm = return_time_map(&f, &m, &sec, &[1.0 - h, 0.0], 20.0).unwrap().time;
    assert!(((tp - tm) / (2.0 * h)).abs() < 1e-7);
}

#[test]
fn polar_limit_cycle_return_time() {
    let f = parse_field("[x*(1 - sqrt(x^2+y^2)) - y, y*(1 - sqrt(x^2+y^2)) + x]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let sec = Section::new(vec![1.0, 0.0], vec![0.0, 1.0], 0.5);
    let rt = return_time_map(&f, &m, &sec, &[1.0, 0.0], 20.0).unwrap();
    assert!((rt.time - 2.0 * PI).abs() < 1e-9);
}

#[test]
fn escaping_trajectory_has_no_crossing() {
    let f = parse_field("[x^2, 1]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let sec = Section::new(vec![0.0, 0.0], vec![0.0, -1.0], 1.0);
    assert_eq!(return_time_map(&f, &m, &sec, &[1.0, 0.0], 20.0).unwrap_err(), Error::NoCrossing);
}

#[test]
fn csv_export_has_header_and_precision() {
    let f = parse_field("[-y, x]", 2).unwrap();
    let m = ChartedManifold::euclidean(2);
    let tr = integrate(&f, &m, &[1.0, 0.0], (0.0, 1.0)).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf, &[0.0, 0.5, 1.0]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2"));
    let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
    let v: f64 = row[1].parse().unwrap();
    assert!((v - 0.5f64.cos()).abs() < 1e-10);
    assert_eq!(row[1].split('e').next().unwrap().replace(['-', '.'], "").len(), 12);
}
