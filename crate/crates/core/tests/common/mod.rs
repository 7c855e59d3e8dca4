#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shiftshare::data::INTERCEPT;
use shiftshare::{Dataset, PanelParts};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inv(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut out = Array2::<f64>::eye(n);
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[[i, c]].abs().partial_cmp(&m[[j, c]].abs()).unwrap())
            .unwrap();
        for k in 0..n {
            m.swap([c, k], [piv, k]);
            out.swap([c, k], [piv, k]);
        }
        let d = m[[c, c]];
        for k in 0..n {
            m[[c, k]] /= d;
            out[[c, k]] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[[r, c]];
                for k in 0..n {
                    m[[r, k]] -= f * m[[c, k]];
                    out[[r, k]] -= f * out[[c, k]];
                }
            }
        }
    }
    out
}

/// Weighted least squares through the normal equations.
pub fn wls(a: &Array2<f64>, y: &Array1<f64>, w: &Array1<f64>) -> Array1<f64> {
    let aw = a * &w.view().insert_axis(ndarray::Axis(1));
    inv(&aw.t().dot(a)).dot(&aw.t().dot(y))
}

/// Random balanced panel with an intercept, `d - 1` further controls,
/// cluster labels cycling over `clusters`, and a structural outcome.
pub fn random_panel(seed: u64, n: usize, nt: usize, p: usize, d: usize, clusters: usize) -> Dataset {
    let mut r = rng(seed);
    let mut s_z = Array3::zeros((n, nt, p));
    for i in 0..n {
        for t in 0..nt {
            let raw: Vec<f64> = (0..p).map(|_| r.random::<f64>() + 0.05).collect();
            let mass = r.random_range(0.4..1.0) / raw.iter().sum::<f64>();
            for j in 0..p {
                s_z[[i, t, j]] = raw[j] * mass;
            }
        }
    }
    let shock_z = Array2::from_shape_fn((nt, p), |_| gauss(&mut r));
    let mut w = Array3::zeros((n, nt, d));
    let mut x = Array2::zeros((n, nt));
    let mut y = Array2::zeros((n, nt));
    for i in 0..n {
        for t in 0..nt {
            w[[i, t, 0]] = 1.0;
            for k in 1..d {
                w[[i, t, k]] = gauss(&mut r);
            }
            let z: f64 = (0..p).map(|j| s_z[[i, t, j]] * shock_z[[t, j]]).sum();
            let v = gauss(&mut r);
            x[[i, t]] = z + 0.3 * w[[i, t, d - 1]] + v;
            y[[i, t]] = 0.7 * x[[i, t]] + 0.2 + 0.5 * v + gauss(&mut r);
        }
    }
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..d).map(|k| format!("w{k}")));
    let codes: Vec<String> = (0..p).map(|j| format!("{}{}", 31 + j / 3, 10 + j)).collect();
    PanelParts {
        unit_labels: (0..n).map(|i| format!("u{i}")).collect(),
        period_labels: (0..nt).map(|t| format!("{}", 2000 + t)).collect(),
        sector_cluster: codes.iter().map(|c| c[..3].to_string()).collect(),
        sector_codes: codes,
        control_names: names,
        y,
        x,
        w,
        s_z,
        s_x: None,
        shock_z,
        shock_x: None,
        reg_weight: Array2::from_shape_fn((n, nt), |_| r.random_range(0.5..2.0)),
        obs_cluster: (0..n * nt).map(|k| format!("c{}", (k / nt) % clusters)).collect(),
    }
    .build()
    .unwrap()
}
