//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, Axis};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use shiftshare::bootstrap::{bootstrap_distribution, critical_value_and_pvalue, run_bootstrap};
use shiftshare::data::{load_csv, stack_panel, Schema, INTERCEPT};
use shiftshare::diagnostics::{share_corr_check, weights_from_primitives, PrimitiveSpec, Regime};
use shiftshare::long_panel::{decompose_score, longpanel_se, Bandwidth};
use shiftshare::mc::{fit_shares_dgp, fit_shocks_dgp, rejection_study, LongPanelBase, StudyTest, SyntheticBase};
use shiftshare::shares_test::{influence_rows, PeriodSelection};
use shiftshare::shocks::{
    logit_centers, logit_moment_set, projection_shock_residual, ridge_shock_residual, SectorClustering,
    ShockResidualSpec,
};
use shiftshare::{
    fit_tsls, run_shares_test, run_shocks_test, BootstrapConfig, Dataset, InfluenceMatrix, PanelParts, Scheme,
    SharesTestOptions, ShocksTestOptions,
};

type Rng8 = StdRng;

fn rng(seed: u64) -> Rng8 {
    StdRng::seed_from_u64(seed)
}

fn gauss<R: Rng>(r: &mut R) -> f64 {
    r.sample(StandardNormal)
}

/// Outcome of one criterion: a detail line, or the reason it failed.
type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    check(elapsed < limit, || {
        format!("{what} took {:.1} s, limit {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

/// Gauss-Jordan inverse with partial pivoting.
fn inv(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut out = Array2::<f64>::eye(n);
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs()))
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

fn wls(a: &Array2<f64>, y: &Array1<f64>, w: &Array1<f64>) -> Array1<f64> {
    let aw = a * &w.view().insert_axis(Axis(1));
    inv(&aw.t().dot(a)).dot(&aw.t().dot(y))
}

/// Random panel with an intercept, `d - 1` further controls and a structural outcome.
fn random_panel(seed: u64, n: usize, nt: usize, p: usize, d: usize, clusters: usize) -> Dataset {
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

fn tsls_oracle() -> Verdict {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let n = r.random_range(4..=50);
        let d = r.random_range(1..=3);
        let p = r.random_range(1..=5);
        let nt = r.random_range(1..=2);
        let ds = random_panel(10_000 + k, n.max(d + 2), nt, p, d, 4);
        let st = stack_panel(&ds);
        let fit = fit_tsls(&st).map_err(|e| format!("instance {k}: {e}"))?;
        // explicit first stage on (Z, W), then OLS of y on (X_hat, W)
        let a = concatenate![Axis(1), st.z.view().insert_axis(Axis(1)), st.w.view()];
        let x_hat = a.dot(&wls(&a, &st.x, &st.weight));
        let second = concatenate![Axis(1), x_hat.view().insert_axis(Axis(1)), st.w.view()];
        let coef = wls(&second, &st.y, &st.weight);
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
        worst = worst.max(rel(fit.beta, coef[0]));
        for (g, w) in fit.gamma_s.iter().zip(coef.slice(s![1..])) {
            worst = worst.max(rel(*g, *w));
        }
    }
    check(worst <= 1e-9, || format!("largest relative gap {worst:.2e}"))?;
    within(start.elapsed(), Duration::from_secs(5), "100 fits")?;
    Ok(format!("100 instances, largest relative gap {worst:.1e}"))
}

/// Integer entries with zero column sums, so every bootstrap sum is exact.
fn integer_psi(r: &mut Rng8, b: usize, q: usize) -> Array2<f64> {
    let mut psi = Array2::from_shape_fn((b, q), |_| r.random_range(-20..=20) as f64);
    for j in 0..q {
        let head: f64 = psi.column(j).iter().take(b - 1).sum();
        psi[[b - 1, j]] = -head;
    }
    psi
}

fn enumerate(psi: &Array2<f64>) -> Vec<f64> {
    let (b, q) = psi.dim();
    let mut out: Vec<f64> = (0u64..1 << b)
        .map(|pattern| {
            (0..q)
                .map(|j| {
                    (0..b)
                        .map(|i| if pattern >> i & 1 == 1 { -psi[[i, j]] } else { psi[[i, j]] })
                        .sum::<f64>()
                        .abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

fn bootstrap_exactness() -> Verdict {
    let start = Instant::now();
    let mut r = rng(77);
    let mut cases = 0;
    for case in 0..60u64 {
        let b = r.random_range(2..=12);
        let q = r.random_range(1..=4);
        let psi = integer_psi(&mut r, b, q);
        let exact = enumerate(&psi);
        let cfg = BootstrapConfig {
            b: 1 << b,
            scheme: Scheme::Rademacher,
            alpha: 0.05,
            seed: case,
        };
        let dist = bootstrap_distribution(psi.view(), &cfg);
        check(dist.draws() == exact.as_slice(), || format!("case {case}: draws differ (b_eff {b}, q {q})"))?;

        let raw = Array1::from_shape_fn(q, |j| psi.column(j).sum() + r.random_range(-30..=30) as f64);
        let infl = InfluenceMatrix {
            psi_hat: psi.clone(),
            sigma_hat: Array1::ones(q),
            raw_stats: raw.clone(),
            labels: (0..q).map(|j| format!("m{j}")).collect(),
            dropped: vec![],
        };
        for alpha in [0.01, 0.05, 0.1, 0.25] {
            let res = run_bootstrap(&infl, &BootstrapConfig { alpha, ..cfg }, serde_json::Value::Null)
                .map_err(|e| e.to_string())?;
            let count = exact.len();
            let t_n = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let k = ((1.0 - alpha) * count as f64).ceil() as usize;
            let exceed = exact.iter().filter(|&&v| v >= t_n).count();
            let p = (1 + exceed) as f64 / (count + 1) as f64;
            check(res.t_n == t_n && res.c_hat == exact[k - 1] && res.p_value == p, || {
                format!("case {case}, alpha {alpha}: engine ({}, {}, {}) vs ({t_n}, {}, {p})", res.t_n, res.c_hat, res.p_value, exact[k - 1])
            })?;
            let (c, p2, reject) = critical_value_and_pvalue(t_n, &exact, alpha);
            check(c == exact[k - 1] && p2 == p && reject == (t_n > c), || format!("case {case}: order statistics"))?;
        }
        cases += 1;
    }
    within(start.elapsed(), Duration::from_secs(10), "enumeration")?;
    Ok(format!("{cases} influence matrices with b_eff <= 12, q <= 4"))
}

fn just_identified() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let ds = random_panel(500 + seed, 20 + 3 * seed as usize, 1, 1, 2, 6);
        let st = stack_panel(&ds);
        let fit = fit_tsls(&st).map_err(|e| e.to_string())?;
        let (_, _, raw) = influence_rows(&st, &fit, st.s.view()).map_err(|e| e.to_string())?;
        let scale: f64 = (0..st.rows()).map(|r| (st.weight[r] * st.s[[r, 0]] * fit.eps_hat[r]).abs()).sum();
        worst = worst.max(raw[0].abs() / scale);
        let opts = SharesTestOptions {
            periods: PeriodSelection::Pooled,
            ..Default::default()
        };
        let res = run_shares_test(&ds, &opts).map_err(|e| e.to_string())?;
        check(res.degenerate && res.t_n == 0.0, || format!("seed {seed}: statistic {}", res.t_n))?;
    }
    check(worst <= 1e-8, || format!("raw moment {worst:.2e} of its scale"))?;
    Ok(format!("20 panels, raw moment at most {worst:.1e} of its scale"))
}

fn mc_bound(level: f64, reps: usize) -> f64 {
    (level * (1.0 - level) / reps as f64).sqrt()
}

fn shares_size(reps: usize) -> Verdict {
    let start = Instant::now();
    let ds: Dataset = SyntheticBase::shares_default()
        .build(SyntheticBase::DEFAULT_SEED)
        .map_err(|e| e.to_string())?;
    let fit = fit_tsls(&stack_panel(&ds)).map_err(|e| e.to_string())?;
    let dgp = fit_shares_dgp(&ds, &fit).map_err(|e| e.to_string())?.with_seed(1);
    let test = StudyTest::Shares(SharesTestOptions {
        sic_level: Some(2),
        periods: PeriodSelection::Pooled,
        bootstrap: BootstrapConfig {
            b: 500,
            seed: 1,
            ..Default::default()
        },
        ..Default::default()
    });
    let row = rejection_study(&dgp, &test, reps, "shares").map_err(|e| e.to_string())?;
    let rate = row.rates[1];
    let upper = 0.05 + 3.0 * mc_bound(0.05, reps);
    check(row.failures == 0, || format!("{} failed replications", row.failures))?;
    check(row.moments.len() == 20, || format!("{} moments", row.moments.len()))?;
    check(rate <= upper, || format!("5% rejection rate {rate:.3} above {upper:.3}"))?;
    Ok(format!(
        "{reps} reps, B = 500: rejection {:.3} / {rate:.3} / {:.3} at 1/5/10%, bound {upper:.3} ({:.0} s)",
        row.rates[0],
        row.rates[2],
        start.elapsed().as_secs_f64()
    ))
}

fn shocks_size(reps: usize, smoke: usize) -> Verdict {
    let ds: Dataset = SyntheticBase::shocks_default()
        .build(SyntheticBase::DEFAULT_SEED)
        .map_err(|e| e.to_string())?;
    let dgp = fit_shocks_dgp(&ds, shiftshare::mc::DEFAULT_FIT_LAMBDA)
        .map_err(|e| e.to_string())?
        .with_seed(1);
    let g = logit_moment_set();
    let test = StudyTest::Shocks {
        moments: &g,
        opts: ShocksTestOptions {
            e_method: ShockResidualSpec::Ridge { lambda: 1e-6 },
            clustering: SectorClustering::BySectorCluster,
            bootstrap: BootstrapConfig {
                b: 500,
                seed: 1,
                ..Default::default()
            },
        },
    };
    let start = Instant::now();
    let quick = rejection_study(&dgp, &test, smoke, "smoke").map_err(|e| e.to_string())?;
    let smoke_time = start.elapsed();
    within(smoke_time, Duration::from_secs(180), "smoke run")?;
    check(quick.failures == 0, || format!("{} failed smoke replications", quick.failures))?;
    let row = rejection_study(&dgp, &test, reps, "shocks").map_err(|e| e.to_string())?;
    check(row.failures == 0, || format!("{} failed replications", row.failures))?;
    let rate = row.rates[1];
    check((rate - 0.05).abs() <= 0.03, || format!("5% rejection rate {rate:.3}"))?;
    Ok(format!(
        "{reps} reps, B = 500: rejection {:.3} / {rate:.3} / {:.3} at 1/5/10%; {smoke}-rep smoke run {:.0} s",
        row.rates[0],
        row.rates[2],
        smoke_time.as_secs_f64()
    ))
}

fn logit_grid() -> Verdict {
    let g = logit_moment_set::<f64>();
    check(g.q() == 20, || format!("{} moments", g.q()))?;
    let centers = logit_centers();
    check(centers.len() == 19, || format!("{} centres", centers.len()))?;
    let none = ArrayView1::<f64>::from(&[]);
    let mut worst_fd = 0.0f64;
    for (k, &c) in centers.iter().enumerate() {
        check((c - (-2.25 + 0.25 * k as f64)).abs() < 1e-15, || format!("centre {k} is {c}"))?;
        check((g.eval(k + 1, c, none, none) - 0.25).abs() < 1e-15, || format!("g at centre {c}"))?;
        check(g.deval(k + 1, c, none, none).abs() < 1e-15, || format!("g' at centre {c}"))?;
        for e in [-4.0, -1.3, -0.2, 0.05, 0.9, 2.6, 30.0] {
            let h = 1e-5;
            let fd = (g.eval(k + 1, e + h, none, none) - g.eval(k + 1, e - h, none, none)) / (2.0 * h);
            worst_fd = worst_fd.max((fd - g.deval(k + 1, e, none, none)).abs());
        }
    }
    check(worst_fd <= 1e-6, || format!("finite difference gap {worst_fd:.2e}"))?;
    Ok(format!("20 moments, centres -2.25..2.25, finite difference gap {worst_fd:.1e}"))
}

fn ridge_and_projection() -> Verdict {
    let ds = random_panel(31, 40, 2, 8, 2, 5);
    let fit = fit_tsls(&stack_panel(&ds)).map_err(|e| e.to_string())?;
    let p = ds.p();
    let mut worst = 0.0f64;
    for lambda in [0.0, 1e-6, 1e-2, 1.0, 100.0] {
        let e = ridge_shock_residual(&ds, fit.pi_hat.view(), lambda).map_err(|e| e.to_string())?;
        for t in 0..ds.periods() {
            let s_t = ds.shares().slice(s![.., t, ..]).to_owned();
            let w_t = ds.controls().slice(s![.., t, ..]).to_owned();
            let resid = &ds.instrument().column(t) - &w_t.dot(&fit.pi_hat);
            let lhs = (s_t.t().dot(&s_t) + Array2::<f64>::eye(p) * lambda).dot(&e.e_hat.row(t));
            let rhs = s_t.t().dot(&resid);
            let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max((lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
        }
    }
    check(worst <= 1e-10, || format!("normal-equation residual {worst:.2e}"))?;
    let huge = ridge_shock_residual(&ds, fit.pi_hat.view(), 1e14).map_err(|e| e.to_string())?;
    let shrunk = huge.e_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check(shrunk < 1e-10, || format!("lambda = 1e14 leaves {shrunk:.2e}"))?;

    let mut r = rng(8);
    let shocks = Array2::from_shape_fn((3, 15), |_| gauss(&mut r));
    let q = Array2::from_shape_fn((15, 4), |_| gauss(&mut r));
    let e = projection_shock_residual(shocks.view(), q.view()).map_err(|e| e.to_string())?;
    let orth = q.t().dot(&e.e_hat.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check(orth <= 1e-10, || format!("Q'E = {orth:.2e}"))?;
    Ok(format!("ridge residual {worst:.1e}, Q'E {orth:.1e}, shrinkage to {shrunk:.1e}"))
}

fn long_panel_fit(base: &LongPanelBase, seed: u64) -> (f64, f64, f64, usize) {
    let ds: Dataset = base.build(seed).unwrap();
    let fit = fit_tsls(&stack_panel(&ds)).unwrap();
    let v = longpanel_se(&decompose_score(&ds, &fit).unwrap(), Bandwidth::Auto).unwrap();
    (fit.beta, v.se_beta, v.term_zeta, v.hac_bandwidth)
}

/// Expected Bartlett estimate of an i.i.d. series' variance, relative to the truth.
fn bartlett_bias(periods: usize, lags: usize) -> f64 {
    let t = periods as f64;
    let tail: f64 = (1..=lags)
        .map(|k| (1.0 - k as f64 / (lags + 1) as f64) * (t - k as f64) / t)
        .sum();
    (1.0 - 1.0 / t) - 2.0 / t * tail
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn long_panel_calibration() -> Verdict {
    let start = Instant::now();
    let base = LongPanelBase::default();
    let reps = 2000u64;
    let draws: Vec<(f64, f64, f64, usize)> = (0..reps).into_par_iter().map(|r| long_panel_fit(&base, r)).collect();
    let betas: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let (_, sd) = mean_sd(&betas);
    let se = draws.iter().map(|d| d.1).sum::<f64>() / reps as f64;
    let ratio = se / sd;
    check((0.8..=1.25).contains(&ratio), || format!("mean se / sd of beta = {ratio:.3}"))?;

    // T * term_zeta, corrected for the estimator's small-sample bias, should not depend on T
    let scaled: Vec<(usize, f64, f64)> = [25usize, 50, 100]
        .iter()
        .map(|&periods| {
            let b = LongPanelBase { periods, ..base.clone() };
            let xs: Vec<f64> = (0..1000u64)
                .into_par_iter()
                .map(|r| {
                    let (_, _, term, lags) = long_panel_fit(&b, 50_000 + r);
                    periods as f64 * term / bartlett_bias(periods, lags)
                })
                .collect();
            let (m, sd) = mean_sd(&xs);
            (periods, m, sd / (xs.len() as f64).sqrt())
        })
        .collect();
    for w in scaled.windows(2) {
        let (ta, ma, sa) = w[0];
        let (tb, mb, sb) = w[1];
        let z = (ma - mb).abs() / (sa * sa + sb * sb).sqrt();
        check(z <= 3.0, || format!("T * term_zeta at T = {ta} and {tb}: {ma:.4} vs {mb:.4} ({z:.1} se)"))?;
    }
    let parts: Vec<String> = scaled.iter().map(|(t, m, se)| format!("T={t}: {m:.3}+-{se:.3}")).collect();
    Ok(format!(
        "se/sd {ratio:.3} over {reps} reps; adjusted T*term_zeta {} ({:.0} s)",
        parts.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

/// One-period panel with an intercept.
fn share_panel(shares: Array2<f64>, r: &mut Rng8) -> Dataset {
    let (n, p) = shares.dim();
    let codes: Vec<String> = (0..p).map(|j| format!("{}", 2000 + j)).collect();
    let x = Array2::from_shape_fn((n, 1), |_| gauss(r));
    PanelParts {
        unit_labels: (0..n).map(|i| format!("u{i}")).collect(),
        period_labels: vec!["1".into()],
        sector_cluster: codes.iter().map(|c| c[..3].to_string()).collect(),
        sector_codes: codes,
        control_names: vec![INTERCEPT.into()],
        y: x.clone(),
        x,
        w: Array3::ones((n, 1, 1)),
        s_z: shares.insert_axis(Axis(1)),
        s_x: None,
        shock_z: Array2::from_shape_fn((1, p), |_| gauss(r)),
        shock_x: None,
        reg_weight: Array2::ones((n, 1)),
        obs_cluster: (0..n).map(|i| format!("c{i}")).collect(),
    }
    .build()
    .unwrap()
}

fn heterogeneity() -> Verdict {
    let start = Instant::now();
    let mut r = rng(91);
    let a = Array1::from_shape_fn(300, |_| r.random_range(0.0..1.0));
    let shares = Array2::from_shape_fn((300, 2), |(i, j)| if j == 0 { a[i] } else { 1.0 - a[i] });
    let rep = share_corr_check(&share_panel(shares, &mut r), 0.1).map_err(|e| e.to_string())?;
    let corr = rep.max_pair.as_ref().map(|m| m.2).unwrap_or(f64::NAN);
    check((corr + 1.0).abs() < 1e-12 && rep.flagged, || format!("adding-up correlation {corr}"))?;

    let mut worst_sum = 0.0f64;
    for _ in 0..200 {
        let (n, p) = (8, 4);
        let m = Array2::from_shape_fn((p, p), |_| gauss(&mut r));
        let spec = PrimitiveSpec {
            lambdas: Array2::from_shape_fn((n, p), |_| r.random_range(0.1..3.0)),
            var_matrix: m.t().dot(&m),
            regime: if r.random() { Regime::Shares } else { Regime::Shocks },
        };
        let v = Array2::from_shape_fn((n, p), |_| gauss(&mut r));
        let w = weights_from_primitives(&spec, v.view()).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((w.sum() - 1.0).abs());
    }
    check(worst_sum <= 1e-12, || format!("weights sum off by {worst_sum:.2e}"))?;

    // correlated shares, one unit whose first-stage effects have mixed signs
    let mixed = PrimitiveSpec {
        lambdas: ndarray::array![[1.0, 1.0], [10.0, -0.1]],
        var_matrix: ndarray::array![[1.0, 0.8], [0.8, 1.0]],
        regime: Regime::Shares,
    };
    let negative = (0..3600).find_map(|k| {
        let th = std::f64::consts::TAU * k as f64 / 3600.0;
        let v = ndarray::array![[th.cos(), th.sin()]];
        let w = weights_from_primitives(&mixed, v.view()).ok()?;
        w.iter().any(|&x| x < 0.0).then_some(th)
    });
    let angle = negative.ok_or("grid search found no negative weight")?;

    let (n, p) = (6, 4);
    let diag = PrimitiveSpec {
        lambdas: Array2::from_shape_fn((n, p), |_| r.random_range(0.01..5.0)),
        var_matrix: Array2::from_diag(&Array1::from_shape_fn(p, |_| r.random_range(0.1..3.0))),
        regime: Regime::Shares,
    };
    let m = Array2::from_shape_fn((p, p), |_| gauss(&mut r));
    let scalars = Array1::from_shape_fn(n, |_| r.random_range(0.01..5.0));
    let dense = PrimitiveSpec {
        lambdas: Array2::from_shape_fn((n, p), |(i, _)| scalars[i]),
        var_matrix: m.t().dot(&m),
        regime: Regime::Shares,
    };
    for spec in [&diag, &dense] {
        for k in 0..10_000 {
            let v = Array2::from_shape_fn((1, p), |_| gauss(&mut r));
            let w = weights_from_primitives(spec, v.view()).map_err(|e| e.to_string())?;
            check(w.iter().all(|&x| x >= -1e-12), || format!("negative weight at direction {k}"))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(60), "diagnostics")?;
    Ok(format!(
        "adding-up corr {corr:.0}, weight sums within {worst_sum:.0e}, negative weight at angle {angle:.3}, none in 2 x 10^4 PSD draws"
    ))
}

fn cli_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Runs the binary and returns its report with the `timestamp` object cut off.
fn report_without_timestamp(threads: usize, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shiftshare"))
        .current_dir(cli_root())
        .env_remove("SHIFTSHARE_THREADS")
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let cut = text.find("\"timestamp\"").ok_or("report has no timestamp")?;
    Ok(text[..cut].to_string())
}

fn determinism() -> Verdict {
    let data = [
        "--data",
        "data/sample/obs.csv",
        "--shocks",
        "data/sample/shocks.csv",
        "--config",
        "data/sample/config.json",
    ];
    let with = |cmd: &'static str, extra: &[&'static str]| -> Vec<&'static str> {
        let mut v = vec![cmd];
        v.extend_from_slice(&data);
        v.extend_from_slice(extra);
        v
    };
    let runs: Vec<Vec<&str>> = vec![
        with("overid-shares", &["--sic", "2", "--pool-time", "--B", "500", "--seed", "5"]),
        with("overid-shares", &["--B", "300", "--seed", "5", "--scheme", "mammen"]),
        with("overid-shocks", &["--B", "300", "--seed", "5"]),
        with("longpanel-se", &[]),
        with("diagnostics", &[]),
        with("validate", &[]),
        vec!["simulate", "--dgp", "shares", "--reps", "24", "--B", "100", "--seed", "5", "--sic", "2", "--pool-time"],
        vec!["simulate", "--dgp", "shocks", "--reps", "16", "--B", "100", "--seed", "5"],
    ];
    for args in &runs {
        let one = report_without_timestamp(1, args)?;
        for threads in [2, 8] {
            let other = report_without_timestamp(threads, args)?;
            check(one == other, || format!("{} differs at {threads} threads", args[0]))?;
        }
    }
    Ok(format!("{} runs covering every subcommand agree at 1, 2 and 8 threads", runs.len()))
}

fn adh_replication(dir: &Path) -> Verdict {
    let schema = Schema::from_json_file(dir.join("config.json")).map_err(|e| e.to_string())?;
    let ds: Dataset = load_csv(dir.join("obs.csv"), dir.join("shocks.csv"), &schema).map_err(|e| e.to_string())?;
    let boot = BootstrapConfig {
        b: 1000,
        ..Default::default()
    };
    let all = run_shares_test(
        &ds,
        &SharesTestOptions {
            bootstrap: boot,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let two_digit_first = run_shares_test(
        &ds,
        &SharesTestOptions {
            sic_level: Some(2),
            periods: PeriodSelection::Single(0),
            bootstrap: boot,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let shocks = run_shocks_test(
        &ds,
        &logit_moment_set(),
        &ShocksTestOptions {
            e_method: ShockResidualSpec::Ridge { lambda: 1e-5 },
            bootstrap: boot,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let targets = [
        ("four-digit, all periods", all.p_value, 0.127),
        ("two-digit, first period", two_digit_first.p_value, 0.002),
        ("shocks, lambda 1e-5", shocks.p_value, 0.0368),
    ];
    for (name, got, want) in targets {
        check((got - want).abs() <= 0.02, || format!("{name}: p = {got:.4}, expected {want}"))?;
    }
    Ok(format!(
        "p-values {:.3}, {:.3}, {:.4}",
        targets[0].1, targets[1].1, targets[2].1
    ))
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let adh = std::env::var_os("SHIFTSHARE_ADH_DIR").filter(|v| !v.is_empty()).map(PathBuf::from);
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Verdict>)> = vec![
        (1, "TSLS oracle", Box::new(tsls_oracle)),
        (2, "bootstrap exactness", Box::new(bootstrap_exactness)),
        (3, "just-identified degeneracy", Box::new(just_identified)),
        (4, "shares test size", Box::new(|| shares_size(1000))),
        (5, "shocks test size", Box::new(|| shocks_size(500, 100))),
        (6, "logit moment grid", Box::new(logit_grid)),
        (7, "ridge and projection residuals", Box::new(ridge_and_projection)),
        (8, "long-panel calibration", Box::new(long_panel_calibration)),
        (9, "heterogeneity diagnostics", Box::new(heterogeneity)),
        (10, "thread determinism", Box::new(determinism)),
    ];
    let quiet: Box<dyn Fn(&panic::PanicHookInfo) + Sync + Send> = Box::new(|_| {});
    let default_hook = panic::take_hook();
    panic::set_hook(quiet);
    let mut failed = 0;
    for (k, name, f) in &criteria {
        if !only.is_empty() && !only.contains(k) {
            continue;
        }
        let verdict = panic::catch_unwind(AssertUnwindSafe(|| f()))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        match verdict {
            Ok(detail) => println!("criterion {k}: PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {k}: FAIL {name}: {why}");
            }
        }
    }
    if only.is_empty() || only.contains(&11) {
        match &adh {
            None => println!("criterion 11: SKIP replication on supplied data: SHIFTSHARE_ADH_DIR is not set"),
            Some(dir) => match adh_replication(dir) {
                Ok(detail) => println!("criterion 11: PASS replication on supplied data: {detail}"),
                Err(why) => {
                    failed += 1;
                    println!("criterion 11: FAIL replication on supplied data: {why}");
                }
            },
        }
    }
    panic::set_hook(default_hook);
    if failed > 0 {
        eprintln!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
