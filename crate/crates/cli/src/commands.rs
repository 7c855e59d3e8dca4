use std::collections::HashMap;
use std::path::Path;
use std::time::{Instant, SystemTime};

use ndarray::Array2;
use serde_json::{json, Value};
use shiftshare::data::{load_csv, stack_panel, write_csv, Schema};
use shiftshare::diagnostics::{
    builtin_share_transforms, builtin_shock_transforms, share_corr_check, sign_diagnostic_shares,
    sign_diagnostic_shocks, within_cluster_shock_cov,
};
use shiftshare::long_panel::{decompose_score, longpanel_se, Bandwidth};
use shiftshare::mc::{
    fit_shares_dgp, fit_shocks_dgp, rejection_study, RejectionTable, StudyTest, SyntheticBase,
};
use shiftshare::shares_test::{FitMode, PeriodSelection};
use shiftshare::shocks::{MomentFunctionSet, MomentSpec, SectorClustering, ShockResidualSpec};
use shiftshare::{
    fit_tsls, run_shares_test, run_shocks_test, BootstrapConfig, Dataset, Scheme, SharesTestOptions,
    ShocksTestOptions,
};

use crate::report::{Report, Timestamp};
use crate::{
    BootstrapArgs, ClusteringArg, Cli, Command, DataArgs, DgpArg, DiagnosticsArgs, EMethodArg, Failure, FitModeArg,
    LongPanelArgs, SchemeArg, SharesArgs, SharesOptionArgs, ShocksArgs, ShocksOptionArgs, SimulateArgs,
};

struct Outcome {
    config: Value,
    seed: Option<u64>,
    result: Value,
    warnings: Vec<String>,
}

pub(crate) fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::OveridShares(a) => ("overid-shares", overid_shares(a)?),
        Command::OveridShocks(a) => ("overid-shocks", overid_shocks(a)?),
        Command::LongpanelSe(a) => ("longpanel-se", longpanel(a)?),
        Command::Diagnostics(a) => ("diagnostics", diagnostics(a)?),
        Command::Simulate(a) => ("simulate", simulate(a, cli.out.as_deref())?),
        Command::Validate(a) => ("validate", validate(a)?),
    };
    let report = Report {
        schema_version: crate::SCHEMA_VERSION,
        command: name.to_string(),
        config: outcome.config,
        seed: outcome.seed,
        result: outcome.result,
        warnings: outcome.warnings,
        timestamp: Timestamp::new(started, clock.elapsed()),
    };
    report.write(cli.out.as_deref())
}

fn to_value<S: serde::Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn load(args: &DataArgs) -> Result<(Dataset, Schema), Failure> {
    for (role, path) in [("data", &args.data), ("shocks", &args.shocks), ("config", &args.config)] {
        if !path.is_file() {
            return Err(Failure::Invalid(format!("--{role}: no such file {}", path.display())));
        }
    }
    let schema = Schema::from_json_file(&args.config)?;
    let ds = load_csv(&args.data, &args.shocks, &schema)?;
    Ok((ds, schema))
}

fn data_echo(args: &DataArgs, schema: &Schema) -> Value {
    json!({
        "data": args.data.display().to_string(),
        "shocks": args.shocks.display().to_string(),
        "config": args.config.display().to_string(),
        "schema": schema,
    })
}

fn dims(ds: &Dataset) -> Value {
    json!({"n": ds.n(), "periods": ds.periods(), "sectors": ds.p(), "controls": ds.d()})
}

fn scheme(s: SchemeArg) -> Scheme {
    match s {
        SchemeArg::Gaussian => Scheme::Gaussian,
        SchemeArg::Rademacher => Scheme::Rademacher,
        SchemeArg::Mammen => Scheme::Mammen,
        SchemeArg::Multinomial => Scheme::Multinomial,
    }
}

fn bootstrap(a: &BootstrapArgs) -> Result<BootstrapConfig, Failure> {
    let cfg = BootstrapConfig {
        b: a.b,
        scheme: scheme(a.scheme),
        alpha: a.alpha,
        seed: a.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn shares_options(ds: &Dataset, a: &SharesOptionArgs, bootstrap: BootstrapConfig) -> Result<SharesTestOptions, Failure> {
    let periods = match (&a.period, a.pool_time) {
        (Some(label), _) => {
            let t = ds
                .period_labels()
                .iter()
                .position(|p| p == label)
                .ok_or_else(|| Failure::Invalid(format!("--period: no period labelled `{label}`")))?;
            PeriodSelection::Single(t)
        }
        (None, true) => PeriodSelection::Pooled,
        (None, false) => PeriodSelection::All,
    };
    Ok(SharesTestOptions {
        sic_level: a.sic.map(usize::from),
        periods,
        fit_mode: match a.fit_mode {
            FitModeArg::Pooled => FitMode::Pooled,
            FitModeArg::PerPeriod => FitMode::PerPeriod,
        },
        bootstrap,
    })
}

fn overid_shares(a: &SharesArgs) -> Result<Outcome, Failure> {
    let boot = bootstrap(&a.bootstrap)?;
    let (ds, schema) = load(&a.data)?;
    let opts = shares_options(&ds, &a.options, boot)?;
    let res = run_shares_test(&ds, &opts)?;
    Ok(Outcome {
        config: json!({"input": data_echo(&a.data, &schema), "test": opts}),
        seed: Some(boot.seed),
        result: json!({"dimensions": dims(&ds), "test": res}),
        warnings: Vec::new(),
    })
}

fn read_projection(path: &Path, ds: &Dataset) -> Result<Array2<f64>, Failure> {
    let bad = |m: String| Failure::Invalid(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.get(0) != Some("sector") || headers.len() < 2 {
        return Err(bad("expected a `sector` column followed by direction columns".into()));
    }
    let k = headers.len() - 1;
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let code = rec.get(0).unwrap_or("").to_string();
        let vals = (1..=k)
            .map(|c| {
                let raw = rec.get(c).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("row {}, column `{}`: bad value `{raw}`", line + 2, &headers[c])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.insert(code, vals);
    }
    let mut q = Array2::zeros((ds.p(), k));
    for (j, code) in ds.sector_codes().iter().enumerate() {
        let r = rows
            .get(code)
            .ok_or_else(|| bad(format!("no row for sector `{code}`")))?;
        for (c, v) in r.iter().enumerate() {
            q[[j, c]] = *v;
        }
    }
    Ok(q)
}

fn shocks_options(
    ds: &Dataset,
    a: &ShocksOptionArgs,
    bootstrap: BootstrapConfig,
) -> Result<(ShocksTestOptions<f64>, MomentSpec, Value), Failure> {
    let spec = match a.moments.as_str() {
        "logit20" => MomentSpec::logit20(),
        path => {
            if !Path::new(path).is_file() {
                return Err(Failure::Invalid(format!("moment file {path} does not exist")));
            }
            MomentSpec::from_json_file(path)?
        }
    };
    let method = a.e_method.unwrap_or(if a.projection.is_some() {
        EMethodArg::Projection
    } else {
        EMethodArg::Ridge
    });
    let (e_method, e_echo) = match (method, &a.projection) {
        (EMethodArg::Projection, Some(p)) => {
            let q = read_projection(p, ds)?;
            let echo = json!({"method": "projection", "file": p.display().to_string(), "directions": q.ncols()});
            (ShockResidualSpec::Projection { q }, echo)
        }
        (EMethodArg::Projection, None) => {
            return Err(Failure::Invalid("--e-method projection needs a --projection file".into()));
        }
        (EMethodArg::Ridge, Some(_)) => {
            return Err(Failure::Invalid("--projection cannot be combined with --e-method ridge".into()));
        }
        (EMethodArg::Ridge, None) => {
            if !(a.lambda >= 0.0) || !a.lambda.is_finite() {
                return Err(Failure::Invalid(format!("--lambda must be nonnegative, got {}", a.lambda)));
            }
            (ShockResidualSpec::Ridge { lambda: a.lambda }, json!({"method": "ridge", "lambda": a.lambda}))
        }
    };
    let clustering = match a.clustering {
        ClusteringArg::None => SectorClustering::None,
        ClusteringArg::Sector => SectorClustering::BySector,
        ClusteringArg::SectorCluster => SectorClustering::BySectorCluster,
    };
    let echo = json!({
        "e_method": e_echo,
        "clustering": clustering,
        "moments": spec,
        "bootstrap": bootstrap,
    });
    Ok((
        ShocksTestOptions {
            e_method,
            clustering,
            bootstrap,
        },
        spec,
        echo,
    ))
}

fn overid_shocks(a: &ShocksArgs) -> Result<Outcome, Failure> {
    let boot = bootstrap(&a.bootstrap)?;
    let (ds, schema) = load(&a.data)?;
    let (opts, spec, echo) = shocks_options(&ds, &a.options, boot)?;
    let g = MomentFunctionSet::from_spec(&spec)?;
    let res = run_shocks_test(&ds, &g, &opts)?;
    Ok(Outcome {
        config: json!({"input": data_echo(&a.data, &schema), "test": echo}),
        seed: Some(boot.seed),
        result: json!({"dimensions": dims(&ds), "test": res}),
        warnings: Vec::new(),
    })
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth, Failure> {
    if s == "auto" {
        return Ok(Bandwidth::Auto);
    }
    s.parse()
        .map(Bandwidth::Fixed)
        .map_err(|_| Failure::Invalid(format!("--bandwidth must be `auto` or a lag count, got `{s}`")))
}

fn longpanel(a: &LongPanelArgs) -> Result<Outcome, Failure> {
    let bandwidth = parse_bandwidth(&a.bandwidth)?;
    let (ds, schema) = load(&a.data)?;
    let fit = fit_tsls(&stack_panel(&ds))?;
    let dec = decompose_score(&ds, &fit)?;
    let mut v = longpanel_se(&dec, bandwidth)?;
    v.beta_hat = Some(fit.beta);
    let warnings = v.warning.iter().cloned().collect();
    Ok(Outcome {
        config: json!({"input": data_echo(&a.data, &schema), "bandwidth": bandwidth}),
        seed: None,
        result: json!({"dimensions": dims(&ds), "d_hat": dec.d_hat, "variance": v}),
        warnings,
    })
}

fn diagnostics(a: &DiagnosticsArgs) -> Result<Outcome, Failure> {
    if !(a.lambda >= 0.0) || !a.lambda.is_finite() {
        return Err(Failure::Invalid(format!("--lambda must be nonnegative, got {}", a.lambda)));
    }
    let (ds, schema) = load(&a.data)?;
    let mut warnings = Vec::new();
    let mut section = |name: &str, r: shiftshare::Result<Value>| match r {
        Ok(v) => v,
        Err(e) => {
            warnings.push(format!("{name}: {e}"));
            json!({"skipped": e.to_string()})
        }
    };
    let corr = section("share correlations", share_corr_check(&ds, a.threshold).map(|r| to_value(&r)));
    let signs = section(
        "share signs",
        sign_diagnostic_shares(&ds, &builtin_share_transforms(&ds)).map(|r| to_value(&r)),
    );
    let shock_side = fit_tsls(&stack_panel(&ds)).and_then(|fit| {
        shiftshare::shocks::ridge_shock_residual(&ds, fit.pi_hat.view(), a.lambda)
    });
    let (shock_signs, cluster_cov) = match shock_side {
        Ok(e) => (
            section(
                "shock signs",
                sign_diagnostic_shocks(&ds, e.e_hat.view(), &builtin_shock_transforms(&ds)).map(|r| to_value(&r)),
            ),
            section(
                "within-cluster shock covariances",
                within_cluster_shock_cov(e.e_hat.view(), ds.sector_codes(), ds.sector_cluster()).map(|r| to_value(&r)),
            ),
        ),
        Err(err) => {
            let v = section("shock residual", Err(err));
            (v.clone(), v)
        }
    };
    Ok(Outcome {
        config: json!({
            "input": data_echo(&a.data, &schema),
            "threshold": a.threshold,
            "lambda": a.lambda,
        }),
        seed: None,
        result: json!({
            "dimensions": dims(&ds),
            "share_correlations": corr,
            "share_signs": signs,
            "shock_signs": shock_signs,
            "within_cluster_shock_covariance": cluster_cov,
        }),
        warnings,
    })
}

fn simulate(a: &SimulateArgs, out: Option<&Path>) -> Result<Outcome, Failure> {
    let boot = BootstrapConfig {
        b: a.b,
        scheme: scheme(a.scheme),
        alpha: 0.05,
        seed: a.seed,
    };
    boot.validate()?;
    let (base, base_echo) = match (&a.data, &a.shocks, &a.config) {
        (Some(data), Some(shocks), Some(config)) => {
            let args = DataArgs {
                data: data.clone(),
                shocks: shocks.clone(),
                config: config.clone(),
            };
            let (ds, schema) = load(&args)?;
            (ds, data_echo(&args, &schema))
        }
        (None, None, None) => {
            let synth = match a.dgp {
                DgpArg::Shares => SyntheticBase::shares_default(),
                DgpArg::Shocks => SyntheticBase::shocks_default(),
            };
            let ds = synth.build(a.base_seed)?;
            (ds, json!({"synthetic": synth, "seed": a.base_seed}))
        }
        _ => return Err(Failure::Invalid("--data, --shocks and --config go together".into())),
    };
    if let Some(dir) = &a.export_base {
        export_base(&base, dir)?;
    }

    let (row, test_echo) = match a.dgp {
        DgpArg::Shares => {
            let fit = fit_tsls(&stack_panel(&base))?;
            let dgp = fit_shares_dgp(&base, &fit)?.with_seed(a.seed);
            let opts = shares_options(&base, &a.shares, boot)?;
            let echo = json!({"test": opts, "parameters": {
                "a_eta": dgp.a_eta, "s_eta": dgp.s_eta, "a_zeta": dgp.a_zeta, "s_zeta": dgp.s_zeta,
                "beta_hat": dgp.beta_hat, "gamma_hat": dgp.gamma_hat.to_vec(),
            }});
            let label = shares_label(&opts);
            let row = study(&dgp, &StudyTest::Shares(opts), a.reps, &label)?;
            (row, echo)
        }
        DgpArg::Shocks => {
            if !(a.lambda_fit >= 0.0) || !a.lambda_fit.is_finite() {
                return Err(Failure::Invalid(format!("--lambda-fit must be nonnegative, got {}", a.lambda_fit)));
            }
            let dgp = fit_shocks_dgp(&base, a.lambda_fit)?.with_seed(a.seed);
            let (opts, spec, echo) = shocks_options(&base, &a.shocks_test, boot)?;
            let g = MomentFunctionSet::from_spec(&spec)?;
            let label = match &opts.e_method {
                ShockResidualSpec::Ridge { lambda } => format!("ridge lambda={lambda:e}"),
                ShockResidualSpec::Projection { .. } => "projection".to_string(),
            };
            let echo = json!({"test": echo, "lambda_fit": a.lambda_fit, "parameters": {
                "gamma_shock": dgp.gamma_shock.to_vec(),
                "sigma_eta": dgp.sigma_eta, "sigma_zeta": dgp.sigma_zeta,
                "alpha_hat": dgp.alpha_hat, "kappa_hat": dgp.kappa_hat, "sigma_xi": dgp.sigma_xi,
                "beta_hat": dgp.beta_hat,
            }});
            let row = study(&dgp, &StudyTest::Shocks { moments: &g, opts }, a.reps, &label)?;
            (row, echo)
        }
    };

    let table = RejectionTable::new(row.into_iter().collect());
    let text = table.to_text();
    match out {
        _ if table.rows.is_empty() => {}
        Some(path) => {
            let txt = path.with_extension("txt");
            std::fs::write(&txt, &text)
                .map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", txt.display())))?;
            print!("{text}");
        }
        None => eprint!("{text}"),
    }
    Ok(Outcome {
        config: json!({
            "dgp": match a.dgp { DgpArg::Shares => "shares", DgpArg::Shocks => "shocks" },
            "reps": a.reps,
            "base": base_echo,
            "process": test_echo,
        }),
        seed: Some(a.seed),
        result: json!({"dimensions": dims(&base), "table": table}),
        warnings: Vec::new(),
    })
}

fn study<D: shiftshare::mc::Dgp<f64>>(
    dgp: &D,
    test: &StudyTest<'_, f64>,
    reps: usize,
    label: &str,
) -> Result<Option<shiftshare::mc::RejectionRow>, Failure> {
    if reps == 0 {
        return Ok(None);
    }
    Ok(Some(rejection_study(dgp, test, reps, label)?))
}

fn shares_label(o: &SharesTestOptions) -> String {
    let level = o.sic_level.map_or("native codes".to_string(), |l| format!("{l}-digit"));
    format!("{level}, {} periods", o.periods)
}

fn export_base(ds: &Dataset, dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", dir.display())))?;
    let schema = write_csv(ds, dir.join("obs.csv"), dir.join("shocks.csv"))?;
    let text = serde_json::to_string_pretty(&schema).expect("schemas serialize");
    std::fs::write(dir.join("config.json"), text + "\n")
        .map_err(|e| Failure::Invalid(format!("cannot write config.json: {e}")))
}

fn validate(a: &DataArgs) -> Result<Outcome, Failure> {
    let (ds, schema) = load(a)?;
    let obs_clusters: std::collections::BTreeSet<&String> = ds.obs_cluster().iter().collect();
    let sector_clusters: std::collections::BTreeSet<&String> = ds.sector_cluster().iter().collect();
    Ok(Outcome {
        config: json!({"input": data_echo(a, &schema)}),
        seed: None,
        result: json!({
            "valid": true,
            "dimensions": dims(&ds),
            "periods": ds.period_labels(),
            "controls": ds.control_names(),
            "observation_clusters": obs_clusters.len(),
            "sector_clusters": sector_clusters.len(),
            "has_regressor_shares": ds.regressor_shares().is_some(),
            "has_regressor_shocks": ds.shock_x().is_some(),
        }),
        warnings: Vec::new(),
    })
}
