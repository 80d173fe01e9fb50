use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use prfl_core::bayopt::BoConfig;
use prfl_core::forward::{ForwardOptions, PriceSignal};
use prfl_core::gp::{chol_append, matern_kernel, GpState, Hyperparams};
use prfl_core::identify::{
    self, log_log_slope, noise_gap_experiment, nrmse, posterior_slice, read_dataset_csv, write_dataset_csv,
    write_gap_csv, write_slice_csv, IdentMetrics, IdentResult, NoiseSpec, ResponseSample, Surrogate,
};
use prfl_core::model::{validate_model, AggregateModel};
use prfl_core::scenario::{generate_prices, sample_fleet, synthesize_dataset, write_prices_csv};
use prfl_core::theta::{flatten_theta, ThetaEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

const FLEET: &str = "fleet.json";
const PRICES: &str = "prices.csv";
const TRAIN: &str = "train.csv";
const TEST: &str = "test.csv";
const RESULT: &str = "ident.json";
const GP: &str = "gp.json";

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn truth_fleet(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<AggregateModel> {
    let model = match &cfg.fleet_path {
        Some(p) => AggregateModel::from_json(&fs::read_to_string(p)?)?,
        None => {
            if let Err(e) = cfg.fleet.validate() {
                bail!("invalid fleet spec: {e}");
            }
            sample_fleet(&cfg.fleet, rng)?
        }
    };
    let report = validate_model(&model);
    if !report.ok {
        bail!("invalid fleet: {report}");
    }
    Ok(model)
}

fn load_fleet(cfg: &RunConfig) -> Result<AggregateModel> {
    let path = cfg.fleet_path.clone().unwrap_or_else(|| cfg.out_dir.join(FLEET));
    Ok(AggregateModel::from_json(
        &fs::read_to_string(&path).with_context(|| format!("reading {} (run `gen` first)", path.display()))?,
    )?)
}

fn surrogate(cfg: &RunConfig, template: AggregateModel) -> Result<Surrogate> {
    Ok(Surrogate::new(template, cfg.selection()?, cfg.bounds.clone(), cfg.mode))
}

fn bo_config(cfg: &RunConfig) -> BoConfig {
    BoConfig {
        budget: cfg.budget,
        ..BoConfig::default()
    }
}

pub fn gen(cfg: &RunConfig) -> Result<()> {
    let mut r = rng(cfg.seeds.data, 0);
    let model = truth_fleet(cfg, &mut r)?;
    let periods = model.grid.periods;
    let days = cfg.train_days + cfg.test_days;
    let prices = generate_prices(&cfg.prices, periods, days, &mut r)?;
    if prices.len() < days {
        bail!("price source has {} days, need {days}", prices.len());
    }
    let data = synthesize_dataset(
        &model,
        &prices[..days],
        &cfg.noise.spec(periods),
        cfg.mode,
        &ForwardOptions::for_mode(cfg.mode),
        &mut r,
    )?;
    fs::write(cfg.out_dir.join(FLEET), model.to_json()?)?;
    write_prices_csv(&prices[..days], create(&cfg.out_dir, PRICES)?)?;
    let (train, test) = data.samples.split_at(cfg.train_days);
    write_dataset_csv(train, create(&cfg.out_dir, TRAIN)?)?;
    if !test.is_empty() {
        write_dataset_csv(test, create(&cfg.out_dir, TEST)?)?;
    }
    println!(
        "wrote {} storages, {} adjustables, {} train and {} test days to {}",
        model.storages.len(),
        model.adjustables.len(),
        train.len(),
        test.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<ResponseSample>> {
    Ok(read_dataset_csv(open(path)?)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "absent".into())
}

pub fn identify(cfg: &RunConfig) -> Result<()> {
    let template = load_fleet(cfg)?;
    let sur = surrogate(cfg, template)?;
    let train = read_samples(&cfg.out_dir.join(TRAIN))?;
    let test_path = cfg.out_dir.join(TEST);
    let test = if test_path.exists() {
        Some(read_samples(&test_path)?)
    } else {
        None
    };
    let result = identify::identify(&train, test.as_deref(), &sur, &bo_config(cfg), &mut rng(cfg.seeds.opt, 1))?;
    fs::write(cfg.out_dir.join(RESULT), serde_json::to_string_pretty(&result)?)?;
    result.trace.write_csv(create(&cfg.out_dir, "trace.csv")?)?;
    if let Some(gp) = &result.gp {
        // Slices come from the saved surrogate so `slice` reproduces them exactly.
        let saved = gp.to_json()?;
        fs::write(cfg.out_dir.join(GP), &saved)?;
        write_slices(cfg, &sur, &GpState::from_json(&saved)?, &result)?;
    }
    println!(
        "f_hat {:.6e}  nrmse train {}  test {}  infeasible {:.1}%",
        result.f_hat,
        fmt_opt(Some(result.nrmse_train)),
        fmt_opt(result.nrmse_test),
        100.0 * result.infeasible_rate
    );
    Ok(())
}

/// Coordinate pairs among the first storage's parameters.
fn default_pairs(sur: &Surrogate) -> Vec<(usize, usize)> {
    let first: Vec<usize> = sur
        .layout()
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e, ThetaEntry::Storage { index: 0, .. }))
        .map(|(i, _)| i)
        .collect();
    let mut pairs = Vec::new();
    for (k, &a) in first.iter().enumerate() {
        for &b in &first[k + 1..] {
            pairs.push((a, b));
        }
    }
    pairs
}

fn write_slices(cfg: &RunConfig, sur: &Surrogate, gp: &GpState, result: &IdentResult) -> Result<Vec<PathBuf>> {
    let bx = sur.search_box()?;
    let labels = &result.labels;
    let pairs = cfg.slice.pairs.clone().unwrap_or_else(|| default_pairs(sur));
    let mut written = Vec::new();
    for (a, b) in pairs {
        if a >= labels.len() || b >= labels.len() {
            bail!("slice pair ({a}, {b}) outside the {}-parameter vector", labels.len());
        }
        let rows = posterior_slice(gp, &bx, &[a, b], cfg.slice.resolution, result.theta_hat.values())?;
        let name = format!("slice_{a}_{b}.csv");
        write_slice_csv(&rows, &[labels[a].clone(), labels[b].clone()], create(&cfg.out_dir, &name)?)?;
        written.push(cfg.out_dir.join(name));
    }
    Ok(written)
}

fn load_result(cfg: &RunConfig) -> Result<IdentResult> {
    let path = cfg.out_dir.join(RESULT);
    Ok(serde_json::from_str(
        &fs::read_to_string(&path).with_context(|| format!("reading {} (run `identify` first)", path.display()))?,
    )?)
}

pub fn eval(cfg: &RunConfig, data: Option<PathBuf>) -> Result<()> {
    let truth = load_fleet(cfg)?;
    let sur = surrogate(cfg, truth.clone())?;
    let result = load_result(cfg)?;
    let samples = read_samples(&data.unwrap_or_else(|| cfg.out_dir.join(TEST)))?;
    let model = sur.model_at(&result.theta_hat)?;
    let est = sur.predict_all(&model, &samples)?;
    let obs: Vec<Vec<f64>> = samples.iter().map(|s| s.p_obs.clone()).collect();
    let theta_true = flatten_theta(&truth, &sur.selection, &sur.bounds)?;
    let beta = identify::beta_deviation(&theta_true, &result.theta_hat)?;

    let mut out = create(&cfg.out_dir, "eval.csv")?;
    writeln!(out, "day,t,p_obs,p_pred")?;
    for (d, (o, e)) in obs.iter().zip(&est).enumerate() {
        for (t, (a, b)) in o.iter().zip(e).enumerate() {
            writeln!(out, "{d},{t},{a:.16e},{b:.16e}")?;
        }
    }
    out.flush()?;
    let metrics = IdentMetrics {
        nrmse_train: Some(result.nrmse_train),
        nrmse_test: Some(nrmse(&obs, &est)?),
        beta: Some(beta.beta),
        gap: None,
        infeasible_rate: Some(result.infeasible_rate),
    };
    fs::write(cfg.out_dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    println!(
        "nrmse {}  beta vs truth {:.4} ({} coordinates dropped)",
        fmt_opt(metrics.nrmse_test),
        beta.beta,
        beta.dropped.len()
    );
    Ok(())
}

pub fn theorem1(cfg: &RunConfig) -> Result<()> {
    let t1 = &cfg.theorem1;
    let mut r = rng(cfg.seeds.data, 2);
    let truth = truth_fleet(cfg, &mut r)?;
    let periods = truth.grid.periods;
    let sur = surrogate(cfg, truth.clone())?;
    let theta = flatten_theta(&truth, &sur.selection, &sur.bounds)?;
    let spec = NoiseSpec::iid(periods, t1.var_agg, t1.var_fix);
    let price_spec = cfg.prices.clone();
    let day = |r: &mut ChaCha8Rng| -> PriceSignal {
        generate_prices(&price_spec, periods, 1, r)
            .map(|mut d| d.remove(0))
            .expect("price generation checked by config")
    };
    let stats = noise_gap_experiment(&sur, &theta, &spec, &t1.counts, t1.trials, day, &mut r)?;
    write_gap_csv(&stats, create(&cfg.out_dir, "gap.csv")?)?;
    for s in &stats {
        println!(
            "N={:<6} gap {:.5} +- {:.5} (target {:.4})",
            s.n, s.mean_gap, s.std_err, s.target
        );
    }
    if let Some(slope) = log_log_slope(&stats) {
        println!("variance log-log slope {slope:.3}");
    }
    Ok(())
}

pub fn bench_chol(cfg: &RunConfig) -> Result<()> {
    let b = &cfg.bench;
    let mut sizes = b.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() || b.repeats == 0 || b.dim == 0 {
        bail!("bench needs sizes, repeats >= 1 and dim >= 1");
    }
    let mut r = rng(cfg.seeds.data, 3);
    let eta = Hyperparams::default();
    let mut out = create(&cfg.out_dir, "bench_chol.csv")?;
    writeln!(out, "n,append_s,refit_s,ratio")?;
    for &n in &sizes {
        let x: Vec<Vec<f64>> = (0..=n).map(|_| (0..b.dim).map(|_| r.random::<f64>()).collect()).collect();
        let y = vec![0.0; n + 1];
        let state = GpState::fit(x[..n].to_vec(), y[..n].to_vec(), eta)?;
        let kv = kernel_column(&x[..n], &x[n], &eta);
        let k_new = eta.alpha + eta.eps * eta.eps;
        let mut append = Vec::with_capacity(b.repeats);
        let mut refit = Vec::with_capacity(b.repeats);
        for _ in 0..b.repeats {
            let t = Instant::now();
            chol_append(state.l(), state.l_inv(), &kv, k_new)?;
            append.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            GpState::fit(x.clone(), y.clone(), eta)?;
            refit.push(t.elapsed().as_secs_f64());
        }
        let (a, f) = (median(&mut append), median(&mut refit));
        writeln!(out, "{n},{a:.6e},{f:.6e},{:.6e}", a / f)?;
        println!("n={n:<5} append {:.3} ms  refit {:.3} ms", a * 1e3, f * 1e3);
    }
    out.flush()?;
    Ok(())
}

fn kernel_column(x: &[Vec<f64>], new: &[f64], eta: &Hyperparams) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().map(|p| matern_kernel(eta, p, new, false)))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn slice(cfg: &RunConfig) -> Result<()> {
    let sur = surrogate(cfg, load_fleet(cfg)?)?;
    let result = load_result(cfg)?;
    let path = cfg.out_dir.join(GP);
    let gp = GpState::from_json(
        &fs::read_to_string(&path).with_context(|| format!("reading {} (run `identify` first)", path.display()))?,
    )?;
    for p in write_slices(cfg, &sur, &gp, &result)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
