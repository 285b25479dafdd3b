use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2s_core::data::{
    generate_synthetic, load_dataset, save_dataset, save_dataset_inline, split_protocol, Dataset,
};
use s2s_core::eval::{cmc_protocol, embed_set, map_embedded, summary_csv, MultiQuery, Protocol};
use s2s_core::nn::{
    build_part_network, init_params_with, load_model, save_model, Network, ScaleConfig,
};
use s2s_core::train::train_with_observer;
use s2s_core::verify::{check_term, CheckConfig, Term};
use s2s_core::View;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{plot as sparkplot, Cli};

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Part network sized for the samples of `data`.
fn network_for(data: &Dataset, cfg: &RunConfig) -> Result<Network, CliError> {
    let &[c, h, w] = data.sample_shape() else {
        return Err(CliError::Data(format!(
            "the part network needs CxHxW samples, got shape {:?}",
            data.sample_shape()
        )));
    };
    let scale = ScaleConfig {
        input_channels: c,
        input_height: h,
        input_width: w,
        ..cfg.scale.clone()
    };
    Ok(init_params_with(
        build_part_network(&scale)?,
        cfg.seed,
        &cfg.init,
    ))
}

pub fn train(
    cli: &Cli,
    mut cfg: RunConfig,
    data: Option<&Path>,
    iters: Option<usize>,
    lr: Option<f64>,
) -> Result<(), CliError> {
    let data = data.ok_or_else(|| CliError::Usage("train needs --data <manifest>".into()))?;
    if let Some(n) = iters {
        cfg.train.iterations = n;
    }
    if let Some(l) = lr {
        cfg.train.learning_rate = l;
    }
    cfg.validate()?;
    let tc = cfg.train_config()?;
    let dataset = load_dataset(data)?;
    let net = network_for(&dataset, &cfg)?;
    let dir = out_dir(cli, ".")?;
    let every = tc.snapshot_every;
    if every > 0 {
        fs::create_dir_all(dir.join("snapshots"))
            .map_err(|e| CliError::Data(format!("cannot create snapshot directory: {e}")))?;
    }
    let (net, history) = train_with_observer(&dataset, net, &tc, |net, rec| {
        if every > 0 && rec.iter % every == 0 {
            save_model(
                net,
                dir.join("snapshots")
                    .join(format!("iter_{:06}.s2sm", rec.iter)),
            )?;
        }
        Ok(())
    })?;
    let model = dir.join("model.s2sm");
    save_model(&net, &model)?;
    let hist = dir.join("history.csv");
    history.write_csv(&hist)?;
    let last = history.records.last().expect("at least one iteration");
    println!(
        "trained {} iterations, final loss {:.6} (mu {:.4}, nu {:.4})",
        last.iter, last.total, last.mu, last.nu
    );
    println!("wrote {} and {}", model.display(), hist.display());
    Ok(())
}

pub struct EvalArgs<'a> {
    pub model: &'a Path,
    pub data: &'a Path,
    pub protocol: Option<&'a str>,
    pub aggregation: Option<&'a str>,
    pub trials: Option<usize>,
    pub all_shot: bool,
}

pub fn eval(cli: &Cli, mut cfg: RunConfig, args: EvalArgs) -> Result<(), CliError> {
    if let Some(p) = args.protocol {
        cfg.set("eval.protocol", p).map_err(CliError::Usage)?;
    }
    if let Some(a) = args.aggregation {
        cfg.set("eval.aggregation", a).map_err(CliError::Usage)?;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    cfg.all_shot |= args.all_shot;
    let cmc_cfg = cfg.cmc_config()?;
    let net = load_model(args.model)?;
    let data = load_dataset(args.data)?;
    let probe = embed_set(&data.view_set(View::A), &net)?;
    let gallery = embed_set(&data.view_set(View::B), &net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let curve = cmc_protocol(
        &probe,
        &gallery,
        &cmc_cfg,
        cfg.protocol,
        cfg.aggregation,
        &mut rng,
    )?;
    let map = map_embedded(&probe, &gallery, cfg.protocol, cfg.aggregation)?;
    let dir = out_dir(cli, ".")?;
    curve.write_csv(&dir.join("cmc.csv"))?;
    let top = |n: usize| curve.rate(n);
    let summary = summary_csv(&[
        (cfg.protocol, "top1", top(1)),
        (cfg.protocol, "top5", top(5)),
        (cfg.protocol, "top10", top(10)),
        (cfg.protocol, "mAP", map),
    ]);
    write(&dir.join("summary.csv"), &summary)?;
    let pooling = match (cfg.protocol, cfg.aggregation) {
        (Protocol::Single, _) => String::new(),
        (Protocol::Multi, MultiQuery::MeanEmbedding) => " (mean embedding)".into(),
        (Protocol::Multi, MultiQuery::MaxDistance) => " (max distance)".into(),
    };
    println!(
        "{}{pooling}: top-1 {:.4}, top-5 {:.4}, mAP {:.4} over {} trials",
        cfg.protocol,
        top(1),
        top(5),
        map,
        curve.trials
    );
    Ok(())
}

pub fn gradcheck(
    cli: &Cli,
    cfg: RunConfig,
    term: Option<&str>,
    eps: f64,
    instances: usize,
    threshold: Option<f64>,
) -> Result<(), CliError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Usage(format!(
            "--eps must be positive, got {eps}"
        )));
    }
    if instances < 1 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    let terms: Vec<Term> = match term {
        Some(t) => vec![t.parse()?],
        None => Term::ALL.to_vec(),
    };
    let check = CheckConfig {
        instances,
        eps,
        seed: cfg.seed,
        ..CheckConfig::default()
    };
    let mut report = String::from("term,instances,redrawn,max_rel_error,threshold,pass\n");
    let mut failed = Vec::new();
    for t in terms {
        let r = check_term(t, &check)?;
        let limit = threshold.unwrap_or(t.default_threshold());
        let pass = r.max_rel_error < limit;
        println!(
            "{:<16} {:<4} max relative error {:.3e} (threshold {:.0e}, {} instances, {} redrawn)",
            t.name(),
            if pass { "ok" } else { "FAIL" },
            r.max_rel_error,
            limit,
            r.instances,
            r.redrawn
        );
        report.push_str(&format!(
            "{},{},{},{:e},{:e},{}\n",
            t.name(),
            r.instances,
            r.redrawn,
            r.max_rel_error,
            limit,
            pass
        ));
        if !pass {
            failed.push(t.name());
        }
    }
    if cli.out.is_some() {
        let dir = out_dir(cli, ".")?;
        write(&dir.join("gradcheck.csv"), &report)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn synth(cli: &Cli, cfg: RunConfig, split: Option<f64>, inline: bool) -> Result<(), CliError> {
    let spec = cfg.synth_spec()?;
    let data = generate_synthetic(&spec)?;
    let dir = out_dir(cli, "synth")?;
    let save = |d: &Dataset, dir: &Path| -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        if inline {
            let p = dir.join("manifest.csv");
            save_dataset_inline(d, &p)?;
            Ok(p)
        } else {
            Ok(save_dataset(d, dir)?)
        }
    };
    let all = save(&data, &dir)?;
    println!(
        "wrote {} identities x {} images per view to {}",
        spec.identities,
        spec.per_view,
        all.display()
    );
    if let Some(frac) = split {
        let s = split_protocol(&data, frac, cfg.seed)?;
        let train = save(&s.train, &dir.join("train"))?;
        let test = save(&s.test, &dir.join("test"))?;
        println!(
            "split {} train / {} test identities: {} and {}",
            s.train.num_identities(),
            s.test.num_identities(),
            train.display(),
            test.display()
        );
    }
    Ok(())
}

pub fn plot(
    cli: &Cli,
    input: &Path,
    column: Option<&str>,
    spark: bool,
    width: usize,
) -> Result<(), CliError> {
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", input.display())))?;
    let (x, y, rows) = sparkplot::extract(&text, column)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let mut csv = format!("{x},{y}\n");
    for (a, b) in &rows {
        csv.push_str(&format!("{a},{b}\n"));
    }
    match &cli.out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    if spark && !rows.is_empty() {
        let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        eprintln!(
            "{y} {} [{lo:.4}, {hi:.4}]",
            sparkplot::sparkline(&values, width)
        );
    }
    Ok(())
}
