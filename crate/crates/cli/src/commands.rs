use std::fs;
use std::path::Path;

use sacn::fixture::{check_loss_terms, GRADCHECK_TOLERANCE};
use sacn::{
    generate_sbm, load_bundle, make_split, run_ablation, run_experiment, save_bundle, GraphBundle, SbmParams,
    SplitConfig, SplitSpec, TrainConfig,
};

use crate::args::{AblateArgs, ExperimentArgs, GenerateArgs, GradcheckArgs, TrainArgs};
use crate::output::{
    create_dir, write_ablation_csv, write_json, write_runs, AblationArmReport, AblationReport, TrainReport,
    REPORT_FORMAT,
};
use crate::CliError;

/// Worker-thread count for multi-seed runs.
pub const THREADS_ENV: &str = "SACN_THREADS";

fn threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV}={raw:?} is not a positive integer"
            ))),
        },
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Defaults file, then individual flag overrides, then validation.
pub fn resolve_config(args: &ExperimentArgs) -> Result<TrainConfig, CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(n) = args.seeds {
        config.seeds = (args.first_seed..args.first_seed + n).collect();
    }
    if let Some(rate) = args.label_rate {
        let base = config.split.take().unwrap_or(SplitConfig {
            label_rate: rate,
            val_size: 500,
            test_size: 1000,
        });
        config.split = Some(SplitConfig {
            label_rate: rate,
            ..base
        });
    }
    if args.val_size.is_some() || args.test_size.is_some() {
        let split = config.split.as_mut().ok_or_else(|| {
            CliError::Usage("--val-size and --test-size need --label-rate or a [split] table".into())
        })?;
        if let Some(v) = args.val_size {
            split.val_size = v;
        }
        if let Some(t) = args.test_size {
            split.test_size = t;
        }
    }
    if let Some(c) = args.filter_strength {
        config.filter_strength = Some(c);
    }
    if let Some(v) = args.lambda {
        config.weights.lambda = v;
    }
    if let Some(v) = args.alpha1 {
        config.weights.alpha1 = v;
    }
    if let Some(v) = args.alpha2 {
        config.weights.alpha2 = v;
    }
    if let Some(v) = args.mask_rate {
        config.mask_rate = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        config.weight_decay = v;
    }
    if let Some(v) = args.dropout {
        config.model.dropout = v;
    }
    if let Some(v) = args.epochs_pretrain {
        config.epochs_pretrain = v;
    }
    if let Some(v) = args.epochs_max {
        config.epochs_max = v;
    }
    if let Some(v) = args.patience {
        config.patience = v;
    }
    if config.seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn open_bundle(path: &Path) -> Result<GraphBundle, CliError> {
    if !path.join("meta.json").is_file() {
        return Err(CliError::Usage(format!(
            "bundle {} not found (expected a directory containing meta.json)",
            path.display()
        )));
    }
    Ok(load_bundle(path)?)
}

fn progress(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn summary(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        _ => "n/a".into(),
    }
}

pub fn train(args: &TrainArgs, quiet: bool) -> Result<(), CliError> {
    let ex = &args.experiment;
    let config = resolve_config(ex)?;
    let threads = threads()?;
    let bundle = open_bundle(&ex.bundle)?;
    progress(
        quiet,
        format!(
            "training on {} ({} nodes) with {} seed(s), {threads} thread(s)",
            bundle.name,
            bundle.num_nodes(),
            config.seeds.len()
        ),
    );
    let report = run_experiment(&bundle, &config, threads)?;
    create_dir(&ex.out)?;
    write_runs(&ex.out, &report, &config)?;
    write_json(
        &ex.out.join("report.json"),
        &TrainReport {
            format: REPORT_FORMAT,
            command: "train",
            bundle: ex.bundle.display().to_string(),
            config: &config,
            config_hash: config.config_hash(),
            experiment: &report,
        },
    )?;
    for f in &report.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    println!(
        "test accuracy {} over {} run(s), {} failure(s)",
        summary(report.mean_test_acc, report.std_test_acc),
        report.runs.len(),
        report.failures.len()
    );
    if report.runs.is_empty() {
        return Err(CliError::Runtime("every run failed".into()));
    }
    Ok(())
}

pub fn ablate(args: &AblateArgs, quiet: bool) -> Result<(), CliError> {
    let ex = &args.experiment;
    let config = resolve_config(ex)?;
    let threads = threads()?;
    let bundle = open_bundle(&ex.bundle)?;
    progress(
        quiet,
        format!(
            "ablating on {} with {} seed(s) per arm",
            bundle.name,
            config.seeds.len()
        ),
    );
    let results = run_ablation(&bundle, &config, threads)?;
    create_dir(&ex.out)?;
    let rows: Vec<_> = results.iter().map(|(row, _)| row).collect();
    write_ablation_csv(&ex.out.join("ablation.csv"), &rows)?;
    let arms = sacn::AblationArm::ALL
        .iter()
        .zip(&results)
        .map(|(arm, (row, report))| AblationArmReport {
            arm: &row.arm,
            config: arm.apply(&config),
            experiment: report,
        })
        .collect();
    write_json(
        &ex.out.join("report.json"),
        &AblationReport {
            format: REPORT_FORMAT,
            command: "ablate",
            bundle: ex.bundle.display().to_string(),
            config: &config,
            config_hash: config.config_hash(),
            arms,
        },
    )?;
    for row in &rows {
        println!(
            "{:<9} alpha1={} alpha2={}  test accuracy {}  ({} run(s), {} failure(s))",
            row.arm,
            row.alpha1,
            row.alpha2,
            summary(row.mean_test_acc, row.std_test_acc),
            row.runs,
            row.failures
        );
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let params = SbmParams {
        num_nodes: args.n,
        num_classes: args.k,
        p_in: args.p_in,
        p_out: args.p_out,
        num_features: args.m,
        feature_flip: args.flip,
    };
    let bundle = generate_sbm(&params, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let val_size = args.val_size.unwrap_or(args.n / 5);
    let mut spec = SplitSpec {
        label_rate: args.label_rate,
        val_size,
        test_size: 0,
        seed: args.seed,
    };
    // Every node outside the training and validation sets is a test node
    // unless a test size is given; SBM classes are balanced to within one.
    let train_size = spec.per_class(args.n, args.k) * args.k;
    spec.test_size = match args.test_size {
        Some(t) => t,
        None => args.n.saturating_sub(train_size + val_size),
    };
    let bundle = make_split(&bundle, &spec).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&args.out)?;
    save_bundle(&bundle, &args.out)?;
    println!(
        "wrote {} nodes, {} edges, split {}/{}/{} to {}",
        bundle.num_nodes(),
        bundle.adjacency.num_undirected_edges(),
        bundle.split.train.len(),
        bundle.split.val.len(),
        bundle.split.test.len(),
        args.out.display()
    );
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let checks = check_loss_terms(args.eps, args.seed)?;
    println!(
        "{:<7} {:>14} {:>7} {:>11}  status",
        "term", "max rel err", "coords", "unresolved"
    );
    for c in &checks {
        println!(
            "{:<7} {:>14.3e} {:>7} {:>11}  {}",
            c.term,
            c.max_relative_error,
            c.coordinates_checked,
            c.unresolved,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} term(s) exceed relative error {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
