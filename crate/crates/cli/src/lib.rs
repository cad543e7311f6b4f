//! Subcommands of the `ialseg` binary, callable as plain functions.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use ialseg::data::{scene_hierarchy, Dataset, DatasetMeta, SceneConfig};
use ialseg::gradcheck::{run_suite, GradCheckReport};
use ialseg::hierarchy::ImportanceHierarchy;
use ialseg::loss::LossKind;
use ialseg::metrics::{group_report, GroupReport};
use ialseg::net::checkpoint;
use ialseg::net::{Network, Variant};
use ialseg::train::{evaluate, load_datasets, train_to_dir, DatasetSpec, RunConfig, TrainOutcome};

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub train: usize,
    pub eval: usize,
}

/// Writes `<out>/train`, `<out>/eval` and `<out>/hierarchy.json`.
pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let mut scene = match &args.config {
        Some(path) => serde_json::from_str::<SceneConfig>(
            &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    let h = scene_hierarchy();
    for (split, first, count) in [
        ("train", 0u64, args.train),
        ("eval", args.train as u64, args.eval),
    ] {
        if count == 0 {
            continue;
        }
        let ds = Dataset::generate(&scene, first, count)?;
        let meta = DatasetMeta::new(split, first, count, &scene, &h);
        ds.save_dir(&args.out.join(split), &meta)?;
    }
    std::fs::write(args.out.join("hierarchy.json"), h.to_json())?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub loss: Option<LossKind>,
    pub net: Option<Variant>,
}

/// Resolves the config file and command-line overrides into one run config.
pub fn resolve_run_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let mut value: serde_json::Value = serde_json::from_str(&text)?;
            if let (Some(seed), Some(obj)) = (args.seed, value.as_object_mut()) {
                obj.insert("seed".into(), json!(seed));
            }
            let mut cfg: RunConfig = serde_json::from_value(value)
                .with_context(|| format!("parsing {}", path.display()))?;
            if let DatasetSpec::Dir { train, eval } = &mut cfg.dataset {
                let base = path.parent().unwrap_or(Path::new("."));
                *train = base.join(&*train);
                if let Some(e) = eval {
                    *e = base.join(&*e);
                }
            }
            if let Some(h) = &mut cfg.hierarchy {
                *h = path.parent().unwrap_or(Path::new(".")).join(&*h);
            }
            cfg
        }
        None => match args.seed {
            Some(seed) => RunConfig::new(seed),
            None => bail!("a seed is required: pass --seed or set \"seed\" in --config"),
        },
    };
    if let Some(loss) = args.loss {
        cfg.loss.loss = loss;
    }
    if let Some(net) = args.net {
        cfg.net.variant = net;
        if let DatasetSpec::Synthetic { scene, .. } = &mut cfg.dataset {
            (scene.height, scene.width) = cfg.net.input_size();
        }
    }
    Ok(cfg)
}

pub fn train(args: &TrainArgs) -> Result<TrainOutcome> {
    let cfg = resolve_run_config(args)?;
    let data = load_datasets(&cfg)?;
    let cli = json!({
        "config": args.config,
        "seed": args.seed,
        "out": args.out,
        "loss": args.loss.map(|l| l.to_string()),
        "net": args.net.map(|n| n.to_string()),
    });
    Ok(train_to_dir(&cfg, &data.train, &data.hierarchy, &args.out, cli)?)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Run config; defaults to `run.json` next to the checkpoint.
    pub config: Option<PathBuf>,
    /// Dataset directory; defaults to the run's evaluation split.
    pub data: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub out: PathBuf,
    pub id: Option<String>,
}

fn run_dir_of(checkpoint: &Path) -> PathBuf {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    if dir.file_name().is_some_and(|n| n == "checkpoints") {
        dir.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        dir.to_path_buf()
    }
}

/// Writes `<id>.csv` and `<id>.json` into `out` and returns the report.
pub fn eval(args: &EvalArgs) -> Result<GroupReport> {
    let run_dir = run_dir_of(&args.checkpoint);
    let config = args.config.clone().unwrap_or_else(|| run_dir.join("run.json"));
    let cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;

    let (dataset, meta_hierarchy) = match &args.data {
        Some(dir) => (
            Dataset::load_dir(dir)?,
            DatasetMeta::load(dir).ok().map(|m| m.hierarchy()).transpose()?,
        ),
        None => {
            let d = load_datasets(&cfg)?;
            let Some(ev) = d.eval else {
                bail!("the run has no evaluation split; pass --data");
            };
            (ev, Some(d.hierarchy))
        }
    };
    let hierarchy = match &args.hierarchy {
        Some(p) => ImportanceHierarchy::load(p)?,
        None => match meta_hierarchy {
            Some(h) => h,
            None if run_dir.join("hierarchy.json").exists() => {
                ImportanceHierarchy::load(&run_dir.join("hierarchy.json"))?
            }
            None => scene_hierarchy(),
        },
    };

    let mut net = Network::<f32>::new(cfg.effective_net())?;
    checkpoint::load_into(net.params_mut(), &args.checkpoint)?;
    let cm = evaluate(&net, &dataset, &hierarchy, cfg.batch_size)?;
    let id = args.id.clone().unwrap_or_else(|| {
        format!("{}_{}_seed{}", cfg.net.variant, cfg.loss.loss, cfg.seed)
    });
    let report = group_report(&id, &cm, &hierarchy, None)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join(format!("{id}.csv")), report.to_csv())?;
    std::fs::write(args.out.join(format!("{id}.json")), report.to_json() + "\n")?;
    Ok(report)
}

/// Reports the candidate against the baseline; writes the delta report when
/// `out` is given and returns the verdict lines.
pub fn compare(baseline: &Path, candidate: &Path, out: Option<&Path>) -> Result<(GroupReport, Vec<String>)> {
    let base = GroupReport::from_json(&std::fs::read_to_string(baseline)?)?;
    let mut cand = GroupReport::from_json(&std::fs::read_to_string(candidate)?)?;
    cand.apply_baseline(&base)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let name = format!("{}_vs_{}.json", cand.run_id, base.run_id);
        std::fs::write(dir.join(name), cand.to_json() + "\n")?;
    }
    let lines = cand.verdict_lines();
    Ok((cand, lines))
}

pub fn grad_check(seed: u64, instances: usize) -> Result<GradCheckReport> {
    Ok(run_suite(seed, instances)?)
}

pub fn format_grad_check(report: &GradCheckReport) -> Vec<String> {
    let mut lines: Vec<String> = report
        .entries
        .iter()
        .map(|e| {
            format!(
                "{:<32} max rel error {:.3e} over {:>5} coords  {}",
                e.name,
                e.max_rel_error,
                e.coords,
                if e.passed() { "ok" } else { "FAIL" }
            )
        })
        .collect();
    lines.push(format!(
        "overall max rel error {:.3e} ({})",
        report.max_rel_error(),
        if report.passed() { "pass" } else { "FAIL" }
    ));
    lines
}
