//! Command-line entry point. Every command resolves its configuration,
//! writes `config.snapshot` into the run directory, runs, and finishes with
//! `manifest.json`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sfmgtl_core::evaluation::Variant;
use sfmgtl_core::experiment::ExperimentConfig;
use sfmgtl_core::memory::CityRole;
use sfmgtl_core::model::Model;
use sfmgtl_core::training::{
    count_parameters, describe, evaluate, pretrain_observed, train_target_observed, CityData, Checkpoint, EpochLog, Stage,
    StageOutcome,
};
use sfmgtl_core::datasets::{synth_city_pair, Window};

use crate::checkpoint;
use crate::config;
use crate::error::{Error, IoContext, Result};
use crate::formats::{self, build_city_graph, source_dir, target_dir, write_json, SynthSidecar};
use crate::plots::{self, CaseStudy};
use crate::rundir::{read_manifest, read_metrics, read_snapshot, FileDigest, RunDir, METRICS_FILE, SNAPSHOT_FILE};
use crate::runner::{self, RunCache};
use crate::tables::{self, MetricsDoc};

#[derive(Parser, Debug)]
#[command(name = "sfmgtl", version, about = "Cross-city traffic demand transfer: data, training, evaluation and studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Common {
    /// Preset name (desk, paper_scale) or path to a TOML config.
    #[arg(long, value_name = "PATH")]
    pub config: Option<String>,
    /// Replaces every seed in the configuration.
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Run directory [default: runs/<command>].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Config override, repeatable; later ones win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Re-executes the run recorded in DIR into --out.
    #[arg(long, value_name = "DIR")]
    pub resume_from: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Generate a synthetic source/target city pair as CSV files.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build the proximity, road and POI views of both cities of a dataset.
    BuildGraphs {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with source/ and target/.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Joint pre-training on source and target.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; generated from the config when absent.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Target-only training from a pre-training checkpoint with the common
    /// memory frozen, or from scratch.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE", required_unless_present_any = ["from_scratch", "resume_from"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Train a freshly initialised model on the target alone.
        #[arg(long, conflicts_with = "checkpoint")]
        from_scratch: bool,
    },
    /// Test metrics, baselines and case-study plots for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE", required_unless_present = "resume_from")]
        checkpoint: Option<PathBuf>,
        /// Second checkpoint drawn alongside, e.g. a model trained without transfer.
        #[arg(long, value_name = "FILE")]
        compare: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Also fit and score the historical-average and GRU baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// Median test metrics of the full model and its ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "full,no_rl,no_hnc,no_at,no_pmt")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Target metrics over a grid of source durations and source noise levels.
    QualityStudy {
        #[command(flatten)]
        common: Common,
        /// Noise SDs as multiples of the clean source demand SD.
        #[arg(long, value_delimiter = ',', default_value = "0,5")]
        noise: Vec<f64>,
        /// Source durations in days.
        #[arg(long, value_delimiter = ',', default_value = "20,40,60")]
        durations: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Trainable parameter count of the configured model.
    Params {
        #[command(flatten)]
        common: Common,
    },
    /// Redraw the plots of an existing run directory.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::BuildGraphs { .. } => "build-graphs",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::QualityStudy { .. } => "quality-study",
            Command::Params { .. } => "params",
            Command::Plot { .. } => "plot",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Synth { common }
            | Command::BuildGraphs { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Ablate { common, .. }
            | Command::QualityStudy { common, .. }
            | Command::Params { common }
            | Command::Plot { common, .. } => common,
        }
    }

    fn common_mut(&mut self) -> &mut Common {
        match self {
            Command::Synth { common }
            | Command::BuildGraphs { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Ablate { common, .. }
            | Command::QualityStudy { common, .. }
            | Command::Params { common }
            | Command::Plot { common, .. } => common,
        }
    }

    fn data(&self) -> Option<&Path> {
        match self {
            Command::BuildGraphs { data, .. } => Some(data),
            Command::Pretrain { data, .. }
            | Command::Finetune { data, .. }
            | Command::Evaluate { data, .. }
            | Command::Ablate { data, .. }
            | Command::QualityStudy { data, .. } => data.as_deref(),
            _ => None,
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 1 invalid input, 2 runtime failure.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
                    if e.exit_code() == 0 =>
                {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    1
                }
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

const INPUT_CHECKPOINT: &str = "checkpoints/input.json";
const COMPARE_CHECKPOINT: &str = "checkpoints/compare.json";

/// Runs a parsed command, replaying a recorded one for `--resume-from`.
pub fn run(command: Command) -> Result<()> {
    match command.common().resume_from.clone() {
        Some(dir) => run_resumed(command, &dir),
        None => execute(command),
    }
}

fn run_resumed(command: Command, dir: &Path) -> Result<()> {
    let manifest = read_manifest(dir)?;
    let mut recorded: Command = serde_json::from_value(manifest.command.clone())
        .map_err(|e| Error::invalid(format!("{}: unreadable command record: {e}", dir.display())))?;
    if recorded.name() != command.name() {
        return Err(Error::invalid(format!("{} holds a '{}' run, not '{}'", dir.display(), recorded.name(), command.name())));
    }
    if let Some(data) = recorded.data() {
        let now = data_digests(data)?;
        let then: Vec<&FileDigest> = manifest.inputs.iter().filter(|d| !d.path.starts_with("checkpoint:")).collect();
        if now.iter().ne(then.iter().copied()) {
            return Err(Error::invalid(format!("dataset {} changed since the recorded run", data.display())));
        }
    }
    let out = command.common().out.clone().unwrap_or_else(|| {
        let mut name = dir.as_os_str().to_owned();
        name.push("-resumed");
        PathBuf::from(name)
    });
    if same_dir(&out, dir) {
        return Err(Error::invalid("--out must differ from --resume-from"));
    }
    let common = recorded.common_mut();
    common.config = Some(dir.join(SNAPSHOT_FILE).to_string_lossy().into_owned());
    common.set.clear();
    common.seed = None;
    common.resume_from = None;
    common.out = Some(out);
    match &mut recorded {
        Command::Finetune { checkpoint: Some(c), .. } => *c = dir.join(INPUT_CHECKPOINT),
        Command::Evaluate { checkpoint, compare, .. } => {
            *checkpoint = Some(dir.join(INPUT_CHECKPOINT));
            if compare.is_some() {
                *compare = Some(dir.join(COMPARE_CHECKPOINT));
            }
        }
        _ => {}
    }
    execute(recorded)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn data_digests(data: &Path) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    let sidecar = data.join(formats::SIDECAR_FILE);
    if sidecar.exists() {
        out.push(FileDigest::of(&sidecar, format!("data:{}", formats::SIDECAR_FILE))?);
    }
    for city in ["source", "target"] {
        let dir = data.join(city);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir).at(&dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>().at(&dir)?;
        files.sort();
        for f in files.into_iter().filter(|f| f.is_file()) {
            let name = f.file_name().expect("file").to_string_lossy().into_owned();
            out.push(FileDigest::of(&f, format!("data:{city}/{name}"))?);
        }
    }
    Ok(out)
}

struct Run {
    dir: RunDir,
    cfg: ExperimentConfig,
    inputs: Vec<FileDigest>,
}

impl Run {
    fn start(command: &Command) -> Result<Self> {
        let common = command.common();
        let cfg = config::resolve(common.config.as_deref(), &common.set, common.seed)?;
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
        if let Some(data) = command.data() {
            if same_dir(&out, data) || out.starts_with(data) {
                return Err(Error::invalid("--out must not lie inside the input dataset"));
            }
        }
        let dir = RunDir::create(&out)?;
        let inputs = match command.data() {
            Some(d) => data_digests(d)?,
            None => Vec::new(),
        };
        let run = Run { dir, cfg, inputs };
        run.dir.write_snapshot(&run.cfg)?;
        Ok(run)
    }

    /// Copies an input checkpoint into the run so it can be replayed.
    fn adopt_checkpoint(&mut self, src: &Path, rel: &str) -> Result<(Checkpoint, Stage)> {
        let loaded = checkpoint::load(src)?;
        let dst = self.dir.path(rel);
        if !same_dir(src, &dst) {
            fs::copy(src, &dst).at(&dst)?;
        }
        self.inputs.push(FileDigest::of(&dst, format!("checkpoint:{rel}"))?);
        Ok(loaded)
    }

    fn finish(self, command: &Command) -> Result<()> {
        let mut recorded = command.clone();
        recorded.common_mut().resume_from = None;
        let value = serde_json::to_value(&recorded).map_err(|e| Error::Runtime(e.to_string()))?;
        self.dir.finish(value, self.inputs)?;
        println!("run directory: {}", self.dir.root.display());
        Ok(())
    }
}

fn execute(command: Command) -> Result<()> {
    let mut run = Run::start(&command)?;
    match &command {
        Command::Synth { .. } => synth(&run)?,
        Command::BuildGraphs { data, .. } => build_graphs(&run, data)?,
        Command::Pretrain { data, .. } => pretrain(&run, data.as_deref())?,
        Command::Finetune { checkpoint, data, from_scratch, .. } => {
            let init = match checkpoint {
                Some(path) if !from_scratch => Some(run.adopt_checkpoint(path, INPUT_CHECKPOINT)?.0),
                _ => None,
            };
            finetune(&mut run, init, data.as_deref())?
        }
        Command::Evaluate { checkpoint, compare, data, baselines, .. } => {
            let path = checkpoint.as_ref().ok_or_else(|| Error::invalid("evaluate needs --checkpoint"))?;
            let main = run.adopt_checkpoint(path, INPUT_CHECKPOINT)?;
            let other = compare.as_ref().map(|p| run.adopt_checkpoint(p, COMPARE_CHECKPOINT)).transpose()?;
            evaluate_cmd(&mut run, main, other, data.as_deref(), *baselines)?
        }
        Command::Ablate { variants, seeds, data, .. } => ablate(&run, variants, seeds, data.as_deref())?,
        Command::QualityStudy { noise, durations, seeds, data, .. } => quality(&run, noise, durations, seeds, data.as_deref())?,
        Command::Params { .. } => params(&run)?,
        Command::Plot { run: src, .. } => plot(&run, src)?,
    }
    run.finish(&command)
}

fn synth(run: &Run) -> Result<()> {
    let (source, target) = synth_city_pair(&run.cfg.synth)?;
    let data = run.dir.path("data");
    formats::write_city(&source_dir(&data), &source)?;
    formats::write_city(&target_dir(&data), &target)?;
    write_json(
        &data.join(formats::SIDECAR_FILE),
        &SynthSidecar { generator: "sfmgtl synthetic city pair".into(), config: run.cfg.synth.clone() },
    )?;
    println!(
        "source: {} cells x {} hours, target: {} cells x {} hours",
        source.demand.num_nodes(),
        source.demand.num_steps(),
        target.demand.num_nodes(),
        target.demand.num_steps()
    );
    Ok(())
}

#[derive(Serialize)]
struct GraphStats {
    city: String,
    view: String,
    nodes: usize,
    edges: usize,
    total_weight: f64,
}

fn build_graphs(run: &Run, data: &Path) -> Result<()> {
    let out = run.dir.path("data");
    let mut stats = Vec::new();
    for (city, src) in [("source", source_dir(data)), ("target", target_dir(data))] {
        let graph = build_city_graph(&src)?;
        let dst = out.join(city);
        fs::create_dir_all(&dst).at(&dst)?;
        for f in [formats::GRID_FILE, formats::DEMAND_FILE, formats::ROADS_FILE, formats::POI_FILE] {
            fs::copy(src.join(f), dst.join(f)).at(src.join(f))?;
        }
        write_json(&dst.join(formats::GRAPHS_FILE), &graph)?;
        for v in &graph.views {
            let a = &v.adjacency;
            let n = a.rows();
            let edges = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| i < j && a[(i, j)] != 0.0).count();
            stats.push(GraphStats {
                city: city.into(),
                view: format!("{:?}", v.kind).to_lowercase(),
                nodes: n,
                edges,
                total_weight: a.sum(),
            });
        }
    }
    let sidecar = data.join(formats::SIDECAR_FILE);
    if sidecar.exists() {
        fs::copy(&sidecar, out.join(formats::SIDECAR_FILE)).at(&sidecar)?;
    }
    write_json(&run.dir.path("tables/graphs.json"), &stats)?;
    for s in &stats {
        println!("{} {}: {} nodes, {} edges", s.city, s.view, s.nodes, s.edges);
    }
    Ok(())
}

fn log_epochs<'a>(log: &'a mut crate::rundir::MetricsLog, failed: &'a mut Option<Error>) -> impl FnMut(&EpochLog, &Model) + 'a {
    move |e, _| {
        eprintln!("{}", describe(e));
        if failed.is_none() {
            if let Err(err) = log.write(e) {
                *failed = Some(err);
            }
        }
    }
}

fn write_stage(run: &Run, stage: Stage, outcome: &StageOutcome, target: &CityData) -> Result<MetricsDoc> {
    let ck = Checkpoint::from_model(&outcome.model);
    checkpoint::save(&run.dir.path(&format!("checkpoints/{}.json", stage.name())), &ck, stage)?;
    let test = evaluate(&outcome.model, target, &target.test, CityRole::Target)?;
    let seed = match stage {
        Stage::Pretrain => run.cfg.pretrain.seed,
        _ => run.cfg.finetune.seed,
    };
    let doc = MetricsDoc {
        stage: stage.name().into(),
        seed,
        best_epoch: Some(outcome.best_epoch),
        val: Some(outcome.best_val),
        test,
        baselines: Vec::new(),
    };
    tables::write_metrics(&run.dir.path("tables"), &doc)?;
    plots::loss_curves(&run.dir.path("plots"), &outcome.history)?;
    println!("{}: best epoch {}, val MAE {:.4}, test MAE {:.4} RMSE {:.4}", stage.name(), outcome.best_epoch, outcome.best_val.mae, test.mae, test.rmse);
    Ok(doc)
}

fn pretrain(run: &Run, data: Option<&Path>) -> Result<()> {
    let (source, target) = runner::prepare(&run.cfg, data)?;
    let model = Model::new(run.cfg.model.clone(), run.cfg.pretrain.seed)?;
    let mut log = run.dir.metrics_log()?;
    let mut failed = None;
    let outcome = pretrain_observed(model, &source, &target, &run.cfg.pretrain, &mut log_epochs(&mut log, &mut failed))?;
    if let Some(e) = failed {
        return Err(e);
    }
    write_stage(run, Stage::Pretrain, &outcome, &target)?;
    Ok(())
}

fn finetune(run: &mut Run, init: Option<Checkpoint>, data: Option<&Path>) -> Result<()> {
    let (model, stage, freeze) = match init {
        Some(ck) => {
            if ck.model != run.cfg.model {
                // The checkpoint defines the architecture; keep the snapshot truthful.
                run.cfg.model = ck.model.clone();
                run.dir.write_snapshot(&run.cfg)?;
            }
            (ck.restore()?, Stage::Finetune, true)
        }
        None => (Model::new(run.cfg.model.clone(), run.cfg.finetune.seed)?, Stage::Scratch, false),
    };
    let (_, target) = runner::prepare(&run.cfg, data)?;
    let mut log = run.dir.metrics_log()?;
    let mut failed = None;
    let outcome = train_target_observed(model, &target, &run.cfg.finetune, stage, freeze, &mut log_epochs(&mut log, &mut failed))?;
    if let Some(e) = failed {
        return Err(e);
    }
    write_stage(run, stage, &outcome, &target)?;
    Ok(())
}

fn predictions(model: &Model, target: &CityData, windows: &[Window]) -> Result<Vec<sfmgtl_core::Mat>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(32) {
        let refs: Vec<&Window> = chunk.iter().collect();
        for p in model.predict_batch(&target.graphs, &refs, CityRole::Target)? {
            out.push(target.normalizer.invert_block(&p));
        }
    }
    Ok(out)
}

fn evaluate_cmd(run: &mut Run, main: (Checkpoint, Stage), other: Option<(Checkpoint, Stage)>, data: Option<&Path>, baselines: bool) -> Result<()> {
    if main.0.model != run.cfg.model {
        run.cfg.model = main.0.model.clone();
        run.dir.write_snapshot(&run.cfg)?;
    }
    let raw = runner::raw_pair(&run.cfg, data)?;
    let target = sfmgtl_core::experiment::target_data(&raw.target.0, &raw.target.1, &run.cfg.split)?;
    let model = main.0.restore()?;
    let test = evaluate(&model, &target, &target.test, CityRole::Target)?;
    let mut models = vec![(main.1.name().to_string(), predictions(&model, &target, &target.test)?)];
    let mut extra = Vec::new();
    if let Some((ck, stage)) = other {
        let m = ck.restore()?;
        extra.push((format!("compare_{}", stage.name()), evaluate(&m, &target, &target.test, CityRole::Target)?));
        let name = if stage == main.1 { format!("{}_compare", stage.name()) } else { stage.name().to_string() };
        models.push((name, predictions(&m, &target, &target.test)?));
    }
    if baselines {
        extra.extend(runner::baselines(&run.cfg, data)?);
    }
    let doc = MetricsDoc {
        stage: main.1.name().into(),
        seed: run.cfg.finetune.seed,
        best_epoch: None,
        val: Some(evaluate(&model, &target, &target.val, CityRole::Target)?),
        test,
        baselines: extra,
    };
    tables::write_metrics(&run.dir.path("tables"), &doc)?;
    let case = CaseStudy {
        stamps: target.test.iter().map(|w| w.label_time).collect(),
        truth: target.test.iter().map(|w| w.y_raw.clone()).collect(),
        models,
        grid_rows: raw.target.1.grid.rows,
        grid_cols: raw.target.1.grid.cols,
    };
    let plots_dir = run.dir.path("plots");
    plots::weekly_series(&plots_dir, &case, &formats::DEMAND_FEATURES)?;
    plots::region_map(&plots_dir, &case, &formats::DEMAND_FEATURES)?;
    println!("test MAE {:.4} RMSE {:.4} R2 {}", test.mae, test.rmse, test.r2.map_or("n/a".into(), |r| format!("{r:.4}")));
    for (name, r) in &doc.baselines {
        println!("{name}: test MAE {:.4} RMSE {:.4}", r.mae, r.rmse);
    }
    Ok(())
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>> {
    let v = names.iter().map(|n| Variant::parse(n.trim()).map_err(Error::from)).collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(Error::invalid("no variants given"));
    }
    Ok(v)
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::invalid("no seeds given"));
    }
    Ok(())
}

fn ablate(run: &Run, variants: &[String], seeds: &[u64], data: Option<&Path>) -> Result<()> {
    let variants = parse_variants(variants)?;
    check_seeds(seeds)?;
    let rows = runner::ablation(&mut RunCache::default(), &run.cfg, &variants, seeds, data, runner::threads()?)?;
    tables::write_summary(&run.dir.path("tables"), "ablation", &rows)?;
    for r in &rows {
        println!("{:8} median MAE {:.4} RMSE {:.4}", r.label, r.median_mae, r.median_rmse);
    }
    Ok(())
}

fn quality(run: &Run, noise: &[f64], durations: &[u32], seeds: &[u64], data: Option<&Path>) -> Result<()> {
    check_seeds(seeds)?;
    if noise.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::invalid("noise multiples must be finite and >= 0"));
    }
    let cells = runner::quality_study(&mut RunCache::default(), &run.cfg, noise, durations, seeds, data, runner::threads()?)?;
    tables::write_quality(&run.dir.path("tables"), "quality", &cells)?;
    plots::quality_heatmap(&run.dir.path("plots"), &cells)?;
    for c in &cells {
        println!("{:4} days, noise x{:<4} (sd {:.3}): median MAE {:.4}", c.source_days, c.noise_multiple, c.noise_sd, c.row.median_mae);
    }
    if cells.iter().filter(|c| c.noise_sd == 0.0).count() > 1 {
        println!("duration trend (Kendall tau of benefit): {:.3}", runner::duration_trend(&cells));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    total: usize,
    breakdown: Vec<(String, usize)>,
}

fn params(run: &Run) -> Result<()> {
    let model = Model::new(run.cfg.model.clone(), 0)?;
    let (total, breakdown) = count_parameters(&model);
    let doc = ParamsDoc { total, breakdown: breakdown.into_iter().map(|(k, v)| (k.to_string(), v)).collect() };
    write_json(&run.dir.path("tables/params.json"), &doc)?;
    for (name, n) in &doc.breakdown {
        println!("{name:16}{n:>10}");
    }
    println!("{:16}{total:>10}", "total");
    Ok(())
}

fn plot(run: &Run, src: &Path) -> Result<()> {
    if same_dir(&run.dir.root, src) {
        return Err(Error::invalid("--out must differ from --run"));
    }
    let mut drawn = 0;
    let metrics = src.join(METRICS_FILE);
    if metrics.exists() {
        plots::loss_curves(&run.dir.path("plots"), &read_metrics(&metrics)?)?;
        drawn += 1;
    }
    let quality = src.join("tables/quality.json");
    if quality.exists() {
        let cells: Vec<runner::QualityCell> = formats::read_json(&quality)?;
        plots::quality_heatmap(&run.dir.path("plots"), &cells)?;
        drawn += 1;
    }
    if drawn == 0 {
        return Err(Error::invalid(format!("{} has neither {METRICS_FILE} nor tables/quality.json", src.display())));
    }
    // The source run's configuration is the one that matters here.
    if let Ok(cfg) = read_snapshot(src) {
        run.dir.write_snapshot(&cfg)?;
    }
    Ok(())
}
