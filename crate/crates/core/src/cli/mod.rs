//! The `hsrecon` command line.
//!
//! Exit codes: 0 on success, 1 when arguments or inputs fail validation,
//! 2 when a run fails after validation.

mod suite;

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use suite::{
    gradcheck_suite, CheckResult, FULL_MODEL_INPUT, FULL_MODEL_SAMPLES, GRADCHECK_TOL,
};

use crate::blocks::{
    analytic_param_count, read_model, write_model, Model, ModelConfig, REFERENCE_PARAM_COUNT,
};
use crate::data::{
    generate_dataset, load_samples, read_cube, read_rgb, write_cube, CameraResponse, HSCube,
    Manifest, SynthSpec, MANIFEST_NAME,
};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::train::{evaluate, split_samples, train_with, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hsrecon",
    version,
    about = "Hyperspectral reconstruction from RGB images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of cube/RGB pairs.
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Reconstruct a cube from an RGB image.
    Infer(InferArgs),
    /// Score predicted cubes against ground truth.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print per-layer and total parameter counts.
    Params(ParamsArgs),
    /// Train architecture variants under one budget and tabulate them.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub count: usize,
    /// Image size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Architecture switches shared by the commands that build models.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Feature width of the stem and every block.
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub rdab_convs: usize,
    /// Channels added by each dense layer.
    #[arg(long, default_value_t = 16)]
    pub growth: usize,
    #[arg(long, default_value_t = 3)]
    pub scales: usize,
    #[arg(long, default_value_t = 4)]
    pub dense_layers: usize,
    /// Channel attention reduction ratio.
    #[arg(long, default_value_t = 8)]
    pub reduction: usize,
    #[arg(long)]
    pub no_coordconv: bool,
    #[arg(long)]
    pub no_cbam: bool,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            stem_width: self.width,
            rdab_convs: self.rdab_convs,
            rdab_growth: self.growth,
            scales: self.scales,
            dense_branch_layers: self.dense_layers,
            dense_branch_growth: self.growth,
            attention_reduction: self.reduction,
            use_coordconv: !self.no_coordconv,
            use_cbam: !self.no_cbam,
            seed,
            ..ModelConfig::default()
        }
    }
}

/// Optimization budget shared by `train` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub patch: usize,
    #[arg(long, default_value_t = 8000)]
    pub patches_per_epoch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_start: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub lr_end: f64,
    /// Validation images; defaults to one in nine.
    #[arg(long)]
    pub val_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl BudgetArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            epochs: self.epochs,
            batch: self.batch,
            patch: self.patch,
            seed: self.seed,
            patches_per_epoch: self.patches_per_epoch,
            val_count: self.val_count,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.txt.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "gt", conflicts_with_all = ["pred_dir", "gt_manifest"])]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Directory of predicted cubes named like the ground-truth cubes.
    #[arg(long, requires = "gt_manifest")]
    pub pred_dir: Option<PathBuf>,
    #[arg(long, requires = "pred_dir")]
    pub gt_manifest: Option<PathBuf>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated subset of full, no-coordconv, no-cbam.
    #[arg(long, default_value = "full,no-coordconv,no-cbam")]
    pub variants: String,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub pretty: bool,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad dimension {v:?} in {s:?}"))
    };
    Ok((dim(h)?, dim(w)?))
}

/// Ordered `key=value` records; `pretty` renders them as an aligned table.
#[derive(Debug, Default)]
struct Records {
    rows: Vec<Vec<(String, String)>>,
}

impl Records {
    fn push<I, K, V>(&mut self, fields: I)
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Display,
    {
        self.rows.push(
            fields
                .into_iter()
                .map(|(k, v)| (k.into(), v.to_string()))
                .collect(),
        );
    }

    fn write(&self, out: &mut dyn Write, pretty: bool) -> std::io::Result<()> {
        if !pretty {
            for row in &self.rows {
                let line: Vec<String> = row.iter().map(|(k, v)| format!("{k}={v}")).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
            return Ok(());
        }
        // rows sharing a key layout form one table
        let mut start = 0;
        while start < self.rows.len() {
            let keys: Vec<&str> = self.rows[start].iter().map(|(k, _)| k.as_str()).collect();
            let mut end = start + 1;
            while end < self.rows.len()
                && self.rows[end]
                    .iter()
                    .map(|(k, _)| k.as_str())
                    .eq(keys.iter().copied())
            {
                end += 1;
            }
            let group = &self.rows[start..end];
            let widths: Vec<usize> = keys
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    group
                        .iter()
                        .map(|r| r[i].1.len())
                        .max()
                        .unwrap_or(0)
                        .max(k.len())
                })
                .collect();
            let fmt_row = |cells: Vec<&str>| -> String {
                let padded: Vec<String> = cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect();
                padded.join("  ").trim_end().to_string()
            };
            writeln!(out, "{}", fmt_row(keys.clone()))?;
            writeln!(
                out,
                "{}",
                fmt_row(
                    widths
                        .iter()
                        .map(|w| "-".repeat(*w))
                        .collect::<Vec<_>>()
                        .iter()
                        .map(String::as_str)
                        .collect()
                )
            )?;
            for r in group {
                writeln!(
                    out,
                    "{}",
                    fmt_row(r.iter().map(|(_, v)| v.as_str()).collect())
                )?;
            }
            start = end;
        }
        Ok(())
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Dimension(_) | Error::Argument(_) | Error::Config(_) | Error::Data(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let display_only =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let target: &mut dyn Write = if display_only { out } else { err };
            let _ = write!(target, "{}", e.render());
            return if display_only { 0 } else { 1 };
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Params(a) => cmd_params(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
    }
}

fn cmd_gen(a: GenArgs, out: &mut dyn Write) -> Result<i32> {
    let min = TrainConfig::default().patch;
    if a.count == 0 {
        return Err(Error::Argument("--count must be at least 1".into()));
    }
    if a.size.0 < min || a.size.1 < min {
        return Err(Error::Argument(format!(
            "--size {}x{} is smaller than the {min}x{min} training patch",
            a.size.0, a.size.1
        )));
    }
    let spec = SynthSpec::new(a.count, a.size.0, a.size.1, a.seed);
    let manifest = generate_dataset(&spec, &CameraResponse::default(), &a.out)?;
    writeln!(out, "manifest={} count={}", manifest.display(), a.count)?;
    Ok(0)
}

fn manifest_path(dir: &Path) -> Result<PathBuf> {
    let path = if dir.is_file() {
        dir.to_path_buf()
    } else {
        dir.join(MANIFEST_NAME)
    };
    if !path.is_file() {
        return Err(Error::Data(format!(
            "no dataset manifest at {}",
            path.display()
        )));
    }
    Ok(path)
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let model_cfg = a.model.config(a.budget.seed);
    model_cfg.validate()?;
    let cfg = a.budget.config();
    cfg.validate(model_cfg.spatial_multiple())?;
    let samples = load_samples(manifest_path(&a.data)?)?;
    let (train_set, val) = split_samples(&samples, &cfg);
    if train_set.is_empty() {
        return Err(Error::Data(
            "no training images left after the validation split".into(),
        ));
    }
    let log_path = a.out.with_extension("log");
    let mut log_text = String::new();
    let model = Model::<f32>::build(&model_cfg)?;
    let mut io_err = None;
    let (model, _) = train_with(model, train_set, val, &cfg, |entry| {
        log_text.push_str(&format!("{entry}\n"));
        if let Err(e) = writeln!(out, "{entry}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    write_model(&model, &a.out)?;
    fs::write(&log_path, log_text)?;
    writeln!(
        out,
        "model={} log={} params={} train_images={} val_images={}",
        a.out.display(),
        log_path.display(),
        model.count_params(),
        train_set.len(),
        val.len()
    )?;
    Ok(0)
}

fn cmd_infer(a: InferArgs, out: &mut dyn Write) -> Result<i32> {
    let model = read_model(&a.model)?;
    let rgb = read_rgb(&a.rgb)?;
    let x = rgb.to_tensor::<f32>();
    model.check_input(x.shape())?;
    let pred = model.predict(&x)?;
    let cube = HSCube::from_tensor(&pred)?;
    write_cube(&cube, &a.out)?;
    writeln!(
        out,
        "cube={} bands={} height={} width={}",
        a.out.display(),
        cube.bands,
        cube.height,
        cube.width
    )?;
    Ok(0)
}

fn metric_fields(r: &MetricReport) -> [(&'static str, f64); 3] {
    [("mrae", r.mrae), ("rmse", r.rmse), ("ssim", r.ssim)]
}

fn score(pred: &HSCube, gt: &HSCube) -> Result<MetricReport> {
    MetricReport::compute(&pred.to_tensor::<f64>(), &gt.to_tensor::<f64>())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let mut rec = Records::default();
    match (a.pred, a.gt, a.pred_dir, a.gt_manifest) {
        (Some(pred), Some(gt), None, None) => {
            let report = score(&read_cube(pred)?, &read_cube(gt)?)?;
            rec.push(metric_fields(&report).map(|(k, v)| (k, v.to_string())));
        }
        (None, None, Some(dir), Some(manifest)) => {
            let entries = Manifest::read(&manifest)?.entries;
            let root = manifest.parent().unwrap_or(Path::new("."));
            let mut reports = Vec::with_capacity(entries.len());
            for e in &entries {
                let name = e
                    .cube
                    .file_name()
                    .ok_or_else(|| Error::Data(format!("bad cube path {}", e.cube.display())))?;
                let report = score(&read_cube(dir.join(name))?, &read_cube(root.join(&e.cube))?)?;
                let mut fields = vec![("index", e.index.to_string())];
                fields.extend(metric_fields(&report).map(|(k, v)| (k, v.to_string())));
                rec.push(fields);
                reports.push(report);
            }
            let mean = MetricReport::mean(&reports)
                .ok_or_else(|| Error::Data("manifest lists no pairs".into()))?;
            let mut fields = vec![("index", "mean".to_string())];
            fields.extend(metric_fields(&mean).map(|(k, v)| (k, v.to_string())));
            rec.push(fields);
        }
        _ => {
            return Err(Error::Argument(
                "give either --pred and --gt, or --pred-dir and --gt-manifest".into(),
            ))
        }
    }
    rec.write(out, a.pretty)?;
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let results = gradcheck_suite(a.seed)?;
    let mut rec = Records::default();
    for r in &results {
        rec.push([
            ("check", r.name.clone()),
            ("max_rel_err", format!("{:e}", r.max_rel_err)),
            ("checked", r.checked.to_string()),
            ("passed", r.passed.to_string()),
        ]);
    }
    let all = results.iter().all(|r| r.passed);
    rec.push([
        ("all_passed", all.to_string()),
        ("tol", format!("{GRADCHECK_TOL:e}")),
    ]);
    rec.write(out, a.pretty)?;
    Ok(if all { 0 } else { 2 })
}

fn cmd_params(a: ParamsArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.model.config(0);
    let model = Model::<f32>::build(&cfg)?;
    let mut rec = Records::default();
    for (layer, n) in model.layer_param_counts() {
        rec.push([("layer", layer), ("params", n.to_string())]);
    }
    let total = model.count_params();
    rec.push([
        ("total", total.to_string()),
        ("analytic", analytic_param_count(&cfg).to_string()),
        ("reference", REFERENCE_PARAM_COUNT.to_string()),
        (
            "ratio",
            format!("{:.4}", total as f64 / REFERENCE_PARAM_COUNT as f64),
        ),
    ]);
    rec.write(out, a.pretty)?;
    Ok(0)
}

/// Architecture variant compared by `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoCoordConv,
    NoCbam,
}

impl Variant {
    pub fn parse_list(s: &str) -> Result<Vec<Variant>> {
        s.split(',')
            .map(str::trim)
            .map(|v| match v {
                "full" => Ok(Variant::Full),
                "no-coordconv" => Ok(Variant::NoCoordConv),
                "no-cbam" => Ok(Variant::NoCbam),
                other => Err(Error::Argument(format!(
                    "unknown variant {other:?}; expected full, no-coordconv or no-cbam"
                ))),
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCoordConv => "no-coordconv",
            Variant::NoCbam => "no-cbam",
        }
    }

    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut cfg = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoCoordConv => cfg.use_coordconv = false,
            Variant::NoCbam => cfg.use_cbam = false,
        }
        cfg
    }
}

fn cmd_ablate(a: AblateArgs, out: &mut dyn Write) -> Result<i32> {
    let variants = Variant::parse_list(&a.variants)?;
    let base = a.model.config(a.budget.seed);
    let cfg = a.budget.config();
    for v in &variants {
        v.apply(&base).validate()?;
    }
    cfg.validate(base.spatial_multiple())?;
    let samples = load_samples(manifest_path(&a.data)?)?;
    let (train_set, val) = split_samples(&samples, &cfg);
    if train_set.is_empty() {
        return Err(Error::Data(
            "no training images left after the validation split".into(),
        ));
    }

    let mut rec = Records::default();
    let mut rows = Vec::new();
    for v in &variants {
        let model_cfg = v.apply(&base);
        let (model, _) = train_with(
            Model::<f32>::build(&model_cfg)?,
            train_set,
            val,
            &cfg,
            |_| {},
        )?;
        let train_report = evaluate(&model, train_set)?;
        let val_report = if val.is_empty() {
            None
        } else {
            Some(evaluate(&model, val)?)
        };
        let show = |r: Option<f64>| r.map_or("-".to_string(), |v| v.to_string());
        rec.push([
            ("variant", v.name().to_string()),
            ("train_mrae", train_report.mrae.to_string()),
            ("val_mrae", show(val_report.map(|r| r.mrae))),
            ("val_rmse", show(val_report.map(|r| r.rmse))),
            ("params", model.count_params().to_string()),
        ]);
        rows.push((*v, val_report.map(|r| r.mrae)));
    }
    if let Some(&(_, Some(full))) = rows.iter().find(|(v, _)| *v == Variant::Full) {
        for &(v, m) in &rows {
            if let (true, Some(m)) = (v != Variant::Full, m) {
                if full >= m {
                    rec.push([(
                        "note",
                        format!(
                            "full val_mrae {full} is not below {} val_mrae {m}",
                            v.name()
                        ),
                    )]);
                }
            }
        }
    }
    rec.write(out, a.pretty)?;
    Ok(0)
}
