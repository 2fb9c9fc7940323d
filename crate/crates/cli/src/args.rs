use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use faceaudit::equalize::MatchMode;
use faceaudit::facespace::PcaRoute;
use faceaudit::maskmetrics::LabelSet;
use faceaudit::scorekit::ImpostorScope;
use faceaudit::{Filter, Gender};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "faceaudit",
    version,
    about = "Audit female/male accuracy differences in face-verification data",
    after_help = "Every subcommand accepts --config FILE with `key = value` lines that act as \
                  `--key value` flags (explicit flags win). For `synth` the file holds generator \
                  keys instead. FACEAUDIT_WORKERS sets the default worker count."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a dataset directory and print its validation report.
    #[command(args_override_self = true)]
    IngestCheck(IngestArgs),
    /// Genuine/impostor score histograms and d-prime per group.
    #[command(args_override_self = true)]
    Scores(ScoresArgs),
    /// d-prime table only (same pairs as `scores`).
    #[command(args_override_self = true)]
    Dprime(ScoresArgs),
    /// Per-group face-frequency heatmaps and their difference.
    #[command(args_override_self = true)]
    Heatmap(HeatmapArgs),
    /// Distribution of the per-image face fraction per group.
    #[command(args_override_self = true)]
    Pface(PfaceArgs),
    /// Stencil of pixels whose face frequency reaches a level.
    #[command(args_override_self = true)]
    LevelMask(LevelMaskArgs),
    /// Stencil all images and pair each female image with a male image by IoU.
    #[command(args_override_self = true)]
    Equalize(EqualizeArgs),
    /// Eigenface variance curves and components to a variance target.
    #[command(args_override_self = true)]
    Facespace(FacespaceArgs),
    /// Keep the male images with the lowest reconstruction error.
    #[command(args_override_self = true)]
    FlipSelect(FlipSelectArgs),
    /// Subsample a source set to a reference age distribution.
    #[command(args_override_self = true)]
    DemoMatch(DemoMatchArgs),
    /// Generate a synthetic dataset.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Render a CSV artifact as SVG.
    #[command(args_override_self = true)]
    Plot(PlotArgs),
    /// Run the whole synthetic replica pipeline.
    #[command(args_override_self = true)]
    Repro(ReproArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::IngestCheck(_) => "ingest-check",
            Command::Scores(_) => "scores",
            Command::Dprime(_) => "dprime",
            Command::Heatmap(_) => "heatmap",
            Command::Pface(_) => "pface",
            Command::LevelMask(_) => "level-mask",
            Command::Equalize(_) => "equalize",
            Command::Facespace(_) => "facespace",
            Command::FlipSelect(_) => "flip-select",
            Command::DemoMatch(_) => "demo-match",
            Command::Synth(_) => "synth",
            Command::Plot(_) => "plot",
            Command::Repro(_) => "repro",
        }
    }
}

/// Output directory, worker count and plot toggle. None of these change
/// artifact contents, so they stay out of `run.json`.
#[derive(Args, Debug, Serialize)]
pub struct RunArgs {
    /// Output directory (created atomically; must not exist unless --force).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value_t = false, action = ArgAction::Set)]
    #[serde(skip)]
    pub force: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "FACEAUDIT_WORKERS", default_value_t = 0)]
    #[serde(skip)]
    pub workers: usize,
    /// Also write SVG plots next to the CSV files.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub plots: bool,
    /// key = value file of default flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Clone, Default)]
pub struct FilterArgs {
    #[arg(long)]
    pub gender: Option<Gender>,
    #[arg(long)]
    pub cohort: Option<String>,
    /// Inclusive minimum age.
    #[arg(long)]
    pub age_min: Option<u32>,
    /// Inclusive maximum age.
    #[arg(long)]
    pub age_max: Option<u32>,
}

impl FilterArgs {
    pub fn to_filter(&self) -> Filter {
        let age_range = match (self.age_min, self.age_max) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(0), hi.unwrap_or(u32::MAX))),
        };
        Filter {
            gender: self.gender,
            cohort: self.cohort.clone(),
            age_range,
            image_ids: None,
        }
    }

    /// Same filter without the gender condition.
    pub fn without_gender(&self) -> Filter {
        Filter {
            gender: None,
            ..self.to_filter()
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Optional directory for validation.json.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value_t = false, action = ArgAction::Set)]
    #[serde(skip)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScopeArg {
    Within,
    Cross,
}

impl From<ScopeArg> for ImpostorScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Within => ImpostorScope::WithinGroup,
            ScopeArg::Cross => ImpostorScope::CrossGender,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ScoresArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Impostor pairs within each gender or across genders.
    #[arg(long, value_enum, default_value_t = ScopeArg::Within)]
    pub impostor_scope: ScopeArg,
    /// Score a seeded uniform sample of at most this many impostor pairs.
    #[arg(long)]
    pub max_pairs: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub bins: usize,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub hi: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Segmentation labels counted as face.
    #[arg(long, default_value_t = LabelSet::default())]
    #[serde(serialize_with = "crate::output::display")]
    pub labels: LabelSet,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct PfaceArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long, default_value_t = LabelSet::default())]
    #[serde(serialize_with = "crate::output::display")]
    pub labels: LabelSet,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct LevelMaskArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Images whose heatmap defines the stencil (default: female images).
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long, default_value_t = LabelSet::default())]
    #[serde(serialize_with = "crate::output::display")]
    pub labels: LabelSet,
    #[arg(long, default_value_t = faceaudit::maskmetrics::DEFAULT_LEVEL)]
    pub level: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Stencil source shared by the equalization and face-space commands.
#[derive(Args, Debug, Serialize)]
pub struct StencilArgs {
    /// Read the stencil from a masks.bin-format file instead of computing it.
    #[arg(long)]
    pub stencil: Option<PathBuf>,
    /// Level of the female heatmap used when no stencil file is given.
    #[arg(long, default_value_t = faceaudit::maskmetrics::DEFAULT_LEVEL)]
    pub level: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Greedy,
    Exact,
}

impl From<ModeArg> for MatchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Greedy => MatchMode::GreedyGlobal,
            ModeArg::Exact => MatchMode::ExactAssignment,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct EqualizeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Cohort/age restriction applied to both groups.
    #[arg(long)]
    pub cohort: Option<String>,
    #[arg(long)]
    pub age_min: Option<u32>,
    #[arg(long)]
    pub age_max: Option<u32>,
    #[arg(long, default_value_t = LabelSet::default())]
    #[serde(serialize_with = "crate::output::display")]
    pub labels: LabelSet,
    #[command(flatten)]
    pub stencil: StencilArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    pub mode: ModeArg,
    /// Allow one male image to serve several female images.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value_t = false, action = ArgAction::Set)]
    pub with_replacement: bool,
    /// Largest acceptable per-pixel residual.
    #[arg(long, default_value_t = 0.05)]
    pub budget: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

impl EqualizeArgs {
    pub fn group_filter(&self) -> FilterArgs {
        FilterArgs {
            gender: None,
            cohort: self.cohort.clone(),
            age_min: self.age_min,
            age_max: self.age_max,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RouteArg {
    Auto,
    Gram,
    Covariance,
}

impl From<RouteArg> for PcaRoute {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Auto => PcaRoute::Auto,
            RouteArg::Gram => PcaRoute::Gram,
            RouteArg::Covariance => PcaRoute::Covariance,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct FacespaceArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub cohort: Option<String>,
    #[arg(long)]
    pub age_min: Option<u32>,
    #[arg(long)]
    pub age_max: Option<u32>,
    #[arg(long, default_value_t = LabelSet::default())]
    #[serde(serialize_with = "crate::output::display")]
    pub labels: LabelSet,
    #[command(flatten)]
    pub stencil: StencilArgs,
    /// Cumulative variance fraction to report components for.
    #[arg(long, default_value_t = 0.95)]
    pub target: f64,
    /// Use one image per subject (the one with the largest face area).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub per_subject: bool,
    /// Subsample the larger group to the smaller group's subject count.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub balance: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
    pub route: RouteArg,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct FlipSelectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub cohort: Option<String>,
    #[arg(long)]
    pub age_min: Option<u32>,
    #[arg(long)]
    pub age_max: Option<u32>,
    #[arg(long, default_value_t = LabelSet::default())]
    #[serde(serialize_with = "crate::output::display")]
    pub labels: LabelSet,
    #[command(flatten)]
    pub stencil: StencilArgs,
    /// Use one image per subject (the one with the largest face area).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub per_subject: bool,
    /// Male images to keep (default: number of female subjects).
    #[arg(long)]
    pub keep: Option<usize>,
    /// Variance fraction that fixes the ranking rank k.
    #[arg(long, default_value_t = 0.80)]
    pub target: f64,
    /// Variance fraction reported for the resulting curves.
    #[arg(long, default_value_t = 0.95)]
    pub report_target: f64,
    /// Rank by a basis fitted on female and male images together.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value_t = false, action = ArgAction::Set)]
    pub joint_basis: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct DemoMatchArgs {
    /// Dataset to draw from.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset whose age distribution is matched (default: --dataset).
    #[arg(long)]
    pub reference_dataset: Option<PathBuf>,
    #[arg(long)]
    pub source_gender: Option<Gender>,
    #[arg(long)]
    pub source_cohort: Option<String>,
    #[arg(long)]
    pub reference_gender: Option<Gender>,
    #[arg(long)]
    pub reference_cohort: Option<String>,
    /// Comma-separated age bins, e.g. 18-29,30-39,40+.
    #[arg(long, default_value = "18-29,30-39,40-49,50+")]
    pub bins: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Named parameter set applied before the config file.
    #[arg(long, default_value = "default")]
    pub preset: String,
    /// Generator key = value file (see `synth.cfg` in any output).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra generator settings, e.g. --set female.subjects=50.
    #[arg(long = "set", value_name = "KEY=VALUE", action = ArgAction::Append)]
    pub set: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value_t = false, action = ArgAction::Set)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    HistOverlay,
    Heatmap,
    DiffHeatmap,
    Curve,
}

#[derive(Args, Debug, Serialize)]
pub struct PlotArgs {
    /// CSV artifact to render.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// SVG file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReproArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunArgs,
}
