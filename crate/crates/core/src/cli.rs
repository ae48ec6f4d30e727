//! Run configuration, orchestration and file output.
//!
//! Settings are resolved from four layers, highest first: command-line
//! flags, a TOML config file, a named preset, built-in defaults. The fully
//! resolved settings are written next to the outputs as
//! `resolved_config.toml`; feeding that file back with `--config` repeats
//! the run exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::engine::{RunRecord, SimConfig, Tally, World};
use crate::interaction::MerchantMode;
use crate::stats::{
    deaths_per_tick_hist, fit_effective_index, lifetime_hist, lifetime_scale_hist2d, prediction_accuracy, IndexPreset,
    LogBins, PowerLawFit, StatsError,
};
use crate::tickdata::{load_ticks, mid_price, synth_series, ColumnMap, SynthModel, TickDataError};

/// Tick at which the long-archive accuracy figures were read off.
pub const ARCHIVE_T1: usize = 9_000_000;

pub const OUTPUT_FILES: [&str; 7] = [
    "transient.csv",
    "deaths.csv",
    "lifetime_dist.csv",
    "deathrate_dist.csv",
    "lifetime_scale.csv",
    "summary.csv",
    "resolved_config.toml",
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] TickDataError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperH1,
    PaperH100,
    PaperH1000,
}

impl Preset {
    pub fn horizon(self) -> usize {
        match self {
            Preset::PaperH1 => 1,
            Preset::PaperH100 => 100,
            Preset::PaperH1000 => 1000,
        }
    }

    pub fn sim_config(self) -> SimConfig {
        SimConfig::paper(self.horizon())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper-h1" => Ok(Preset::PaperH1),
            "paper-h100" => Ok(Preset::PaperH100),
            "paper-h1000" => Ok(Preset::PaperH1000),
            other => Err(format!("unknown preset {other:?} (paper-h1|paper-h100|paper-h1000)")),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "paper-h{}", self.horizon())
    }
}

/// Synthetic data source, written `MODEL:key=value,...` with keys
/// `length`, `seed`, `step`, `p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub model: SynthModel,
    pub length: usize,
    pub step: f64,
    pub p0: f64,
    pub seed: u64,
}

impl FromStr for SynthSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (model, rest) = s.split_once(':').unwrap_or((s, ""));
        let model = model.parse::<SynthModel>().map_err(|e| e.to_string())?;
        let mut spec = SynthSpec {
            model,
            length: 1_000_000,
            step: 1e-4,
            p0: 1.0,
            seed: 0,
        };
        for kv in rest.split(',').filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("expected key=value in synthetic spec, got {kv:?}"))?;
            let bad = || format!("bad value {v:?} for synthetic {k}");
            match k.trim() {
                "length" => spec.length = v.parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                "step" => spec.step = v.parse().map_err(|_| bad())?,
                "p0" => spec.p0 = v.parse().map_err(|_| bad())?,
                other => return Err(format!("unknown synthetic key {other:?}")),
            }
        }
        if spec.length == 0 {
            return Err("synthetic length must be at least 1".into());
        }
        if !(spec.step > 0.0 && spec.p0 > 0.0) {
            return Err("synthetic step and p0 must be positive".into());
        }
        Ok(spec)
    }
}

impl std::fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:length={},step={:?},p0={:?},seed={}",
            self.model, self.length, self.step, self.p0, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File { path: PathBuf, columns: ColumnMap },
    Synthetic(SynthSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub data: DataSource,
    pub sim: SimConfig,
    pub t1: Option<usize>,
    pub fit_range: Option<(f64, f64)>,
    pub output_dir: PathBuf,
    pub preset: Option<Preset>,
}

/// One layer of settings; every field optional. This is also the config
/// file schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub preset: Option<String>,
    pub data: Option<PathBuf>,
    pub columns: Option<String>,
    pub synthetic: Option<String>,
    pub strategy: Option<String>,
    pub merchant: Option<String>,
    pub h: Option<usize>,
    pub n_tf: Option<usize>,
    pub u_born: Option<u32>,
    pub l_min: Option<usize>,
    pub l_max: Option<usize>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub sample_every: Option<usize>,
    pub t1: Option<usize>,
    pub fit_range: Option<String>,
    pub out: Option<PathBuf>,
}

impl ConfigLayer {
    /// `top` wins field by field. The data source is taken as a unit from
    /// the highest layer that names one.
    pub fn overlay(self, top: ConfigLayer) -> ConfigLayer {
        let top_has_source = top.data.is_some() || top.synthetic.is_some();
        let (data, synthetic, columns) = if top_has_source {
            (top.data, top.synthetic, top.columns.or(self.columns))
        } else {
            (self.data, self.synthetic, top.columns.or(self.columns))
        };
        ConfigLayer {
            preset: top.preset.or(self.preset),
            data,
            columns,
            synthetic,
            strategy: top.strategy.or(self.strategy),
            merchant: top.merchant.or(self.merchant),
            h: top.h.or(self.h),
            n_tf: top.n_tf.or(self.n_tf),
            u_born: top.u_born.or(self.u_born),
            l_min: top.l_min.or(self.l_min),
            l_max: top.l_max.or(self.l_max),
            sigma: top.sigma.or(self.sigma),
            seed: top.seed.or(self.seed),
            sample_every: top.sample_every.or(self.sample_every),
            t1: top.t1.or(self.t1),
            fit_range: top.fit_range.or(self.fit_range),
            out: top.out.or(self.out),
        }
    }

    /// Sets one field from a sweep key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
            v.parse()
                .map_err(|_| CliError::Usage(format!("bad value {v:?} for {key}")))
        }
        match key.replace('-', "_").as_str() {
            "h" => self.h = Some(num(key, value)?),
            "n_tf" => self.n_tf = Some(num(key, value)?),
            "u_born" => self.u_born = Some(num(key, value)?),
            "l_min" => self.l_min = Some(num(key, value)?),
            "l_max" => self.l_max = Some(num(key, value)?),
            "sigma" => self.sigma = Some(num(key, value)?),
            "seed" => self.seed = Some(num(key, value)?),
            "sample_every" => self.sample_every = Some(num(key, value)?),
            "t1" => self.t1 = Some(num(key, value)?),
            "strategy" => self.strategy = Some(value.to_string()),
            "merchant" => self.merchant = Some(value.to_string()),
            "fit_range" => self.fit_range = Some(value.to_string()),
            _ => return usage(format!("cannot sweep over {key:?}")),
        }
        Ok(())
    }

    /// Resolves a fully overlaid layer into a run specification.
    pub fn resolve(self) -> Result<RunSpec, CliError> {
        let preset = match &self.preset {
            Some(p) => Some(p.parse::<Preset>().map_err(CliError::Usage)?),
            None => None,
        };
        let base = preset.map(Preset::sim_config).unwrap_or_default();
        let parse_enum = |v: &Option<String>| -> Result<Option<_>, CliError> {
            v.as_deref().map(str::parse).transpose().map_err(CliError::Usage)
        };
        let sim = SimConfig {
            n_tf: self.n_tf.unwrap_or(base.n_tf),
            u_born: self.u_born.unwrap_or(base.u_born),
            h: self.h.unwrap_or(base.h),
            l_min: self.l_min.unwrap_or(base.l_min),
            l_max: self.l_max.unwrap_or(base.l_max),
            strategy: parse_enum(&self.strategy)?.unwrap_or(base.strategy),
            mutation_sigma: self.sigma.unwrap_or(base.mutation_sigma),
            merchant_mode: self
                .merchant
                .as_deref()
                .map(str::parse::<MerchantMode>)
                .transpose()
                .map_err(CliError::Usage)?
                .unwrap_or(base.merchant_mode),
            seed: self.seed.unwrap_or(base.seed),
            sample_every: self.sample_every.unwrap_or(base.sample_every),
        };
        sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let data = match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return usage("--data and --synthetic are mutually exclusive"),
            (None, None) => return usage("missing data source: give --data PATH or --synthetic SPEC"),
            (Some(path), None) => DataSource::File {
                path: path.clone(),
                columns: match &self.columns {
                    Some(c) => c.parse().map_err(|e: TickDataError| CliError::Usage(e.to_string()))?,
                    None => ColumnMap::default(),
                },
            },
            (None, Some(spec)) => DataSource::Synthetic(spec.parse().map_err(CliError::Usage)?),
        };
        if self.t1 == Some(0) {
            return usage("--t1 must be at least 1");
        }
        let fit_range = self.fit_range.as_deref().map(parse_range).transpose()?;
        Ok(RunSpec {
            data,
            sim,
            t1: self.t1,
            fit_range,
            output_dir: self.out.unwrap_or_else(|| PathBuf::from("out")),
            preset,
        })
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("fit range must be LO:HI with 0 < LO < HI, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi > lo) {
        return Err(bad());
    }
    Ok((lo, hi))
}

impl RunSpec {
    /// The fully resolved settings as a config layer.
    pub fn to_layer(&self) -> ConfigLayer {
        let (data, columns, synthetic) = match &self.data {
            DataSource::File { path, columns } => (Some(path.clone()), Some(columns.to_string()), None),
            DataSource::Synthetic(spec) => (None, None, Some(spec.to_string())),
        };
        ConfigLayer {
            preset: self.preset.map(|p| p.to_string()),
            data,
            columns,
            synthetic,
            strategy: Some(self.sim.strategy.to_string()),
            merchant: Some(self.sim.merchant_mode.to_string()),
            h: Some(self.sim.h),
            n_tf: Some(self.sim.n_tf),
            u_born: Some(self.sim.u_born),
            l_min: Some(self.sim.l_min),
            l_max: Some(self.sim.l_max),
            sigma: Some(self.sim.mutation_sigma),
            seed: Some(self.sim.seed),
            sample_every: Some(self.sim.sample_every),
            t1: self.t1,
            fit_range: self.fit_range.map(|(lo, hi)| format!("{lo:?}:{hi:?}")),
            out: Some(self.output_dir.clone()),
        }
    }

    pub fn resolved_config(&self) -> String {
        toml::to_string(&self.to_layer()).expect("config layer serializes")
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "scalepop",
    version,
    about = "Populations of scale-diversified trend followers on tick data"
)]
pub struct Args {
    /// TOML file with any of the settings below.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Tick file, one `timestamp,bid,ask` record per line.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Column order of the tick file, e.g. `bid,ask,ts`.
    #[arg(long)]
    pub columns: Option<String>,
    /// Synthetic series, e.g. `coin:length=1000000,seed=7`.
    #[arg(long, value_name = "SPEC")]
    pub synthetic: Option<String>,
    /// paper-h1, paper-h100 or paper-h1000.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// independent, bm, rm or bm_rm.
    #[arg(long)]
    pub strategy: Option<String>,
    /// argmax or weighted.
    #[arg(long)]
    pub merchant: Option<String>,
    #[arg(long = "h", value_name = "N")]
    pub h: Option<usize>,
    #[arg(long = "n-tf", value_name = "N")]
    pub n_tf: Option<usize>,
    #[arg(long = "u-born", value_name = "N")]
    pub u_born: Option<u32>,
    #[arg(long = "l-min", value_name = "N")]
    pub l_min: Option<usize>,
    #[arg(long = "l-max", value_name = "N")]
    pub l_max: Option<usize>,
    #[arg(long, value_name = "N")]
    pub sigma: Option<f64>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long = "sample-every", value_name = "N")]
    pub sample_every: Option<usize>,
    /// Tick at which prediction accuracy is read (default: last tick).
    #[arg(long, value_name = "N")]
    pub t1: Option<usize>,
    /// Lifetime fit range, `LO:HI`.
    #[arg(long = "fit-range", value_name = "LO:HI")]
    pub fit_range: Option<String>,
    /// Output directory (falls back to $SCALEPOP_OUT, then `out`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// One run per value, e.g. `h=1,100,1000`.
    #[arg(long, value_name = "KEY=V1,V2,...")]
    pub sweep: Option<String>,
}

impl Args {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            preset: self.preset.clone(),
            data: self.data.clone(),
            columns: self.columns.clone(),
            synthetic: self.synthetic.clone(),
            strategy: self.strategy.clone(),
            merchant: self.merchant.clone(),
            h: self.h,
            n_tf: self.n_tf,
            u_born: self.u_born,
            l_min: self.l_min,
            l_max: self.l_max,
            sigma: self.sigma,
            seed: self.seed,
            sample_every: self.sample_every,
            t1: self.t1,
            fit_range: self.fit_range.clone(),
            out: self.out.clone(),
        }
    }
}

/// A parsed command line: one run, or a sweep of runs in sibling
/// directories.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub runs: Vec<RunSpec>,
    pub sweep: bool,
}

pub fn read_config_file(path: &Path) -> Result<ConfigLayer, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

/// Resolves argv (including the program name) into run specifications.
/// `env_out` is the `SCALEPOP_OUT` fallback for the output directory.
pub fn parse_config<I, T>(argv: I, env_out: Option<PathBuf>) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => ConfigLayer::default(),
    };
    let fallback = ConfigLayer {
        out: env_out,
        ..ConfigLayer::default()
    };
    let merged = fallback.overlay(file).overlay(args.layer());

    let Some(sweep) = &args.sweep else {
        return Ok(Invocation {
            runs: vec![merged.resolve()?],
            sweep: false,
        });
    };
    let (key, values) = sweep
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("sweep must be KEY=V1,V2,..., got {sweep:?}")))?;
    let base_out = merged.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut runs = Vec::new();
    for value in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
        let mut layer = merged.clone();
        layer.set(key.trim(), value)?;
        layer.out = Some(base_out.join(format!("{}={}", key.trim(), value)));
        runs.push(layer.resolve()?);
    }
    if runs.is_empty() {
        return usage("sweep has no values");
    }
    Ok(Invocation { runs, sweep: true })
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub ticks: usize,
    pub t1: usize,
    pub mean_utility_t1: f64,
    pub prediction_accuracy: f64,
    pub deaths: usize,
    pub censored_survivors: usize,
    pub original_survivors: usize,
    pub tally: Tally,
    pub lifetime_density_fit: Option<PowerLawFit<f64>>,
    pub lifetime_ccdf_fit: Option<PowerLawFit<f64>>,
    pub deathrate_fit: Option<PowerLawFit<f64>>,
    pub lifetime_range: (f64, f64),
    pub deathrate_range: (f64, f64),
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let idx = |fit: &Option<PowerLawFit<f64>>| fit.map_or("n/a".to_string(), |x| format!("{:.3}", x.slope));
        write!(
            f,
            "PA={:.5} (t1={}) deaths={} survivors={} (gen0 {}) index lifetime={} ccdf={} deathrate={}",
            self.prediction_accuracy,
            self.t1,
            self.deaths,
            self.censored_survivors,
            self.original_survivors,
            idx(&self.lifetime_density_fit),
            idx(&self.lifetime_ccdf_fit),
            idx(&self.deathrate_fit),
        )
    }
}

/// Rendered output files, in [`OUTPUT_FILES`] order.
pub struct RunOutput {
    pub summary: RunSummary,
    pub files: Vec<(&'static str, String)>,
}

fn load_series(data: &DataSource) -> Result<Vec<f64>, CliError> {
    let series = match data {
        DataSource::File { path, columns } => mid_price(&load_ticks::<f64>(path, *columns)?)?,
        DataSource::Synthetic(s) => synth_series(s.length, s.model, s.step, s.p0, s.seed)?,
    };
    Ok(series.into_prices())
}

fn log10_cell(v: f64) -> String {
    if v > 0.0 {
        format!("{}", v.log10())
    } else {
        String::new()
    }
}

fn fit_row(out: &mut String, name: &str, fit: &Result<PowerLawFit<f64>, StatsError>, range: (f64, f64)) {
    match fit {
        Ok(f) => writeln!(out, "{name},{},{},{},{}", f.slope, range.0, range.1, f.residual),
        Err(_) => writeln!(out, "{name},,{},{},", range.0, range.1),
    }
    .unwrap();
}

/// Runs the simulation described by `spec` and renders every output file
/// in memory.
pub fn simulate(spec: &RunSpec) -> Result<RunOutput, CliError> {
    let prices = load_series(&spec.data)?;
    let ticks = prices.len();
    let mut world = World::new(spec.sim.clone(), &prices).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rec = RunRecord::default();
    world.run(&mut rec);
    let tally = world.tally();

    let t1 = spec.t1.unwrap_or(ticks - 1);
    let sample = rec.samples.iter().find(|s| s.tick == t1).ok_or_else(|| {
        CliError::Run(format!(
            "t1 = {t1} is not a sampled tick (multiples of {} and the last tick {})",
            spec.sim.sample_every,
            ticks - 1
        ))
    })?;
    let pa = if t1 == 0 {
        f64::NAN
    } else {
        prediction_accuracy(sample.mean_utility, t1).expect("t1 > 0")
    };

    let preset = IndexPreset::for_strategy(spec.sim.strategy);
    let lifetime_range = spec.fit_range.unwrap_or(preset.lifetime_range);
    let deathrate_range = preset.deathrate_range;
    let censored = spec.sim.n_tf;
    let original = world.agents().filter(|a| a.generation == 0).count();

    let lifetime_bins = LogBins::decades(1.0, ticks.max(1) as f64).map_err(|e| CliError::Run(e.to_string()))?;
    let scale_bins =
        LogBins::decades(spec.sim.l_min as f64, spec.sim.l_max as f64).map_err(|e| CliError::Run(e.to_string()))?;
    let mut lifetimes = lifetime_hist(&rec.deaths, lifetime_bins.clone(), censored);
    let density_fit = fit_effective_index(&mut lifetimes.density, lifetime_range);
    let ccdf_fit = lifetimes.fit_ccdf(lifetime_range);
    let mut deathrate = deaths_per_tick_hist::<f64>(&rec.deaths, ticks);
    let deathrate_fit = fit_effective_index(&mut deathrate.density, deathrate_range);
    let joint = lifetime_scale_hist2d(&rec.deaths, lifetime_bins, scale_bins);

    let mut transient = String::from("tick,mean_utility,mean_age,deaths_cum,passive_fraction\n");
    for s in &rec.samples {
        writeln!(
            transient,
            "{},{},{},{},{}",
            s.tick, s.mean_utility, s.mean_age, s.deaths_so_far, s.passive_fraction
        )
        .unwrap();
    }

    let mut deaths = String::from("tick,lifetime,scale,agent_id,generation\n");
    for d in &rec.deaths {
        writeln!(
            deaths,
            "{},{},{},{},{}",
            d.tick, d.lifetime, d.scale, d.agent_id, d.generation
        )
        .unwrap();
    }

    let mut lifetime_csv = String::from("bin_center,density,ccdf,count,log10_bin_center,log10_density,log10_ccdf\n");
    for (((c, d), cc), n) in lifetimes
        .density
        .centers()
        .iter()
        .zip(&lifetimes.density.densities)
        .zip(&lifetimes.ccdf)
        .zip(&lifetimes.density.counts)
    {
        writeln!(
            lifetime_csv,
            "{c},{d},{cc},{n},{},{},{}",
            log10_cell(*c),
            log10_cell(*d),
            log10_cell(*cc)
        )
        .unwrap();
    }

    let mut deathrate_csv = String::from("count,density,log10_count,log10_density\n");
    for (k, d) in deathrate.rows() {
        writeln!(deathrate_csv, "{k},{d},{},{}", log10_cell(k as f64), log10_cell(d)).unwrap();
    }

    let mut joint_csv = String::from("lifetime_bin_center,scale_bin_center,count,density\n");
    let total = rec.deaths.len().max(1) as f64;
    let (lc, lw) = (joint.lifetime_bins.centers(), joint.lifetime_bins.widths());
    let (sc, sw) = (joint.scale_bins.centers(), joint.scale_bins.widths());
    for i in 0..lc.len() {
        for j in 0..sc.len() {
            let n = joint.get(i, j);
            writeln!(
                joint_csv,
                "{},{},{},{}",
                lc[i],
                sc[j],
                n,
                n as f64 / (total * lw[i] * sw[j])
            )
            .unwrap();
        }
    }

    let mut summary_csv = String::from("metric,value,range_lo,range_hi,residual\n");
    for (name, value) in [
        ("ticks", ticks.to_string()),
        ("t1", t1.to_string()),
        ("mean_utility_t1", sample.mean_utility.to_string()),
        ("prediction_accuracy", pa.to_string()),
        ("deaths", rec.deaths.len().to_string()),
        ("censored_survivors", censored.to_string()),
        ("original_survivors", original.to_string()),
        ("settled", tally.settled.to_string()),
        ("correct", tally.correct.to_string()),
        ("wrong", tally.wrong.to_string()),
        ("discarded", tally.discarded.to_string()),
        ("passive", tally.passive.to_string()),
    ] {
        writeln!(summary_csv, "{name},{value},,,").unwrap();
    }
    fit_row(&mut summary_csv, "lifetime_density_index", &density_fit, lifetime_range);
    fit_row(&mut summary_csv, "lifetime_ccdf_index", &ccdf_fit, lifetime_range);
    fit_row(&mut summary_csv, "deathrate_index", &deathrate_fit, deathrate_range);
    writeln!(
        summary_csv,
        "reference_lifetime_index,{},{},{},",
        preset.lifetime_index, preset.lifetime_range.0, preset.lifetime_range.1
    )
    .unwrap();
    writeln!(
        summary_csv,
        "reference_deathrate_index,{},{},{},",
        preset.deathrate_index, preset.deathrate_range.0, preset.deathrate_range.1
    )
    .unwrap();

    let summary = RunSummary {
        ticks,
        t1,
        mean_utility_t1: sample.mean_utility,
        prediction_accuracy: pa,
        deaths: rec.deaths.len(),
        censored_survivors: censored,
        original_survivors: original,
        tally,
        lifetime_density_fit: density_fit.ok(),
        lifetime_ccdf_fit: ccdf_fit.ok(),
        deathrate_fit: deathrate_fit.ok(),
        lifetime_range,
        deathrate_range,
    };
    let files = vec![
        (OUTPUT_FILES[0], transient),
        (OUTPUT_FILES[1], deaths),
        (OUTPUT_FILES[2], lifetime_csv),
        (OUTPUT_FILES[3], deathrate_csv),
        (OUTPUT_FILES[4], joint_csv),
        (OUTPUT_FILES[5], summary_csv),
        (OUTPUT_FILES[6], spec.resolved_config()),
    ];
    Ok(RunOutput { summary, files })
}

/// Runs one specification and writes its outputs. Files already written
/// are removed again if a later write fails.
pub fn run(spec: &RunSpec) -> Result<RunSummary, CliError> {
    log::info!(
        "{}: {} run, h={}, {} agents",
        spec.output_dir.display(),
        spec.sim.strategy,
        spec.sim.h,
        spec.sim.n_tf
    );
    let output = simulate(spec)?;
    log::info!(
        "{}: {} deaths, writing outputs",
        spec.output_dir.display(),
        output.summary.deaths
    );
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.clone(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, body) in &output.files {
        let path = dir.join(name);
        if let Err(source) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(CliError::Write { path, source });
        }
        written.push(path);
    }
    Ok(output.summary)
}

/// Runs every specification on its own thread. Results come back in input
/// order.
pub fn run_all(specs: &[RunSpec]) -> Vec<Result<RunSummary, CliError>> {
    if specs.len() == 1 {
        return vec![run(&specs[0])];
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs.iter().map(|s| scope.spawn(move || run(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Run("run panicked".into()))))
            .collect()
    })
}
