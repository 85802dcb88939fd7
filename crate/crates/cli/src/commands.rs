use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use pgt_core::consensus::{majority_vote, staple_fuse_labels, StapleParams};
use pgt_core::grid::{read_lgrid, write_lgrid};
use pgt_core::metrics::{fleiss_kappa, krippendorff_alpha_nominal, MetricResult};
use pgt_core::pgt::Reference;
use pgt_core::reliability::{inter_rater_with, intra_rater, ReliabilityEstimate};
use pgt_core::sim::{run_experiment_with_artifacts, ExperimentConfig, ExperimentResult};
use pgt_core::{evaluate_against_band, LabelGrid, MetricConfig, MetricId, PgtBand, RaterSet};
use serde::Serialize;

use crate::json::{fixed17, to_stable_string};
use crate::manifest::{self, Dataset, HEADER};
use crate::{
    BandArgs, ConsensusArgs, EstimateArgs, EvaluateArgs, FusionMethod, KindArg, MetricsArgs,
    ReliabilityArgs, SimulateArgs, EXIT_ABOVE_BAND, EXIT_OK,
};

pub struct Report {
    pub stdout: String,
    pub exit: u8,
}

impl Report {
    fn json<T: Serialize>(value: &T) -> Result<Self> {
        Ok(Self {
            stdout: to_stable_string(value)?,
            exit: EXIT_OK,
        })
    }
}

fn read_grid(path: &Path) -> Result<LabelGrid> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_lgrid(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> Result<Dataset> {
    Ok(manifest::load(path)?)
}

fn pair_value(
    metric: MetricId,
    cfg: &MetricConfig,
    a: &LabelGrid,
    b: &LabelGrid,
) -> Result<MetricResult> {
    Ok(match metric {
        MetricId::FleissKappa => {
            let n_cat = a.max_label().max(b.max_label()) as usize + 1;
            let rows: Vec<Vec<u64>> = a
                .voxels()
                .iter()
                .zip(b.voxels())
                .map(|(&x, &y)| {
                    let mut row = vec![0; n_cat];
                    row[x as usize] += 1;
                    row[y as usize] += 1;
                    row
                })
                .collect();
            fleiss_kappa(&rows, 2)?
        }
        MetricId::KrippendorffAlpha => {
            let units: Vec<Vec<Option<u16>>> = a
                .voxels()
                .iter()
                .zip(b.voxels())
                .map(|(&x, &y)| vec![Some(x), Some(y)])
                .collect();
            krippendorff_alpha_nominal(&units)?
        }
        _ => cfg.evaluate(a, b)?,
    })
}

pub fn metrics(args: &MetricsArgs, err: &mut dyn Write) -> Result<Report> {
    let a = read_grid(&args.a)?;
    let b = read_grid(&args.b)?;
    a.same_geometry(&b)
        .with_context(|| format!("{} vs {}", args.a.display(), args.b.display()))?;
    let mut out: BTreeMap<&'static str, Option<f64>> = BTreeMap::new();
    for &metric in &args.metrics {
        let cfg = MetricConfig {
            metric,
            label: args.label,
            iou_threshold: args.iou_threshold,
        };
        let r = pair_value(metric, &cfg, &a, &b)?;
        if let Some(reason) = r.reason {
            writeln!(err, "note: {metric} undefined: {reason}")?;
        }
        out.insert(metric.name(), r.value);
    }
    Report::json(&out)
}

fn make_band(set: &RaterSet, est: &EstimateArgs) -> Result<PgtBand> {
    let cfg = est.metric_config();
    let boot = est.bootstrap();
    let lower = inter_rater_with(set, cfg, &boot, est.inter_mode.into())?;
    let upper = intra_rater(set, cfg, &boot)?;
    Ok(PgtBand::new(lower, upper))
}

fn warn_caveat(band: &PgtBand, err: &mut dyn Write) -> Result<()> {
    if band.caveat {
        writeln!(
            err,
            "warning: inter-rater reliability ({}) exceeds intra-rater reliability ({}); band edges are inverted",
            fixed17(band.lower.point),
            fixed17(band.upper.point)
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Diagnostics {
    n_undefined_pairs: usize,
}

#[derive(Serialize)]
struct ReliabilityReport {
    version: &'static str,
    dataset: String,
    metric: MetricId,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    inter: Option<ReliabilityEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intra: Option<ReliabilityEstimate>,
    diagnostics: Diagnostics,
}

pub fn reliability(args: &ReliabilityArgs) -> Result<Report> {
    let ds = load(&args.manifest)?;
    let est = &args.estimate;
    let (cfg, boot) = (est.metric_config(), est.bootstrap());
    let inter = matches!(args.kind, KindArg::Inter | KindArg::Both)
        .then(|| inter_rater_with(&ds.raters, cfg, &boot, est.inter_mode.into()))
        .transpose()?;
    let intra = matches!(args.kind, KindArg::Intra | KindArg::Both)
        .then(|| intra_rater(&ds.raters, cfg, &boot))
        .transpose()?;
    let n_undefined_pairs = inter.iter().chain(&intra).map(|e| e.n_undefined).sum();
    Report::json(&ReliabilityReport {
        version: pgt_core::VERSION,
        dataset: ds.name,
        metric: est.metric,
        seed: est.seed,
        inter,
        intra,
        diagnostics: Diagnostics { n_undefined_pairs },
    })
}

#[derive(Serialize)]
struct BandReport {
    version: &'static str,
    dataset: String,
    metric: MetricId,
    seed: u64,
    band: PgtBand,
    diagnostics: Diagnostics,
}

pub fn band(args: &BandArgs, err: &mut dyn Write) -> Result<Report> {
    let ds = load(&args.manifest)?;
    let band = make_band(&ds.raters, &args.estimate)?;
    warn_caveat(&band, err)?;
    Report::json(&BandReport {
        version: pgt_core::VERSION,
        dataset: ds.name,
        metric: args.estimate.metric,
        seed: args.estimate.seed,
        diagnostics: Diagnostics {
            n_undefined_pairs: band.lower.n_undefined + band.upper.n_undefined,
        },
        band,
    })
}

#[derive(Serialize)]
struct RaterFit {
    rater_id: String,
    p: f64,
    q: f64,
}

#[derive(Serialize)]
struct LabelFit {
    label: u16,
    converged: bool,
    iterations: usize,
    raters: Vec<RaterFit>,
}

#[derive(Serialize)]
struct ItemConsensus {
    item_id: String,
    file: String,
    raters: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fusion: Vec<LabelFit>,
}

#[derive(Serialize)]
struct ConsensusReport {
    version: &'static str,
    dataset: String,
    method: &'static str,
    repeat: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    staple: Option<StapleParams>,
    items: Vec<ItemConsensus>,
}

fn safe_file_stem(id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        bail!("item id `{id}` cannot be used as a file name");
    }
    Ok(())
}

/// Fuses repeat `repeat` of every rater, item by item.
fn fuse_items(
    set: &RaterSet,
    method: FusionMethod,
    repeat: u32,
    params: &StapleParams,
) -> Result<Vec<(String, Vec<String>, LabelGrid, Vec<LabelFit>)>> {
    let mut out = Vec::new();
    for (item_id, item) in set.items() {
        let (ids, grids): (Vec<String>, Vec<LabelGrid>) = item
            .raters()
            .into_iter()
            .filter_map(|r| item.get(r, repeat).map(|g| (r.to_string(), g.clone())))
            .unzip();
        if grids.is_empty() {
            bail!("item `{item_id}` has no annotations with repeat {repeat}");
        }
        let (grid, fits) = match method {
            FusionMethod::Majority => (majority_vote(&grids)?, vec![]),
            FusionMethod::Staple => {
                let fused = staple_fuse_labels(&grids, params)
                    .with_context(|| format!("fusing item `{item_id}`"))?;
                let fits = fused
                    .per_label
                    .iter()
                    .map(|(label, r)| LabelFit {
                        label: *label,
                        converged: r.converged,
                        iterations: r.iterations,
                        raters: r
                            .performance
                            .iter()
                            .map(|perf| RaterFit {
                                rater_id: ids[perf.rater].clone(),
                                p: perf.p,
                                q: perf.q,
                            })
                            .collect(),
                    })
                    .collect();
                (fused.grid, fits)
            }
        };
        out.push((item_id.to_string(), ids, grid, fits));
    }
    Ok(out)
}

pub fn consensus(args: &ConsensusArgs) -> Result<Report> {
    let ds = load(&args.manifest)?;
    let params = args.staple.params();
    for (item_id, _) in ds.raters.items() {
        safe_file_stem(item_id)?;
    }
    let fused = fuse_items(&ds.raters, args.method, args.repeat, &params)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut items = Vec::new();
    for (item_id, raters, grid, fusion) in fused {
        let file = format!("{item_id}.lgrid");
        write_file(&args.out.join(&file), &write_lgrid(&grid))?;
        items.push(ItemConsensus {
            item_id,
            file,
            raters,
            fusion,
        });
    }
    let report = Report::json(&ConsensusReport {
        version: pgt_core::VERSION,
        dataset: ds.name,
        method: match args.method {
            FusionMethod::Majority => "majority",
            FusionMethod::Staple => "staple",
        },
        repeat: args.repeat,
        staple: (args.method == FusionMethod::Staple).then_some(params),
        items,
    })?;
    write_file(&args.out.join("consensus.json"), report.stdout.as_bytes())?;
    Ok(report)
}

pub fn evaluate(args: &EvaluateArgs, err: &mut dyn Write) -> Result<Report> {
    let ds = load(&args.manifest)?;
    if ds.models.is_empty() {
        bail!("manifest {} has no model rows", args.manifest.display());
    }
    let band = make_band(&ds.raters, &args.estimate)?;
    warn_caveat(&band, err)?;
    let reference = match (&args.consensus, &args.reference_rater) {
        (Some(method), _) => {
            let fused = fuse_items(&ds.raters, *method, 0, &args.staple.params())?;
            Reference::Consensus(fused.into_iter().map(|(id, _, g, _)| (id, g)).collect())
        }
        (None, Some(r)) => {
            if !ds.raters.raters().contains(r) {
                bail!("reference rater `{r}` does not appear in the manifest");
            }
            Reference::Rater(r.clone())
        }
        (None, None) => Reference::first_rater(&ds.raters)
            .ok_or_else(|| anyhow!("manifest has no annotation rows"))?,
    };
    let report = evaluate_against_band(
        &ds.name,
        &ds.raters,
        &ds.models,
        args.estimate.metric_config(),
        band,
        &reference,
    )?;
    let mut out = Report::json(&report)?;
    if args.strict && report.any_above_band() {
        out.exit = EXIT_ABOVE_BAND;
    }
    Ok(out)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    seed: u64,
    #[serde(flatten)]
    result: &'a ExperimentResult,
}

fn read_config(path: &Path) -> Result<(Option<u64>, ExperimentConfig)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let seed = match table.remove("seed") {
        None => None,
        Some(toml::Value::Integer(s)) if s >= 0 => Some(s as u64),
        Some(v) => bail!(
            "{}: seed must be a non-negative integer, got {v}",
            path.display()
        ),
    };
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok((seed, cfg))
}

fn curve_csv(result: &ExperimentResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "sim_to_reference", "sim_to_truth"])?;
    for s in &result.curve.samples {
        w.write_record([
            fixed17(s.t),
            fixed17(s.sim_to_reference),
            fixed17(s.sim_to_truth),
        ])?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

pub fn simulate(args: &SimulateArgs) -> Result<Report> {
    let (config_seed, cfg) = read_config(&args.config)?;
    let seed = args.seed.or(config_seed).unwrap_or(0);
    let cfg = cfg.with_seed(seed);
    let (result, artifacts) = run_experiment_with_artifacts(&cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let report = Report::json(&SimulateReport {
        seed,
        result: &result,
    })?;
    write_file(&args.out.join("result.json"), report.stdout.as_bytes())?;
    write_file(&args.out.join("curve.csv"), &curve_csv(&result)?)?;
    if args.keep_grids {
        let dir = args.out.join("grids");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut m = csv::Writer::from_writer(Vec::new());
        m.write_record(HEADER)?;
        let item = pgt_core::sim::EXPERIMENT_ITEM;
        write_file(&dir.join("truth.lgrid"), &write_lgrid(&artifacts.truth))?;
        m.write_record([item, "", "", "truth", "grids/truth.lgrid", ""])?;
        write_file(
            &dir.join("reference.lgrid"),
            &write_lgrid(&artifacts.reference),
        )?;
        for (_, it) in artifacts.raters.items() {
            for ((rater, k), grid) in &it.annotations {
                let file = format!("{rater}_r{k}.lgrid");
                write_file(&dir.join(&file), &write_lgrid(grid))?;
                m.write_record([
                    item,
                    rater,
                    &k.to_string(),
                    "annotation",
                    &format!("grids/{file}"),
                    "",
                ])?;
            }
        }
        let manifest = m.into_inner().map_err(|e| anyhow!("{e}"))?;
        write_file(&args.out.join("manifest.csv"), &manifest)?;
    }
    Ok(report)
}
