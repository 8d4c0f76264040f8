//! One function per CLI subcommand: read the upstream artifacts, run the
//! stage, write its outputs and print a short summary.

use std::fmt::Write as _;

use locnet_core::anodet::{AnoDetNet, Calibration};
use locnet_core::losest::{FcNet, LosEstNet};
use locnet_core::observation::TrajectoryObservation;

use crate::artifacts::{
    load_checkpoint, load_optional, read_bin, read_jsonl, read_text, save_checkpoint, write_bin, write_json,
    write_jsonl, write_text, Header, Layout, Manifest, ManifestEntry,
};
use crate::config::RunConfig;
use crate::eval::{aoa_errors, aoa_table, cdf_csv, localization_csv, recon_histogram_csv, summarize_localization, table_csv, Method};
use crate::pipeline::{self, LocalizationRecord, Models, TrajectoryEval, TrajectoryRecord};
use crate::scenario::{load_scene, Split};
use crate::HarnessError;

const HISTOGRAM_BINS: usize = 40;

pub struct Context {
    pub config: RunConfig,
    pub layout: Layout,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        let layout = Layout::new(config.out.clone(), config.profile);
        Self { config, layout }
    }

    fn header(&self, stage: &str) -> Header {
        Header::new(stage, self.config.seed, self.config.profile)
    }
}

fn file_name(path: &std::path::Path) -> String {
    path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn simulate(ctx: &Context) -> Result<String, HarnessError> {
    let scene = load_scene(&ctx.config.scene)?;
    let mut files = Vec::new();
    let mut report = String::new();
    for split in Split::ALL {
        let records = pipeline::simulate(&scene, &ctx.config, split)?;
        let path = ctx.layout.snapshots(split);
        let sha256 = write_bin(&path, &ctx.header("simulate"), &records)?;
        let points: usize = records.iter().map(|r| r.snapshots.len()).sum();
        writeln!(report, "{:<10} {:>6} trajectories {:>7} snapshots", split.name(), records.len(), points).unwrap();
        files.push(ManifestEntry { file: file_name(&path), records: records.len(), sha256 });
    }
    write_json(&ctx.layout.manifest("simulate"), &Manifest { header: ctx.header("simulate"), files })?;
    Ok(report)
}

pub fn extract(ctx: &Context) -> Result<String, HarnessError> {
    let mut files = Vec::new();
    let mut report = String::new();
    for split in Split::ALL {
        let (_, records): (_, Vec<TrajectoryRecord>) = read_bin(&ctx.layout.snapshots(split), "simulate", "simulate")?;
        let obs = pipeline::extract(&records, &ctx.config);
        let path = ctx.layout.observations(split);
        let sha256 = write_bin(&path, &ctx.header("extract"), &obs)?;
        writeln!(report, "{:<10} {:>6} trajectories extracted", split.name(), obs.len()).unwrap();
        files.push(ManifestEntry { file: file_name(&path), records: obs.len(), sha256 });
    }
    write_json(&ctx.layout.manifest("extract"), &Manifest { header: ctx.header("extract"), files })?;
    Ok(report)
}

fn observations(ctx: &Context, split: Split) -> Result<Vec<TrajectoryObservation>, HarnessError> {
    Ok(read_bin(&ctx.layout.observations(split), "extract", "extract")?.1)
}

fn load_losest(ctx: &Context) -> Result<LosEstNet, HarnessError> {
    Ok(LosEstNet::from_checkpoint(&load_checkpoint(&ctx.layout.losest(), "train-los")?)?)
}

pub fn train_los(ctx: &Context) -> Result<String, HarnessError> {
    let train = observations(ctx, Split::Train)?;
    let t = pipeline::train_los(&train, &ctx.config)?;
    let nc = train.first().map_or(0, |t| t.num_subcarriers) as f64;
    save_checkpoint(&ctx.layout.losest(), &t.losest.to_checkpoint(t.losest_meta.clone(), nc))?;
    save_checkpoint(&ctx.layout.fc(), &t.fc.to_checkpoint(t.fc_meta.clone(), nc))?;
    write_json(&ctx.layout.dataset_stats(), &t.stats)?;
    Ok(format!(
        "training segments {} of {} ({} failed LoS visibility, {} failed gain floor)\n\
         losest best epoch {} validation loss {:.5}\nfc best epoch {} validation loss {:.5}\n",
        t.stats.kept,
        t.stats.total,
        t.stats.failed_criterion1,
        t.stats.failed_criterion2,
        t.losest_meta.best_epoch,
        t.losest_meta.final_validation_loss,
        t.fc_meta.best_epoch,
        t.fc_meta.final_validation_loss
    ))
}

pub fn train_ad(ctx: &Context) -> Result<String, HarnessError> {
    let losest = load_losest(ctx)?;
    let train = observations(ctx, Split::Train)?;
    let (adnet, meta) = pipeline::train_ad(&losest, &train, &ctx.config)?;
    save_checkpoint(&ctx.layout.anodet(), &adnet.to_checkpoint(meta.clone(), None))?;
    Ok(format!("anodet best epoch {} validation loss {:.6}\n", meta.best_epoch, meta.final_validation_loss))
}

pub fn calibrate(ctx: &Context) -> Result<String, HarnessError> {
    let losest = load_losest(ctx)?;
    let ck = load_checkpoint(&ctx.layout.anodet(), "train-ad")?;
    let adnet = AnoDetNet::from_checkpoint(&ck)?;
    let obs = observations(ctx, Split::Calibrate)?;
    let (cal, records) = pipeline::calibrate(&losest, &adnet, &obs, &ctx.config)?;
    save_checkpoint(&ctx.layout.anodet(), &adnet.to_checkpoint(ck.metadata.clone(), Some(&cal)))?;
    write_json(&ctx.layout.calibration(), &cal)?;
    let mut csv = String::from("recon_error,aoa_error_deg\n");
    for (e, a) in &records {
        writeln!(csv, "{e:.9e},{a:.6}").unwrap();
    }
    write_text(&ctx.layout.calibration_records(), &csv)?;
    Ok(format!(
        "threshold {:.6e}: {:.1}% of segments above {}° exceed it, {:.1}% of the rest ({} / {} segments)\n",
        cal.threshold,
        100.0 * cal.anomalous_exceedance,
        cal.label_error_deg,
        100.0 * cal.normal_exceedance,
        cal.anomalous_count,
        cal.normal_count
    ))
}

/// Loads every model that exists; an uncalibrated detector is ignored.
pub fn load_models(ctx: &Context) -> Result<Models, HarnessError> {
    let losest = load_optional(&ctx.layout.losest(), "train-los")?.map(|c| LosEstNet::from_checkpoint(&c)).transpose()?;
    let fc = load_optional(&ctx.layout.fc(), "train-los")?.map(|c| FcNet::from_checkpoint(&c)).transpose()?;
    let adnet = match load_optional(&ctx.layout.anodet(), "train-ad")? {
        Some(ck) => match ck.threshold {
            Some(t) => Some((AnoDetNet::from_checkpoint(&ck)?, t)),
            None => None,
        },
        None => None,
    };
    Ok(Models { losest, fc, adnet })
}

pub fn eval(ctx: &Context) -> Result<String, HarnessError> {
    let obs = observations(ctx, Split::Eval)?;
    let models = load_models(ctx)?;
    let evals = pipeline::evaluate(&obs, &models, &ctx.config)?;
    write_jsonl(&ctx.layout.eval_records(), &evals)?;
    let table = table_csv(&aoa_table(&evals));
    write_text(&ctx.layout.eval_table(), &table)?;
    Ok(table)
}

pub fn localize(ctx: &Context, mode: Option<Method>) -> Result<String, HarnessError> {
    let obs = observations(ctx, Split::Localize)?;
    let models = load_models(ctx)?;
    let methods: Vec<Method> = match mode {
        Some(m) => {
            let missing = match m {
                Method::Fc => models.fc.is_none().then_some("train-los"),
                Method::Losest => models.losest.is_none().then_some("train-los"),
                Method::AdLosest if models.losest.is_none() => Some("train-los"),
                Method::AdLosest => models.adnet.is_none().then_some("calibrate"),
                _ => None,
            };
            if let Some(producer) = missing {
                let path = if producer == "calibrate" { ctx.layout.anodet() } else { ctx.layout.losest() };
                return Err(HarnessError::MissingArtifact { path: path.display().to_string(), producer });
            }
            vec![m]
        }
        None => Method::ALL
            .into_iter()
            .filter(|m| match m {
                Method::Fc => models.fc.is_some(),
                Method::Losest => models.losest.is_some(),
                Method::AdLosest => models.losest.is_some() && models.adnet.is_some(),
                _ => true,
            })
            .collect(),
    };
    let evals = pipeline::evaluate(&obs, &models, &ctx.config)?;
    let records = pipeline::localize_all(&evals, &methods, &ctx.config);
    write_jsonl(&ctx.layout.localization(), &records)?;
    let csv = localization_csv(&summarize_localization(&records));
    write_text(&ctx.layout.localization_summary(), &csv)?;
    Ok(csv)
}

pub fn emit_plots(ctx: &Context) -> Result<String, HarnessError> {
    let evals: Vec<TrajectoryEval> = read_jsonl(&ctx.layout.eval_records(), "eval")?;
    if evals.iter().all(|t| t.points.is_empty()) {
        return Err(HarnessError::Numerical("evaluation records are empty".into()));
    }
    let dir = ctx.layout.plots_dir();
    let mut written = Vec::new();
    for m in Method::ALL {
        let errors = aoa_errors(&evals, m);
        if !errors.is_empty() {
            let path = dir.join(format!("aoa_cdf_{}.csv", m.name()));
            write_text(&path, &cdf_csv(&errors)?)?;
            written.push(path);
        }
    }
    if ctx.layout.localization().exists() {
        let records: Vec<LocalizationRecord> = read_jsonl(&ctx.layout.localization(), "localize")?;
        for m in Method::ALL {
            let errors: Vec<f64> = records.iter().filter(|r| r.method == m).filter_map(|r| r.error_m).collect();
            if !errors.is_empty() {
                let path = dir.join(format!("loc_cdf_{}.csv", m.name()));
                write_text(&path, &cdf_csv(&errors)?)?;
                written.push(path);
            }
        }
    }
    if ctx.layout.calibration_records().exists() {
        let text = read_text(&ctx.layout.calibration_records(), "calibrate")?;
        let records: Vec<(f64, f64)> = text
            .lines()
            .skip(1)
            .filter_map(|l| {
                let (a, b) = l.split_once(',')?;
                Some((a.parse().ok()?, b.parse().ok()?))
            })
            .collect();
        let cal: Option<Calibration> = crate::artifacts::read_json(&ctx.layout.calibration(), "calibrate").ok();
        let label = cal.map_or(ctx.config.gate.label_error_deg, |c| c.label_error_deg);
        let path = dir.join("recon_hist.csv");
        write_text(&path, &recon_histogram_csv(&records, label, HISTOGRAM_BINS)?)?;
        written.push(path);
    }
    Ok(written.iter().map(|p| format!("{}\n", p.display())).collect())
}
