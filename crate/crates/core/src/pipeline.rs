//! End-to-end runs: benign traffic simulation, dataset files, experiments and
//! attack campaigns.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{compute_ratio_vector, synthesize_capture, write_trace, AcquisitionError, WaveformCapture};
use crate::attack::{inject, AttackError};
use crate::bus::{EcuId, EcuProfile};
use crate::can::{encode_frame, BitStream, CanFrame, Mid};
use crate::config::{ConfigError, Scenario, SplitMode};
use crate::eval::{
    confusion_matrix_over, evaluate, fold_complement, score_attack_campaign, stratified_kfold,
    train_test_split, CampaignReport, EvalError, EvalReport, Sample,
};
use crate::features::{extract_features, feature_names, FeatureError, FeatureVector, FEATURE_COUNT};
use crate::forest::{self, ForestError, ForestModel, ForestParams};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("the scenario has no attack section")]
    NoAttack,
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// One benign transmission slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledMessage {
    pub time_ms: f64,
    /// Index into the scenario's ECU list.
    pub ecu: usize,
    /// Per-ECU message counter.
    pub seq: usize,
}

#[derive(PartialEq)]
struct Slot(f64, usize);

impl Eq for Slot {}

impl PartialOrd for Slot {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Slot {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// The first `messages` transmissions of the periodic schedule. Each ECU starts
/// at a seed-derived phase within its period; simultaneous slots go to the ECU
/// listed first.
pub fn schedule_benign(profiles: &[EcuProfile], messages: usize, seed: u64) -> Vec<ScheduledMessage> {
    let mut rng = seed::rng(seed, Stream::Schedule);
    let phases: Vec<f64> = profiles.iter().map(|p| rng.random::<f64>() * p.period_ms).collect();
    let mut seq = vec![0usize; profiles.len()];
    let mut heap: BinaryHeap<Reverse<Slot>> = phases
        .iter()
        .enumerate()
        .map(|(i, &t)| Reverse(Slot(t, i)))
        .collect();
    let mut out = Vec::with_capacity(messages);
    while out.len() < messages {
        let Some(Reverse(Slot(time_ms, ecu))) = heap.pop() else {
            break;
        };
        out.push(ScheduledMessage { time_ms, ecu, seq: seq[ecu] });
        seq[ecu] += 1;
        let next = phases[ecu] + seq[ecu] as f64 * profiles[ecu].period_ms;
        heap.push(Reverse(Slot(next, ecu)));
    }
    out
}

/// Frame bits for benign message `index`: the ECU's first MID and eight payload
/// bytes drawn from the payload stream.
pub fn benign_frame(profile: &EcuProfile, seed: u64, index: usize) -> BitStream {
    let mut rng = seed::rng(seed::derive(seed, index), Stream::Payload);
    let payload: [u8; 8] = rng.random();
    let mid = profile.owned_mids.iter().next().expect("validated profiles own a MID");
    let frame = CanFrame::new(u32::from(mid.value()), &payload).expect("valid MID and 8-byte payload");
    encode_frame(&frame)
}

/// Ratio vector and features of one capture.
pub fn capture_features(capture: &WaveformCapture, scenario: &Scenario) -> Result<FeatureVector, PipelineError> {
    let acq = &scenario.config.acquisition;
    let ratio = compute_ratio_vector(capture, acq.guard_v, acq.min_samples)?;
    Ok(extract_features(&ratio)?)
}

fn benign_capture(scenario: &Scenario, msg: &ScheduledMessage, index: usize) -> Result<(WaveformCapture, BitStream), PipelineError> {
    let seed = scenario.config.experiment.seed;
    let profile = &scenario.profiles[msg.ecu];
    let bits = benign_frame(profile, seed, index);
    let capture = synthesize_capture(
        &scenario.topology,
        profile,
        &bits,
        &scenario.config.acquisition,
        seed::derive(seed, index),
    )?;
    Ok((capture, bits))
}

/// Simulates the configured benign traffic and extracts one sample per message.
pub fn run_simulation(scenario: &Scenario) -> Result<Vec<Sample>, PipelineError> {
    let exp = &scenario.config.experiment;
    let schedule = schedule_benign(&scenario.profiles, exp.messages, exp.seed);
    schedule
        .par_iter()
        .enumerate()
        .map(|(k, msg)| {
            let (capture, _) = benign_capture(scenario, msg, k)?;
            Ok(Sample {
                label: capture.ecu_label,
                mid: capture.mid,
                features: capture_features(&capture, scenario)?,
            })
        })
        .collect()
}

/// Writes the two-point trace of benign message `index`.
pub fn write_benign_trace<W: Write>(scenario: &Scenario, index: usize, out: W) -> Result<(), PipelineError> {
    let exp = &scenario.config.experiment;
    let schedule = schedule_benign(&scenario.profiles, index + 1, exp.seed);
    let msg = schedule.get(index).ok_or_else(|| PipelineError::Dataset {
        line: 0,
        message: format!("message {index} is beyond the schedule"),
    })?;
    let (capture, bits) = benign_capture(scenario, msg, index)?;
    write_trace(out, &capture, &bits, Some(&scenario.config.provenance()))?;
    Ok(())
}

pub fn dataset_header() -> Vec<String> {
    let mut h = vec!["ecu_label".to_owned(), "mid".to_owned()];
    h.extend((0..FEATURE_COUNT).map(|i| format!("f{i:02}")));
    h
}

/// Dataset CSV: optional `#` provenance line, header, one row per message.
/// Feature columns follow [`feature_names`] order.
pub fn write_dataset<W: Write>(out: W, samples: &[Sample], provenance: Option<&str>) -> Result<(), PipelineError> {
    let mut out = std::io::BufWriter::new(out);
    if let Some(p) = provenance {
        writeln!(out, "# {p}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| PipelineError::Io(e.into());
    w.write_record(dataset_header()).map_err(io)?;
    let mut row: Vec<String> = Vec::with_capacity(FEATURE_COUNT + 2);
    for s in samples {
        row.clear();
        row.push(s.label.0.to_string());
        row.push(s.mid.value().to_string());
        row.extend(s.features.0.iter().map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], returning the provenance line if any.
pub fn read_dataset<R: BufRead>(input: R) -> Result<(Option<String>, Vec<Sample>), PipelineError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    let provenance = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .map(|p| p.trim().to_owned());
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let bad = |line: usize, message: String| PipelineError::Dataset { line, message };
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.iter().ne(dataset_header().iter().map(String::as_str)) {
        return Err(bad(1, format!("expected header ecu_label,mid,f00..f{:02}", FEATURE_COUNT - 1)));
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != FEATURE_COUNT + 2 {
            return Err(bad(line, format!("{} columns, expected {}", record.len(), FEATURE_COUNT + 2)));
        }
        let label: u16 = record[0].parse().map_err(|_| bad(line, format!("bad ecu_label {:?}", &record[0])))?;
        let mid = record[1]
            .parse::<u32>()
            .ok()
            .and_then(|m| Mid::new(m).ok())
            .ok_or_else(|| bad(line, format!("bad mid {:?}", &record[1])))?;
        let mut features = [0.0; FEATURE_COUNT];
        for (j, slot) in features.iter_mut().enumerate() {
            *slot = record[j + 2]
                .parse()
                .map_err(|_| bad(line, format!("bad value for {}: {:?}", feature_names()[j], &record[j + 2])))?;
        }
        samples.push(Sample {
            label: EcuId(label),
            mid,
            features: FeatureVector(features),
        });
    }
    Ok((provenance, samples))
}

fn subset(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn train_on(samples: &[Sample], params: &ForestParams, seed: u64) -> Result<ForestModel, ForestError> {
    let feats: Vec<FeatureVector> = samples.iter().map(|s| s.features).collect();
    let labels: Vec<EcuId> = samples.iter().map(|s| s.label).collect();
    forest::train(&feats, &labels, params, seed)
}

fn labels(samples: &[Sample]) -> Vec<EcuId> {
    samples.iter().map(|s| s.label).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExperimentPlan {
    Split { train_fraction: f64, stratified: bool },
    Kfold { k: usize },
}

impl ExperimentPlan {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let exp = &scenario.config.experiment;
        match exp.mode {
            SplitMode::Split => ExperimentPlan::Split {
                train_fraction: exp.train_fraction,
                stratified: exp.stratified,
            },
            SplitMode::Kfold => ExperimentPlan::Kfold { k: exp.k },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub plan: ExperimentPlan,
    pub seed: u64,
    pub forest: ForestParams,
    pub train_samples: usize,
    pub test_samples: usize,
    /// One report per fold (a single entry for a plain split).
    pub folds: Vec<EvalReport>,
    /// Pooled over all held-out predictions.
    pub aggregate: EvalReport,
    /// Mean of the per-fold macro F1 values.
    pub mean_macro_f1: f64,
}

/// Model trained on the training side of the configured split, plus the held-out rows.
pub fn train_split_model(
    samples: &[Sample],
    train_fraction: f64,
    stratified: bool,
    params: &ForestParams,
    seed: u64,
) -> Result<(ForestModel, Vec<Sample>), PipelineError> {
    let (train, test) = train_test_split(&labels(samples), train_fraction, stratified, seed)?;
    let model = train_on(&subset(samples, &train), params, seed)?;
    Ok((model, subset(samples, &test)))
}

pub fn run_experiment(
    samples: &[Sample],
    plan: ExperimentPlan,
    params: &ForestParams,
    seed: u64,
) -> Result<ExperimentOutcome, PipelineError> {
    match plan {
        ExperimentPlan::Split {
            train_fraction,
            stratified,
        } => {
            let (model, test) = train_split_model(samples, train_fraction, stratified, params, seed)?;
            let name = format!(
                "{}train fraction {train_fraction}",
                if stratified { "stratified " } else { "" }
            );
            let report = evaluate(&model, &test, name, seed)?;
            Ok(ExperimentOutcome {
                plan,
                seed,
                forest: params.clone(),
                train_samples: samples.len() - test.len(),
                test_samples: test.len(),
                mean_macro_f1: report.macro_f1,
                aggregate: report.clone(),
                folds: vec![report],
            })
        }
        ExperimentPlan::Kfold { k } => {
            let folds = stratified_kfold(&labels(samples), k, seed)?;
            let mut reports = Vec::with_capacity(k);
            for (f, held_out) in folds.iter().enumerate() {
                let train = fold_complement(&folds, f);
                let model = train_on(&subset(samples, &train), params, seed::derive(seed, f))?;
                let test = subset(samples, held_out);
                reports.push(evaluate(&model, &test, format!("fold {} of {k}", f + 1), seed)?);
            }
            let mut pooled = reports[0].matrix.clone();
            for r in &reports[1..] {
                pooled.merge(&r.matrix)?;
            }
            let mean = reports.iter().map(|r| r.macro_f1).sum::<f64>() / k as f64;
            Ok(ExperimentOutcome {
                plan,
                seed,
                forest: params.clone(),
                train_samples: samples.len() - samples.len() / k,
                test_samples: samples.len(),
                aggregate: EvalReport::from_matrix(pooled, format!("stratified {k}-fold, pooled"), seed),
                folds: reports,
                mean_macro_f1: mean,
            })
        }
    }
}

/// Feature samples for the scenario's attack stream, labelled with the attacker.
pub fn attack_samples(scenario: &Scenario) -> Result<Vec<Sample>, PipelineError> {
    let attack = scenario.config.attack.as_ref().ok_or(PipelineError::NoAttack)?;
    let frames = inject(
        attack,
        &scenario.topology,
        &scenario.profiles,
        &scenario.config.acquisition,
        scenario.config.experiment.seed,
    )?;
    frames
        .par_iter()
        .map(|f| {
            Ok(Sample {
                label: f.capture.ecu_label,
                mid: f.capture.mid,
                features: capture_features(&f.capture, scenario)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimImpact {
    pub ecu: EcuId,
    pub benign_f1: f64,
    pub under_attack_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub campaign: CampaignReport,
    pub injected: usize,
    /// Victim F1 on held-out benign traffic, alone and mixed with the attack stream.
    pub victims: Vec<VictimImpact>,
    /// Alert rate on the benign traffic alone (false positives).
    pub benign_alert_rate: Option<f64>,
}

/// Scores the attack stream. With `benign` held-out rows, also compares each
/// victim's F1 with and without the injected frames mixed in.
pub fn run_attack(scenario: &Scenario, model: &ForestModel, benign: Option<&[Sample]>) -> Result<AttackOutcome, PipelineError> {
    let attack_rows = attack_samples(scenario)?;
    let seed = scenario.config.experiment.seed;
    let campaign = score_attack_campaign(model, &attack_rows, &scenario.ownership, seed)?;
    let attack = scenario.config.attack.as_ref().ok_or(PipelineError::NoAttack)?;
    let victim_ids: Vec<EcuId> = attack
        .victim_mids
        .iter()
        .filter_map(|&m| scenario.ownership.owner(m))
        .collect();

    let (victims, benign_alert_rate) = match benign {
        None => (Vec::new(), None),
        Some(benign) => {
            let feats: Vec<FeatureVector> = benign.iter().map(|s| s.features).collect();
            let predicted = model.predict_batch(&feats);
            let truth = labels(benign);
            let alone = confusion_matrix_over(&model.classes, &truth, &predicted)?;
            let mut mixed = alone.clone();
            mixed.merge(&campaign.report.matrix)?;
            let alone = EvalReport::from_matrix(alone, "benign", seed);
            let mixed = EvalReport::from_matrix(mixed, "benign + attack", seed);
            let impact = victim_ids
                .iter()
                .map(|&ecu| VictimImpact {
                    ecu,
                    benign_f1: alone.class(ecu).map_or(0.0, |c| c.f1),
                    under_attack_f1: mixed.class(ecu).map_or(0.0, |c| c.f1),
                })
                .collect();
            let alerts = benign
                .iter()
                .zip(&predicted)
                .filter(|(s, &p)| crate::forest::detect_masquerade(p, s.mid, &scenario.ownership).is_alert())
                .count();
            let rate = if benign.is_empty() { 0.0 } else { alerts as f64 / benign.len() as f64 };
            (impact, Some(rate))
        }
    };
    Ok(AttackOutcome {
        injected: attack_rows.len(),
        campaign,
        victims,
        benign_alert_rate,
    })
}
