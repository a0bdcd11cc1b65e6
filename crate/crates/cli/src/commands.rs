//! The five subcommands. Each one re-derives the trial setup (dataset,
//! partition, request) deterministically from the config and seed, then
//! either computes artifacts or picks them up from earlier runs in the
//! output directory, so `train`, `unlearn`, and `attack` chain over files
//! and an in-process `attack` produces byte-identical reports.
//!
//! Canonical outputs (history/outcome dumps, attack report JSON, results
//! CSV/JSONL, summaries) carry no timestamps; wall-clock metadata goes to
//! the separate, non-canonical `metadata.txt`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fedunlearn::attack::{run_attack, to_canonical_json, AttackInput, AttackOutcome};
use fedunlearn::canon;
use fedunlearn::error::{Error, Result};
use fedunlearn::eval::{
    self, efficacy, format_table, prepare_trial, prepare_trial_on, write_csv, write_jsonl,
    GridPoint, PreparedTrial, Scenario,
};
use fedunlearn::federation::{dataset_accuracy, dataset_loss, train, FederationHistory};
use fedunlearn::storage;
use fedunlearn::unlearning::{unlearn, UnlearnOutcome};

use crate::config::RunConfig;

const HISTORY_FILE: &str = "history.fuhist";
const OUTCOME_FILE: &str = "outcome.fuoutc";

fn prepare(config: &RunConfig) -> Result<(Scenario, GridPoint, PreparedTrial)> {
    let point = config.single_point()?;
    if config.is_synthetic()? {
        let scenario = config.scenario();
        let prepared = prepare_trial(&scenario, &point, config.seed)?;
        Ok((scenario, point, prepared))
    } else {
        let dataset = config.load_idx()?;
        let mut scenario = config.scenario();
        scenario.num_classes = dataset.num_classes();
        let prepared = prepare_trial_on(dataset, &scenario, &point, config.seed)?;
        Ok((scenario, point, prepared))
    }
}

/// Writes the non-canonical run metadata (wall-clock time, command line).
fn write_metadata(out: &Path, command: &str) -> Result<()> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let args: Vec<String> = std::env::args().collect();
    fs::write(
        out.join("metadata.txt"),
        format!("command={command}\nunix_time={stamp}\nargv={}\n", args.join(" ")),
    )?;
    Ok(())
}

fn trained_history(
    config: &RunConfig,
    scenario: &Scenario,
    prepared: &PreparedTrial,
) -> Result<FederationHistory> {
    let mut fl = scenario.fl.clone();
    fl.seed = config.seed;
    train(&prepared.dataset, &prepared.partition, &fl)
}

/// Loads the saved history if the output directory has one (refusing a dump
/// that was produced under a different configuration), otherwise trains.
fn load_or_train(
    config: &RunConfig,
    scenario: &Scenario,
    prepared: &PreparedTrial,
) -> Result<FederationHistory> {
    let path = config.out.join(HISTORY_FILE);
    if !path.exists() {
        return trained_history(config, scenario, prepared);
    }
    let history = storage::load_history(&path)?;
    let mut fl = scenario.fl.clone();
    fl.seed = config.seed;
    if history.config != fl {
        return Err(Error::Config(format!(
            "{} was produced under a different configuration; delete it or align the config",
            path.display()
        )));
    }
    Ok(history)
}

fn load_or_unlearn(
    config: &RunConfig,
    scenario: &Scenario,
    point: &GridPoint,
    prepared: &PreparedTrial,
    history: &FederationHistory,
) -> Result<UnlearnOutcome> {
    let path = config.out.join(OUTCOME_FILE);
    if !path.exists() {
        return unlearn(
            point.method,
            history,
            &prepared.dataset,
            &prepared.partition,
            &prepared.request,
            &scenario.unlearn,
        );
    }
    let outcome = storage::load_outcome(&path)?;
    if outcome.method != point.method || outcome.target_client != prepared.request.target_client {
        return Err(Error::Config(format!(
            "{} does not match the configured method/target; delete it or align the config",
            path.display()
        )));
    }
    Ok(outcome)
}

fn push_key_float(out: &mut String, key: &str, value: f64, last: bool) {
    canon::push_json_string(out, key);
    out.push(':');
    canon::push_float(out, value);
    if !last {
        out.push(',');
    }
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let (scenario, _, prepared) = prepare(config)?;
    let history = trained_history(config, &scenario, &prepared)?;

    fs::create_dir_all(&config.out)?;
    write_metadata(&config.out, "train")?;
    storage::save_history(&config.out.join(HISTORY_FILE), &history)?;

    let all: Vec<usize> = (0..prepared.dataset.len()).collect();
    let initial_loss = dataset_loss(&prepared.dataset, &history.initial, &all)?;
    let final_loss = dataset_loss(&prepared.dataset, history.final_global(), &all)?;
    let initial_accuracy = dataset_accuracy(&prepared.dataset, &history.initial, &all)?;
    let final_accuracy = dataset_accuracy(&prepared.dataset, history.final_global(), &all)?;

    let mut summary = String::from("{\"rounds\":");
    summary.push_str(&history.num_rounds().to_string());
    summary.push(',');
    push_key_float(&mut summary, "initial_loss", initial_loss, false);
    push_key_float(&mut summary, "final_loss", final_loss, false);
    push_key_float(&mut summary, "initial_accuracy", initial_accuracy, false);
    push_key_float(&mut summary, "final_accuracy", final_accuracy, true);
    summary.push('}');
    fs::write(config.out.join("train_summary.json"), &summary)?;

    println!(
        "trained {} rounds: loss {initial_loss:.4} -> {final_loss:.4}, \
         accuracy {initial_accuracy:.4} -> {final_accuracy:.4}",
        history.num_rounds()
    );
    println!("history written to {}", config.out.join(HISTORY_FILE).display());
    Ok(())
}

pub fn cmd_unlearn(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let (scenario, point, prepared) = prepare(config)?;
    let history = load_or_train(config, &scenario, &prepared)?;
    let outcome = unlearn(
        point.method,
        &history,
        &prepared.dataset,
        &prepared.partition,
        &prepared.request,
        &scenario.unlearn,
    )?;

    fs::create_dir_all(&config.out)?;
    write_metadata(&config.out, "unlearn")?;
    storage::save_outcome(&config.out.join(OUTCOME_FILE), &outcome)?;

    let resolved =
        fedunlearn::data::apply_request(&prepared.dataset, &prepared.partition, &prepared.request)?;
    let mut summary = String::from("{\"method\":");
    canon::push_json_string(&mut summary, outcome.method.name());
    summary.push_str(",\"target_client\":");
    summary.push_str(&outcome.target_client.to_string());
    summary.push_str(",\"rounds_used\":");
    summary.push_str(&outcome.rounds_used.to_string());
    summary.push_str(",\"forgotten_classes\":");
    canon::push_usize_array(&mut summary, &outcome.forgotten_classes);
    summary.push_str(",\"forgotten_samples\":");
    summary.push_str(&resolved.forgotten.len().to_string());
    if !resolved.forgotten.is_empty() {
        let report = efficacy(
            &prepared.dataset,
            &resolved.forgotten,
            &resolved.retained,
            history.final_global(),
            &outcome.global_after,
        )?;
        summary.push(',');
        push_key_float(&mut summary, "forgotten_accuracy_before", report.forgotten_before, false);
        push_key_float(&mut summary, "forgotten_accuracy_after", report.forgotten_after, false);
        push_key_float(&mut summary, "retained_accuracy_before", report.retained_before, false);
        push_key_float(&mut summary, "retained_accuracy_after", report.retained_after, true);
        println!(
            "{} forgot {} samples (classes {:?}): forgotten acc {:.3} -> {:.3}, \
             retained acc {:.3} -> {:.3}",
            outcome.method.name(),
            resolved.forgotten.len(),
            outcome.forgotten_classes,
            report.forgotten_before,
            report.forgotten_after,
            report.retained_before,
            report.retained_after,
        );
    } else {
        println!("{}: request matched no samples; model unchanged", outcome.method.name());
    }
    summary.push('}');
    fs::write(config.out.join("unlearn_summary.json"), &summary)?;
    println!("outcome written to {}", config.out.join(OUTCOME_FILE).display());
    Ok(())
}

pub fn cmd_attack(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let (scenario, point, prepared) = prepare(config)?;
    let history = load_or_train(config, &scenario, &prepared)?;
    let outcome = load_or_unlearn(config, &scenario, &point, &prepared, &history)?;

    let input = AttackInput::from_run(
        &history,
        outcome.global_after,
        outcome.target_local_after,
        outcome.target_client,
    )?;
    let attack = run_attack(&history, &input, point.mode, scenario.window)?;

    fs::create_dir_all(&config.out)?;
    write_metadata(&config.out, "attack")?;
    let json = to_canonical_json(&attack);
    fs::write(config.out.join("attack_report.json"), &json)?;

    match &attack {
        AttackOutcome::Report(report) => {
            let truth: BTreeSet<usize> = outcome.forgotten_classes.iter().copied().collect();
            let predicted = report.candidates.clone();
            println!(
                "attack candidates: {:?} (true forgotten classes: {:?})",
                predicted.iter().collect::<Vec<_>>(),
                truth.iter().collect::<Vec<_>>(),
            );
            if !truth.is_empty() {
                println!("asr: {:.3}", eval::iou_asr(&truth, &predicted)?);
            }
        }
        AttackOutcome::Failure(f) => {
            println!("attack failed ({}): {}", f.kind.name(), f.message);
        }
    }
    println!("report written to {}", config.out.join("attack_report.json").display());
    Ok(())
}

pub fn cmd_experiment(config: &RunConfig) -> Result<()> {
    config.validate()?;
    if !config.is_synthetic()? {
        return Err(Error::Config(
            "experiment sweeps generate a fresh dataset per trial and need dataset.kind = \
             \"synthetic\""
                .into(),
        ));
    }
    let scenario = config.scenario();
    let points = config.axes()?.expand()?;
    let results = eval::sweep(&scenario, &points, config.trials, config.seed)?;

    fs::create_dir_all(&config.out)?;
    write_metadata(&config.out, "experiment")?;
    // The dumped config records the experiment definition; where this copy
    // lives is the run's business, so the output path is normalized away.
    let mut dump = config.clone();
    dump.out = RunConfig::default().out;
    fs::write(config.out.join("config.toml"), dump.to_toml_string())?;
    fs::write(config.out.join("results.csv"), write_csv(&results))?;
    fs::write(config.out.join("results.jsonl"), write_jsonl(&results))?;
    print!("{}", format_table(&results));
    println!("results written to {}", config.out.join("results.csv").display());
    Ok(())
}

pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let path = config.out.join("results.csv");
    let text = fs::read_to_string(&path)?;
    let rows: Vec<Vec<&str>> = text.lines().map(|line| line.split(',').collect()).collect();
    let Some(header) = rows.first() else {
        return Err(Error::Format(format!("{}: empty results file", path.display())));
    };
    if header.join(",") != eval::CSV_HEADER {
        return Err(Error::Format(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header.join(",")
        )));
    }
    let columns = header.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != columns) {
        return Err(Error::Format(format!(
            "{}: row with {} fields, expected {columns}: {:?}",
            path.display(),
            bad.len(),
            bad.join(",")
        )));
    }
    let widths: Vec<usize> = (0..columns)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let line: Vec<String> =
            row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        println!("{}", line.join("  ").trim_end());
    }
    Ok(())
}
