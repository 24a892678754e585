//! Per-round and whole-experiment reports, and their file outputs: a JSON
//! report, a per-round metrics CSV, the exported chain, and the final
//! global-model checkpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::error::{Error, Result};
use crate::fl::ModelParameters;
use crate::ledger::{export_chain, Address, AuthorizationList, Block};
use crate::monitor::ScreeningResult;
use crate::netsim::{tick_to_ms, LatencyReport, RoundLatency};

/// Everything recorded about one round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    /// Selection probabilities used for this round's draw.
    pub selection_probabilities: BTreeMap<Address, f64>,
    /// Selected clients, in client-index order.
    pub selected: Vec<Address>,
    /// One screening outcome per submission, in submission order.
    pub screening: Vec<ScreeningResult>,
    /// Addresses whose submissions entered the aggregate.
    pub included: Vec<Address>,
    /// Submissions excluded for any reason this round.
    pub n_flagged: usize,
    /// Holdout accuracy of the (possibly updated) global model.
    pub global_accuracy: f64,
    /// True when every submission was flagged and the global model kept
    /// its previous value.
    pub aggregation_empty: bool,
    /// Reputation snapshot after this round's update.
    pub reputation: BTreeMap<Address, f64>,
    /// Component latency samples, in microsecond ticks.
    pub latency: RoundLatency,
    /// This round's blockchain latency in milliseconds.
    pub t_b_ms: f64,
    /// Hex hashes of blocks appended this round.
    pub blocks: Vec<String>,
}

/// Full experiment outcome, serialized as the JSON report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub seed: u64,
    pub target_accuracy: f64,
    /// Rounds actually executed (the realized n of the latency model).
    pub realized_rounds: u64,
    pub reached_target: bool,
    pub final_accuracy: f64,
    /// Behavior profile per client address.
    pub behaviors: BTreeMap<Address, String>,
    /// Reputation before any round ran (uniform at start).
    pub initial_reputation: BTreeMap<Address, f64>,
    pub initial_selection_probabilities: BTreeMap<Address, f64>,
    pub rounds: Vec<RoundReport>,
    /// Raw per-round latency samples (microsecond ticks).
    pub latency: LatencyReport,
    pub total_system_latency_ms: f64,
    pub total_blockchain_latency_ms: f64,
    pub total_latency_ms: f64,
    pub final_reputation: BTreeMap<Address, f64>,
    /// Blacklisted addresses with the round each was added.
    pub blacklist: BTreeMap<Address, u64>,
}

/// Files written by [`emit_reports`].
#[derive(Clone, Debug)]
pub struct EmittedPaths {
    pub report_json: PathBuf,
    pub rounds_csv: PathBuf,
    pub chain_json: PathBuf,
    pub model_json: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Formats a float exactly as serde_json prints it, so CSV cells and JSON
/// fields carry identical text for identical values.
fn json_number(v: f64) -> String {
    serde_json::to_string(&v).expect("finite floats serialize")
}

/// Writes `report.json`, `rounds.csv` (round, accuracy, flagged count,
/// per-round blockchain latency, cumulative system latency), `chain.json`,
/// and `model.json` under `out_dir`.
pub fn emit_reports(
    report: &ExperimentReport,
    chain: &[Block],
    auth: &AuthorizationList,
    global_model: &ModelParameters,
    out_dir: &Path,
) -> Result<EmittedPaths> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let paths = EmittedPaths {
        report_json: out_dir.join("report.json"),
        rounds_csv: out_dir.join("rounds.csv"),
        chain_json: out_dir.join("chain.json"),
        model_json: out_dir.join("model.json"),
    };

    let json =
        serde_json::to_string_pretty(report).expect("report always serializes") + "\n";
    write_file(&paths.report_json, &json)?;

    let mut csv = String::from("round,accuracy,n_flagged,t_b_ms,t_c_cumulative_ms\n");
    let mut cumulative_system = 0u64;
    for r in &report.rounds {
        cumulative_system += r.latency.system();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.round,
            json_number(r.global_accuracy),
            r.n_flagged,
            json_number(r.t_b_ms),
            json_number(tick_to_ms(cumulative_system)),
        ));
    }
    write_file(&paths.rounds_csv, &csv)?;

    write_file(&paths.chain_json, &export_chain(chain, auth))?;
    write_file(&paths.model_json, &(global_model.to_checkpoint_json() + "\n"))?;
    Ok(paths)
}
