//! CSV logs and the run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentResult};
use super::regret::RegretRow;
use super::EpisodeRecord;
use crate::error::{Error, Result};
use crate::policy::PolicyId;

pub const EPISODE_HEADER: &str = "episode,learner_policy_id,opponent_policy_id,realized_return,exact_value,restart,psi_size,eta,micros";
pub const REGRET_HEADER: &str = "k,regret_markov,regret_general,nash_gap";
pub const MANIFEST_FORMAT: &str = "mglab-manifest/1";

pub const EPISODES_FILE: &str = "episodes.csv";
pub const REGRET_FILE: &str = "regret.csv";
pub const REGRET_REALIZED_FILE: &str = "regret_realized.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRow {
    episode: usize,
    learner_policy_id: String,
    opponent_policy_id: String,
    realized_return: f64,
    exact_value: f64,
    restart: bool,
    psi_size: Option<usize>,
    eta: f64,
    micros: u64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn parse_id(s: &str) -> Result<PolicyId> {
    u64::from_str_radix(s, 16)
        .map(PolicyId)
        .map_err(|_| Error::Parse(format!("bad policy id {s:?}")))
}

pub fn write_episode_csv<W: std::io::Write>(out: W, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(EpisodeRow {
            episode: r.episode,
            learner_policy_id: r.learner_policy_id.to_string(),
            opponent_policy_id: r.opponent_policy_id.to_string(),
            realized_return: r.realized_return,
            exact_value: r.exact_value,
            restart: r.restart,
            psi_size: r.psi_size,
            eta: r.eta,
            micros: r.micros,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_csv<R: std::io::Read>(input: R) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?.iter().collect::<Vec<_>>().join(",");
    if header != EPISODE_HEADER {
        return Err(Error::Parse(format!("unexpected episode header {header:?}")));
    }
    r.deserialize::<EpisodeRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Parse(e.to_string()))?;
            Ok(EpisodeRecord {
                episode: row.episode,
                learner_policy_id: parse_id(&row.learner_policy_id)?,
                opponent_policy_id: parse_id(&row.opponent_policy_id)?,
                realized_return: row.realized_return,
                exact_value: row.exact_value,
                restart: row.restart,
                psi_size: row.psi_size,
                eta: row.eta,
                micros: row.micros,
            })
        })
        .collect()
}

pub fn write_regret_csv<W: std::io::Write>(out: W, rows: &[RegretRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(REGRET_HEADER.split(',')).map_err(csv_error)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to reproduce a run, plus summary numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub episodes: usize,
    pub hindsight_best_markov: Option<f64>,
    pub hindsight_best_markov_id: Option<PolicyId>,
    pub hindsight_best_general: Option<f64>,
    pub nash_value: Option<f64>,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("unsupported manifest format {:?}", m.format)));
        }
        m.config.validate()?;
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the episode and regret CSVs and the manifest into `dir`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut buf = Vec::new();
    write_episode_csv(&mut buf, &result.log.records)?;
    files.push((EPISODES_FILE, buf));
    let mut buf = Vec::new();
    write_regret_csv(&mut buf, &result.regret.rows)?;
    files.push((REGRET_FILE, buf));
    if result.config.realized_regret {
        let mut buf = Vec::new();
        write_regret_csv(&mut buf, &result.regret.realized)?;
        files.push((REGRET_REALIZED_FILE, buf));
    }
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &files {
        std::fs::write(dir.join(name), bytes)?;
        outputs.insert(name.to_string(), sha256_hex(bytes));
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(serde_json::to_string(&result.config)?.as_bytes()),
        config: result.config.clone(),
        seed: result.config.seed,
        episodes: result.config.episodes,
        hindsight_best_markov: result.regret.hindsight_best_markov,
        hindsight_best_markov_id: result.regret.hindsight_best_markov_id,
        hindsight_best_general: result.regret.hindsight_best_general,
        nash_value: result.regret.nash_value,
        outputs,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_csv_round_trip() {
        let records = vec![
            EpisodeRecord {
                episode: 1,
                learner_policy_id: PolicyId(0xabc),
                opponent_policy_id: PolicyId(u64::MAX),
                realized_return: 1.0,
                exact_value: 0.1 + 0.2,
                restart: true,
                psi_size: Some(1),
                eta: 0.0,
                micros: 0,
            },
            EpisodeRecord {
                episode: 2,
                learner_policy_id: PolicyId(1),
                opponent_policy_id: PolicyId(2),
                realized_return: 0.0,
                exact_value: 1.0 / 3.0,
                restart: false,
                psi_size: None,
                eta: 0.25,
                micros: 0,
            },
        ];
        let mut buf = Vec::new();
        write_episode_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), EPISODE_HEADER);
        assert!(text.lines().nth(2).unwrap().contains(",false,,0.25,0"));
        assert_eq!(read_episode_csv(&buf[..]).unwrap(), records);
    }

    #[test]
    fn regret_csv_blanks() {
        let rows = [RegretRow {
            k: 3,
            regret_markov: Some(0.5),
            regret_general: None,
            nash_gap: Some(-1.0),
        }];
        let mut buf = Vec::new();
        write_regret_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{REGRET_HEADER}\n3,0.5,,-1.0\n"));
    }
}
