//! Reference tables shipped with the crate, checksum-verified on load.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lti::{Family, TestBenchSpec};
use crate::rules::{Gene, RuleKind, TuningSource};
use crate::sim::{ControllerKind, FopidParams};

pub const FILES: [&str; 6] = [
    "table1_h2.csv",
    "table2_nyquist.csv",
    "table3_pid.csv",
    "table4_fopid.csv",
    "table5_rules.csv",
    "rule_allowlist.csv",
];

const EMBEDDED: [&str; 6] = [
    include_str!("../fixtures/table1_h2.csv"),
    include_str!("../fixtures/table2_nyquist.csv"),
    include_str!("../fixtures/table3_pid.csv"),
    include_str!("../fixtures/table4_fopid.csv"),
    include_str!("../fixtures/table5_rules.csv"),
    include_str!("../fixtures/rule_allowlist.csv"),
];

const EMBEDDED_SUMS: &str = include_str!("../fixtures/CHECKSUMS.sha256");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub family: Family,
    pub param: f64,
    #[serde(rename = "foptd_J")]
    pub foptd_j: f64,
    pub foptd_tau: f64,
    #[serde(rename = "foptd_L")]
    pub foptd_l: f64,
    #[serde(rename = "soptd_J")]
    pub soptd_j: f64,
    pub soptd_tau_max: f64,
    pub soptd_tau_min: f64,
    #[serde(rename = "soptd_L")]
    pub soptd_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidRow {
    pub family: Family,
    pub param: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Kp")]
    pub kp: f64,
    #[serde(rename = "Ki")]
    pub ki: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FopidRow {
    pub family: Family,
    pub param: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Kp")]
    pub kp: f64,
    #[serde(rename = "Ki")]
    pub ki: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRow {
    pub family: Family,
    pub param: f64,
    pub controller: ControllerKind,
    pub rule: TuningSource,
    #[serde(rename = "Kp")]
    pub kp: f64,
    #[serde(rename = "Ki")]
    pub ki: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl RuleRow {
    /// `None` for the GA reference rows.
    pub fn kind(&self) -> Option<RuleKind> {
        self.rule.gene().map(|g| RuleKind::new(self.controller, g))
    }

    pub fn params(&self) -> FopidParams {
        FopidParams::new(self.kp, self.ki, self.kd, self.lambda, self.mu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllowEntry {
    pub controller: ControllerKind,
    pub rule: Gene,
    pub family: Family,
    pub param: f64,
    pub parameter: String,
    pub reason: String,
}

/// Anything keyed by a test-bench plant.
pub trait Keyed {
    fn key(&self) -> TestBenchSpec;
}

macro_rules! keyed {
    ($($t:ty),*) => {$(
        impl Keyed for $t {
            fn key(&self) -> TestBenchSpec {
                TestBenchSpec::new(self.family, self.param)
            }
        }
    )*};
}
keyed!(ReductionRow, PidRow, FopidRow, RuleRow, AllowEntry);

pub fn find<'a, T: Keyed>(rows: &'a [T], spec: &TestBenchSpec) -> Option<&'a T> {
    rows.iter()
        .find(|r| spec.matches(r.key().family, r.key().param))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fixtures {
    pub table1_h2: Vec<ReductionRow>,
    pub table2_nyquist: Vec<ReductionRow>,
    pub table3_pid: Vec<PidRow>,
    pub table4_fopid: Vec<FopidRow>,
    pub table5_rules: Vec<RuleRow>,
    pub rule_allowlist: Vec<AllowEntry>,
}

impl Fixtures {
    /// The tables compiled into the crate.
    pub fn embedded() -> Result<Self> {
        Self::from_texts(&EMBEDDED, EMBEDDED_SUMS)
    }

    /// Loads the tables from `dir`, verifying them against `dir/CHECKSUMS.sha256`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let sums = std::fs::read_to_string(dir.join("CHECKSUMS.sha256"))?;
        let texts = FILES
            .iter()
            .map(|f| std::fs::read_to_string(dir.join(f)))
            .collect::<std::io::Result<Vec<_>>>()?;
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        Self::from_texts(&refs, &sums)
    }

    pub fn load(dir: Option<&Path>) -> Result<Self> {
        match dir {
            Some(d) => Self::from_dir(d),
            None => Self::embedded(),
        }
    }

    fn from_texts(texts: &[&str], sums: &str) -> Result<Self> {
        for (name, text) in FILES.iter().zip(texts) {
            verify(name, text, sums)?;
        }
        Ok(Self {
            table1_h2: parse(FILES[0], texts[0])?,
            table2_nyquist: parse(FILES[1], texts[1])?,
            table3_pid: parse(FILES[2], texts[2])?,
            table4_fopid: parse(FILES[3], texts[3])?,
            table5_rules: parse(FILES[4], texts[4])?,
            rule_allowlist: parse(FILES[5], texts[5])?,
        })
    }

    pub fn rule_row(
        &self,
        controller: ControllerKind,
        source: TuningSource,
        spec: &TestBenchSpec,
    ) -> Option<&RuleRow> {
        self.table5_rules.iter().find(|r| {
            r.controller == controller && r.rule == source && spec.matches(r.family, r.param)
        })
    }

    /// Whether a deviation of `parameter` for this rule and plant is documented.
    pub fn allowed(
        &self,
        kind: RuleKind,
        spec: &TestBenchSpec,
        parameter: &str,
    ) -> Option<&AllowEntry> {
        self.rule_allowlist.iter().find(|a| {
            a.controller == kind.controller
                && a.rule == kind.gene
                && a.parameter == parameter
                && spec.matches(a.family, a.param)
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn verify(name: &str, text: &str, sums: &str) -> Result<()> {
    let expected = sums
        .lines()
        .filter_map(|l| l.split_once(char::is_whitespace))
        .find(|(_, f)| f.trim().trim_start_matches('*') == name)
        .map(|(h, _)| h.to_ascii_lowercase())
        .ok_or_else(|| Error::Fixture(format!("no checksum listed for {name}")))?;
    let actual = sha256_hex(text.as_bytes());
    if actual != expected {
        return Err(Error::Fixture(format!(
            "checksum mismatch for {name}: expected {expected}, got {actual}"
        )));
    }
    Ok(())
}

fn parse<T: DeserializeOwned>(name: &str, text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Fixture(format!("{name}: {e}")))
}
