//! Rollout-group data model and JSONL ingestion.
//!
//! One JSONL line holds one query's group:
//!
//! ```text
//! {"query_id": "q1",
//!  "rollouts": [{"answer": "...", "embedding": [..], "reward": 1.0,
//!                "grad": [..]?, "token_entropy": 0.4?, "ratio_variance": 0.1?}, ...],
//!  "entailment": [[..], ..]?}
//! ```
//!
//! Lines whose object carries a top-level `"meta"` key (the provenance header
//! written by the CLI) are skipped, so tool output can be fed back in.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::vector::normalize_embedding;
use crate::{Error, Result};

/// Tolerance on `| ||e|| - 1 |` for stored embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Dataset-level declarations every group is validated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub reward_range: [f64; 2],
    pub embedding_dim: usize,
    pub group_size: usize,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source_notes: String,
}

impl DatasetManifest {
    pub fn new(reward_range: [f64; 2], embedding_dim: usize, group_size: usize) -> Result<Self> {
        let m = DatasetManifest {
            reward_range,
            embedding_dim,
            group_size,
            source_notes: String::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.reward_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::invalid(format!(
                "manifest reward_range [{lo}, {hi}] must satisfy r_max > r_min"
            )));
        }
        if self.embedding_dim < 1 {
            return Err(Error::invalid("manifest embedding_dim must be >= 1"));
        }
        if self.group_size < 2 {
            return Err(Error::invalid("manifest group_size must be >= 2"));
        }
        Ok(())
    }

    pub fn r_min(&self) -> f64 {
        self.reward_range[0]
    }

    pub fn r_max(&self) -> f64 {
        self.reward_range[1]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("manifest {}: {e}", path.display()),
        })?;
        m.validate()?;
        Ok(m)
    }
}

/// One query's `G` sampled responses.
///
/// Embeddings are stored at unit norm. Optional per-rollout fields are either
/// present for every rollout or absent for all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    query_id: String,
    answers: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    grads: Option<Vec<Vec<f64>>>,
    token_entropies: Option<Vec<f64>>,
    ratio_variances: Option<Vec<f64>>,
    entailment: Option<Vec<Vec<f64>>>,
}

impl RolloutGroup {
    /// Builds a group, re-normalizing every embedding to unit length.
    pub fn new(
        query_id: impl Into<String>,
        answers: Vec<String>,
        embeddings: Vec<Vec<f64>>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let query_id = query_id.into();
        let g = answers.len();
        let invalid = |message: String| Error::Validation {
            query_id: query_id.clone(),
            message,
        };
        if g < 2 {
            return Err(invalid(format!("group size {g} < 2")));
        }
        if embeddings.len() != g || rewards.len() != g {
            return Err(invalid(format!(
                "{g} answers but {} embeddings and {} rewards",
                embeddings.len(),
                rewards.len()
            )));
        }
        let dim = embeddings[0].len();
        if dim == 0 {
            return Err(invalid("empty embedding".into()));
        }
        let mut unit = Vec::with_capacity(g);
        for (i, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: e.len(),
                    context: format!("query {query_id}, embedding of rollout {i}"),
                });
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("non-finite embedding at rollout {i}")));
            }
            unit.push(
                normalize_embedding(e)
                    .map_err(|_| invalid(format!("zero-norm embedding at rollout {i}")))?,
            );
        }
        if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(invalid(format!("non-finite reward at rollout {i}")));
        }
        Ok(RolloutGroup {
            query_id,
            answers,
            embeddings: unit,
            rewards,
            grads: None,
            token_entropies: None,
            ratio_variances: None,
            entailment: None,
        })
    }

    pub fn with_grads(mut self, grads: Vec<Vec<f64>>) -> Result<Self> {
        self.check_len("grad", grads.len())?;
        let m = grads[0].len();
        for (i, g) in grads.iter().enumerate() {
            if g.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: g.len(),
                    context: format!("query {}, gradient of rollout {i}", self.query_id),
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(self.invalid(format!("non-finite gradient at rollout {i}")));
            }
        }
        self.grads = Some(grads);
        Ok(self)
    }

    pub fn with_token_entropies(mut self, entropies: Vec<f64>) -> Result<Self> {
        self.check_len("token_entropy", entropies.len())?;
        if let Some(i) = entropies.iter().position(|h| !h.is_finite() || *h < 0.0) {
            return Err(self.invalid(format!(
                "token_entropy at rollout {i} must be finite and >= 0"
            )));
        }
        self.token_entropies = Some(entropies);
        Ok(self)
    }

    pub fn with_ratio_variances(mut self, variances: Vec<f64>) -> Result<Self> {
        self.check_len("ratio_variance", variances.len())?;
        if let Some(i) = variances.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(self.invalid(format!(
                "ratio_variance at rollout {i} must be finite and >= 0"
            )));
        }
        self.ratio_variances = Some(variances);
        Ok(self)
    }

    pub fn with_entailment(mut self, matrix: Vec<Vec<f64>>) -> Result<Self> {
        let g = self.len();
        if matrix.len() != g || matrix.iter().any(|row| row.len() != g) {
            return Err(self.invalid(format!("entailment matrix must be {g}x{g}")));
        }
        for (i, row) in matrix.iter().enumerate() {
            if let Some(j) = row.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(
                    self.invalid(format!("entailment[{i}][{j}] = {} outside [0, 1]", row[j]))
                );
            }
        }
        self.entailment = Some(matrix);
        Ok(self)
    }

    fn invalid(&self, message: String) -> Error {
        Error::Validation {
            query_id: self.query_id.clone(),
            message,
        }
    }

    fn check_len(&self, field: &str, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(self.invalid(format!("{n} values for `{field}`, expected {}", self.len())));
        }
        Ok(())
    }

    /// Checks the group against dataset-level declarations.
    pub fn validate_against(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.len() != manifest.group_size {
            return Err(self.invalid(format!(
                "group size {} differs from manifest group_size {}",
                self.len(),
                manifest.group_size
            )));
        }
        if self.embedding_dim() != manifest.embedding_dim {
            return Err(Error::DimensionMismatch {
                expected: manifest.embedding_dim,
                actual: self.embedding_dim(),
                context: format!("query {} embeddings vs manifest", self.query_id),
            });
        }
        for &r in &self.rewards {
            if r < manifest.r_min() || r > manifest.r_max() {
                return Err(Error::RewardOutOfRange {
                    query_id: self.query_id.clone(),
                    reward: r,
                    min: manifest.r_min(),
                    max: manifest.r_max(),
                });
            }
        }
        Ok(())
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    /// Group size `G`.
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings[0].len()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Uniform rollout weights `1/G`.
    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }

    pub fn grads(&self) -> Result<&[Vec<f64>]> {
        self.grads.as_deref().ok_or_else(|| self.missing("grad"))
    }

    pub fn token_entropies(&self) -> Result<&[f64]> {
        self.token_entropies
            .as_deref()
            .ok_or_else(|| self.missing("token_entropy"))
    }

    pub fn ratio_variances(&self) -> Result<&[f64]> {
        self.ratio_variances
            .as_deref()
            .ok_or_else(|| self.missing("ratio_variance"))
    }

    pub fn entailment(&self) -> Result<&[Vec<f64>]> {
        self.entailment
            .as_deref()
            .ok_or_else(|| self.missing("entailment"))
    }

    pub fn has_token_entropies(&self) -> bool {
        self.token_entropies.is_some()
    }

    fn missing(&self, field: &'static str) -> Error {
        Error::MissingField {
            query_id: self.query_id.clone(),
            field,
        }
    }

    pub fn to_record(&self) -> GroupRecord {
        let rollouts = (0..self.len())
            .map(|i| RolloutRecord {
                answer: self.answers[i].clone(),
                embedding: self.embeddings[i].clone(),
                reward: self.rewards[i],
                grad: self.grads.as_ref().map(|g| g[i].clone()),
                token_entropy: self.token_entropies.as_ref().map(|h| h[i]),
                ratio_variance: self.ratio_variances.as_ref().map(|v| v[i]),
            })
            .collect();
        GroupRecord {
            query_id: self.query_id.clone(),
            rollouts,
            entailment: self.entailment.clone(),
        }
    }
}

/// Wire form of one rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub answer: String,
    pub embedding: Vec<f64>,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_variance: Option<f64>,
}

/// Wire form of one group (one JSONL line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRecord {
    pub query_id: String,
    pub rollouts: Vec<RolloutRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entailment: Option<Vec<Vec<f64>>>,
}

/// Collects an optional per-rollout field: all present, all absent, or an error.
fn all_or_none<T: Clone>(
    query_id: &str,
    field: &str,
    values: impl Iterator<Item = Option<T>>,
) -> Result<Option<Vec<T>>> {
    let collected: Vec<Option<T>> = values.collect();
    let present = collected.iter().filter(|v| v.is_some()).count();
    if present == 0 {
        Ok(None)
    } else if present == collected.len() {
        Ok(Some(collected.into_iter().flatten().collect()))
    } else {
        Err(Error::Validation {
            query_id: query_id.to_string(),
            message: format!(
                "`{field}` present on {present} of {} rollouts",
                collected.len()
            ),
        })
    }
}

impl TryFrom<GroupRecord> for RolloutGroup {
    type Error = Error;

    fn try_from(rec: GroupRecord) -> Result<Self> {
        let qid = rec.query_id.clone();
        let grads = all_or_none(&qid, "grad", rec.rollouts.iter().map(|r| r.grad.clone()))?;
        let entropies = all_or_none(
            &qid,
            "token_entropy",
            rec.rollouts.iter().map(|r| r.token_entropy),
        )?;
        let ratio_vars = all_or_none(
            &qid,
            "ratio_variance",
            rec.rollouts.iter().map(|r| r.ratio_variance),
        )?;
        let mut answers = Vec::with_capacity(rec.rollouts.len());
        let mut embeddings = Vec::with_capacity(rec.rollouts.len());
        let mut rewards = Vec::with_capacity(rec.rollouts.len());
        for r in rec.rollouts {
            answers.push(r.answer);
            embeddings.push(r.embedding);
            rewards.push(r.reward);
        }
        let mut group = RolloutGroup::new(rec.query_id, answers, embeddings, rewards)?;
        if let Some(g) = grads {
            group = group.with_grads(g)?;
        }
        if let Some(h) = entropies {
            group = group.with_token_entropies(h)?;
        }
        if let Some(v) = ratio_vars {
            group = group.with_ratio_variances(v)?;
        }
        if let Some(m) = rec.entailment {
            group = group.with_entailment(m)?;
        }
        Ok(group)
    }
}

/// True when a parsed JSONL object is a provenance header rather than data.
pub fn is_meta_line(value: &serde_json::Value) -> bool {
    value.as_object().is_some_and(|o| o.contains_key("meta"))
}

/// Iterates over the data lines of a JSONL stream as `(line number, value)`,
/// skipping blank lines and metadata headers.
pub fn jsonl_values<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, serde_json::Value)>> {
    reader.lines().enumerate().filter_map(|(idx, line)| {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Some(Err(Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                }))
            }
        };
        if line.trim().is_empty() {
            return None;
        }
        match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(v) if is_meta_line(&v) => None,
            Ok(v) => Some(Ok((line_no, v))),
            Err(e) => Some(Err(Error::Parse {
                line: line_no,
                message: e.to_string(),
            })),
        }
    })
}

/// Parses groups from a JSONL stream without dataset-level validation.
pub fn parse_groups<R: BufRead>(reader: R) -> Result<Vec<RolloutGroup>> {
    jsonl_values(reader)
        .map(|item| {
            let (line, value) = item?;
            let rec: GroupRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            RolloutGroup::try_from(rec).map_err(|e| match e {
                Error::Parse { .. } => e,
                other => Error::Parse {
                    line,
                    message: other.to_string(),
                },
            })
        })
        .collect()
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads typed records from a JSONL file, skipping metadata headers.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    jsonl_values(open(path)?)
        .map(|item| {
            let (line, value) = item?;
            serde_json::from_value(value).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads every group in `path`, in file order.
pub fn read_groups(path: &Path) -> Result<Vec<RolloutGroup>> {
    parse_groups(open(path)?)
}

/// Reads every group in `path` and validates each against `manifest`.
pub fn load_groups(path: &Path, manifest: &DatasetManifest) -> Result<Vec<RolloutGroup>> {
    manifest.validate()?;
    let groups = read_groups(path)?;
    for g in &groups {
        g.validate_against(manifest)?;
    }
    Ok(groups)
}

/// Writes groups as JSONL records, one per line.
pub fn write_groups<W: Write>(mut out: W, groups: &[RolloutGroup]) -> std::io::Result<()> {
    for g in groups {
        serde_json::to_writer(&mut out, &g.to_record())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        DatasetManifest::new([0.0, 2.0], 2, 2).unwrap()
    }

    fn parse(text: &str) -> Result<Vec<RolloutGroup>> {
        parse_groups(text.as_bytes())
    }

    #[test]
    fn single_record_has_uniform_weights() {
        let groups = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[1,0],"reward":1},{"answer":"b","embedding":[0,1],"reward":0}]}"#,
        )
        .unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].weights(), vec![0.5, 0.5]);
        groups[0].validate_against(&manifest()).unwrap();
    }

    #[test]
    fn embeddings_renormalized_on_load() {
        let groups = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[2,0],"reward":1},{"answer":"b","embedding":[0,1],"reward":0}]}"#,
        )
        .unwrap();
        assert_eq!(groups[0].embeddings()[0], vec![1.0, 0.0]);
    }

    #[test]
    fn reward_out_of_range_names_query_and_bound() {
        let groups = parse(
            r#"{"query_id":"q7","rollouts":[{"answer":"a","embedding":[1,0],"reward":3.0},{"answer":"b","embedding":[0,1],"reward":0}]}"#,
        )
        .unwrap();
        let err = groups[0].validate_against(&manifest()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::RewardOutOfRange { .. }));
        assert!(msg.contains("q7") && msg.contains('2'), "{msg}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"meta\":{}}\n\n{not json}\n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_norm_embedding_rejected() {
        let err = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[0,0],"reward":1},{"answer":"b","embedding":[0,1],"reward":0}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("zero-norm"), "{err}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[1,0,0],"reward":1},{"answer":"b","embedding":[0,1],"reward":0}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");

        let g = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[1,0,0],"reward":1},{"answer":"b","embedding":[0,1,0],"reward":0}]}"#,
        )
        .unwrap();
        assert!(matches!(
            g[0].validate_against(&manifest()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn partial_optional_field_rejected() {
        let err = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[1,0],"reward":1,"grad":[1]},{"answer":"b","embedding":[0,1],"reward":0}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("grad"), "{err}");
    }

    #[test]
    fn missing_optional_field_is_named() {
        let g = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[1,0],"reward":1},{"answer":"b","embedding":[0,1],"reward":0}]}"#,
        )
        .unwrap();
        let err = g[0].grads().unwrap_err();
        assert!(err.to_string().contains("`grad`"), "{err}");
        assert!(g[0].entailment().is_err());
    }

    #[test]
    fn entailment_outside_unit_interval_rejected() {
        let err = parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[1,0],"reward":1},{"answer":"b","embedding":[0,1],"reward":0}],"entailment":[[1,1.5],[0,1]]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("entailment"), "{err}");
    }

    #[test]
    fn singleton_group_rejected() {
        assert!(parse(
            r#"{"query_id":"q","rollouts":[{"answer":"a","embedding":[1,0],"reward":1}]}"#
        )
        .is_err());
    }

    #[test]
    fn manifest_invariants() {
        assert!(DatasetManifest::new([1.0, 1.0], 2, 2).is_err());
        assert!(DatasetManifest::new([0.0, 1.0], 0, 2).is_err());
        assert!(DatasetManifest::new([0.0, 1.0], 2, 1).is_err());
    }
}
