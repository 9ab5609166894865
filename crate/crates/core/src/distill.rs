//! Teacher-student distillation objective.
//!
//! The student is trained on a blend of the ground-truth cross entropy and the
//! KL divergence from the teacher's temperature-softened distribution to the
//! student's:
//!
//! ```text
//! L = alpha * CE(y, z_s) + (1 - alpha) * tau^2 * KL(softmax(z_t / tau) || softmax(z_s / tau))
//! ```
//!
//! Teacher logits are produced once, ahead of training, and read from a
//! [`TeacherLogitCache`].

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Label, Sample};

/// Floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;
pub const CACHE_FORMAT: &str = "teacher-logits";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("teacher `{teacher}` gave no logits for {} sample(s): {}", .ids.len(), .ids.join(", "))]
    MissingTeacherLogits { teacher: String, ids: Vec<String> },
    #[error("teacher logits for `{id}` are not finite: {logits:?}")]
    NonFinite { id: String, logits: [f64; 2] },
    #[error("teacher cache {path}: {reason}")]
    CacheFormat { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight of the ground-truth term.
    pub alpha: f64,
    /// Softmax temperature for both teacher and student.
    pub tau: f64,
    pub enabled: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.7,
            tau: 2.0,
            enabled: true,
        }
    }
}

impl DistillConfig {
    pub fn disabled() -> Self {
        DistillConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DistillError::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DistillError::Config(format!(
                "tau must be a positive number, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_gt: f64,
    pub l_kd: f64,
    pub l_total: f64,
}

fn check_logits(logits: &[f64]) -> Result<(), DistillError> {
    if logits.is_empty() {
        return Err(DistillError::Argument("empty logit vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(DistillError::Argument(format!("non-finite logit {bad}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<(), DistillError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(DistillError::Argument(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

fn softmax_unchecked(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| ((z - max) / tau).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn temperature_softmax(logits: &[f64], tau: f64) -> Result<Vec<f64>, DistillError> {
    check_tau(tau)?;
    check_logits(logits)?;
    Ok(softmax_unchecked(logits, tau))
}

/// `-log softmax(logits)[label]`.
pub fn ce_loss(logits: &[f64], label: Label) -> Result<f64, DistillError> {
    check_logits(logits)?;
    let idx = label.as_index();
    if idx >= logits.len() {
        return Err(DistillError::Argument(format!(
            "label {idx} for {} logits",
            logits.len()
        )));
    }
    Ok(-log_softmax_unchecked(logits)[idx])
}

fn kl_unchecked(p_t: &[f64], p_s: &[f64]) -> f64 {
    let kl: f64 = p_t
        .iter()
        .zip(p_s)
        .map(|(&t, &s)| t * (t.max(LOG_FLOOR).ln() - s.max(LOG_FLOOR).ln()))
        .sum();
    kl.max(0.0)
}

/// `KL(softmax(teacher / tau) || softmax(student / tau))`.
pub fn kd_loss(
    student_logits: &[f64],
    teacher_logits: &[f64],
    tau: f64,
) -> Result<f64, DistillError> {
    check_tau(tau)?;
    check_logits(student_logits)?;
    check_logits(teacher_logits)?;
    if student_logits.len() != teacher_logits.len() {
        return Err(DistillError::Argument(format!(
            "{} student logits vs {} teacher logits",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    Ok(kl_unchecked(
        &softmax_unchecked(teacher_logits, tau),
        &softmax_unchecked(student_logits, tau),
    ))
}

/// Blends the two terms. With distillation disabled the total is the
/// ground-truth loss alone.
pub fn total_loss(l_gt: f64, l_kd: f64, config: &DistillConfig) -> LossBundle {
    let l_total = if config.enabled {
        config.alpha * l_gt + (1.0 - config.alpha) * config.tau * config.tau * l_kd
    } else {
        l_gt
    };
    LossBundle {
        l_gt,
        l_kd,
        l_total,
    }
}

/// Batch objective over rows of `logits` together with its gradient with
/// respect to those logits. Both loss terms are means over the batch; the
/// teacher logits are constants.
pub fn batch_objective(
    logits: ArrayView2<f64>,
    labels: &[Label],
    teacher: Option<ArrayView2<f64>>,
    config: &DistillConfig,
) -> Result<(LossBundle, Array2<f64>), DistillError> {
    let (n, classes) = logits.dim();
    if n == 0 || n != labels.len() {
        return Err(DistillError::Argument(format!(
            "{n} logit rows for {} labels",
            labels.len()
        )));
    }
    let use_kd = config.enabled;
    if use_kd {
        config.validate()?;
        match teacher {
            Some(t) if t.dim() == (n, classes) => {}
            Some(t) => {
                return Err(DistillError::Argument(format!(
                    "teacher logits shaped {:?}, expected {:?}",
                    t.dim(),
                    (n, classes)
                )))
            }
            None => {
                return Err(DistillError::Argument(
                    "distillation enabled without teacher logits".into(),
                ))
            }
        }
    }
    let (alpha, tau) = if use_kd {
        (config.alpha, config.tau)
    } else {
        (1.0, 1.0)
    };
    let scale = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, classes));
    let (mut l_gt, mut l_kd) = (0.0, 0.0);
    for i in 0..n {
        let z = logits.row(i).to_vec();
        check_logits(&z)?;
        let y = labels[i].as_index();
        let p = softmax_unchecked(&z, 1.0);
        l_gt += -log_softmax_unchecked(&z)[y];
        for c in 0..classes {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad[[i, c]] = alpha * scale * (p[c] - onehot);
        }
        if use_kd {
            let t = teacher.expect("checked above").row(i).to_vec();
            check_logits(&t)?;
            let p_t = softmax_unchecked(&t, tau);
            let p_s = softmax_unchecked(&z, tau);
            l_kd += kl_unchecked(&p_t, &p_s);
            // d(tau^2 KL)/dz = tau * (p_s - p_t)
            for c in 0..classes {
                grad[[i, c]] += (1.0 - alpha) * tau * scale * (p_s[c] - p_t[c]);
            }
        }
    }
    Ok((total_loss(l_gt * scale, l_kd * scale, config), grad))
}

/// Anything that can produce a teacher logit pair for a sample.
pub trait Teacher {
    fn id(&self) -> String;

    fn logits(&self, sample: &Sample) -> Option<[f64; 2]>;
}

/// Teacher backed by a closure.
pub struct FnTeacher<F> {
    name: String,
    f: F,
}

impl<F> FnTeacher<F>
where
    F: Fn(&Sample) -> Option<[f64; 2]>,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnTeacher {
            name: name.into(),
            f,
        }
    }
}

impl<F> Teacher for FnTeacher<F>
where
    F: Fn(&Sample) -> Option<[f64; 2]>,
{
    fn id(&self) -> String {
        self.name.clone()
    }

    fn logits(&self, sample: &Sample) -> Option<[f64; 2]> {
        (self.f)(sample)
    }
}

/// Teacher that knows the gold label: `(+m/2, -m/2)` for literal samples and
/// the mirror image for metaphors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelTeacher {
    pub margin: f64,
}

impl Teacher for LabelTeacher {
    fn id(&self) -> String {
        format!("label-teacher(margin={})", self.margin)
    }

    fn logits(&self, sample: &Sample) -> Option<[f64; 2]> {
        let h = self.margin / 2.0;
        Some(match sample.label {
            Label::Literal => [h, -h],
            Label::Metaphor => [-h, h],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    version: u32,
    teacher: String,
    count: usize,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    id: String,
    logits: [f64; 2],
}

/// Sample id to teacher logit pair, in the order the samples were cached.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherLogitCache {
    teacher: String,
    entries: Vec<(String, [f64; 2])>,
    index: HashMap<String, usize>,
}

impl TeacherLogitCache {
    pub fn from_entries(
        teacher: impl Into<String>,
        entries: Vec<(String, [f64; 2])>,
    ) -> Result<Self, DistillError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (id, logits)) in entries.iter().enumerate() {
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(DistillError::NonFinite {
                    id: id.clone(),
                    logits: *logits,
                });
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(DistillError::Argument(format!(
                    "duplicate sample id `{id}` in teacher cache"
                )));
            }
        }
        Ok(TeacherLogitCache {
            teacher: teacher.into(),
            entries,
            index,
        })
    }

    pub fn teacher(&self) -> &str {
        &self.teacher
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<[f64; 2]> {
        self.index.get(id).map(|&i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, [f64; 2])] {
        &self.entries
    }

    /// Fails with every id of `samples` that has no cached logits.
    pub fn require(&self, samples: &[Sample]) -> Result<(), DistillError> {
        let missing: Vec<String> = samples
            .iter()
            .filter(|s| !self.index.contains_key(&s.id))
            .map(|s| s.id.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(DistillError::MissingTeacherLogits {
                teacher: self.teacher.clone(),
                ids: missing,
            })
        }
    }

    /// Teacher logits for `samples`, one row each.
    pub fn matrix(&self, samples: &[&Sample]) -> Result<Array2<f64>, DistillError> {
        let mut out = Array2::zeros((samples.len(), 2));
        let mut missing = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            match self.get(&s.id) {
                Some([a, b]) => {
                    out[[i, 0]] = a;
                    out[[i, 1]] = b;
                }
                None => missing.push(s.id.clone()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(DistillError::MissingTeacherLogits {
                teacher: self.teacher.clone(),
                ids: missing,
            })
        }
    }

    fn body(&self) -> String {
        let mut body = String::new();
        for (id, logits) in &self.entries {
            let entry = CacheEntry {
                id: id.clone(),
                logits: *logits,
            };
            body.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
            body.push('\n');
        }
        body
    }

    /// JSONL text: a header line carrying the teacher id and a SHA-256 of the
    /// entry lines, then one `{"id", "logits"}` line per sample.
    pub fn to_jsonl(&self) -> String {
        let body = self.body();
        let header = CacheHeader {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            teacher: self.teacher.clone(),
            count: self.entries.len(),
            sha256: hex::encode(Sha256::digest(body.as_bytes())),
        };
        format!(
            "{}\n{body}",
            serde_json::to_string(&header).expect("header serializes")
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), DistillError> {
        fs::write(path, self.to_jsonl()).map_err(|source| DistillError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DistillError> {
        let bad = |reason: String| DistillError::CacheFormat {
            path: path.to_owned(),
            reason,
        };
        let file = fs::File::open(path).map_err(|source| DistillError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let header: CacheHeader =
            serde_json::from_str(&header_line).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
            return Err(bad(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let mut entries = Vec::with_capacity(header.count);
        let mut body = String::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let entry: CacheEntry =
                serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
            body.push_str(&line);
            body.push('\n');
            entries.push((entry.id, entry.logits));
        }
        if entries.len() != header.count {
            return Err(bad(format!(
                "header announces {} entries, found {}",
                header.count,
                entries.len()
            )));
        }
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        if digest != header.sha256 {
            return Err(bad("checksum mismatch".into()));
        }
        Self::from_entries(header.teacher, entries)
    }
}

/// Queries `teacher` for every sample, writes the cache file and returns it.
pub fn cache_teacher_logits<T: Teacher + ?Sized>(
    teacher: &T,
    samples: &[Sample],
    out_path: &Path,
) -> Result<TeacherLogitCache, DistillError> {
    let mut entries = Vec::with_capacity(samples.len());
    let mut missing = Vec::new();
    for s in samples {
        match teacher.logits(s) {
            Some(l) => entries.push((s.id.clone(), l)),
            None => missing.push(s.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(DistillError::MissingTeacherLogits {
            teacher: teacher.id(),
            ids: missing,
        });
    }
    let cache = TeacherLogitCache::from_entries(teacher.id(), entries)?;
    cache.save(out_path)?;
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // plain exp / normalise, no max shift
    fn oracle_softmax(z: &[f64], tau: f64) -> Vec<f64> {
        let e: Vec<f64> = z.iter().map(|v| (v / tau).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
    }

    #[test]
    fn softmax_symmetric_and_limit() {
        for tau in [0.5, 1.0, 7.0] {
            assert_eq!(
                temperature_softmax(&[0.0, 0.0], tau).unwrap(),
                vec![0.5, 0.5]
            );
        }
        let p = temperature_softmax(&[2.0, 0.0], 1000.0).unwrap();
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-3));
        let p = temperature_softmax(&[2.0, 0.0], 1.0).unwrap();
        let o = oracle_softmax(&[2.0, 0.0], 1.0);
        assert!(close(p[0], o[0], 1e-15) && close(p[1], o[1], 1e-15));
        assert!(close(p[0], 0.8808, 1e-4));
        assert!(close(p.iter().sum(), 1.0, 1e-9));
    }

    #[test]
    fn softmax_rejects_bad_arguments() {
        assert!(temperature_softmax(&[1.0, 0.0], 0.0).is_err());
        assert!(temperature_softmax(&[1.0, 0.0], -1.0).is_err());
        assert!(temperature_softmax(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(temperature_softmax(&[f64::INFINITY, 0.0], 1.0).is_err());
    }

    #[test]
    fn ce_cases() {
        let ln2 = std::f64::consts::LN_2;
        assert!(close(
            ce_loss(&[0.0, 0.0], Label::Literal).unwrap(),
            ln2,
            1e-15
        ));
        assert!(close(
            ce_loss(&[0.0, 0.0], Label::Metaphor).unwrap(),
            ln2,
            1e-15
        ));
        assert!(ce_loss(&[100.0, 0.0], Label::Literal).unwrap() < 1e-10);
        let o = oracle_softmax(&[1.3, -0.4], 1.0);
        assert!(close(
            ce_loss(&[1.3, -0.4], Label::Metaphor).unwrap(),
            -o[1].ln(),
            1e-12
        ));
        assert!(ce_loss(&[f64::NAN, 0.0], Label::Literal).is_err());
    }

    #[test]
    fn kd_cases() {
        assert_eq!(kd_loss(&[0.3, -1.2], &[0.3, -1.2], 3.0).unwrap(), 0.0);
        let at1 = kd_loss(&[0.0, 0.0], &[2.0, 0.0], 1.0).unwrap();
        let oracle = oracle_kl(&oracle_softmax(&[2.0, 0.0], 1.0), &[0.5, 0.5]);
        assert!(close(at1, oracle, 1e-12));
        assert!(close(at1, 0.3278, 1e-4), "{at1}");
        let at2 = kd_loss(&[0.0, 0.0], &[2.0, 0.0], 2.0).unwrap();
        let oracle2 = oracle_kl(&oracle_softmax(&[2.0, 0.0], 2.0), &[0.5, 0.5]);
        assert!(close(at2, oracle2, 1e-12));
        assert!(at2 < at1);
        assert!(kd_loss(&[0.0, 0.0], &[2.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn blend_arithmetic() {
        let on = |alpha, tau| DistillConfig {
            alpha,
            tau,
            enabled: true,
        };
        assert_eq!(total_loss(0.42, 9.0, &on(1.0, 3.0)).l_total, 0.42);
        assert_eq!(total_loss(0.42, 0.17, &on(0.0, 1.0)).l_total, 0.17);
        assert_eq!(total_loss(1.0, 0.1, &on(0.5, 2.0)).l_total, 0.7);
        assert_eq!(
            total_loss(0.9, 5.0, &DistillConfig::disabled()).l_total,
            0.9
        );
    }

    #[test]
    fn config_bounds() {
        assert!(DistillConfig {
            alpha: 1.3,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DistillConfig {
            tau: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DistillConfig::default().validate().is_ok());
    }

    fn objective_value(
        z: &Array2<f64>,
        labels: &[Label],
        t: &Array2<f64>,
        cfg: &DistillConfig,
    ) -> f64 {
        batch_objective(z.view(), labels, Some(t.view()), cfg)
            .unwrap()
            .0
            .l_total
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let z = array![[0.3, -1.1], [2.0, 0.5], [-0.7, 0.2]];
        let t = array![[1.5, -0.5], [-0.2, 0.9], [0.0, 0.0]];
        let labels = [Label::Literal, Label::Metaphor, Label::Metaphor];
        for alpha in [0.0, 0.5, 1.0] {
            for tau in [1.0, 3.0] {
                let cfg = DistillConfig {
                    alpha,
                    tau,
                    enabled: true,
                };
                let (_, g) = batch_objective(z.view(), &labels, Some(t.view()), &cfg).unwrap();
                for i in 0..3 {
                    for c in 0..2 {
                        let h = 1e-6;
                        let mut up = z.clone();
                        up[[i, c]] += h;
                        let mut dn = z.clone();
                        dn[[i, c]] -= h;
                        let num = (objective_value(&up, &labels, &t, &cfg)
                            - objective_value(&dn, &labels, &t, &cfg))
                            / (2.0 * h);
                        let rel =
                            (num - g[[i, c]]).abs() / num.abs().max(g[[i, c]].abs()).max(1e-8);
                        assert!(
                            rel < 1e-4,
                            "alpha {alpha} tau {tau} [{i},{c}]: {num} vs {}",
                            g[[i, c]]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tau_squared_keeps_gradient_scale() {
        let z = [0.0, 0.0];
        let t = [2.0, 0.0];
        let mags: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&tau| {
                let ps = oracle_softmax(&z, tau);
                let pt = oracle_softmax(&t, tau);
                tau * ps
                    .iter()
                    .zip(&pt)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        // without the tau^2 factor these would shrink like 1/tau
        for m in &mags {
            assert!((0.4..1.0).contains(m), "{mags:?}");
        }
    }

    #[test]
    fn softening_raises_entropy() {
        let entropy = |p: &[f64]| -p.iter().map(|v| v * v.ln()).sum::<f64>();
        for t in [[2.0, 0.0], [-3.0, 1.0], [0.1, 0.3]] {
            let base = entropy(&temperature_softmax(&t, 1.0).unwrap());
            for tau in [1.0, 1.5, 2.0, 5.0, 10.0] {
                assert!(entropy(&temperature_softmax(&t, tau).unwrap()) >= base - 1e-15);
            }
        }
    }

    #[test]
    fn disabled_objective_ignores_teacher() {
        let z = array![[0.3, -1.1]];
        let (bundle, g) = batch_objective(
            z.view(),
            &[Label::Metaphor],
            None,
            &DistillConfig::disabled(),
        )
        .unwrap();
        assert!(close(
            bundle.l_total,
            ce_loss(&[0.3, -1.1], Label::Metaphor).unwrap(),
            1e-15
        ));
        assert_eq!(bundle.l_kd, 0.0);
        assert!(g[[0, 1]] < 0.0);
        assert!(batch_objective(
            z.view(),
            &[Label::Metaphor],
            None,
            &DistillConfig::default()
        )
        .is_err());
    }

    fn samples() -> Vec<Sample> {
        (0..5)
            .map(|i| {
                let label = if i % 2 == 0 {
                    Label::Metaphor
                } else {
                    Label::Literal
                };
                Sample::from_sentence(format!("s{i}"), "a b c", 1, "VERB", label).unwrap()
            })
            .collect()
    }

    #[test]
    fn cache_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.jsonl");
        let teacher = FnTeacher::new("stub", |s: &Sample| {
            Some([s.label.as_index() as f64 * 10.0 + 0.1, 0.0])
        });
        let cache = cache_teacher_logits(&teacher, &samples(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = TeacherLogitCache::load(&path).unwrap();
        assert_eq!(back, cache);
        for (id, l) in cache.entries() {
            assert_eq!(back.get(id).unwrap().map(f64::to_bits), l.map(f64::to_bits));
        }
        cache_teacher_logits(&teacher, &samples(), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn cache_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.jsonl");
        let partial = FnTeacher::new("partial", |s: &Sample| (s.id != "s3").then_some([0.0, 1.0]));
        match cache_teacher_logits(&partial, &samples(), &path) {
            Err(DistillError::MissingTeacherLogits { ids, .. }) => assert_eq!(ids, ["s3"]),
            other => panic!("{other:?}"),
        }
        let nan = FnTeacher::new("nan", |_: &Sample| Some([f64::NAN, 0.0]));
        assert!(matches!(
            cache_teacher_logits(&nan, &samples(), &path),
            Err(DistillError::NonFinite { .. })
        ));

        let teacher = LabelTeacher { margin: 4.0 };
        let all = samples();
        cache_teacher_logits(&teacher, &all[..4], &path).unwrap();
        let cache = TeacherLogitCache::load(&path).unwrap();
        let err = cache.require(&all).unwrap_err();
        assert!(err.to_string().contains("s4"), "{err}");

        let text = fs::read_to_string(&path).unwrap().replace("2.0", "2.5");
        fs::write(&path, text).unwrap();
        assert!(TeacherLogitCache::load(&path).is_err());
    }
}
